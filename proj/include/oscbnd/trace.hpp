#pragma once

// Functions of x1 on Gamma0 = (-1/2, 1/2): nodal traces from the FE side and
// finite cosine series  a(x1) = sum_k c_k cos(k pi (x1 + 1/2)).  Every cosine
// mode has vanishing odd derivatives at x1 = +-1/2.

#include <oscbnd/error.hpp>
#include <oscbnd/trig.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace oscbnd {

/// Nodal samples of a function of x1 on Gamma0.
struct BoundaryTrace {
    std::vector<double> nodes;  // strictly increasing, spanning [-1/2, 1/2]
    std::vector<double> values;

    double operator()(double x1) const {
        if (nodes.empty()) return 0.0;
        if (x1 <= nodes.front()) return values.front();
        if (x1 >= nodes.back()) return values.back();
        const auto it = std::upper_bound(nodes.begin(), nodes.end(), x1);
        const std::size_t j = static_cast<std::size_t>(it - nodes.begin());
        const double t = (x1 - nodes[j - 1]) / (nodes[j] - nodes[j - 1]);
        return (1.0 - t) * values[j - 1] + t * values[j];
    }
};

inline double cos_mode(int k, double x1) { return std::cos(k * trig::pi * (x1 + 0.5)); }
inline double sin_mode(int k, double x1) { return std::sin(k * trig::pi * (x1 + 0.5)); }
/// Integral of cos_mode(k)^2 over Gamma0.
inline double cos_mode_norm2(int k) { return k == 0 ? 1.0 : 0.5; }

class CosineSeries {
public:
    CosineSeries() = default;
    explicit CosineSeries(std::vector<double> c) : c_(std::move(c)) {}

    static CosineSeries single(int k, double amplitude) {
        std::vector<double> c(static_cast<std::size_t>(k) + 1, 0.0);
        c[static_cast<std::size_t>(k)] = amplitude;
        return CosineSeries(std::move(c));
    }

    const std::vector<double>& coefficients() const { return c_; }
    int max_mode() const { return static_cast<int>(c_.size()) - 1; }
    double coefficient(int k) const { return k >= 0 && k < static_cast<int>(c_.size()) ? c_[static_cast<std::size_t>(k)] : 0.0; }

    double operator()(double x1) const {
        double s = 0.0;
        for (int k = 0; k < static_cast<int>(c_.size()); ++k) s += c_[static_cast<std::size_t>(k)] * cos_mode(k, x1);
        return s;
    }
    double derivative(double x1) const {
        double s = 0.0;
        for (int k = 1; k < static_cast<int>(c_.size()); ++k) s -= k * trig::pi * c_[static_cast<std::size_t>(k)] * sin_mode(k, x1);
        return s;
    }
    /// Second derivative, again a cosine series.
    CosineSeries second_derivative() const {
        std::vector<double> c(c_.size(), 0.0);
        for (std::size_t k = 0; k < c_.size(); ++k) {
            const double w = static_cast<double>(k) * trig::pi;
            c[k] = -w * w * c_[k];
        }
        return CosineSeries(std::move(c));
    }

    CosineSeries& operator+=(const CosineSeries& o) {
        if (o.c_.size() > c_.size()) c_.resize(o.c_.size(), 0.0);
        for (std::size_t k = 0; k < o.c_.size(); ++k) c_[k] += o.c_[k];
        return *this;
    }
    CosineSeries& operator*=(double s) {
        for (double& v : c_) v *= s;
        return *this;
    }
    friend CosineSeries operator+(CosineSeries a, const CosineSeries& b) { return a += b; }
    friend CosineSeries operator*(double s, CosineSeries a) { return a *= s; }
    friend CosineSeries operator-(CosineSeries a, const CosineSeries& b) { return a += (-1.0) * b; }

    BoundaryTrace sample(const std::vector<double>& nodes) const {
        BoundaryTrace t{nodes, {}};
        t.values.reserve(nodes.size());
        for (double x : nodes) t.values.push_back((*this)(x));
        return t;
    }

private:
    std::vector<double> c_;
};

/// Integral over Gamma0 of a * b.
inline double integrate_product(const CosineSeries& a, const CosineSeries& b) {
    double s = 0.0;
    const int n = std::min(a.max_mode(), b.max_mode());
    for (int k = 0; k <= n; ++k) s += a.coefficient(k) * b.coefficient(k) * cos_mode_norm2(k);
    return s;
}

/// L2(Gamma0) projection of a piecewise-linear trace onto cosine modes 0..modes-1.
/// Each segment is integrated with 8-point Gauss-Legendre, exact to round-off for
/// the mode counts used here.
inline CosineSeries project_cosine(const BoundaryTrace& t, int modes) {
    if (t.nodes.size() < 2) throw Error("project_cosine: trace needs at least two nodes");
    static const double gx[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
                                 0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
    static const double gw[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
                                 0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};
    std::vector<double> c(static_cast<std::size_t>(modes), 0.0);
    for (std::size_t s = 0; s + 1 < t.nodes.size(); ++s) {
        const double a = t.nodes[s], b = t.nodes[s + 1];
        const double half = 0.5 * (b - a);
        for (int q = 0; q < 8; ++q) {
            const double u = 0.5 * (1.0 + gx[q]);
            const double x = a + (b - a) * u;
            const double v = (1.0 - u) * t.values[s] + u * t.values[s + 1];
            for (int k = 0; k < modes; ++k) c[static_cast<std::size_t>(k)] += gw[q] * half * v * cos_mode(k, x);
        }
    }
    for (int k = 0; k < modes; ++k) c[static_cast<std::size_t>(k)] /= cos_mode_norm2(k);
    return CosineSeries(std::move(c));
}

} // namespace oscbnd
