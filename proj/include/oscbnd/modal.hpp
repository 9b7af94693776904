#pragma once

// Fields on the limit rectangle written as cosine series in x1 with
// Chebyshev-Lobatto collocated profiles in x2:
//     u(x1, x2) = sum_k cos(k pi (x1 + 1/2)) f_k(x2),   0 <= x2 <= 1.

#include <oscbnd/error.hpp>
#include <oscbnd/trace.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

namespace oscbnd {

/// Chebyshev-Lobatto grid on [0, 1] with y_0 = 0 and y_n = 1.
struct ChebGrid {
    int n = 0;
    Eigen::VectorXd y;
    Eigen::MatrixXd D;       // d/dy on grid values
    Eigen::VectorXd weights; // Clenshaw-Curtis quadrature on [0, 1]
    Eigen::VectorXd bary;    // barycentric weights

    explicit ChebGrid(int n_) : n(n_) {
        if (n < 4) throw Error("ChebGrid: need at least 4 intervals");
        const double pi = trig::pi;
        Eigen::VectorXd x(n + 1);
        for (int j = 0; j <= n; ++j) x[j] = std::cos(j * pi / n);
        y = 0.5 * (Eigen::VectorXd::Ones(n + 1) - x);
        // Trefethen's differentiation matrix with the negative-sum trick.
        Eigen::VectorXd c(n + 1);
        for (int j = 0; j <= n; ++j) c[j] = ((j == 0 || j == n) ? 2.0 : 1.0) * ((j % 2) ? -1.0 : 1.0);
        Eigen::MatrixXd Dx = Eigen::MatrixXd::Zero(n + 1, n + 1);
        for (int i = 0; i <= n; ++i)
            for (int j = 0; j <= n; ++j)
                if (i != j) Dx(i, j) = c[i] / c[j] / (x[i] - x[j]);
        for (int i = 0; i <= n; ++i) Dx(i, i) = -Dx.row(i).sum();
        D = -2.0 * Dx;
        // Clenshaw-Curtis weights on [-1, 1], halved for [0, 1].
        weights = Eigen::VectorXd::Zero(n + 1);
        for (int j = 0; j <= n; ++j) {
            const double theta = j * pi / n;
            double s = 0.0;
            for (int k = 1; k <= n / 2; ++k) {
                const double b = (2 * k == n) ? 1.0 : 2.0;
                s += b / (4.0 * k * k - 1.0) * std::cos(2.0 * k * theta);
            }
            const double cj = (j == 0 || j == n) ? 1.0 : 2.0;
            weights[j] = 0.5 * cj / n * (1.0 - s);
        }
        bary.resize(n + 1);
        for (int j = 0; j <= n; ++j) bary[j] = ((j % 2) ? -1.0 : 1.0) * ((j == 0 || j == n) ? 0.5 : 1.0);
    }

    /// Row vector of interpolation weights at y (barycentric formula).
    Eigen::RowVectorXd interp_row(double yy) const {
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n + 1);
        for (int j = 0; j <= n; ++j)
            if (yy == y[j]) {
                r[j] = 1.0;
                return r;
            }
        double den = 0.0;
        for (int j = 0; j <= n; ++j) {
            r[j] = bary[j] / (yy - y[j]);
            den += r[j];
        }
        return r / den;
    }

    static std::shared_ptr<const ChebGrid> shared(int n) {
        static std::mutex mu;
        static std::map<int, std::shared_ptr<const ChebGrid>> cache;
        std::lock_guard<std::mutex> lock(mu);
        auto& g = cache[n];
        if (!g) g = std::make_shared<const ChebGrid>(n);
        return g;
    }
};

inline constexpr int kDefaultChebN = 64;

class ModalField {
public:
    ModalField() : grid_(ChebGrid::shared(kDefaultChebN)) {}
    explicit ModalField(std::shared_ptr<const ChebGrid> g) : grid_(std::move(g)) {}

    /// A single mode k with profile sampled from fn(y).
    template <class Fn>
    static ModalField from_mode(int k, Fn&& fn, std::shared_ptr<const ChebGrid> g = ChebGrid::shared(kDefaultChebN)) {
        ModalField f(g);
        Eigen::VectorXd v(g->n + 1);
        for (int j = 0; j <= g->n; ++j) v[j] = fn(g->y[j]);
        f.set_mode(k, v);
        return f;
    }

    const ChebGrid& grid() const { return *grid_; }
    std::shared_ptr<const ChebGrid> grid_ptr() const { return grid_; }
    int max_mode() const { return static_cast<int>(modes_.size()) - 1; }
    bool has_mode(int k) const { return k >= 0 && k <= max_mode() && modes_[static_cast<std::size_t>(k)].size() > 0; }
    const Eigen::VectorXd& mode(int k) const { return modes_.at(static_cast<std::size_t>(k)); }
    Eigen::VectorXd mode_or_zero(int k) const { return has_mode(k) ? mode(k) : Eigen::VectorXd::Zero(grid_->n + 1); }

    void set_mode(int k, const Eigen::VectorXd& v) {
        if (v.size() != grid_->n + 1) throw Error("ModalField: profile size mismatch");
        if (k > max_mode()) modes_.resize(static_cast<std::size_t>(k) + 1);
        modes_[static_cast<std::size_t>(k)] = v;
    }

    ModalField& operator+=(const ModalField& o) {
        for (int k = 0; k <= o.max_mode(); ++k)
            if (o.has_mode(k)) set_mode(k, mode_or_zero(k) + o.mode(k));
        return *this;
    }
    ModalField& operator*=(double s) {
        for (auto& m : modes_)
            if (m.size()) m *= s;
        return *this;
    }
    friend ModalField operator+(ModalField a, const ModalField& b) { return a += b; }
    friend ModalField operator*(double s, ModalField a) { return a *= s; }

    struct Value {
        double u, ux, uy;
    };

    Value eval(double x1, double x2) const {
        const Eigen::RowVectorXd r = grid_->interp_row(x2);
        Value v{0.0, 0.0, 0.0};
        for (int k = 0; k <= max_mode(); ++k) {
            if (!has_mode(k)) continue;
            const auto& f = modes_[static_cast<std::size_t>(k)];
            const double fk = r.dot(f);
            const double dfk = r.dot(grid_->D * f);
            v.u += fk * cos_mode(k, x1);
            v.ux -= k * trig::pi * fk * sin_mode(k, x1);
            v.uy += dfk * cos_mode(k, x1);
        }
        return v;
    }
    double operator()(double x1, double x2) const { return eval(x1, x2).u; }

    /// Trace on x2 = 0 as a cosine series.
    CosineSeries trace() const {
        std::vector<double> c(static_cast<std::size_t>(std::max(0, max_mode() + 1)), 0.0);
        for (int k = 0; k <= max_mode(); ++k)
            if (has_mode(k)) c[static_cast<std::size_t>(k)] = modes_[static_cast<std::size_t>(k)][0];
        return CosineSeries(std::move(c));
    }
    /// d/dx2 on x2 = 0 as a cosine series.
    CosineSeries dy_trace() const {
        std::vector<double> c(static_cast<std::size_t>(std::max(0, max_mode() + 1)), 0.0);
        for (int k = 0; k <= max_mode(); ++k)
            if (has_mode(k)) c[static_cast<std::size_t>(k)] = grid_->D.row(0).dot(modes_[static_cast<std::size_t>(k)]);
        return CosineSeries(std::move(c));
    }

    /// Evaluation-ready copy holding derivative profiles, for repeated point evaluation.
    struct Cache {
        std::vector<int> ks;
        std::vector<Eigen::VectorXd> f, df;
    };
    Cache cache() const {
        Cache c;
        for (int k = 0; k <= max_mode(); ++k)
            if (has_mode(k)) {
                c.ks.push_back(k);
                c.f.push_back(mode(k));
                c.df.push_back(grid_->D * mode(k));
            }
        return c;
    }
    static Value eval_cached(const Cache& c, const ChebGrid& g, double x1, double x2) {
        const Eigen::RowVectorXd r = g.interp_row(x2);
        Value v{0.0, 0.0, 0.0};
        for (std::size_t i = 0; i < c.ks.size(); ++i) {
            const int k = c.ks[i];
            const double fk = r.dot(c.f[i]);
            const double dfk = r.dot(c.df[i]);
            const double cs = cos_mode(k, x1);
            v.u += fk * cs;
            v.ux -= k * trig::pi * fk * sin_mode(k, x1);
            v.uy += dfk * cs;
        }
        return v;
    }

private:
    std::shared_ptr<const ChebGrid> grid_;
    std::vector<Eigen::VectorXd> modes_;
};

/// L2(Omega) inner product of two modal fields on the same grid.
inline double inner(const ModalField& a, const ModalField& b) {
    double s = 0.0;
    const int n = std::min(a.max_mode(), b.max_mode());
    for (int k = 0; k <= n; ++k)
        if (a.has_mode(k) && b.has_mode(k))
            s += cos_mode_norm2(k) * (a.grid().weights.array() * a.mode(k).array() * b.mode(k).array()).sum();
    return s;
}

/// H1 seminorm squared of a modal field.
inline double grad_norm2(const ModalField& a) {
    double s = 0.0;
    for (int k = 0; k <= a.max_mode(); ++k)
        if (a.has_mode(k)) {
            const Eigen::VectorXd f = a.mode(k), df = a.grid().D * f;
            const double w = k * trig::pi;
            s += cos_mode_norm2(k) * (a.grid().weights.array() * (df.array().square() + w * w * f.array().square())).sum();
        }
    return s;
}

} // namespace oscbnd
