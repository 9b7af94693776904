#pragma once

// Boundary oscillation profile F: an even, 1-periodic, strictly negative
// finite cosine series  F(t) = -d + sum_k a_k cos(2 pi k t).

#include <oscbnd/error.hpp>
#include <oscbnd/trig.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace oscbnd {

enum class ProfileKind { flat, cosine, series };

struct ProfileValue {
    double value;
    double derivative;
};

class Profile {
public:
    ProfileKind kind() const { return kind_; }
    /// Mean depth d; the profile oscillates around -d.
    double depth() const { return depth_; }
    /// Cosine coefficients a_1, a_2, ... (a_k multiplies cos(2 pi k t)).
    const std::vector<double>& coefficients() const { return coeffs_; }

    ProfileValue eval(double t) const {
        const double r = trig::reduce_period(t);
        double f = -depth_;
        double df = 0.0;
        for (std::size_t i = 0; i < coeffs_.size(); ++i) {
            const double k = static_cast<double>(i + 1);
            f += coeffs_[i] * trig::cos2pi(k * r);
            df -= 2.0 * trig::pi * k * coeffs_[i] * trig::sin2pi(k * r);
        }
        return {f, df};
    }
    double operator()(double t) const { return eval(t).value; }

    double second_derivative(double t) const {
        const double r = trig::reduce_period(t);
        double d2 = 0.0;
        for (std::size_t i = 0; i < coeffs_.size(); ++i) {
            const double w = 2.0 * trig::pi * static_cast<double>(i + 1);
            d2 -= w * w * coeffs_[i] * trig::cos2pi(static_cast<double>(i + 1) * r);
        }
        return d2;
    }

    /// max over t of -F(t), the deepest point of the oscillation.
    double max_depth() const {
        double m = 0.0;
        for (int i = 0; i <= kDenseSamples; ++i) m = std::max(m, -eval(static_cast<double>(i) / kDenseSamples - 0.5).value);
        return m;
    }
    /// min over t of -F(t).
    double min_depth() const {
        double m = depth_ + 1e300;
        for (int i = 0; i <= kDenseSamples; ++i) m = std::min(m, -eval(static_cast<double>(i) / kDenseSamples - 0.5).value);
        return m;
    }
    /// Mean of -F over one period, which is exactly d.
    double mean_depth() const { return depth_; }

    bool is_flat() const {
        return std::all_of(coeffs_.begin(), coeffs_.end(), [](double a) { return a == 0.0; });
    }

    std::string descriptor() const {
        char buf[64];
        std::string out;
        auto num = [&](double v) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return std::string(buf);
        };
        switch (kind_) {
        case ProfileKind::flat: return "flat:d=" + num(depth_);
        case ProfileKind::cosine: return "cosine:d=" + num(depth_) + ",a=" + num(coeffs_.empty() ? 0.0 : coeffs_[0]);
        case ProfileKind::series:
            out = "series:d=" + num(depth_);
            for (std::size_t i = 0; i < coeffs_.size(); ++i) out += ",a" + std::to_string(i + 1) + "=" + num(coeffs_[i]);
            return out;
        }
        return out;
    }

    static constexpr int kDenseSamples = 4096;

private:
    friend Profile make_profile(ProfileKind kind, const std::vector<double>& params);
    ProfileKind kind_ = ProfileKind::flat;
    double depth_ = 1.0;
    std::vector<double> coeffs_;
};

/// params: flat {d}; cosine {d, a}; series {d, a1, a2, ...}.
inline Profile make_profile(ProfileKind kind, const std::vector<double>& params) {
    if (params.empty()) throw Error("profile: missing depth parameter");
    for (double p : params)
        if (!std::isfinite(p)) throw Error("profile: non-finite parameter");
    Profile p;
    p.kind_ = kind;
    p.depth_ = params[0];
    if (p.depth_ <= 0.0) throw Error("profile not strictly negative: depth must be positive");
    switch (kind) {
    case ProfileKind::flat:
        if (params.size() != 1) throw Error("profile: flat takes exactly one parameter");
        break;
    case ProfileKind::cosine:
        if (params.size() != 2) throw Error("profile: cosine takes d and a");
        if (params[1] < 0.0) throw Error("profile: cosine amplitude must be nonnegative");
        if (params[1] >= params[0]) throw Error("profile not strictly negative");
        p.coeffs_ = {params[1]};
        break;
    case ProfileKind::series:
        p.coeffs_.assign(params.begin() + 1, params.end());
        break;
    }
    // Certify F < 0: the coefficient bound when it suffices, dense sampling otherwise.
    double bound = p.depth_;
    for (double a : p.coeffs_) bound -= std::fabs(a);
    if (!(bound > 0.0)) {
        for (int i = 0; i <= Profile::kDenseSamples; ++i) {
            const double t = static_cast<double>(i) / Profile::kDenseSamples - 0.5;
            if (p.eval(t).value >= 0.0) throw Error("profile not strictly negative");
        }
    }
    return p;
}

/// Parses "flat:d=<v>", "cosine:d=<v>,a=<v>" or "series:d=<v>,a1=<v>,a2=<v>,...".
inline Profile parse_profile(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw Error("profile descriptor '" + text + "': expected <kind>:<params>");
    const std::string kind = text.substr(0, colon);
    std::map<std::string, double> kv;
    std::stringstream ss(text.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw Error("profile descriptor: bad item '" + item + "'");
        const std::string key = item.substr(0, eq);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item.substr(eq + 1), &used);
        } catch (const std::exception&) {
            throw Error("profile descriptor: bad number in '" + item + "'");
        }
        if (used != item.size() - eq - 1) throw Error("profile descriptor: bad number in '" + item + "'");
        if (!kv.emplace(key, v).second) throw Error("profile descriptor: duplicate key '" + key + "'");
    }
    auto take = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw Error("profile descriptor: missing '" + key + "'");
        const double v = it->second;
        kv.erase(it);
        return v;
    };
    std::vector<double> params;
    ProfileKind k{};
    if (kind == "flat") {
        k = ProfileKind::flat;
        params = {take("d")};
    } else if (kind == "cosine") {
        k = ProfileKind::cosine;
        params = {take("d"), take("a")};
    } else if (kind == "series") {
        k = ProfileKind::series;
        params = {take("d")};
        for (int i = 1; kv.count("a" + std::to_string(i)); ++i) params.push_back(take("a" + std::to_string(i)));
    } else {
        throw Error("profile descriptor: unknown kind '" + kind + "'");
    }
    if (!kv.empty()) throw Error("profile descriptor: unexpected key '" + kv.begin()->first + "'");
    return make_profile(k, params);
}

} // namespace oscbnd
