#pragma once

#include <cmath>
#include <numbers>

namespace oscbnd::trig {

inline constexpr double pi = std::numbers::pi;

/// Reduces t to [-1/2, 1/2] (one period of a 1-periodic function). The
/// reduction is odd in t, so even functions evaluated through it are exactly even.
inline double reduce_period(double t) { return t - std::round(t); }

/// sin(2*pi*t) with exact zeros at integer and half-integer t.
inline double sin2pi(double t) {
    double r = reduce_period(t);
    if (r > 0.25) r = 0.5 - r;
    else if (r < -0.25) r = -0.5 - r;
    return std::sin(2.0 * pi * r);
}

/// cos(2*pi*t), exactly even in t.
inline double cos2pi(double t) { return std::cos(2.0 * pi * std::fabs(reduce_period(t))); }

} // namespace oscbnd::trig
