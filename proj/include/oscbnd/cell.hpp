#pragma once

// Boundary-layer problems on the truncated strip  F(xi1) < xi2 < T,
// |xi1| < 1/2, and the far-field constants C, C_I, C_II.

#include <oscbnd/error.hpp>
#include <oscbnd/fem.hpp>
#include <oscbnd/mesh.hpp>
#include <oscbnd/profile.hpp>

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

namespace oscbnd {

enum class Parity { even, odd };
enum class FarField { linear, zero, constant, cubic };

/// Quintic smoothstep 6t^5 - 15t^4 + 10t^3 on [0,1], clamped outside.
struct Smoothstep {
    static double value(double t) {
        if (t <= 0.0) return 0.0;
        if (t >= 1.0) return 1.0;
        return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    }
    static double d1(double t) {
        if (t <= 0.0 || t >= 1.0) return 0.0;
        return 30.0 * t * t * (1.0 - t) * (1.0 - t);
    }
    static double d2(double t) {
        if (t <= 0.0 || t >= 1.0) return 0.0;
        return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
    }
};

/// Strip mesh with its assembled matrices and a point locator.
struct CellMesh {
    Mesh mesh;
    FemMatrices fm;
    std::unique_ptr<GridLocator> locator;
    double T = 0.0;
    int layer_rows = 0;
    double h_min = 0.0;
    std::vector<int> top_nodes;  // ordered by xi1

    CellMesh(Mesh m, int nlayer) : mesh(std::move(m)), layer_rows(nlayer) {
        fm = assemble(mesh);
        locator = std::make_unique<GridLocator>(mesh);
        const GridLayout& g = *mesh.grid;
        T = mesh.vertices[static_cast<std::size_t>(g.index(0, g.nrows))].y;
        for (int i = 0; i <= g.ncols; ++i) top_nodes.push_back(g.index(i, g.nrows));
        h_min = std::numeric_limits<double>::infinity();
        for (const auto& tri : mesh.triangles)
            for (int k = 0; k < 3; ++k) {
                const Point& a = mesh.vertices[static_cast<std::size_t>(tri[static_cast<std::size_t>(k)])];
                const Point& b = mesh.vertices[static_cast<std::size_t>(tri[static_cast<std::size_t>((k + 1) % 3)])];
                h_min = std::min(h_min, std::hypot(a.x - b.x, a.y - b.y));
            }
    }

    /// Integral over the top edge of a nodal field (equal to its mean, width 1).
    double top_mean(const Vec& v) const {
        double s = 0.0;
        for (std::size_t i = 0; i + 1 < top_nodes.size(); ++i) {
            const Point& a = mesh.vertices[static_cast<std::size_t>(top_nodes[i])];
            const Point& b = mesh.vertices[static_cast<std::size_t>(top_nodes[i + 1])];
            s += 0.5 * (v[top_nodes[i]] + v[top_nodes[i + 1]]) * std::fabs(b.x - a.x);
        }
        return s;
    }
};

inline std::shared_ptr<const CellMesh> make_cell_mesh(const Profile& p, double T, const StripOptions& o) {
    return std::make_shared<const CellMesh>(mesh_strip(p, T, o), layer_row_count(o.cells_per_half_period, o.layer_rows, o.refine));
}

class CellField {
public:
    std::shared_ptr<const CellMesh> cm;
    Vec values;
    Parity parity = Parity::even;
    FarField model = FarField::zero;
    double C = 0.0;     // linear and cubic models
    double C_I = 0.0;   // constant model
    double C_II = 0.0;  // cubic model

    double farfield(double xi2) const {
        switch (model) {
        case FarField::linear: return xi2 + C;
        case FarField::zero: return 0.0;
        case FarField::constant: return C_I;
        case FarField::cubic: return xi2 * xi2 * (xi2 / 6.0 + C / 2.0) + C_II;
        }
        return 0.0;
    }
    double farfield_d(double xi2) const {
        switch (model) {
        case FarField::linear: return 1.0;
        case FarField::cubic: return xi2 * (xi2 / 2.0 + C);
        default: return 0.0;
        }
    }

    struct Value {
        double u, d1, d2;  // value and derivatives in xi1, xi2
    };

    /// Value and gradient at xi, periodically extended in xi1; above the
    /// truncation height the far-field model is used.
    Value eval(double xi1, double xi2) const {
        if (xi2 >= cm->T) return {farfield(xi2), 0.0, farfield_d(xi2)};
        const double r = trig::reduce_period(xi1);
        const auto hit = cm->locator->locate(r, xi2);
        const auto& tri = cm->mesh.triangles[static_cast<std::size_t>(hit.triangle)];
        double u = 0.0;
        for (int k = 0; k < 3; ++k) u += hit.bary[static_cast<std::size_t>(k)] * values[tri[static_cast<std::size_t>(k)]];
        const auto g = triangle_gradient(static_cast<std::size_t>(hit.triangle));
        return {u, g[0], g[1]};
    }
    double operator()(double xi1, double xi2) const { return eval(xi1, xi2).u; }

    std::array<double, 2> triangle_gradient(std::size_t t) const {
        const auto& tri = cm->mesh.triangles[t];
        const Point& a = cm->mesh.vertices[static_cast<std::size_t>(tri[0])];
        const Point& b = cm->mesh.vertices[static_cast<std::size_t>(tri[1])];
        const Point& c = cm->mesh.vertices[static_cast<std::size_t>(tri[2])];
        const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        const double ua = values[tri[0]], ub = values[tri[1]], uc = values[tri[2]];
        return {((ub - ua) * (c.y - a.y) - (uc - ua) * (b.y - a.y)) / det,
                ((uc - ua) * (b.x - a.x) - (ub - ua) * (c.x - a.x)) / det};
    }

    /// max |f(xi1) -+ f(-xi1)| over mirrored node pairs, relative to max |f|.
    double parity_error() const {
        const GridLayout& g = *cm->mesh.grid;
        double err = 0.0, scale = 0.0;
        const double sign = parity == Parity::even ? -1.0 : 1.0;
        for (int j = 0; j <= g.nrows; ++j)
            for (int i = 0; i <= g.ncols; ++i) {
                const double a = values[g.index(i, j)], b = values[g.index(g.ncols - i, j)];
                err = std::max(err, std::fabs(a + sign * b));
                scale = std::max(scale, std::fabs(a));
            }
        return scale > 0.0 ? err / scale : err;
    }
};

struct CellSolveInfo {
    double weak_residual = 0.0;  // relative residual of the reduced system
};

namespace detail {

inline Vec solve_reduced(const CellMesh& cm, const std::vector<BoundaryTag>& dirichlet, const Vec& load, CellSolveInfo* info) {
    const DirichletMap d = dirichlet_map(cm.mesh, dirichlet);
    const SpMat K = d.reduce(cm.fm.K);
    const Vec b = d.restrict(load);
    const Vec x = SparseSolver(K).solve(b, 1e-9);
    if (info) info->weak_residual = b.norm() > 0.0 ? (K * x - b).norm() / b.norm() : (K * x).norm();
    return d.expand(x);
}

/// Load vector  int g psi_i  for a piecewise-constant g given per triangle.
inline Vec load_piecewise_constant(const Mesh& m, const std::vector<double>& g) {
    Vec b = Vec::Zero(static_cast<Eigen::Index>(m.num_vertices()));
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const double w = g[t] * m.signed_area(t) / 3.0;
        for (int v : m.triangles[t]) b[v] += w;
    }
    return b;
}

/// Load vector  int g(xi2) psi_i.  Triangles are clipped at the heights in
/// `breaks`, where g may lose smoothness, and each piece is integrated with a
/// high-order rule in the barycentric coordinates of the parent triangle.
template <class Fn>
Vec load_function_of_height(const Mesh& m, Fn&& g, const std::vector<double>& breaks = {}) {
    const TriangleRule& q = triangle_rule(6);
    Vec b = Vec::Zero(static_cast<Eigen::Index>(m.num_vertices()));
    using Bary = std::array<double, 3>;
    for (std::size_t t = 0; t < m.num_triangles(); ++t) {
        const auto& tri = m.triangles[t];
        const double area = m.signed_area(t);
        double ys[3];
        for (int k = 0; k < 3; ++k) ys[k] = m.vertices[static_cast<std::size_t>(tri[static_cast<std::size_t>(k)])].y;
        auto height = [&](const Bary& l) { return l[0] * ys[0] + l[1] * ys[1] + l[2] * ys[2]; };
        std::vector<std::vector<Bary>> pieces{{Bary{1, 0, 0}, Bary{0, 1, 0}, Bary{0, 0, 1}}};
        for (double c : breaks) {
            const double lo = std::min({ys[0], ys[1], ys[2]}), hi = std::max({ys[0], ys[1], ys[2]});
            if (!(c > lo && c < hi)) continue;
            std::vector<std::vector<Bary>> next;
            for (const auto& poly : pieces)
                for (int side = 0; side < 2; ++side) {
                    // Sutherland-Hodgman clip against y <= c (side 0) or y >= c (side 1).
                    std::vector<Bary> out;
                    for (std::size_t i = 0; i < poly.size(); ++i) {
                        const Bary& A = poly[i];
                        const Bary& B = poly[(i + 1) % poly.size()];
                        const double ha = height(A) - c, hb = height(B) - c;
                        const bool ina = side == 0 ? ha <= 0.0 : ha >= 0.0;
                        const bool inb = side == 0 ? hb <= 0.0 : hb >= 0.0;
                        if (ina) out.push_back(A);
                        if (ina != inb) {
                            const double s = ha / (ha - hb);
                            out.push_back({A[0] + s * (B[0] - A[0]), A[1] + s * (B[1] - A[1]), A[2] + s * (B[2] - A[2])});
                        }
                    }
                    if (out.size() >= 3) next.push_back(std::move(out));
                }
            pieces = std::move(next);
        }
        for (const auto& poly : pieces)
            for (std::size_t f = 1; f + 1 < poly.size(); ++f) {
                const Bary& P0 = poly[0];
                const Bary& P1 = poly[f];
                const Bary& P2 = poly[f + 1];
                // Area of the sub-triangle relative to the parent.
                const double rel = std::fabs((P1[1] - P0[1]) * (P2[2] - P0[2]) - (P2[1] - P0[1]) * (P1[2] - P0[2]));
                if (rel == 0.0) continue;
                for (std::size_t p = 0; p < q.w.size(); ++p) {
                    Bary L;
                    for (int k = 0; k < 3; ++k) L[static_cast<std::size_t>(k)] = q.l[p][0] * P0[static_cast<std::size_t>(k)] + q.l[p][1] * P1[static_cast<std::size_t>(k)] + q.l[p][2] * P2[static_cast<std::size_t>(k)];
                    const double gv = g(height(L)) * q.w[p] * rel * area;
                    if (gv == 0.0) continue;
                    for (int k = 0; k < 3; ++k) b[tri[static_cast<std::size_t>(k)]] += gv * L[static_cast<std::size_t>(k)];
                }
            }
    }
    return b;
}

} // namespace detail

/// The lifting h(xi2) = (xi2^3/6 + C xi2^2/2) s(xi2 - 1) and its derivatives.
struct CubicLift {
    double C = 0.0;
    double p(double y) const { return y * y * (y / 6.0 + C / 2.0); }
    double p1(double y) const { return y * (y / 2.0 + C); }
    double p2(double y) const { return y + C; }
    double value(double y) const { return p(y) * Smoothstep::value(y - 1.0); }
    double d1(double y) const { return p1(y) * Smoothstep::value(y - 1.0) + p(y) * Smoothstep::d1(y - 1.0); }
    double d2(double y) const {
        return p2(y) * Smoothstep::value(y - 1.0) + 2.0 * p1(y) * Smoothstep::d1(y - 1.0) + p(y) * Smoothstep::d2(y - 1.0);
    }
};

/// X: harmonic, zero on the bottom, unit slope at the top; C = top mean - T.
inline std::pair<CellField, double> solve_cell_X(std::shared_ptr<const CellMesh> cm, CellSolveInfo* info = nullptr) {
    if (cm->T < 3.0 - 1e-12) throw Error("solve_cell_X: truncation height below 3");
    Vec load = Vec::Zero(static_cast<Eigen::Index>(cm->mesh.num_vertices()));
    for (std::size_t i = 0; i + 1 < cm->top_nodes.size(); ++i) {
        const double len = std::fabs(cm->mesh.vertices[static_cast<std::size_t>(cm->top_nodes[i + 1])].x -
                                     cm->mesh.vertices[static_cast<std::size_t>(cm->top_nodes[i])].x);
        load[cm->top_nodes[i]] += 0.5 * len;
        load[cm->top_nodes[i + 1]] += 0.5 * len;
    }
    CellField X;
    X.cm = cm;
    X.values = detail::solve_reduced(*cm, {BoundaryTag::StripBottom}, load, info);
    X.parity = Parity::even;
    X.model = FarField::linear;
    X.C = cm->top_mean(X.values) - cm->T;
    return {X, X.C};
}

inline std::pair<CellField, double> solve_cell_X(const Profile& p, double T, const StripOptions& res, CellSolveInfo* info = nullptr) {
    return solve_cell_X(make_cell_mesh(p, T, res), info);
}

/// Xtilde: Delta Xt = dX/dxi1 with Xt = 0 on the whole boundary.
inline CellField solve_cell_Xtilde(const CellField& X, CellSolveInfo* info = nullptr) {
    const Mesh& m = X.cm->mesh;
    std::vector<double> g(m.num_triangles());
    for (std::size_t t = 0; t < g.size(); ++t) g[t] = -X.triangle_gradient(t)[0];
    CellField Xt;
    Xt.cm = X.cm;
    Xt.values = detail::solve_reduced(
        *X.cm, {BoundaryTag::StripBottom, BoundaryTag::StripTop, BoundaryTag::StripSideL, BoundaryTag::StripSideR},
        detail::load_piecewise_constant(m, g), info);
    Xt.parity = Parity::odd;
    Xt.model = FarField::zero;
    return Xt;
}

/// Xtt_I: Delta Y = dXt/dxi1, zero on the bottom, Neumann elsewhere; C_I = top mean.
inline std::pair<CellField, double> solve_cell_XI(const CellField& Xt, CellSolveInfo* info = nullptr) {
    const Mesh& m = Xt.cm->mesh;
    std::vector<double> g(m.num_triangles());
    for (std::size_t t = 0; t < g.size(); ++t) g[t] = -Xt.triangle_gradient(t)[0];
    CellField Y;
    Y.cm = Xt.cm;
    Y.values = detail::solve_reduced(*Xt.cm, {BoundaryTag::StripBottom}, detail::load_piecewise_constant(m, g), info);
    Y.parity = Parity::even;
    Y.model = FarField::constant;
    Y.C_I = Xt.cm->top_mean(Y.values);
    return {Y, Y.C_I};
}

/// Xtt_II = Z + h with Delta Z = X - h'', zero on the bottom, Neumann
/// elsewhere; C_II = top mean of Z.  `C` must be the constant of X on this mesh.
inline std::pair<CellField, double> solve_cell_XII(const CellField& X, double C, CellSolveInfo* info = nullptr,
                                                   CellField* Z_out = nullptr) {
    const CellMesh& cm = *X.cm;
    const CubicLift h{C};
    Vec load = detail::load_function_of_height(cm.mesh, [&](double y) { return h.d2(y); }, {1.0, 2.0});
    load -= cm.fm.M * X.values;
    CellField Z;
    Z.cm = X.cm;
    Z.values = detail::solve_reduced(cm, {BoundaryTag::StripBottom}, load, info);
    Z.parity = Parity::even;
    Z.model = FarField::constant;
    Z.C_I = cm.top_mean(Z.values);
    CellField W = Z;
    for (std::size_t i = 0; i < cm.mesh.num_vertices(); ++i) W.values[static_cast<Eigen::Index>(i)] += h.value(cm.mesh.vertices[i].y);
    W.model = FarField::cubic;
    W.C = C;
    W.C_II = Z.C_I;
    if (Z_out) *Z_out = Z;
    return {W, W.C_II};
}

struct DecayFit {
    bool applicable = false;  // false when the remainder is negligible (e.g. flat profile)
    double rate = std::numeric_limits<double>::quiet_NaN();
    double amplitude = 0.0;
    double fit_quality = 0.0;  // r^2 of the log-linear fit
    int heights = 0;
};

/// Fits |f - farfield|_{L2 across the strip}(xi2) ~ A exp(-rate xi2) over
/// mesh rows with heights in [lo, hi] (default [T/3, 2T/3]).
inline DecayFit estimate_decay(const CellField& f, double lo = -1.0, double hi = -1.0) {
    const CellMesh& cm = *f.cm;
    if (lo < 0.0) lo = cm.T / 3.0;
    if (hi < 0.0) hi = 2.0 * cm.T / 3.0;
    const GridLayout& g = *cm.mesh.grid;
    double scale = 0.0;
    for (Eigen::Index i = 0; i < f.values.size(); ++i) scale = std::max(scale, std::fabs(f.values[i]));
    std::vector<double> ys, ls;
    double amp = 0.0;
    for (int j = cm.layer_rows; j <= g.nrows; ++j) {
        const double y = cm.mesh.vertices[static_cast<std::size_t>(g.index(0, j))].y;
        if (y < lo - 1e-12 || y > hi + 1e-12) continue;
        const double far = f.farfield(y);
        double s = 0.0;
        for (int i = 0; i < g.ncols; ++i) {
            const double a = f.values[g.index(i, j)] - far, b = f.values[g.index(i + 1, j)] - far;
            const double len = cm.mesh.vertices[static_cast<std::size_t>(g.index(i + 1, j))].x - cm.mesh.vertices[static_cast<std::size_t>(g.index(i, j))].x;
            s += len * (a * a + a * b + b * b) / 3.0;
        }
        const double nrm = std::sqrt(s);
        amp = std::max(amp, nrm);
        // Rows at the round-off floor carry no decay information.
        if (nrm > 1e-12 * std::max(1.0, scale)) {
            ys.push_back(y);
            ls.push_back(std::log(nrm));
        }
    }
    DecayFit fit;
    fit.amplitude = amp;
    if (amp <= 1e-10) return fit;
    if (ys.size() < 5) throw Error("estimate_decay: fewer than 5 heights above the noise floor");
    const double n = static_cast<double>(ys.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
        sx += ys[i];
        sy += ls[i];
        sxx += ys[i] * ys[i];
        sxy += ys[i] * ls[i];
        syy += ls[i] * ls[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double icpt = (sy - slope * sx) / n;
    const double sst = syy - sy * sy / n;
    double sse = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) sse += std::pow(ls[i] - (icpt + slope * ys[i]), 2);
    fit.applicable = true;
    fit.rate = -slope;
    fit.amplitude = std::exp(icpt);
    fit.fit_quality = sst > 0.0 ? 1.0 - sse / sst : 1.0;
    fit.heights = static_cast<int>(ys.size());
    return fit;
}

/// All four fields on one strip mesh.
struct CellSolution {
    std::shared_ptr<const CellMesh> cm;
    CellField X, Xt, XI, XII;
    double C = 0.0, C_I = 0.0, C_II = 0.0;
    double max_weak_residual = 0.0;
    double parity_max_err = 0.0;
};

inline CellSolution solve_cells(std::shared_ptr<const CellMesh> cm) {
    CellSolution s;
    s.cm = cm;
    CellSolveInfo info;
    std::tie(s.X, s.C) = solve_cell_X(cm, &info);
    s.max_weak_residual = info.weak_residual;
    s.Xt = solve_cell_Xtilde(s.X, &info);
    s.max_weak_residual = std::max(s.max_weak_residual, info.weak_residual);
    std::tie(s.XI, s.C_I) = solve_cell_XI(s.Xt, &info);
    s.max_weak_residual = std::max(s.max_weak_residual, info.weak_residual);
    std::tie(s.XII, s.C_II) = solve_cell_XII(s.X, s.C, &info);
    s.max_weak_residual = std::max(s.max_weak_residual, info.weak_residual);
    for (const CellField* f : {&s.X, &s.Xt, &s.XI}) s.parity_max_err = std::max(s.parity_max_err, f->parity_error());
    return s;
}

inline CellSolution solve_cells(const Profile& p, double T, const StripOptions& res) { return solve_cells(make_cell_mesh(p, T, res)); }

struct CellConstants {
    double C = 0.0;
    double C_I = 0.0;
    double C_II = 0.0;
    double decay_rate_X = std::numeric_limits<double>::quiet_NaN();
    double decay_rate_Xtilde = std::numeric_limits<double>::quiet_NaN();
    double T = 0.0;
    double h_min = 0.0;
    bool extrapolated = false;
};

struct CellConstantsOptions {
    double T = 8.0;
    StripOptions strip = default_cell_strip();
    bool richardson = true;
    double decay_T = 4.0;  // decay fits use a shorter strip whose window stays above round-off

    static StripOptions default_cell_strip() {
        StripOptions o;
        o.cells_per_half_period = 32;
        o.cap = 0.0625;
        return o;
    }
};

/// Cell constants on the configured strip, optionally Richardson-extrapolated
/// from the strip and its uniform refinement under an O(h^2) error model.
inline CellConstants compute_cell_constants(const Profile& p, const CellConstantsOptions& o = {}) {
    const CellSolution coarse = solve_cells(p, o.T, o.strip);
    CellConstants c;
    c.T = o.T;
    c.C = coarse.C;
    c.C_I = coarse.C_I;
    c.C_II = coarse.C_II;
    c.h_min = coarse.cm->h_min;
    if (o.richardson) {
        StripOptions fine = o.strip;
        fine.refine += 1;
        const CellSolution f = solve_cells(p, o.T, fine);
        c.C = (4.0 * f.C - coarse.C) / 3.0;
        c.C_I = (4.0 * f.C_I - coarse.C_I) / 3.0;
        c.C_II = (4.0 * f.C_II - coarse.C_II) / 3.0;
        c.h_min = f.cm->h_min;
        c.extrapolated = true;
    }
    if (!p.is_flat()) {
        const CellSolution d = solve_cells(p, o.decay_T, o.strip);
        c.decay_rate_X = estimate_decay(d.X).rate;
        c.decay_rate_Xtilde = estimate_decay(d.Xt).rate;
    }
    return c;
}

} // namespace oscbnd
