#pragma once

// Composite approximation on the perturbed domain:
//     u~ = chi(x2 / eps^beta) (u0 + eps u1 + eps^2 u2)
//        + (1 - chi(x2 / eps^beta)) (eps v1 + eps^2 v2 + eps^3 v3)(x / eps, x1)
// with the inner terms built from the cell fields and the Gamma0 traces,
//     v1 = a0 X
//     v2 = a1 X - 2 a0' Xt
//     v3 = a2 X - 2 a1' Xt + 4 a0'' XI - (a0'' + lambda0 a0) XII,
// where a0 = alpha01, a1 = alpha11, a2 = alpha21 of the branch.

#include <oscbnd/cell.hpp>
#include <oscbnd/corrector.hpp>
#include <oscbnd/error.hpp>
#include <oscbnd/fem.hpp>
#include <oscbnd/mesh.hpp>
#include <oscbnd/modal.hpp>
#include <oscbnd/profile.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <vector>

namespace oscbnd {

struct AsymptoticPrediction {
    int branch = 1;
    double lambda0 = 0, lambda1 = 0, lambda2 = 0, lambda3 = 0;

    /// lambda0 + sum_{i <= order} eps^i lambda_i.
    double value(double eps, int order) const {
        if (order < 0 || order > 3) throw Error("predicted_lambda: order must be 0..3");
        const double l[4] = {lambda0, lambda1, lambda2, lambda3};
        double s = 0.0, e = 1.0;
        for (int i = 0; i <= order; ++i, e *= eps) s += e * l[i];
        return s;
    }
};

inline AsymptoticPrediction prediction(const CorrectorSet& set, int branch) {
    const auto& r = set[branch];
    return {branch, set.lambda0(), r.lambda1, r.lambda2, r.lambda3};
}

inline double predicted_lambda(const CorrectorSet& set, int branch, double eps, int order) {
    return prediction(set, branch).value(eps, order);
}

/// The cut-off: quintic smoothstep, 0 for s <= 1 and 1 for s >= 2.
struct CutOff {
    static double value(double s) { return Smoothstep::value(s - 1.0); }
    static double d1(double s) { return Smoothstep::d1(s - 1.0); }
    static double d2(double s) { return Smoothstep::d2(s - 1.0); }
};

/// The four cell fields on one strip, evaluated together from a single point
/// location.  XII is taken as its P1 part Z plus the exact cubic lift.
class CellEvaluator {
public:
    explicit CellEvaluator(std::shared_ptr<const CellSolution> s) : s_(std::move(s)), lift_{s_->C} {
        const auto& cm = *s_->cm;
        Z_ = s_->XII;
        for (std::size_t i = 0; i < cm.mesh.num_vertices(); ++i) Z_.values[static_cast<Eigen::Index>(i)] -= lift_.value(cm.mesh.vertices[i].y);
    }

    struct Values {
        // value, d/dxi1, d/dxi2
        std::array<double, 3> X, Xt, XI, XII;
    };

    Values eval(double xi1, double xi2) const {
        const CellSolution& s = *s_;
        const CellMesh& cm = *s.cm;
        Values v{};
        if (xi2 >= cm.T) {
            v.X = {xi2 + s.C, 0.0, 1.0};
            v.XI = {s.C_I, 0.0, 0.0};
            v.XII = {lift_.p(xi2) + s.C_II, 0.0, lift_.p1(xi2)};
            return v;
        }
        const auto hit = cm.locator->locate(trig::reduce_period(xi1), xi2);
        const auto t = static_cast<std::size_t>(hit.triangle);
        const auto& tri = cm.mesh.triangles[t];
        auto p1 = [&](const CellField& f) -> std::array<double, 3> {
            double u = 0.0;
            for (std::size_t k = 0; k < 3; ++k) u += hit.bary[k] * f.values[tri[k]];
            const auto g = f.triangle_gradient(t);
            return {u, g[0], g[1]};
        };
        v.X = p1(s.X);
        v.Xt = p1(s.Xt);
        v.XI = p1(s.XI);
        v.XII = p1(Z_);
        v.XII[0] += lift_.value(xi2);
        v.XII[2] += lift_.d1(xi2);
        return v;
    }

    const CellSolution& cells() const { return *s_; }

private:
    std::shared_ptr<const CellSolution> s_;
    CubicLift lift_;
    CellField Z_;
};

class CompositeField {
public:
    struct Value {
        double u = 0.0, ux = 0.0, uy = 0.0;
    };

    /// `set` must come from the modal backend; its cell constants should be
    /// those of `cells` so the inner and outer expansions match.
    CompositeField(std::shared_ptr<const CorrectorSet> set, std::shared_ptr<const CellSolution> cells, const Profile& profile, int branch,
                   double eps, double beta)
        : set_(std::move(set)), cells_(std::move(cells)), profile_(profile), branch_(branch), eps_(eps), beta_(beta) {
        if (!(beta > 0.0 && beta < 1.0)) throw Error("composite: beta must lie in (0, 1)");
        if (!(eps > 0.0 && eps < 1.0)) throw Error("composite: eps must lie in (0, 1)");
        if (branch != 1 && branch != 2) throw Error("composite: branch must be 1 or 2");
        if (set_->backend != CorrectorBackend::modal) throw Error("composite: modal correctors required");
        const auto& r = (*set_)[branch];
        lambda0_ = set_->lambda0();
        a0_ = r.alpha01;
        const CosineSeries& other = set_->cluster.traces[static_cast<std::size_t>(r.other - 1)];
        a1_ = r.alpha11(other);
        a2_ = r.alpha21(other);
        a0pp_ = a0_.second_derivative();
        a1pp_ = a1_.second_derivative();
        const ModalField outer = set_->cluster.modal[static_cast<std::size_t>(branch - 1)] + eps * set_->u1(branch) + (eps * eps) * set_->u2(branch);
        outer_grid_ = outer.grid_ptr();
        outer_ = outer.cache();
        cell_ = std::make_unique<CellEvaluator>(cells_);
        pred_ = prediction(*set_, branch);
    }

    double eps() const { return eps_; }
    double beta() const { return beta_; }
    int branch() const { return branch_; }
    double lambda(int order) const { return pred_.value(eps_, order); }

    /// Inner term v_i at fast variable xi (any xi1) and slow x1.
    double inner_v(int i, double xi1, double xi2, double x1) const {
        const auto c = cell_->eval(xi1, xi2);
        switch (i) {
        case 1: return a0_(x1) * c.X[0];
        case 2: return a1_(x1) * c.X[0] - 2.0 * a0_.derivative(x1) * c.Xt[0];
        case 3:
            return a2_(x1) * c.X[0] - 2.0 * a1_.derivative(x1) * c.Xt[0] + 4.0 * a0pp_(x1) * c.XI[0] -
                   (a0pp_(x1) + lambda0_ * a0_(x1)) * c.XII[0];
        default: throw Error("inner_v: order must be 1, 2 or 3");
        }
    }

    Value outer(double x1, double x2) const {
        const auto v = ModalField::eval_cached(outer_, *outer_grid_, x1, x2);
        return {v.u, v.ux, v.uy};
    }

    /// eps v1 + eps^2 v2 + eps^3 v3 and its gradient in x.
    Value inner(double x1, double x2) const {
        const double e = eps_, e2 = e * e, e3 = e2 * e;
        const auto c = cell_->eval(x1 / e, x2 / e);
        const double a0 = a0_(x1), a0p = a0_.derivative(x1), a0pp = a0pp_(x1), a0ppp = a0pp_.derivative(x1);
        const double a1 = a1_(x1), a1p = a1_.derivative(x1), a1pp = a1pp_(x1);
        const double a2 = a2_(x1), a2p = a2_.derivative(x1);
        const double A = e * a0 + e2 * a1 + e3 * a2, Ap = e * a0p + e2 * a1p + e3 * a2p;
        const double B = -2.0 * (e2 * a0p + e3 * a1p), Bp = -2.0 * (e2 * a0pp + e3 * a1pp);
        const double D = 4.0 * e3 * a0pp, Dp = 4.0 * e3 * a0ppp;
        const double E = -e3 * (a0pp + lambda0_ * a0), Ep = -e3 * (a0ppp + lambda0_ * a0p);
        Value v;
        v.u = A * c.X[0] + B * c.Xt[0] + D * c.XI[0] + E * c.XII[0];
        v.ux = Ap * c.X[0] + Bp * c.Xt[0] + Dp * c.XI[0] + Ep * c.XII[0] + (A * c.X[1] + B * c.Xt[1] + D * c.XI[1] + E * c.XII[1]) / e;
        v.uy = (A * c.X[2] + B * c.Xt[2] + D * c.XI[2] + E * c.XII[2]) / e;
        return v;
    }

    Value eval(double x1, double x2) const {
        check_inside(x1, x2);
        const double eb = std::pow(eps_, beta_);
        const double s = x2 / eb;
        const double chi = CutOff::value(s);
        if (chi >= 1.0) return outer(x1, x2);
        if (chi <= 0.0) return inner(x1, x2);
        const Value U = outer(x1, x2), V = inner(x1, x2);
        const double dchi = CutOff::d1(s) / eb;
        return {chi * U.u + (1.0 - chi) * V.u, chi * U.ux + (1.0 - chi) * V.ux, chi * U.uy + (1.0 - chi) * V.uy + dchi * (U.u - V.u)};
    }
    double operator()(double x1, double x2) const { return eval(x1, x2).u; }

    /// Wall height eps F(x1/eps).
    double wall(double x1) const { return eps_ * profile_(x1 / eps_); }

    void check_inside(double x1, double x2) const {
        // Straight mesh edges cut slightly below the curved wall; accept that sag.
        const double tol = 1e-9, wall_tol = 0.02 * eps_;
        if (x1 < -0.5 - tol || x1 > 0.5 + tol || x2 > 1.0 + tol || x2 < wall(x1) - wall_tol) throw Error("composite: point outside the perturbed domain");
    }

    /// max |outer - inner| over samples in the overlap eps^beta < x2 < 2 eps^beta.
    double overlap_mismatch(int n1 = 64, int n2 = 16) const {
        const double eb = std::pow(eps_, beta_);
        double m = 0.0;
        for (int i = 0; i <= n1; ++i)
            for (int j = 0; j <= n2; ++j) {
                const double x1 = -0.5 + static_cast<double>(i) / n1;
                const double x2 = eb * (1.0 + static_cast<double>(j) / n2);
                if (x2 > 1.0) continue;
                m = std::max(m, std::fabs(outer(x1, x2).u - inner(x1, x2).u));
            }
        return m;
    }

private:
    std::shared_ptr<const CorrectorSet> set_;
    std::shared_ptr<const CellSolution> cells_;
    Profile profile_;
    int branch_;
    double eps_, beta_;
    double lambda0_ = 0.0;
    CosineSeries a0_, a1_, a2_, a0pp_, a1pp_;
    std::shared_ptr<const ChebGrid> outer_grid_;
    ModalField::Cache outer_;
    std::unique_ptr<CellEvaluator> cell_;
    AsymptoticPrediction pred_;
};

/// Strip whose rows are the perturbed-domain rows divided by eps, with the
/// same columns and diagonal pattern, so that each triangle of the perturbed
/// mesh (below x2 = eps T) is the scaled image of a strip triangle.
inline StripOptions matching_strip_options(const EpsilonParam& eps, const MeshOptions& mo, double T) {
    StripOptions so;
    so.cells_per_half_period = mo.cells_per_half_period;
    so.layer_rows = mo.layer_rows;
    so.refine = mo.refine;
    const double e = eps.eps();
    std::vector<double> rows;
    for (double y : perturbed_rows_above(eps, mo)) {
        rows.push_back(y / e);
        if (y / e >= T) break;
    }
    double step = rows.size() > 1 ? rows.back() - rows[rows.size() - 2] : 1.0;
    while (rows.back() < T) {
        step *= 1.15;
        rows.push_back(std::min(T, rows.back() + step));
    }
    so.rows_above = rows;
    return so;
}

/// Discrete dual norm  sqrt(sum_i r_i^2 / m_i)  over nodes not on the Dirichlet wall,
/// with m_i the lumped mass.
inline double dual_norm(const Mesh& mesh, const Vec& r, const std::vector<BoundaryTag>& dirichlet = {BoundaryTag::GammaEps}) {
    Vec m = Vec::Zero(static_cast<Eigen::Index>(mesh.num_vertices()));
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t)
        for (int v : mesh.triangles[t]) m[v] += mesh.signed_area(t) / 3.0;
    std::vector<char> fixed(mesh.num_vertices(), 0);
    for (int v : mesh.tagged_vertices(dirichlet)) fixed[static_cast<std::size_t>(v)] = 1;
    double s = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i)
        if (!fixed[static_cast<std::size_t>(i)]) s += r[i] * r[i] / m[i];
    return std::sqrt(s);
}

/// Residual of a nodal pair (u, lambda): (K - lambda M) u in the dual norm.
inline double discrete_residual_norm(const Mesh& mesh, const FemMatrices& fm, const Vec& u, double lambda) {
    return dual_norm(mesh, fm.K * u - lambda * (fm.M * u));
}

/// Galerkin residual  r_i = a(u~, phi_i) - lambda (u~, phi_i)  of the exact
/// composite, integrated elementwise, in the dual norm.
inline double residual_norm(const CompositeField& f, const Mesh& mesh, double lambda, int quad = 4) {
    const TriangleRule& rule = triangle_rule(quad);
    Vec r = Vec::Zero(static_cast<Eigen::Index>(mesh.num_vertices()));
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Point& a = mesh.vertices[static_cast<std::size_t>(tri[0])];
        const Point& b = mesh.vertices[static_cast<std::size_t>(tri[1])];
        const Point& c = mesh.vertices[static_cast<std::size_t>(tri[2])];
        const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
        const double area = 0.5 * det;
        const double gx[3] = {(b.y - c.y) / det, (c.y - a.y) / det, (a.y - b.y) / det};
        const double gy[3] = {(c.x - b.x) / det, (a.x - c.x) / det, (b.x - a.x) / det};
        for (std::size_t q = 0; q < rule.w.size(); ++q) {
            const auto& l = rule.l[q];
            const double x = l[0] * a.x + l[1] * b.x + l[2] * c.x;
            const double y = l[0] * a.y + l[1] * b.y + l[2] * c.y;
            const auto v = f.eval(x, y);
            const double w = area * rule.w[q];
            for (int k = 0; k < 3; ++k) r[tri[static_cast<std::size_t>(k)]] += w * (v.ux * gx[k] + v.uy * gy[k] - lambda * v.u * l[static_cast<std::size_t>(k)]);
        }
    }
    return dual_norm(mesh, r);
}

/// Residual of the nodal interpolant of the composite, (K - lambda M) I_h u~.
inline double interpolated_residual_norm(const CompositeField& f, const Mesh& mesh, const FemMatrices& fm, double lambda) {
    return discrete_residual_norm(mesh, fm, interpolate(mesh, [&](double x, double y) { return f(x, y); }), lambda);
}

/// L2 norm of the composite over a mesh of the perturbed domain.
inline double l2_norm(const CompositeField& f, const Mesh& mesh, int quad = 4) {
    const TriangleRule& rule = triangle_rule(quad);
    double s = 0.0;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Point& a = mesh.vertices[static_cast<std::size_t>(tri[0])];
        const Point& b = mesh.vertices[static_cast<std::size_t>(tri[1])];
        const Point& c = mesh.vertices[static_cast<std::size_t>(tri[2])];
        const double area = mesh.signed_area(t);
        for (std::size_t q = 0; q < rule.w.size(); ++q) {
            const auto& l = rule.l[q];
            const double u = f(l[0] * a.x + l[1] * b.x + l[2] * c.x, l[0] * a.y + l[1] * b.y + l[2] * c.y);
            s += area * rule.w[q] * u * u;
        }
    }
    return std::sqrt(s);
}

struct CompositeOptions {
    double beta = 0.5;
    double T = 8.0;
    int order = 3;  // eigenvalue order used in the residual
    MeshOptions mesh;
};

struct CompositeBranchReport {
    double lambda = 0.0;      // prediction used in the residual
    double residual = 0.0;
    double l2 = 0.0;          // || u~ ||_{L2(Omega_eps)}
    double mismatch = 0.0;    // overlap mismatch
};

struct CompositeReport {
    int N = 0;
    double eps = 0.0;
    double beta = 0.0;
    double C = 0.0, C_I = 0.0, C_II = 0.0;  // constants of the matching strip
    std::array<CompositeBranchReport, 2> branch;
};

/// Builds the perturbed mesh, the matching cell strip, the correctors with
/// that strip's constants, and evaluates both branch composites.
inline CompositeReport evaluate_composite(const Profile& p, const EigenCluster& cluster, int N, const CompositeOptions& o = {}) {
    const EpsilonParam eps(N);
    const Mesh mesh = mesh_perturbed_domain(p, eps, o.mesh);
    auto cells = std::make_shared<const CellSolution>(solve_cells(p, o.T, matching_strip_options(eps, o.mesh, o.T)));
    auto set = std::make_shared<const CorrectorSet>(run_correctors(cluster, cells->C, cells->C_I, cells->C_II));
    CompositeReport rep;
    rep.N = N;
    rep.eps = eps.eps();
    rep.beta = o.beta;
    rep.C = cells->C;
    rep.C_I = cells->C_I;
    rep.C_II = cells->C_II;
    for (int l = 1; l <= 2; ++l) {
        const CompositeField f(set, cells, p, l, eps.eps(), o.beta);
        auto& b = rep.branch[static_cast<std::size_t>(l - 1)];
        b.lambda = f.lambda(o.order);
        b.residual = residual_norm(f, mesh, b.lambda);
        b.l2 = l2_norm(f, mesh);
        b.mismatch = f.overlap_mismatch();
    }
    return rep;
}

} // namespace oscbnd
