#pragma once

// Outer correctors u1, u2 and the eigenvalue corrections lambda1..lambda3,
// kappa1, kappa2 for each branch of a diagonalised cluster.
//
// Every corrector solves
//     -Delta u - lambda0 u = rhs  in Omega,   u = g on Gamma0,   du/dn = 0 elsewhere,
// subject to orthogonality against both cluster functions.  The problem is
// solvable iff  int rhs u0^(l) + int_Gamma0 g alpha01^(l) = 0  for l = 1, 2
// (alpha = d/dx2 on Gamma0); those two numbers are the reported residues.

#include <oscbnd/error.hpp>
#include <oscbnd/fem.hpp>
#include <oscbnd/limit.hpp>
#include <oscbnd/modal.hpp>
#include <oscbnd/trace.hpp>

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace oscbnd {

enum class CorrectorBackend { modal, fem };

inline const char* backend_name(CorrectorBackend b) { return b == CorrectorBackend::modal ? "modal" : "fem"; }

template <class Field>
struct ConstrainedSolution {
    Field u;
    std::array<double, 2> residues{0.0, 0.0};
    std::array<double, 2> multipliers{0.0, 0.0};
    CosineSeries dy_trace;
};

namespace detail {

inline void check_residues(const std::array<double, 2>& r, double tol, const std::array<double, 2>& scale = {1.0, 1.0}) {
    if (tol > 0.0 && (std::fabs(r[0]) > tol * scale[0] || std::fabs(r[1]) > tol * scale[1])) throw SolvabilityViolated(r[0], r[1]);
}

inline bool series_nonzero(const CosineSeries& s, int k) { return s.coefficient(k) != 0.0; }

} // namespace detail

/// Compatibility residues of (rhs, g) against an analytic cluster.
inline std::array<double, 2> compatibility_residues(const ModalField& rhs, const CosineSeries& g, const EigenCluster& c) {
    return {inner(rhs, c.modal[0]) + integrate_product(g, c.traces[0]), inner(rhs, c.modal[1]) + integrate_product(g, c.traces[1])};
}

/// Mode-by-mode reduction: each cosine mode k gives a two-point problem in x2,
///     -f'' + (k^2 pi^2 - lambda0) f = r_k,  f(0) = g_k,  f'(1) = 0,
/// collocated on a Chebyshev grid.  All modes are coupled only through the
/// two orthogonality constraints and their multipliers, so they are solved as
/// one bordered dense system.
inline ConstrainedSolution<ModalField> solve_constrained_helmholtz(const ModalField& rhs, const CosineSeries& g, double lambda0,
                                                                   const EigenCluster& c, double tol = 1e-8) {
    if (c.backend != LimitBackend::analytic) throw Error("solve_constrained_helmholtz: modal backend needs an analytic cluster");
    ConstrainedSolution<ModalField> out;
    out.residues = compatibility_residues(rhs, g, c);
    detail::check_residues(out.residues, tol);

    const auto gp = rhs.grid_ptr();
    const ChebGrid& G = *gp;
    const int n = G.n;
    std::set<int> modes;
    for (int k = 0; k <= rhs.max_mode(); ++k)
        if (rhs.has_mode(k)) modes.insert(k);
    for (int k = 0; k <= g.max_mode(); ++k)
        if (detail::series_nonzero(g, k)) modes.insert(k);
    for (const auto& b : c.modal)
        for (int k = 0; k <= b.max_mode(); ++k)
            if (b.has_mode(k)) modes.insert(k);
    if (modes.empty()) modes.insert(0);

    const std::vector<int> ks(modes.begin(), modes.end());
    const int nm = static_cast<int>(ks.size());
    const int block = n + 1;
    const int dim = nm * block + 2;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
    const Eigen::MatrixXd D2 = G.D * G.D;
    const double pi2 = trig::pi * trig::pi;

    for (int m = 0; m < nm; ++m) {
        const int k = ks[static_cast<std::size_t>(m)];
        const int o = m * block;
        const Eigen::VectorXd r = rhs.mode_or_zero(k);
        A(o, o) = 1.0;
        b[o] = g.coefficient(k);
        for (int i = 1; i < n; ++i) {
            A.block(o + i, o, 1, block) = -D2.row(i);
            A(o + i, o + i) += k * k * pi2 - lambda0;
            for (int l = 0; l < 2; ++l) A(o + i, nm * block + l) = c.modal[static_cast<std::size_t>(l)].mode_or_zero(k)[i];
            b[o + i] = r[i];
        }
        A.block(o + n, o, 1, block) = G.D.row(n);
        for (int l = 0; l < 2; ++l) {
            const Eigen::VectorXd phi = c.modal[static_cast<std::size_t>(l)].mode_or_zero(k);
            A.block(nm * block + l, o, 1, block) = cos_mode_norm2(k) * (G.weights.array() * phi.array()).matrix().transpose();
        }
    }
    const Eigen::VectorXd x = A.partialPivLu().solve(b);
    const double err = (A * x - b).norm();
    if (!(err <= 1e-8 * std::max(1.0, b.norm()))) throw Error("solve_constrained_helmholtz: bordered system is singular");

    out.u = ModalField(gp);
    for (int m = 0; m < nm; ++m) out.u.set_mode(ks[static_cast<std::size_t>(m)], x.segment(m * block, block));
    out.multipliers = {x[nm * block], x[nm * block + 1]};
    out.dy_trace = out.u.dy_trace();
    return out;
}

/// FEM data for the bordered solve on the limit rectangle.
struct FemCorrectorContext {
    std::shared_ptr<const LimitMesh> lm;
    std::array<Vec, 2> basis;             // full nodal vectors, zero on Gamma0
    std::array<CosineSeries, 2> traces;   // alpha01 of the basis
    int trace_modes = 32;
};

inline FemCorrectorContext fem_context(const EigenCluster& c, double h_if_analytic = 1.0 / 32.0) {
    FemCorrectorContext ctx;
    ctx.trace_modes = c.trace_modes;
    ctx.traces = c.traces;
    if (c.backend == LimitBackend::fem) {
        ctx.lm = c.lm;
        ctx.basis = c.nodal;
    } else {
        ctx.lm = std::make_shared<const LimitMesh>(h_if_analytic);
        for (int l = 0; l < 2; ++l) ctx.basis[static_cast<std::size_t>(l)] = interpolate(ctx.lm->mesh, c.modal[static_cast<std::size_t>(l)]);
    }
    return ctx;
}

inline std::array<double, 2> compatibility_residues(const FemCorrectorContext& ctx, const Vec& rhs, const CosineSeries& g,
                                                    std::array<double, 2>* scale = nullptr) {
    const Vec Mr = ctx.lm->fm.M * rhs;
    const double rhs_norm = std::sqrt(std::max(0.0, rhs.dot(Mr))), g_norm = std::sqrt(integrate_product(g, g));
    std::array<double, 2> r{}, s{};
    for (std::size_t l = 0; l < 2; ++l) {
        const Vec& b = ctx.basis[l];
        r[l] = b.dot(Mr) + integrate_product(g, ctx.traces[l]);
        // Cauchy-Schwarz bound of the two terms
        s[l] = std::max(1e-300, std::sqrt(b.dot(ctx.lm->fm.M * b)) * rhs_norm + std::sqrt(integrate_product(ctx.traces[l], ctx.traces[l])) * g_norm);
    }
    if (scale) *scale = s;
    return r;
}

/// Bordered saddle-point solve [K - lambda0 M, B; B^T, 0] after a discrete
/// harmonic lifting of the Gamma0 data.  The recovered d/dx2 trace is
/// projected onto `trace_modes` cosine modes.  The discrete residues are
/// only O(h^2) small, so `tol` is relative to the size of the two terms.
inline ConstrainedSolution<Vec> solve_constrained_helmholtz(const FemCorrectorContext& ctx, const Vec& rhs, const CosineSeries& g,
                                                            double lambda0, double tol) {
    const LimitMesh& lm = *ctx.lm;
    ConstrainedSolution<Vec> out;
    std::array<double, 2> scale{};
    out.residues = compatibility_residues(ctx, rhs, g, &scale);
    detail::check_residues(out.residues, tol, scale);

    const auto nodes = gamma0_nodes(lm.mesh);
    Vec L = Vec::Zero(lm.dmap.num_full());
    for (std::size_t i = 0; i < nodes.nodes.size(); ++i) L[nodes.nodes[i]] = g(nodes.x1[i]);
    if (L.squaredNorm() > 0.0) {
        const Vec lift_rhs = lm.dmap.restrict(-(lm.fm.K * L));
        L = lm.dmap.expand(solve_sparse(lm.K, lift_rhs), &L);
    }

    const Eigen::Index nf = lm.dmap.num_free();
    std::vector<Eigen::Triplet<double>> t;
    const SpMat A = lm.K - lambda0 * lm.M;
    t.reserve(static_cast<std::size_t>(A.nonZeros() + 4 * nf));
    for (int k = 0; k < A.outerSize(); ++k)
        for (SpMat::InnerIterator it(A, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    Eigen::VectorXd b(nf + 2);
    const SpMat Afull = lm.fm.K - lambda0 * lm.fm.M;
    b.head(nf) = lm.dmap.restrict(lm.fm.M * rhs - Afull * L);
    for (int l = 0; l < 2; ++l) {
        const Vec Mb = lm.fm.M * ctx.basis[static_cast<std::size_t>(l)];
        const Vec Bf = lm.dmap.restrict(Mb);
        for (Eigen::Index i = 0; i < nf; ++i)
            if (Bf[i] != 0.0) {
                t.emplace_back(i, nf + l, Bf[i]);
                t.emplace_back(nf + l, i, Bf[i]);
            }
        b[nf + l] = -Mb.dot(L);
    }
    SpMat S(nf + 2, nf + 2);
    S.setFromTriplets(t.begin(), t.end());
    Eigen::SparseLU<SpMat> lu;
    lu.analyzePattern(S);
    lu.factorize(S);
    if (lu.info() != Eigen::Success) throw Error("solve_constrained_helmholtz: bordered factorization failed");
    const Eigen::VectorXd x = lu.solve(b);
    if (!((S * x - b).norm() <= 1e-8 * std::max(1.0, b.norm()))) throw Error("solve_constrained_helmholtz: bordered solve inaccurate");

    out.u = L + lm.dmap.expand(x.head(nf));
    out.multipliers = {x[nf], x[nf + 1]};
    const Vec f_eff = rhs - out.multipliers[0] * ctx.basis[0] - out.multipliers[1] * ctx.basis[1];
    const BoundaryTrace tr = boundary_flux_gamma0(lm.mesh, lm.fm, out.u, lambda0, f_eff, false);
    out.dy_trace = project_cosine(tr, ctx.trace_modes);
    return out;
}

/// L2(Omega) distance between a nodal P1 field and a modal field.
inline double l2_difference(const Mesh& mesh, const Vec& uh, const ModalField& u) {
    const auto cache = u.cache();
    const ChebGrid& G = u.grid();
    const TriangleRule& rule = triangle_rule(4);
    double s = 0.0;
    for (const auto& tri : mesh.triangles) {
        const Point& a = mesh.vertices[static_cast<std::size_t>(tri[0])];
        const Point& b = mesh.vertices[static_cast<std::size_t>(tri[1])];
        const Point& c = mesh.vertices[static_cast<std::size_t>(tri[2])];
        const double area = 0.5 * std::fabs((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
        for (std::size_t q = 0; q < rule.w.size(); ++q) {
            const auto& l = rule.l[q];
            const double x = l[0] * a.x + l[1] * b.x + l[2] * c.x;
            const double y = l[0] * a.y + l[1] * b.y + l[2] * c.y;
            const double vh = l[0] * uh[tri[0]] + l[1] * uh[tri[1]] + l[2] * uh[tri[2]];
            const double d = vh - ModalField::eval_cached(cache, G, x, y).u;
            s += area * rule.w[q] * d * d;
        }
    }
    return std::sqrt(s);
}

struct CorrectorOptions {
    CorrectorBackend backend = CorrectorBackend::modal;
    double solvability_tol = 1e-8;   // modal backend
    double fem_solvability_tol = 0;  // FEM backend, relative; 0 -> 50 h^2 (discrete inconsistency is O(h^2))
    double fem_h = 1.0 / 32.0;       // mesh for the FEM backend when the cluster is analytic
    double gap_tol = 1e-3;
};

struct CorrectorResult {
    int branch = 1;           // 1 or 2
    int other = 2;            // l* = 3 - l
    double lambda1 = 0, lambda2 = 0, lambda3 = 0;
    double kappa1 = 0, kappa2 = 0;
    ModalField u1_tilde, u2_tilde;  // modal backend
    Vec u1_nodal, u2_nodal;         // FEM backend
    CosineSeries alpha01, alpha11_tilde, alpha21_tilde;
    CosineSeries alpha10, alpha20, alpha30;
    std::array<double, 2> residues1{0, 0}, residues2{0, 0};

    CosineSeries alpha11(const CosineSeries& alpha01_other) const { return alpha11_tilde + kappa1 * alpha01_other; }
    CosineSeries alpha21(const CosineSeries& alpha01_other) const { return alpha21_tilde + kappa2 * alpha01_other; }
};

struct CorrectorSet {
    EigenCluster cluster;
    double C = 0, C_I = 0, C_II = 0;
    CorrectorBackend backend = CorrectorBackend::modal;
    std::shared_ptr<const FemCorrectorContext> fem;  // FEM backend only
    std::array<CorrectorResult, 2> branch;
    double max_residue = 0.0;
    int trace_modes = 32;

    double lambda0() const { return cluster.lambda0; }
    const CorrectorResult& operator[](int l) const { return branch.at(static_cast<std::size_t>(l - 1)); }
    /// u_i = u~_i + kappa_i u0^(l*) (i = 1, 2) as modal fields.
    ModalField u1(int l) const {
        const auto& r = (*this)[l];
        return r.u1_tilde + r.kappa1 * cluster.modal[static_cast<std::size_t>(r.other - 1)];
    }
    ModalField u2(int l) const {
        const auto& r = (*this)[l];
        return r.u2_tilde + r.kappa2 * cluster.modal[static_cast<std::size_t>(r.other - 1)];
    }
};

/// lambda1^(l) = -C G_ll.
inline std::array<double, 2> compute_lambda1(const EigenCluster& c, double C) {
    if (!c.diagonalized) throw Error("compute_lambda1: cluster not diagonalised");
    return {-C * c.G(0, 0), -C * c.G(1, 1)};
}

namespace detail {

inline void check_gap(double denom, const EigenCluster& c, double gap_tol) {
    if (!(std::fabs(denom) >= gap_tol * (c.G(0, 0) + c.G(1, 1))))
        throw NeravViolated("nerav violated: boundary-energy difference " + std::to_string(denom) + " too small");
}

// The pipeline is written once for both field representations.
struct ModalOps {
    using Field = ModalField;
    const EigenCluster& c;
    double tol;
    Field basis(int i) const { return c.modal[static_cast<std::size_t>(i)]; }
    ConstrainedSolution<Field> solve(const Field& rhs, const CosineSeries& g) const { return solve_constrained_helmholtz(rhs, g, c.lambda0, c, tol); }
    static Field combine(double a, const Field& x, double b, const Field& y) { return a * x + b * y; }
};

struct FemOps {
    using Field = Vec;
    const EigenCluster& c;
    const FemCorrectorContext& ctx;
    double tol;
    Field basis(int i) const { return ctx.basis[static_cast<std::size_t>(i)]; }
    ConstrainedSolution<Field> solve(const Field& rhs, const CosineSeries& g) const {
        return solve_constrained_helmholtz(ctx, rhs, g, c.lambda0, tol);
    }
    static Field combine(double a, const Field& x, double b, const Field& y) { return a * x + b * y; }
};

template <class Ops>
CorrectorResult run_branch(const Ops& ops, const EigenCluster& c, int l, double C, double C_I, double C_II, double gap_tol,
                           typename Ops::Field* u1_out, typename Ops::Field* u2_out) {
    using Field = typename Ops::Field;
    CorrectorResult r;
    const int i = l - 1, j = 2 - l;
    r.branch = l;
    r.other = 3 - l;
    const double lambda0 = c.lambda0;
    const CosineSeries& a0 = c.traces[static_cast<std::size_t>(i)];
    const CosineSeries& a0s = c.traces[static_cast<std::size_t>(j)];
    const double Gll = c.G(i, i), Gss = c.G(j, j);
    const Field u0 = ops.basis(i), u0s = ops.basis(j);

    r.alpha01 = a0;
    r.lambda1 = -C * Gll;
    const double lambda1s = -C * Gss;

    // First corrector.
    r.alpha10 = C * a0;
    auto s1 = ops.solve(Field(r.lambda1 * u0), r.alpha10);
    r.residues1 = s1.residues;
    r.alpha11_tilde = s1.dy_trace;

    const double denom = Gll - Gss;
    check_gap(denom, c, gap_tol);
    r.kappa1 = integrate_product(r.alpha11_tilde, a0s) / denom;
    r.lambda2 = -C * integrate_product(r.alpha11_tilde, a0);

    // Second corrector.
    r.alpha20 = C * r.alpha11(a0s);
    const Field u1 = Ops::combine(1.0, s1.u, r.kappa1, u0s);
    const Field rhs2 = Ops::combine(r.lambda1, u1, r.lambda2, u0);
    auto s2 = ops.solve(rhs2, r.alpha20);
    r.residues2 = s2.residues;
    r.alpha21_tilde = s2.dy_trace;

    const CosineSeries a0pp = a0.second_derivative();
    const double cm = C_II - 4.0 * C_I;
    r.lambda3 = -C * integrate_product(r.alpha21_tilde, a0) + cm * integrate_product(a0pp, a0) + lambda0 * C_II * integrate_product(a0, a0);
    const double dl = r.lambda1 - lambda1s;
    r.kappa2 = dl == 0.0 ? 0.0
                         : (-r.lambda2 * r.kappa1 - C * integrate_product(r.alpha21_tilde, a0s) + cm * integrate_product(a0pp, a0s)) / dl;
    r.alpha30 = C * r.alpha21(a0s) + (4.0 * C_I) * a0pp - C_II * (a0pp + lambda0 * a0);

    if (u1_out) *u1_out = s1.u;
    if (u2_out) *u2_out = s2.u;
    return r;
}

} // namespace detail

/// Full corrector chain for both branches of a diagonalised cluster.
inline CorrectorSet run_correctors(const EigenCluster& cluster, double C, double C_I, double C_II, const CorrectorOptions& o = {}) {
    if (!cluster.diagonalized) throw Error("run_correctors: cluster not diagonalised");
    CorrectorSet set;
    set.cluster = cluster;
    set.C = C;
    set.C_I = C_I;
    set.C_II = C_II;
    set.backend = o.backend;
    set.trace_modes = cluster.trace_modes;
    if (o.backend == CorrectorBackend::modal) {
        detail::ModalOps ops{cluster, o.solvability_tol};
        for (int l = 1; l <= 2; ++l) {
            ModalField u1, u2;
            auto& r = set.branch[static_cast<std::size_t>(l - 1)];
            r = detail::run_branch(ops, cluster, l, C, C_I, C_II, o.gap_tol, &u1, &u2);
            r.u1_tilde = std::move(u1);
            r.u2_tilde = std::move(u2);
        }
    } else {
        auto ctx = std::make_shared<FemCorrectorContext>(fem_context(cluster, o.fem_h));
        const double h = ctx->lm->h;
        const double tol = o.fem_solvability_tol > 0 ? o.fem_solvability_tol : 50.0 * h * h;
        detail::FemOps ops{cluster, *ctx, tol};
        for (int l = 1; l <= 2; ++l) {
            Vec u1, u2;
            auto& r = set.branch[static_cast<std::size_t>(l - 1)];
            r = detail::run_branch(ops, cluster, l, C, C_I, C_II, o.gap_tol, &u1, &u2);
            r.u1_nodal = std::move(u1);
            r.u2_nodal = std::move(u2);
        }
        set.fem = ctx;
    }
    for (const auto& r : set.branch)
        for (double v : {r.residues1[0], r.residues1[1], r.residues2[0], r.residues2[1]}) set.max_residue = std::max(set.max_residue, std::fabs(v));
    return set;
}

} // namespace oscbnd
