#pragma once

// The limit eigenproblem on the rectangle (-1/2,1/2) x (0,1): Dirichlet on
// Gamma0, Neumann elsewhere.  Its eigenvalue 6.25 pi^2 is double, carried by
// the modes (k,j) = (0,2) and (2,1).

#include <oscbnd/error.hpp>
#include <oscbnd/fem.hpp>
#include <oscbnd/mesh.hpp>
#include <oscbnd/modal.hpp>
#include <oscbnd/trace.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <vector>

namespace oscbnd {

inline constexpr double kLambda0 = 6.25 * trig::pi * trig::pi;

struct SpectrumEntry {
    int k = 0;
    int j = 0;
    double lambda = 0.0;
};

/// lambda_{k,j} = k^2 pi^2 + (j + 1/2)^2 pi^2, ascending (ties by k).
inline std::vector<SpectrumEntry> analytic_rectangle_spectrum(int kmax, int jmax) {
    std::vector<SpectrumEntry> s;
    const double pi2 = trig::pi * trig::pi;
    for (int k = 0; k <= kmax; ++k)
        for (int j = 0; j <= jmax; ++j) s.push_back({k, j, pi2 * (k * k + (j + 0.5) * (j + 0.5))});
    std::stable_sort(s.begin(), s.end(), [](const SpectrumEntry& a, const SpectrumEntry& b) { return a.lambda < b.lambda; });
    return s;
}

/// c_k cos(k pi (x1 + 1/2)) sqrt(2) sin((j + 1/2) pi x2), L2-normalised.
inline double rectangle_eigenfunction(int k, int j, double x1, double x2) {
    const double ck = k == 0 ? 1.0 : std::sqrt(2.0);
    return ck * cos_mode(k, x1) * std::sqrt(2.0) * std::sin((j + 0.5) * trig::pi * x2);
}

inline ModalField rectangle_eigenfunction_modal(int k, int j) {
    const double ck = k == 0 ? 1.0 : std::sqrt(2.0);
    return ModalField::from_mode(k, [&](double y) { return ck * std::sqrt(2.0) * std::sin((j + 0.5) * trig::pi * y); });
}

/// d/dx2 trace on Gamma0 of the (k, j) eigenfunction.
inline CosineSeries rectangle_eigenfunction_trace(int k, int j) {
    const double ck = k == 0 ? 1.0 : std::sqrt(2.0);
    return CosineSeries::single(k, ck * std::sqrt(2.0) * (j + 0.5) * trig::pi);
}

/// Limit rectangle mesh with assembled matrices and the Gamma0 elimination.
struct LimitMesh {
    Mesh mesh;
    FemMatrices fm;
    DirichletMap dmap;
    SpMat K, M;  // reduced
    double h = 0.0;

    explicit LimitMesh(double h_) : mesh(mesh_limit_domain(h_)), h(h_) {
        fm = assemble(mesh);
        dmap = dirichlet_map(mesh, {BoundaryTag::Gamma0});
        K = dmap.reduce(fm.K);
        M = dmap.reduce(fm.M);
    }
};

/// Dirichlet on Gamma0, natural elsewhere; eigenvectors returned as full nodal vectors.
inline std::vector<EigenPair> solve_limit_eigen(const LimitMesh& lm, double target, int count, const EigenOptions& opt = {}) {
    auto e = eigs_smallest_near(lm.K, lm.M, target, count, opt);
    for (auto& p : e) p.vector = lm.dmap.expand(p.vector);
    return e;
}

enum class LimitBackend { analytic, fem };

struct EigenCluster {
    LimitBackend backend = LimitBackend::analytic;
    double lambda0 = kLambda0;
    std::array<double, 2> values{kLambda0, kLambda0};  // the two members (discrete values on FEM)
    std::array<ModalField, 2> modal;                 // analytic backend
    std::shared_ptr<const LimitMesh> lm;             // FEM backend
    std::array<Vec, 2> nodal;                        // FEM backend, full nodal vectors
    std::array<BoundaryTrace, 2> raw_traces;         // FEM backend, recovered d/dx2 traces
    std::array<CosineSeries, 2> traces;              // alpha_01 per branch
    Eigen::Matrix2d G = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d rotation = Eigen::Matrix2d::Identity();
    double rotation_angle = 0.0;
    bool swapped = false;
    bool diagonalized = false;
    double nerav_gap = 0.0;
    int trace_modes = 32;
};

/// Indices (i, i+1) of the unique pair of values within tol (1 + |lambda|)
/// of each other, with every other value at least 10 tol (1 + |lambda|) away.
inline std::pair<int, int> find_double_cluster(const std::vector<double>& values, double tol) {
    const int n = static_cast<int>(values.size());
    for (int i = 1; i < n; ++i)
        if (values[static_cast<std::size_t>(i)] < values[static_cast<std::size_t>(i - 1)]) throw Error("find_double_cluster: values must be ascending");
    auto close = [&](int a, int b, double factor) {
        const double va = values[static_cast<std::size_t>(a)], vb = values[static_cast<std::size_t>(b)];
        return std::fabs(va - vb) <= factor * tol * (1.0 + std::fabs(va));
    };
    std::vector<std::pair<int, int>> groups;  // [first, last] of chains of close neighbours
    for (int i = 0; i < n;) {
        int j = i;
        while (j + 1 < n && close(j, j + 1, 1.0)) ++j;
        if (j > i) groups.emplace_back(i, j);
        i = j + 1;
    }
    if (groups.size() != 1 || groups[0].second - groups[0].first != 1) throw Error("no double cluster");
    const auto [a, b] = groups[0];
    for (int i = 0; i < n; ++i)
        if (i != a && i != b && (close(i, a, 10.0) || close(i, b, 10.0))) throw Error("no double cluster");
    return {a, b};
}

namespace detail {

/// Integral over Gamma0 of the product of two piecewise-linear traces on the same nodes.
inline double integrate_traces(const BoundaryTrace& a, const BoundaryTrace& b) {
    if (a.nodes.size() != b.nodes.size()) throw Error("integrate_traces: node mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < a.nodes.size(); ++i) {
        const double h = a.nodes[i + 1] - a.nodes[i];
        s += h / 6.0 * (2 * a.values[i] * b.values[i] + a.values[i] * b.values[i + 1] + a.values[i + 1] * b.values[i] +
                        2 * a.values[i + 1] * b.values[i + 1]);
    }
    return s;
}

inline Eigen::Matrix2d gram_from_cluster(const EigenCluster& c) {
    Eigen::Matrix2d G;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            G(i, j) = c.backend == LimitBackend::fem ? integrate_traces(c.raw_traces[static_cast<std::size_t>(i)], c.raw_traces[static_cast<std::size_t>(j)])
                                                     : integrate_product(c.traces[static_cast<std::size_t>(i)], c.traces[static_cast<std::size_t>(j)]);
    return 0.5 * (G + G.transpose());
}

inline BoundaryTrace combine(const BoundaryTrace& a, const BoundaryTrace& b, double ca, double cb) {
    BoundaryTrace t{a.nodes, a.values};
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = ca * a.values[i] + cb * b.values[i];
    return t;
}

} // namespace detail

/// Replaces the basis by  u'_a = sum_b Q(b, a) u_b  and updates all traces.
inline void transform_basis(EigenCluster& c, const Eigen::Matrix2d& Q) {
    if (c.backend == LimitBackend::analytic) {
        const auto m = c.modal;
        for (int a = 0; a < 2; ++a) c.modal[static_cast<std::size_t>(a)] = Q(0, a) * m[0] + Q(1, a) * m[1];
    } else {
        const auto v = c.nodal;
        const auto r = c.raw_traces;
        for (int a = 0; a < 2; ++a) {
            c.nodal[static_cast<std::size_t>(a)] = Q(0, a) * v[0] + Q(1, a) * v[1];
            c.raw_traces[static_cast<std::size_t>(a)] = detail::combine(r[0], r[1], Q(0, a), Q(1, a));
        }
    }
    const auto t = c.traces;
    for (int a = 0; a < 2; ++a) c.traces[static_cast<std::size_t>(a)] = Q(0, a) * t[0] + Q(1, a) * t[1];
    c.G = detail::gram_from_cluster(c);
}

/// Rotates an (undiagonalised) cluster basis by `angle`, for invariance checks.
inline EigenCluster rotate_cluster(EigenCluster c, double angle) {
    Eigen::Matrix2d Q;
    Q << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    transform_basis(c, Q);
    c.diagonalized = false;
    return c;
}

/// The exact pair (0,2), (2,1) as modal fields.
inline EigenCluster analytic_cluster() {
    EigenCluster c;
    c.backend = LimitBackend::analytic;
    c.modal = {rectangle_eigenfunction_modal(0, 2), rectangle_eigenfunction_modal(2, 1)};
    c.traces = {rectangle_eigenfunction_trace(0, 2), rectangle_eigenfunction_trace(2, 1)};
    c.G = detail::gram_from_cluster(c);
    return c;
}

/// Rotation diagonalising G (angle in [-pi/4, pi/4], identity on ties),
/// branches ordered by descending diagonal, signs fixed against the reference
/// traces, and the non-degeneracy gap asserted.
inline EigenCluster diagonalize_boundary_form(EigenCluster c, double gap_tol = 1e-3) {
    const Eigen::Matrix2d G = detail::gram_from_cluster(c);
    double theta = 0.5 * std::atan2(2.0 * G(0, 1), G(0, 0) - G(1, 1));
    if (theta > trig::pi / 4.0) theta -= trig::pi / 2.0;
    else if (theta < -trig::pi / 4.0) theta += trig::pi / 2.0;
    Eigen::Matrix2d Q;
    Q << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    transform_basis(c, Q);
    c.rotation = Q;
    c.rotation_angle = theta;
    c.swapped = false;
    if (c.G(1, 1) > c.G(0, 0)) {
        Eigen::Matrix2d P;
        P << 0, 1, 1, 0;
        transform_basis(c, P);
        std::swap(c.values[0], c.values[1]);
        c.swapped = true;
    }
    // Deterministic signs: positive overlap with the reference trace of the branch.
    const std::array<CosineSeries, 2> ref = {rectangle_eigenfunction_trace(0, 2), rectangle_eigenfunction_trace(2, 1)};
    Eigen::Matrix2d S = Eigen::Matrix2d::Identity();
    for (int a = 0; a < 2; ++a) {
        double ov = integrate_product(c.traces[static_cast<std::size_t>(a)], ref[static_cast<std::size_t>(a)]);
        if (std::fabs(ov) < 1e-12) {
            for (double v : c.traces[static_cast<std::size_t>(a)].coefficients())
                if (std::fabs(v) > 1e-12) {
                    ov = v;
                    break;
                }
        }
        if (ov < 0.0) S(a, a) = -1.0;
    }
    transform_basis(c, S);
    const double g11 = c.G(0, 0), g22 = c.G(1, 1);
    c.nerav_gap = std::fabs(g11 - g22) / (g11 + g22);
    if (!(c.nerav_gap >= gap_tol)) throw NeravViolated("boundary-energy gap " + std::to_string(c.nerav_gap) + " below " + std::to_string(gap_tol));
    c.diagonalized = true;
    return c;
}

struct FemClusterOptions {
    double h = 1.0 / 32.0;
    int count = 4;          // eigenvalues computed around the target
    double cluster_tol = 0; // 0 -> 10 h^2
    int trace_modes = 32;
    EigenOptions eig;
};

/// Cluster from a discrete eigensolve on the limit rectangle (not yet diagonalised).
inline EigenCluster fem_cluster(const FemClusterOptions& o = {}) {
    auto lm = std::make_shared<const LimitMesh>(o.h);
    const auto eigs = solve_limit_eigen(*lm, kLambda0, o.count, o.eig);
    std::vector<double> vals;
    for (const auto& e : eigs) vals.push_back(e.value);
    const double tol = o.cluster_tol > 0 ? o.cluster_tol : 10.0 * o.h * o.h;
    const auto [a, b] = find_double_cluster(vals, tol);
    EigenCluster c;
    c.backend = LimitBackend::fem;
    c.lm = lm;
    c.trace_modes = o.trace_modes;
    c.values = {vals[static_cast<std::size_t>(a)], vals[static_cast<std::size_t>(b)]};
    c.lambda0 = 0.5 * (c.values[0] + c.values[1]);
    c.nodal = {eigs[static_cast<std::size_t>(a)].vector, eigs[static_cast<std::size_t>(b)].vector};
    for (int i = 0; i < 2; ++i) {
        c.raw_traces[static_cast<std::size_t>(i)] = boundary_flux_gamma0(lm->mesh, lm->fm, c.nodal[static_cast<std::size_t>(i)], c.values[static_cast<std::size_t>(i)]);
        c.traces[static_cast<std::size_t>(i)] = project_cosine(c.raw_traces[static_cast<std::size_t>(i)], o.trace_modes);
    }
    c.G = detail::gram_from_cluster(c);
    return c;
}

/// Cluster basis value and gradient at x in Omega (x2 >= 0).
inline ModalField::Value cluster_basis_eval(const EigenCluster& c, int branch, double x1, double x2) {
    if (c.backend != LimitBackend::analytic) throw Error("cluster_basis_eval: analytic backend required");
    return c.modal[static_cast<std::size_t>(branch)].eval(x1, x2);
}

} // namespace oscbnd
