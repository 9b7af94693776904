#pragma once

// P1 finite elements: assembly, Dirichlet elimination, sparse direct solves,
// a shift-invert subspace eigensolver and variational flux recovery on Gamma0.

#include <oscbnd/error.hpp>
#include <oscbnd/mesh.hpp>
#include <oscbnd/trace.hpp>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

namespace oscbnd {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;

struct FemMatrices {
    SpMat K;
    SpMat M;
};

/// Element stiffness and mass of the P1 triangle (a, b, c).
inline void element_matrices(const Point& a, const Point& b, const Point& c, double Ke[3][3], double Me[3][3]) {
    const double area = 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
    // Gradients of the barycentric coordinates times 2*area.
    const double gx[3] = {b.y - c.y, c.y - a.y, a.y - b.y};
    const double gy[3] = {c.x - b.x, a.x - c.x, b.x - a.x};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            Ke[i][j] = (gx[i] * gx[j] + gy[i] * gy[j]) / (4.0 * area);
            Me[i][j] = area / 12.0 * (i == j ? 2.0 : 1.0);
        }
}

inline FemMatrices assemble(const Mesh& mesh) {
    const auto n = static_cast<Eigen::Index>(mesh.num_vertices());
    std::vector<Eigen::Triplet<double>> tk, tm;
    tk.reserve(9 * mesh.num_triangles());
    tm.reserve(9 * mesh.num_triangles());
    double Ke[3][3], Me[3][3];
    for (const auto& tri : mesh.triangles) {
        element_matrices(mesh.vertices[static_cast<std::size_t>(tri[0])], mesh.vertices[static_cast<std::size_t>(tri[1])],
                         mesh.vertices[static_cast<std::size_t>(tri[2])], Ke, Me);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                tk.emplace_back(tri[static_cast<std::size_t>(i)], tri[static_cast<std::size_t>(j)], Ke[i][j]);
                tm.emplace_back(tri[static_cast<std::size_t>(i)], tri[static_cast<std::size_t>(j)], Me[i][j]);
            }
    }
    FemMatrices out{SpMat(n, n), SpMat(n, n)};
    out.K.setFromTriplets(tk.begin(), tk.end());
    out.M.setFromTriplets(tm.begin(), tm.end());
    return out;
}

/// Index map between all mesh nodes and the nodes kept after eliminating a
/// Dirichlet set.
struct DirichletMap {
    std::vector<int> free_to_full;
    std::vector<int> full_to_free;  // -1 for eliminated nodes

    Eigen::Index num_free() const { return static_cast<Eigen::Index>(free_to_full.size()); }
    Eigen::Index num_full() const { return static_cast<Eigen::Index>(full_to_free.size()); }

    SpMat reduce(const SpMat& A) const {
        std::vector<Eigen::Triplet<double>> t;
        t.reserve(static_cast<std::size_t>(A.nonZeros()));
        for (int k = 0; k < A.outerSize(); ++k)
            for (SpMat::InnerIterator it(A, k); it; ++it) {
                const int r = full_to_free[static_cast<std::size_t>(it.row())];
                const int c = full_to_free[static_cast<std::size_t>(it.col())];
                if (r >= 0 && c >= 0) t.emplace_back(r, c, it.value());
            }
        SpMat R(num_free(), num_free());
        R.setFromTriplets(t.begin(), t.end());
        return R;
    }
    Vec restrict(const Vec& full) const {
        Vec r(num_free());
        for (Eigen::Index i = 0; i < num_free(); ++i) r[i] = full[free_to_full[static_cast<std::size_t>(i)]];
        return r;
    }
    /// Free values scattered into a full vector; eliminated nodes read back as `fill`.
    Vec expand(const Vec& reduced, const Vec* fill = nullptr) const {
        Vec f = fill ? *fill : Vec::Zero(num_full());
        for (Eigen::Index i = 0; i < num_free(); ++i) f[free_to_full[static_cast<std::size_t>(i)]] = reduced[i];
        return f;
    }
    bool is_free(int full_index) const { return full_to_free[static_cast<std::size_t>(full_index)] >= 0; }
};

inline DirichletMap dirichlet_map(const Mesh& mesh, const std::vector<BoundaryTag>& tags) {
    if (tags.empty()) throw Error("apply_dirichlet: tag set is empty");
    const auto fixed = mesh.tagged_vertices(tags);
    DirichletMap d;
    d.full_to_free.assign(mesh.num_vertices(), 0);
    for (int v : fixed) d.full_to_free[static_cast<std::size_t>(v)] = -1;
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i)
        if (d.full_to_free[i] >= 0) {
            d.full_to_free[i] = static_cast<int>(d.free_to_full.size());
            d.free_to_full.push_back(static_cast<int>(i));
        }
    if (d.free_to_full.empty()) throw Error("apply_dirichlet: elimination empties the system");
    return d;
}

struct ReducedSystem {
    SpMat K;
    SpMat M;
    DirichletMap map;
};

inline ReducedSystem apply_dirichlet(const FemMatrices& fm, const Mesh& mesh, const std::vector<BoundaryTag>& tags) {
    DirichletMap d = dirichlet_map(mesh, tags);
    return {d.reduce(fm.K), d.reduce(fm.M), std::move(d)};
}

/// Sparse symmetric direct solve with a relative residual check.
class SparseSolver {
public:
    explicit SparseSolver(const SpMat& A) : A_(A) {
        ldlt_.compute(A_);
        if (ldlt_.info() != Eigen::Success) throw Error("solve_sparse: factorization failed");
    }
    Vec solve(const Vec& rhs, double tol = 1e-10) const {
        Vec x = ldlt_.solve(rhs);
        if (ldlt_.info() != Eigen::Success) throw Error("solve_sparse: solve failed");
        // One step of iterative refinement keeps the residual near round-off.
        Vec r = rhs - A_ * x;
        x += ldlt_.solve(r);
        r = rhs - A_ * x;
        const double nr = rhs.norm();
        if (r.norm() > tol * std::max(nr, 1e-300) && r.norm() > 1e-300)
            throw Error("solve_sparse: residual " + std::to_string(r.norm() / std::max(nr, 1e-300)) + " above tolerance");
        return x;
    }
    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const { return ldlt_.solve(rhs); }

private:
    SpMat A_;
    Eigen::SimplicialLDLT<SpMat> ldlt_;
};

inline Vec solve_sparse(const SpMat& A, const Vec& rhs) { return SparseSolver(A).solve(rhs); }

struct EigenPair {
    double value = 0.0;
    Vec vector;
    double mass_norm = 1.0;
    double residual = 0.0;  // ||K u - value M u||_2 for the M-normalised vector
};

struct EigenOptions {
    double tol = 1e-10;
    int max_iter = 400;
    int block = 0;  // subspace size; 0 -> max(2 count, count + 4)
    unsigned seed = 20240601u;
};

namespace detail {

/// Modified Gram-Schmidt in the M inner product, applied twice.
inline void m_orthonormalize(Eigen::MatrixXd& X, const SpMat& M) {
    for (int pass = 0; pass < 2; ++pass)
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            for (Eigen::Index i = 0; i < j; ++i) {
                const double c = X.col(i).dot(M * X.col(j));
                X.col(j) -= c * X.col(i);
            }
            const double nrm = std::sqrt(X.col(j).dot(M * X.col(j)));
            if (!(nrm > 0.0)) throw Error("eigs: degenerate subspace");
            X.col(j) /= nrm;
        }
}

inline bool factor_shifted(Eigen::SimplicialLDLT<SpMat>& ldlt, const SpMat& K, const SpMat& M, double tau) {
    SpMat S = K - tau * M;
    ldlt.compute(S);
    if (ldlt.info() != Eigen::Success) return false;
    const Vec D = ldlt.vectorD();
    const double dmax = D.cwiseAbs().maxCoeff();
    return D.cwiseAbs().minCoeff() > 1e-14 * dmax;
}

} // namespace detail

/// The `count` eigenpairs of K u = lambda M u closest to `target`, ascending.
inline std::vector<EigenPair> eigs_smallest_near(const SpMat& K, const SpMat& M, double target, int count,
                                                 const EigenOptions& opt = {}) {
    const Eigen::Index n = K.rows();
    if (count < 1 || count > n) throw Error("eigs_smallest_near: invalid count");
    Eigen::SimplicialLDLT<SpMat> ldlt;
    double tau = target;
    int attempts = 0;
    while (!detail::factor_shifted(ldlt, K, M, tau)) {
        if (++attempts > 8) throw Error("eigs_smallest_near: shifted factorization keeps failing");
        tau += 1e-6 * (1.0 + std::fabs(tau)) * attempts;
    }
    const Eigen::Index p = std::min<Eigen::Index>(n, opt.block > 0 ? opt.block : std::max(2 * count, count + 4));
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < n; ++i) X(i, j) = uni(rng);
    detail::m_orthonormalize(X, M);

    double worst = 0.0;
    for (int it = 0; it < opt.max_iter; ++it) {
        Eigen::MatrixXd Y = ldlt.solve(M * X);
        detail::m_orthonormalize(Y, M);
        const Eigen::MatrixXd A = Y.transpose() * (K * Y);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()));
        const Vec& theta = es.eigenvalues();
        std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
        for (Eigen::Index i = 0; i < p; ++i) order[static_cast<std::size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return std::fabs(theta[a] - tau) < std::fabs(theta[b] - tau);
        });
        Eigen::MatrixXd V(p, p);
        Vec th(p);
        for (Eigen::Index i = 0; i < p; ++i) {
            V.col(i) = es.eigenvectors().col(order[static_cast<std::size_t>(i)]);
            th[i] = theta[order[static_cast<std::size_t>(i)]];
        }
        X = Y * V;
        worst = 0.0;
        std::vector<EigenPair> out;
        for (int i = 0; i < count; ++i) {
            const Vec x = X.col(i);
            const double res = (K * x - th[i] * (M * x)).norm();
            worst = std::max(worst, res / (1.0 + std::fabs(th[i])));
            out.push_back({th[i], x, 1.0, res});
        }
        if (worst <= opt.tol) {
            std::sort(out.begin(), out.end(), [](const EigenPair& a, const EigenPair& b) { return a.value < b.value; });
            return out;
        }
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "eigs_smallest_near: no convergence after %d iterations (target %.6g, worst relative residual %.3e)",
                  opt.max_iter, target, worst);
    throw Error(buf);
}

/// Gamma0 nodes of a mesh ordered by x1, with the 1D boundary mass matrix.
struct Gamma0Nodes {
    std::vector<int> nodes;
    std::vector<double> x1;
};

inline Gamma0Nodes gamma0_nodes(const Mesh& mesh) {
    Gamma0Nodes g;
    g.nodes = mesh.tagged_vertices({BoundaryTag::Gamma0});
    if (g.nodes.size() < 2) throw Error("boundary_flux_gamma0: mesh has no Gamma0 edges");
    std::sort(g.nodes.begin(), g.nodes.end(), [&](int a, int b) {
        return mesh.vertices[static_cast<std::size_t>(a)].x < mesh.vertices[static_cast<std::size_t>(b)].x;
    });
    for (int v : g.nodes) g.x1.push_back(mesh.vertices[static_cast<std::size_t>(v)].x);
    return g;
}

/// Recovers d u / d x2 on Gamma0 from the weak form of -Delta u - lambda u = f.
/// `f` may be empty (zero).  With `require_zero_trace`, u must vanish on Gamma0.
inline BoundaryTrace boundary_flux_gamma0(const Mesh& mesh, const FemMatrices& fm, const Vec& u, double lambda,
                                          const Vec& f = Vec(), bool require_zero_trace = true) {
    const Gamma0Nodes g = gamma0_nodes(mesh);
    if (require_zero_trace)
        for (int v : g.nodes)
            if (std::fabs(u[v]) > 1e-10) throw Error("boundary_flux_gamma0: field does not vanish on Gamma0");
    Vec R = fm.K * u - lambda * (fm.M * u);
    if (f.size() > 0) R -= fm.M * f;
    const std::size_t m = g.nodes.size();
    // Tridiagonal boundary mass, solved by the Thomas algorithm.
    std::vector<double> diag(m, 0.0), off(m, 0.0), rhs(m);
    for (std::size_t i = 0; i + 1 < m; ++i) {
        const double len = g.x1[i + 1] - g.x1[i];
        diag[i] += len / 3.0;
        diag[i + 1] += len / 3.0;
        off[i] = len / 6.0;
    }
    for (std::size_t i = 0; i < m; ++i) rhs[i] = R[g.nodes[i]];
    std::vector<double> c(m, 0.0), d(m, 0.0);
    c[0] = off[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for (std::size_t i = 1; i < m; ++i) {
        const double den = diag[i] - off[i - 1] * c[i - 1];
        c[i] = (i + 1 < m) ? off[i] / den : 0.0;
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / den;
    }
    BoundaryTrace t{g.x1, std::vector<double>(m)};
    t.values[m - 1] = d[m - 1];
    for (std::size_t i = m - 1; i-- > 0;) t.values[i] = d[i] - c[i] * t.values[i + 1];
    // The residual carries the outward derivative, which is -d/dx2 on Gamma0.
    for (double& v : t.values) v = -v;
    return t;
}

/// Nodal interpolant of a function of (x1, x2).
template <class Fn>
Vec interpolate(const Mesh& mesh, Fn&& fn) {
    Vec v(static_cast<Eigen::Index>(mesh.num_vertices()));
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) v[static_cast<Eigen::Index>(i)] = fn(mesh.vertices[i].x, mesh.vertices[i].y);
    return v;
}

/// Quadrature on a triangle in barycentric coordinates; weights sum to 1.
struct TriangleRule {
    std::vector<std::array<double, 3>> l;
    std::vector<double> w;
};

/// Gauss-Legendre nodes and weights on [0, 1].
inline void gauss_legendre01(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(static_cast<std::size_t>(n), 0.0);
    w.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double z = std::cos(trig::pi * (i + 0.75) / (n + 0.5));
        double dp = 1.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = z;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::fabs(dz) < 1e-16) break;
        }
        x[static_cast<std::size_t>(i)] = 0.5 * (1.0 - z);
        w[static_cast<std::size_t>(i)] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
}

/// Collapsed (Duffy) Gauss product rule with n x n points, exact for
/// polynomials of degree 2n - 2 on the triangle.
inline const TriangleRule& triangle_rule(int n = 6) {
    static std::mutex mu;
    static std::map<int, TriangleRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<double> x, w;
    gauss_legendre01(n, x, w);
    TriangleRule r;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double u = x[static_cast<std::size_t>(i)], v = x[static_cast<std::size_t>(j)];
            // (u, v) in the square -> (s, t) = (u (1 - v), v) in the triangle.
            const double s = u * (1.0 - v), t = v;
            r.l.push_back({1.0 - s - t, s, t});
            r.w.push_back(2.0 * w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(j)] * (1.0 - v));
        }
    return cache.emplace(n, std::move(r)).first->second;
}

} // namespace oscbnd
