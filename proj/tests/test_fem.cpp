#include <oscbnd/fem.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace oscbnd;

namespace {
const double kPi = trig::pi;
const double kLambda0 = 6.25 * kPi * kPi;

Mesh single_triangle() {
    Mesh m;
    m.vertices = {{0, 0}, {1, 0}, {0, 1}};
    m.triangles = {{0, 1, 2}};
    m.boundary_edges = {{0, 1, BoundaryTag::Gamma0}, {1, 2, BoundaryTag::Gamma1}, {2, 0, BoundaryTag::Gamma2eps}};
    return m;
}

Eigen::MatrixXd dense(const SpMat& A) { return Eigen::MatrixXd(A); }
} // namespace

TEST(Fem, ReferenceTriangleStiffness) {
    const auto fm = assemble(single_triangle());
    Eigen::Matrix3d expected;
    expected << 2, -1, -1, -1, 1, 0, -1, 0, 1;
    expected *= 0.5;
    EXPECT_LE((dense(fm.K) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Fem, RowSumsAndArea) {
    const Profile p = make_profile(ProfileKind::cosine, {1.0, 0.4});
    for (const Mesh& m : {mesh_limit_domain(0.5), mesh_limit_domain(0.1), mesh_perturbed_domain(p, EpsilonParam(2), MeshOptions{})}) {
        const auto fm = assemble(m);
        const Vec one = Vec::Ones(fm.K.rows());
        EXPECT_LE((fm.K * one).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_NEAR(one.dot(fm.M * one), m.total_area(), 1e-12);
        const SpMat asym = fm.K - SpMat(fm.K.transpose());
        double amax = 0;
        for (int k = 0; k < asym.outerSize(); ++k)
            for (SpMat::InnerIterator it(asym, k); it; ++it) amax = std::max(amax, std::fabs(it.value()));
        EXPECT_EQ(amax, 0.0);
    }
}

TEST(Fem, DirichletCounting) {
    const Profile flat = make_profile(ProfileKind::flat, {1.0});
    const Mesh m = mesh_strip(flat, 4.0, StripOptions{});
    const auto fm = assemble(m);
    const auto rs = apply_dirichlet(fm, m, {BoundaryTag::StripBottom});
    EXPECT_EQ(static_cast<std::size_t>(rs.K.rows()), m.num_vertices() - m.tagged_vertices({BoundaryTag::StripBottom}).size());
    const auto e = eigs_smallest_near(rs.K, rs.M, 0.0, 1);
    EXPECT_GT(e[0].value, 0.0);
    const Mesh tri = single_triangle();
    EXPECT_THROW(apply_dirichlet(assemble(tri), tri, {BoundaryTag::Gamma0, BoundaryTag::Gamma1}), Error);
    EXPECT_THROW(apply_dirichlet(assemble(tri), tri, {}), Error);
}

TEST(Fem, SolveMassAndRandomSpd) {
    const Mesh tri = single_triangle();
    const auto fm = assemble(tri);
    const Vec e = Vec::Ones(3);
    EXPECT_LE((solve_sparse(fm.M, fm.M * e) - e).norm(), 1e-12);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    Eigen::MatrixXd B(5, 5);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) B(i, j) = g(rng);
    const Eigen::MatrixXd A = B * B.transpose() + 5 * Eigen::MatrixXd::Identity(5, 5);
    const SpMat As = A.sparseView();
    Vec rhs(5);
    for (int i = 0; i < 5; ++i) rhs[i] = g(rng);
    const Vec x = solve_sparse(As, rhs);
    EXPECT_LE((A * x - rhs).norm(), 1e-10 * rhs.norm());
}

TEST(Fem, PoissonManufacturedEnergyRate) {
    // -Delta u = 0 for u = x1 x2 ... use u = sin(pi x2) cos(pi (x1+1/2)), -Delta u = 2 pi^2 u.
    auto u = [](double x, double y) { return std::sin(kPi * y) * std::cos(kPi * (x + 0.5)); };
    std::vector<double> hs, errs;
    for (int n : {8, 16, 32, 64}) {
        const Mesh m = mesh_limit_domain(1.0 / n);
        const auto fm = assemble(m);
        const auto d = dirichlet_map(m, {BoundaryTag::Gamma0, BoundaryTag::Gamma1});
        const Vec f = 2 * kPi * kPi * interpolate(m, u);
        const Vec uh = d.expand(solve_sparse(d.reduce(fm.K), d.restrict(fm.M * f)));
        const Vec ui = interpolate(m, u);
        const Vec diff = uh - ui;
        hs.push_back(1.0 / n);
        // Energy norm of u - u_h is dominated by the interpolation error, which is O(h).
        const double ex = 0.5 * kPi * kPi;  // |grad u|^2 integrated
        const double eh = uh.dot(fm.K * uh);
        errs.push_back(std::sqrt(std::fabs(ex - eh) + diff.dot(fm.K * diff)));
    }
    const double slope = std::log(errs[3] / errs[0]) / std::log(hs[3] / hs[0]);
    EXPECT_NEAR(slope, 1.0, 0.15);
}

TEST(Fem, RectangleDoubleEigenvalue) {
    const Mesh m = mesh_limit_domain(1.0 / 32);
    const auto fm = assemble(m);
    const auto rs = apply_dirichlet(fm, m, {BoundaryTag::Gamma0});
    const auto e = eigs_smallest_near(rs.K, rs.M, kLambda0, 2);
    ASSERT_EQ(e.size(), 2u);
    for (const auto& ep : e) {
        EXPECT_GT(ep.value, kLambda0);
        EXPECT_LT(ep.value - kLambda0, 0.02 * kLambda0);
        EXPECT_LE(ep.residual, 1e-10 * (1 + ep.value));
    }
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            EXPECT_NEAR(e[static_cast<std::size_t>(i)].vector.dot(rs.M * e[static_cast<std::size_t>(j)].vector), i == j ? 1.0 : 0.0, 1e-10);
    const auto low = eigs_smallest_near(rs.K, rs.M, 0.0, 1);
    EXPECT_NEAR(low[0].value / (0.25 * kPi * kPi), 1.0, 2e-3);
}

TEST(Fem, UpperBoundsForFirstModes) {
    const Mesh m = mesh_limit_domain(1.0 / 16);
    const auto fm = assemble(m);
    const auto rs = apply_dirichlet(fm, m, {BoundaryTag::Gamma0});
    std::vector<double> exact;
    for (int k = 0; k < 5; ++k)
        for (int j = 0; j < 5; ++j) exact.push_back(kPi * kPi * (k * k + (j + 0.5) * (j + 0.5)));
    std::sort(exact.begin(), exact.end());
    const auto e = eigs_smallest_near(rs.K, rs.M, 0.0, 6);
    for (int i = 0; i < 6; ++i) EXPECT_GE(e[static_cast<std::size_t>(i)].value, exact[static_cast<std::size_t>(i)]);
}

TEST(Fem, FluxRecoveryOfAnalyticEigenfunctions) {
    for (int n : {16, 32}) {
        const Mesh m = mesh_limit_domain(1.0 / n);
        const auto fm = assemble(m);
        const Vec u1 = interpolate(m, [](double, double y) { return std::sqrt(2.0) * std::sin(2.5 * kPi * y); });
        const auto t1 = boundary_flux_gamma0(m, fm, u1, kLambda0);
        double err = 0;
        for (double v : t1.values) err = std::max(err, std::fabs(v - std::sqrt(2.0) * 2.5 * kPi));
        EXPECT_LT(err, 120.0 / (n * n)) << n;
        const Vec u2 = interpolate(m, [](double x, double y) { return 2 * std::cos(2 * kPi * (x + 0.5)) * std::sin(1.5 * kPi * y); });
        const auto t2 = boundary_flux_gamma0(m, fm, u2, kLambda0);
        err = 0;
        for (std::size_t i = 0; i < t2.nodes.size(); ++i)
            err = std::max(err, std::fabs(t2.values[i] - 3 * kPi * std::cos(2 * kPi * (t2.nodes[i] + 0.5))));
        EXPECT_LT(err, 240.0 / (n * n)) << n;
    }
    const Mesh m = mesh_limit_domain(0.125);
    const auto fm = assemble(m);
    const auto z = boundary_flux_gamma0(m, fm, Vec::Zero(fm.K.rows()), kLambda0);
    for (double v : z.values) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(boundary_flux_gamma0(m, fm, Vec::Ones(fm.K.rows()), kLambda0), Error);
}

TEST(Fem, FluxRecoveryConsistentWithConstantExtension) {
    const Mesh m = mesh_limit_domain(1.0 / 16);
    const auto fm = assemble(m);
    const Vec u = interpolate(m, [](double x, double y) { return y * (1.3 - y) * (1 + 0.3 * std::cos(kPi * (x + 0.5))); });
    const auto t = boundary_flux_gamma0(m, fm, u, 3.0);
    // Extension of the boundary constant 1: the hat functions of all Gamma0 nodes.
    Vec ext = Vec::Zero(fm.K.rows());
    for (int v : m.tagged_vertices({BoundaryTag::Gamma0})) ext[v] = 1.0;
    const double weak = ext.dot(fm.K * u - 3.0 * (fm.M * u));
    double integral = 0;
    for (std::size_t i = 0; i + 1 < t.nodes.size(); ++i) integral += 0.5 * (t.values[i] + t.values[i + 1]) * (t.nodes[i + 1] - t.nodes[i]);
    EXPECT_NEAR(-integral, weak, 1e-10);
}
