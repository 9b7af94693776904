#include <oscbnd/limit.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace oscbnd;

namespace {
const double pi = trig::pi;
const double pi2 = pi * pi;
} // namespace

TEST(Spectrum, LowestAndDoublePair) {
    const auto s = analytic_rectangle_spectrum(4, 4);
    EXPECT_NEAR(s.front().lambda, 0.25 * pi2, 1e-12);
    EXPECT_EQ(s.front().k, 0);
    EXPECT_EQ(s.front().j, 0);
    int hits = 0;
    for (const auto& e : s)
        if (std::fabs(e.lambda - kLambda0) < 1e-9) {
            ++hits;
            EXPECT_TRUE((e.k == 0 && e.j == 2) || (e.k == 2 && e.j == 1));
        }
    EXPECT_EQ(hits, 2);
    EXPECT_NEAR(kLambda0, 61.68502750680849, 1e-10);
}

TEST(Spectrum, ClosedFormsAreNormalised) {
    for (auto [k, j] : {std::pair{0, 0}, std::pair{0, 2}, std::pair{2, 1}, std::pair{3, 4}}) {
        const auto f = rectangle_eigenfunction_modal(k, j);
        EXPECT_NEAR(inner(f, f), 1.0, 1e-12);
        EXPECT_NEAR(f(0.13, 0.37), rectangle_eigenfunction(k, j, 0.13, 0.37), 1e-12);
    }
    const auto a = rectangle_eigenfunction_modal(0, 2), b = rectangle_eigenfunction_modal(2, 1);
    EXPECT_NEAR(inner(a, b), 0.0, 1e-14);
    EXPECT_NEAR(grad_norm2(a), kLambda0, 1e-9);
    EXPECT_NEAR(grad_norm2(b), kLambda0, 1e-9);
}

TEST(LimitFem, DoublePairAndSimpleBottom) {
    const LimitMesh lm(1.0 / 32.0);
    auto e = solve_limit_eigen(lm, kLambda0, 4);
    ASSERT_EQ(e.size(), 4u);
    std::vector<double> v;
    for (auto& p : e) v.push_back(p.value);
    const auto [a, b] = find_double_cluster(v, 10.0 / 1024.0);
    EXPECT_NEAR(v[static_cast<std::size_t>(a)], kLambda0, 0.01 * kLambda0);
    EXPECT_NEAR(v[static_cast<std::size_t>(b)], kLambda0, 0.01 * kLambda0);
    for (int i = 0; i < 4; ++i)
        if (i != a && i != b) {
            // neighbours (2,0) at 4.25 pi^2 and (1,2) at 7.25 pi^2
            const double ex = v[static_cast<std::size_t>(i)] < kLambda0 ? 4.25 * pi2 : 7.25 * pi2;
            EXPECT_NEAR(v[static_cast<std::size_t>(i)], ex, 0.01 * ex);
        }

    const auto g = gamma0_nodes(lm.mesh);
    for (auto& p : e)
        for (int id : g.nodes) EXPECT_EQ(p.vector[id], 0.0);

    auto low = solve_limit_eigen(lm, 2.0, 1);
    EXPECT_NEAR(low[0].value, 0.25 * pi2, 1e-3 * 0.25 * pi2);
    EXPECT_THROW(find_double_cluster({low[0].value}, 1e-6), Error);
}

TEST(LimitFem, CoarseMeshCannotSeparateTheCluster) {
    FemClusterOptions o;
    o.h = 1.0 / 16.0;
    EXPECT_THROW(fem_cluster(o), Error);
}

TEST(LimitFem, ClusterErrors) {
    EXPECT_THROW(find_double_cluster({1.0, 5.0, 9.0}, 1e-6), Error);
    EXPECT_THROW(find_double_cluster({1.0, 1.0, 1.0, 9.0}, 1e-6), Error);
    EXPECT_THROW(find_double_cluster({1.0, 1.0, 5.0, 5.0}, 1e-6), Error);
    const auto p = find_double_cluster({1.0, 5.0, 5.0 + 1e-7, 9.0}, 1e-6);
    EXPECT_EQ(p.first, 1);
    EXPECT_EQ(p.second, 2);
    try {
        find_double_cluster({2.0}, 1e-6);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("no double cluster"), std::string::npos);
    }
}

TEST(Diagonalize, AnalyticPairIsAlreadyDiagonal) {
    const auto c = diagonalize_boundary_form(analytic_cluster());
    EXPECT_NEAR(c.G(0, 0), 12.5 * pi2, 1e-10);
    EXPECT_NEAR(c.G(1, 1), 4.5 * pi2, 1e-10);
    EXPECT_NEAR(c.G(0, 1), 0.0, 1e-12);
    EXPECT_TRUE(c.rotation.isApprox(Eigen::Matrix2d::Identity(), 1e-14));
    EXPECT_NEAR(c.rotation_angle, 0.0, 1e-15);
    EXPECT_NEAR(c.traces[0].coefficient(0), std::sqrt(2.0) * 2.5 * pi, 1e-12);
    EXPECT_NEAR(c.traces[1].coefficient(2), 3.0 * pi, 1e-12);
    EXPECT_GT(c.nerav_gap, 0.4);
}

TEST(Diagonalize, RotationInvariance) {
    const auto base = analytic_cluster();
    const auto ref = diagonalize_boundary_form(base);
    for (double ang : {pi / 4.0, -pi / 4.0, 0.3, -1.2, 2.0, pi / 2.0}) {
        const auto r = rotate_cluster(base, ang);
        const double trace_before = r.G.trace();
        const auto d = diagonalize_boundary_form(r);
        EXPECT_NEAR(d.G(0, 0), ref.G(0, 0), 1e-9) << ang;
        EXPECT_NEAR(d.G(1, 1), ref.G(1, 1), 1e-9) << ang;
        EXPECT_NEAR(d.G.trace(), trace_before, 1e-12 * trace_before);
        EXPECT_LE(std::fabs(d.G(0, 1)), 1e-8 * d.G(0, 0));
        EXPECT_LE(std::fabs(d.rotation_angle), pi / 4.0 + 1e-12);
        // Same branches with the same signs as the unrotated basis.
        EXPECT_NEAR(inner(d.modal[0], ref.modal[0]), 1.0, 1e-10);
        EXPECT_NEAR(inner(d.modal[1], ref.modal[1]), 1.0, 1e-10);
    }
    const auto d45 = diagonalize_boundary_form(rotate_cluster(base, pi / 4.0));
    EXPECT_NEAR(std::fabs(d45.rotation_angle), pi / 4.0, 1e-9);
}

TEST(Diagonalize, DegenerateFormIsRejected) {
    auto c = analytic_cluster();
    // Equal boundary energies: both traces constant-free with the same norm.
    c.traces = {CosineSeries::single(1, 2.0), CosineSeries::single(3, 2.0)};
    try {
        diagonalize_boundary_form(c);
        FAIL();
    } catch (const NeravViolated& e) {
        EXPECT_NE(std::string(e.what()).find("nerav"), std::string::npos);
    }
}

TEST(Diagonalize, FemClusterMatchesAnalytic) {
    FemClusterOptions o;
    o.h = 1.0 / 32.0;
    const auto c1 = diagonalize_boundary_form(fem_cluster(o));
    o.h = 1.0 / 64.0;
    const auto c2 = diagonalize_boundary_form(fem_cluster(o));
    const double e1 = std::fabs(c1.lambda0 - kLambda0), e2 = std::fabs(c2.lambda0 - kLambda0);
    EXPECT_NEAR(std::log2(e1 / e2), 2.0, 0.2);
    for (int b = 0; b < 2; ++b) {
        const double ex = b == 0 ? 12.5 * pi2 : 4.5 * pi2;
        const double g1 = std::fabs(c1.G(b, b) - ex), g2 = std::fabs(c2.G(b, b) - ex);
        EXPECT_LT(g2 / ex, 0.02);
        EXPECT_NEAR(std::log2(g1 / g2), 2.0, 0.3) << b;
    }
    EXPECT_LE(std::fabs(c2.G(0, 1)), 1e-8 * c2.G(0, 0));
    // M-orthonormal basis
    const auto& M = c2.lm->fm.M;
    EXPECT_NEAR(c2.nodal[0].dot(M * c2.nodal[0]), 1.0, 1e-10);
    EXPECT_NEAR(c2.nodal[0].dot(M * c2.nodal[1]), 0.0, 1e-10);
    EXPECT_GT(c2.traces[0].coefficient(0), 0.0);
    EXPECT_GT(c2.traces[1].coefficient(2), 0.0);
}
