#include <oscbnd/composite.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <memory>

using namespace oscbnd;

namespace {

const double pi = trig::pi;

const EigenCluster& cluster() {
    static const EigenCluster c = diagonalize_boundary_form(analytic_cluster());
    return c;
}

const Profile& cosine() {
    static const Profile p = make_profile(ProfileKind::cosine, {1.0, 0.4});
    return p;
}

struct Built {
    std::shared_ptr<const CellSolution> cells;
    std::shared_ptr<const CorrectorSet> set;
};

Built build(const Profile& p, int N, const MeshOptions& mo = {}) {
    const EpsilonParam e(N);
    auto cells = std::make_shared<const CellSolution>(solve_cells(p, 8.0, matching_strip_options(e, mo, 8.0)));
    auto set = std::make_shared<const CorrectorSet>(run_correctors(cluster(), cells->C, cells->C_I, cells->C_II));
    return {cells, set};
}

double slope(const std::vector<double>& eps, const std::vector<double>& y) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double lx = std::log(eps[i]), ly = std::log(y[i]);
        sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace

TEST(Prediction, SeriesAndOrders) {
    const auto set = run_correctors(cluster(), 1.0, 0.0, -1.0 / 3.0);
    EXPECT_DOUBLE_EQ(predicted_lambda(set, 1, 0.3, 0), kLambda0);
    EXPECT_NEAR(predicted_lambda(set, 1, 1.0 / 7.0, 1), 44.060, 1e-3);
    for (int k = 0; k <= 3; ++k) EXPECT_DOUBLE_EQ(predicted_lambda(set, 2, 0.0, k), kLambda0);
    EXPECT_THROW(predicted_lambda(set, 1, 0.1, 4), Error);
    EXPECT_THROW(predicted_lambda(set, 1, 0.1, -1), Error);
    // lambda1 < 0: the prediction increases as eps decreases on a small-eps grid
    double prev = -1e300;
    for (double e = 0.05; e > 0.001; e *= 0.8) {
        const double v = predicted_lambda(set, 1, e, 3);
        EXPECT_GT(v, prev);
        prev = v;
    }
}

TEST(CutOff, SupportAndSmoothness) {
    EXPECT_EQ(CutOff::value(0.3), 0.0);
    EXPECT_EQ(CutOff::value(1.0), 0.0);
    EXPECT_EQ(CutOff::value(2.0), 1.0);
    EXPECT_EQ(CutOff::value(3.5), 1.0);
    for (double s : {1.0, 2.0}) {
        EXPECT_NEAR(CutOff::d1(s), 0.0, 1e-14);
        EXPECT_NEAR(CutOff::d2(s), 0.0, 1e-14);
    }
    for (double s = 1.0; s <= 2.0; s += 0.125) {
        EXPECT_GE(CutOff::value(s), 0.0);
        EXPECT_LE(CutOff::value(s), 1.0);
    }
}

TEST(Composite, FlatInnerTermIsLinear) {
    const double d = 1.0;
    const auto p = make_profile(ProfileKind::flat, {d});
    const auto b = build(p, 3);
    const CompositeField f(b.set, b.cells, p, 1, EpsilonParam(3).eps(), 0.5);
    const double a = std::sqrt(2.0) * 2.5 * pi;
    for (double xi2 : {-0.5, 0.0, 1.3, 4.0, 7.5, 11.0})
        for (double xi1 : {-0.4, 0.1, 2.7}) EXPECT_NEAR(f.inner_v(1, xi1, xi2, 0.2), a * (xi2 + d), 1e-8 * a * (1.0 + std::fabs(xi2)));
    // constant trace: v2 reduces to alpha11 X
    const auto& r = (*b.set)[1];
    const double a11 = r.alpha11(cluster().traces[1])(0.2);
    EXPECT_NEAR(f.inner_v(2, 0.3, 2.0, 0.2), a11 * (2.0 + d), 1e-8 * (1.0 + std::fabs(a11)));
    EXPECT_THROW(f.inner_v(4, 0.0, 1.0, 0.0), Error);
}

TEST(Composite, InnerMatchesFarFieldAtMidStrip) {
    const auto b = build(cosine(), 5);
    for (int l = 1; l <= 2; ++l) {
        const CompositeField f(b.set, b.cells, cosine(), l, EpsilonParam(5).eps(), 0.5);
        const auto& r = (*b.set)[l];
        double worst = 0.0, scale = 0.0;
        for (int i = 0; i <= 32; ++i) {
            const double xi1 = -0.5 + i / 32.0, x1 = 0.1;
            const double v1 = f.inner_v(1, xi1, 4.0, x1);
            worst = std::max(worst, std::fabs(v1 - (r.alpha01(x1) * 4.0 + r.alpha10(x1))));
            scale = std::max(scale, std::fabs(r.alpha01(x1)));
        }
        EXPECT_LE(worst, scale * (std::exp(-6.0 * 4.0) + 1e-8)) << l;
    }
}

TEST(Composite, OuterRegionAndWall) {
    const int N = 5;
    const double eps = EpsilonParam(N).eps();
    const auto b = build(cosine(), N);
    for (int l = 1; l <= 2; ++l) {
        const CompositeField f(b.set, b.cells, cosine(), l, eps, 0.5);
        // deep inside: outer partial sum
        const ModalField U = cluster().modal[static_cast<std::size_t>(l - 1)] + eps * b.set->u1(l) + (eps * eps) * b.set->u2(l);
        for (double x1 : {-0.31, 0.0, 0.27})
            for (double x2 : {0.7, 0.95}) EXPECT_NEAR(f(x1, x2), U(x1, x2), 1e-10);
        // On the oscillating wall: round-off at the strip columns, chord sag in between.
        const int cols = 2 * MeshOptions{}.cells_per_half_period;
        double at_nodes = 0.0, between = 0.0, amp = 0.0;
        for (int i = 0; i <= cols * (2 * N + 1); ++i) {
            const double x1 = -0.5 + eps * i / cols;
            at_nodes = std::max(at_nodes, std::fabs(f(x1, f.wall(x1))));
            const double xm = std::min(0.5, x1 + 0.37 * eps / cols);
            between = std::max(between, std::fabs(f(xm, f.wall(xm))));
            amp = std::max(amp, std::fabs(cluster().traces[static_cast<std::size_t>(l - 1)](x1)));
        }
        const double sag = 4.0 * pi * pi * 0.4 / (8.0 * cols * cols);  // h^2 max|F''| / 8 in cell units
        EXPECT_LE(at_nodes, 1e-10) << l;
        EXPECT_LE(between, 2.0 * eps * amp * sag) << l;
        EXPECT_THROW(f(0.0, 1.1), Error);
        EXPECT_THROW(f(0.7, 0.5), Error);
        EXPECT_THROW(f(0.0, f.wall(0.0) - 0.2 * eps), Error);
    }
    EXPECT_THROW(CompositeField(b.set, b.cells, cosine(), 1, eps, 1.0), Error);
    EXPECT_THROW(CompositeField(b.set, b.cells, cosine(), 3, eps, 0.5), Error);
}

TEST(Composite, GradientMatchesFiniteDifferences) {
    const int N = 3;
    const double eps = EpsilonParam(N).eps();
    const auto b = build(cosine(), N);
    const CompositeField f(b.set, b.cells, cosine(), 2, eps, 0.5);
    // points in the cut-off zone, away from mesh edges in xi
    const double h = 1e-7;
    for (double x1 : {-0.2013, 0.1172})
        for (double x2 : {0.41, 0.6}) {
            const auto v = f.eval(x1, x2);
            const double fx = (f(x1 + h, x2) - f(x1 - h, x2)) / (2 * h);
            const double fy = (f(x1, x2 + h) - f(x1, x2 - h)) / (2 * h);
            EXPECT_NEAR(v.ux, fx, 1e-4 * (1.0 + std::fabs(fx)));
            EXPECT_NEAR(v.uy, fy, 1e-4 * (1.0 + std::fabs(fy)));
        }
}

TEST(Composite, OverlapMismatchDecreases) {
    std::array<double, 2> prev{1e300, 1e300};
    for (int N : {3, 5, 9}) {
        const auto b = build(cosine(), N);
        for (int l = 1; l <= 2; ++l) {
            const CompositeField f(b.set, b.cells, cosine(), l, EpsilonParam(N).eps(), 0.5);
            const double m = f.overlap_mismatch();
            EXPECT_LT(m, prev[static_cast<std::size_t>(l - 1)]) << "N " << N << " branch " << l;
            prev[static_cast<std::size_t>(l - 1)] = m;
        }
    }
}

TEST(Composite, NormalizationDeviationDecreases) {
    CompositeOptions o;
    o.beta = 0.8;
    std::array<double, 2> prev{1e300, 1e300};
    for (int N : {3, 5, 9}) {
        const auto r = evaluate_composite(cosine(), cluster(), N, o);
        for (int l = 0; l < 2; ++l) {
            const double dev = std::fabs(r.branch[static_cast<std::size_t>(l)].l2 - 1.0);
            EXPECT_LT(dev, prev[static_cast<std::size_t>(l)]) << "N " << N << " branch " << l + 1;
            prev[static_cast<std::size_t>(l)] = dev;
        }
    }
}

TEST(Residual, ExactDiscreteEigenpairIsResidualFree) {
    const auto mesh = mesh_perturbed_domain(cosine(), EpsilonParam(3), MeshOptions{});
    const auto fm = assemble(mesh);
    const auto red = dirichlet_map(mesh, {BoundaryTag::GammaEps});
    const auto pairs = eigs_smallest_near(red.reduce(fm.K), red.reduce(fm.M), 40.0, 2);
    for (const auto& e : pairs) {
        const Vec u = red.expand(e.vector);
        EXPECT_LE(discrete_residual_norm(mesh, fm, u, e.value), 1e-8 * (1.0 + e.value));
        EXPECT_GT(discrete_residual_norm(mesh, fm, u, e.value + 1.0), 1e-2);
    }
}

TEST(Residual, RateAtHalfBeta) {
    std::vector<double> eps;
    std::array<std::vector<double>, 2> res;
    for (int N : {3, 5, 7, 9, 11}) {
        const auto r = evaluate_composite(cosine(), cluster(), N);
        eps.push_back(r.eps);
        for (int l = 0; l < 2; ++l) res[static_cast<std::size_t>(l)].push_back(r.branch[static_cast<std::size_t>(l)].residual);
    }
    for (int l = 0; l < 2; ++l) EXPECT_GE(slope(eps, res[static_cast<std::size_t>(l)]), 1.05) << "branch " << l + 1;
}

TEST(Residual, FlatProfileRate) {
    const auto p = make_profile(ProfileKind::flat, {1.0});
    CompositeOptions o;
    o.beta = 0.8;
    std::vector<double> eps;
    std::array<std::vector<double>, 2> res;
    for (int N : {3, 5, 7, 9, 11}) {
        const auto r = evaluate_composite(p, cluster(), N, o);
        EXPECT_NEAR(r.C, 1.0, 1e-8);
        eps.push_back(r.eps);
        for (int l = 0; l < 2; ++l) res[static_cast<std::size_t>(l)].push_back(r.branch[static_cast<std::size_t>(l)].residual);
    }
    for (int l = 0; l < 2; ++l) EXPECT_GE(slope(eps, res[static_cast<std::size_t>(l)]), 1.8) << "branch " << l + 1;
}

TEST(Residual, MatchingStripReproducesPerturbedRows) {
    const EpsilonParam e(5);
    const MeshOptions mo;
    const auto so = matching_strip_options(e, mo, 8.0);
    ASSERT_FALSE(so.rows_above.empty());
    EXPECT_DOUBLE_EQ(so.rows_above.front(), 0.0);
    EXPECT_GE(so.rows_above.back(), 8.0);
    const auto rows = perturbed_rows_above(e, mo);
    for (std::size_t i = 0; i + 1 < so.rows_above.size() && i < rows.size(); ++i) EXPECT_NEAR(so.rows_above[i], rows[i] / e.eps(), 1e-12);
}
