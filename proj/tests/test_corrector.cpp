#include <oscbnd/corrector.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace oscbnd;

namespace {

const double pi = trig::pi;
const double pi2 = pi * pi;

const EigenCluster& cluster() {
    static const EigenCluster c = diagonalize_boundary_form(analytic_cluster());
    return c;
}

// Constants of the cosine profile d = 1, a = 0.4 (extrapolated cell solve).
constexpr double kC = 0.732887, kCI = -0.00038027, kCII = -0.132738;

ModalField zero_field() { return ModalField::from_mode(0, [](double) { return 0.0; }); }

} // namespace

TEST(Corrector, Lambda1ClosedForms) {
    const auto l = compute_lambda1(cluster(), 1.0);
    EXPECT_NEAR(l[0], -12.5 * pi2, 1e-10);
    EXPECT_NEAR(l[1], -4.5 * pi2, 1e-10);
    EXPECT_NEAR(l[0], -123.370, 1e-3);
    EXPECT_NEAR(l[1], -44.413, 1e-3);
    const auto z = compute_lambda1(cluster(), 0.0);
    EXPECT_EQ(z[0], 0.0);
    EXPECT_EQ(z[1], 0.0);
    const auto d = compute_lambda1(cluster(), 2.0);
    EXPECT_DOUBLE_EQ(d[0], 2.0 * l[0]);
    EXPECT_DOUBLE_EQ(d[1], 2.0 * l[1]);
    EXPECT_THROW(compute_lambda1(analytic_cluster(), 1.0), Error);
}

TEST(Corrector, ZeroDataGivesZero) {
    const auto s = solve_constrained_helmholtz(zero_field(), CosineSeries(), kLambda0, cluster());
    for (int k = 0; k <= s.u.max_mode(); ++k)
        if (s.u.has_mode(k)) EXPECT_LE(s.u.mode(k).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(s.residues[0], 0.0);
    EXPECT_EQ(s.residues[1], 0.0);
}

TEST(Corrector, IncompatibleDataIsRejected) {
    const auto& c = cluster();
    try {
        solve_constrained_helmholtz(c.modal[0], CosineSeries(), kLambda0, c);
        FAIL();
    } catch (const SolvabilityViolated& e) {
        EXPECT_NEAR(e.residue1, 1.0, 1e-10);
        EXPECT_NEAR(e.residue2, 0.0, 1e-10);
    }
}

TEST(Corrector, ModalSolveSatisfiesTheProblem) {
    // Compatible data on mode 2 with nontrivial boundary values.
    const auto& c = cluster();
    const double lam1 = -1.0 * c.G(1, 1);
    const auto s = solve_constrained_helmholtz(lam1 * c.modal[1], 1.0 * c.traces[1], kLambda0, c);
    EXPECT_LE(std::fabs(s.residues[0]), 1e-10);
    EXPECT_LE(std::fabs(s.residues[1]), 1e-10);
    EXPECT_NEAR(inner(s.u, c.modal[0]), 0.0, 1e-12);
    EXPECT_NEAR(inner(s.u, c.modal[1]), 0.0, 1e-12);
    EXPECT_NEAR(s.u(0.2, 0.0), c.traces[1](0.2), 1e-12);
    // Closed form of the mode-2 profile: f'' + (lambda0 - 4 pi^2) f = -lam1 phi, f(0) = 3 pi, f'(1) = 0.
    // Particular solution ~ x sin-type resonance; check the ODE by finite differences.
    const double y = 0.4, h = 1e-4;
    auto f = [&](double yy) { return s.u(-0.5, yy); };  // cos(0) = 1 at x1 = -1/2
    const double lhs = -(f(y + h) - 2 * f(y) + f(y - h)) / (h * h) + (4 * pi2 - kLambda0) * f(y);
    const double phi = c.modal[1](-0.5, y);
    EXPECT_NEAR(lhs + s.multipliers[1] * phi, lam1 * phi, 1e-4 * std::fabs(lam1));
    EXPECT_NEAR(s.multipliers[1], 0.0, 1e-9);
}

TEST(Corrector, FlatProfileMatchesShiftedRectangle) {
    // Flat d: cell constants C = d, C_I = 0, C_II = -d^3/3, and
    // lambda = k^2 pi^2 + mu / (1 + eps d)^2 with mu = (j + 1/2)^2 pi^2.
    for (double d : {1.0, 0.5}) {
        const auto set = run_correctors(cluster(), d, 0.0, -d * d * d / 3.0);
        const double mu[2] = {6.25 * pi2, 2.25 * pi2};
        for (int l = 1; l <= 2; ++l) {
            const auto& r = set[l];
            const double m = mu[l - 1];
            EXPECT_NEAR(r.lambda1, -2.0 * d * m, 1e-8) << l;
            EXPECT_NEAR(r.lambda2, 3.0 * d * d * m, 1e-7) << l;
            EXPECT_NEAR(r.lambda3, -4.0 * d * d * d * m, 1e-6) << l;
            EXPECT_NEAR(r.kappa1, 0.0, 1e-10);
            EXPECT_NEAR(r.kappa2, 0.0, 1e-10);
        }
        EXPECT_LE(set.max_residue, 1e-8);
    }
}

TEST(Corrector, CosinePipelineInvariants) {
    const auto set = run_correctors(cluster(), kC, kCI, kCII);
    EXPECT_LE(set.max_residue, 1e-8);
    const auto& c = cluster();
    for (int l = 1; l <= 2; ++l) {
        const auto& r = set[l];
        EXPECT_EQ(r.other, 3 - l);
        for (const ModalField* u : {&r.u1_tilde, &r.u2_tilde})
            for (int b = 0; b < 2; ++b) EXPECT_NEAR(inner(*u, c.modal[static_cast<std::size_t>(b)]), 0.0, 1e-9);
        for (double x : {-0.5, -0.2, 0.1, 0.45}) EXPECT_NEAR(r.alpha10(x), kC * r.alpha01(x), 1e-10);
        EXPECT_LT(r.lambda1, 0.0);
    }
    // Branch 1 stays in the k = 0 mode.
    const auto& r1 = set[1];
    for (int k = 1; k <= r1.alpha11_tilde.max_mode(); ++k) EXPECT_LE(std::fabs(r1.alpha11_tilde.coefficient(k)), 1e-8);
    EXPECT_NEAR(r1.kappa1, 0.0, 1e-8);
    // Branch 2: second-derivative integral in closed form.
    const auto a = set[2].alpha01;
    EXPECT_NEAR(integrate_product(a.second_derivative(), a), -4.0 * pi2 * 4.5 * pi2, 1e-8);
    // Branch 1 has a constant trace, so lambda3 reduces to two terms.
    const double l3 = -kC * integrate_product(r1.alpha21_tilde, r1.alpha01) + kLambda0 * kCII * 12.5 * pi2;
    EXPECT_NEAR(r1.lambda3, l3, 1e-8 * std::fabs(l3));
    EXPECT_NEAR(set[1].lambda1, -kC * 12.5 * pi2, 1e-10);
    EXPECT_NEAR(set[2].lambda1, -kC * 4.5 * pi2, 1e-10);
}

TEST(Corrector, ZeroConstantsGiveZeroChain) {
    const auto set = run_correctors(cluster(), 0.0, 0.0, 0.0);
    for (int l = 1; l <= 2; ++l) {
        const auto& r = set[l];
        EXPECT_EQ(r.lambda1, 0.0);
        EXPECT_NEAR(r.lambda2, 0.0, 1e-14);
        EXPECT_NEAR(r.lambda3, 0.0, 1e-14);
        EXPECT_NEAR(r.kappa1, 0.0, 1e-14);
        EXPECT_NEAR(r.kappa2, 0.0, 1e-14);
        EXPECT_LE(std::sqrt(inner(r.u1_tilde, r.u1_tilde)), 1e-14);
    }
}

TEST(Corrector, QuadraticScalingOfLambda2) {
    const auto a = run_correctors(cluster(), kC, kCI, kCII);
    const auto b = run_correctors(cluster(), 2.0 * kC, kCI, kCII);
    for (int l = 1; l <= 2; ++l) {
        EXPECT_NEAR(b[l].lambda1, 2.0 * a[l].lambda1, 1e-10);
        EXPECT_NEAR(b[l].lambda2, 4.0 * a[l].lambda2, 1e-8);
    }
}

TEST(Corrector, FemBackendAgreesWithModesAtSecondOrder) {
    const auto& c = cluster();
    const auto set = run_correctors(c, kC, kCI, kCII);
    // Solve exactly the modal pipeline's problems with the 2D bordered system.
    for (int l = 1; l <= 2; ++l) {
        const auto& r = set[l];
        const ModalField& u0 = c.modal[static_cast<std::size_t>(l - 1)];
        const ModalField rhs1 = r.lambda1 * u0;
        const ModalField rhs2 = r.lambda1 * set.u1(l) + r.lambda2 * u0;
        std::vector<double> e1, e2;
        for (double h : {1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0}) {
            const auto ctx = fem_context(c, h);
            const auto s1 = solve_constrained_helmholtz(ctx, interpolate(ctx.lm->mesh, rhs1), r.alpha10, kLambda0, 0.0);
            const auto s2 = solve_constrained_helmholtz(ctx, interpolate(ctx.lm->mesh, rhs2), r.alpha20, kLambda0, 0.0);
            e1.push_back(l2_difference(ctx.lm->mesh, s1.u, r.u1_tilde));
            e2.push_back(l2_difference(ctx.lm->mesh, s2.u, r.u2_tilde));
        }
        for (const auto* e : {&e1, &e2}) {
            EXPECT_NEAR(std::log2((*e)[1] / (*e)[2]), 2.0, 0.2) << "branch " << l;
            EXPECT_LT((*e)[2], 1e-2 * (1.0 + std::sqrt(inner(r.u2_tilde, r.u2_tilde))));
        }
    }
}

TEST(Corrector, FemPipelineTracksModalConstants) {
    const auto& c = cluster();
    const auto m = run_correctors(c, kC, kCI, kCII);
    std::vector<CorrectorSet> f;
    for (double h : {1.0 / 32.0, 1.0 / 64.0}) {
        CorrectorOptions o;
        o.backend = CorrectorBackend::fem;
        o.fem_h = h;
        f.push_back(run_correctors(c, kC, kCI, kCII, o));
    }
    for (int l = 1; l <= 2; ++l) {
        EXPECT_DOUBLE_EQ(f[1][l].lambda1, m[l].lambda1);
        const double e2a = std::fabs(f[0][l].lambda2 - m[l].lambda2), e2b = std::fabs(f[1][l].lambda2 - m[l].lambda2);
        const double e3a = std::fabs(f[0][l].lambda3 - m[l].lambda3), e3b = std::fabs(f[1][l].lambda3 - m[l].lambda3);
        EXPECT_NEAR(std::log2(e2a / e2b), 2.0, 0.2) << l;
        EXPECT_NEAR(std::log2(e3a / e3b), 2.0, 0.2) << l;
        EXPECT_LT(e2b, 0.05 * std::fabs(m[l].lambda2));
    }
}

TEST(Corrector, FullyDiscreteChain) {
    FemClusterOptions co;
    co.h = 1.0 / 32.0;
    const auto c = diagonalize_boundary_form(fem_cluster(co));
    CorrectorOptions o;
    o.backend = CorrectorBackend::fem;
    const auto f = run_correctors(c, kC, kCI, kCII, o);
    const auto m = run_correctors(cluster(), kC, kCI, kCII);
    for (int l = 1; l <= 2; ++l) {
        EXPECT_NEAR(f[l].lambda1, m[l].lambda1, 0.05 * std::fabs(m[l].lambda1)) << l;
        EXPECT_NEAR(f[l].lambda2, m[l].lambda2, 0.1 * std::fabs(m[l].lambda2)) << l;
        // discrete orthogonality of the correctors
        const auto& M = c.lm->fm.M;
        for (int b = 0; b < 2; ++b) EXPECT_NEAR(f[l].u1_nodal.dot(M * c.nodal[static_cast<std::size_t>(b)]), 0.0, 1e-9);
    }
}
