#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "latentdiff/control.hpp"

using namespace latentdiff;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
    VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Expected free energy of the Euler chain X_k = (1 + a h) X_{k-1} + dW_k with control u = a x
// over a zero base drift, one coordinate.
double ou_linear_free_energy(double a, double x0, double y, int n) {
    const double h = 1.0 / n;
    const double g = 1.0 + a * h;
    double m2 = x0 * x0;
    double mean = x0;
    double energy = 0.0;
    for (int k = 0; k < n; ++k) {
        energy += 0.5 * a * a * m2 * h;
        m2 = g * g * m2 + h;
        mean *= g;
    }
    return energy + 0.5 * kLog2Pi + 0.5 * (y * y - 2.0 * y * mean + m2);
}

// KL(N(m1, s1 I) || N(m2, s2 I)) in one dimension.
double gaussian_kl(double m1, double s1, double m2, double s2) {
    return 0.5 * (s1 / s2 + (m1 - m2) * (m1 - m2) / s2 - 1.0 + std::log(s2 / s1));
}

}  // namespace

TEST(Controls, ControlledDriftClosedForms) {
    const DriftField base = ou_drift(1.0, 2);
    const VectorXd x = vec({0.4, -1.2});
    const ControlField c = constant_shift_control(vec({0.5, 0.25}), base);
    EXPECT_NEAR((controlled_drift(base, c)(x, 0.3) - vec({0.5, 0.25})).norm(), 0.0, 1e-15);
    EXPECT_NEAR((c.u(x, 0.3) - (vec({0.5, 0.25}) + x)).norm(), 0.0, 1e-15);

    const ControlField o = ou_linear_control(vec({2.0, -1.0}), base);
    EXPECT_NEAR((controlled_drift(base, o)(x, 0.1) - vec({0.8, 1.2})).norm(), 0.0, 1e-15);
    EXPECT_NEAR((base(x, 0.1) + o.u(x, 0.1) - vec({0.8, 1.2})).norm(), 0.0, 1e-15);

    const ControlField opt = optimal_gaussian_control(vec({1.0, 0.0}));
    EXPECT_NEAR((opt.u(x, 0.5) - (vec({1.0, 0.0}) - x) / 1.5).norm(), 0.0, 1e-15);
    const DriftField sum = controlled_drift(zero_drift(2), opt);
    EXPECT_NEAR((sum(x, 0.5) - opt.u(x, 0.5)).norm(), 0.0, 1e-15);

    EXPECT_THROW(constant_shift_control(vec({1.0}), base), ConfigError);
    EXPECT_THROW(controlled_drift(ou_drift(1.0, 3), zero_control(2)), ConfigError);
}

TEST(FreeEnergy, ExactNll) {
    EXPECT_NEAR(exact_nll_gaussian({1}, vec({0.0}), vec({0.0})), 0.5 * std::log(4.0 * std::numbers::pi), 1e-15);
    EXPECT_NEAR(exact_nll_gaussian({2}, vec({1.0, 1.0}), vec({0.0, 0.0})), std::log(4.0 * std::numbers::pi) + 0.5,
                1e-15);
    EXPECT_NEAR(exact_nll_gaussian({1}, vec({2.0}), vec({-1.0})), 0.5 * std::log(4.0 * std::numbers::pi) + 2.25,
                1e-15);
    EXPECT_THROW(exact_nll_gaussian({2}, vec({0.0}), vec({0.0, 0.0})), ConfigError);
}

TEST(FreeEnergy, ConstantShiftGap) {
    const DriftField base = zero_drift(1);
    const ObservationModel obs{1};
    for (double phi : {0.0, 0.5, -1.0}) {
        const MCStats f = free_energy(constant_shift_control(vec({phi}), base), base, obs, vec({0.0}), vec({0.0}), 20,
                                      200'000, 3, 4);
        const double gap = f.mean - exact_nll_gaussian(obs, vec({0.0}), vec({0.0}));
        EXPECT_NEAR(gap, phi * phi + 0.5 * (1.0 - std::numbers::ln2), 5 * f.std_error()) << phi;
    }
}

TEST(FreeEnergy, OptimalControlAttainsNll) {
    const DriftField base = zero_drift(2);
    const ObservationModel obs{2};
    const VectorXd y = vec({1.0, -0.5});
    const MCStats f = free_energy(optimal_gaussian_control(y), base, obs, y, vec({0.0, 0.0}), 400, 20'000, 4, 4);
    const double nll = exact_nll_gaussian(obs, y, vec({0.0, 0.0}));
    EXPECT_NEAR(f.mean, nll, 5 * f.std_error() + 5e-3);
    // Pathwise the cost is nll - int u dW, so its variance is E int |u|^2 dt
    // = |y|^2/4 + 2 (log 2 - 1/2) in two dimensions.
    const double expect_var = 0.25 * y.squaredNorm() + 2.0 * (std::numbers::ln2 - 0.5);
    EXPECT_NEAR(f.variance(), expect_var, 0.05 * expect_var);
}

TEST(FreeEnergy, UpperBoundsNll) {
    const DriftField base = zero_drift(1);
    const ObservationModel obs{1};
    const double nll = exact_nll_gaussian(obs, vec({1.0}), vec({0.0}));
    for (const ControlField& c : {zero_control(1), ou_linear_control(vec({-0.5}), base),
                                  constant_shift_control(vec({0.2}), base)}) {
        const MCStats f = free_energy(c, base, obs, vec({1.0}), vec({0.0}), 50, 100'000, 5, 4);
        EXPECT_GT(f.mean + 5 * f.std_error(), nll) << c.label;
    }
}

TEST(FreeEnergy, OuLinearMatchesDiscreteRecursion) {
    const DriftField base = zero_drift(1);
    const ObservationModel obs{1};
    for (double a : {-1.0, 0.5}) {
        const int n = 25;
        const MCStats f = free_energy(ou_linear_control(vec({a}), base), base, obs, vec({0.3}), vec({0.8}), n,
                                      200'000, 6, 4);
        EXPECT_NEAR(f.mean, ou_linear_free_energy(a, 0.8, 0.3, n), 5 * f.std_error()) << a;
    }
}

TEST(FreeEnergy, WorkerIndependent) {
    const DriftField base = zero_drift(1);
    const auto c = optimal_gaussian_control(vec({0.5}));
    const MCStats a = free_energy(c, base, {1}, vec({0.5}), vec({0.0}), 30, 7000, 9, 1);
    const MCStats b = free_energy(c, base, {1}, vec({0.5}), vec({0.0}), 30, 7000, 9, 3);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.m2, b.m2);
}

TEST(LineSearch, ConvergesToSampleMinimum) {
    const DriftField base = zero_drift(1);
    const LineSearchResult r = constant_shift_line_search(base, {1}, vec({0.0}), vec({0.0}), 10, 20'000, 2);
    EXPECT_NEAR(r.phi[0], 0.0, 0.05);
    EXPECT_EQ(r.history.size(), static_cast<std::size_t>(kLineSearchIterations + 3));
    // The bracket is 10 * 0.618^20 wide at the end; F is quadratic with curvature 2.
    for (const auto& step : r.history) EXPECT_LE(r.best.mean, step.f_estimate + 1e-6);
    for (const auto& step : r.history) {
        EXPECT_GE(step.phi[0], -kLineSearchBound);
        EXPECT_LE(step.phi[0], kLineSearchBound);
    }
}

TEST(LineSearch, FindsShiftedObservation) {
    // With a zero base and y = 2, F(phi) = phi^2/2 + E(y - phi - W)^2/2 + const is minimized at phi = 1.
    const LineSearchResult r = constant_shift_line_search(zero_drift(1), {1}, vec({2.0}), vec({0.0}), 5, 20'000, 3);
    EXPECT_NEAR(r.phi[0], 1.0, 0.05);
}

TEST(Girsanov, ConstantDriftsExact) {
    const MCStats kl = girsanov_kl(constant_drift(vec({1.0, 0.0})), constant_drift(vec({0.0, 1.0})), vec({0.0, 0.0}),
                                   13, 500, 1);
    EXPECT_NEAR(kl.mean, 1.0, 1e-12);
    EXPECT_NEAR(kl.variance(), 0.0, 1e-20);
    const MCStats back = girsanov_kl(constant_drift(vec({0.0, 1.0})), constant_drift(vec({1.0, 0.0})),
                                     vec({0.0, 0.0}), 13, 500, 1);
    EXPECT_NEAR(back.mean, kl.mean, 1e-12);
    EXPECT_EQ(girsanov_kl(ou_drift(1.0, 1), ou_drift(1.0, 1), vec({1.0}), 10, 100, 1).mean, 0.0);
}

TEST(Girsanov, DataProcessingOverTerminalLaw) {
    // Path KL dominates the KL between the Euler terminal laws.
    const int n = 50;
    const double theta = 1.0;
    const double h = 1.0 / n;
    double mean = 1.0, var = 0.0;
    for (int k = 0; k < n; ++k) {
        mean *= 1.0 - theta * h;
        var = (1.0 - theta * h) * (1.0 - theta * h) * var + h;
    }
    const double terminal = gaussian_kl(mean, var, 1.0, 1.0);
    const MCStats path = girsanov_kl(ou_drift(theta, 1), zero_drift(1), vec({1.0}), n, 100'000, 7, 4);
    EXPECT_GT(path.mean - 5 * path.std_error(), terminal);
}

TEST(Girsanov, OuAgainstZeroClosedForm) {
    // 1/2 int E X_t^2 dt under the Euler chain, left-endpoint quadrature.
    const int n = 40;
    const double h = 1.0 / n;
    double m2 = 1.0, expect = 0.0;
    for (int k = 0; k < n; ++k) {
        expect += 0.5 * m2 * h;
        m2 = (1.0 - h) * (1.0 - h) * m2 + h;
    }
    const MCStats kl = girsanov_kl(ou_drift(1.0, 1), zero_drift(1), vec({1.0}), n, 200'000, 8, 4);
    EXPECT_NEAR(kl.mean, expect, 5 * kl.std_error());
}

TEST(CloudKl, BoundFormula) {
    EXPECT_NEAR(cloud_kl_bound(0.1, 1.0, 1.0, 1, 4.0), 0.5 * (0.01 + 4.0 * 0.5), 1e-15);
    EXPECT_NEAR(cloud_kl_bound(0.0, 1.0, 1.0, 4, 1.0), 2.0, 1e-15);
    const DriftField b = ou_drift(1.0, 2);
    EXPECT_EQ(drift_sup_error(b, b, 3.0, 5), 0.0);
    EXPECT_NEAR(drift_sup_error(constant_drift(vec({1.0, 0.0})), constant_drift(vec({0.0, 0.0})), 2.0), 1.0, 1e-15);
}

TEST(Transition, ShiftedGaussianKernel) {
    const TargetDensity t = TargetDensity::shifted_gaussian(vec({0.7, -0.2}));
    std::vector<TransitionQuery> qs;
    RngStream rng(1, 0);
    for (int i = 0; i < 30; ++i) {
        const double s = 0.9 * rng.uniform();
        const double e = s + (1.0 - s) * (0.05 + 0.95 * rng.uniform());
        qs.push_back({s, rng.normal_vector(2), e, rng.normal_vector(2)});
    }
    EXPECT_LT(transition_density_check(t, qs), 1e-12);
    const std::vector<VectorXd> pts{vec({0.0, 0.0}), vec({1.0, 2.0}), vec({-3.0, 0.5})};
    EXPECT_LT(endpoint_identity_check(t, pts), 1e-12);
    EXPECT_THROW(transition_density_check(TargetDensity::gaussian_mixture({0.5, 0.5}, {vec({1, 0}), vec({-1, 0})}), qs),
                 UnsupportedOracle);
    EXPECT_THROW(optimal_log_transition(t, {0.5, vec({0, 0}), 0.5, vec({0, 0})}), DomainError);
}

TEST(Transition, MixtureKernelIsNormalized) {
    // E over y ~ N(x, t - s) of p*(s,x;t,y) / N(y; x, t - s) equals one.
    const TargetDensity t = TargetDensity::gaussian_mixture({0.3, 0.7}, {vec({1.5}), vec({-0.5})});
    const VectorXd x = vec({0.4});
    const double s = 0.2, e = 0.7;
    RngStream rng(3, 0);
    MCStats m;
    for (int i = 0; i < 200'000; ++i) {
        const VectorXd y = x + std::sqrt(e - s) * rng.normal_vector(1);
        m.add(std::exp(optimal_log_transition(t, {s, x, e, y}) - log_gaussian_density(y, x, e - s)));
    }
    EXPECT_NEAR(m.mean, 1.0, 5 * m.std_error());
    const std::vector<VectorXd> pts{vec({0.0}), vec({2.0})};
    EXPECT_LT(endpoint_identity_check(t, pts), 1e-12);
}
