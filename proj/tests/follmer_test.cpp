#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "latentdiff/follmer.hpp"
#include "latentdiff/sde.hpp"

using namespace latentdiff;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
    VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

TargetDensity asym_mixture() {
    return TargetDensity::gaussian_mixture({0.25, 0.5, 0.25}, {vec({1.5, 0.0}), vec({-0.5, 0.5}), vec({0.0, -1.0})});
}

}  // namespace

TEST(Follmer, SymmetricMixtureVanishesAtOrigin) {
    const DriftField b = follmer_drift(TargetDensity::gaussian_mixture({0.5, 0.5}, {vec({2.0, 1.0}), vec({-2.0, -1.0})}));
    for (double t : {0.0, 0.3, 0.7, 1.0}) EXPECT_NEAR(b(VectorXd::Zero(2), t).norm(), 0.0, 1e-15);
}

TEST(Follmer, DriftIsGradLogSemigroup) {
    const TargetDensity t = asym_mixture();
    const DriftField b = follmer_drift(t);
    const double h = 1e-6;
    for (double time : {0.0, 0.4, 0.9}) {
        const VectorXd x = vec({0.7, -0.3});
        for (int i = 0; i < 2; ++i) {
            VectorXd e = VectorXd::Zero(2);
            e[i] = h;
            const double fd = (std::log(heat_semigroup(t, x + e, 1.0 - time).value) -
                               std::log(heat_semigroup(t, x - e, 1.0 - time).value)) /
                              (2 * h);
            EXPECT_NEAR(b(x, time)[i], fd, 1e-7);
        }
    }
}

TEST(Follmer, DeclaredConstantsHold) {
    const DriftField b = follmer_drift(asym_mixture());
    RngStream rng(3, 0);
    for (int i = 0; i < 3000; ++i) {
        const VectorXd x = 3.0 * rng.normal_vector(2);
        const VectorXd y = x + 0.1 * rng.normal_vector(2);
        const double s = rng.uniform();
        const double t = rng.uniform();
        EXPECT_LE(b(x, s).norm(), b.sup_norm + 1e-12);
        EXPECT_LE((b(x, s) - b(y, s)).norm(), b.lip_x * (x - y).norm() + 1e-12);
        EXPECT_LE((b(x, s) - b(x, t)).norm(), b.holder_t * std::abs(s - t) + 1e-12);
    }
    EXPECT_FALSE(b.soft_bound);
}

TEST(Follmer, ShiftedGaussianDriftIsConstant) {
    const VectorXd m = vec({1.0, -0.5});
    const DriftField b = follmer_drift(TargetDensity::shifted_gaussian(m));
    EXPECT_TRUE(b.constant_in_space);
    EXPECT_NEAR((b(vec({5.0, 3.0}), 0.2) - m).norm(), 0.0, 1e-14);
    EXPECT_NEAR(b.sup_norm, m.norm(), 1e-15);
    EXPECT_EQ(b.lip_x, 0.0);
}

TEST(Follmer, TerminalLawMatchesTarget) {
    const TargetDensity t = asym_mixture();
    const auto x1 = simulate_terminal_batch(follmer_drift(t), 100, VectorXd::Zero(2), 100'000, 5, 4);
    const VectorXd mu = t.law_mean();
    const Eigen::MatrixXd cov = t.law_covariance();
    const VectorXd mean = x1.rowwise().mean();
    const Eigen::MatrixXd centered = x1.colwise() - mean;
    const Eigen::MatrixXd emp_cov = centered * centered.transpose() / (x1.cols() - 1.0);
    for (int i = 0; i < 2; ++i) {
        const double se = std::sqrt(cov(i, i) / x1.cols());
        EXPECT_NEAR(mean[i], mu[i], 5 * se + 0.02);
        for (int j = 0; j < 2; ++j) EXPECT_NEAR(emp_cov(i, j), cov(i, j), 0.05);
    }
}

TEST(Follmer, GibbsDriftNeedsCloud) {
    EXPECT_THROW(follmer_drift(TargetDensity::gibbs(1.0, vec({0.0}))), ConfigError);
    const DriftField flat = follmer_drift(TargetDensity::gibbs(0.0, vec({0.0})));
    EXPECT_EQ(flat(vec({2.0}), 0.5)[0], 0.0);
}

TEST(Follmer, GibbsCloudDriftCoversSign) {
    // Potential A/(1+x^2) pushes mass away from the center.
    auto target = std::make_shared<const TargetDensity>(TargetDensity::gibbs(2.0, vec({0.0})));
    auto cloud = std::make_shared<const PointCloud>(sample_point_cloud(1, 4096, 1));
    const DriftField b = follmer_drift(target, cloud);
    EXPECT_GT(b(vec({0.5}), 0.9)[0], 0.0);
    EXPECT_LT(b(vec({-0.5}), 0.9)[0], 0.0);
    EXPECT_LE(std::abs(b(vec({0.3}), 0.5)[0]), b.sup_norm);
}

TEST(ValueFunction, ConsistentWithSemigroup) {
    const TargetDensity t = asym_mixture();
    const auto g = TerminalFunction::of_target(t);
    const DriftField b = follmer_drift(t);
    const VectorXd x = vec({0.2, 0.4});
    for (double time : {0.0, 0.5, 1.0}) {
        EXPECT_NEAR(value_function(g, x, time), -std::log(heat_semigroup(t, x, 1.0 - time).value), 1e-13);
        const double h = 1e-6;
        VectorXd e = VectorXd::Zero(2);
        e[0] = h;
        const double fd = (value_function(g, x + e, time) - value_function(g, x - e, time)) / (2 * h);
        EXPECT_NEAR(-fd, b(x, time)[0], 1e-7);
    }
}

TEST(ValueFunction, GaussianObservation) {
    // v(x, t) = -log E N(y; x + W_{1-t}, I)
    const VectorXd y = vec({0.5, -1.0});
    const VectorXd x = vec({0.1, 0.3});
    const auto g = TerminalFunction::gaussian_observation(y);
    RngStream rng(2, 0);
    MCStats s;
    const double t = 0.3;
    for (int i = 0; i < 400'000; ++i) {
        const VectorXd z = x + std::sqrt(1.0 - t) * rng.normal_vector(2);
        s.add(std::exp(-std::log(2.0 * std::numbers::pi) - 0.5 * (y - z).squaredNorm()));
    }
    EXPECT_NEAR(std::exp(-value_function(g, x, t)), s.mean, 5 * s.std_error());
    EXPECT_THROW(value_function(g, x, 1.5), DomainError);
    EXPECT_THROW(value_function(g, vec({0.0}), 0.5), ConfigError);
}

TEST(MinimalEnergy, ShiftedGaussianEnergyIsKl) {
    const VectorXd m = vec({1.0, 0.5});
    const DriftField b = follmer_drift(TargetDensity::shifted_gaussian(m));
    const auto ts = uniform_partition(50);
    std::vector<PathSample> paths;
    for (int r = 1; r <= 20; ++r) {
        RngStream rng(1, static_cast<std::uint64_t>(r));
        paths.push_back(controlled_path(b, ts, VectorXd::Zero(2), rng));
    }
    const MCStats e = path_energy(paths);
    EXPECT_NEAR(e.mean, 0.5 * m.squaredNorm(), 1e-12);
    EXPECT_NEAR(e.variance(), 0.0, 1e-20);
}

TEST(MinimalEnergy, MixtureEnergyMatchesRelativeEntropy) {
    // KL(mu || gamma) = E_mu log f, with mu sampled directly as a mixture.
    const TargetDensity t = asym_mixture();
    RngStream rng(6, 0);
    MCStats kl;
    for (int i = 0; i < 200'000; ++i) {
        const double u = rng.uniform();
        std::size_t c = 0;
        double acc = t.weights[0];
        while (u > acc && c + 1 < t.weights.size()) acc += t.weights[++c];
        const VectorXd x = t.means[c] + rng.normal_vector(2);
        kl.add(std::log(density_ratio(t, x).value));
    }
    const DriftField b = follmer_drift(t);
    const auto ts = uniform_partition(200);
    MCStats energy;
    for (int r = 1; r <= 20'000; ++r) {
        RngStream path_rng(8, static_cast<std::uint64_t>(r));
        energy.add(path_energy(controlled_path(b, ts, VectorXd::Zero(2), path_rng)));
    }
    EXPECT_NEAR(energy.mean, kl.mean, 5 * std::hypot(energy.std_error(), kl.std_error()) + 0.01);
}

TEST(MinimalEnergy, MissingControlsRejected) {
    RngStream rng(1, 1);
    const PathSample p = euler_maruyama(zero_drift(1), uniform_partition(4), vec({0.0}), rng);
    EXPECT_THROW(path_energy(p), InsufficientData);
    EXPECT_THROW(path_energy(std::span<const PathSample>{}), InsufficientData);
}
