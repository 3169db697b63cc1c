#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "latentdiff/drift.hpp"
#include "latentdiff/sde.hpp"
#include "latentdiff/stats.hpp"

using namespace latentdiff;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
    VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

// E[X_n^2] for the Euler chain X_k = (1 - h) X_{k-1} + sqrt(h) Z_k of dX = -X dt + dW.
double euler_ou_second_moment(double x0, int n) {
    const double h = 1.0 / n;
    const double a2 = (1.0 - h) * (1.0 - h);
    const double a2n = std::pow(a2, n);
    return a2n * x0 * x0 + h * (1.0 - a2n) / (1.0 - a2);
}

double exact_ou_second_moment(double x0) { return x0 * x0 * std::exp(-2.0) + 0.5 * (1.0 - std::exp(-2.0)); }

}  // namespace

TEST(Euler, PathReconstructsAndTelescopes) {
    const DriftField b = ou_drift(0.7, 2);
    std::vector<double> ts{0.0, 0.1, 0.15, 0.5, 0.9, 1.0};
    RngStream rng(4, 1);
    const VectorXd x0 = vec({1.0, -2.0});
    const PathSample p = euler_maruyama(b, ts, x0, rng);
    EXPECT_EQ(p.steps(), 5);
    EXPECT_EQ(p.dim(), 2);
    EXPECT_EQ(p.reconstruction_error(), 0.0);
    VectorXd sum = x0;
    for (Eigen::Index k = 0; k < p.steps(); ++k)
        sum += p.drift_evals.col(k) * (ts[k + 1] - ts[k]) + p.increments.col(k);
    EXPECT_NEAR((sum - p.terminal()).norm(), 0.0, 1e-12);
    for (Eigen::Index k = 0; k < p.steps(); ++k)
        EXPECT_NEAR((p.drift_evals.col(k) - b(p.states.col(k), ts[k])).norm(), 0.0, 1e-15);
}

TEST(Euler, TerminalOnlyConsumesSameDraws) {
    const DriftField b = ou_drift(1.0, 3);
    const auto ts = uniform_partition(17);
    RngStream a(9, 2), c(9, 2);
    const VectorXd x0 = vec({0.1, 0.2, 0.3});
    EXPECT_EQ((euler_maruyama(b, ts, x0, a).terminal() - euler_terminal(b, ts, x0, c)).norm(), 0.0);
    EXPECT_EQ(a.next_u64(), c.next_u64());
}

TEST(Euler, IncrementMoments) {
    const auto ts = uniform_partition(4);
    MCStats inc, cross;
    for (int r = 1; r <= 50'000; ++r) {
        RngStream rng(2, static_cast<std::uint64_t>(r));
        const PathSample p = euler_maruyama(zero_drift(1), ts, vec({0.0}), rng);
        inc.add(p.increments(0, 1) * p.increments(0, 1));
        cross.add(p.increments(0, 0) * p.increments(0, 3));
    }
    EXPECT_NEAR(inc.mean, 0.25, 5 * inc.std_error());
    EXPECT_NEAR(cross.mean, 0.0, 5 * cross.std_error());
}

TEST(Euler, ConstantDriftIsExact) {
    const VectorXd v = vec({0.5, -1.0});
    const auto x1 = simulate_terminal_batch(constant_drift(v), 7, vec({1.0, 1.0}), 40'000, 3);
    const VectorXd mean = x1.rowwise().mean();
    EXPECT_NEAR(mean[0], 1.5, 5.0 / std::sqrt(40'000.0));
    EXPECT_NEAR(mean[1], 0.0, 5.0 / std::sqrt(40'000.0));
}

TEST(Euler, OuMomentMatchesDiscreteRecursion) {
    for (int n : {16, 32, 64}) {
        const auto x1 = simulate_terminal_batch(ou_drift(1.0, 1), n, vec({1.0}), 200'000, 10 + n, 4);
        MCStats s;
        for (Eigen::Index j = 0; j < x1.cols(); ++j) s.add(x1(0, j) * x1(0, j));
        EXPECT_NEAR(s.mean, euler_ou_second_moment(1.0, n), 5 * s.std_error()) << "n=" << n;
    }
}

TEST(Euler, WeakErrorIsFirstOrder) {
    // Coupled paths: the coarse chain uses pairwise sums of the fine increments.
    const DriftField b = ou_drift(1.0, 1);
    auto run = [&](int n_fine) {
        MCStats diff;
        const auto fine = uniform_partition(n_fine);
        for (int r = 1; r <= 100'000; ++r) {
            RngStream rng(12, static_cast<std::uint64_t>(r));
            const PathSample p = euler_maruyama(b, fine, vec({1.0}), rng);
            double xc = 1.0;
            const double hc = 2.0 / n_fine;
            for (int k = 0; k < n_fine; k += 2) xc += -xc * hc + p.increments(0, k) + p.increments(0, k + 1);
            diff.add(xc * xc - p.terminal()[0] * p.terminal()[0]);
        }
        return diff;
    };
    const MCStats d32 = run(32);
    const MCStats d64 = run(64);
    const double a32 = euler_ou_second_moment(1.0, 16) - euler_ou_second_moment(1.0, 32);
    const double a64 = euler_ou_second_moment(1.0, 32) - euler_ou_second_moment(1.0, 64);
    EXPECT_NEAR(d32.mean, a32, 5 * d32.std_error());
    EXPECT_NEAR(d64.mean, a64, 5 * d64.std_error());
    EXPECT_NEAR(a32 / a64, 2.0, 0.1);
    const double e16 = euler_ou_second_moment(1.0, 16) - exact_ou_second_moment(1.0);
    const double e32 = euler_ou_second_moment(1.0, 32) - exact_ou_second_moment(1.0);
    EXPECT_NEAR(e16 / e32, 2.0, 0.1);
}

TEST(Euler, BatchIsWorkerIndependentAndStreamIndexed) {
    const DriftField b = ou_drift(0.5, 2);
    const auto one = simulate_terminal_batch(b, 10, vec({0.0, 1.0}), 5000, 77, 1);
    const auto four = simulate_terminal_batch(b, 10, vec({0.0, 1.0}), 5000, 77, 4);
    EXPECT_EQ((one - four).cwiseAbs().maxCoeff(), 0.0);
    RngStream rng(77, 3);
    const auto ts = uniform_partition(10);
    EXPECT_EQ((euler_terminal(b, ts, vec({0.0, 1.0}), rng) - one.col(2)).norm(), 0.0);
}

TEST(Euler, InvalidInputs) {
    RngStream rng(1, 1);
    const std::vector<double> not_increasing{0.0, 0.5, 0.5, 1.0};
    const std::vector<double> wrong_end{0.0, 0.5, 0.9};
    EXPECT_THROW(euler_maruyama(zero_drift(1), not_increasing, vec({0.0}), rng), DomainError);
    EXPECT_THROW(euler_maruyama(zero_drift(1), wrong_end, vec({0.0}), rng), DomainError);
    EXPECT_THROW(uniform_partition(0), DomainError);
    EXPECT_THROW(euler_maruyama(zero_drift(2), uniform_partition(3), vec({0.0}), rng), ConfigError);
    EXPECT_THROW(simulate_terminal_batch(zero_drift(1), 3, vec({0.0}), 0, 1), DomainError);
}

TEST(Euler, PathCsvLayout) {
    RngStream rng(5, 1);
    const PathSample p = euler_maruyama(ou_drift(1.0, 2), uniform_partition(3), vec({1.0, 0.0}), rng);
    std::ostringstream out;
    write_path_csv(out, p);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "t,x_0,x_1,dW_0,dW_1");
    std::getline(in, line);
    EXPECT_EQ(line, "0,1,0,0,0");
    int rows = 1;
    double last_t = 0.0;
    while (std::getline(in, line)) {
        ++rows;
        last_t = std::stod(line.substr(0, line.find(',')));
    }
    EXPECT_EQ(rows, 4);
    EXPECT_EQ(last_t, 1.0);
}

TEST(Drifts, MetadataAndValues) {
    const DriftField ou = ou_drift(2.0, 3);
    EXPECT_TRUE(ou.soft_bound);
    EXPECT_EQ(ou.sup_norm, 2.0 * kSoftBoundRadius);
    EXPECT_EQ(ou.lipschitz_b(), 2.0);
    EXPECT_NEAR((ou(vec({1.0, 2.0, 3.0}), 0.1) + 2.0 * vec({1.0, 2.0, 3.0})).norm(), 0.0, 1e-15);
    const DriftField c = constant_drift(vec({3.0, 4.0}));
    EXPECT_EQ(c.sup_norm, 5.0);
    EXPECT_TRUE(c.constant_in_space);
    EXPECT_THROW(constant_drift(VectorXd()), ConfigError);
    EXPECT_THROW(zero_drift(0), ConfigError);
    const DriftField p = time_profile_drift(vec({1.0}), [](double t) { return 1.0 - t; }, 1.0);
    EXPECT_EQ(p(vec({9.0}), 0.25)[0], 0.75);
}
