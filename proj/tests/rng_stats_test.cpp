#include <cmath>
#include <cstdint>
#include <vector>

#include <gtest/gtest.h>

#include "latentdiff/parallel.hpp"
#include "latentdiff/rng.hpp"
#include "latentdiff/stats.hpp"

using namespace latentdiff;

// Reference outputs of Philox4x32-10 published with the Random123 library.
TEST(Philox, KnownAnswerVectors) {
    using C = Philox4x32::Counter;
    using K = Philox4x32::Key;
    EXPECT_EQ(Philox4x32::encrypt(C{0, 0, 0, 0}, K{0, 0}), (C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
    EXPECT_EQ(Philox4x32::encrypt(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, K{0xffffffff, 0xffffffff}),
              (C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
    EXPECT_EQ(Philox4x32::encrypt(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}),
              (C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RngStream, ReproducibleAndStreamsDiffer) {
    RngStream a(42, 3), b(42, 3), c(42, 4), e(43, 3);
    int same_c = 0, same_e = 0;
    for (int i = 0; i < 64; ++i) {
        const auto x = a.next_u32();
        EXPECT_EQ(x, b.next_u32());
        same_c += x == c.next_u32();
        same_e += x == e.next_u32();
    }
    EXPECT_LT(same_c, 2);
    EXPECT_LT(same_e, 2);
}

TEST(RngStream, FirstWordsAreThePhiloxBlock) {
    RngStream s(0, 0);
    const auto block = Philox4x32::encrypt({0, 0, 0, 0}, {0, 0});
    for (auto w : block) EXPECT_EQ(s.next_u32(), w);
}

TEST(RngStream, UniformAndNormalMoments) {
    RngStream rng(9, 1);
    constexpr int n = 1'000'000;
    MCStats u, z, z4;
    for (int i = 0; i < n; ++i) {
        const double v = rng.uniform();
        ASSERT_GT(v, 0.0);
        ASSERT_LT(v, 1.0);
        u.add(v);
        const double g = rng.normal();
        z.add(g);
        z4.add(g * g * g * g);
    }
    EXPECT_NEAR(u.mean, 0.5, 5 * u.std_error());
    EXPECT_NEAR(u.variance(), 1.0 / 12.0, 1e-3);
    EXPECT_NEAR(z.mean, 0.0, 5 * z.std_error());
    EXPECT_NEAR(z.variance(), 1.0, 0.005);
    EXPECT_NEAR(z4.mean, 3.0, 5 * z4.std_error());
}

TEST(RngStream, ExponentialMean) {
    RngStream rng(5, 2);
    MCStats s;
    for (int i = 0; i < 200'000; ++i) s.add(rng.exponential(2.5));
    EXPECT_NEAR(s.mean, 0.4, 5 * s.std_error());
}

namespace {

std::vector<double> sample_values(int n) {
    RngStream rng(77, 0);
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(1e3 + rng.normal() * (1.0 + rng.uniform()));
    return v;
}

struct TwoPass {
    double mean = 0, m2 = 0, m3 = 0, m4 = 0;
};

TwoPass two_pass(const std::vector<double>& v) {
    TwoPass t;
    for (double x : v) t.mean += x;
    t.mean /= static_cast<double>(v.size());
    for (double x : v) {
        const double d = x - t.mean;
        t.m2 += d * d;
        t.m3 += d * d * d;
        t.m4 += d * d * d * d;
    }
    return t;
}

}  // namespace

TEST(MCStats, WelfordMatchesTwoPass) {
    const auto v = sample_values(10'000);
    MCStats s;
    for (double x : v) s.add(x);
    const TwoPass t = two_pass(v);
    EXPECT_EQ(s.count, 10'000);
    EXPECT_NEAR(s.mean, t.mean, 1e-10);
    EXPECT_NEAR(s.m2, t.m2, 1e-8 * t.m2);
    EXPECT_NEAR(s.std_error(), std::sqrt(t.m2 / 9999.0 / 10000.0), 1e-12);
}

TEST(MCStats, MergeEqualsSequential) {
    const auto v = sample_values(5'000);
    MCStats all, a, b;
    for (std::size_t i = 0; i < v.size(); ++i) {
        all.add(v[i]);
        (i < 1234 ? a : b).add(v[i]);
    }
    a.merge(b);
    EXPECT_EQ(a.count, all.count);
    EXPECT_NEAR(a.mean, all.mean, 1e-10);
    EXPECT_NEAR(a.m2, all.m2, 1e-8 * all.m2);
    MCStats empty;
    empty.merge(all);
    EXPECT_EQ(empty.mean, all.mean);
}

TEST(MCStats, NonFiniteValuesPoison) {
    MCStats s;
    s.add(1.0);
    s.add(std::nan(""));
    EXPECT_TRUE(s.poisoned);
    EXPECT_EQ(s.count, 1);
    MCStats t;
    t.merge(s);
    EXPECT_TRUE(t.poisoned);
}

TEST(MCStats, SmallCounts) {
    MCStats s;
    EXPECT_EQ(s.variance(), 0.0);
    EXPECT_EQ(s.std_error(), 0.0);
    s.add(3.0);
    EXPECT_EQ(s.variance(), 0.0);
    const auto [lo, hi] = s.ci95();
    EXPECT_EQ(lo, 3.0);
    EXPECT_EQ(hi, 3.0);
}

TEST(MomentStats, HigherMomentsMatchTwoPass) {
    const auto v = sample_values(8'000);
    MomentStats a, b;
    for (std::size_t i = 0; i < v.size(); ++i) (i % 3 == 0 ? a : b).add(v[i]);
    a.merge(b);
    const TwoPass t = two_pass(v);
    EXPECT_NEAR(a.mean, t.mean, 1e-10);
    EXPECT_NEAR(a.m2, t.m2, 1e-8 * t.m2);
    EXPECT_NEAR(a.m3, t.m3, 1e-6 * std::abs(t.m4));
    EXPECT_NEAR(a.m4, t.m4, 1e-8 * t.m4);
    const double n = 8000.0;
    EXPECT_NEAR(a.variance_stderr(), std::sqrt((t.m4 / n - (t.m2 / n) * (t.m2 / n)) / n), 1e-10);
    EXPECT_EQ(a.summary().m2, a.m2);
}

TEST(Parallel, ReductionIndependentOfWorkers) {
    auto body = [](std::int64_t run, MCStats& acc) {
        RngStream rng(11, static_cast<std::uint64_t>(run));
        acc.add(rng.normal());
    };
    const MCStats one = parallel_runs<MCStats>(10'001, 1, body);
    for (int w : {2, 3, 8}) {
        const MCStats many = parallel_runs<MCStats>(10'001, w, body);
        EXPECT_EQ(one.count, many.count);
        EXPECT_EQ(one.mean, many.mean);
        EXPECT_EQ(one.m2, many.m2);
    }
}

TEST(Parallel, ForRunsVisitsEachRunOnce) {
    std::vector<int> hits(5000, 0);
    parallel_for_runs(5000, 4, [&](std::int64_t run) { ++hits[static_cast<std::size_t>(run - 1)]; });
    for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(DeriveSeed, DistinctTags) {
    EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
    EXPECT_EQ(derive_seed(1, 5), derive_seed(1, 5));
}
