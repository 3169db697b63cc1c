#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>

namespace latentdiff {

/// Streaming mean/variance (Welford) with an exact pooled merge.
///
/// A non-finite input sets `poisoned` and is otherwise ignored by the moment
/// update; the flag survives every merge so callers can fail loudly.
struct MCStats {
    std::int64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;  // sum of squared deviations from the mean
    bool poisoned = false;

    void add(double value) {
        if (!std::isfinite(value)) {
            poisoned = true;
            return;
        }
        ++count;
        const double delta = value - mean;
        mean += delta / static_cast<double>(count);
        m2 += delta * (value - mean);
    }

    void merge(const MCStats& other) {
        poisoned = poisoned || other.poisoned;
        if (other.count == 0) return;
        if (count == 0) {
            count = other.count;
            mean = other.mean;
            m2 = other.m2;
            return;
        }
        const double na = static_cast<double>(count);
        const double nb = static_cast<double>(other.count);
        const double n = na + nb;
        const double delta = other.mean - mean;
        mean += delta * (nb / n);
        m2 += other.m2 + delta * delta * (na * nb / n);
        count += other.count;
    }

    double variance() const {
        return count >= 2 ? m2 / static_cast<double>(count - 1) : 0.0;
    }
    double std_error() const {
        return count >= 1 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
    }
    /// Normal-approximation 95% interval, mean +/- 1.96 stderr.
    std::pair<double, double> ci95() const {
        const double half = 1.96 * std_error();
        return {mean - half, mean + half};
    }
};

inline MCStats mc_accumulate(MCStats stats, double value) {
    stats.add(value);
    return stats;
}

inline MCStats mc_merge(MCStats a, const MCStats& b) {
    a.merge(b);
    return a;
}

/// Central moments up to order four (Pebay's one-pass update and merge).
/// Used where the standard error of a variance estimate is needed.
struct MomentStats {
    std::int64_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;
    double m3 = 0.0;
    double m4 = 0.0;
    bool poisoned = false;

    void add(double value) {
        if (!std::isfinite(value)) {
            poisoned = true;
            return;
        }
        MomentStats one;
        one.count = 1;
        one.mean = value;
        merge(one);
    }

    void merge(const MomentStats& b) {
        poisoned = poisoned || b.poisoned;
        if (b.count == 0) return;
        if (count == 0) {
            const bool p = poisoned;
            *this = b;
            poisoned = p;
            return;
        }
        const double na = static_cast<double>(count);
        const double nb = static_cast<double>(b.count);
        const double n = na + nb;
        const double d = b.mean - mean;
        const double d2 = d * d;
        const double d3 = d2 * d;
        const double d4 = d2 * d2;
        const double new_m4 = m4 + b.m4 + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n) +
                              6.0 * d2 * (na * na * b.m2 + nb * nb * m2) / (n * n) +
                              4.0 * d * (na * b.m3 - nb * m3) / n;
        const double new_m3 = m3 + b.m3 + d3 * na * nb * (na - nb) / (n * n) +
                              3.0 * d * (na * b.m2 - nb * m2) / n;
        const double new_m2 = m2 + b.m2 + d2 * na * nb / n;
        mean += d * nb / n;
        m2 = new_m2;
        m3 = new_m3;
        m4 = new_m4;
        count += b.count;
    }

    double variance() const {
        return count >= 2 ? m2 / static_cast<double>(count - 1) : 0.0;
    }
    double std_error() const {
        return count >= 1 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0;
    }
    /// Large-sample standard error of the sample variance, sqrt((mu4 - sigma^4)/n).
    double variance_stderr() const {
        if (count < 2) return std::numeric_limits<double>::infinity();
        const double n = static_cast<double>(count);
        const double mu4 = m4 / n;
        const double s2 = m2 / n;
        return std::sqrt(std::max(mu4 - s2 * s2, 0.0) / n);
    }
    /// Plain moment view for reporting.
    MCStats summary() const {
        MCStats s;
        s.count = count;
        s.mean = mean;
        s.m2 = m2;
        s.poisoned = poisoned;
        return s;
    }
};

}  // namespace latentdiff
