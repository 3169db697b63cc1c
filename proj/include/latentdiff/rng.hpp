#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include <Eigen/Dense>

namespace latentdiff {

/// Philox4x32-10 counter-based block cipher (Salmon et al., Random123).
/// Maps a 128-bit counter and 64-bit key to 128 pseudo-random bits.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter encrypt(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// Generator and Gaussian method; written into every report for reproducibility.
inline constexpr std::string_view kRngMethodTag = "philox4x32-10/box-muller";

/// One reproducible random stream. The key is the master seed and the upper
/// half of the counter is the stream index, so streams never overlap and the
/// k-th draw of (seed, stream) is fixed regardless of scheduling.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::uint64_t stream_index)
        : master_seed_(master_seed), stream_index_(stream_index) {}

    std::uint64_t master_seed() const { return master_seed_; }
    std::uint64_t stream_index() const { return stream_index_; }

    std::uint32_t next_u32() {
        if (buffer_pos_ == 4) refill();
        return buffer_[buffer_pos_++];
    }

    std::uint64_t next_u64() {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Uniform on the open interval (0, 1), 53-bit resolution.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal by the Box-Muller transform; pairs are consumed in order.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

    Eigen::VectorXd normal_vector(Eigen::Index dim) {
        Eigen::VectorXd z(dim);
        for (Eigen::Index i = 0; i < dim; ++i) z[i] = normal();
        return z;
    }

    double exponential(double rate) { return -std::log(uniform()) / rate; }

private:
    void refill() {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block_),
                                      static_cast<std::uint32_t>(block_ >> 32),
                                      static_cast<std::uint32_t>(stream_index_),
                                      static_cast<std::uint32_t>(stream_index_ >> 32)};
        const Philox4x32::Key key{static_cast<std::uint32_t>(master_seed_),
                                  static_cast<std::uint32_t>(master_seed_ >> 32)};
        buffer_ = Philox4x32::encrypt(ctr, key);
        buffer_pos_ = 0;
        ++block_;
    }

    std::uint64_t master_seed_;
    std::uint64_t stream_index_;
    std::uint64_t block_ = 0;
    Philox4x32::Counter buffer_{};
    int buffer_pos_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Derive an independent seed for an auxiliary computation (cloud retries,
/// normalizing constants) from a parent seed and a purpose tag.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
    // splitmix64 finalizer
    std::uint64_t z = parent + 0x9E3779B97F4A7C15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace latentdiff
