#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentdiff/errors.hpp"
#include "latentdiff/rng.hpp"
#include "latentdiff/stats.hpp"

namespace latentdiff {

using Eigen::VectorXd;

enum class TargetKind { ShiftedGaussian, GaussianMixture, Gibbs };

/// Regularity constants of Gaussian-family targets hold on this ball only;
/// such targets are neither globally Lipschitz nor bounded below.
inline constexpr double kGaussianReferenceRadius = 1.0;

/// Quadrature size and seed for the Gibbs normalizing constant.
inline constexpr std::int64_t kGibbsNormalizerSamples = 1'000'000;
inline constexpr std::uint64_t kGibbsNormalizerSeed = 0x6769626273ull;

/// A density ratio f = d(mu)/d(gamma_d) together with its regularity metadata.
///
/// Gaussian kinds: f(x) = sum_i w_i exp(m_i.x - |m_i|^2/2), the density ratio
/// of the mixture sum_i w_i N(m_i, I). Gibbs kind: f = exp(-F)/Z with
/// F(x) = A / (1 + |x - x0|^2), Z estimated once by Monte Carlo.
struct TargetDensity {
    TargetKind kind = TargetKind::ShiftedGaussian;
    int dim = 0;

    std::vector<double> weights;
    std::vector<VectorXd> means;

    double gibbs_amplitude = 0.0;
    VectorXd gibbs_center;
    double normalizer = 1.0;
    double normalizer_stderr = 0.0;

    double lipschitz_L = 0.0;  // max of Lipschitz constants of f and grad f
    double lower_c = 1.0;      // f >= lower_c
    bool soft_bounds = false;  // constants only hold on B(reference_radius)
    double reference_radius = std::numeric_limits<double>::infinity();

    static TargetDensity shifted_gaussian(const VectorXd& mean) {
        return gaussian_mixture({1.0}, {mean}, TargetKind::ShiftedGaussian);
    }

    static TargetDensity gaussian_mixture(std::vector<double> weights, std::vector<VectorXd> means,
                                          TargetKind kind = TargetKind::GaussianMixture) {
        if (weights.empty() || weights.size() != means.size())
            throw ConfigError("mixture needs one weight per mean");
        const auto d = means.front().size();
        if (d <= 0) throw ConfigError("mixture means must be non-empty vectors");
        double total = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
                throw ConfigError("mixture weights must be strictly positive");
            if (means[i].size() != d) throw ConfigError("mixture means differ in dimension");
            if (!means[i].allFinite()) throw ConfigError("mixture means must be finite");
            total += weights[i];
        }
        if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");

        TargetDensity t;
        t.kind = kind;
        t.dim = static_cast<int>(d);
        t.weights = std::move(weights);
        t.means = std::move(means);
        t.soft_bounds = true;
        t.reference_radius = kGaussianReferenceRadius;
        // On B(R): Q_s f(x) <= max_i exp(|m_i| R) for every s in [0,1], and
        // grad / Hessian pick up factors |m_i| and |m_i|^2.
        double L = 0.0;
        double c = 1.0;
        for (const auto& m : t.means) {
            const double r = m.norm();
            L = std::max(L, std::max(r, r * r) * std::exp(r * t.reference_radius));
            c = std::min(c, std::exp(-r * t.reference_radius - 0.5 * r * r));
        }
        t.lipschitz_L = L;
        t.lower_c = c;
        return t;
    }

    static TargetDensity gibbs(double amplitude, const VectorXd& center,
                               std::uint64_t seed = kGibbsNormalizerSeed) {
        if (!(amplitude >= 0.0) || !std::isfinite(amplitude))
            throw ConfigError("gibbs amplitude A must be finite and >= 0");
        if (center.size() <= 0 || !center.allFinite())
            throw ConfigError("gibbs center x0 must be a finite non-empty vector");
        TargetDensity t;
        t.kind = TargetKind::Gibbs;
        t.dim = static_cast<int>(center.size());
        t.gibbs_amplitude = amplitude;
        t.gibbs_center = center;
        if (amplitude > 0.0) {
            RngStream rng(seed, 0);
            MCStats z;
            for (std::int64_t i = 0; i < kGibbsNormalizerSamples; ++i) {
                const VectorXd x = rng.normal_vector(t.dim);
                z.add(std::exp(-t.potential(x)));
            }
            t.normalizer = z.mean;
            t.normalizer_stderr = z.std_error();
        }
        // |grad F| <= 9A/(8 sqrt 3) (attained at |x-x0|^2 = 1/3), |Hess F| <= 2A.
        const double grad_bound = 9.0 * amplitude / (8.0 * std::sqrt(3.0));
        const double hess_bound = 2.0 * amplitude;
        const double lip_f = grad_bound / t.normalizer;
        const double lip_grad = (hess_bound + grad_bound * grad_bound) / t.normalizer;
        t.lipschitz_L = std::max(lip_f, lip_grad);
        t.lower_c = std::min(1.0, std::exp(-amplitude) / t.normalizer);
        return t;
    }

    bool is_constant() const {
        if (kind == TargetKind::Gibbs) return gibbs_amplitude == 0.0;
        return std::all_of(means.begin(), means.end(), [](const VectorXd& m) { return m.isZero(0.0); });
    }

    bool has_analytic_semigroup() const { return kind != TargetKind::Gibbs || is_constant(); }

    double potential(const VectorXd& x) const {
        return gibbs_amplitude / (1.0 + (x - gibbs_center).squaredNorm());
    }

    /// Component-wise mean of the target law (analytic kinds only).
    VectorXd law_mean() const {
        if (kind == TargetKind::Gibbs)
            throw UnsupportedOracle("gibbs targets have no closed-form moments");
        VectorXd mu = VectorXd::Zero(dim);
        for (std::size_t i = 0; i < means.size(); ++i) mu += weights[i] * means[i];
        return mu;
    }

    Eigen::MatrixXd law_covariance() const {
        const VectorXd mu = law_mean();
        Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(dim, dim);
        for (std::size_t i = 0; i < means.size(); ++i) cov += weights[i] * means[i] * means[i].transpose();
        cov -= mu * mu.transpose();
        return cov;
    }
};

struct DensityValue {
    double value = 0.0;
    VectorXd gradient;
};

namespace detail {

inline void check_dim(const TargetDensity& target, const VectorXd& x) {
    if (x.size() != target.dim)
        throw ConfigError("point has dimension " + std::to_string(x.size()) + ", target has " +
                          std::to_string(target.dim));
}

// sum_i w_i exp(m_i.x - s|m_i|^2/2) and its gradient; s = 1 gives f, s = 1 - t gives Q_t f.
inline DensityValue gaussian_family(const TargetDensity& target, const VectorXd& x, double s) {
    DensityValue out{0.0, VectorXd::Zero(target.dim)};
    for (std::size_t i = 0; i < target.means.size(); ++i) {
        const VectorXd& m = target.means[i];
        const double term = target.weights[i] * std::exp(m.dot(x) - 0.5 * s * m.squaredNorm());
        out.value += term;
        out.gradient += term * m;
    }
    return out;
}

}  // namespace detail

/// f(x) and grad f(x).
inline DensityValue density_ratio(const TargetDensity& target, const VectorXd& x) {
    detail::check_dim(target, x);
    if (target.kind != TargetKind::Gibbs) return detail::gaussian_family(target, x, 1.0);
    const VectorXd diff = x - target.gibbs_center;
    const double q = 1.0 + diff.squaredNorm();
    const double f = std::exp(-target.gibbs_amplitude / q) / target.normalizer;
    // grad F = -2A (x - x0) / q^2, grad f = -f grad F
    return {f, (2.0 * target.gibbs_amplitude / (q * q) * f) * diff};
}

/// Q_t f(x) = E f(x + sqrt(t) Z) and its gradient, in closed form.
inline DensityValue heat_semigroup(const TargetDensity& target, const VectorXd& x, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("heat semigroup time must lie in [0,1]");
    detail::check_dim(target, x);
    if (t == 0.0) return density_ratio(target, x);
    if (target.kind == TargetKind::Gibbs) {
        if (!target.is_constant())
            throw UnsupportedOracle("gibbs targets have no closed-form heat semigroup; attach a point cloud");
        return {1.0, VectorXd::Zero(target.dim)};
    }
    return detail::gaussian_family(target, x, 1.0 - t);
}

/// Mixture components' log-weights log w_i + m_i.x - s|m_i|^2/2, for stable drift evaluation.
inline VectorXd gaussian_log_terms(const TargetDensity& target, const VectorXd& x, double s) {
    VectorXd logs(static_cast<Eigen::Index>(target.means.size()));
    for (std::size_t i = 0; i < target.means.size(); ++i) {
        const VectorXd& m = target.means[i];
        logs[static_cast<Eigen::Index>(i)] = std::log(target.weights[i]) + m.dot(x) - 0.5 * s * m.squaredNorm();
    }
    return logs;
}

inline double log_sum_exp(const VectorXd& v) {
    const double hi = v.maxCoeff();
    if (!std::isfinite(hi)) return hi;
    return hi + std::log((v.array() - hi).exp().sum());
}

}  // namespace latentdiff
