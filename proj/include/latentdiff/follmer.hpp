#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentdiff/drift.hpp"
#include "latentdiff/errors.hpp"
#include "latentdiff/point_cloud.hpp"
#include "latentdiff/sde.hpp"
#include "latentdiff/stats.hpp"
#include "latentdiff/targets.hpp"

namespace latentdiff {

namespace detail {

struct MeanGeometry {
    double max_norm = 0.0;      // max_i |m_i|
    double diameter = 0.0;      // max_{i,j} |m_i - m_j|
    double sq_norm_range = 0.0; // max_i |m_i|^2 - min_i |m_i|^2
};

inline MeanGeometry mean_geometry(const TargetDensity& target) {
    MeanGeometry g;
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (const auto& a : target.means) {
        g.max_norm = std::max(g.max_norm, a.norm());
        lo = std::min(lo, a.squaredNorm());
        hi = std::max(hi, a.squaredNorm());
        for (const auto& b : target.means) g.diameter = std::max(g.diameter, (a - b).norm());
    }
    g.sq_norm_range = hi - lo;
    return g;
}

// sum_i softmax(logits)_i m_i
inline void softmax_mean(const TargetDensity& target, const VectorXd& logits, Eigen::Ref<VectorXd> out) {
    const double hi = logits.maxCoeff();
    double total = 0.0;
    out.setZero();
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double p = std::exp(logits[i] - hi);
        total += p;
        out += p * target.means[static_cast<std::size_t>(i)];
    }
    out /= total;
}

inline void gibbs_constants(DriftField& b, const TargetDensity& target) {
    const double r = target.lipschitz_L / target.lower_c;
    b.sup_norm = r;
    b.lip_x = r + r * r;
    b.holder_t = std::sqrt(static_cast<double>(target.dim)) * (r + r * r);
}

}  // namespace detail

/// Exact Foellmer drift grad log Q_{1-t} f for targets with a closed-form semigroup.
///
/// For Gaussian families the drift is the softmax average of the means with
/// logits log w_i + m_i.x - t|m_i|^2/2; its Jacobian is a covariance of the
/// means (norm <= D^2/4, D the diameter) and its time derivative is
/// -Cov(m, |m|^2)/2, so the constants below hold globally.
inline DriftField follmer_drift(const TargetDensity& target) {
    if (target.kind == TargetKind::Gibbs) {
        if (!target.is_constant())
            throw ConfigError("gibbs targets need an attached point cloud for their Foellmer drift");
        DriftField b = zero_drift(target.dim);
        b.label = "follmer";
        return b;
    }
    const auto geo = detail::mean_geometry(target);
    DriftField b;
    b.dim = target.dim;
    b.label = "follmer";
    b.sup_norm = geo.max_norm;
    b.lip_x = geo.diameter * geo.diameter / 4.0;
    b.holder_t = geo.diameter * geo.sq_norm_range / 8.0;
    b.constant_in_space = target.means.size() == 1 || geo.diameter == 0.0;
    auto t_ptr = std::make_shared<const TargetDensity>(target);
    b.eval = [t_ptr](const Eigen::Ref<const VectorXd>& x, double t, Eigen::Ref<VectorXd> out) {
        detail::softmax_mean(*t_ptr, gaussian_log_terms(*t_ptr, x, t), out);
    };
    return b;
}

/// Foellmer drift built from a point-cloud semigroup, grad Q^_{1-t} f / max(Q^_{1-t} f, c/2).
inline DriftField follmer_drift(std::shared_ptr<const TargetDensity> target, std::shared_ptr<const PointCloud> cloud) {
    auto semigroup = std::make_shared<const CloudSemigroup>(target, cloud);
    const double floor = 0.5 * target->lower_c;
    DriftField b;
    b.dim = target->dim;
    b.label = "follmer-cloud";
    if (target->kind == TargetKind::Gibbs) {
        // Cloud averages of f and grad f obey the same pointwise bounds as f, so the
        // floor never binds and the analytic constants carry over.
        detail::gibbs_constants(b, *target);
        b.eval = [semigroup, floor](const Eigen::Ref<const VectorXd>& x, double t, Eigen::Ref<VectorXd> out) {
            const DensityValue q = semigroup->evaluate(x, 1.0 - t);
            out = q.gradient / std::max(q.value, floor);
        };
        return b;
    }
    // Above the floor the field is a convex combination of the means; below it the
    // weights only shrink. The time dependence runs through sqrt(1-t) m_i.z_n.
    const auto geo = detail::mean_geometry(*target);
    b.sup_norm = geo.max_norm;
    b.lip_x = geo.max_norm * geo.max_norm;
    b.holder_t = 2.0 * geo.max_norm * geo.max_norm * cloud->radius_bound + geo.diameter * geo.sq_norm_range / 8.0;
    b.soft_bound = true;
    const double log_floor = std::log(floor);
    b.eval = [semigroup, log_floor](const Eigen::Ref<const VectorXd>& x, double t, Eigen::Ref<VectorXd> out) {
        const VectorXd logs = semigroup->log_terms(x, 1.0 - t);
        const double log_q = log_sum_exp(logs);
        if (log_q >= log_floor) {
            detail::softmax_mean(semigroup->target(), logs, out);
            return;
        }
        out.setZero();
        for (Eigen::Index i = 0; i < logs.size(); ++i)
            out += std::exp(logs[i] - log_floor) * semigroup->target().means[static_cast<std::size_t>(i)];
    };
    return b;
}

/// Terminal function g of the control problem: a target's f or the unit-noise
/// Gaussian likelihood x -> N(y; x, I).
struct TerminalFunction {
    enum class Kind { TargetRatio, GaussianObservation };
    Kind kind = Kind::TargetRatio;
    std::shared_ptr<const TargetDensity> target;
    VectorXd y;

    static TerminalFunction of_target(const TargetDensity& t) {
        return {Kind::TargetRatio, std::make_shared<const TargetDensity>(t), {}};
    }
    static TerminalFunction gaussian_observation(const VectorXd& y) { return {Kind::GaussianObservation, nullptr, y}; }

    int dim() const { return kind == Kind::TargetRatio ? target->dim : static_cast<int>(y.size()); }
};

/// v(x, t) = -log Q_{1-t} g(x) for Brownian base dynamics.
inline double value_function(const TerminalFunction& g, const VectorXd& x, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("value function time must lie in [0,1]");
    if (x.size() != g.dim()) throw ConfigError("value function point has the wrong dimension");
    if (g.kind == TerminalFunction::Kind::GaussianObservation) {
        const double var = 2.0 - t;
        const double d = static_cast<double>(x.size());
        return 0.5 * d * std::log(2.0 * std::numbers::pi * var) + (g.y - x).squaredNorm() / (2.0 * var);
    }
    const TargetDensity& target = *g.target;
    if (target.kind == TargetKind::Gibbs) {
        if (!target.is_constant()) throw UnsupportedOracle("no closed-form value function for gibbs targets");
        return 0.0;
    }
    return -log_sum_exp(gaussian_log_terms(target, x, t));
}

/// 1/2 sum_k |u(X_{k-1}, t_{k-1})|^2 (t_k - t_{k-1}) for one path.
inline double path_energy(const PathSample& path) {
    if (path.control_evals.cols() != path.steps() || path.control_evals.rows() != path.dim())
        throw InsufficientData("path carries no control evaluations");
    double e = 0.0;
    for (Eigen::Index k = 0; k < path.steps(); ++k) {
        const double dt = path.times[static_cast<std::size_t>(k + 1)] - path.times[static_cast<std::size_t>(k)];
        e += path.control_evals.col(k).squaredNorm() * dt;
    }
    return 0.5 * e;
}

inline MCStats path_energy(std::span<const PathSample> paths) {
    if (paths.empty()) throw InsufficientData("path energy needs at least one path");
    MCStats s;
    for (const auto& p : paths) s.add(path_energy(p));
    return s;
}

/// Simulates X under `drift`, recording the drift itself as the control.
inline PathSample controlled_path(const DriftField& drift, std::span<const double> partition, const VectorXd& x0,
                                  RngStream& rng) {
    PathSample p = euler_maruyama(drift, partition, x0, rng);
    p.control_evals = p.drift_evals;
    return p;
}

}  // namespace latentdiff
