#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentdiff/drift.hpp"
#include "latentdiff/errors.hpp"
#include "latentdiff/follmer.hpp"
#include "latentdiff/parallel.hpp"
#include "latentdiff/rng.hpp"
#include "latentdiff/sde.hpp"
#include "latentdiff/stats.hpp"
#include "latentdiff/targets.hpp"

namespace latentdiff {

/// A control u(x, t) added to a base drift. `combined`, when set, evaluates
/// b + u directly (exactly phi, or A x) instead of through the cancellation.
struct ControlField {
    enum class Kind { ConstantShift, OuLinear, OptimalGaussianObs, Custom };
    Kind kind = Kind::Custom;
    std::string label;
    DriftField u;
    DriftField combined;  // empty eval unless the closed form is known
    VectorXd phi;         // constant-shift
    VectorXd a_diag;      // ou-linear
    VectorXd y;           // optimal-gaussian-obs

    int dim() const { return u.dim; }
};

/// u = phi - b, so that b + u = phi.
inline ControlField constant_shift_control(const VectorXd& phi, const DriftField& base) {
    if (phi.size() != base.dim) throw ConfigError("phi dimension does not match the base drift");
    if (!phi.allFinite()) throw ConfigError("phi must be finite");
    ControlField c;
    c.kind = ControlField::Kind::ConstantShift;
    c.label = "const-shift";
    c.phi = phi;
    c.u.dim = base.dim;
    c.u.sup_norm = phi.norm() + base.sup_norm;
    c.u.lip_x = base.lip_x;
    c.u.holder_t = base.holder_t;
    c.u.soft_bound = base.soft_bound;
    c.u.label = "const-shift";
    c.u.eval = [phi, b = base.eval](const Eigen::Ref<const VectorXd>& x, double t, Eigen::Ref<VectorXd> out) {
        b(x, t, out);
        out = phi - out;
    };
    c.combined = constant_drift(phi);
    return c;
}

/// u = A x - b with A diagonal, so that b + u = A x.
inline ControlField ou_linear_control(const VectorXd& a_diag, const DriftField& base) {
    if (a_diag.size() != base.dim) throw ConfigError("A dimension does not match the base drift");
    if (!a_diag.allFinite()) throw ConfigError("A must be finite");
    const double a_max = a_diag.cwiseAbs().maxCoeff();
    ControlField c;
    c.kind = ControlField::Kind::OuLinear;
    c.label = "ou";
    c.a_diag = a_diag;
    c.u.dim = base.dim;
    c.u.sup_norm = a_max * kSoftBoundRadius + base.sup_norm;
    c.u.lip_x = a_max + base.lip_x;
    c.u.holder_t = base.holder_t;
    c.u.soft_bound = true;
    c.u.label = "ou";
    c.u.eval = [a_diag, b = base.eval](const Eigen::Ref<const VectorXd>& x, double t, Eigen::Ref<VectorXd> out) {
        b(x, t, out);
        out = a_diag.cwiseProduct(x) - out;
    };
    DriftField lin;
    lin.dim = base.dim;
    lin.sup_norm = a_max * kSoftBoundRadius;
    lin.lip_x = a_max;
    lin.soft_bound = a_max > 0.0;
    lin.label = "linear";
    lin.eval = [a_diag](const Eigen::Ref<const VectorXd>& x, double, Eigen::Ref<VectorXd> out) {
        out = a_diag.cwiseProduct(x);
    };
    c.combined = std::move(lin);
    return c;
}

/// u(x, t) = (y - x)/(2 - t): optimal for Brownian base dynamics and unit Gaussian noise.
inline ControlField optimal_gaussian_control(const VectorXd& y) {
    if (y.size() <= 0 || !y.allFinite()) throw ConfigError("observation y must be a finite non-empty vector");
    ControlField c;
    c.kind = ControlField::Kind::OptimalGaussianObs;
    c.label = "optimal";
    c.y = y;
    c.u.dim = static_cast<int>(y.size());
    c.u.sup_norm = y.norm() + kSoftBoundRadius;
    c.u.lip_x = 1.0;
    c.u.holder_t = y.norm() + kSoftBoundRadius;
    c.u.soft_bound = true;
    c.u.label = "optimal";
    c.u.eval = [y](const Eigen::Ref<const VectorXd>& x, double t, Eigen::Ref<VectorXd> out) { out = (y - x) / (2.0 - t); };
    return c;
}

inline ControlField custom_control(DriftField u, std::string label = "custom") {
    ControlField c;
    c.kind = ControlField::Kind::Custom;
    c.label = std::move(label);
    c.u = std::move(u);
    return c;
}

inline ControlField zero_control(int dim) { return custom_control(zero_drift(dim), "zero"); }

/// b + u, with bound metadata combined by the triangle inequality.
inline DriftField controlled_drift(const DriftField& base, const ControlField& control) {
    if (base.dim != control.dim()) throw ConfigError("control and base drift dimensions differ");
    if (control.combined.eval) return control.combined;
    DriftField out;
    out.dim = base.dim;
    out.sup_norm = base.sup_norm + control.u.sup_norm;
    out.lip_x = base.lip_x + control.u.lip_x;
    out.holder_t = base.holder_t + control.u.holder_t;
    out.soft_bound = base.soft_bound || control.u.soft_bound;
    out.constant_in_space = base.constant_in_space && control.u.constant_in_space;
    out.label = base.label + "+" + control.label;
    out.eval = [b = base.eval, u = control.u.eval, d = base.dim](const Eigen::Ref<const VectorXd>& x, double t,
                                                                 Eigen::Ref<VectorXd> res) {
        VectorXd tmp(d);
        b(x, t, res);
        u(x, t, tmp);
        res += tmp;
    };
    return out;
}

/// q(y | x) = N(y; x, I).
struct ObservationModel {
    int dim = 1;

    double log_likelihood(const VectorXd& y, const Eigen::Ref<const VectorXd>& x) const {
        return -0.5 * dim * std::log(2.0 * std::numbers::pi) - 0.5 * (y - x).squaredNorm();
    }
};

/// -log N(y; x0, 2I) = (d/2) log(4 pi) + |y - x0|^2 / 4, for Brownian base dynamics.
inline double exact_nll_gaussian(const ObservationModel& obs, const VectorXd& y, const VectorXd& x0) {
    if (y.size() != obs.dim || x0.size() != obs.dim) throw ConfigError("observation dimension mismatch");
    return 0.5 * obs.dim * std::log(4.0 * std::numbers::pi) + 0.25 * (y - x0).squaredNorm();
}

/// F^u = E[1/2 int |u|^2 dt - log q(y | X_1)] under dX = (b + u) dt + dW,
/// with |u|^2 taken at left endpoints of the uniform simulation grid.
inline MCStats free_energy(const ControlField& control, const DriftField& base, const ObservationModel& obs,
                           const VectorXd& y, const VectorXd& x0, int n_steps, std::int64_t runs,
                           std::uint64_t seed, int workers = 1) {
    if (runs < 1) throw DomainError("need at least one run");
    if (y.size() != obs.dim || x0.size() != obs.dim || base.dim != obs.dim)
        throw ConfigError("observation, start and drift dimensions differ");
    const DriftField drift = controlled_drift(base, control);
    const auto ts = uniform_partition(n_steps);
    auto s = parallel_runs<MCStats>(runs, workers, [&](std::int64_t run, MCStats& acc) {
        RngStream rng(seed, static_cast<std::uint64_t>(run));
        VectorXd u(obs.dim);
        double energy = 0.0;
        const VectorXd x1 = detail::euler_core(
            drift, ts, x0, rng,
            [&](std::size_t, double t, double dt, const VectorXd& x, const VectorXd&, const VectorXd&,
                const VectorXd&) {
                control.u.eval(x, t, u);
                energy += u.squaredNorm() * dt;
            });
        acc.add(0.5 * energy - obs.log_likelihood(y, x1));
    });
    if (s.poisoned) throw PoisonedStats("free energy estimate hit non-finite values");
    return s;
}

/// 1/2 int E_p |b_p - b_q|^2 dt along paths of drift_p (left-endpoint quadrature).
inline MCStats girsanov_kl(const DriftField& drift_p, const DriftField& drift_q, const VectorXd& x0, int n_steps,
                           std::int64_t runs, std::uint64_t seed, int workers = 1) {
    if (runs < 1) throw DomainError("need at least one run");
    if (drift_p.dim != drift_q.dim) throw ConfigError("drift dimensions differ");
    if (x0.size() != drift_p.dim) throw ConfigError("initial state dimension does not match the drifts");
    const auto ts = uniform_partition(n_steps);
    auto s = parallel_runs<MCStats>(runs, workers, [&](std::int64_t run, MCStats& acc) {
        RngStream rng(seed, static_cast<std::uint64_t>(run));
        VectorXd bq(drift_p.dim);
        double sum = 0.0;
        detail::euler_core(drift_p, ts, x0, rng,
                           [&](std::size_t, double t, double dt, const VectorXd& x, const VectorXd& bp,
                               const VectorXd&, const VectorXd&) {
                               drift_q.eval(x, t, bq);
                               sum += (bp - bq).squaredNorm() * dt;
                           });
        acc.add(0.5 * sum);
    });
    if (s.poisoned) throw PoisonedStats("girsanov kl estimate hit non-finite values");
    return s;
}

struct LineSearchStep {
    VectorXd phi;
    double f_estimate = 0.0;
    double stderr_f = 0.0;
};

struct LineSearchResult {
    VectorXd phi;
    MCStats best;
    std::vector<LineSearchStep> history;  // every evaluation, in order
};

inline constexpr int kLineSearchIterations = 20;
inline constexpr double kLineSearchBound = 5.0;

/// Coordinate-wise golden-section search of F over constant-shift phi in [-5, 5]^d.
/// Every evaluation reuses `seed`, so the objective is a fixed function of phi.
inline LineSearchResult constant_shift_line_search(const DriftField& base, const ObservationModel& obs,
                                                   const VectorXd& y, const VectorXd& x0, int n_steps,
                                                   std::int64_t runs, std::uint64_t seed, int workers = 1) {
    LineSearchResult res;
    VectorXd phi = VectorXd::Zero(base.dim);
    auto evaluate = [&](const VectorXd& p) {
        const MCStats s = free_energy(constant_shift_control(p, base), base, obs, y, x0, n_steps, runs, seed, workers);
        res.history.push_back({p, s.mean, s.std_error()});
        return s;
    };
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int i = 0; i < base.dim; ++i) {
        double lo = -kLineSearchBound;
        double hi = kLineSearchBound;
        auto at = [&](double v) {
            VectorXd p = phi;
            p[i] = v;
            return p;
        };
        double c = hi - g * (hi - lo);
        double e = lo + g * (hi - lo);
        double fc = evaluate(at(c)).mean;
        double fe = evaluate(at(e)).mean;
        for (int it = 0; it < kLineSearchIterations; ++it) {
            if (fc < fe) {
                hi = e;
                e = c;
                fe = fc;
                c = hi - g * (hi - lo);
                fc = evaluate(at(c)).mean;
            } else {
                lo = c;
                c = e;
                fc = fe;
                e = lo + g * (hi - lo);
                fe = evaluate(at(e)).mean;
            }
        }
        phi[i] = 0.5 * (lo + hi);
    }
    res.phi = phi;
    res.best = evaluate(phi);
    return res;
}

struct TransitionQuery {
    double s = 0.0;
    VectorXd x;
    double t = 1.0;
    VectorXd y;
};

inline double log_gaussian_density(const VectorXd& y, const VectorXd& mean, double var) {
    const double d = static_cast<double>(y.size());
    return -0.5 * d * std::log(2.0 * std::numbers::pi * var) - (y - mean).squaredNorm() / (2.0 * var);
}

/// log p*_{s,t}(x, y) = log p_{s,t}(x, y) + v(x, s) - v(y, t), v the value function of f.
inline double optimal_log_transition(const TargetDensity& target, const TransitionQuery& q) {
    if (!(q.s >= 0.0 && q.s < q.t && q.t <= 1.0)) throw DomainError("transition times need 0 <= s < t <= 1");
    const auto g = TerminalFunction::of_target(target);
    return log_gaussian_density(q.y, q.x, q.t - q.s) + value_function(g, q.x, q.s) - value_function(g, q.y, q.t);
}

/// Max |log p*_formula - log N(y; x + (t-s) m, (t-s) I)| over the queries (shifted-gaussian only).
inline double transition_density_check(const TargetDensity& target, std::span<const TransitionQuery> queries) {
    if (target.kind != TargetKind::ShiftedGaussian)
        throw UnsupportedOracle("the optimal transition kernel is known in closed form for shifted-gaussian targets only");
    const VectorXd& m = target.means.front();
    double err = 0.0;
    for (const auto& q : queries) {
        const double known = log_gaussian_density(q.y, q.x + (q.t - q.s) * m, q.t - q.s);
        err = std::max(err, std::abs(optimal_log_transition(target, q) - known));
    }
    return err;
}

/// Max |log p*_{0,1}(0, y) - log(f(y) phi_d(y))| over the points.
inline double endpoint_identity_check(const TargetDensity& target, std::span<const VectorXd> points) {
    if (!target.has_analytic_semigroup()) throw UnsupportedOracle("endpoint identity needs an analytic target");
    double err = 0.0;
    const VectorXd origin = VectorXd::Zero(target.dim);
    for (const auto& y : points) {
        const double formula = optimal_log_transition(target, {0.0, origin, 1.0, y});
        const double direct = std::log(density_ratio(target, y).value) + log_gaussian_density(y, origin, 1.0);
        err = std::max(err, std::abs(formula - direct));
    }
    return err;
}

/// 1/2 (delta^2 + (b + b_hat)^2 min(1, (sqrt d + b)/R)): drift error delta on B(R),
/// plus the worst-case drift gap weighted by the escape probability bound.
inline double cloud_kl_bound(double delta, double b_sup, double b_hat_sup, int dim, double radius) {
    const double escape = std::min(1.0, (std::sqrt(static_cast<double>(dim)) + b_sup) / radius);
    const double gap = b_sup + b_hat_sup;
    return 0.5 * (delta * delta + gap * gap * escape);
}

/// Max |b(x,t) - b_hat(x,t)| over the cloud validation grid.
inline double drift_sup_error(const DriftField& b, const DriftField& b_hat, double radius,
                              int grid_resolution = kDefaultGridResolution) {
    double err = 0.0;
    for (double t : validation_times())
        for (const auto& x : validation_grid(b.dim, radius, grid_resolution))
            err = std::max(err, (b(x, t) - b_hat(x, t)).norm());
    return err;
}

}  // namespace latentdiff
