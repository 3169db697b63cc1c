#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentdiff/drift.hpp"
#include "latentdiff/errors.hpp"
#include "latentdiff/parallel.hpp"
#include "latentdiff/rng.hpp"
#include "latentdiff/stats.hpp"

namespace latentdiff {

/// Law of the i.i.d. interrenewal times tau_i.
struct InterrenewalDistribution {
    enum class Kind { Exponential, Uniform };
    Kind kind = Kind::Exponential;
    double param = 1.0;  // lambda or T

    static InterrenewalDistribution exponential(double lambda) {
        if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("exponential rate lambda must be positive");
        return {Kind::Exponential, lambda};
    }
    static InterrenewalDistribution uniform(double T) {
        if (!std::isfinite(T) || !(T > 1.0))
            throw ConfigError("uniform(T) needs T > 1: support must contain [0,1+eps]");
        return {Kind::Uniform, T};
    }

    double pdf(double s) const {
        if (s < 0.0) return 0.0;
        if (kind == Kind::Exponential) return param * std::exp(-param * s);
        return s <= param ? 1.0 / param : 0.0;
    }
    double cdf(double s) const {
        if (s <= 0.0) return 0.0;
        if (kind == Kind::Exponential) return -std::expm1(-param * s);
        return std::min(s / param, 1.0);
    }
    double survival(double s) const {
        if (s <= 0.0) return 1.0;
        if (kind == Kind::Exponential) return std::exp(-param * s);
        return std::max(1.0 - s / param, 0.0);
    }
    double sample(RngStream& rng) const {
        if (kind == Kind::Exponential) return rng.exponential(param);
        return param * rng.uniform();
    }

    /// (C, a) with 1/f(s) <= C e^{a s} on (0,1).
    double weight_C() const { return kind == Kind::Exponential ? 1.0 / param : param; }
    double weight_a() const { return kind == Kind::Exponential ? param : 0.0; }

    /// M_tau(-beta) = E exp(-beta tau), beta > 0.
    double laplace(double beta) const {
        if (kind == Kind::Exponential) return param / (param + beta);
        const double x = beta * param;
        return -std::expm1(-x) / x;
    }

    /// E[N]: lambda for exponential meshes; the renewal function e^{1/T} - 1 for uniform ones.
    double expected_count() const { return kind == Kind::Exponential ? param : std::expm1(1.0 / param); }

    std::string label() const;
};

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string InterrenewalDistribution::label() const {
    return kind == Kind::Exponential ? "exp:lambda=" + format_number(param) : "uniform:T=" + format_number(param);
}

/// 0 = T_0 < T_1 < ... < T_N < T_{N+1} = 1.
struct RenewalMesh {
    std::vector<double> times;
    int n_interior = 0;
    std::vector<double> interrenewals;

    double increment(int k) const { return times[static_cast<std::size_t>(k)] - times[static_cast<std::size_t>(k - 1)]; }
};

/// T_k = min(tau_1 + ... + tau_k, 1); draws past the first that reaches 1 are ignored.
inline RenewalMesh mesh_from_interrenewals(std::span<const double> taus) {
    RenewalMesh mesh;
    mesh.times.push_back(0.0);
    double s = 0.0;
    for (double tau : taus) {
        if (!(tau >= 0.0)) throw DomainError("interrenewal times must be nonnegative");
        mesh.interrenewals.push_back(tau);
        s += tau;
        if (s >= 1.0) {
            mesh.times.push_back(1.0);
            mesh.n_interior = static_cast<int>(mesh.times.size()) - 2;
            return mesh;
        }
        // A zero draw leaves T_k = T_{k-1}; the strict partition keeps distinct points only.
        if (s > mesh.times.back()) mesh.times.push_back(s);
    }
    throw DomainError("interrenewal times do not reach 1");
}

inline RenewalMesh sample_mesh(const InterrenewalDistribution& dist, RngStream& rng) {
    RenewalMesh mesh;
    mesh.times.push_back(0.0);
    double s = 0.0;
    for (;;) {
        const double tau = dist.sample(rng);
        mesh.interrenewals.push_back(tau);
        s += tau;
        if (s >= 1.0) break;
        if (s > mesh.times.back()) mesh.times.push_back(s);
    }
    mesh.times.push_back(1.0);
    mesh.n_interior = static_cast<int>(mesh.times.size()) - 2;
    return mesh;
}

/// Scalar test functions g: R^d -> R with a declared Lipschitz constant.
/// Quadratic ones are Lipschitz only on B(kSoftBoundRadius) and flagged soft.
struct ScalarFunction {
    enum class Kind { First, FirstSquared, Sum, SumSquares };
    Kind kind = Kind::First;

    double operator()(const Eigen::Ref<const VectorXd>& x) const {
        switch (kind) {
            case Kind::First: return x[0];
            case Kind::FirstSquared: return x[0] * x[0];
            case Kind::Sum: return x.sum();
            case Kind::SumSquares: return x.squaredNorm();
        }
        return 0.0;
    }
    double lipschitz(int dim) const {
        switch (kind) {
            case Kind::First: return 1.0;
            case Kind::Sum: return std::sqrt(static_cast<double>(dim));
            case Kind::FirstSquared:
            case Kind::SumSquares: return 2.0 * kSoftBoundRadius;
        }
        return 0.0;
    }
    bool soft() const { return kind == Kind::FirstSquared || kind == Kind::SumSquares; }
    std::string label() const {
        switch (kind) {
            case Kind::First: return "x";
            case Kind::FirstSquared: return "x2";
            case Kind::Sum: return "sum";
            case Kind::SumSquares: return "sumsq";
        }
        return "?";
    }
};

struct EstimatorSample {
    double psi = 0.0;
    double control_variate = 0.0;  // the subtracted term, zero when N = 0
    int n_interior = 0;
};

/// One draw of psi on a given mesh. Normals are consumed interval by interval.
inline EstimatorSample unbiased_on_mesh(const DriftField& drift, const ScalarFunction& g,
                                        const InterrenewalDistribution& dist, const VectorXd& x0,
                                        const RenewalMesh& mesh, RngStream& rng) {
    if (x0.size() != drift.dim) throw ConfigError("initial state dimension does not match the drift");
    const int d = drift.dim;
    const int n = mesh.n_interior;
    VectorXd x = x0;
    VectorXd b_prev(d);
    VectorXd b_cur(d);
    VectorXd dw(d);
    drift.eval(x, 0.0, b_prev);
    double weight = 1.0;
    double g_last_interior = 0.0;

    // Interval k runs from T_{k-1} to T_k, k = 1..N+1.
    for (int k = 1; k <= n + 1; ++k) {
        const double dt = mesh.increment(k);
        const double root_dt = std::sqrt(dt);
        for (int i = 0; i < d; ++i) dw[i] = root_dt * rng.normal();
        if (k >= 2) {
            // W^_{k-1} uses b at T_{k-1}, T_{k-2} and the increment over [T_{k-1}, T_k].
            const double f = dist.pdf(mesh.increment(k - 1));
            if (!(f > 0.0)) throw InvalidDistribution("interrenewal density vanished at a sampled increment");
            weight *= (b_cur - b_prev).dot(dw) / dt / f;
            b_prev = b_cur;
        }
        const VectorXd& b_left = k == 1 ? b_prev : b_cur;
        x += b_left * dt + dw;
        if (k <= n) {
            drift.eval(x, mesh.times[static_cast<std::size_t>(k)], b_cur);
            if (k == n) g_last_interior = g(x);
        }
    }
    const double norm = 1.0 / dist.survival(1.0 - mesh.times[static_cast<std::size_t>(n)]);
    EstimatorSample out;
    out.n_interior = n;
    out.control_variate = n > 0 ? norm * g_last_interior * weight : 0.0;
    out.psi = norm * g(x) * weight - out.control_variate;
    return out;
}

/// psi = (g(X_1) - g(X_{T_N}) 1{N>0}) / (1 - F(1 - T_N)) * prod_{k=1}^N W_k / f(T_k - T_{k-1}).
inline EstimatorSample unbiased_estimate_detail(const DriftField& drift, const ScalarFunction& g,
                                                const InterrenewalDistribution& dist, const VectorXd& x0,
                                                RngStream& rng) {
    const RenewalMesh mesh = sample_mesh(dist, rng);
    return unbiased_on_mesh(drift, g, dist, x0, mesh, rng);
}

inline double unbiased_estimate(const DriftField& drift, const ScalarFunction& g, const InterrenewalDistribution& dist,
                                const VectorXd& x0, RngStream& rng) {
    return unbiased_estimate_detail(drift, g, dist, x0, rng).psi;
}

/// Aggregates over runs 1..n of the estimator.
struct EstimatorStats {
    MomentStats psi;
    MCStats psi_sq;
    MCStats control_variate;
    MCStats n_interior;

    void merge(const EstimatorStats& o) {
        psi.merge(o.psi);
        psi_sq.merge(o.psi_sq);
        control_variate.merge(o.control_variate);
        n_interior.merge(o.n_interior);
    }
    bool poisoned() const { return psi.poisoned || psi_sq.poisoned || control_variate.poisoned; }
};

inline EstimatorStats run_unbiased(const DriftField& drift, const ScalarFunction& g,
                                   const InterrenewalDistribution& dist, const VectorXd& x0, std::int64_t runs,
                                   std::uint64_t seed, int workers = 1) {
    if (runs < 1) throw DomainError("need at least one run");
    if (x0.size() != drift.dim) throw ConfigError("initial state dimension does not match the drift");
    auto stats = parallel_runs<EstimatorStats>(runs, workers, [&](std::int64_t run, EstimatorStats& acc) {
        RngStream rng(seed, static_cast<std::uint64_t>(run));
        const EstimatorSample s = unbiased_estimate_detail(drift, g, dist, x0, rng);
        acc.psi.add(s.psi);
        acc.psi_sq.add(s.psi * s.psi);
        acc.control_variate.add(s.control_variate);
        acc.n_interior.add(s.n_interior);
    });
    if (stats.poisoned()) throw PoisonedStats("non-finite estimator values");
    return stats;
}

// ---------------------------------------------------------------------------
// MGF of N

struct MgfBound {
    double value = std::numeric_limits<double>::infinity();
    bool feasible = false;
    double beta = 0.0;  // minimizer, lemma bound only
    bool closed_form = false;
};

namespace detail {

// log of (beta+1) e^{theta beta} + 1/(1-q), q = e^{theta+1} M(-beta); +inf when q >= 1.
inline double mgf_log_objective(const InterrenewalDistribution& dist, double theta, double beta) {
    const double log_q = theta + 1.0 + std::log(dist.laplace(beta));
    if (!(log_q < 0.0)) return std::numeric_limits<double>::infinity();
    const double a = std::log1p(beta) + theta * beta;
    const double b = -std::log(-std::expm1(log_q));
    const double hi = std::max(a, b);
    return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

}  // namespace detail

inline constexpr double kBetaMin = 1e-3;
inline constexpr double kBetaMax = 1e3;
inline constexpr int kBetaGrid = 200;

/// 1 + e^theta inf_beta {(beta+1) e^{theta beta} + sum_k (e^{theta+1} M(-beta))^k} for any kind,
/// by a log grid on (1e-3, 1e3) and golden-section refinement around the best grid point.
inline MgfBound mgf_lemma_bound(const InterrenewalDistribution& dist, double theta) {
    if (!(theta >= 0.0) || !std::isfinite(theta)) throw DomainError("mgf theta must be finite and >= 0");
    const double lmin = std::log(kBetaMin);
    const double lmax = std::log(kBetaMax);
    const double step = (lmax - lmin) / (kBetaGrid - 1);
    int best = -1;
    double best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i < kBetaGrid; ++i) {
        const double v = detail::mgf_log_objective(dist, theta, std::exp(lmin + i * step));
        if (v < best_val) {
            best_val = v;
            best = i;
        }
    }
    MgfBound out;
    if (best < 0) return out;
    double lo = lmin + std::max(best - 1, 0) * step;
    double hi = lmin + std::min(best + 1, kBetaGrid - 1) * step;
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - phi * (hi - lo);
    double e = lo + phi * (hi - lo);
    double fc = detail::mgf_log_objective(dist, theta, std::exp(c));
    double fe = detail::mgf_log_objective(dist, theta, std::exp(e));
    for (int it = 0; it < 100 && hi - lo > 1e-12; ++it) {
        if (fc < fe) {
            hi = e;
            e = c;
            fe = fc;
            c = hi - phi * (hi - lo);
            fc = detail::mgf_log_objective(dist, theta, std::exp(c));
        } else {
            lo = c;
            c = e;
            fc = fe;
            e = lo + phi * (hi - lo);
            fe = detail::mgf_log_objective(dist, theta, std::exp(e));
        }
    }
    double beta = std::exp(lmin + best * step);
    if (std::min(fc, fe) < best_val) {
        best_val = std::min(fc, fe);
        beta = std::exp(fc < fe ? c : e);
    }
    out.feasible = true;
    out.beta = beta;
    out.value = 1.0 + std::exp(theta + best_val);
    return out;
}

/// Exact exp(lambda(e^theta - 1)) for exponential meshes, the lemma bound otherwise.
inline MgfBound mgf_bound(const InterrenewalDistribution& dist, double theta) {
    if (!(theta >= 0.0) || !std::isfinite(theta)) throw DomainError("mgf theta must be finite and >= 0");
    if (dist.kind == InterrenewalDistribution::Kind::Exponential) {
        MgfBound out;
        out.value = std::exp(dist.param * std::expm1(theta));
        out.feasible = true;
        out.closed_form = true;
        return out;
    }
    return mgf_lemma_bound(dist, theta);
}

/// Monte Carlo E[e^{theta N}]; mesh r is drawn from stream r.
inline MCStats empirical_mgf(const InterrenewalDistribution& dist, double theta, std::int64_t runs,
                             std::uint64_t seed, int workers = 1) {
    if (runs < 1) throw DomainError("need at least one run");
    auto s = parallel_runs<MCStats>(runs, workers, [&](std::int64_t run, MCStats& acc) {
        RngStream rng(seed, static_cast<std::uint64_t>(run));
        acc.add(std::exp(theta * sample_mesh(dist, rng).n_interior));
    });
    if (s.poisoned) throw PoisonedStats("empirical mgf overflowed");
    return s;
}

/// Distribution of N over sampled meshes.
inline std::vector<std::int64_t> mesh_count_histogram(const InterrenewalDistribution& dist, std::int64_t runs,
                                                      std::uint64_t seed) {
    std::vector<std::int64_t> hist;
    for (std::int64_t run = 1; run <= runs; ++run) {
        RngStream rng(seed, static_cast<std::uint64_t>(run));
        const auto n = static_cast<std::size_t>(sample_mesh(dist, rng).n_interior);
        if (n >= hist.size()) hist.resize(n + 1, 0);
        ++hist[n];
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Variance diagnostics

/// E[R^k] for R = |Z|, Z ~ N(0, I_d).
inline double chi_moment(int d, int k) {
    return std::exp(0.5 * k * std::numbers::ln2 + std::lgamma(0.5 * (d + k)) - std::lgamma(0.5 * d));
}

/// kappa = E[(1 + b_inf + |Z|)^2 |Z|^2].
inline double variance_kappa(int d, double b_inf) {
    const double c = 1.0 + b_inf;
    return c * c * chi_moment(d, 2) + 2.0 * c * chi_moment(d, 3) + chi_moment(d, 4);
}

struct VarianceReport {
    std::string dist;
    double theta_eff = 0.0;
    std::int64_t runs = 0;
    double mean = 0.0;
    double var = 0.0;
    double stderr_mean = 0.0;
    double var_stderr = 0.0;
    double second_moment = 0.0;
    double second_moment_stderr = 0.0;
    double bound = 0.0;
    bool bound_valid = false;
    bool hypotheses_verified = false;
    double kappa = 0.0;
    double K = 0.0;
    double mean_n = 0.0;
    std::uint64_t seed = 0;
};

struct VarianceBound {
    double theta_eff = 0.0;
    double kappa = 0.0;
    double K = 0.0;
    double value = 0.0;
    bool hypotheses_verified = false;
};

/// (e^a / (1 - F(1)))^2 K M_N(theta_eff), K = (|g(x0)| + L(1 + sqrt d))^2,
/// theta_eff = max(0, log((C L)^2 kappa)), L = max(L_b, L_g).
inline VarianceBound variance_bound(const DriftField& drift, const ScalarFunction& g,
                                    const InterrenewalDistribution& dist, const VectorXd& x0) {
    VarianceBound out;
    const int d = drift.dim;
    const double L = std::max(drift.lipschitz_b(), g.lipschitz(d));
    out.kappa = variance_kappa(d, drift.sup_norm);
    const double CL = dist.weight_C() * L;
    out.theta_eff = CL > 0.0 ? std::max(0.0, std::log(CL * CL * out.kappa)) : 0.0;
    const double k_root = std::abs(g(x0)) + L * (1.0 + std::sqrt(static_cast<double>(d)));
    out.K = k_root * k_root;
    const double pre = std::exp(dist.weight_a()) / dist.survival(1.0);
    out.value = pre * pre * out.K * mgf_bound(dist, out.theta_eff).value;
    out.hypotheses_verified = !drift.soft_bound && !g.soft() && std::isfinite(drift.sup_norm) &&
                              std::isfinite(drift.lipschitz_b());
    return out;
}

inline VarianceReport variance_report(const DriftField& drift, const ScalarFunction& g,
                                      const InterrenewalDistribution& dist, const VectorXd& x0, std::int64_t runs,
                                      std::uint64_t seed, int workers = 1) {
    const EstimatorStats s = run_unbiased(drift, g, dist, x0, runs, seed, workers);
    const VarianceBound vb = variance_bound(drift, g, dist, x0);
    VarianceReport r;
    r.dist = dist.label();
    r.theta_eff = vb.theta_eff;
    r.runs = runs;
    r.mean = s.psi.mean;
    r.var = s.psi.variance();
    r.stderr_mean = s.psi.std_error();
    r.var_stderr = s.psi.variance_stderr();
    r.second_moment = s.psi_sq.mean;
    r.second_moment_stderr = s.psi_sq.std_error();
    r.bound = vb.value;
    r.bound_valid = r.second_moment <= r.bound;
    r.hypotheses_verified = vb.hypotheses_verified;
    r.kappa = vb.kappa;
    r.K = vb.K;
    r.mean_n = s.n_interior.mean;
    r.seed = seed;
    return r;
}

// ---------------------------------------------------------------------------
// Mittag-Leffler

inline constexpr int kMittagLefflerMaxTerms = 10'000;

/// E_{alpha,beta}(z) = sum_k z^k / Gamma(beta + alpha k).
inline double mittag_leffler(double alpha, double beta, double z) {
    if (!(alpha > 0.0) || !(beta > 0.0)) throw DomainError("mittag-leffler needs alpha > 0 and beta > 0");
    if (!std::isfinite(z)) throw DomainError("mittag-leffler argument must be finite");
    const double log_abs_z = std::log(std::abs(z));
    double sum = 0.0;
    for (int k = 0; k < kMittagLefflerMaxTerms; ++k) {
        double term;
        if (k == 0) {
            term = std::exp(-std::lgamma(beta));
        } else if (z == 0.0) {
            return sum;
        } else {
            term = std::exp(k * log_abs_z - std::lgamma(beta + alpha * k));
            if (z < 0.0 && (k % 2 == 1)) term = -term;
        }
        sum += term;
        if (k > 0 && std::abs(term) < 1e-15 * std::abs(sum)) return sum;
        if (!std::isfinite(sum)) throw NonConvergence("mittag-leffler series overflowed");
    }
    throw NonConvergence("mittag-leffler series did not converge within the term cap");
}

/// sqrt(pi) E_{1/2,1/2}(C sqrt(pi)) with C = C_tau max(L_b, L_g).
inline double integrability_certificate(const DriftField& drift, const ScalarFunction& g,
                                        const InterrenewalDistribution& dist) {
    const double c = dist.weight_C() * std::max(drift.lipschitz_b(), g.lipschitz(drift.dim));
    const double root_pi = std::sqrt(std::numbers::pi);
    return root_pi * mittag_leffler(0.5, 0.5, c * root_pi);
}

}  // namespace latentdiff
