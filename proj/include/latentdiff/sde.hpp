#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "latentdiff/drift.hpp"
#include "latentdiff/errors.hpp"
#include "latentdiff/parallel.hpp"
#include "latentdiff/rng.hpp"

namespace latentdiff {

/// A discretized trajectory on t_0 = 0 < ... < t_K = 1.
struct PathSample {
    std::vector<double> times;
    Eigen::MatrixXd states;         // d x (K+1)
    Eigen::MatrixXd increments;     // d x K, column k-1 is W(t_k) - W(t_{k-1})
    Eigen::MatrixXd drift_evals;    // d x K, b(X_{k-1}, t_{k-1}); may be empty
    Eigen::MatrixXd control_evals;  // d x K, u(X_{k-1}, t_{k-1}); empty unless recorded

    Eigen::Index steps() const { return increments.cols(); }
    int dim() const { return static_cast<int>(states.rows()); }
    VectorXd terminal() const { return states.col(states.cols() - 1); }

    /// max_k |X_k - (X_{k-1} + b_{k-1} dt_k + dW_k)|, zero for a path produced here.
    double reconstruction_error() const {
        double err = 0.0;
        for (Eigen::Index k = 1; k < states.cols(); ++k) {
            const double dt = times[static_cast<std::size_t>(k)] - times[static_cast<std::size_t>(k - 1)];
            const VectorXd rebuilt = states.col(k - 1) + drift_evals.col(k - 1) * dt + increments.col(k - 1);
            err = std::max(err, (states.col(k) - rebuilt).lpNorm<Eigen::Infinity>());
        }
        return err;
    }
};

inline std::vector<double> uniform_partition(int n_steps) {
    if (n_steps < 1) throw DomainError("need at least one time step");
    std::vector<double> ts(static_cast<std::size_t>(n_steps) + 1);
    for (int k = 0; k <= n_steps; ++k) ts[static_cast<std::size_t>(k)] = static_cast<double>(k) / n_steps;
    ts.back() = 1.0;
    return ts;
}

inline void validate_partition(std::span<const double> ts) {
    if (ts.size() < 2) throw DomainError("partition needs at least two points");
    if (ts.front() != 0.0 || ts.back() != 1.0) throw DomainError("partition must start at 0 and end at 1");
    for (std::size_t k = 1; k < ts.size(); ++k)
        if (!(ts[k] > ts[k - 1])) throw DomainError("partition must be strictly increasing");
}

namespace detail {

inline void check_start(const DriftField& drift, const VectorXd& x0) {
    if (x0.size() != drift.dim)
        throw ConfigError("initial state has dimension " + std::to_string(x0.size()) + ", drift has " +
                          std::to_string(drift.dim));
}

// Euler-Maruyama on a validated partition. The visitor sees
// (k, t_{k-1}, dt, X_{k-1}, b(X_{k-1}, t_{k-1}), dW_k, X_k) for k = 1..K.
// Draws: d normals per step, in step order.
template <class Visitor>
VectorXd euler_core(const DriftField& drift, std::span<const double> ts, const VectorXd& x0, RngStream& rng,
                    Visitor&& visit) {
    const int d = drift.dim;
    VectorXd x = x0;
    VectorXd next(d);
    VectorXd b(d);
    VectorXd dw(d);
    for (std::size_t k = 1; k < ts.size(); ++k) {
        const double t = ts[k - 1];
        const double dt = ts[k] - t;
        const double root_dt = std::sqrt(dt);
        drift.eval(x, t, b);
        for (int i = 0; i < d; ++i) dw[i] = root_dt * rng.normal();
        next = x + b * dt + dw;
        visit(k, t, dt, x, b, dw, next);
        x.swap(next);
    }
    return x;
}

}  // namespace detail

/// X_k = X_{k-1} + b(X_{k-1}, t_{k-1}) (t_k - t_{k-1}) + (W_{t_k} - W_{t_{k-1}}).
inline PathSample euler_maruyama(const DriftField& drift, std::span<const double> partition, const VectorXd& x0,
                                 RngStream& rng) {
    validate_partition(partition);
    detail::check_start(drift, x0);
    const auto steps = static_cast<Eigen::Index>(partition.size() - 1);
    PathSample path;
    path.times.assign(partition.begin(), partition.end());
    path.states.resize(drift.dim, steps + 1);
    path.increments.resize(drift.dim, steps);
    path.drift_evals.resize(drift.dim, steps);
    path.states.col(0) = x0;
    detail::euler_core(drift, partition, x0, rng,
                       [&](std::size_t k, double, double, const VectorXd&, const VectorXd& b, const VectorXd& dw,
                           const VectorXd& next) {
                           const auto c = static_cast<Eigen::Index>(k);
                           path.drift_evals.col(c - 1) = b;
                           path.increments.col(c - 1) = dw;
                           path.states.col(c) = next;
                       });
    return path;
}

/// Terminal state only; consumes exactly the draws euler_maruyama would.
inline VectorXd euler_terminal(const DriftField& drift, std::span<const double> partition, const VectorXd& x0,
                               RngStream& rng) {
    return detail::euler_core(drift, partition, x0, rng,
                              [](std::size_t, double, double, const VectorXd&, const VectorXd&, const VectorXd&,
                                 const VectorXd&) {});
}

/// Terminal states of n_runs independent Euler paths on a uniform grid.
/// Column r-1 holds run r, simulated on stream r of master_seed.
inline Eigen::MatrixXd simulate_terminal_batch(const DriftField& drift, int n_steps, const VectorXd& x0,
                                               std::int64_t n_runs, std::uint64_t master_seed, int workers = 1) {
    if (n_runs < 1) throw DomainError("need at least one run");
    const auto ts = uniform_partition(n_steps);
    detail::check_start(drift, x0);
    Eigen::MatrixXd out(drift.dim, n_runs);
    parallel_for_runs(n_runs, workers, [&](std::int64_t run) {
        RngStream rng(master_seed, static_cast<std::uint64_t>(run));
        out.col(run - 1) = euler_terminal(drift, ts, x0, rng);
    });
    return out;
}

/// Columns t, x_0..x_{d-1}, dW_0..dW_{d-1}; the dW on row k is W(t_k) - W(t_{k-1}),
/// zero on the first row.
inline void write_path_csv(std::ostream& out, const PathSample& path) {
    const int d = path.dim();
    out << "t";
    for (int i = 0; i < d; ++i) out << ",x_" << i;
    for (int i = 0; i < d; ++i) out << ",dW_" << i;
    out << '\n';
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (Eigen::Index k = 0; k < path.states.cols(); ++k) {
        put(path.times[static_cast<std::size_t>(k)]);
        for (int i = 0; i < d; ++i) {
            out << ',';
            put(path.states(i, k));
        }
        for (int i = 0; i < d; ++i) {
            out << ',';
            put(k == 0 ? 0.0 : path.increments(i, k - 1));
        }
        out << '\n';
    }
}

}  // namespace latentdiff
