#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "latentdiff/errors.hpp"
#include "latentdiff/rng.hpp"
#include "latentdiff/targets.hpp"

namespace latentdiff {

/// N standard-Gaussian points z_n used as a sample-average surrogate for Q_t f.
struct PointCloud {
    Eigen::MatrixXd points;  // dim x N, one point per column
    double radius_bound = 0.0;
    double target_eps = 0.0;
    double valid_radius = 0.0;
    std::uint64_t seed = 0;
    int attempts = 0;
    double sup_value_err = std::numeric_limits<double>::quiet_NaN();
    double sup_grad_err = std::numeric_limits<double>::quiet_NaN();

    Eigen::Index size() const { return points.cols(); }
    int dim() const { return static_cast<int>(points.rows()); }

    /// Admissible norm for a cloud of n points in dimension d: 8 sqrt((d+6) log n).
    static double radius_limit(int d, Eigen::Index n) {
        return 8.0 * std::sqrt((d + 6.0) * std::log(static_cast<double>(n)));
    }
    bool radius_ok() const { return radius_bound <= radius_limit(dim(), size()); }
};

/// Draw n i.i.d. standard-Gaussian points; no validation.
inline PointCloud sample_point_cloud(int dim, Eigen::Index n, std::uint64_t seed, std::uint64_t stream = 0) {
    if (dim <= 0 || n <= 0) throw ConfigError("point cloud needs positive dimension and size");
    PointCloud cloud;
    cloud.points.resize(dim, n);
    RngStream rng(seed, stream);
    double r2 = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        for (int i = 0; i < dim; ++i) cloud.points(i, j) = rng.normal();
        r2 = std::max(r2, cloud.points.col(j).squaredNorm());
    }
    cloud.radius_bound = std::sqrt(r2);
    cloud.seed = seed;
    return cloud;
}

/// Evaluates the sample average N^{-1} sum_n f(x + sqrt(t) z_n) and its gradient.
///
/// Gaussian-family targets factor as
///   N^{-1} sum_n f(x + sqrt(t) z_n) = sum_i w_i exp(m_i.x - |m_i|^2/2) S_i(t),
///   S_i(t) = N^{-1} sum_n exp(sqrt(t) m_i.z_n),
/// which is the same finite sum regrouped. S_i is cached per time value, so
/// repeated evaluation on a fixed time grid costs O(K) per point after the
/// first visit. Gibbs targets are summed directly.
class CloudSemigroup {
public:
    CloudSemigroup(std::shared_ptr<const TargetDensity> target, std::shared_ptr<const PointCloud> cloud)
        : target_(std::move(target)), cloud_(std::move(cloud)) {
        if (!target_ || !cloud_) throw ConfigError("cloud semigroup needs a target and a cloud");
        if (cloud_->dim() != target_->dim) throw ConfigError("cloud and target dimensions differ");
        if (target_->kind != TargetKind::Gibbs) {
            projections_.resize(static_cast<Eigen::Index>(target_->means.size()), cloud_->size());
            for (std::size_t i = 0; i < target_->means.size(); ++i)
                projections_.row(static_cast<Eigen::Index>(i)) = target_->means[i].transpose() * cloud_->points;
        }
    }

    const TargetDensity& target() const { return *target_; }
    const PointCloud& cloud() const { return *cloud_; }

    DensityValue evaluate(const VectorXd& x, double t) const {
        detail::check_dim(*target_, x);
        if (target_->kind == TargetKind::Gibbs) return direct_sum(x, t);
        const VectorXd logs = log_terms(x, t);
        DensityValue out{0.0, VectorXd::Zero(target_->dim)};
        for (Eigen::Index i = 0; i < logs.size(); ++i) {
            const double term = std::exp(logs[i]);
            out.value += term;
            out.gradient += term * target_->means[static_cast<std::size_t>(i)];
        }
        return out;
    }

    /// log of each mixture term w_i exp(m_i.x - |m_i|^2/2) S_i(t) (Gaussian kinds).
    VectorXd log_terms(const VectorXd& x, double t) const {
        const std::vector<double>& log_s = log_sample_mgf(t);
        VectorXd logs(static_cast<Eigen::Index>(log_s.size()));
        for (std::size_t i = 0; i < log_s.size(); ++i) {
            const VectorXd& m = target_->means[i];
            logs[static_cast<Eigen::Index>(i)] =
                std::log(target_->weights[i]) + m.dot(x) - 0.5 * m.squaredNorm() + log_s[i];
        }
        return logs;
    }

    /// Unfactored reference evaluation; O(N d) per call.
    DensityValue direct_sum(const VectorXd& x, double t) const {
        const double root_t = std::sqrt(t);
        const Eigen::Index n = cloud_->size();
        DensityValue out{0.0, VectorXd::Zero(target_->dim)};
        VectorXd y(target_->dim);
        for (Eigen::Index j = 0; j < n; ++j) {
            y = x + root_t * cloud_->points.col(j);
            const DensityValue v = density_ratio(*target_, y);
            out.value += v.value;
            out.gradient += v.gradient;
        }
        out.value /= static_cast<double>(n);
        out.gradient /= static_cast<double>(n);
        return out;
    }

private:
    const std::vector<double>& log_sample_mgf(double t) const {
        const auto key = std::bit_cast<std::uint64_t>(t);
        {
            std::lock_guard lock(cache_mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        }
        const double root_t = std::sqrt(t);
        const double log_n = std::log(static_cast<double>(cloud_->size()));
        std::vector<double> values(static_cast<std::size_t>(projections_.rows()));
        for (Eigen::Index i = 0; i < projections_.rows(); ++i) {
            const auto scaled = (root_t * projections_.row(i).array()).eval();
            const double hi = scaled.maxCoeff();
            values[static_cast<std::size_t>(i)] = hi + std::log((scaled - hi).exp().sum()) - log_n;
        }
        std::lock_guard lock(cache_mutex_);
        // References into an unordered_map stay valid across rehashing.
        return cache_.try_emplace(key, std::move(values)).first->second;
    }

    std::shared_ptr<const TargetDensity> target_;
    std::shared_ptr<const PointCloud> cloud_;
    Eigen::MatrixXd projections_;  // K x N, row i holds m_i . z_n
    mutable std::mutex cache_mutex_;
    mutable std::unordered_map<std::uint64_t, std::vector<double>> cache_;
};

/// Time values of the validation grid: 0, 0.1, ..., 1.
inline std::vector<double> validation_times() {
    std::vector<double> ts;
    for (int k = 0; k <= 10; ++k) ts.push_back(k / 10.0);
    return ts;
}

inline constexpr int kDefaultGridResolution = 9;
inline constexpr std::size_t kMaxGridPoints = 100'000;

/// Tensor grid on [-R, R]^d restricted to the closed ball B(R). A resolution of
/// one puts the single node at the origin. The per-axis count shrinks until the
/// full tensor grid has at most 1e5 nodes.
inline std::vector<VectorXd> validation_grid(int dim, double radius, int resolution) {
    if (dim <= 0) throw ConfigError("grid dimension must be positive");
    if (resolution < 1) throw DomainError("grid resolution must be at least 1");
    if (!(radius >= 0.0)) throw DomainError("grid radius must be nonnegative");
    int per_axis = resolution;
    while (per_axis > 1 && std::pow(static_cast<double>(per_axis), dim) > static_cast<double>(kMaxGridPoints))
        --per_axis;
    std::vector<double> axis(static_cast<std::size_t>(per_axis));
    for (int k = 0; k < per_axis; ++k)
        axis[static_cast<std::size_t>(k)] = per_axis == 1 ? 0.0 : -radius + 2.0 * radius * k / (per_axis - 1);

    std::vector<VectorXd> grid;
    std::vector<int> index(static_cast<std::size_t>(dim), 0);
    const double limit = radius * radius * (1.0 + 1e-12);
    for (;;) {
        VectorXd x(dim);
        for (int i = 0; i < dim; ++i) x[i] = axis[static_cast<std::size_t>(index[static_cast<std::size_t>(i)])];
        if (x.squaredNorm() <= limit) grid.push_back(std::move(x));
        int i = 0;
        while (i < dim && ++index[static_cast<std::size_t>(i)] == per_axis) index[static_cast<std::size_t>(i++)] = 0;
        if (i == dim) break;
    }
    return grid;
}

struct SupErrors {
    double value_err = 0.0;
    double grad_err = 0.0;
    std::size_t grid_points = 0;
};

/// Grid maxima of |cloud average - Q_t f| and |cloud gradient - grad Q_t f|
/// over B(R) x {0, 0.1, ..., 1}. A sup over a grid, not the true supremum.
inline SupErrors cloud_sup_error(const CloudSemigroup& semigroup, double radius,
                                 int grid_resolution = kDefaultGridResolution) {
    const TargetDensity& target = semigroup.target();
    if (!target.has_analytic_semigroup())
        throw UnsupportedOracle("cloud validation needs a closed-form heat semigroup for this target");
    const auto grid = validation_grid(target.dim, radius, grid_resolution);
    SupErrors err;
    for (double t : validation_times()) {
        for (const auto& x : grid) {
            const DensityValue approx = semigroup.evaluate(x, t);
            const DensityValue exact = heat_semigroup(target, x, t);
            err.value_err = std::max(err.value_err, std::abs(approx.value - exact.value));
            err.grad_err = std::max(err.grad_err, (approx.gradient - exact.gradient).norm());
            ++err.grid_points;
        }
    }
    return err;
}

inline SupErrors cloud_sup_error(const PointCloud& cloud, const TargetDensity& target, double radius,
                                 int grid_resolution = kDefaultGridResolution) {
    if (!target.has_analytic_semigroup())
        throw UnsupportedOracle("cloud validation needs a closed-form heat semigroup for this target");
    const CloudSemigroup semigroup(std::make_shared<const TargetDensity>(target),
                                   std::make_shared<const PointCloud>(cloud));
    return cloud_sup_error(semigroup, radius, grid_resolution);
}

/// Initial cloud size ceil(16 d L^2 max(R,1)^2 / eps^2), at least one point.
inline Eigen::Index initial_cloud_size(const TargetDensity& target, double eps, double radius) {
    const double r = std::max(radius, 1.0);
    const double n = std::ceil(16.0 * target.dim * target.lipschitz_L * target.lipschitz_L * r * r / (eps * eps));
    if (!(n < 1e12)) throw ConfigError("requested cloud accuracy needs an unrealistic number of points");
    return std::max<Eigen::Index>(1, static_cast<Eigen::Index>(n));
}

inline constexpr int kCloudRetries = 6;

/// Draws clouds until one passes grid validation (both sup errors <= eps and
/// the radius constraint); the size doubles and the stream advances on each
/// failure, with at most kCloudRetries retries.
inline PointCloud build_point_cloud(const TargetDensity& target, double eps, double radius, std::uint64_t seed,
                                    int grid_resolution = kDefaultGridResolution) {
    if (!(eps > 0.0)) throw DomainError("cloud accuracy eps must be positive");
    if (!(radius > 0.0)) throw DomainError("cloud radius R must be positive");
    if (!target.has_analytic_semigroup())
        throw UnsupportedOracle("cloud validation needs a closed-form heat semigroup for this target");

    auto target_ptr = std::make_shared<const TargetDensity>(target);
    Eigen::Index n = initial_cloud_size(target, eps, radius);
    SupErrors last;
    for (int attempt = 0; attempt <= kCloudRetries; ++attempt) {
        auto cloud = std::make_shared<PointCloud>(sample_point_cloud(target.dim, n, seed, attempt));
        cloud->target_eps = eps;
        cloud->valid_radius = radius;
        cloud->attempts = attempt + 1;
        const CloudSemigroup semigroup(target_ptr, cloud);
        last = cloud_sup_error(semigroup, radius, grid_resolution);
        cloud->sup_value_err = last.value_err;
        cloud->sup_grad_err = last.grad_err;
        if (cloud->radius_ok() && last.value_err <= eps && last.grad_err <= eps) return *cloud;
        n *= 2;
    }
    std::ostringstream msg;
    msg << "point cloud failed validation after " << kCloudRetries << " retries (sup value error "
        << last.value_err << ", sup gradient error " << last.grad_err << ", eps " << eps << ")";
    throw ApproximationFailure(msg.str(), last.value_err, last.grad_err);
}

/// One point per row under the header z_0,...,z_{d-1}.
inline void write_point_cloud_csv(std::ostream& out, const PointCloud& cloud) {
    for (int i = 0; i < cloud.dim(); ++i) out << (i ? "," : "") << "z_" << i;
    out << '\n';
    char buf[32];
    for (Eigen::Index j = 0; j < cloud.size(); ++j) {
        for (int i = 0; i < cloud.dim(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", cloud.points(i, j));
            out << (i ? "," : "") << buf;
        }
        out << '\n';
    }
}

inline PointCloud read_point_cloud_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("point cloud CSV is empty");
    int dim = 0;
    {
        std::istringstream header(line);
        std::string cell;
        while (std::getline(header, cell, ',')) {
            if (cell != "z_" + std::to_string(dim)) throw ConfigError("unexpected point cloud header cell '" + cell + "'");
            ++dim;
        }
    }
    if (dim == 0) throw ConfigError("point cloud CSV header has no columns");
    std::vector<double> values;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        int cols = 0;
        while (std::getline(row, cell, ',')) {
            values.push_back(std::stod(cell));
            ++cols;
        }
        if (cols != dim) throw ConfigError("point cloud row has " + std::to_string(cols) + " columns");
    }
    if (values.empty()) throw ConfigError("point cloud CSV has no points");
    PointCloud cloud;
    const auto n = static_cast<Eigen::Index>(values.size() / static_cast<std::size_t>(dim));
    cloud.points = Eigen::Map<Eigen::MatrixXd>(values.data(), dim, n);
    cloud.radius_bound = cloud.points.colwise().norm().maxCoeff();
    return cloud;
}

}  // namespace latentdiff
