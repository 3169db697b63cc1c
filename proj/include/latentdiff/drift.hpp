#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "latentdiff/errors.hpp"

namespace latentdiff {

using Eigen::VectorXd;

/// A time-dependent vector field b(x, t) together with declared bounds.
///
/// `soft_bound` marks fields whose constants were measured on a reference ball
/// rather than proven globally (unbounded OU drifts, Gaussian-obs controls).
struct DriftField {
    using Eval = std::function<void(const Eigen::Ref<const VectorXd>& x, double t, Eigen::Ref<VectorXd> out)>;

    Eval eval;
    double sup_norm = 0.0;
    double lip_x = 0.0;
    double holder_t = 0.0;
    int dim = 0;
    bool soft_bound = false;
    bool constant_in_space = false;  // b(x,t) does not depend on x
    std::string label;

    VectorXd operator()(const VectorXd& x, double t) const {
        VectorXd out(dim);
        eval(x, t, out);
        return out;
    }

    /// max(lip_x, holder_t): the single constant L_b with
    /// |b(x,s) - b(y,t)| <= L_b (|x-y| + |s-t|^{1/2}).
    double lipschitz_b() const { return std::max(lip_x, holder_t); }
};

/// Reference ball over which unbounded fields report their sup norm.
inline constexpr double kSoftBoundRadius = 10.0;

inline DriftField zero_drift(int dim) {
    if (dim <= 0) throw ConfigError("drift dimension must be positive");
    DriftField b;
    b.dim = dim;
    b.constant_in_space = true;
    b.label = "zero";
    b.eval = [](const Eigen::Ref<const VectorXd>&, double, Eigen::Ref<VectorXd> out) { out.setZero(); };
    return b;
}

inline DriftField constant_drift(const VectorXd& v) {
    if (v.size() <= 0 || !v.allFinite()) throw ConfigError("constant drift needs a finite non-empty vector");
    DriftField b;
    b.dim = static_cast<int>(v.size());
    b.sup_norm = v.norm();
    b.constant_in_space = true;
    b.label = "const";
    b.eval = [v](const Eigen::Ref<const VectorXd>&, double, Eigen::Ref<VectorXd> out) { out = v; };
    return b;
}

/// b(x, t) = -theta x. Unbounded, so the sup norm is the max over B(10).
inline DriftField ou_drift(double theta, int dim) {
    if (dim <= 0) throw ConfigError("drift dimension must be positive");
    if (!std::isfinite(theta)) throw ConfigError("ou theta must be finite");
    DriftField b;
    b.dim = dim;
    b.sup_norm = std::abs(theta) * kSoftBoundRadius;
    b.lip_x = std::abs(theta);
    b.soft_bound = theta != 0.0;
    b.label = "ou";
    b.eval = [theta](const Eigen::Ref<const VectorXd>& x, double, Eigen::Ref<VectorXd> out) { out = -theta * x; };
    return b;
}

/// b(x, t) = alpha(t) v: a purely time-dependent drift. X_1 - x0 - W_1 = v int alpha.
inline DriftField time_profile_drift(const VectorXd& v, std::function<double(double)> alpha, double alpha_sup,
                                     std::string label = "profile") {
    DriftField b;
    b.dim = static_cast<int>(v.size());
    b.sup_norm = alpha_sup * v.norm();
    b.constant_in_space = true;
    b.soft_bound = true;  // no Holder constant is known for an arbitrary profile
    b.label = std::move(label);
    b.eval = [v, alpha = std::move(alpha)](const Eigen::Ref<const VectorXd>&, double t, Eigen::Ref<VectorXd> out) {
        out = alpha(t) * v;
    };
    return b;
}

}  // namespace latentdiff
