#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "latentdiff/control.hpp"
#include "latentdiff/drift.hpp"
#include "latentdiff/errors.hpp"
#include "latentdiff/follmer.hpp"
#include "latentdiff/point_cloud.hpp"
#include "latentdiff/targets.hpp"
#include "latentdiff/unbiased.hpp"

// Parsers for the spec strings shared by the CLI and config files:
//   targets   gauss:m=1,0   mix:w=0.5,0.5;m1=1,0;m2=-1,0   gibbs:A=2;x0=0,0
//   drifts    follmer:<target>   const:v=0.5,0   ou:theta=1   zero
//   meshes    exp:lambda=1   uniform:T=1.5
//   controls  const-shift:phi=0.5   ou:A=diag(1,2)   optimal:y=0   zero
//   g         x   x2   sum   sumsq

namespace latentdiff {

/// Points in the Gibbs Foellmer-drift cloud (no closed form to validate against).
inline constexpr Eigen::Index kGibbsCloudPoints = 4096;

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

inline double parse_real(std::string_view s, const std::string& what) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty() || !std::isfinite(v))
        throw ConfigError(what + ": '" + std::string(s) + "' is not a finite number");
    return v;
}

inline VectorXd parse_vector(std::string_view s, const std::string& what) {
    std::vector<double> vals;
    std::size_t start = 0;
    for (;;) {
        const auto comma = s.find(',', start);
        vals.push_back(parse_real(s.substr(start, comma - start), what));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return Eigen::Map<const VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

struct SpecParts {
    std::string kind;
    std::map<std::string, std::string> params;
};

// "kind:k1=v1;k2=v2" -> kind and the key/value map.
inline SpecParts split_spec(std::string_view spec, const std::string& what) {
    SpecParts out;
    spec = trim(spec);
    const auto colon = spec.find(':');
    out.kind = std::string(trim(spec.substr(0, colon)));
    if (out.kind.empty()) throw ConfigError(what + ": empty spec");
    if (colon == std::string_view::npos) return out;
    std::string_view rest = spec.substr(colon + 1);
    std::size_t start = 0;
    for (;;) {
        const auto semi = rest.find(';', start);
        const auto item = trim(rest.substr(start, semi - start));
        if (!item.empty()) {
            const auto eq = item.find('=');
            if (eq == std::string_view::npos)
                throw ConfigError(what + ": expected key=value, got '" + std::string(item) + "'");
            const std::string key(trim(item.substr(0, eq)));
            if (!out.params.emplace(key, std::string(trim(item.substr(eq + 1)))).second)
                throw ConfigError(what + ": duplicate key '" + key + "'");
        }
        if (semi == std::string_view::npos) break;
        start = semi + 1;
    }
    return out;
}

inline const std::string& require(const SpecParts& p, const std::string& key, const std::string& what) {
    const auto it = p.params.find(key);
    if (it == p.params.end()) throw ConfigError(what + ": missing '" + key + "'");
    return it->second;
}

inline void allow_only(const SpecParts& p, std::initializer_list<std::string_view> keys, const std::string& what) {
    for (const auto& [k, v] : p.params) {
        bool ok = false;
        for (auto allowed : keys) ok = ok || k == allowed;
        if (!ok) throw ConfigError(what + ": unknown key '" + k + "'");
    }
}

}  // namespace detail

inline TargetDensity parse_target(std::string_view spec) {
    const std::string what = "target '" + std::string(spec) + "'";
    const auto p = detail::split_spec(spec, what);
    if (p.kind == "gauss") {
        detail::allow_only(p, {"m"}, what);
        return TargetDensity::shifted_gaussian(detail::parse_vector(detail::require(p, "m", what), what));
    }
    if (p.kind == "mix") {
        const VectorXd w = detail::parse_vector(detail::require(p, "w", what), what);
        std::vector<double> weights(w.data(), w.data() + w.size());
        std::vector<VectorXd> means;
        for (Eigen::Index i = 1; i <= w.size(); ++i)
            means.push_back(detail::parse_vector(detail::require(p, "m" + std::to_string(i), what), what));
        if (p.params.size() != static_cast<std::size_t>(w.size()) + 1)
            throw ConfigError(what + ": expected keys w, m1..m" + std::to_string(w.size()));
        return TargetDensity::gaussian_mixture(std::move(weights), std::move(means));
    }
    if (p.kind == "gibbs") {
        detail::allow_only(p, {"A", "x0"}, what);
        return TargetDensity::gibbs(detail::parse_real(detail::require(p, "A", what), what),
                                    detail::parse_vector(detail::require(p, "x0", what), what));
    }
    throw ConfigError(what + ": unknown target kind '" + p.kind + "' (gauss, mix, gibbs)");
}

/// `dim` sizes the kinds that carry no vector (ou, zero); 0 means unknown.
inline DriftField parse_drift(std::string_view spec, int dim, std::uint64_t seed = 0) {
    const std::string what = "drift '" + std::string(spec) + "'";
    const auto trimmed = detail::trim(spec);
    if (trimmed.starts_with("follmer:")) {
        const TargetDensity target = parse_target(trimmed.substr(8));
        if (dim > 0 && target.dim != dim) throw ConfigError(what + ": target dimension differs from x0");
        if (target.has_analytic_semigroup()) return follmer_drift(target);
        auto cloud = std::make_shared<const PointCloud>(sample_point_cloud(target.dim, kGibbsCloudPoints, seed));
        return follmer_drift(std::make_shared<const TargetDensity>(target), cloud);
    }
    const auto p = detail::split_spec(spec, what);
    auto need_dim = [&] {
        if (dim <= 0) throw ConfigError(what + ": dimension unknown; give x0");
        return dim;
    };
    if (p.kind == "zero") {
        detail::allow_only(p, {}, what);
        return zero_drift(need_dim());
    }
    if (p.kind == "const") {
        detail::allow_only(p, {"v"}, what);
        const VectorXd v = detail::parse_vector(detail::require(p, "v", what), what);
        if (dim > 0 && v.size() != dim) throw ConfigError(what + ": v dimension differs from x0");
        return constant_drift(v);
    }
    if (p.kind == "ou") {
        detail::allow_only(p, {"theta"}, what);
        return ou_drift(detail::parse_real(detail::require(p, "theta", what), what), need_dim());
    }
    throw ConfigError(what + ": unknown drift kind '" + p.kind + "' (follmer, const, ou, zero)");
}

inline InterrenewalDistribution parse_mesh(std::string_view spec) {
    const std::string what = "mesh '" + std::string(spec) + "'";
    const auto p = detail::split_spec(spec, what);
    if (p.kind == "exp") {
        detail::allow_only(p, {"lambda"}, what);
        return InterrenewalDistribution::exponential(detail::parse_real(detail::require(p, "lambda", what), what));
    }
    if (p.kind == "uniform") {
        detail::allow_only(p, {"T"}, what);
        return InterrenewalDistribution::uniform(detail::parse_real(detail::require(p, "T", what), what));
    }
    throw ConfigError(what + ": unknown mesh kind '" + p.kind + "' (exp, uniform)");
}

inline ScalarFunction parse_g(std::string_view spec) {
    const auto s = detail::trim(spec);
    if (s == "x") return {ScalarFunction::Kind::First};
    if (s == "x2") return {ScalarFunction::Kind::FirstSquared};
    if (s == "sum") return {ScalarFunction::Kind::Sum};
    if (s == "sumsq") return {ScalarFunction::Kind::SumSquares};
    throw ConfigError("g '" + std::string(spec) + "': unknown function (x, x2, sum, sumsq)");
}

inline ControlField parse_control(std::string_view spec, const DriftField& base) {
    const std::string what = "control '" + std::string(spec) + "'";
    const auto p = detail::split_spec(spec, what);
    if (p.kind == "zero") {
        detail::allow_only(p, {}, what);
        return zero_control(base.dim);
    }
    if (p.kind == "const-shift") {
        detail::allow_only(p, {"phi"}, what);
        return constant_shift_control(detail::parse_vector(detail::require(p, "phi", what), what), base);
    }
    if (p.kind == "ou") {
        detail::allow_only(p, {"A"}, what);
        std::string_view a = detail::trim(detail::require(p, "A", what));
        if (!a.starts_with("diag(") || !a.ends_with(")")) throw ConfigError(what + ": A must be written diag(...)");
        a.remove_prefix(5);
        a.remove_suffix(1);
        return ou_linear_control(detail::parse_vector(a, what), base);
    }
    if (p.kind == "optimal") {
        detail::allow_only(p, {"y"}, what);
        const VectorXd y = detail::parse_vector(detail::require(p, "y", what), what);
        if (y.size() != base.dim) throw ConfigError(what + ": y dimension differs from the base drift");
        return optimal_gaussian_control(y);
    }
    throw ConfigError(what + ": unknown control kind '" + p.kind + "' (const-shift, ou, optimal, zero)");
}

}  // namespace latentdiff
