#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "latentdiff/control.hpp"
#include "latentdiff/errors.hpp"
#include "latentdiff/follmer.hpp"
#include "latentdiff/point_cloud.hpp"
#include "latentdiff/rng.hpp"
#include "latentdiff/sde.hpp"
#include "latentdiff/specs.hpp"
#include "latentdiff/stats.hpp"
#include "latentdiff/targets.hpp"
#include "latentdiff/unbiased.hpp"

#ifndef LATENTDIFF_BUILD_ID
#define LATENTDIFF_BUILD_ID "unknown"
#endif

namespace latentdiff {

using json = nlohmann::json;

inline constexpr std::string_view kBuildId = LATENTDIFF_BUILD_ID;

/// Round-trippable number formatting, so reports are byte-stable.
inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
inline std::string fmt(std::int64_t v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }

inline std::string fmt_vector(const VectorXd& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) s += ' ';
        s += fmt(v[i]);
    }
    return s;
}

/// A CSV table: fixed header per experiment kind, provenance columns last.
struct Report {
    std::string kind;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw std::out_of_range("report has no column '" + name + "'");
    }
    const std::string& cell(std::size_t row, const std::string& name) const { return rows.at(row).at(column(name)); }
    double number(std::size_t row, const std::string& name) const { return std::strtod(cell(row, name).c_str(), nullptr); }

    std::string csv() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) out += ',';
                const bool quote = cells[i].find_first_of(",\"\n") != std::string::npos;
                if (!quote) {
                    out += cells[i];
                    continue;
                }
                out += '"';
                for (char c : cells[i]) {
                    if (c == '"') out += '"';
                    out += c;
                }
                out += '"';
            }
            out += '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out;
    }
};

namespace detail {

// Reads the fields of one config table, collecting problems with their paths.
class Fields {
public:
    Fields(const json& table, std::string path, std::vector<std::string>& issues)
        : table_(table), path_(std::move(path)), issues_(issues) {
        if (!table_.is_object()) problem("", "must be a table");
    }

    bool has(const std::string& key) const { return table_.is_object() && table_.contains(key); }

    std::string str(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
        used_.insert(key);
        if (!has(key)) {
            if (!fallback) problem(key, "is required");
            return fallback.value_or("");
        }
        const auto& v = table_.at(key);
        if (!v.is_string()) {
            problem(key, "must be a string");
            return fallback.value_or("");
        }
        return v.get<std::string>();
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t min_value) {
        used_.insert(key);
        if (!has(key)) return fallback;
        const auto& v = table_.at(key);
        if (!v.is_number_integer()) {
            problem(key, "must be an integer");
            return fallback;
        }
        const auto x = v.get<std::int64_t>();
        if (x < min_value) {
            problem(key, "must be >= " + std::to_string(min_value));
            return fallback;
        }
        return x;
    }

    double real(const std::string& key, std::optional<double> fallback = std::nullopt) {
        used_.insert(key);
        if (!has(key)) {
            if (!fallback) problem(key, "is required");
            return fallback.value_or(0.0);
        }
        const auto& v = table_.at(key);
        if (!v.is_number() || !std::isfinite(v.get<double>())) {
            problem(key, "must be a finite number");
            return fallback.value_or(0.0);
        }
        return v.get<double>();
    }

    bool boolean(const std::string& key, bool fallback) {
        used_.insert(key);
        if (!has(key)) return fallback;
        const auto& v = table_.at(key);
        if (!v.is_boolean()) {
            problem(key, "must be true or false");
            return fallback;
        }
        return v.get<bool>();
    }

    /// A list of numbers; a bare number is a list of one.
    std::vector<double> reals(const std::string& key, std::optional<std::vector<double>> fallback = std::nullopt) {
        used_.insert(key);
        if (!has(key)) {
            if (!fallback) problem(key, "is required");
            return fallback.value_or(std::vector<double>{});
        }
        const auto& v = table_.at(key);
        if (v.is_number()) return {v.get<double>()};
        std::vector<double> out;
        if (!v.is_array() || v.empty()) {
            problem(key, "must be a number or a non-empty list of numbers");
            return out;
        }
        for (const auto& e : v) {
            if (!e.is_number() || !std::isfinite(e.get<double>())) {
                problem(key, "must contain finite numbers only");
                return {};
            }
            out.push_back(e.get<double>());
        }
        return out;
    }

    std::optional<VectorXd> vector(const std::string& key) {
        if (!has(key)) {
            used_.insert(key);
            return std::nullopt;
        }
        const auto v = reals(key);
        if (v.empty()) return std::nullopt;
        return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

    std::vector<std::string> strings(const std::string& key, std::optional<std::vector<std::string>> fallback) {
        used_.insert(key);
        if (!has(key)) {
            if (!fallback) problem(key, "is required");
            return fallback.value_or(std::vector<std::string>{});
        }
        const auto& v = table_.at(key);
        if (v.is_string()) return {v.get<std::string>()};
        std::vector<std::string> out;
        if (!v.is_array() || v.empty()) {
            problem(key, "must be a string or a non-empty list of strings");
            return out;
        }
        for (const auto& e : v) {
            if (!e.is_string()) {
                problem(key, "must contain strings only");
                return {};
            }
            out.push_back(e.get<std::string>());
        }
        return out;
    }

    template <class F>
    auto parse(const std::string& key, F&& f) -> std::optional<decltype(f())> {
        try {
            return f();
        } catch (const ConfigError& e) {
            problem(key, e.what());
        } catch (const DomainError& e) {
            problem(key, e.what());
        }
        return std::nullopt;
    }

    void problem(const std::string& key, const std::string& msg) {
        issues_.push_back((key.empty() ? path_ : path_ + "." + key) + ": " + msg);
    }

    void finish() {
        if (!table_.is_object()) return;
        for (const auto& [k, v] : table_.items())
            if (!used_.count(k)) problem(k, "unknown key");
    }

private:
    const json& table_;
    std::string path_;
    std::vector<std::string>& issues_;
    std::set<std::string> used_;
};

inline void throw_if(const std::vector<std::string>& issues) {
    if (!issues.empty()) throw ValidationError(issues);
}

// Known E[g(X_1)] for drifts with closed-form terminal laws (Gaussian X_1).
inline std::optional<double> reference_value(const std::string& drift_spec, const ScalarFunction& g,
                                             const VectorXd& x0) {
    const auto s = trim(drift_spec);
    VectorXd mean;
    VectorXd var;
    const auto d = x0.size();
    if (s == "zero") {
        mean = x0;
        var = VectorXd::Ones(d);
    } else if (s.starts_with("const:")) {
        mean = x0 + parse_vector(split_spec(s, "drift").params.at("v"), "drift");
        var = VectorXd::Ones(d);
    } else if (s.starts_with("ou:")) {
        const double th = parse_real(split_spec(s, "drift").params.at("theta"), "drift");
        mean = x0 * std::exp(-th);
        const double v = th == 0.0 ? 1.0 : -std::expm1(-2.0 * th) / (2.0 * th);
        var = VectorXd::Constant(d, v);
    } else if (s.starts_with("follmer:gauss:")) {
        const TargetDensity t = parse_target(s.substr(8));
        mean = x0 + t.means.front();
        var = VectorXd::Ones(d);
    } else {
        return std::nullopt;
    }
    switch (g.kind) {
        case ScalarFunction::Kind::First: return mean[0];
        case ScalarFunction::Kind::FirstSquared: return mean[0] * mean[0] + var[0];
        case ScalarFunction::Kind::Sum: return mean.sum();
        case ScalarFunction::Kind::SumSquares: return mean.squaredNorm() + var.sum();
    }
    return std::nullopt;
}

inline void append_provenance(Report& r, std::uint64_t seed, bool with_seed = true) {
    if (with_seed) r.header.push_back("seed");
    r.header.push_back("build");
    r.header.push_back("rng");
    for (auto& row : r.rows) {
        if (with_seed) row.push_back(fmt(seed));
        row.emplace_back(kBuildId);
        row.emplace_back(kRngMethodTag);
    }
}

}  // namespace detail

/// Top-level settings shared by every experiment.
struct RunSettings {
    std::string experiment;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string out;
};

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds{"sample", "unbiased", "mgf", "variance-sweep",
                                                "kl",     "vi",       "cloud", "check"};
    return kinds;
}

/// Validates the top level; per-experiment tables are validated when run.
inline RunSettings parse_settings(const json& config, std::vector<std::string>& issues) {
    RunSettings s;
    detail::Fields top(config, "config", issues);
    s.experiment = top.str("experiment");
    if (!s.experiment.empty() &&
        std::find(experiment_kinds().begin(), experiment_kinds().end(), s.experiment) == experiment_kinds().end())
        top.problem("experiment", "unknown experiment '" + s.experiment + "'");
    if (!top.has("seed")) {
        top.problem("seed", "is required");
    } else if (!config.at("seed").is_number_unsigned() && !(config.at("seed").is_number_integer() &&
                                                             config.at("seed").get<std::int64_t>() >= 0)) {
        top.problem("seed", "must be a nonnegative integer");
    } else {
        s.seed = config.at("seed").get<std::uint64_t>();
    }
    s.workers = static_cast<int>(top.integer("workers", 1, 1));
    s.out = top.str("out", "");
    if (config.is_object())
        for (const auto& [k, v] : config.items())
            if (k != "experiment" && k != "seed" && k != "workers" && k != "out" &&
                std::find(experiment_kinds().begin(), experiment_kinds().end(), k) == experiment_kinds().end())
                issues.push_back("config." + k + ": unknown key");
    return s;
}

namespace detail {

// The table named after the experiment, or an empty one.
inline const json& experiment_table(const json& config, const std::string& kind) {
    static const json empty = json::object();
    if (config.is_object() && config.contains(kind)) return config.at(kind);
    return empty;
}

inline VectorXd start_point(Fields& f, std::optional<int> dim_hint) {
    if (auto x0 = f.vector("x0")) return *x0;
    return VectorXd::Zero(dim_hint.value_or(1));
}

// Dimension carried by a drift spec itself (const, follmer), if any.
inline std::optional<int> spec_dim(const std::string& drift_spec) {
    try {
        return parse_drift(drift_spec, 0).dim;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// ---- sample ------------------------------------------------------------------

inline Report run_sample(const json& table, const RunSettings& s) {
    std::vector<std::string> issues;
    Fields f(table, "sample", issues);
    const bool has_target = f.has("target");
    const std::string target_spec = has_target ? f.str("target") : "";
    const std::string drift_spec = has_target ? "follmer:" + target_spec : f.str("drift", "");
    if (!has_target && drift_spec.empty()) f.problem("target", "give a target or a drift");
    const int steps = static_cast<int>(f.integer("steps", 200, 1));
    const auto runs = f.integer("runs", 100'000, 2);
    const std::string path_out = f.str("path_out", "");
    std::optional<TargetDensity> target;
    if (has_target) target = f.parse("target", [&] { return parse_target(target_spec); });
    std::optional<int> dim = has_target ? std::nullopt : spec_dim(drift_spec);
    if (target) dim = target->dim;
    const VectorXd x0 = start_point(f, dim);
    std::optional<DriftField> drift;
    if (!drift_spec.empty())
        drift = f.parse(has_target ? "target" : "drift", [&] { return parse_drift(drift_spec, static_cast<int>(x0.size()), s.seed); });
    f.finish();
    throw_if(issues);

    const Eigen::MatrixXd xs = simulate_terminal_batch(*drift, steps, x0, runs, s.seed, s.workers);
    const int d = drift->dim;
    std::optional<VectorXd> mu;
    std::optional<Eigen::MatrixXd> cov;
    if (target && target->has_analytic_semigroup() && target->kind != TargetKind::Gibbs) {
        mu = x0 + target->law_mean();
        cov = target->law_covariance();
    }
    Report r;
    r.kind = "sample";
    r.header = {"stat", "i", "j", "estimate", "stderr", "analytic", "z", "steps", "runs"};
    std::vector<MCStats> means(static_cast<std::size_t>(d));
    for (Eigen::Index n = 0; n < xs.cols(); ++n)
        for (int i = 0; i < d; ++i) means[static_cast<std::size_t>(i)].add(xs(i, n));
    auto row = [&](const std::string& stat, int i, std::optional<int> j, const MCStats& m, std::optional<double> exact) {
        std::vector<std::string> cells{stat, fmt(i), j ? fmt(*j) : "", fmt(m.mean), fmt(m.std_error())};
        if (exact) {
            cells.push_back(fmt(*exact));
            cells.push_back(fmt((m.mean - *exact) / m.std_error()));
        } else {
            cells.insert(cells.end(), {"", ""});
        }
        cells.push_back(fmt(steps));
        cells.push_back(fmt(runs));
        r.rows.push_back(std::move(cells));
    };
    for (int i = 0; i < d; ++i)
        row("mean", i, std::nullopt, means[static_cast<std::size_t>(i)],
            mu ? std::optional<double>((*mu)[i]) : std::nullopt);
    for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j) {
            MCStats c;
            const double mi = means[static_cast<std::size_t>(i)].mean;
            const double mj = means[static_cast<std::size_t>(j)].mean;
            for (Eigen::Index n = 0; n < xs.cols(); ++n) c.add((xs(i, n) - mi) * (xs(j, n) - mj));
            // Unbias the centred products: sum/(n-1) rather than sum/n.
            const double scale = static_cast<double>(runs) / static_cast<double>(runs - 1);
            c.mean *= scale;
            c.m2 *= scale * scale;
            row("cov", i, j, c, cov ? std::optional<double>((*cov)(i, j)) : std::nullopt);
        }
    }
    if (!path_out.empty()) {
        RngStream rng(s.seed, 1);
        const auto ts = uniform_partition(steps);
        std::ofstream out(path_out);
        if (!out) throw ConfigError("sample.path_out: cannot open '" + path_out + "'");
        write_path_csv(out, euler_maruyama(*drift, ts, x0, rng));
    }
    append_provenance(r, s.seed);
    return r;
}

// ---- unbiased ----------------------------------------------------------------

inline Report run_unbiased_experiment(const json& table, const RunSettings& s) {
    std::vector<std::string> issues;
    Fields f(table, "unbiased", issues);
    const std::string drift_spec = f.str("drift");
    const std::string g_spec = f.str("g", "x");
    const std::string mesh_spec = f.str("mesh");
    const auto runs = f.integer("runs", 1'000'000, 2);
    const VectorXd x0 = start_point(f, spec_dim(drift_spec));
    const auto drift = f.parse("drift", [&] { return parse_drift(drift_spec, static_cast<int>(x0.size()), s.seed); });
    const auto g = f.parse("g", [&] { return parse_g(g_spec); });
    const auto mesh = f.parse("mesh", [&] { return parse_mesh(mesh_spec); });
    if (drift && drift->dim != x0.size()) f.problem("x0", "dimension does not match the drift");
    f.finish();
    throw_if(issues);

    const EstimatorStats st = run_unbiased(*drift, *g, *mesh, x0, runs, s.seed, s.workers);
    const auto ref = reference_value(drift_spec, *g, x0);
    Report r;
    r.kind = "unbiased";
    r.header = {"drift", "g",        "dist",          "runs",   "mean",         "stderr", "var",
                "mean_N", "cv_mean", "cv_stderr", "analytic", "z"};
    std::vector<std::string> row{drift_spec,        g->label(),           mesh->label(),
                                 fmt(runs),         fmt(st.psi.mean),     fmt(st.psi.std_error()),
                                 fmt(st.psi.variance()), fmt(st.n_interior.mean), fmt(st.control_variate.mean),
                                 fmt(st.control_variate.std_error())};
    if (ref) {
        row.push_back(fmt(*ref));
        row.push_back(fmt((st.psi.mean - *ref) / st.psi.std_error()));
    } else {
        row.insert(row.end(), {"", ""});
    }
    r.rows.push_back(std::move(row));
    append_provenance(r, s.seed);
    return r;
}

// ---- mgf ---------------------------------------------------------------------

inline Report run_mgf(const json& table, const RunSettings& s) {
    std::vector<std::string> issues;
    Fields f(table, "mgf", issues);
    const auto mesh_specs = f.strings("mesh", std::nullopt);
    const auto thetas = f.reals("theta", std::vector<double>{1.0});
    const auto runs = f.integer("runs", 1'000'000, 2);
    std::vector<InterrenewalDistribution> meshes;
    for (const auto& m : mesh_specs)
        if (auto d = f.parse("mesh", [&] { return parse_mesh(m); })) meshes.push_back(*d);
    for (double th : thetas)
        if (!(th >= 0.0)) f.problem("theta", "must be >= 0");
    f.finish();
    throw_if(issues);

    Report r;
    r.kind = "mgf";
    r.header = {"dist", "theta", "bound", "bound_feasible", "closed_form", "beta", "empirical", "stderr", "runs",
                "mean_N"};
    for (const auto& dist : meshes) {
        for (double th : thetas) {
            const MgfBound b = mgf_bound(dist, th);
            const MCStats e = empirical_mgf(dist, th, runs, s.seed, s.workers);
            r.rows.push_back({dist.label(), fmt(th), fmt(b.value), fmt(b.feasible), fmt(b.closed_form), fmt(b.beta),
                              fmt(e.mean), fmt(e.std_error()), fmt(runs), fmt(dist.expected_count())});
        }
    }
    append_provenance(r, s.seed);
    return r;
}

// ---- variance-sweep ----------------------------------------------------------

inline Report run_variance_sweep(const json& table, const RunSettings& s) {
    std::vector<std::string> issues;
    Fields f(table, "variance-sweep", issues);
    const std::string drift_spec = f.str("drift", "ou:theta=1");
    const std::string g_spec = f.str("g", "x");
    const auto mesh_specs = f.strings("meshes", std::vector<std::string>{"exp:lambda=1", "uniform:T=1.5"});
    const auto dims_raw = f.reals("dims", std::vector<double>{1.0});
    const double x0_fill = f.real("x0", 1.0);
    const auto runs = f.integer("runs", 100'000, 2);
    const auto g = f.parse("g", [&] { return parse_g(g_spec); });

    std::vector<int> dims;
    for (double d : dims_raw) {
        if (!(d >= 1.0) || d != std::floor(d) || d > 64) {
            f.problem("dims", "must be integers in [1, 64]");
            break;
        }
        dims.push_back(static_cast<int>(d));
    }
    // "exp:lambda=matched" takes lambda = e^{1/T} - 1 from the first uniform mesh.
    std::optional<double> uniform_T;
    for (const auto& m : mesh_specs)
        if (detail::trim(m).starts_with("uniform:"))
            if (auto d = f.parse("meshes", [&] { return parse_mesh(m); }); d && !uniform_T) uniform_T = d->param;
    std::vector<InterrenewalDistribution> meshes;
    for (const auto& m : mesh_specs) {
        if (detail::trim(m) == "exp:lambda=matched") {
            if (!uniform_T) {
                f.problem("meshes", "exp:lambda=matched needs a uniform mesh in the same list");
                continue;
            }
            meshes.push_back(InterrenewalDistribution::exponential(std::expm1(1.0 / *uniform_T)));
            continue;
        }
        if (auto d = f.parse("meshes", [&] { return parse_mesh(m); })) meshes.push_back(*d);
    }
    for (int d : dims) f.parse("drift", [&] { return parse_drift(drift_spec, d, s.seed); });
    f.finish();
    throw_if(issues);

    Report r;
    r.kind = "variance-sweep";
    r.header = {"dist",  "theta_eff", "runs",  "mean",          "var",    "stderr",     "bound", "bound_valid",
                "seed",  "d",         "var_stderr", "second_moment", "second_moment_stderr", "mean_N", "kappa",
                "K",     "hypotheses"};
    for (int d : dims) {
        const DriftField drift = parse_drift(drift_spec, d, s.seed);
        const VectorXd x0 = VectorXd::Constant(d, x0_fill);
        for (const auto& dist : meshes) {
            const VarianceReport v = variance_report(drift, *g, dist, x0, runs, s.seed, s.workers);
            r.rows.push_back({v.dist, fmt(v.theta_eff), fmt(v.runs), fmt(v.mean), fmt(v.var), fmt(v.stderr_mean),
                              fmt(v.bound), fmt(v.bound_valid), fmt(v.seed), fmt(d), fmt(v.var_stderr),
                              fmt(v.second_moment), fmt(v.second_moment_stderr), fmt(v.mean_n), fmt(v.kappa),
                              fmt(v.K), v.hypotheses_verified ? "verified" : "hypotheses-not-verified"});
        }
    }
    append_provenance(r, s.seed, false);
    return r;
}

// ---- kl ----------------------------------------------------------------------

inline Report run_kl(const json& table, const RunSettings& s) {
    std::vector<std::string> issues;
    Fields f(table, "kl", issues);
    const std::string p_spec = f.str("p");
    const std::string q_spec = f.str("q");
    const int steps = static_cast<int>(f.integer("steps", 200, 1));
    const auto runs = f.integer("runs", 10'000, 2);
    const double eps = f.real("eps", 0.05);
    const double radius = f.real("R", 3.0);
    const int grid = static_cast<int>(f.integer("grid", kDefaultGridResolution, 1));
    const bool cloud_q = detail::trim(q_spec).starts_with("follmer-cloud:");
    std::optional<TargetDensity> cloud_target;
    if (cloud_q) cloud_target = f.parse("q", [&] { return parse_target(detail::trim(q_spec).substr(14)); });
    std::optional<int> dim = spec_dim(p_spec);
    if (cloud_target) dim = cloud_target->dim;
    const VectorXd x0 = start_point(f, dim);
    const int d = static_cast<int>(x0.size());
    const auto p = f.parse("p", [&] { return parse_drift(p_spec, d, s.seed); });
    std::optional<DriftField> q;
    if (!cloud_q) q = f.parse("q", [&] { return parse_drift(q_spec, d, s.seed); });
    if (cloud_q && !(eps > 0.0)) f.problem("eps", "must be positive");
    if (cloud_q && !(radius > 0.0)) f.problem("R", "must be positive");
    if (p && p->dim != d) f.problem("x0", "dimension does not match p");
    f.finish();
    throw_if(issues);

    std::optional<double> delta;
    std::optional<double> bound;
    std::optional<Eigen::Index> cloud_n;
    if (cloud_q) {
        auto cloud = std::make_shared<const PointCloud>(build_point_cloud(*cloud_target, eps, radius, s.seed, grid));
        cloud_n = cloud->size();
        q = follmer_drift(std::make_shared<const TargetDensity>(*cloud_target), cloud);
        delta = drift_sup_error(*p, *q, radius, grid);
        bound = cloud_kl_bound(*delta, p->sup_norm, q->sup_norm, d, radius);
    }
    const MCStats kl = girsanov_kl(*p, *q, x0, steps, runs, s.seed, s.workers);
    Report r;
    r.kind = "kl";
    r.header = {"p", "q", "steps", "runs", "kl", "stderr", "cloud_N", "eps", "R", "drift_sup_err", "bound"};
    r.rows.push_back({p_spec, q_spec, fmt(steps), fmt(runs), fmt(kl.mean), fmt(kl.std_error()),
                      cloud_n ? fmt(static_cast<std::int64_t>(*cloud_n)) : "", cloud_q ? fmt(eps) : "",
                      cloud_q ? fmt(radius) : "", delta ? fmt(*delta) : "", bound ? fmt(*bound) : ""});
    append_provenance(r, s.seed);
    return r;
}

// ---- vi ----------------------------------------------------------------------

inline Report run_vi(const json& table, const RunSettings& s) {
    std::vector<std::string> issues;
    Fields f(table, "vi", issues);
    const auto control_specs = f.strings("control", std::vector<std::string>{"optimal:y=0"});
    const std::string base_spec = f.str("base", "zero");
    const int steps = static_cast<int>(f.integer("steps", 200, 1));
    const auto runs = f.integer("runs", 100'000, 2);
    const bool line_search = f.boolean("line_search", false);
    const auto y_opt = f.vector("y");
    const VectorXd y = y_opt.value_or(VectorXd::Zero(1));
    const int d = static_cast<int>(y.size());
    const VectorXd x0 = start_point(f, d);
    if (x0.size() != d) f.problem("x0", "dimension does not match y");
    const auto base = f.parse("base", [&] { return parse_drift(base_spec, d, s.seed); });
    if (base && base->dim != d) f.problem("base", "dimension does not match y");
    std::vector<ControlField> controls;
    if (base && base->dim == d)
        for (const auto& c : control_specs)
            if (auto u = f.parse("control", [&] { return parse_control(c, *base); })) controls.push_back(*u);
    f.finish();
    throw_if(issues);

    const ObservationModel obs{d};
    const double exact = exact_nll_gaussian(obs, y, x0);
    Report r;
    r.kind = "vi";
    r.header = {"control", "y", "F_estimate", "stderr", "exact_nll", "gap", "steps", "runs"};
    auto add = [&](const std::string& label, const MCStats& st) {
        r.rows.push_back({label, fmt_vector(y), fmt(st.mean), fmt(st.std_error()), fmt(exact), fmt(st.mean - exact),
                          fmt(steps), fmt(runs)});
    };
    for (std::size_t i = 0; i < controls.size(); ++i)
        add(control_specs[i], free_energy(controls[i], *base, obs, y, x0, steps, runs, s.seed, s.workers));
    if (line_search) {
        const LineSearchResult ls = constant_shift_line_search(*base, obs, y, x0, steps, runs, s.seed, s.workers);
        for (const auto& h : ls.history) {
            r.rows.push_back({"const-shift:phi=" + fmt_vector(h.phi), fmt_vector(y), fmt(h.f_estimate),
                              fmt(h.stderr_f), fmt(exact), fmt(h.f_estimate - exact), fmt(steps), fmt(runs)});
        }
    }
    append_provenance(r, s.seed);
    return r;
}

// ---- cloud -------------------------------------------------------------------

inline Report run_cloud(const json& table, const RunSettings& s) {
    std::vector<std::string> issues;
    Fields f(table, "cloud", issues);
    const std::string target_spec = f.str("target");
    const double eps = f.real("eps", 0.05);
    const double radius = f.real("R", 3.0);
    const int grid = static_cast<int>(f.integer("grid", kDefaultGridResolution, 1));
    const std::string points_out = f.str("points_out", "");
    const auto target = f.parse("target", [&] { return parse_target(target_spec); });
    if (!(eps > 0.0)) f.problem("eps", "must be positive");
    if (!(radius > 0.0)) f.problem("R", "must be positive");
    if (target && !target->has_analytic_semigroup())
        f.problem("target", "cloud validation needs a closed-form heat semigroup (gauss or mix)");
    f.finish();
    throw_if(issues);

    const PointCloud cloud = build_point_cloud(*target, eps, radius, s.seed, grid);
    if (!points_out.empty()) {
        std::ofstream out(points_out);
        if (!out) throw ConfigError("cloud.points_out: cannot open '" + points_out + "'");
        write_point_cloud_csv(out, cloud);
    }
    Report r;
    r.kind = "cloud";
    r.header = {"target", "d", "N", "eps", "R", "grid", "sup_value_err", "sup_grad_err", "radius_bound",
                "radius_limit", "attempts"};
    r.rows.push_back({target_spec, fmt(target->dim), fmt(static_cast<std::int64_t>(cloud.size())), fmt(eps),
                      fmt(radius), fmt(grid), fmt(cloud.sup_value_err), fmt(cloud.sup_grad_err),
                      fmt(cloud.radius_bound), fmt(PointCloud::radius_limit(cloud.dim(), cloud.size())),
                      fmt(cloud.attempts)});
    append_provenance(r, s.seed);
    return r;
}

}  // namespace detail

/// Hook for the `check` experiment, installed by the acceptance suite.
inline std::function<Report(const json&, const RunSettings&)>& check_runner() {
    static std::function<Report(const json&, const RunSettings&)> runner;
    return runner;
}

/// Validates and runs one experiment. Validation problems throw ValidationError
/// listing every offending field; numerical failures propagate as their own types.
inline Report run_experiment(const json& config) {
    std::vector<std::string> issues;
    const RunSettings s = parse_settings(config, issues);
    detail::throw_if(issues);
    const json& table = detail::experiment_table(config, s.experiment);
    if (s.experiment == "sample") return detail::run_sample(table, s);
    if (s.experiment == "unbiased") return detail::run_unbiased_experiment(table, s);
    if (s.experiment == "mgf") return detail::run_mgf(table, s);
    if (s.experiment == "variance-sweep") return detail::run_variance_sweep(table, s);
    if (s.experiment == "kl") return detail::run_kl(table, s);
    if (s.experiment == "vi") return detail::run_vi(table, s);
    if (s.experiment == "cloud") return detail::run_cloud(table, s);
    if (!check_runner()) throw ConfigError("config.experiment: check is not available in this build");
    return check_runner()(table, s);
}

}  // namespace latentdiff
