#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "latentdiff/control.hpp"
#include "latentdiff/experiment.hpp"
#include "latentdiff/follmer.hpp"
#include "latentdiff/sde.hpp"
#include "latentdiff/targets.hpp"

namespace latentdiff {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    std::string csv;  // concatenated reports; compared across worker counts
    double seconds = 0.0;
};

struct AcceptanceOptions {
    std::uint64_t seed = 7;
    int workers = 1;
    double scale = 1.0;           // multiplies every run count
    bool enforce_timing = true;   // runtime limits apply at full scale only
    std::set<int> only;           // empty: all criteria
};

namespace acceptance {

inline std::int64_t runs(const AcceptanceOptions& o, std::int64_t full) {
    return std::max<std::int64_t>(1000, static_cast<std::int64_t>(std::llround(full * o.scale)));
}

inline json config(const AcceptanceOptions& o, const std::string& kind, json table) {
    return json{{"experiment", kind}, {"seed", o.seed}, {"workers", o.workers}, {kind, std::move(table)}};
}

class Detail {
public:
    template <class T>
    Detail& operator<<(const T& v) {
        out_ << v;
        return *this;
    }
    std::string str() const {
        std::string s = out_.str();
        while (!s.empty() && (s.back() == ' ' || s.back() == ';')) s.pop_back();
        return s;
    }

private:
    std::ostringstream out_;
};

inline std::string num(double v, int digits = 4) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

inline bool timed_ok(const AcceptanceOptions& o, double seconds, double limit) {
    return !o.enforce_timing || seconds < limit;
}

// 1. Foellmer sampler for N(m, I), m = (1, 0).
inline CriterionResult follmer_sampler(const AcceptanceOptions& o) {
    CriterionResult r{1, "Follmer sampler exactness"};
    const auto t0 = std::chrono::steady_clock::now();
    const Report rep = run_experiment(
        config(o, "sample", {{"target", "gauss:m=1,0"}, {"steps", 200}, {"runs", runs(o, 100'000)}}));
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double worst = 0.0;
    for (std::size_t i = 0; i < rep.rows.size(); ++i) worst = std::max(worst, std::abs(rep.number(i, "z")));
    r.pass = worst <= 4.0 && timed_ok(o, r.seconds, 10.0);
    r.detail = (Detail() << "max |z| over mean and cov entries " << num(worst) << " (limit 4), " << num(r.seconds, 3)
                         << " s (limit 10)")
                   .str();
    r.csv = rep.csv();
    return r;
}

// 2. Path energy of the Foellmer drift and of a time-profile alternative.
inline CriterionResult minimal_energy(const AcceptanceOptions& o) {
    CriterionResult r{2, "Minimal-energy identity"};
    const VectorXd m = (VectorXd(2) << 1.0, 0.0).finished();
    const VectorXd x0 = VectorXd::Zero(2);
    const auto ts = uniform_partition(200);
    const double beta = std::sqrt(0.5);
    const DriftField follmer = follmer_drift(TargetDensity::shifted_gaussian(m));
    const DriftField alt = time_profile_drift(
        m, [beta](double t) { return t < 0.5 ? 1.0 + beta : 1.0 - beta; }, 1.0 + beta, "profile");
    auto energy = [&](const DriftField& b) {
        std::vector<PathSample> paths;
        for (std::uint64_t run = 1; run <= 256; ++run) {
            RngStream rng(o.seed, run);
            paths.push_back(controlled_path(b, ts, x0, rng));
        }
        return path_energy(paths);
    };
    const MCStats ef = energy(follmer);
    const MCStats ea = energy(alt);
    const double want_f = 0.5 * m.squaredNorm();
    const double want_a = 1.5 * want_f;
    const double err_f = std::abs(ef.mean - want_f);
    const double err_a = std::abs(ea.mean - want_a);
    r.pass = err_f <= 1e-10 && err_a <= 1e-10 && ef.std_error() <= 1e-10 && ea.std_error() <= 1e-10;
    r.detail = (Detail() << "follmer " << num(ef.mean, 12) << " (|err| " << num(err_f, 2) << "), alt "
                         << num(ea.mean, 12) << " (|err| " << num(err_a, 2) << "), tol 1e-10")
                   .str();
    Report rep;
    rep.header = {"drift", "energy", "stderr", "expected"};
    rep.rows.push_back({"follmer", fmt(ef.mean), fmt(ef.std_error()), fmt(want_f)});
    rep.rows.push_back({"profile", fmt(ea.mean), fmt(ea.std_error()), fmt(want_a)});
    r.csv = rep.csv();
    return r;
}

inline json ou_unbiased(const std::string& g, const std::string& mesh, std::int64_t n) {
    return {{"drift", "ou:theta=1"}, {"g", g}, {"mesh", mesh}, {"x0", {1.0}}, {"runs", n}};
}

// 3. Unbiasedness of psi for OU, g in {x, x^2}, both meshes.
inline CriterionResult unbiasedness(const AcceptanceOptions& o) {
    CriterionResult r{3, "Unbiasedness of psi"};
    const auto t0 = std::chrono::steady_clock::now();
    Detail d;
    bool ok = true;
    for (const char* mesh : {"exp:lambda=1", "uniform:T=1.5"}) {
        for (const char* g : {"x", "x2"}) {
            const Report rep = run_experiment(config(o, "unbiased", ou_unbiased(g, mesh, runs(o, 1'000'000))));
            const double z = rep.number(0, "z");
            ok = ok && std::abs(z) <= 4.0;
            d << mesh << " g=" << g << " mean " << num(rep.number(0, "mean"), 6) << " vs "
              << num(rep.number(0, "analytic"), 6) << " z=" << num(z, 3) << "; ";
            r.csv += rep.csv();
        }
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.pass = ok && timed_ok(o, r.seconds, 60.0);
    d << num(r.seconds, 3) << " s (limit 60)";
    r.detail = d.str();
    return r;
}

// 4. Poisson MGF closed form and the lemma bound for uniform meshes.
inline CriterionResult mgf(const AcceptanceOptions& o) {
    CriterionResult r{4, "Poisson MGF closed form"};
    const auto n = runs(o, 1'000'000);
    const Report exp_rep = run_experiment(config(o, "mgf", {{"mesh", "exp:lambda=1"}, {"theta", {1.0}}, {"runs", n}}));
    const Report uni_rep =
        run_experiment(config(o, "mgf", {{"mesh", "uniform:T=1.5"}, {"theta", {0.5, 1.0, 2.0}}, {"runs", n}}));
    const double exact = std::exp(std::numbers::e - 1.0);
    const double z = (exp_rep.number(0, "empirical") - exact) / exp_rep.number(0, "stderr");
    Detail d;
    d << "exp(1) theta=1 empirical " << num(exp_rep.number(0, "empirical"), 6) << " vs " << num(exact, 6)
      << " z=" << num(z, 3);
    bool ok = std::abs(z) <= 4.0;
    for (std::size_t i = 0; i < uni_rep.rows.size(); ++i) {
        const double bound = uni_rep.number(i, "bound");
        const double lower = uni_rep.number(i, "empirical") - 3.0 * uni_rep.number(i, "stderr");
        ok = ok && bound >= lower;
        d << "; uniform theta=" << uni_rep.cell(i, "theta") << " bound " << num(bound) << " >= "
          << num(lower) << "";
    }
    r.pass = ok;
    r.detail = d.str();
    r.csv = exp_rep.csv() + uni_rep.csv();
    return r;
}

// 5. Variance ordering at matched E[N].
inline CriterionResult variance_ordering(const AcceptanceOptions& o) {
    CriterionResult r{5, "Variance ordering uniform < exponential"};
    const Report rep = run_experiment(config(o, "variance-sweep",
                                             {{"drift", "ou:theta=1"},
                                              {"g", "x"},
                                              {"meshes", {"uniform:T=1.5", "exp:lambda=matched"}},
                                              {"dims", {1, 2, 4}},
                                              {"x0", 1.0},
                                              {"runs", runs(o, 1'000'000)}}));
    bool ok = true;
    Detail d;
    for (std::size_t i = 0; i + 1 < rep.rows.size(); i += 2) {
        const double vu = rep.number(i, "var");
        const double ve = rep.number(i + 1, "var");
        const double se = std::hypot(rep.number(i, "var_stderr"), rep.number(i + 1, "var_stderr"));
        const double nu = rep.number(i, "mean_N");
        const double ne = rep.number(i + 1, "mean_N");
        const bool matched = std::abs(nu - ne) <= 0.01 * ne;
        const bool ordered = ve - vu > 3.0 * se;
        ok = ok && matched && ordered;
        d << "d=" << rep.cell(i, "d") << " var uni " << num(vu) << " exp " << num(ve) << " (diff/se "
          << num((ve - vu) / se, 3) << ", E[N] " << num(nu) << "/" << num(ne) << "); ";
    }
    r.pass = ok;
    r.detail = d.str();
    r.csv = rep.csv();
    return r;
}

// 6. E[psi^2] against the assembled bound.
inline CriterionResult variance_bound_validity(const AcceptanceOptions& o) {
    CriterionResult r{6, "Variance bound validity"};
    const auto n = runs(o, 100'000);
    const json meshes = {"exp:lambda=1", "uniform:T=1.5"};
    std::vector<Report> reps;
    for (const char* g : {"x", "x2"})
        reps.push_back(run_experiment(config(
            o, "variance-sweep",
            {{"drift", "ou:theta=1"}, {"g", g}, {"meshes", meshes}, {"dims", {1}}, {"x0", 1.0}, {"runs", n}})));
    reps.push_back(run_experiment(config(o, "variance-sweep",
                                         {{"drift", "follmer:mix:w=0.5,0.5;m1=1;m2=-1"},
                                          {"g", "x"},
                                          {"meshes", meshes},
                                          {"dims", {1}},
                                          {"x0", 1.0},
                                          {"runs", n}})));
    int verified = 0;
    int unverified = 0;
    bool ok = true;
    Detail d;
    for (const auto& rep : reps) {
        for (std::size_t i = 0; i < rep.rows.size(); ++i) {
            const bool hyp = rep.cell(i, "hypotheses") == "verified";
            const bool valid = rep.cell(i, "bound_valid") == "true";
            (hyp ? verified : unverified)++;
            if (hyp) ok = ok && valid;
            d << rep.cell(i, "dist") << (hyp ? " [verified]" : " [hypotheses-not-verified]") << " E[psi^2] "
              << num(rep.number(i, "second_moment")) << (valid ? " <= " : " > ") << num(rep.number(i, "bound"))
              << "; ";
        }
        r.csv += rep.csv();
    }
    r.pass = ok && verified > 0;
    r.detail = (Detail() << verified << " verified, " << unverified << " unverified configs: " << d.str()).str();
    return r;
}

// 7. Point-cloud guarantee, d = 2.
inline CriterionResult point_cloud(const AcceptanceOptions& o) {
    CriterionResult r{7, "Point-cloud guarantee"};
    const auto t0 = std::chrono::steady_clock::now();
    const Report rep =
        run_experiment(config(o, "cloud", {{"target", "gauss:m=1,0"}, {"eps", 0.05}, {"R", 3.0}, {"grid", 9}}));
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double ve = rep.number(0, "sup_value_err");
    const double ge = rep.number(0, "sup_grad_err");
    const double rb = rep.number(0, "radius_bound");
    const double rl = rep.number(0, "radius_limit");
    r.pass = ve <= 0.05 && ge <= 0.05 && rb <= rl && timed_ok(o, r.seconds, 30.0);
    r.detail = (Detail() << "N=" << rep.cell(0, "N") << " sup value err " << num(ve) << ", grad err " << num(ge)
                         << " (eps 0.05), radius " << num(rb) << " <= " << num(rl) << ", " << num(r.seconds, 3)
                         << " s (limit 30)")
                   .str();
    r.csv = rep.csv();
    return r;
}

// 8. Girsanov KL: constants, and exact vs point-cloud mixture drifts.
inline CriterionResult girsanov(const AcceptanceOptions& o) {
    CriterionResult r{8, "Girsanov KL"};
    const Report c = run_experiment(config(
        o, "kl", {{"p", "const:v=1,0"}, {"q", "const:v=0,1"}, {"steps", 200}, {"runs", runs(o, 10'000)}}));
    const std::string mix = "mix:w=0.5,0.5;m1=1;m2=-1";
    const Report m = run_experiment(config(o, "kl",
                                           {{"p", "follmer:" + mix},
                                            {"q", "follmer-cloud:" + mix},
                                            {"eps", 0.05},
                                            {"R", 3.0},
                                            {"x0", {0.0}},
                                            {"steps", 200},
                                            {"runs", runs(o, 10'000)}}));
    const double err = std::abs(c.number(0, "kl") - 1.0);
    const double kl = m.number(0, "kl");
    const double bound = m.number(0, "bound");
    r.pass = err <= 1e-10 && kl <= bound;
    r.detail = (Detail() << "constants " << num(c.number(0, "kl"), 12) << " (|err| " << num(err, 2)
                         << "); cloud KL " << num(kl) << " <= bound " << num(bound) << " (drift sup err "
                         << num(m.number(0, "drift_sup_err")) << ", N=" << m.cell(0, "cloud_N") << ")")
                   .str();
    r.csv = c.csv() + m.csv();
    return r;
}

// 9. Free energy of optimal, zero and constant-shift controls.
inline CriterionResult variational(const AcceptanceOptions& o) {
    CriterionResult r{9, "Variational equality and gaps"};
    const std::vector<std::string> controls{"optimal:y=0", "zero", "const-shift:phi=0.5", "const-shift:phi=-1"};
    const std::vector<double> phis{0.0, 0.0, 0.5, -1.0};
    const Report rep = run_experiment(config(o, "vi",
                                             {{"control", controls},
                                              {"y", {0.0}},
                                              {"x0", {0.0}},
                                              {"steps", 200},
                                              {"runs", runs(o, 100'000)}}));
    const double base_gap = 0.5 * (1.0 - std::numbers::ln2);
    bool ok = true;
    Detail d;
    for (std::size_t i = 0; i < controls.size(); ++i) {
        const double want = i == 0 ? 0.0 : phis[i] * phis[i] + base_gap;
        const double z = (rep.number(i, "gap") - want) / rep.number(i, "stderr");
        ok = ok && std::abs(z) <= 4.0;
        d << controls[i] << " gap " << num(rep.number(i, "gap")) << " vs " << num(want) << " z=" << num(z, 3) << "; ";
    }
    r.pass = ok;
    r.detail = d.str();
    r.csv = rep.csv();
    return r;
}

// 10. Optimal transition density for a shifted Gaussian.
inline CriterionResult transition_density(const AcceptanceOptions& o) {
    CriterionResult r{10, "Transition-density identity"};
    const VectorXd m = (VectorXd(2) << 1.0, -0.5).finished();
    const TargetDensity target = TargetDensity::shifted_gaussian(m);
    RngStream rng(o.seed, 1);
    std::vector<TransitionQuery> qs;
    for (int i = 0; i < 100; ++i) {
        double s = rng.uniform();
        double t = rng.uniform();
        if (s > t) std::swap(s, t);
        qs.push_back({s, 2.0 * rng.normal_vector(2), t, 2.0 * rng.normal_vector(2)});
    }
    std::vector<VectorXd> ys;
    for (const auto& y : validation_grid(2, 3.0, 12)) ys.push_back(y);
    ys.resize(std::min<std::size_t>(ys.size(), 100));
    const double err = transition_density_check(target, qs);
    const double end_err = endpoint_identity_check(target, ys);
    r.pass = err <= 1e-10 && end_err <= 1e-10;
    r.detail = (Detail() << "max log error " << num(err, 3) << " over 100 queries, endpoint identity "
                         << num(end_err, 3) << " over " << ys.size() << " points (tol 1e-10)")
                   .str();
    Report rep;
    rep.header = {"check", "points", "max_log_error"};
    rep.rows.push_back({"transition", fmt(static_cast<int>(qs.size())), fmt(err)});
    rep.rows.push_back({"endpoint", fmt(static_cast<int>(ys.size())), fmt(end_err)});
    r.csv = rep.csv();
    return r;
}

// 11. The subtracted control-variate term has mean zero.
inline CriterionResult control_variate(const AcceptanceOptions& o) {
    CriterionResult r{11, "Control-variate mean zero"};
    Detail d;
    bool ok = true;
    for (const char* mesh : {"exp:lambda=1", "uniform:T=1.5"}) {
        const Report rep = run_experiment(config(o, "unbiased", ou_unbiased("x", mesh, runs(o, 1'000'000))));
        const double z = rep.number(0, "cv_mean") / rep.number(0, "cv_stderr");
        ok = ok && std::abs(z) <= 4.0;
        d << mesh << " cv mean " << num(rep.number(0, "cv_mean")) << " z=" << num(z, 3) << "; ";
        r.csv += rep.csv();
    }
    r.pass = ok;
    r.detail = d.str();
    return r;
}

inline const std::vector<std::function<CriterionResult(const AcceptanceOptions&)>>& criteria() {
    static const std::vector<std::function<CriterionResult(const AcceptanceOptions&)>> all{
        follmer_sampler, minimal_energy, unbiasedness,      mgf,       variance_ordering, variance_bound_validity,
        point_cloud,     girsanov,       variational, transition_density, control_variate};
    return all;
}

}  // namespace acceptance

inline constexpr int kCriterionCount = 12;

/// Runs the selected criteria; criterion 12 reruns 1..11 with 4 workers and
/// compares every CSV byte for byte. `report` sees each result as it finishes.
inline std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opts,
                                                   const std::function<void(const CriterionResult&)>& report = {}) {
    auto wanted = [&](int id) { return opts.only.empty() || opts.only.count(id) > 0; };
    std::vector<CriterionResult> results;
    const auto& all = acceptance::criteria();
    for (std::size_t i = 0; i < all.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!wanted(id)) continue;
        CriterionResult res;
        try {
            res = all[i](opts);
        } catch (const std::exception& e) {
            res = {id, "criterion " + std::to_string(id), false, std::string("error: ") + e.what(), "", 0.0};
        }
        if (report) report(res);
        results.push_back(std::move(res));
    }
    if (wanted(12)) {
        CriterionResult det{12, "Determinism across workers {1,4}"};
        AcceptanceOptions four = opts;
        four.workers = 4;
        four.enforce_timing = false;
        std::vector<int> differing;
        int compared = 0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            std::string one;
            std::string other;
            try {
                AcceptanceOptions single = opts;
                single.workers = 1;
                single.enforce_timing = false;
                const auto it = std::find_if(results.begin(), results.end(),
                                             [&](const CriterionResult& c) { return c.id == static_cast<int>(i) + 1; });
                one = (it != results.end() && opts.workers == 1 && !it->csv.empty()) ? it->csv : all[i](single).csv;
                other = all[i](four).csv;
            } catch (const std::exception& e) {
                one = "error";
                other = e.what();
            }
            ++compared;
            if (one.empty() || one != other) differing.push_back(static_cast<int>(i) + 1);
        }
        det.pass = differing.empty();
        acceptance::Detail d;
        d << compared << " criterion reports compared";
        if (!differing.empty()) {
            d << "; differing:";
            for (int id : differing) d << ' ' << id;
        }
        det.detail = d.str();
        if (report) report(det);
        results.push_back(std::move(det));
    }
    return results;
}

inline std::string format_result(const CriterionResult& r) {
    return std::string(r.pass ? "[PASS] " : "[FAIL] ") + "C" + std::to_string(r.id) + " " + r.name + ": " + r.detail;
}

/// The `check` experiment: acceptance criteria at reduced run counts, one row per criterion.
inline Report run_check(const json& table, const RunSettings& s) {
    std::vector<std::string> issues;
    detail::Fields f(table, "check", issues);
    const double scale = f.real("scale", 0.1);
    if (!(scale > 0.0 && scale <= 1.0)) f.problem("scale", "must lie in (0, 1]");
    const auto only = f.reals("criteria", std::vector<double>{});
    AcceptanceOptions o;
    for (double c : only) {
        if (c < 1 || c > kCriterionCount || c != std::floor(c)) {
            f.problem("criteria", "entries must be integers 1..12");
            break;
        }
        o.only.insert(static_cast<int>(c));
    }
    f.finish();
    detail::throw_if(issues);
    o.seed = s.seed;
    o.workers = s.workers;
    o.scale = scale;
    o.enforce_timing = scale >= 1.0;
    Report rep;
    rep.kind = "check";
    rep.header = {"criterion", "name", "pass", "detail", "scale"};
    for (const auto& c : run_acceptance(o))
        rep.rows.push_back({fmt(c.id), c.name, fmt(c.pass), c.detail, fmt(scale)});
    detail::append_provenance(rep, s.seed);
    return rep;
}

}  // namespace latentdiff
