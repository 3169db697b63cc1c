#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "latentdiff/acceptance.hpp"
#include "latentdiff/experiment.hpp"

namespace {

using latentdiff::json;

enum class Kind { Str, Int, Real, Vec, StrList, RealList, Flag };

struct FlagSpec {
    std::string flag;  // without dashes
    std::string key;   // key in the experiment table
    Kind kind;
    std::string help;
};

const std::map<std::string, std::vector<FlagSpec>>& subcommand_flags() {
    static const std::map<std::string, std::vector<FlagSpec>> flags{
        {"sample",
         {{"target", "target", Kind::Str, "target spec, e.g. gauss:m=1,0 (drift is its Foellmer drift)"},
          {"drift", "drift", Kind::Str, "drift spec, used when no target is given"},
          {"steps", "steps", Kind::Int, "Euler steps (default 200)"},
          {"runs", "runs", Kind::Int, "number of paths (default 100000)"},
          {"x0", "x0", Kind::Vec, "start point, comma separated (default 0)"},
          {"path-out", "path_out", Kind::Str, "write path of run 1 as CSV"}}},
        {"unbiased",
         {{"drift", "drift", Kind::Str, "drift spec, e.g. ou:theta=1"},
          {"g", "g", Kind::Str, "x | x2 | sum | sumsq (default x)"},
          {"mesh", "mesh", Kind::Str, "exp:lambda=... | uniform:T=..."},
          {"x0", "x0", Kind::Vec, "start point (default 0)"},
          {"runs", "runs", Kind::Int, "number of estimator draws (default 1000000)"}}},
        {"mgf",
         {{"mesh", "mesh", Kind::StrList, "one or more mesh specs"},
          {"theta", "theta", Kind::RealList, "one or more theta >= 0 (default 1)"},
          {"runs", "runs", Kind::Int, "meshes per estimate (default 1000000)"}}},
        {"variance-sweep",
         {{"drift", "drift", Kind::Str, "drift spec (default ou:theta=1)"},
          {"g", "g", Kind::Str, "test function (default x)"},
          {"mesh", "meshes", Kind::StrList, "mesh specs; exp:lambda=matched matches the uniform mesh's E[N]"},
          {"dims", "dims", Kind::RealList, "dimensions (default 1)"},
          {"x0", "x0", Kind::Real, "start value in every coordinate (default 1)"},
          {"runs", "runs", Kind::Int, "estimator draws per row (default 100000)"}}},
        {"kl",
         {{"p", "p", Kind::Str, "sampling drift"},
          {"q", "q", Kind::Str, "comparison drift; follmer-cloud:<target> builds a validated cloud"},
          {"x0", "x0", Kind::Vec, "start point (default 0)"},
          {"steps", "steps", Kind::Int, "Euler steps (default 200)"},
          {"runs", "runs", Kind::Int, "paths (default 10000)"},
          {"eps", "eps", Kind::Real, "cloud accuracy (default 0.05)"},
          {"R", "R", Kind::Real, "cloud validation radius (default 3)"},
          {"grid", "grid", Kind::Int, "validation grid points per axis (default 9)"}}},
        {"vi",
         {{"control", "control", Kind::StrList, "control specs (default optimal:y=0)"},
          {"base", "base", Kind::Str, "base drift (default zero)"},
          {"y", "y", Kind::Vec, "observation (default 0)"},
          {"x0", "x0", Kind::Vec, "start point (default 0)"},
          {"steps", "steps", Kind::Int, "Euler steps (default 200)"},
          {"runs", "runs", Kind::Int, "paths (default 100000)"},
          {"line-search", "line_search", Kind::Flag, "golden-section search over const-shift phi"}}},
        {"cloud",
         {{"target", "target", Kind::Str, "gauss or mix target"},
          {"eps", "eps", Kind::Real, "accuracy (default 0.05)"},
          {"R", "R", Kind::Real, "validation radius (default 3)"},
          {"grid", "grid", Kind::Int, "grid points per axis (default 9)"},
          {"points-out", "points_out", Kind::Str, "write the cloud as CSV"}}},
        {"check",
         {{"scale", "scale", Kind::Real, "run-count multiplier in (0,1] (default 0.1)"},
          {"criteria", "criteria", Kind::RealList, "subset of criteria 1..12"}}},
    };
    return flags;
}

[[noreturn]] void fail(int code, const std::string& msg) {
    std::cerr << "latentdiff: " << msg << '\n';
    std::exit(code);
}

json number_list(const std::string& flag, const std::string& text) {
    json arr = json::array();
    std::size_t start = 0;
    for (;;) {
        const auto comma = text.find(',', start);
        const std::string part = text.substr(start, comma - start);
        try {
            std::size_t used = 0;
            const double v = std::stod(part, &used);
            if (used != part.size()) throw std::invalid_argument(part);
            arr.push_back(v);
        } catch (const std::exception&) {
            fail(2, "--" + flag + ": '" + part + "' is not a number");
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return arr;
}

}  // namespace

int main(int argc, char** argv) {
    latentdiff::check_runner() = latentdiff::run_check;

    CLI::App app{"Drift-plus-Brownian diffusion experiments: Foellmer sampling, unbiased estimation, VI"};
    app.require_subcommand(1);
    app.fallthrough();
    std::optional<std::uint64_t> seed;
    int workers = 1;
    std::string out;
    std::string config_path;
    app.add_option("--seed", seed, "master seed; all randomness derives from it")->group("Global");
    app.add_option("--workers", workers, "worker threads; output does not depend on it")
        ->check(CLI::PositiveNumber)
        ->group("Global");
    app.add_option("--out", out, "CSV output path (default stdout)")->group("Global");
    app.add_option("--config", config_path, "JSON experiment config; its values override flags")
        ->check(CLI::ExistingFile)
        ->group("Global");

    std::map<std::string, std::map<std::string, std::string>> values;
    std::map<std::string, std::map<std::string, std::vector<std::string>>> lists;
    std::map<std::string, std::map<std::string, bool>> switches;
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, specs] : subcommand_flags()) {
        CLI::App* sub = app.add_subcommand(name);
        subs[name] = sub;
        for (const auto& f : specs) {
            const std::string opt = "--" + f.flag;
            if (f.kind == Kind::Flag)
                sub->add_flag(opt, switches[name][f.flag], f.help);
            else if (f.kind == Kind::StrList || f.kind == Kind::RealList)
                sub->add_option(opt, lists[name][f.flag], f.help);
            else
                sub->add_option(opt, values[name][f.flag], f.help);
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        if (app.get_subcommands().empty()) std::cerr << app.help();
        return 2;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    json table = json::object();
    for (const auto& f : subcommand_flags().at(name)) {
        CLI::App* sub = subs[name];
        if (sub->count("--" + f.flag) == 0) continue;
        switch (f.kind) {
            case Kind::Str: table[f.key] = values[name][f.flag]; break;
            case Kind::Int: {
                const std::string& v = values[name][f.flag];
                try {
                    std::size_t used = 0;
                    const long long n = std::stoll(v, &used);
                    if (used != v.size()) throw std::invalid_argument(v);
                    table[f.key] = n;
                } catch (const std::exception&) {
                    fail(2, "--" + f.flag + ": '" + v + "' is not an integer");
                }
                break;
            }
            case Kind::Real: {
                const json arr = number_list(f.flag, values[name][f.flag]);
                if (arr.size() != 1) fail(2, "--" + f.flag + " takes a single number");
                table[f.key] = arr[0];
                break;
            }
            case Kind::Vec: table[f.key] = number_list(f.flag, values[name][f.flag]); break;
            case Kind::StrList: table[f.key] = lists[name][f.flag]; break;
            case Kind::RealList: {
                json arr = json::array();
                for (const auto& v : lists[name][f.flag])
                    for (const auto& x : number_list(f.flag, v)) arr.push_back(x);
                table[f.key] = arr;
                break;
            }
            case Kind::Flag: table[f.key] = switches[name][f.flag]; break;
        }
    }

    json config{{"experiment", name}, {"workers", workers}, {name, table}};
    if (seed) config["seed"] = *seed;
    if (!out.empty()) config["out"] = out;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        json file;
        try {
            file = json::parse(in);
        } catch (const json::parse_error& e) {
            fail(2, "config " + config_path + ": " + e.what());
        }
        if (!file.is_object()) fail(2, "config " + config_path + ": top level must be a table");
        if (file.contains("experiment") && file["experiment"] != name)
            fail(2, "config experiment '" + file["experiment"].dump() + "' does not match subcommand " + name);
        config.merge_patch(file);
    }
    if (!config.contains("seed")) fail(2, "--seed is required");

    latentdiff::Report report;
    try {
        report = latentdiff::run_experiment(config);
    } catch (const latentdiff::ValidationError& e) {
        for (const auto& issue : e.issues) std::cerr << "latentdiff: " << issue << '\n';
        return 2;
    } catch (const latentdiff::ConfigError& e) {
        fail(2, e.what());
    } catch (const latentdiff::DomainError& e) {
        fail(2, e.what());
    } catch (const latentdiff::UnsupportedOracle& e) {
        fail(2, e.what());
    } catch (const std::exception& e) {
        fail(1, std::string("numerical failure: ") + e.what());
    }

    const std::string csv = report.csv();
    const std::string target = config.value("out", std::string());
    if (target.empty()) {
        std::cout << csv;
    } else {
        std::ofstream file(target, std::ios::binary);
        if (!(file << csv)) fail(1, "cannot write " + target);
    }
    if (report.kind == "check") {
        const auto col = report.column("pass");
        for (const auto& row : report.rows)
            if (row[col] != "true") return 1;
    }
    return 0;
}
