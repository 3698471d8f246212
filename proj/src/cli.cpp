#include "neuron_lab/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "neuron_lab/config.hpp"
#include "neuron_lab/experiments.hpp"
#include "neuron_lab/io.hpp"
#include "neuron_lab/theory.hpp"

namespace neuron_lab {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::optional<std::string> out;
    std::optional<double> tolerance_scale;
};

json apply_overrides(json j, const Overrides& o) {
    if (!j.is_object()) return j;
    if (o.seed) j["seed"] = *o.seed;
    if (o.workers) j["workers"] = *o.workers;
    if (o.out) j["out"] = *o.out;
    if (o.tolerance_scale) j["tolerance_scale"] = *o.tolerance_scale;
    return j;
}

json read_json_file(const fs::path& p) {
    std::string text;
    try {
        text = read_file(p);
    } catch (const std::exception& e) {
        throw ConfigError("config", "cannot read " + p.string());
    }
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
}

fs::path output_root(const RunConfig& cfg) {
    if (cfg.out) return *cfg.out;
    if (const char* env = std::getenv("NEURON_LAB_OUT"); env && *env) return env;
    return "results";
}

int verdict_exit(Verdict v) {
    return (v == Verdict::Pass || v == Verdict::Reported) ? kExitPass : kExitFail;
}

std::string fmt(double x) {
    std::ostringstream s;
    s.precision(6);
    s << x;
    return s.str();
}

void print_summary(std::ostream& os, const ordered_json& s) {
    os << "experiment  " << s.value("experiment", "") << "\n";
    os << "verdict     " << s.value("verdict", "") << "\n";
    if (s.contains("skip_reason")) os << "skipped     " << s["skip_reason"].get<std::string>() << "\n";
    if (const auto it = s.find("primary"); it != s.end() && !(*it)["column"].get<std::string>().empty()) {
        const auto& p = *it;
        os << "primary     " << p["column"].get<std::string>();
        if (p["where"].is_string()) os << " where " << p["where"].get<std::string>();
        os << ": " << p["successes"] << "/" << p["n"];
        if (p["fraction"].is_number()) os << " = " << fmt(p["fraction"].get<double>());
        if (p["ci95"].is_array() && p["ci95"][0].is_number())
            os << "  95% CI [" << fmt(p["ci95"][0].get<double>()) << ", " << fmt(p["ci95"][1].get<double>())
               << "]";
        os << "\n";
        if (p["reference"].is_number()) {
            os << "reference   " << fmt(p["reference"].get<double>());
            if (!p["reference_note"].get<std::string>().empty())
                os << "  (" << p["reference_note"].get<std::string>() << ")";
            os << "\n";
        }
    }
    if (const auto it = s.find("condition_results"); it != s.end()) {
        for (const auto& c : *it) {
            os << "  [" << (c["pass"].get<bool>() ? "ok  " : "FAIL") << "] " << c["name"].get<std::string>();
            if (!c["asserted"].get<bool>()) os << " (reported only)";
            os << "\n";
        }
    }
    if (const auto it = s.find("report"); it != s.end() && !it->empty()) {
        os << "report\n";
        for (const auto& [k, v] : it->items()) {
            std::string text = v.dump();
            if (text.size() > 200) text = text.substr(0, 197) + "...";
            os << "  " << k << ": " << text << "\n";
        }
    }
}

struct Outcome {
    ExperimentResult result;
    fs::path dir;
};

Outcome execute(const RunConfig& cfg, const std::vector<std::string>& args) {
    Outcome o;
    o.result = run_experiment(cfg.spec);
    o.result.config = ordered_json::parse(cfg.source.dump());
    o.dir = write_result(o.result, output_root(cfg), make_manifest(cfg, args));
    return o;
}

// Maps exceptions from parsing or running onto exit codes.
template <class F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const PreconditionError& e) {
        std::cerr << "precondition violated: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitConfig;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitFail;
    } catch (const std::exception& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    }
}

int cmd_run(const std::string& config_path, const Overrides& ov, const std::vector<std::string>& args) {
    return guarded([&] {
        const json source = apply_overrides(read_json_file(config_path), ov);
        const RunConfig cfg = parse_run_config(source, false);
        const Outcome o = execute(cfg, args);
        print_summary(std::cout, o.result.summary_json());
        std::cout << "written     " << o.dir.string() << "\n";
        return verdict_exit(o.result.verdict);
    });
}

int cmd_sweep(const std::string& config_path, const Overrides& ov, const std::vector<std::string>& args) {
    return guarded([&] {
        const json source = apply_overrides(read_json_file(config_path), ov);
        const RunConfig cfg = parse_run_config(source, true);
        const std::vector<json> points = sweep_points(cfg);

        std::vector<ordered_json> rows;
        ordered_json runs = ordered_json::array();
        int code = kExitPass;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const RunConfig point = parse_run_config(points[i], false);
            const Outcome o = execute(point, args);
            ordered_json axis_values;
            for (const auto& axis : cfg.sweep) {
                const json* node = &points[i];
                std::size_t start = 0;
                while (true) {
                    const std::size_t dot = axis.path.find('.', start);
                    node = &node->at(axis.path.substr(start, dot - start));
                    if (dot == std::string::npos) break;
                    start = dot + 1;
                }
                axis_values[axis.path] = ordered_json::parse(node->dump());
            }
            for (const auto& [metric, value] : result_metrics(o.result)) {
                ordered_json row;
                row["point"] = i;
                for (const auto& [k, v] : axis_values.items()) row[k] = v;
                row["metric"] = metric;
                row["value"] = value;
                rows.push_back(std::move(row));
            }
            runs.push_back({{"point", i},
                            {"values", axis_values},
                            {"verdict", to_string(o.result.verdict)},
                            {"run_dir", o.dir.string()}});
            std::cout << "point " << i << " " << axis_values.dump() << " -> " << to_string(o.result.verdict)
                      << "  (" << o.dir.string() << ")\n";
            if (verdict_exit(o.result.verdict) != kExitPass) code = kExitFail;
        }

        const fs::path base = output_root(cfg) / "sweeps";
        fs::create_directories(base);
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
        fs::path dir = base / stamp;
        for (int k = 1; !fs::create_directory(dir); ++k) dir = base / (std::string(stamp) + "-" + std::to_string(k));

        ordered_json axes = ordered_json::array();
        for (const auto& axis : cfg.sweep)
            axes.push_back({{"path", axis.path}, {"values", ordered_json::parse(json(axis.values).dump())}});
        ordered_json sweep;
        sweep["experiment"] = to_string(cfg.spec.id);
        sweep["axes"] = axes;
        sweep["points"] = runs;
        write_file(dir / "sweep.csv", to_csv(rows));
        write_file(dir / "sweep.json", sweep.dump(2) + "\n");
        write_file(dir / "manifest.json", make_manifest(cfg, args).dump(2) + "\n");
        std::cout << "sweep written " << dir.string() << "\n";
        return code;
    });
}

int cmd_verify(const std::string& suite_name, const Overrides& ov, bool inject_bug) {
    const auto suite = parse_suite(suite_name);
    if (!suite) {
        std::cerr << "config error: suite: must be lemmas, theorems or all\n";
        return kExitConfig;
    }
    return guarded([&] {
        BatteryOptions opt;
        opt.seed = ov.seed.value_or(0);
        opt.workers = ov.workers.value_or(0);
        testing::set_gamma_sign_flip(inject_bug);
        std::vector<BatteryRow> rows;
        try {
            rows = run_battery(*suite, opt);
        } catch (...) {
            testing::set_gamma_sign_flip(false);
            throw;
        }
        testing::set_gamma_sign_flip(false);
        std::cout << battery_table(rows);
        int code = kExitPass;
        for (const auto& r : rows) {
            if (r.fail > 0) {
                std::cerr << "failing: " << r.theorem_id << " (" << r.fail << " of " << r.configs << ")\n";
                code = kExitFail;
            }
        }
        return code;
    });
}

int cmd_report(const std::string& target) {
    return guarded([&] {
        fs::path summary_path = target;
        if (fs::is_directory(summary_path)) summary_path /= "summary.json";
        if (!fs::exists(summary_path)) throw ConfigError("report", summary_path.string() + " not found");
        const ordered_json summary = ordered_json::parse(read_file(summary_path));
        print_summary(std::cout, summary);
        const fs::path trials_path = summary_path.parent_path() / "trials.csv";
        if (!fs::exists(trials_path)) {
            std::cout << "recomputed  unavailable (no trials.csv)\n";
            const auto v = parse_verdict(summary.value("verdict", ""));
            return v ? verdict_exit(*v) : kExitFail;
        }
        const Verdict stored = parse_verdict(summary.value("verdict", "")).value_or(Verdict::Fail);
        const Verdict again = reverdict(summary, parse_csv(read_file(trials_path)));
        std::cout << "recomputed  " << to_string(again) << " from trials.csv"
                  << (again == stored ? "" : "  (MISMATCH with stored verdict)") << "\n";
        if (again != stored) return kExitFail;
        return verdict_exit(again);
    });
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"Numerical lab for a single ReLU neuron with bias"};
    app.require_subcommand(1);
    std::vector<std::string> args(argv, argv + argc);

    Overrides ov;
    std::string config_path;
    std::string suite = "all";
    std::string target;
    bool inject_bug = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { ov.seed = s; }, "base seed");
        sub->add_option_function<unsigned>("--workers", [&](unsigned w) { ov.workers = w; },
                                           "worker threads (0 = logical cores)");
    };
    auto add_output = [&](CLI::App* sub) {
        sub->add_option_function<std::string>("--out", [&](const std::string& o) { ov.out = o; },
                                              "output root (default $NEURON_LAB_OUT or results)");
        sub->add_option_function<double>("--tolerance-scale", [&](double t) { ov.tolerance_scale = t; },
                                         "multiplier on numerical tolerances");
    };

    CLI::App* run = app.add_subcommand("run", "run one experiment from a config file");
    run->add_option("--config", config_path, "JSON config")->required();
    add_common(run);
    add_output(run);

    CLI::App* verify = app.add_subcommand("verify", "run the checker battery");
    verify->add_option("suite", suite, "lemmas, theorems or all")->check(CLI::IsMember({"lemmas", "theorems", "all"}));
    add_common(verify);
    verify->add_flag("--inject-gamma-sign-bug", inject_bug)->group("");

    CLI::App* sweep = app.add_subcommand("sweep", "run a one- or two-parameter grid");
    sweep->add_option("--config", config_path, "JSON config with a sweep block")->required();
    add_common(sweep);
    add_output(sweep);

    CLI::App* report = app.add_subcommand("report", "print a stored result and re-check its verdict");
    report->add_option("path", target, "run directory or summary.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitPass : kExitConfig;
    }

    if (*run) return cmd_run(config_path, ov, args);
    if (*sweep) return cmd_sweep(config_path, ov, args);
    if (*verify) return cmd_verify(suite, ov, inject_bug);
    return cmd_report(target);
}

}  // namespace neuron_lab
