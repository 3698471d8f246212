#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "neuron_lab/cli.hpp"
#include "neuron_lab/config.hpp"
#include "neuron_lab/io.hpp"

using namespace neuron_lab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string error_field(const json& j, bool sweep = false) {
    try {
        parse_run_config(j, sweep);
    } catch (const ConfigError& e) {
        return e.field;
    }
    return "";
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "neuron_lab");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path write(const std::string& name, const json& j) const {
        write_file(path / name, j.dump());
        return path / name;
    }
};

std::vector<fs::path> run_dirs(const fs::path& root) {
    std::vector<fs::path> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::directory_iterator(root)) out.push_back(e.path());
    return out;
}

}  // namespace

TEST_CASE("defaults fill every unspecified field") {
    const RunConfig c = parse_run_config({{"experiment", "negative_bias_failure"}});
    CHECK(c.spec.id == ExperimentId::NegativeBiasFailure);
    CHECK(c.spec.n_trials == 1000);
    CHECK(std::get<NegativeBiasParams>(c.spec.params).d == 50);
}

TEST_CASE("fields are mapped into the experiment parameters") {
    const json j = {{"experiment", "stuck_at_init"},
                    {"n_trials", 10},
                    {"seed", 42},
                    {"workers", 2},
                    {"params", {{"d", 9}, {"epsilon", 0.02}}},
                    {"optimizer", {{"eta", 0.5}, {"steps", 7}}},
                    {"engine", {{"kind", "monte_carlo"}, {"n_samples", 1000}, {"seed", 3}}}};
    const RunConfig c = parse_run_config(j);
    const auto& p = std::get<StuckAtInitParams>(c.spec.params);
    CHECK(p.d == 9);
    CHECK(p.epsilon == 0.02);
    CHECK(p.eta == 0.5);
    CHECK(p.gd_steps == 7);
    CHECK(c.spec.n_trials == 10);
    CHECK(c.spec.base_seed == 42);
    CHECK(c.spec.workers == 2);
    CHECK(std::holds_alternative<MonteCarloMethod>(c.spec.engine.method));
}

TEST_CASE("schema violations name the offending field") {
    CHECK(error_field({{"n_trials", 3}}) == "experiment");
    CHECK(error_field({{"experiment", "bogus"}}) == "experiment");
    CHECK(error_field({{"experiment", "stuck_at_init"}, {"extra", 1}}) == "extra");
    CHECK(error_field({{"experiment", "stuck_at_init"}, {"optimizer", {{"eta", 0}}}}) == "optimizer.eta");
    CHECK(error_field({{"experiment", "stuck_at_init"}, {"optimizer", {{"eta", -1.0}}}}) == "optimizer.eta");
    CHECK(error_field({{"experiment", "stuck_at_init"}, {"params", {{"dd", 3}}}}) == "params.dd");
    CHECK(error_field({{"experiment", "stuck_at_init"}, {"params", {{"d", 2.5}}}}) == "params.d");
    CHECK(error_field({{"experiment", "stuck_at_init"}, {"n_trials", "many"}}) == "n_trials");
    CHECK(error_field({{"experiment", "stuck_at_init"}, {"distribution", {{"kind", "uniform_ball"}}}}) ==
          "distribution");
    CHECK(error_field({{"experiment", "f0_computation"}, {"optimizer", {{"eta", 1}}}}) == "optimizer.eta");
    CHECK(error_field({{"experiment", "stuck_at_init"}, {"engine", {{"kind", "magic"}}}}) == "engine.kind");
    CHECK(error_field({{"experiment", "negative_bias_failure"}, {"optimizer", {{"integrator", "leapfrog"}}}}) ==
          "optimizer.integrator");
}

TEST_CASE("vector length must match the distribution dimension") {
    const json j = {{"experiment", "linear_rate"},
                    {"distribution", {{"kind", "uniform_ball"}, {"dim", 4}}},
                    {"params", {{"v", {1.0, 0.0, 0.0}}}}};
    CHECK(error_field(j) == "params.v");
    json ok = j;
    ok["params"]["v"] = {1.0, 0.0, 0.0, 0.0, 0.0};
    CHECK(error_field(ok).empty());
}

TEST_CASE("sweep blocks are accepted only by the sweep command") {
    const json j = {{"experiment", "stuck_at_init"}, {"sweep", {{"params.epsilon", {0.01, 0.02}}}}};
    CHECK(error_field(j) == "sweep");
    const RunConfig c = parse_run_config(j, true);
    REQUIRE(c.sweep.size() == 1);
    const auto pts = sweep_points(c);
    REQUIRE(pts.size() == 2);
    CHECK(pts[1]["params"]["epsilon"] == 0.02);
    CHECK_FALSE(pts[0].contains("sweep"));
    // Every grid value is validated up front.
    CHECK(error_field({{"experiment", "stuck_at_init"}, {"sweep", {{"optimizer.eta", {0.1, -1.0}}}}}, true) ==
          "optimizer.eta");
    CHECK(error_field({{"experiment", "stuck_at_init"},
                       {"sweep", {{"params.d", {2}}, {"params.epsilon", {0.01}}, {"n_trials", {5}}}}},
                      true) == "sweep");
}

TEST_CASE("two-axis sweep is a cross product") {
    const RunConfig c = parse_run_config(
        {{"experiment", "stuck_at_init"}, {"sweep", {{"params.d", {4, 9}}, {"params.epsilon", {0.01, 0.02, 0.03}}}}},
        true);
    CHECK(sweep_points(c).size() == 6);
}

TEST_CASE("with_value creates intermediate objects") {
    const json j = with_value(json::object(), "a.b.c", 3);
    CHECK(j["a"]["b"]["c"] == 3);
}

TEST_CASE("manifest records what is needed to reproduce the run") {
    const RunConfig c = parse_run_config({{"experiment", "stuck_at_init"}, {"seed", 5}});
    const auto m = make_manifest(c, {"neuron_lab", "run"});
    CHECK(m["version"] == kArtifactVersion);
    CHECK(m["config"]["seed"] == 5);
    CHECK(m["resolved"].contains("params"));
    CHECK(m["seed_derivation"]["base_seed"] == 5);
}

TEST_CASE("run exit codes") {
    TempDir dir("neuron_lab_cli_run");
    const std::string out = (dir.path / "out").string();
    const auto ok = dir.write("ok.json", {{"experiment", "stuck_at_init"}, {"n_trials", 300}});
    CHECK(run_cli({"run", "--config", ok.string(), "--out", out}) == kExitPass);
    const auto runs = run_dirs(dir.path / "out" / "stuck_at_init");
    REQUIRE(runs.size() == 1);
    const auto summary = json::parse(read_file(runs[0] / "summary.json"));
    CHECK(summary["verdict"] == "pass");
    const auto config = json::parse(read_file(runs[0] / "config.json"));
    CHECK(config["out"] == out);

    CHECK(run_cli({"report", runs[0].string()}) == kExitPass);

    const auto eta = dir.write("eta.json", {{"experiment", "stuck_at_init"}, {"optimizer", {{"eta", 0}}}});
    CHECK(run_cli({"run", "--config", eta.string(), "--out", out}) == kExitConfig);
    const auto dim = dir.write("dim.json", {{"experiment", "linear_rate"},
                                            {"distribution", {{"kind", "uniform_ball"}, {"dim", 3}}},
                                            {"params", {{"v", {1.0, 0.0}}}}});
    CHECK(run_cli({"run", "--config", dim.string(), "--out", out}) == kExitConfig);
    CHECK(run_cli({"run", "--config", (dir.path / "missing.json").string()}) == kExitConfig);
    write_file(dir.path / "broken.json", "{ not json");
    CHECK(run_cli({"run", "--config", (dir.path / "broken.json").string()}) == kExitConfig);
    const auto pre = dir.write("pre.json", {{"experiment", "stuck_at_init"}, {"params", {{"epsilon", 0.2}}}});
    CHECK(run_cli({"run", "--config", pre.string(), "--out", out}) == kExitConfig);
    CHECK(run_cli({"run"}) == kExitConfig);
    CHECK(run_cli({"frobnicate"}) == kExitConfig);
}

TEST_CASE("command-line overrides win over the config file") {
    TempDir dir("neuron_lab_cli_override");
    const auto cfg = dir.write("c.json", {{"experiment", "stuck_at_init"}, {"n_trials", 50}, {"seed", 1}});
    const std::string out = (dir.path / "o").string();
    CHECK(run_cli({"run", "--config", cfg.string(), "--out", out, "--seed", "9", "--workers", "1"}) == kExitPass);
    const auto runs = run_dirs(dir.path / "o" / "stuck_at_init");
    REQUIRE(runs.size() == 1);
    const auto m = json::parse(read_file(runs[0] / "manifest.json"));
    CHECK(m["resolved"]["seed"] == 9);
    CHECK(m["workers"] == 1);
}

TEST_CASE("output root falls back to NEURON_LAB_OUT") {
    TempDir dir("neuron_lab_cli_env");
    const auto cfg = dir.write("c.json", {{"experiment", "stuck_at_init"}, {"n_trials", 200}});
    ::setenv("NEURON_LAB_OUT", (dir.path / "env").c_str(), 1);
    const int code = run_cli({"run", "--config", cfg.string()});
    ::unsetenv("NEURON_LAB_OUT");
    CHECK(code == kExitPass);
    CHECK(run_dirs(dir.path / "env" / "stuck_at_init").size() == 1);
}

TEST_CASE("report detects a verdict that the trials table does not support") {
    TempDir dir("neuron_lab_cli_report");
    const auto cfg = dir.write("c.json", {{"experiment", "stuck_at_init"}, {"n_trials", 100}});
    REQUIRE(run_cli({"run", "--config", cfg.string(), "--out", (dir.path / "o").string()}) == kExitPass);
    const fs::path run = run_dirs(dir.path / "o" / "stuck_at_init").at(0);
    auto s = json::parse(read_file(run / "summary.json"));
    s["verdict"] = "fail";
    write_file(run / "summary.json", s.dump(2));
    CHECK(run_cli({"report", (run / "summary.json").string()}) == kExitFail);
    CHECK(run_cli({"report", (dir.path / "nothing").string()}) == kExitConfig);
}

TEST_CASE("single-point sweep matches run and writes a long table") {
    TempDir dir("neuron_lab_cli_sweep");
    const json base = {{"experiment", "stuck_at_init"}, {"n_trials", 200}, {"seed", 3}};
    json sw = base;
    sw["sweep"] = {{"params.epsilon", {0.01}}};
    const auto a = dir.write("a.json", base);
    const auto b = dir.write("b.json", sw);
    REQUIRE(run_cli({"run", "--config", a.string(), "--out", (dir.path / "run").string()}) == kExitPass);
    REQUIRE(run_cli({"sweep", "--config", b.string(), "--out", (dir.path / "sweep").string()}) == kExitPass);
    const fs::path r1 = run_dirs(dir.path / "run" / "stuck_at_init").at(0);
    const fs::path r2 = run_dirs(dir.path / "sweep" / "stuck_at_init").at(0);
    CHECK(read_file(r1 / "trials.csv") == read_file(r2 / "trials.csv"));
    CHECK(read_file(r1 / "summary.json") == read_file(r2 / "summary.json"));
    const fs::path sweep_dir = run_dirs(dir.path / "sweep" / "sweeps").at(0);
    const CsvTable t = parse_csv(read_file(sweep_dir / "sweep.csv"));
    CHECK(t.header == std::vector<std::string>{"point", "params.epsilon", "metric", "value"});
    CHECK(fs::exists(sweep_dir / "sweep.json"));
    CHECK(fs::exists(sweep_dir / "manifest.json"));
    CHECK(run_cli({"sweep", "--config", a.string()}) == kExitConfig);
}

TEST_CASE("verify exit codes and the injected bug") {
    CHECK(run_cli({"verify", "theorems"}) == kExitPass);
    CHECK(run_cli({"verify", "theorems", "--inject-gamma-sign-bug"}) == kExitFail);
    CHECK(run_cli({"verify", "theorems"}) == kExitPass);
    CHECK(run_cli({"verify", "nothing"}) == kExitConfig);
}
