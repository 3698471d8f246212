#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "neuron_lab/experiments.hpp"
#include "neuron_lab/stats.hpp"

using namespace neuron_lab;
using nlohmann::ordered_json;

namespace {

CsvTable table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    CsvTable t;
    t.header = header;
    t.rows = rows;
    return t;
}

ExperimentSpec small(ExperimentId id, std::size_t n) {
    ExperimentSpec s = ExperimentSpec::defaults(id);
    s.n_trials = n;
    return s;
}

}  // namespace

TEST_CASE("fraction conditions use the Wilson half-width") {
    std::vector<std::vector<std::string>> rows;
    for (int i = 0; i < 100; ++i) rows.push_back({i < 45 ? "1" : "0", i % 2 ? "1" : "0"});
    const CsvTable t = table({"ok", "odd"}, rows);
    const double hw = wilson_interval(45, 100).half_width();
    ordered_json c = {{"kind", "fraction_at_least_ci"}, {"column", "ok"}, {"reference", 0.45 + 0.9 * hw}};
    ordered_json strict = {{"kind", "fraction_at_least"}, {"column", "ok"}, {"reference", 0.46}};
    ordered_json band = {{"kind", "fraction_in_band"}, {"column", "ok"}, {"lo", 0.4}, {"hi", 0.5}};
    ordered_json sub = {{"kind", "fraction_at_least"}, {"column", "ok"}, {"where", "odd"}, {"reference", 0.0}};
    const auto res = evaluate_conditions(ordered_json::array({c, strict, band, sub}), t);
    CHECK(res[0].pass);
    CHECK_FALSE(res[1].pass);
    CHECK(res[2].pass);
    CHECK(res[3].detail["rows"] == 50);
    CHECK(combine(res) == Verdict::Fail);
}

TEST_CASE("all, agree and max conditions") {
    const CsvTable t = table({"a", "b", "g", "x"}, {{"1", "1", "1", "0.5"}, {"0", "0", "0", "2"}, {"1", "1", "1", "1"}});
    auto eval = [&](ordered_json c) { return evaluate_conditions(ordered_json::array({c}), t)[0]; };
    CHECK_FALSE(eval({{"kind", "all"}, {"column", "a"}}).pass);
    CHECK(eval({{"kind", "all"}, {"column", "a"}, {"where", "g"}}).pass);
    CHECK(eval({{"kind", "agree"}, {"column", "a"}, {"other", "b"}}).pass);
    CHECK_FALSE(eval({{"kind", "max_at_most"}, {"column", "x"}, {"value", 1.0}}).pass);
    CHECK(eval({{"kind", "max_at_most"}, {"column", "x"}, {"value", 2.0}}).pass);
    // An empty selection cannot certify "all".
    const CsvTable none = table({"a", "g"}, {{"1", "0"}});
    CHECK_FALSE(evaluate_conditions(ordered_json::array({{{"kind", "all"}, {"column", "a"}, {"where", "g"}}}), none)[0].pass);
    CHECK_THROWS(eval({{"kind", "nonsense"}, {"column", "a"}}));
}

TEST_CASE("monotone within noise tolerates small rises and rejects large ones") {
    std::vector<std::vector<std::string>> rows;
    auto add = [&](const std::string& g, int k, int n) {
        for (int i = 0; i < n; ++i) rows.push_back({g, i < k ? "1" : "0"});
    };
    add("0", 50, 100);
    add("1", 52, 100);
    add("2", 10, 100);
    const ordered_json c = {{"kind", "monotone_within_noise"}, {"column", "s"}, {"group", "g"}};
    CHECK(evaluate_conditions(ordered_json::array({c}), table({"g", "s"}, rows))[0].pass);
    add("3", 90, 100);
    CHECK_FALSE(evaluate_conditions(ordered_json::array({c}), table({"g", "s"}, rows))[0].pass);
}

TEST_CASE("report-only conditions do not decide the verdict") {
    const CsvTable t = table({"a"}, {{"0"}});
    const ordered_json c = {{"kind", "all"}, {"column", "a"}, {"assert", false}};
    const auto res = evaluate_conditions(ordered_json::array({c}), t);
    CHECK_FALSE(res[0].pass);
    CHECK(combine(res) == Verdict::Reported);
    CHECK(parse_verdict("reported") == Verdict::Reported);
    CHECK(to_string(Verdict::Skipped) == "skipped");
}

TEST_CASE("experiment names round trip") {
    for (ExperimentId id : all_experiment_ids()) CHECK(parse_experiment_id(to_string(id)) == id);
    CHECK_FALSE(parse_experiment_id("nope").has_value());
    CHECK(all_experiment_ids().size() == 8);
}

TEST_CASE("stuck at init: verdict recomputes from its own trials table") {
    ExperimentSpec s = small(ExperimentId::StuckAtInit, 400);
    const ExperimentResult r = run_experiment(s);
    CHECK(r.verdict == Verdict::Pass);
    CHECK(r.n == 400);
    const CsvTable t = parse_csv(to_csv(r.trials));
    CHECK(reverdict(r.summary_json(), t) == r.verdict);
    // Flipping one stuck trial to moving breaks the predicate agreement.
    CsvTable bad = t;
    const int col = bad.column("stationary");
    REQUIRE(col >= 0);
    for (auto& row : bad.rows)
        if (row[bad.column("stuck")] == "1") {
            row[col] = "0";
            break;
        }
    CHECK(reverdict(r.summary_json(), bad) == Verdict::Fail);
}

TEST_CASE("results do not depend on the worker count") {
    ExperimentSpec a = small(ExperimentId::RandomInit, 12);
    a.workers = 1;
    ExperimentSpec b = a;
    b.workers = 4;
    CHECK(to_csv(run_experiment(a).trials) == to_csv(run_experiment(b).trials));
    ExperimentSpec c = a;
    c.base_seed = 1;
    CHECK(to_csv(run_experiment(a).trials) != to_csv(run_experiment(c).trials));
}

TEST_CASE("stuck at init rejects epsilon sqrt(d) >= 1/2") {
    ExperimentSpec s = small(ExperimentId::StuckAtInit, 10);
    std::get<StuckAtInitParams>(s.params).epsilon = 0.2;
    CHECK_THROWS_AS(run_experiment(s), PreconditionError);
}

TEST_CASE("negative bias failure keeps zero overlap on the event") {
    ExperimentSpec s = small(ExperimentId::NegativeBiasFailure, 20);
    auto& p = std::get<NegativeBiasParams>(s.params);
    p.d = 20;
    p.t_max = 50.0;
    const ExperimentResult r = run_experiment(s);
    const CsvTable t = parse_csv(to_csv(r.trials));
    const int ev = t.column("event"), inv = t.column("joint_invariant"), suf = t.column("sufficient");
    REQUIRE(ev >= 0);
    REQUIRE(inv >= 0);
    for (const auto& row : t.rows) {
        if (row[ev] == "1") CHECK(row[inv] == "1");
        if (row[suf] == "1") CHECK(row[ev] == "1");
    }
    REQUIRE(r.reference);
    // The event is u_1 < -sqrt(1 - (a/r)^2) with a = r - r/(2 d^2).
    const double a = 1.0 - 1.0 / (2.0 * 20 * 20);
    CHECK(*r.reference == doctest::Approx(sphere_cap_probability(20, std::sqrt(1 - a * a))).epsilon(1e-12));
}

TEST_CASE("f0 computation: quadrature F(0) sits below the cap bound and decays") {
    ExperimentSpec s = small(ExperimentId::F0Computation, 1);
    auto& p = std::get<F0Params>(s.params);
    p.dims = {5, 10};
    p.mc_samples = 200000;
    const ExperimentResult r = run_experiment(s);
    CHECK(r.verdict == Verdict::Pass);
    CHECK(r.trials.size() == 2);
}

TEST_CASE("linear rate envelope holds for a short run") {
    ExperimentSpec s = small(ExperimentId::LinearRate, 1);
    std::get<LinearRateParams>(s.params).n_steps = 200;
    const ExperimentResult r = run_experiment(s);
    CHECK(r.verdict == Verdict::Pass);
}

TEST_CASE("linear rate with a step above the cap is reported only") {
    ExperimentSpec s = small(ExperimentId::LinearRate, 1);
    auto& p = std::get<LinearRateParams>(s.params);
    p.n_steps = 50;
    p.eta_scale = 2.0;
    CHECK(run_experiment(s).verdict == Verdict::Reported);
}

TEST_CASE("symmetric convergence on a few trials") {
    const ExperimentResult r = run_experiment(small(ExperimentId::SymmetricConvergence, 5));
    CHECK(r.verdict == Verdict::Pass);
}

TEST_CASE("zero-bias target and ablation") {
    ExperimentSpec s = small(ExperimentId::NoBiasTarget, 10);
    CHECK(run_experiment(s).verdict != Verdict::Fail);
    std::get<RandomInitParams>(s.params).learner_bias = false;
    CHECK(run_experiment(s).verdict != Verdict::Fail);
}

TEST_CASE("write_result lays out the run directory") {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "neuron_lab_write_result_test";
    fs::remove_all(root);
    ExperimentSpec s = small(ExperimentId::StuckAtInit, 20);
    s.trajectories = 2;
    ExperimentResult r = run_experiment(s);
    r.config = s.to_json();
    const fs::path a = write_result(r, root, {{"version", "x"}});
    const fs::path b = write_result(r, root, {{"version", "x"}});
    CHECK(a != b);
    for (const char* f : {"config.json", "trials.csv", "summary.json", "manifest.json"}) CHECK(fs::exists(a / f));
    CHECK(fs::exists(a / "trajectories"));
    const auto summary = ordered_json::parse(read_file(a / "summary.json"));
    CHECK(reverdict(summary, parse_csv(read_file(a / "trials.csv"))) == r.verdict);
    fs::remove_all(root);
}

TEST_CASE("result metrics are flat scalars") {
    const ExperimentResult r = run_experiment(small(ExperimentId::StuckAtInit, 50));
    for (const auto& [name, value] : result_metrics(r)) {
        CHECK_FALSE(name.empty());
        CHECK_FALSE(value.is_structured());
    }
}
