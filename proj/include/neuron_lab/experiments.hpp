#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "neuron_lab/distributions.hpp"
#include "neuron_lab/io.hpp"
#include "neuron_lab/objective.hpp"
#include "neuron_lab/optimizer.hpp"
#include "neuron_lab/stats.hpp"

namespace neuron_lab {

enum class ExperimentId {
    StuckAtInit,
    NegativeBiasFailure,
    F0Computation,
    LinearRate,
    RandomInit,
    SymmetricConvergence,
    NoBiasTarget,
    Tightness,
};

std::string to_string(ExperimentId id);
std::optional<ExperimentId> parse_experiment_id(const std::string& s);
const std::vector<ExperimentId>& all_experiment_ids();

// A requirement of the experiment itself (not of the config syntax) fails.
struct PreconditionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// w0 ~ U[-1,1]^{d+1} against UniformBall(epsilon); a trial is stuck when
// b_w0 <= -epsilon ||w_tilde_0||.
struct StuckAtInitParams {
    int d = 16;
    double epsilon = 0.01;
    std::size_t gd_steps = 100;
    double eta = 0.1;
};

// Target v = (e1, -(r - r/(2 d^2))) on UniformBall(r); w_tilde_0 uniform on
// the sphere of radius rho, b_w0 = 0. Gradient flow is integrated for every
// trial under both v and v/||v||.
struct NegativeBiasParams {
    int d = 50;
    double r = 1.0;
    double rho = 1.0;
    double t_max = 1e3;
    double dt = 0.5;
    Integrator integrator = Integrator::RK4;
    // Every k-th trial is re-integrated with dt/2; 0 disables the check.
    std::size_t halving_every = 10;
    double loss_tol = 1e-9;
    double band_lo = 0.40;
    double band_hi = 0.52;
};

// F(0) for the same target under UniformBall(r) and HeavyCap(r, q).
struct F0Params {
    std::vector<int> dims = {5, 10, 20, 40};
    double r = 1.0;
    double cap_fraction = 0.5;
    double cap_depth = 4.0;
    std::size_t mc_samples = 1'000'000;
};

enum class InitRecipe { SmallSphere, Target };

// Gradient descent with eta = eta_scale * gamma / c^4 on a bounded input
// distribution, checked against the contraction envelope at every step.
struct LinearRateParams {
    InputDistribution dist = InputDistribution::uniform_ball(6, 1.0);
    std::size_t n_steps = 10'000;
    double eta_scale = 1.0;
    std::optional<double> alpha;
    InitRecipe init = InitRecipe::SmallSphere;
    std::optional<Vec> w0;
    std::optional<Vec> v;
};

enum class InitScale { Sphere, Normal };

// Small random initialization of radius rho = M / c^2 followed by gradient
// descent with a practical step size. Also used for the zero-bias target.
struct RandomInitParams {
    InputDistribution dist = InputDistribution::standard_gaussian(25);
    double b_v_ratio = 0.0;  // -b_v / ||v_tilde||, with ||v_tilde|| = 1
    std::optional<double> alpha;
    double eta = 1.0;
    std::size_t max_iters = 20'000;
    double success_tol = 1e-4;
    InitScale init = InitScale::Sphere;
    bool learner_bias = true;
};

enum class SymmetricInit { Perturb, Standard, Target };

// Standard Gaussian input, ||v_tilde|| = 1, b_v >= 0, eta just below
// C beta min{1, tau} / (c4 alpha^2).
struct SymmetricParams {
    int d = 5;
    double b_v = 0.3;
    double alpha = 4.5;
    double C = 3.5e7;
    double eta_fraction = 0.999;
    std::size_t max_steps = 5000;
    SymmetricInit init = SymmetricInit::Perturb;
    double perturb_radius = 0.5;
    double dist_tol = 1e-6;
};

// Success of the small-initialization recipe on UniformBall(r) with
// alpha = r/2 as the target bias ratio grows to r - r/(2 d^2).
struct TightnessParams {
    int d = 10;
    double r = 1.0;
    std::size_t n_ratios = 8;
    double eta = 1.0;
    std::size_t max_iters = 20'000;
    double success_tol = 1e-4;
};

using ExperimentParams =
    std::variant<StuckAtInitParams, NegativeBiasParams, F0Params, LinearRateParams,
                 RandomInitParams, SymmetricParams, TightnessParams>;

ExperimentParams default_params(ExperimentId id);
std::size_t default_trials(ExperimentId id);

struct ExperimentSpec {
    ExperimentId id = ExperimentId::StuckAtInit;
    ExperimentParams params = StuckAtInitParams{};
    std::size_t n_trials = 4000;
    std::uint64_t base_seed = 0;
    GradientEngine engine = GradientEngine::quadrature();
    unsigned workers = 0;
    // Multiplies the numerical tolerances (success and loss tolerances).
    double tolerance_scale = 1.0;
    // Trajectory CSVs are written for trials [0, trajectories).
    std::size_t trajectories = 0;

    static ExperimentSpec defaults(ExperimentId id);
    // Throws std::invalid_argument naming the offending field.
    void validate() const;
    nlohmann::ordered_json to_json() const;
};

// ---------------------------------------------------------------------------
// Verdict conditions
//
// Each condition is a JSON object evaluated against the trials table alone,
// so a stored summary can be re-verdicted from trials.csv. Kinds:
//   fraction_at_least_ci  p_hat >= reference - Wilson half-width
//   fraction_at_least     p_hat >= reference
//   fraction_in_band      lo <= p_hat <= hi
//   all                   column == 1 on every row (at least one row)
//   agree                 column == other on every row
//   max_at_most           column <= value on every row
//   monotone_within_noise success fraction per group never rises by more
//                         than the sum of the two Wilson half-widths
// Optional keys: "where" restricts rows to those with where == 1, and
// "assert": false evaluates the condition without letting it decide.

struct ConditionResult {
    nlohmann::ordered_json condition;
    bool pass = false;
    bool asserted = true;
    nlohmann::ordered_json detail = nlohmann::ordered_json::object();
};

enum class Verdict { Pass, Fail, Reported, Skipped };
std::string to_string(Verdict v);
std::optional<Verdict> parse_verdict(const std::string& s);

std::vector<ConditionResult> evaluate_conditions(const nlohmann::ordered_json& conditions,
                                                 const CsvTable& trials);
// Pass iff every asserted condition passes; Reported when none is asserted.
Verdict combine(const std::vector<ConditionResult>& results);

// Recomputes the verdict of a stored summary.json from its trials table.
Verdict reverdict(const nlohmann::ordered_json& summary, const CsvTable& trials);

// ---------------------------------------------------------------------------

struct ExperimentResult {
    ExperimentId id = ExperimentId::StuckAtInit;
    nlohmann::ordered_json config;
    std::vector<nlohmann::ordered_json> trials;
    nlohmann::ordered_json conditions = nlohmann::ordered_json::array();
    std::vector<ConditionResult> checks;
    Verdict verdict = Verdict::Reported;
    // Headline proportion: column of trials.csv, where-filter, counts, interval.
    std::string primary_column;
    std::string primary_where;
    std::size_t successes = 0;
    std::size_t n = 0;
    Interval interval;
    std::optional<double> reference;
    std::string reference_note;
    nlohmann::ordered_json report = nlohmann::ordered_json::object();
    std::vector<std::pair<std::string, std::string>> trajectories;  // (file stem, csv)
    std::string skip_reason;

    nlohmann::ordered_json summary_json() const;
};

ExperimentResult run_experiment(const ExperimentSpec& spec);

// Writes <out_root>/<id>/<timestamp>/{config.json, trials.csv, summary.json,
// manifest.json, trajectories/} and returns the run directory.
std::filesystem::path write_result(const ExperimentResult& result,
                                   const std::filesystem::path& out_root,
                                   const nlohmann::ordered_json& manifest);

// Flat scalar metrics of a result, one entry per (name, value); used for
// long-format sweep tables.
std::vector<std::pair<std::string, nlohmann::ordered_json>> result_metrics(
    const ExperimentResult& result);

}  // namespace neuron_lab
