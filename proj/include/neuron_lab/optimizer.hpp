#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "neuron_lab/objective.hpp"

namespace neuron_lab {

struct GradientDescentMethod {
    double eta = 0.1;
};

enum class Integrator { Euler, RK4 };

struct GradientFlowMethod {
    Integrator integrator = Integrator::RK4;
    double dt = 1e-2;
    double t_max = 1e3;
    // Re-run with dt/2 and flag a warning if the final ||w - v|| moves by 1e-4 or more.
    bool step_halving_check = true;
};

// A disabled criterion is std::nullopt; at most one may be disabled.
struct StopCriteria {
    std::optional<double> grad_norm_tol = 1e-10;
    std::optional<double> dist_to_v_tol = 1e-8;
    std::optional<double> loss_tol = 0.0;
};

struct FlagSettings {
    double theta_threshold = 1.5707963267948966;  // pi/2
    double f0_delta = 0.0;                        // flag F(w) <= F(0) - f0_delta
};

struct OptimizerConfig {
    std::variant<GradientDescentMethod, GradientFlowMethod> method;
    std::size_t max_iters = 1'000'000;
    StopCriteria stop;
    FlagSettings flags;
    std::size_t store_every_step_until = 10'000;
    double divergence_norm = 1e6;

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct StepFlags {
    bool is_dead_cone = false;
    bool theta_le_threshold = false;
    double b_t_value = 0.0;
    bool f_below_f0_minus_delta = false;
};

struct StepRecord {
    std::size_t iter = 0;
    double time = 0.0;
    Vec w;
    double loss = 0.0;
    double dist_sq = 0.0;
    double grad_norm = 0.0;
    StepFlags flags;
};

enum class Termination {
    GradNorm,
    DistToV,
    Loss,
    MaxIters,
    TimeLimit,
    Diverged,
};

std::string to_string(Termination t);

struct TrajectoryRecord {
    std::vector<StepRecord> steps;  // stored (possibly thinned) steps
    Termination reason = Termination::MaxIters;
    std::size_t iterations = 0;     // number of updates applied
    double final_time = 0.0;
    Vec final_w;
    double final_loss = 0.0;
    double final_dist_sq = 0.0;
    double final_grad_norm = 0.0;
    bool halving_warning = false;
    std::optional<double> halving_delta;
    std::string message;
};

// Called for every step, stored or not, with the evaluation at w_t.
using StepObserver = std::function<void(const StepRecord&, const Evaluation&)>;

StepFlags compute_flags(const Vec& w, const Vec& v, const InputDistribution& dist,
                        const Evaluation& e, const FlagSettings& s);

TrajectoryRecord run_gd(const Vec& w0, const Vec& v, const InputDistribution& dist,
                        const GradientEngine& engine, const OptimizerConfig& cfg,
                        const StepObserver& observer = {});

TrajectoryRecord run_flow(const Vec& w0, const Vec& v, const InputDistribution& dist,
                          const GradientEngine& engine, const OptimizerConfig& cfg,
                          const StepObserver& observer = {});

// One CSV row per stored step.
std::string trajectory_csv(const TrajectoryRecord& t);
nlohmann::json trajectory_summary(const TrajectoryRecord& t);

}  // namespace neuron_lab
