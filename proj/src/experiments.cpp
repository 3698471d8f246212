#include "neuron_lab/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "neuron_lab/parallel.hpp"
#include "neuron_lab/rng.hpp"
#include "neuron_lab/theory.hpp"

namespace neuron_lab {

using nlohmann::ordered_json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct IdName {
    ExperimentId id;
    const char* name;
};
constexpr IdName kIds[] = {
    {ExperimentId::StuckAtInit, "stuck_at_init"},
    {ExperimentId::NegativeBiasFailure, "negative_bias_failure"},
    {ExperimentId::F0Computation, "f0_computation"},
    {ExperimentId::LinearRate, "linear_rate"},
    {ExperimentId::RandomInit, "random_init"},
    {ExperimentId::SymmetricConvergence, "symmetric_convergence"},
    {ExperimentId::NoBiasTarget, "no_bias_target"},
    {ExperimentId::Tightness, "tightness"},
};

std::uint64_t id_label(ExperimentId id) { return static_cast<std::uint64_t>(id) + 1; }

// Trial i of an experiment draws only from this stream.
Rng trial_rng(const ExperimentSpec& s, std::size_t i) {
    return make_rng(s.base_seed, stream::trial, id_label(s.id), i);
}

std::vector<double> to_std(const Vec& x) { return {x.data(), x.data() + x.size()}; }

Vec gaussian_vector(Rng& rng, Eigen::Index n) {
    std::normal_distribution<double> nd;
    Vec g(n);
    for (Eigen::Index i = 0; i < n; ++i) g(i) = nd(rng);
    return g;
}

Vec uniform_direction(Rng& rng, Eigen::Index n) {
    while (true) {
        Vec g = gaussian_vector(rng, n);
        const double r = g.norm();
        if (r > 0.0) return g / r;
    }
}

Vec uniform_in_ball(Rng& rng, Eigen::Index n, double radius) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const Vec dir = uniform_direction(rng, n);
    return radius * std::pow(u01(rng), 1.0 / static_cast<double>(n)) * dir;
}

// Target with ||v_tilde|| = 1 along e1 and the given bias.
Vec target(int d, double b) { return make_params(unit(d, 0), b); }

bool bit_equal(const Vec& a, const Vec& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

ordered_json distribution_json(const InputDistribution& d) {
    ordered_json j;
    switch (d.kind) {
        case DistributionKind::UniformBall:
            j = {{"kind", "uniform_ball"}, {"dim", d.dim}, {"radius", d.radius}};
            break;
        case DistributionKind::StandardGaussian:
            j = {{"kind", "standard_gaussian"}, {"dim", d.dim}};
            break;
        case DistributionKind::HeavyCap:
            j = {{"kind", "heavy_cap"},         {"dim", d.dim},
                 {"radius", d.radius},          {"cap_fraction", d.cap_fraction},
                 {"cap_depth", d.cap_depth}};
            break;
    }
    return j;
}

ordered_json engine_json(const GradientEngine& e) {
    ordered_json j;
    if (const auto* mc = std::get_if<MonteCarloMethod>(&e.method)) {
        j = {{"kind", "monte_carlo"},
             {"n_samples", mc->n_samples},
             {"seed", mc->seed},
             {"common_random_numbers", mc->common_random_numbers}};
    } else if (const auto* q = std::get_if<QuadratureMethod>(&e.method)) {
        j = {{"kind", "quadrature"}, {"nodes", q->grid.nodes}, {"panel_width", q->grid.panel_width}};
    } else {
        j = {{"kind", "finite_diff"}};
    }
    j["relu_deriv_at_zero"] = e.relu_deriv_at_zero;
    return j;
}

std::string integrator_name(Integrator i) { return i == Integrator::RK4 ? "rk4" : "euler"; }

ordered_json params_json(const ExperimentParams& params) {
    return std::visit(
        [](const auto& p) -> ordered_json {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, StuckAtInitParams>) {
                return {{"d", p.d}, {"epsilon", p.epsilon}, {"gd_steps", p.gd_steps}, {"eta", p.eta}};
            } else if constexpr (std::is_same_v<T, NegativeBiasParams>) {
                return {{"d", p.d},
                        {"r", p.r},
                        {"rho", p.rho},
                        {"t_max", p.t_max},
                        {"dt", p.dt},
                        {"integrator", integrator_name(p.integrator)},
                        {"halving_every", p.halving_every},
                        {"loss_tol", p.loss_tol},
                        {"band_lo", p.band_lo},
                        {"band_hi", p.band_hi}};
            } else if constexpr (std::is_same_v<T, F0Params>) {
                return {{"dims", p.dims},
                        {"r", p.r},
                        {"cap_fraction", p.cap_fraction},
                        {"cap_depth", p.cap_depth},
                        {"mc_samples", p.mc_samples}};
            } else if constexpr (std::is_same_v<T, LinearRateParams>) {
                ordered_json j = {{"distribution", distribution_json(p.dist)},
                                  {"n_steps", p.n_steps},
                                  {"eta_scale", p.eta_scale},
                                  {"init", p.init == InitRecipe::Target ? "target" : "small_sphere"}};
                j["alpha"] = p.alpha ? ordered_json(*p.alpha) : ordered_json();
                j["w0"] = p.w0 ? ordered_json(to_std(*p.w0)) : ordered_json();
                j["v"] = p.v ? ordered_json(to_std(*p.v)) : ordered_json();
                return j;
            } else if constexpr (std::is_same_v<T, RandomInitParams>) {
                ordered_json j = {{"distribution", distribution_json(p.dist)},
                                  {"b_v_ratio", p.b_v_ratio}};
                j["alpha"] = p.alpha ? ordered_json(*p.alpha) : ordered_json();
                j["eta"] = p.eta;
                j["max_iters"] = p.max_iters;
                j["success_tol"] = p.success_tol;
                j["init"] = p.init == InitScale::Normal ? "normal" : "sphere";
                j["learner_bias"] = p.learner_bias;
                return j;
            } else if constexpr (std::is_same_v<T, SymmetricParams>) {
                const char* init = p.init == SymmetricInit::Perturb    ? "perturb"
                                   : p.init == SymmetricInit::Standard ? "standard"
                                                                       : "target";
                return {{"d", p.d},
                        {"b_v", p.b_v},
                        {"alpha", p.alpha},
                        {"C", p.C},
                        {"eta_fraction", p.eta_fraction},
                        {"max_steps", p.max_steps},
                        {"init", init},
                        {"perturb_radius", p.perturb_radius},
                        {"dist_tol", p.dist_tol}};
            } else {
                return {{"d", p.d},
                        {"r", p.r},
                        {"n_ratios", p.n_ratios},
                        {"eta", p.eta},
                        {"max_iters", p.max_iters},
                        {"success_tol", p.success_tol}};
            }
        },
        params);
}

// Condition builders.
ordered_json cond(const std::string& kind, const std::string& column) {
    return {{"kind", kind}, {"column", column}};
}
ordered_json where(ordered_json c, const std::string& w) {
    c["where"] = w;
    return c;
}
ordered_json report_only(ordered_json c) {
    c["assert"] = false;
    return c;
}
ordered_json named(ordered_json c, const std::string& name) {
    c["name"] = name;
    return c;
}

// Fills the headline proportion from the trials rows.
void set_primary(ExperimentResult& r, const std::string& column, const std::string& where_col = "") {
    r.primary_column = column;
    r.primary_where = where_col;
    r.successes = 0;
    r.n = 0;
    for (const auto& row : r.trials) {
        if (!where_col.empty() && !row.at(where_col).get<bool>()) continue;
        ++r.n;
        if (row.at(column).get<bool>()) ++r.successes;
    }
    r.interval = r.n > 0 ? wilson_interval(r.successes, r.n) : Interval{0.0, 1.0};
}

void finish(ExperimentResult& r) {
    const std::string csv = to_csv(r.trials);
    const CsvTable table = parse_csv(csv);
    r.checks = evaluate_conditions(r.conditions, table);
    r.verdict = r.skip_reason.empty() ? combine(r.checks) : Verdict::Skipped;
}

ExperimentResult start(const ExperimentSpec& s) {
    ExperimentResult r;
    r.id = s.id;
    r.config = s.to_json();
    return r;
}

double frac(std::size_t k, std::size_t n) { return n ? static_cast<double>(k) / n : kNaN; }

ordered_json interval_json(std::size_t k, std::size_t n) {
    const Interval ci = n ? wilson_interval(k, n) : Interval{0.0, 1.0};
    return {{"successes", k}, {"n", n}, {"fraction", frac(k, n)}, {"ci95", {ci.lo, ci.hi}}};
}

std::size_t count_true(const std::vector<ordered_json>& rows, const std::string& col,
                       const std::string& where_col = "") {
    std::size_t k = 0;
    for (const auto& row : rows)
        if ((where_col.empty() || row.at(where_col).get<bool>()) && row.at(col).get<bool>()) ++k;
    return k;
}

// ---------------------------------------------------------------------------
// Gradient descent to a target with a success radius

struct DescentOutcome {
    double final_dist = 0.0;
    std::size_t iterations = 0;
    std::string termination;
    bool success = false;
};

DescentOutcome descend(const Vec& w0, const Vec& v, const InputDistribution& dist,
                       const GradientEngine& engine, double eta, std::size_t max_iters,
                       double success_tol, bool learner_bias, std::string* trajectory) {
    DescentOutcome out;
    if (learner_bias) {
        OptimizerConfig cfg;
        cfg.method = GradientDescentMethod{eta};
        cfg.max_iters = max_iters;
        // Exact stationarity ends a run that can no longer move.
        cfg.stop = {0.0, success_tol, std::nullopt};
        cfg.store_every_step_until = trajectory ? 10'000 : 0;
        const TrajectoryRecord tr = run_gd(w0, v, dist, engine, cfg);
        out.final_dist = std::sqrt(tr.final_dist_sq);
        out.iterations = tr.iterations;
        out.termination = to_string(tr.reason);
        if (trajectory) *trajectory = trajectory_csv(tr);
    } else {
        // Bias coordinate frozen at its initial value.
        Vec w = w0;
        const Eigen::Index last = w.size() - 1;
        std::ostringstream traj;
        if (trajectory) traj << "iter,dist,grad_norm\r\n";
        out.termination = "max_iters";
        for (std::size_t t = 0;; ++t) {
            Vec g = evaluate(w, v, dist, engine).grad;
            g(last) = 0.0;
            const double dist_now = (w - v).norm();
            if (trajectory) traj << t << ',' << format_double(dist_now) << ',' << format_double(g.norm()) << "\r\n";
            out.iterations = t;
            if (dist_now <= success_tol) {
                out.termination = "dist_to_v";
                break;
            }
            if (g.isZero(0.0)) {
                out.termination = "grad_norm";
                break;
            }
            if (t >= max_iters) break;
            w -= eta * g;
            if (!w.allFinite()) {
                out.termination = "diverged";
                break;
            }
        }
        out.final_dist = (w - v).norm();
        if (trajectory) *trajectory = traj.str();
    }
    out.success = out.final_dist <= success_tol;
    return out;
}

// ---------------------------------------------------------------------------

ExperimentResult run_stuck(const ExperimentSpec& s, const StuckAtInitParams& p) {
    const double scale = p.epsilon * std::sqrt(static_cast<double>(p.d));
    if (!(scale < 0.5))
        throw PreconditionError("stuck_at_init: epsilon * sqrt(d) = " + format_double(scale) +
                                " must be below 1/2");
    ExperimentResult r = start(s);
    const InputDistribution dist = InputDistribution::uniform_ball(p.d, p.epsilon);
    s.engine.validate(dist);
    const Vec v = target(p.d, 0.0);
    r.trials.resize(s.n_trials);
    std::vector<std::string> traj(std::min(s.trajectories, s.n_trials));
    parallel_for(
        s.n_trials,
        [&](std::size_t i) {
            Rng rng = trial_rng(s, i);
            std::uniform_real_distribution<double> coord(-1.0, 1.0);
            Vec w0(p.d + 1);
            for (Eigen::Index k = 0; k <= p.d; ++k) w0(k) = coord(rng);
            const double nw = tilde(w0).norm();
            const bool stuck = bias(w0) <= -p.epsilon * nw;
            const Evaluation e0 = evaluate(w0, v, dist, s.engine);
            const bool grad_zero = (e0.grad.array() == 0.0).all();
            // The displacement is accumulated apart from w0 so that updates
            // below the spacing of doubles near w0 still register as motion.
            Vec u = Vec::Zero(p.d + 1);
            bool bit_stationary = true;
            std::size_t steps = 0;
            for (; steps < p.gd_steps; ++steps) {
                u -= p.eta * evaluate(w0 + u, v, dist, s.engine).grad;
                if (!bit_equal(w0 + u, w0)) bit_stationary = false;
                if (!u.isZero(0.0)) {
                    ++steps;
                    break;
                }
            }
            const bool stationary = u.isZero(0.0);
            if (i < traj.size()) {
                OptimizerConfig cfg;
                cfg.method = GradientDescentMethod{p.eta};
                cfg.max_iters = p.gd_steps;
                cfg.stop = {std::nullopt, 0.0, 0.0};
                traj[i] = trajectory_csv(run_gd(w0, v, dist, s.engine, cfg));
            }
            r.trials[i] = {{"trial", i},           {"w_tilde_norm", nw},   {"b_w0", bias(w0)},
                           {"stuck", stuck},       {"grad_zero", grad_zero}, {"stationary", stationary},
                           {"bit_stationary", bit_stationary}, {"steps_checked", steps}};
        },
        s.workers);
    for (std::size_t i = 0; i < traj.size(); ++i) r.trajectories.emplace_back("trial_" + std::to_string(i), traj[i]);

    const double ref = 0.5 - scale;
    ordered_json c1 = cond("fraction_at_least_ci", "stuck");
    c1["reference"] = ref;
    ordered_json c3 = cond("agree", "stuck");
    c3["other"] = "stationary";
    ordered_json c4 = cond("agree", "stuck");
    c4["other"] = "grad_zero";
    r.conditions = {named(c1, "stuck fraction >= 1/2 - epsilon sqrt(d) - Wilson half-width"),
                    named(where(cond("all", "bit_stationary"), "stuck"),
                          "every stuck trial is bit-stationary over the GD steps"),
                    named(c3, "analytic and behavioral stuck predicates agree"),
                    named(c4, "analytic predicate agrees with an exactly zero gradient")};
    set_primary(r, "stuck");
    r.reference = ref;
    r.reference_note = "1/2 - epsilon sqrt(d)";
    r.report = {{"epsilon_sqrt_d", scale}};
    finish(r);
    return r;
}

// ---------------------------------------------------------------------------

ExperimentResult run_negative_bias(const ExperimentSpec& s, const NegativeBiasParams& p) {
    if (p.d < 3) throw PreconditionError("negative_bias_failure: d must be >= 3");
    ExperimentResult r = start(s);
    const int d = p.d;
    const InputDistribution dist = InputDistribution::uniform_ball(d, p.r);
    s.engine.validate(dist);
    const double a = p.r - p.r / (2.0 * d * d);
    const Vec v_stated = target(d, -a);
    const Vec v_unit = v_stated / v_stated.norm();
    // The active regions are disjoint iff u1 < -sqrt(1 - (a/r)^2) for the
    // direction u of w_tilde, so the event has exactly this probability.
    const double s0 = std::sqrt(1.0 - (a / p.r) * (a / p.r));
    const double oracle = sphere_cap_probability(d, s0);
    const double loss_tol = p.loss_tol * s.tolerance_scale;

    r.trials.resize(s.n_trials);
    std::vector<std::vector<std::pair<std::string, std::string>>> traj(s.n_trials);
    parallel_for(
        s.n_trials,
        [&](std::size_t i) {
            Rng rng = trial_rng(s, i);
            const Vec g = gaussian_vector(rng, d);
            const Vec w0 = make_params(p.rho * g / g.norm(), 0.0);
            const double sd = std::sqrt(static_cast<double>(d));
            const double tail = g.tail(d - 1).norm();
            const bool sufficient = g(0) < -4.0 / sd && tail <= 2.0 * sd;
            const bool event = overlap_empty(w0, v_stated, dist);
            const double joint0 = evaluate(w0, v_stated, dist, s.engine).joint_prob;
            ordered_json row = {{"trial", i},          {"g1", g(0)},          {"tail_norm", tail},
                                {"sufficient", sufficient}, {"event", event}, {"joint0", joint0},
                                {"joint0_zero", joint0 == 0.0}};
            for (int variant = 0; variant < 2; ++variant) {
                const Vec& v = variant == 0 ? v_stated : v_unit;
                const std::string sfx = variant == 0 ? "" : "_normalized";
                GradientFlowMethod fl;
                fl.integrator = p.integrator;
                fl.dt = p.dt;
                fl.t_max = p.t_max;
                fl.step_halving_check = p.halving_every > 0 && i % p.halving_every == 0;
                OptimizerConfig cfg;
                cfg.method = fl;
                cfg.stop = {0.0, 1e-8, std::nullopt};
                const bool keep = i < s.trajectories;
                cfg.store_every_step_until = keep ? 10'000 : 0;
                bool joint_zero = true;
                double min_gap = std::numeric_limits<double>::infinity();
                const TrajectoryRecord tr =
                    run_flow(w0, v, dist, s.engine, cfg, [&](const StepRecord&, const Evaluation& e) {
                        if (e.joint_prob != 0.0) joint_zero = false;
                        min_gap = std::min(min_gap, e.loss_minus_f0);
                    });
                row["failure" + sfx] = min_gap >= -loss_tol;
                row["joint_invariant" + sfx] = joint_zero;
                row["min_loss_gap" + sfx] = min_gap;
                row["final_dist" + sfx] = std::sqrt(tr.final_dist_sq);
                row["termination" + sfx] = to_string(tr.reason);
                row["halving_delta" + sfx] = tr.halving_delta ? *tr.halving_delta : kNaN;
                row["halving_warning" + sfx] = tr.halving_warning;
                if (keep) traj[i].emplace_back("trial_" + std::to_string(i) + sfx, trajectory_csv(tr));
            }
            r.trials[i] = std::move(row);
        },
        s.workers);
    for (auto& t : traj)
        for (auto& e : t) r.trajectories.push_back(std::move(e));

    ordered_json band = cond("fraction_in_band", "event");
    band["lo"] = p.band_lo;
    band["hi"] = p.band_hi;
    ordered_json agree0 = cond("agree", "event");
    agree0["other"] = "joint0_zero";
    ordered_json halving = cond("max_at_most", "halving_warning");
    halving["value"] = 0;
    ordered_json halving_n = cond("max_at_most", "halving_warning_normalized");
    halving_n["value"] = 0;
    r.conditions = {
        named(band, "no-overlap event fraction within the band"),
        named(where(cond("all", "failure"), "event"), "event trials keep F(w_t) >= F(0) - tol"),
        named(where(cond("all", "joint_invariant"), "event"),
              "event trials keep joint positive probability 0 at every step"),
        named(where(cond("all", "failure_normalized"), "event"),
              "normalized target: event trials keep F(w_t) >= F(0) - tol"),
        named(where(cond("all", "joint_invariant_normalized"), "event"),
              "normalized target: event trials keep joint positive probability 0"),
        named(where(cond("all", "event"), "sufficient"),
              "the sufficient coordinate condition implies the event"),
        named(report_only(agree0), "quadrature joint probability is exactly 0 on the event"),
        named(halving, "step-halving reruns agree within 1e-4"),
        named(halving_n, "normalized target: step-halving reruns agree within 1e-4"),
    };
    set_primary(r, "event");
    r.reference = oracle;
    r.reference_note = "exact probability of the no-overlap event, P(u1 < -sqrt(1 - (a/r)^2))";
    const std::size_t n = s.n_trials;
    r.report = {{"target_bias", -a},
                {"event_oracle", oracle},
                {"sufficient", interval_json(count_true(r.trials, "sufficient"), n)},
                {"failure", interval_json(count_true(r.trials, "failure"), n)},
                {"failure_normalized", interval_json(count_true(r.trials, "failure_normalized"), n)},
                {"failure_reference", 0.5}};
    finish(r);
    return r;
}

// ---------------------------------------------------------------------------

ExperimentResult run_f0(const ExperimentSpec& s, const F0Params& p) {
    ExperimentResult r = start(s);
    const GradientEngine quad = std::holds_alternative<QuadratureMethod>(s.engine.method)
                                    ? s.engine
                                    : GradientEngine::quadrature();
    const double scale_tol = 1e-10 * s.tolerance_scale;
    double prev_log = kNaN;
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < p.dims.size(); ++k) {
        const int d = p.dims[k];
        if (d < 2) throw PreconditionError("f0_computation: every d must be >= 2");
        auto f0_for = [&](double r_scale) {
            const double rr = p.r * r_scale;
            const InputDistribution ball = InputDistribution::uniform_ball(d, rr);
            const Vec v = target(d, -(rr - rr / (2.0 * d * d)));
            return loss_at_origin(v, ball, quad);
        };
        auto cap_f0 = [&](double r_scale) {
            const double rr = p.r * r_scale;
            const InputDistribution cap =
                InputDistribution::heavy_cap(d, rr, p.cap_fraction, p.cap_depth);
            const Vec v = target(d, -(rr - rr / (2.0 * d * d)));
            const GradientEngine mc = GradientEngine::monte_carlo(
                p.mc_samples, fnv1a(&d, sizeof d, s.base_seed ^ 0xf0f0));
            const Evaluation e = evaluate(Vec::Zero(d + 1), v, cap, mc);
            return std::pair<double, double>{e.loss, e.loss_se.value_or(0.0)};
        };
        const double a = p.r - p.r / (2.0 * d * d);
        const double f0 = f0_for(1.0);
        const double f0_2r = f0_for(2.0);
        const double cap_prob = ball_cap_probability(d, p.r, a);
        const double bound = p.r * p.r / (8.0 * std::pow(d, 4)) * cap_prob;
        const double lf = std::log(f0);
        const auto [fc, fc_se] = cap_f0(1.0);
        const auto [fc2, fc2_se] = cap_f0(2.0);
        const double d2 = static_cast<double>(d) * d;
        // Every cap point has x1 - a >= r/(2 d^2) - r/(depth d^2).
        const double gap = p.r / (2.0 * d2) - p.r / (p.cap_depth * d2);
        const double cap_lower = 0.5 * p.cap_fraction * gap * gap;
        r.trials.push_back({{"d", d},
                            {"f0_ball", f0},
                            {"cap_prob", cap_prob},
                            {"ball_bound", bound},
                            {"ball_bound_holds", f0 <= bound},
                            {"log_f0_ball", lf},
                            {"log_decreasing", k == 0 || lf < prev_log},
                            {"f0_ball_2r", f0_2r},
                            {"ball_scale_ratio", f0_2r / f0},
                            {"ball_scale_exact", std::abs(f0_2r / f0 - 4.0) <= 4.0 * scale_tol},
                            {"f0_cap", fc},
                            {"f0_cap_se", fc_se},
                            {"k", fc * d2 / p.r},
                            {"k_lower", (fc - 3.0 * fc_se) * d2 / p.r},
                            {"k_positive", fc - 3.0 * fc_se > 0.0},
                            {"cap_lower_bound", cap_lower},
                            {"cap_lower_holds", fc + 3.0 * fc_se >= cap_lower},
                            {"f0_cap_2r", fc2},
                            {"cap_scale_ratio", fc2 / fc}});
        (void)fc2_se;
        prev_log = lf;
        xs.push_back(d);
        ys.push_back(lf);
    }
    double slope = kNaN;
    if (xs.size() >= 2) {
        const double n = static_cast<double>(xs.size());
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sx += xs[i];
            sy += ys[i];
            sxx += xs[i] * xs[i];
            sxy += xs[i] * ys[i];
        }
        slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    }
    r.conditions = {named(cond("all", "ball_bound_holds"), "ball: F(0) <= r^2/(8 d^4) P[x1 >= a]"),
                    named(cond("all", "log_decreasing"), "ball: log F(0) decreases with d"),
                    named(cond("all", "ball_scale_exact"), "ball: F(0) scales exactly as r^2"),
                    named(cond("all", "k_positive"), "cap: F(0) d^2 / r > 0 beyond 3 standard errors"),
                    named(cond("all", "cap_lower_holds"),
                          "cap: F(0) >= q (r/(2d^2) - r/(depth d^2))^2 / 2 within 3 standard errors")};
    set_primary(r, "ball_bound_holds");
    r.reference = 1.0;
    r.reference_note = "every dimension satisfies the ball bound";
    r.report = {{"log_f0_ball_slope_in_d", slope}};
    finish(r);
    return r;
}

// ---------------------------------------------------------------------------

ExperimentResult run_linear_rate(const ExperimentSpec& s, const LinearRateParams& p) {
    ExperimentResult r = start(s);
    const InputDistribution& dist = p.dist;
    if (!dist.bounded()) throw PreconditionError("linear_rate: the input distribution must be bounded");
    s.engine.validate(dist);
    const int d = dist.dim;
    const SpreadConstants k = estimate_constants(dist, s.base_seed, p.alpha);
    if (!k.alpha || !k.beta)
        throw PreconditionError("linear_rate: spread constants unavailable for " + dist.name());
    const BoundedSetting bs = bounded_setting(k);
    const InitConstants ic = small_init_constants(*k.alpha, *k.beta, bs.c);
    Rng rng = trial_rng(s, 0);
    const Vec v = p.v ? *p.v : make_params(uniform_direction(rng, d), 0.0);
    Vec w0;
    if (p.w0) {
        w0 = *p.w0;
    } else if (p.init == InitRecipe::Target) {
        w0 = v;
    } else {
        w0 = make_params(ic.rho * uniform_direction(rng, d), 0.0);
    }
    const Evaluation e0 = evaluate(w0, v, dist, s.engine);
    const double gamma = linear_rate_gamma(ic.delta, w0.norm(), bs.c, bs.c_prime);
    const double eta = p.eta_scale * gamma / std::pow(bs.c, 4);
    const double rate = gamma * eta;
    r.report = {{"alpha", *k.alpha},
                {"beta", *k.beta},
                {"c", bs.c},
                {"c_prime", bs.c_prime},
                {"M", ic.M},
                {"rho", ic.rho},
                {"delta", ic.delta},
                {"gamma", gamma},
                {"eta", eta},
                {"gamma_eta", rate},
                {"loss_gap_w0", e0.loss_minus_f0},
                {"w0", to_std(w0)},
                {"v", to_std(v)},
                {"in_hypothesis", p.eta_scale <= 1.0}};
    if (!(e0.loss_minus_f0 <= -ic.delta)) {
        r.skip_reason = "precondition violated: F(w0) <= F(0) - delta (F(w0) - F(0) = " +
                        format_double(e0.loss_minus_f0) + ", delta = " + format_double(ic.delta) + ")";
        r.primary_column = "within_envelope";
        r.interval = {0.0, 1.0};
        finish(r);
        return r;
    }
    std::ostringstream traj;
    const bool keep = s.trajectories > 0;
    if (keep) traj << "t,drop,envelope_drop\r\n";
    r.trials.reserve(p.n_steps);
    const EnvelopeRun run = track_envelope(
        w0, v, dist, s.engine, eta, rate, p.n_steps, [&](std::size_t t, double drop, double env) {
            r.trials.push_back({{"t", t}, {"drop", drop}, {"envelope_drop", env},
                                {"within_envelope", drop <= env}});
            if (keep) traj << t << ',' << format_double(drop) << ',' << format_double(env) << "\r\n";
        });
    if (keep) r.trajectories.emplace_back("trial_0", traj.str());
    ordered_json c = named(cond("all", "within_envelope"),
                           "||w_t - v||^2 <= ||w_0 - v||^2 (1 - gamma eta)^t at every step");
    r.conditions = {p.eta_scale <= 1.0 ? c : report_only(c)};
    set_primary(r, "within_envelope");
    r.reference = 1.0;
    r.reference_note = "every step inside the envelope";
    r.report["violations"] = run.violations;
    r.report["worst_relative_slack"] = run.worst_slack;
    r.report["final_drop"] = run.final_drop;
    r.report["final_envelope_drop"] = run.final_envelope_drop;
    r.report["initial_dist_sq"] = (w0 - v).squaredNorm();
    finish(r);
    return r;
}

// ---------------------------------------------------------------------------

ExperimentResult run_random_init(const ExperimentSpec& s, const RandomInitParams& p, bool no_bias) {
    const InputDistribution& dist = p.dist;
    if (!dist.spherically_symmetric())
        throw PreconditionError(to_string(s.id) + ": the input distribution must be spherically symmetric");
    s.engine.validate(dist);
    const int d = dist.dim;
    const SpreadConstants k = estimate_constants(dist, s.base_seed, p.alpha);
    const double alpha = *k.alpha;
    const double ratio_cap = alpha * std::sin(kPi / 8.0) / 4.0;
    if (!(p.b_v_ratio <= ratio_cap))
        throw PreconditionError(to_string(s.id) + ": -b_v/||v_tilde|| = " + format_double(p.b_v_ratio) +
                                " exceeds alpha sin(pi/8)/4 = " + format_double(ratio_cap));
    if (no_bias && p.b_v_ratio != 0.0)
        throw PreconditionError("no_bias_target: the target bias must be 0");
    ExperimentResult r = start(s);
    const BoundedSetting bs = bounded_setting(k);
    const InitConstants ic = small_init_constants(alpha, *k.beta, bs.c);
    const Vec v = target(d, -p.b_v_ratio);
    const double tol = p.success_tol * s.tolerance_scale;

    r.trials.resize(s.n_trials);
    std::vector<std::string> traj(std::min(s.trajectories, s.n_trials));
    parallel_for(
        s.n_trials,
        [&](std::size_t i) {
            Rng rng = trial_rng(s, i);
            const Vec g = gaussian_vector(rng, d);
            const Vec wt = p.init == InitScale::Sphere ? Vec(ic.rho * g / g.norm())
                                                       : Vec(ic.rho * g / std::sqrt(static_cast<double>(d)));
            const Vec w0 = make_params(wt, 0.0);
            const double theta = weight_angle(w0, v);
            const double gap = evaluate(w0, v, dist, s.engine).loss_minus_f0;
            const DescentOutcome out = descend(w0, v, dist, s.engine, p.eta, p.max_iters, tol,
                                               p.learner_bias, i < traj.size() ? &traj[i] : nullptr);
            r.trials[i] = {{"trial", i},
                           {"theta", theta},
                           {"angle_ok", theta <= 0.75 * kPi},
                           {"loss_gap0", gap},
                           {"gate", gap < 0.0},
                           {"success", out.success},
                           {"final_dist", out.final_dist},
                           {"iterations", out.iterations},
                           {"termination", out.termination}};
        },
        s.workers);
    for (std::size_t i = 0; i < traj.size(); ++i) r.trajectories.emplace_back("trial_" + std::to_string(i), traj[i]);

    // Probability that the initial angle stays at most 3 pi / 4.
    const double oracle = 1.0 - angle_exceeds_probability(d, 0.75 * kPi);
    // Fixed-d thresholds are asserted only where the exceptional cap is below 1e-3.
    const bool asymptotic = 1.0 - oracle < 1e-3;
    ordered_json gate = named(cond("fraction_at_least", "gate"), "F(w0) < F(0) in at least 99% of trials");
    gate["reference"] = 0.99;
    ordered_json succ = named(cond("fraction_at_least", "success"), "success fraction at least 0.99");
    succ["reference"] = 0.99;
    ordered_json half = named(cond("fraction_at_least", "success"), "success fraction at least 1/2");
    half["reference"] = 0.5;
    ordered_json conv = named(where(cond("all", "success"), "gate"),
                              "every gated trial reaches ||w_T - v|| <= tol");
    ordered_json angle = named(where(cond("all", "gate"), "angle_ok"),
                               "theta(w0, v) <= 3pi/4 implies F(w0) < F(0)");
    const bool assert_success = p.learner_bias && asymptotic;
    r.conditions = {asymptotic ? gate : report_only(gate), angle,
                    assert_success ? conv : report_only(conv),
                    assert_success ? succ : report_only(succ), report_only(half)};
    set_primary(r, "gate");
    r.reference = oracle;
    r.reference_note = "exact spherical-cap probability of theta(w0, v) <= 3pi/4";
    r.report = {{"alpha", alpha},
                {"beta", *k.beta},
                {"c", bs.c},
                {"M", ic.M},
                {"rho", ic.rho},
                {"delta", ic.delta},
                {"b_v_ratio_cap", ratio_cap},
                {"angle_oracle", oracle},
                {"success", interval_json(count_true(r.trials, "success"), s.n_trials)},
                {"success_among_gated", interval_json(count_true(r.trials, "success", "gate"),
                                                       count_true(r.trials, "gate"))}};
    if (no_bias) r.report["bias_free_learner_baseline"] = 0.5;
    finish(r);
    return r;
}

// ---------------------------------------------------------------------------

ExperimentResult run_symmetric(const ExperimentSpec& s, const SymmetricParams& p) {
    if (p.d < 2) throw PreconditionError("symmetric_convergence: d must be >= 2");
    if (!(p.b_v >= 0.0)) throw PreconditionError("symmetric_convergence: b_v must be >= 0");
    const InputDistribution dist = InputDistribution::standard_gaussian(p.d);
    s.engine.validate(dist);
    const SpreadConstants k = estimate_constants(dist, s.base_seed, p.alpha);
    const double tau = *k.tau;
    const double floor = symmetric_alpha_floor(tau);
    if (!(p.alpha >= floor))
        throw PreconditionError("symmetric_convergence: alpha must be >= " + format_double(floor));
    const SymmetricRate sr = symmetric_rate(p.C, p.alpha, *k.beta, tau, *k.c4);
    const double eta = p.eta_fraction * sr.eta_max;
    if (!(eta * sr.lambda < 1.0))
        throw PreconditionError("symmetric_convergence: eta * lambda must be below 1");
    ExperimentResult r = start(s);
    const Vec v = target(p.d, p.b_v);
    const double dist_tol = p.dist_tol * s.tolerance_scale;

    r.trials.resize(s.n_trials);
    parallel_for(
        s.n_trials,
        [&](std::size_t i) {
            Rng rng = trial_rng(s, i);
            Vec w0 = v;
            std::size_t attempts = 1;
            if (p.init == SymmetricInit::Perturb) {
                w0 = v + uniform_in_ball(rng, p.d + 1, p.perturb_radius);
                while (bias(w0) < 0.0 && attempts < 10'000) {
                    w0 = v + uniform_in_ball(rng, p.d + 1, p.perturb_radius);
                    ++attempts;
                }
            } else if (p.init == SymmetricInit::Standard) {
                w0 = make_params(gaussian_vector(rng, p.d) / std::sqrt(static_cast<double>(p.d)), 0.0);
            }
            const double d0 = (w0 - v).squaredNorm();
            const bool gate = d0 < 1.0 && bias(w0) >= 0.0;
            ordered_json row = {{"trial", i}, {"attempts", attempts}, {"dist0_sq", d0},
                                {"b_w0", bias(w0)}, {"gate", gate}};
            if (gate) {
                const TheoremReport rep =
                    check_symmetric_descent(w0, v, dist, s.engine, eta, tau, p.max_steps, dist_tol);
                const std::size_t steps = rep.constants.value("steps", std::size_t{0});
                const double fin = rep.measured;
                row["descent_ok"] = rep.status == CheckStatus::Pass;
                row["final_dist"] = fin;
                row["steps"] = steps;
                row["max_theta"] = rep.constants.value("max_theta", kNaN);
                row["max_b_t"] = rep.constants.value("max_b_t", kNaN);
                row["rate_fit"] = steps > 0 && d0 > 0.0 && fin > 0.0
                                      ? -std::log(fin * fin / d0) / static_cast<double>(steps)
                                      : kNaN;
                row["notes"] = rep.notes;
            } else {
                row["descent_ok"] = false;
                row["final_dist"] = kNaN;
                row["steps"] = 0;
                row["max_theta"] = kNaN;
                row["max_b_t"] = kNaN;
                row["rate_fit"] = kNaN;
                row["notes"] = "not gated";
            }
            r.trials[i] = std::move(row);
        },
        s.workers);

    ordered_json gate_half = named(cond("fraction_at_least", "gate"), "gate fraction near 1/2");
    gate_half["reference"] = 0.5;
    r.conditions = {named(where(cond("all", "descent_ok"), "gate"),
                          "strict decrease, theta <= pi/2, b_t cap, final distance")};
    if (p.init == SymmetricInit::Standard) r.conditions.push_back(report_only(gate_half));
    set_primary(r, "descent_ok", "gate");
    r.reference = 1.0;
    r.reference_note = "every gated trial converges with the invariants intact";
    double min_fit = std::numeric_limits<double>::infinity();
    for (const auto& row : r.trials) {
        const double f = row.at("rate_fit").get<double>();
        if (!std::isnan(f)) min_fit = std::min(min_fit, f);
    }
    r.report = {{"beta", *k.beta},
                {"tau", tau},
                {"c4", *k.c4},
                {"alpha_floor", floor},
                {"eta", eta},
                {"eta_max", sr.eta_max},
                {"lambda", sr.lambda},
                {"eta_lambda", eta * sr.lambda},
                {"min_rate_fit", std::isfinite(min_fit) ? min_fit : kNaN},
                {"gate", interval_json(count_true(r.trials, "gate"), s.n_trials)}};
    finish(r);
    return r;
}

// ---------------------------------------------------------------------------

ExperimentResult run_tightness(const ExperimentSpec& s, const TightnessParams& p) {
    if (p.d < 3) throw PreconditionError("tightness: d must be >= 3");
    if (p.n_ratios < 2) throw PreconditionError("tightness: n_ratios must be >= 2");
    ExperimentResult r = start(s);
    const int d = p.d;
    const InputDistribution dist = InputDistribution::uniform_ball(d, p.r);
    s.engine.validate(dist);
    const double alpha = 0.5 * p.r;
    const SpreadConstants k = estimate_constants(dist, s.base_seed, alpha);
    const BoundedSetting bs = bounded_setting(k);
    const InitConstants ic = small_init_constants(alpha, *k.beta, bs.c);
    const double top = p.r - p.r / (2.0 * d * d);
    const double admissible_cap = alpha * std::sin(kPi / 8.0) / 4.0;
    const double tol = p.success_tol * s.tolerance_scale;
    const std::size_t n = s.n_trials;

    r.trials.resize(p.n_ratios * n);
    parallel_for(
        r.trials.size(),
        [&](std::size_t j) {
            const std::size_t ri = j / n;
            const std::size_t i = j % n;
            const double ratio = top * static_cast<double>(ri) / static_cast<double>(p.n_ratios - 1);
            const Vec v = target(d, -ratio);
            // The same initialization is used at every ratio.
            Rng rng = trial_rng(s, i);
            const Vec w0 = make_params(ic.rho * uniform_direction(rng, d), 0.0);
            const bool event = overlap_empty(w0, v, dist);
            const double gap = evaluate(w0, v, dist, s.engine).loss_minus_f0;
            const DescentOutcome out =
                descend(w0, v, dist, s.engine, p.eta, p.max_iters, tol, true, nullptr);
            r.trials[j] = {{"ratio_index", ri},
                           {"ratio", ratio},
                           {"trial", i},
                           {"admissible", ratio <= admissible_cap},
                           {"event", event},
                           {"gate", gap < 0.0},
                           {"success", out.success},
                           {"failure", !out.success},
                           {"final_dist", out.final_dist},
                           {"iterations", out.iterations},
                           {"termination", out.termination}};
        },
        s.workers);

    const double oracle = 1.0 - angle_exceeds_probability(d, 0.75 * kPi);
    ordered_json mono = cond("monotone_within_noise", "success");
    mono["group"] = "ratio_index";
    ordered_json adm = where(cond("fraction_at_least_ci", "success"), "admissible");
    adm["reference"] = oracle;
    r.conditions = {named(mono, "success fraction non-increasing in the ratio within noise"),
                    named(adm, "admissible ratios succeed at the small-initialization rate"),
                    named(where(cond("all", "failure"), "event"),
                          "trials with disjoint active regions never converge")};
    set_primary(r, "success", "admissible");
    r.reference = oracle;
    r.reference_note = "exact spherical-cap probability of theta(w0, v) <= 3pi/4";
    ordered_json curve = ordered_json::array();
    for (std::size_t ri = 0; ri < p.n_ratios; ++ri) {
        std::size_t succ = 0, ev = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& row = r.trials[ri * n + i];
            succ += row.at("success").get<bool>();
            ev += row.at("event").get<bool>();
        }
        ordered_json pt = interval_json(succ, n);
        pt["ratio"] = r.trials[ri * n].at("ratio");
        pt["event_fraction"] = frac(ev, n);
        pt["failure_fraction"] = frac(n - succ, n);
        curve.push_back(pt);
    }
    r.report = {{"alpha", alpha},       {"beta", *k.beta},  {"rho", ic.rho},
                {"admissible_cap", admissible_cap}, {"two_alpha", 2.0 * alpha}, {"curve", curve}};
    finish(r);
    return r;
}

// ---------------------------------------------------------------------------
// Conditions

struct Column {
    std::vector<double> values;
};

Column column_values(const CsvTable& t, const std::string& name) {
    const int c = t.column(name);
    if (c < 0) throw std::invalid_argument("condition: trials table has no column '" + name + "'");
    Column out;
    out.values.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        const std::string& f = static_cast<std::size_t>(c) < row.size() ? row[c] : std::string();
        if (f.empty()) {
            out.values.push_back(kNaN);
        } else {
            char* end = nullptr;
            const double x = std::strtod(f.c_str(), &end);
            out.values.push_back(end == f.c_str() ? kNaN : x);
        }
    }
    return out;
}

std::vector<std::size_t> selected_rows(const CsvTable& t, const ordered_json& c) {
    std::vector<std::size_t> idx;
    if (!c.contains("where")) {
        for (std::size_t i = 0; i < t.rows.size(); ++i) idx.push_back(i);
        return idx;
    }
    const Column w = column_values(t, c.at("where").get<std::string>());
    for (std::size_t i = 0; i < w.values.size(); ++i)
        if (w.values[i] == 1.0) idx.push_back(i);
    return idx;
}

ConditionResult evaluate_one(const ordered_json& c, const CsvTable& t) {
    ConditionResult res;
    res.condition = c;
    res.asserted = c.value("assert", true);
    const std::string kind = c.at("kind").get<std::string>();
    const Column col = column_values(t, c.at("column").get<std::string>());
    const std::vector<std::size_t> rows = selected_rows(t, c);
    auto& det = res.detail;
    det["rows"] = rows.size();

    if (kind == "fraction_at_least_ci" || kind == "fraction_at_least" || kind == "fraction_in_band") {
        std::size_t k = 0;
        for (std::size_t i : rows) k += col.values[i] == 1.0;
        const double ph = frac(k, rows.size());
        const Interval ci = rows.empty() ? Interval{0.0, 1.0} : wilson_interval(k, rows.size());
        det["successes"] = k;
        det["fraction"] = ph;
        det["ci95"] = {ci.lo, ci.hi};
        if (rows.empty()) {
            res.pass = false;
        } else if (kind == "fraction_in_band") {
            res.pass = ph >= c.at("lo").get<double>() && ph <= c.at("hi").get<double>();
        } else {
            const double ref = c.at("reference").get<double>();
            const double slack = kind == "fraction_at_least_ci" ? ci.half_width() : 0.0;
            det["threshold"] = ref - slack;
            res.pass = ph >= ref - slack;
        }
    } else if (kind == "all" || kind == "agree" || kind == "max_at_most") {
        std::optional<Column> other;
        if (kind == "agree") other = column_values(t, c.at("other").get<std::string>());
        const double cap = kind == "max_at_most" ? c.at("value").get<double>() : 0.0;
        std::size_t bad = 0;
        std::optional<std::size_t> first;
        for (std::size_t i : rows) {
            const double x = col.values[i];
            bool ok;
            if (kind == "all") {
                ok = x == 1.0;
            } else if (kind == "agree") {
                const double y = other->values[i];
                ok = x == y || (std::isnan(x) && std::isnan(y));
            } else {
                ok = x <= cap;
            }
            if (!ok) {
                ++bad;
                if (!first) first = i;
            }
        }
        det["violations"] = bad;
        if (first) det["first_violating_row"] = *first;
        res.pass = bad == 0 && (kind != "all" || !rows.empty());
    } else if (kind == "monotone_within_noise") {
        const Column g = column_values(t, c.at("group").get<std::string>());
        std::map<double, std::pair<std::size_t, std::size_t>> groups;
        for (std::size_t i : rows) {
            auto& [k, n] = groups[g.values[i]];
            k += col.values[i] == 1.0;
            ++n;
        }
        res.pass = !groups.empty();
        ordered_json pts = ordered_json::array();
        std::optional<std::pair<double, double>> prev;  // (fraction, half-width)
        for (const auto& [key, kn] : groups) {
            const auto [k, n] = kn;
            const Interval ci = wilson_interval(k, n);
            const double ph = frac(k, n);
            pts.push_back({{"group", key}, {"fraction", ph}, {"half_width", ci.half_width()}});
            if (prev && ph > prev->first + prev->second + ci.half_width()) res.pass = false;
            prev = std::pair{ph, ci.half_width()};
        }
        det["groups"] = pts;
    } else {
        throw std::invalid_argument("condition: unknown kind '" + kind + "'");
    }
    return res;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(ExperimentId id) {
    for (const auto& e : kIds)
        if (e.id == id) return e.name;
    return "unknown";
}

std::optional<ExperimentId> parse_experiment_id(const std::string& s) {
    for (const auto& e : kIds)
        if (s == e.name) return e.id;
    return std::nullopt;
}

const std::vector<ExperimentId>& all_experiment_ids() {
    static const std::vector<ExperimentId> ids = [] {
        std::vector<ExperimentId> v;
        for (const auto& e : kIds) v.push_back(e.id);
        return v;
    }();
    return ids;
}

ExperimentParams default_params(ExperimentId id) {
    switch (id) {
        case ExperimentId::StuckAtInit: return StuckAtInitParams{};
        case ExperimentId::NegativeBiasFailure: return NegativeBiasParams{};
        case ExperimentId::F0Computation: return F0Params{};
        case ExperimentId::LinearRate: return LinearRateParams{};
        case ExperimentId::RandomInit: return RandomInitParams{};
        case ExperimentId::SymmetricConvergence: return SymmetricParams{};
        case ExperimentId::NoBiasTarget: return RandomInitParams{};
        case ExperimentId::Tightness: return TightnessParams{};
    }
    return StuckAtInitParams{};
}

std::size_t default_trials(ExperimentId id) {
    switch (id) {
        case ExperimentId::StuckAtInit: return 4000;
        case ExperimentId::NegativeBiasFailure: return 1000;
        case ExperimentId::F0Computation: return 1;
        case ExperimentId::LinearRate: return 1;
        case ExperimentId::RandomInit: return 500;
        case ExperimentId::SymmetricConvergence: return 100;
        case ExperimentId::NoBiasTarget: return 500;
        case ExperimentId::Tightness: return 50;
    }
    return 1;
}

ExperimentSpec ExperimentSpec::defaults(ExperimentId id) {
    ExperimentSpec s;
    s.id = id;
    s.params = default_params(id);
    s.n_trials = default_trials(id);
    return s;
}

void ExperimentSpec::validate() const {
    if (n_trials < 1) throw std::invalid_argument("n_trials must be >= 1");
    if (!(tolerance_scale > 0.0) || !std::isfinite(tolerance_scale))
        throw std::invalid_argument("tolerance_scale must be positive");
    auto positive = [](double x, const char* field) {
        if (!(x > 0.0) || !std::isfinite(x))
            throw std::invalid_argument(std::string("params.") + field + " must be positive");
    };
    auto expect = [&](bool ok) {
        if (!ok)
            throw std::invalid_argument("params do not match experiment '" + to_string(id) + "'");
    };
    switch (id) {
        case ExperimentId::StuckAtInit: {
            const auto* p = std::get_if<StuckAtInitParams>(&params);
            expect(p);
            if (p->d < 1) throw std::invalid_argument("params.d must be >= 1");
            positive(p->epsilon, "epsilon");
            positive(p->eta, "eta");
            break;
        }
        case ExperimentId::NegativeBiasFailure: {
            const auto* p = std::get_if<NegativeBiasParams>(&params);
            expect(p);
            if (p->d < 1) throw std::invalid_argument("params.d must be >= 1");
            positive(p->r, "r");
            positive(p->rho, "rho");
            positive(p->t_max, "t_max");
            positive(p->dt, "dt");
            if (!(p->loss_tol >= 0.0)) throw std::invalid_argument("params.loss_tol must be >= 0");
            if (!(p->band_lo <= p->band_hi))
                throw std::invalid_argument("params.band_lo must not exceed params.band_hi");
            break;
        }
        case ExperimentId::F0Computation: {
            const auto* p = std::get_if<F0Params>(&params);
            expect(p);
            if (p->dims.empty()) throw std::invalid_argument("params.dims must not be empty");
            positive(p->r, "r");
            if (!(p->cap_fraction > 0.0 && p->cap_fraction < 1.0))
                throw std::invalid_argument("params.cap_fraction must lie in (0, 1)");
            if (!(p->cap_depth > 2.0)) throw std::invalid_argument("params.cap_depth must exceed 2");
            if (p->mc_samples < 2) throw std::invalid_argument("params.mc_samples must be >= 2");
            break;
        }
        case ExperimentId::LinearRate: {
            const auto* p = std::get_if<LinearRateParams>(&params);
            expect(p);
            p->dist.validate();
            positive(p->eta_scale, "eta_scale");
            if (p->n_steps < 1) throw std::invalid_argument("params.n_steps must be >= 1");
            if (p->alpha) positive(*p->alpha, "alpha");
            const Eigen::Index want = p->dist.dim + 1;
            if (p->w0 && p->w0->size() != want)
                throw std::invalid_argument("params.w0: length " + std::to_string(p->w0->size()) +
                                            " does not match distribution.dim + 1 = " +
                                            std::to_string(want));
            if (p->v && p->v->size() != want)
                throw std::invalid_argument("params.v: length " + std::to_string(p->v->size()) +
                                            " does not match distribution.dim + 1 = " +
                                            std::to_string(want));
            break;
        }
        case ExperimentId::RandomInit:
        case ExperimentId::NoBiasTarget: {
            const auto* p = std::get_if<RandomInitParams>(&params);
            expect(p);
            p->dist.validate();
            positive(p->eta, "eta");
            positive(p->success_tol, "success_tol");
            if (p->alpha) positive(*p->alpha, "alpha");
            if (!(p->b_v_ratio >= 0.0)) throw std::invalid_argument("params.b_v_ratio must be >= 0");
            if (p->dist.dim < 2) throw std::invalid_argument("distribution.dim must be >= 2");
            if (p->max_iters < 1) throw std::invalid_argument("params.max_iters must be >= 1");
            break;
        }
        case ExperimentId::SymmetricConvergence: {
            const auto* p = std::get_if<SymmetricParams>(&params);
            expect(p);
            positive(p->alpha, "alpha");
            positive(p->C, "C");
            positive(p->dist_tol, "dist_tol");
            if (!(p->eta_fraction > 0.0 && p->eta_fraction < 1.0))
                throw std::invalid_argument("params.eta_fraction must lie in (0, 1)");
            if (!(p->perturb_radius > 0.0 && p->perturb_radius <= 1.0))
                throw std::invalid_argument("params.perturb_radius must lie in (0, 1]");
            if (p->max_steps < 1) throw std::invalid_argument("params.max_steps must be >= 1");
            break;
        }
        case ExperimentId::Tightness: {
            const auto* p = std::get_if<TightnessParams>(&params);
            expect(p);
            positive(p->r, "r");
            positive(p->eta, "eta");
            positive(p->success_tol, "success_tol");
            if (p->max_iters < 1) throw std::invalid_argument("params.max_iters must be >= 1");
            break;
        }
    }
}

ordered_json ExperimentSpec::to_json() const {
    return {{"experiment", neuron_lab::to_string(id)},
            {"n_trials", n_trials},
            {"seed", base_seed},
            {"workers", workers},
            {"tolerance_scale", tolerance_scale},
            {"trajectories", trajectories},
            {"engine", engine_json(engine)},
            {"params", params_json(params)}};
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::Pass: return "pass";
        case Verdict::Fail: return "fail";
        case Verdict::Reported: return "reported";
        case Verdict::Skipped: return "skipped";
    }
    return "unknown";
}

std::optional<Verdict> parse_verdict(const std::string& s) {
    for (Verdict v : {Verdict::Pass, Verdict::Fail, Verdict::Reported, Verdict::Skipped})
        if (to_string(v) == s) return v;
    return std::nullopt;
}

std::vector<ConditionResult> evaluate_conditions(const ordered_json& conditions,
                                                 const CsvTable& trials) {
    std::vector<ConditionResult> out;
    for (const auto& c : conditions) out.push_back(evaluate_one(c, trials));
    return out;
}

Verdict combine(const std::vector<ConditionResult>& results) {
    bool any = false;
    for (const auto& r : results) {
        if (!r.asserted) continue;
        any = true;
        if (!r.pass) return Verdict::Fail;
    }
    return any ? Verdict::Pass : Verdict::Reported;
}

Verdict reverdict(const ordered_json& summary, const CsvTable& trials) {
    if (summary.value("verdict", std::string()) == "skipped") return Verdict::Skipped;
    return combine(evaluate_conditions(summary.at("conditions"), trials));
}

ordered_json ExperimentResult::summary_json() const {
    ordered_json j;
    j["experiment"] = to_string(id);
    j["verdict"] = to_string(verdict);
    if (!skip_reason.empty()) j["skip_reason"] = skip_reason;
    ordered_json prim;
    prim["column"] = primary_column;
    prim["where"] = primary_where.empty() ? ordered_json() : ordered_json(primary_where);
    prim["successes"] = successes;
    prim["n"] = n;
    prim["fraction"] = frac(successes, n);
    prim["ci95"] = {interval.lo, interval.hi};
    prim["reference"] = reference ? ordered_json(*reference) : ordered_json();
    prim["reference_note"] = reference_note;
    j["primary"] = prim;
    j["conditions"] = conditions;
    ordered_json res = ordered_json::array();
    for (const auto& c : checks) {
        res.push_back({{"name", c.condition.value("name", c.condition.value("kind", ""))},
                       {"pass", c.pass},
                       {"asserted", c.asserted},
                       {"detail", c.detail}});
    }
    j["condition_results"] = res;
    j["report"] = report;
    return j;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    switch (spec.id) {
        case ExperimentId::StuckAtInit:
            return run_stuck(spec, std::get<StuckAtInitParams>(spec.params));
        case ExperimentId::NegativeBiasFailure:
            return run_negative_bias(spec, std::get<NegativeBiasParams>(spec.params));
        case ExperimentId::F0Computation:
            return run_f0(spec, std::get<F0Params>(spec.params));
        case ExperimentId::LinearRate:
            return run_linear_rate(spec, std::get<LinearRateParams>(spec.params));
        case ExperimentId::RandomInit:
            return run_random_init(spec, std::get<RandomInitParams>(spec.params), false);
        case ExperimentId::SymmetricConvergence:
            return run_symmetric(spec, std::get<SymmetricParams>(spec.params));
        case ExperimentId::NoBiasTarget:
            return run_random_init(spec, std::get<RandomInitParams>(spec.params), true);
        case ExperimentId::Tightness:
            return run_tightness(spec, std::get<TightnessParams>(spec.params));
    }
    throw std::invalid_argument("unknown experiment");
}

namespace {

std::string utc_stamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s%03dZ", buf, static_cast<int>(ms));
    return out;
}

}  // namespace

std::filesystem::path write_result(const ExperimentResult& result, const std::filesystem::path& out_root,
                                   const ordered_json& manifest) {
    namespace fs = std::filesystem;
    const fs::path base = out_root / to_string(result.id);
    fs::create_directories(base);
    const std::string stamp = utc_stamp();
    fs::path dir = base / stamp;
    for (int k = 1; !fs::create_directory(dir); ++k) dir = base / (stamp + "-" + std::to_string(k));
    write_file(dir / "config.json", result.config.dump(2) + "\n");
    write_file(dir / "trials.csv", to_csv(result.trials));
    write_file(dir / "summary.json", result.summary_json().dump(2) + "\n");
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    if (!result.trajectories.empty()) {
        fs::create_directories(dir / "trajectories");
        for (const auto& [name, csv] : result.trajectories)
            write_file(dir / "trajectories" / (name + ".csv"), csv);
    }
    return dir;
}

std::vector<std::pair<std::string, ordered_json>> result_metrics(const ExperimentResult& r) {
    std::vector<std::pair<std::string, ordered_json>> m;
    m.emplace_back("verdict", to_string(r.verdict));
    m.emplace_back("successes", r.successes);
    m.emplace_back("n", r.n);
    m.emplace_back("fraction", frac(r.successes, r.n));
    m.emplace_back("ci_lo", r.interval.lo);
    m.emplace_back("ci_hi", r.interval.hi);
    m.emplace_back("reference", r.reference ? ordered_json(*r.reference) : ordered_json());
    for (const auto& [k, v] : r.report.items())
        if (v.is_primitive()) m.emplace_back(k, v);
    if (r.id == ExperimentId::F0Computation) {
        for (const auto& row : r.trials) {
            const std::string sfx = "_d" + row.at("d").dump();
            m.emplace_back("log_f0_ball" + sfx, row.at("log_f0_ball"));
            m.emplace_back("f0_cap" + sfx, row.at("f0_cap"));
            m.emplace_back("k" + sfx, row.at("k"));
        }
    }
    return m;
}

}  // namespace neuron_lab
