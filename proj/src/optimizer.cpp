#include "neuron_lab/optimizer.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "neuron_lab/io.hpp"

namespace neuron_lab {

void OptimizerConfig::validate() const {
    if (auto* gd = std::get_if<GradientDescentMethod>(&method)) {
        if (!(gd->eta > 0.0) || !std::isfinite(gd->eta))
            throw std::invalid_argument("optimizer.eta must be positive");
    } else {
        const auto& fl = std::get<GradientFlowMethod>(method);
        if (!(fl.dt > 0.0) || !std::isfinite(fl.dt))
            throw std::invalid_argument("optimizer.dt must be positive");
        if (!(fl.t_max > 0.0) || !std::isfinite(fl.t_max))
            throw std::invalid_argument("optimizer.t_max must be positive");
    }
    int disabled = 0;
    const std::pair<const char*, const std::optional<double>*> tols[] = {
        {"optimizer.stop.grad_norm_tol", &stop.grad_norm_tol},
        {"optimizer.stop.dist_to_v_tol", &stop.dist_to_v_tol},
        {"optimizer.stop.loss_tol", &stop.loss_tol}};
    for (const auto& [name, tol] : tols) {
        if (!tol->has_value()) {
            ++disabled;
        } else if (!(**tol >= 0.0)) {
            throw std::invalid_argument(std::string(name) + " must be >= 0");
        }
    }
    if (disabled > 1)
        throw std::invalid_argument("optimizer.stop: at most one stop criterion may be disabled");
    if (max_iters < 1) throw std::invalid_argument("optimizer.max_iters must be >= 1");
    if (!(divergence_norm > 0.0)) throw std::invalid_argument("optimizer.divergence_norm must be positive");
}

std::string to_string(Termination t) {
    switch (t) {
        case Termination::GradNorm: return "grad_norm";
        case Termination::DistToV: return "dist_to_v";
        case Termination::Loss: return "loss";
        case Termination::MaxIters: return "max_iters";
        case Termination::TimeLimit: return "t_max";
        case Termination::Diverged: return "diverged";
    }
    return "unknown";
}

StepFlags compute_flags(const Vec& w, const Vec& v, const InputDistribution& dist,
                        const Evaluation& e, const FlagSettings& s) {
    StepFlags f;
    f.is_dead_cone = is_dead(w, dist);
    const double theta = weight_angle(w, v);
    f.theta_le_threshold = !std::isnan(theta) && theta <= s.theta_threshold;
    f.b_t_value = bias_ratio(w);
    f.f_below_f0_minus_delta = e.loss_minus_f0 <= -s.f0_delta;
    return f;
}

namespace {

// Every step up to `dense`, then every 2^k-th step on (dense 2^{k-1}, dense 2^k].
bool should_store(std::size_t t, std::size_t dense) {
    if (t <= dense) return true;
    if (dense == 0) return false;
    std::size_t stride = 2;
    std::size_t bound = 2 * dense;
    while (t > bound) {
        bound *= 2;
        stride *= 2;
    }
    return t % stride == 0;
}

struct Runner {
    const Vec& v;
    const InputDistribution& dist;
    const GradientEngine& engine;
    const OptimizerConfig& cfg;
    const StepObserver& observer;
    TrajectoryRecord out;

    // Records the state and returns a termination reason if a stop
    // criterion holds.
    std::optional<Termination> visit(std::size_t iter, double time, const Vec& w,
                                     const Evaluation& e, bool force_store) {
        StepRecord rec;
        rec.iter = iter;
        rec.time = time;
        rec.w = w;
        rec.loss = e.loss;
        rec.dist_sq = (w - v).squaredNorm();
        rec.grad_norm = e.grad.norm();
        rec.flags = compute_flags(w, v, dist, e, cfg.flags);
        if (observer) observer(rec, e);

        out.final_w = w;
        out.final_loss = rec.loss;
        out.final_dist_sq = rec.dist_sq;
        out.final_grad_norm = rec.grad_norm;
        out.final_time = time;
        out.iterations = iter;

        std::optional<Termination> stop;
        const auto& st = cfg.stop;
        if (st.grad_norm_tol && rec.grad_norm <= *st.grad_norm_tol) {
            stop = Termination::GradNorm;
        } else if (st.dist_to_v_tol && std::sqrt(rec.dist_sq) <= *st.dist_to_v_tol) {
            stop = Termination::DistToV;
        } else if (st.loss_tol && rec.loss <= *st.loss_tol) {
            stop = Termination::Loss;
        }
        if (force_store || stop || should_store(iter, cfg.store_every_step_until))
            out.steps.push_back(std::move(rec));
        return stop;
    }

    bool diverged(const Vec& w) const {
        return !w.allFinite() || w.norm() > cfg.divergence_norm;
    }
};

TrajectoryRecord flow_impl(const Vec& w0, const Vec& v, const InputDistribution& dist,
                           const GradientEngine& engine, const OptimizerConfig& cfg,
                           const GradientFlowMethod& fl, const StepObserver& observer) {
    Runner run{v, dist, engine, cfg, observer, {}};
    Vec w = w0;
    const std::size_t n_steps = static_cast<std::size_t>(std::ceil(fl.t_max / fl.dt - 1e-9));
    auto grad_at = [&](const Vec& x) { return evaluate(x, v, dist, engine).grad; };
    for (std::size_t step = 0;; ++step) {
        const double time = std::min(fl.t_max, step * fl.dt);
        const Evaluation e = evaluate(w, v, dist, engine);
        const bool last = step >= n_steps || step >= cfg.max_iters;
        if (auto stop = run.visit(step, time, w, e, last)) {
            run.out.reason = *stop;
            break;
        }
        if (step >= n_steps) {
            run.out.reason = Termination::TimeLimit;
            break;
        }
        if (step >= cfg.max_iters) {
            run.out.reason = Termination::MaxIters;
            break;
        }
        const double h = std::min(fl.t_max, (step + 1) * fl.dt) - time;
        Vec next;
        if (fl.integrator == Integrator::Euler) {
            next = w - h * e.grad;
        } else {
            const Vec k1 = -e.grad;
            const Vec k2 = -grad_at(w + 0.5 * h * k1);
            const Vec k3 = -grad_at(w + 0.5 * h * k2);
            const Vec k4 = -grad_at(w + h * k3);
            next = w + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if (run.diverged(next)) {
            run.out.reason = Termination::Diverged;
            run.out.message = "iterate left the ball of radius " + format_double(cfg.divergence_norm) +
                              " or became non-finite after step " + std::to_string(step);
            break;
        }
        w = next;
    }
    return run.out;
}

}  // namespace

TrajectoryRecord run_gd(const Vec& w0, const Vec& v, const InputDistribution& dist,
                        const GradientEngine& engine, const OptimizerConfig& cfg,
                        const StepObserver& observer) {
    cfg.validate();
    const auto* gd = std::get_if<GradientDescentMethod>(&cfg.method);
    if (!gd) throw std::invalid_argument("run_gd: optimizer method must be gradient descent");
    Runner run{v, dist, engine, cfg, observer, {}};
    Vec w = w0;
    for (std::size_t t = 0;; ++t) {
        const Evaluation e = evaluate(w, v, dist, engine);
        const bool last = t >= cfg.max_iters;
        if (auto stop = run.visit(t, static_cast<double>(t), w, e, last)) {
            run.out.reason = *stop;
            break;
        }
        if (last) {
            run.out.reason = Termination::MaxIters;
            break;
        }
        Vec next = w - gd->eta * e.grad;
        if (run.diverged(next)) {
            run.out.reason = Termination::Diverged;
            run.out.message = "iterate left the ball of radius " + format_double(cfg.divergence_norm) +
                              " or became non-finite after step " + std::to_string(t);
            break;
        }
        w = std::move(next);
    }
    return run.out;
}

TrajectoryRecord run_flow(const Vec& w0, const Vec& v, const InputDistribution& dist,
                          const GradientEngine& engine, const OptimizerConfig& cfg,
                          const StepObserver& observer) {
    cfg.validate();
    const auto* fl = std::get_if<GradientFlowMethod>(&cfg.method);
    if (!fl) throw std::invalid_argument("run_flow: optimizer method must be gradient flow");
    TrajectoryRecord out = flow_impl(w0, v, dist, engine, cfg, *fl, observer);
    if (fl->step_halving_check && out.reason != Termination::Diverged) {
        GradientFlowMethod half = *fl;
        half.dt = 0.5 * fl->dt;
        OptimizerConfig cfg_half = cfg;
        cfg_half.max_iters = cfg.max_iters == std::numeric_limits<std::size_t>::max()
                                 ? cfg.max_iters
                                 : 2 * cfg.max_iters;
        cfg_half.store_every_step_until = 0;
        const TrajectoryRecord ref = flow_impl(w0, v, dist, engine, cfg_half, half, {});
        const double delta = std::abs(std::sqrt(out.final_dist_sq) - std::sqrt(ref.final_dist_sq));
        out.halving_delta = delta;
        out.halving_warning = !(delta < 1e-4);
    }
    return out;
}

std::string trajectory_csv(const TrajectoryRecord& t) {
    std::ostringstream s;
    if (t.steps.empty()) return "";
    const Eigen::Index n = t.steps.front().w.size();
    s << "iter,time";
    for (Eigen::Index i = 0; i < n; ++i) s << ",w_" << i;
    s << ",loss,dist_sq,grad_norm,is_dead_cone,theta_le_threshold,b_t,f_below_f0_minus_delta\r\n";
    for (const auto& r : t.steps) {
        s << r.iter << ',' << format_double(r.time);
        for (Eigen::Index i = 0; i < n; ++i) s << ',' << format_double(r.w(i));
        s << ',' << format_double(r.loss) << ',' << format_double(r.dist_sq) << ','
          << format_double(r.grad_norm) << ',' << (r.flags.is_dead_cone ? 1 : 0) << ','
          << (r.flags.theta_le_threshold ? 1 : 0) << ',' << format_double(r.flags.b_t_value) << ','
          << (r.flags.f_below_f0_minus_delta ? 1 : 0) << "\r\n";
    }
    return s.str();
}

nlohmann::json trajectory_summary(const TrajectoryRecord& t) {
    nlohmann::json j;
    j["termination"] = to_string(t.reason);
    j["iterations"] = t.iterations;
    j["final_time"] = t.final_time;
    j["final_w"] = std::vector<double>(t.final_w.data(), t.final_w.data() + t.final_w.size());
    j["final_loss"] = t.final_loss;
    j["final_dist_sq"] = t.final_dist_sq;
    j["final_grad_norm"] = t.final_grad_norm;
    j["stored_steps"] = t.steps.size();
    j["halving_warning"] = t.halving_warning;
    if (t.halving_delta) j["halving_delta"] = *t.halving_delta;
    if (!t.message.empty()) j["message"] = t.message;
    return j;
}

}  // namespace neuron_lab
