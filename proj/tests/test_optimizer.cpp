#include <cmath>

#include "doctest.h"
#include "neuron_lab/optimizer.hpp"
#include "neuron_lab/params.hpp"

using namespace neuron_lab;

namespace {

Vec params(std::initializer_list<double> x) {
    Vec w(static_cast<Eigen::Index>(x.size()));
    Eigen::Index i = 0;
    for (double a : x) w(i++) = a;
    return w;
}

OptimizerConfig gd(double eta, std::size_t max_iters) {
    OptimizerConfig c;
    c.method = GradientDescentMethod{eta};
    c.max_iters = max_iters;
    return c;
}

OptimizerConfig flow(Integrator integ, double dt, double t_max) {
    OptimizerConfig c;
    GradientFlowMethod m;
    m.integrator = integ;
    m.dt = dt;
    m.t_max = t_max;
    m.step_halving_check = false;
    c.method = m;
    c.stop = {0.0, 0.0, std::nullopt};
    return c;
}

}  // namespace

TEST_CASE("gradient descent from near the target converges to it") {
    const auto dist = InputDistribution::standard_gaussian(3);
    const auto eng = GradientEngine::quadrature();
    const Vec v = params({1.0, 0.0, 0.0, 0.2});
    const Vec w0 = params({0.7, 0.3, -0.1, 0.0});
    OptimizerConfig c = gd(1.0, 5000);
    c.stop = {0.0, 1e-8, std::nullopt};
    const auto t = run_gd(w0, v, dist, eng, c);
    CHECK(t.reason == Termination::DistToV);
    CHECK((t.final_w - v).norm() <= 1e-8);
    CHECK(t.steps.front().iter == 0);
    CHECK(t.steps.front().w == w0);
    for (std::size_t i = 1; i < t.steps.size(); ++i) CHECK(t.steps[i].dist_sq < t.steps[i - 1].dist_sq);
}

TEST_CASE("one gradient step equals w - eta grad") {
    const auto dist = InputDistribution::uniform_ball(2, 1.0);
    const auto eng = GradientEngine::quadrature();
    const Vec v = params({0.0, 1.0, 0.1});
    const Vec w0 = params({0.5, 0.2, 0.0});
    const auto t = run_gd(w0, v, dist, eng, gd(0.3, 1));
    REQUIRE(t.steps.size() == 2);
    CHECK(t.reason == Termination::MaxIters);
    CHECK(t.iterations == 1);
    const Vec expect = w0 - 0.3 * evaluate(w0, v, dist, eng).grad;
    CHECK(t.final_w == expect);
}

TEST_CASE("RK4 and Euler have fourth and first order accuracy") {
    const auto dist = InputDistribution::standard_gaussian(2);
    const auto eng = GradientEngine::quadrature();
    const Vec v = params({1.0, 0.0, 0.0});
    const Vec w0 = params({0.3, 0.8, 0.1});
    const double T = 2.0;
    const Vec ref = run_flow(w0, v, dist, eng, flow(Integrator::RK4, 1e-3, T)).final_w;
    auto err = [&](Integrator i, double dt) {
        return (run_flow(w0, v, dist, eng, flow(i, dt, T)).final_w - ref).norm();
    };
    const double rk_ratio = err(Integrator::RK4, 0.2) / err(Integrator::RK4, 0.1);
    const double eu_ratio = err(Integrator::Euler, 0.02) / err(Integrator::Euler, 0.01);
    CHECK(rk_ratio > 12.0);
    CHECK(rk_ratio < 20.0);
    CHECK(eu_ratio > 1.8);
    CHECK(eu_ratio < 2.2);
}

TEST_CASE("flow stops at t_max and reports the final time") {
    const auto dist = InputDistribution::standard_gaussian(2);
    const auto t = run_flow(params({0.3, 0.8, 0.1}), params({1.0, 0.0, 0.0}), dist,
                            GradientEngine::quadrature(), flow(Integrator::RK4, 0.3, 1.0));
    CHECK(t.reason == Termination::TimeLimit);
    CHECK(t.final_time == doctest::Approx(1.0));
    CHECK(t.iterations == 4);
}

TEST_CASE("step halving check compares against a half-step run") {
    const auto dist = InputDistribution::standard_gaussian(2);
    OptimizerConfig c = flow(Integrator::Euler, 0.5, 5.0);
    std::get<GradientFlowMethod>(c.method).step_halving_check = true;
    const auto t = run_flow(params({0.3, 0.8, 0.1}), params({1.0, 0.0, 0.0}), dist, GradientEngine::quadrature(), c);
    REQUIRE(t.halving_delta);
    CHECK(*t.halving_delta > 0.0);
    CHECK(t.halving_warning == (*t.halving_delta >= 1e-4));
}

TEST_CASE("gradient norm stop fires in a dead region") {
    const auto dist = InputDistribution::uniform_ball(3, 1.0);
    const Vec w0 = params({0.1, 0.0, 0.0, -2.0});
    const auto t = run_gd(w0, params({1.0, 0.0, 0.0, 0.0}), dist, GradientEngine::quadrature(), gd(0.1, 100));
    CHECK(t.reason == Termination::GradNorm);
    CHECK(t.iterations == 0);
    CHECK(t.steps.front().flags.is_dead_cone);
}

TEST_CASE("divergence is reported with the last finite state") {
    const auto dist = InputDistribution::standard_gaussian(2);
    OptimizerConfig c = gd(1e3, 100);
    c.divergence_norm = 1e3;
    const Vec w0 = params({0.3, 0.8, 0.1});
    const auto t = run_gd(w0, params({1.0, 0.0, 0.0}), dist, GradientEngine::quadrature(), c);
    CHECK(t.reason == Termination::Diverged);
    CHECK(t.final_w.allFinite());
    CHECK_FALSE(t.message.empty());
}

TEST_CASE("storage thins out after the dense prefix but the observer sees every step") {
    const auto dist = InputDistribution::standard_gaussian(2);
    OptimizerConfig c = gd(0.01, 100);
    c.stop = {0.0, 0.0, std::nullopt};
    c.store_every_step_until = 10;
    std::size_t seen = 0;
    const auto t = run_gd(params({0.3, 0.8, 0.1}), params({1.0, 0.0, 0.0}), dist, GradientEngine::quadrature(), c,
                          [&](const StepRecord&, const Evaluation&) { ++seen; });
    CHECK(seen == 101);
    CHECK(t.steps.size() < 40);
    CHECK(t.steps.back().iter == 100);
    const std::string csv = trajectory_csv(t);
    CHECK(csv.rfind("iter,time,w_0,w_1,w_2,loss", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(t.steps.size()) + 1);
}

TEST_CASE("step flags") {
    const auto dist = InputDistribution::uniform_ball(2, 1.0);
    const Vec v = params({1.0, 0.0, 0.0});
    const Vec w = params({1.0, 1.0, -0.5});
    const Evaluation e = evaluate(w, v, dist, GradientEngine::quadrature());
    const StepFlags f = compute_flags(w, v, dist, e, {});
    CHECK(f.theta_le_threshold);
    CHECK(f.b_t_value == doctest::Approx(0.5 / std::sqrt(2.0)));
    CHECK_FALSE(f.is_dead_cone);
}

TEST_CASE("invalid optimizer configs are rejected") {
    const auto dist = InputDistribution::standard_gaussian(2);
    const Vec w = params({0.3, 0.8, 0.1}), v = params({1.0, 0.0, 0.0});
    CHECK_THROWS_AS(run_gd(w, v, dist, GradientEngine::quadrature(), gd(0.0, 10)), std::invalid_argument);
    CHECK_THROWS_AS(run_gd(w, v, dist, GradientEngine::quadrature(), gd(-1.0, 10)), std::invalid_argument);
    OptimizerConfig c = gd(0.1, 10);
    c.stop = {std::nullopt, std::nullopt, 0.0};
    CHECK_THROWS_AS(run_gd(w, v, dist, GradientEngine::quadrature(), c), std::invalid_argument);
    CHECK_THROWS_AS(run_flow(w, v, dist, GradientEngine::quadrature(), gd(0.1, 10)), std::invalid_argument);
}
