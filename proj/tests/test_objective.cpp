#include <cmath>

#include "doctest.h"
#include "neuron_lab/distributions.hpp"
#include "neuron_lab/objective.hpp"
#include "neuron_lab/params.hpp"
#include "neuron_lab/quadrature.hpp"
#include "neuron_lab/rng.hpp"

using namespace neuron_lab;

namespace {

Vec lifted(std::initializer_list<double> wt, double b) {
    Vec w(static_cast<Eigen::Index>(wt.size()) + 1);
    Eigen::Index i = 0;
    for (double x : wt) w(i++) = x;
    w(i) = b;
    return w;
}

// Zero-bias closed forms under N(0, I_d):
//   E[s(w.x) s(v.x)] = |w||v| (sin t + (pi - t) cos t) / (2 pi)
//   grad_w = w/2 - ((pi - t) v + sin t |v| w/|w|) / (2 pi)
//   grad_b = |w| / sqrt(2 pi) - |v| (1 + cos t) / (2 sqrt(2 pi))
struct GaussianOracle {
    double loss;
    Vec grad;
    double joint;
};

GaussianOracle gaussian_oracle(const Vec& w, const Vec& v) {
    const Vec wt = tilde(w), vt = tilde(v);
    const double nw = wt.norm(), nv = vt.norm();
    const double t = std::acos(std::clamp(wt.dot(vt) / (nw * nv), -1.0, 1.0));
    GaussianOracle o;
    o.loss = nw * nw / 4 + nv * nv / 4 - nw * nv * (std::sin(t) + (M_PI - t) * std::cos(t)) / (2 * M_PI);
    o.grad = Vec::Zero(w.size());
    o.grad.head(wt.size()) = wt / 2 - ((M_PI - t) * vt + std::sin(t) * nv * wt / nw) / (2 * M_PI);
    o.grad(wt.size()) = nw / std::sqrt(2 * M_PI) - nv * (1 + std::cos(t)) / (2 * std::sqrt(2 * M_PI));
    o.joint = (M_PI - t) / (2 * M_PI);
    return o;
}

Vec random_params(int d, Rng& rng, double bias_scale) {
    std::normal_distribution<double> g;
    Vec w(d + 1);
    for (int i = 0; i <= d; ++i) w(i) = g(rng);
    w(d) *= bias_scale;
    return w;
}

}  // namespace

TEST_CASE("quadrature reproduces the zero-bias Gaussian closed forms") {
    Rng rng = make_rng(1, stream::oracle, 2);
    const auto dist = InputDistribution::standard_gaussian(6);
    const auto eng = GradientEngine::quadrature();
    for (int k = 0; k < 20; ++k) {
        const Vec w = random_params(6, rng, 0.0);
        const Vec v = random_params(6, rng, 0.0);
        const auto o = gaussian_oracle(w, v);
        const Evaluation e = evaluate(w, v, dist, eng);
        CHECK(e.loss == doctest::Approx(o.loss).epsilon(1e-9));
        CHECK(e.joint_prob == doctest::Approx(o.joint).epsilon(1e-9));
        CHECK((e.grad - o.grad).norm() <= 1e-8 * (1 + o.grad.norm()));
    }
}

TEST_CASE("ball kernel is the Gaussian kernel scaled by r^2/(d+2)") {
    const int d = 5;
    const double r = 1.7;
    const auto dist = InputDistribution::uniform_ball(d, r);
    const auto eng = GradientEngine::quadrature();
    const Vec w = lifted({0.4, -0.2, 0.7, 0.1, 0.3}, 0.0);
    const Vec v = lifted({-0.1, 0.5, 0.2, 0.6, -0.3}, 0.0);
    const auto o = gaussian_oracle(w, v);
    const double s = r * r / (d + 2);
    const Evaluation e = evaluate(w, v, dist, eng);
    CHECK(e.loss == doctest::Approx(o.loss * s).epsilon(1e-9));
    CHECK((e.grad.head(d) - s * o.grad.head(d)).norm() <= 1e-9);
    CHECK(e.joint_prob == doctest::Approx(o.joint).epsilon(1e-9));
    CHECK(e.f0 == doctest::Approx(s * tilde(v).squaredNorm() / 4).epsilon(1e-9));
}

TEST_CASE("quadrature gradient matches central differences of the quadrature loss") {
    Rng rng = make_rng(2, stream::oracle, 2);
    const auto eng = GradientEngine::quadrature();
    for (const auto& dist : {InputDistribution::uniform_ball(4, 1.0), InputDistribution::standard_gaussian(3)}) {
        for (int k = 0; k < 10; ++k) {
            const Vec w = random_params(dist.dim, rng, 0.5);
            const Vec v = random_params(dist.dim, rng, 0.5);
            const Vec g = evaluate(w, v, dist, eng).grad;
            const double h = 1e-5;
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                Vec wp = w, wm = w;
                wp(i) += h;
                wm(i) -= h;
                const double fd = (loss(wp, v, dist, eng) - loss(wm, v, dist, eng)) / (2 * h);
                CHECK(fd == doctest::Approx(g(i)).epsilon(1e-5).scale(1e-6));
            }
        }
    }
}

TEST_CASE("Monte Carlo agrees with quadrature within its standard error") {
    Rng rng = make_rng(3, stream::oracle, 2);
    const auto dist = InputDistribution::uniform_ball(3, 1.0);
    const auto mc = GradientEngine::monte_carlo(400000, 5);
    const auto quad = GradientEngine::quadrature();
    for (int k = 0; k < 5; ++k) {
        const Vec w = random_params(3, rng, 0.3);
        const Vec v = random_params(3, rng, 0.3);
        const Evaluation a = evaluate(w, v, dist, mc);
        const Evaluation b = evaluate(w, v, dist, quad);
        REQUIRE(a.grad_se);
        for (Eigen::Index i = 0; i < w.size(); ++i)
            CHECK(std::abs(a.grad(i) - b.grad(i)) <= 4.0 * (*a.grad_se)(i) + 1e-12);
        REQUIRE(a.loss_se);
        CHECK(std::abs(a.loss - b.loss) <= 4.0 * *a.loss_se + 1e-12);
    }
}

TEST_CASE("common random numbers reuse one sample set") {
    const auto dist = InputDistribution::standard_gaussian(4);
    const auto mc = GradientEngine::monte_carlo(20000, 8);
    const Vec w = lifted({0.3, 0.1, -0.2, 0.5}, 0.1);
    const Vec v = lifted({0.1, 0.4, 0.0, -0.3}, -0.2);
    const Evaluation a = evaluate(w, v, dist, mc);
    clear_sample_cache();
    const Evaluation b = evaluate(w, v, dist, mc);
    CHECK(a.grad == b.grad);
    CHECK(a.loss == b.loss);
    // The same samples give F(w) - F(v) with no sampling noise in F(v) = 0.
    CHECK(evaluate(v, v, dist, mc).loss == 0.0);
}

TEST_CASE("the target is an exact critical point") {
    const auto dist = InputDistribution::uniform_ball(5, 1.0);
    const Vec v = lifted({0.2, -0.4, 0.1, 0.3, 0.6}, -0.2);
    for (const auto& eng : {GradientEngine::quadrature(), GradientEngine::monte_carlo(10000, 1)}) {
        const Evaluation e = evaluate(v, v, dist, eng);
        CHECK(e.loss == 0.0);
        CHECK(e.grad.isZero(0.0));
        CHECK(e.loss_minus_f0 == doctest::Approx(-e.f0));
    }
}

TEST_CASE("loss at the origin equals half the second moment of the target neuron") {
    const auto dist = InputDistribution::standard_gaussian(4);
    const Vec v = lifted({0.0, 0.0, 2.0, 0.0}, 0.0);
    CHECK(loss_at_origin(v, dist, GradientEngine::quadrature()) == doctest::Approx(1.0).epsilon(1e-10));
    // Constant bias: s(v.x) = b on every x.
    const Vec c = lifted({0.0, 0.0, 0.0, 0.0}, 0.7);
    CHECK(loss_at_origin(c, dist, GradientEngine::quadrature()) == doctest::Approx(0.245).epsilon(1e-10));
}

TEST_CASE("loss minus F(0) stays accurate when both are tiny") {
    const int d = 30;
    const double r = 1.0;
    const auto dist = InputDistribution::uniform_ball(d, r);
    Vec v = Vec::Zero(d + 1);
    v(0) = 1.0;
    v(d) = -(r - r / (2.0 * d * d));
    Vec w = Vec::Zero(d + 1);
    w(1) = 1.0;
    const Evaluation e = evaluate(w, v, dist, GradientEngine::quadrature());
    CHECK(e.f0 > 0.0);
    CHECK(e.f0 < 1e-40);
    // Disjoint activation regions: F(w) - F(0) = E[s(w.x)^2]/2 > 0 is not lost to cancellation.
    CHECK(e.loss_minus_f0 == doctest::Approx(e.sigma_w_sq / 2).epsilon(1e-9));
}

TEST_CASE("dead and overlap predicates") {
    const auto ball = InputDistribution::uniform_ball(3, 1.0);
    CHECK(is_dead(lifted({1.0, 0.0, 0.0}, -1.5), ball));
    CHECK_FALSE(is_dead(lifted({1.0, 0.0, 0.0}, -0.5), ball));
    CHECK(is_dead(lifted({0.0, 0.0, 0.0}, -0.1), ball));
    CHECK_FALSE(is_dead(lifted({0.0, 0.0, 0.0}, 0.1), ball));

    const Vec v = lifted({1.0, 0.0, 0.0}, -0.9);
    CHECK(overlap_empty(lifted({-1.0, 0.0, 0.0}, 0.0), v, ball));
    CHECK_FALSE(overlap_empty(lifted({0.0, 1.0, 0.0}, 0.0), v, ball));
    // Half-spaces x_1 > 0.9 and x_2 > 0.5 meet only outside the unit ball.
    CHECK(overlap_empty(lifted({0.0, 1.0, 0.0}, -0.5), v, ball));
    CHECK_FALSE(overlap_empty(lifted({0.0, 1.0, 0.0}, -0.4), v, ball));
    CHECK_FALSE(overlap_empty(lifted({-1.0, 0.0, 0.0}, 0.0), v, InputDistribution::standard_gaussian(3)));
}

TEST_CASE("joint positive probability is zero exactly when the overlap is empty") {
    const auto ball = InputDistribution::uniform_ball(3, 1.0);
    const auto eng = GradientEngine::quadrature();
    const Vec v = lifted({1.0, 0.0, 0.0}, -0.9);
    CHECK(joint_positive_prob(lifted({0.0, 1.0, 0.0}, -0.5), v, ball, eng) == 0.0);
    CHECK(joint_positive_prob(lifted({0.0, 1.0, 0.0}, -0.4), v, ball, eng) > 0.0);
}

TEST_CASE("correlation term is scale invariant in w") {
    const auto dist = InputDistribution::standard_gaussian(3);
    const auto eng = GradientEngine::quadrature();
    const Vec w = lifted({0.3, 0.4, 0.0}, 0.2);
    const Vec v = lifted({0.0, 1.0, 0.0}, 0.1);
    CHECK(correlation_term(w, v, dist, eng) == doctest::Approx(correlation_term(5.0 * w, v, dist, eng)));
    CHECK_THROWS_AS(correlation_term(Vec::Zero(4), v, dist, eng), std::invalid_argument);
}

TEST_CASE("engine validation") {
    CHECK_THROWS_AS(GradientEngine::quadrature().validate(InputDistribution::heavy_cap(5)), std::invalid_argument);
    GradientEngine bad = GradientEngine::quadrature();
    bad.relu_deriv_at_zero = 2.0;
    CHECK_THROWS_AS(bad.validate(InputDistribution::uniform_ball(3)), std::invalid_argument);
    CHECK_NOTHROW(GradientEngine::monte_carlo(10, 0).validate(InputDistribution::heavy_cap(5)));
    CHECK_THROWS_AS(evaluate(Vec::Zero(3), Vec::Zero(4), InputDistribution::uniform_ball(3), GradientEngine::quadrature()),
                    std::invalid_argument);
}

TEST_CASE("planar disk model integrates areas exactly") {
    // Unit disk cut by s > 0.5: area acos(0.5) - 0.5 sqrt(0.75).
    const auto disk = make_disk_model(1.0, QuadratureGrid{});
    const HalfPlane hp{1.0, 0.0, -0.5};
    const CellMoments m = integrate_cell(*disk, -1.0, 1.0, hp, 0.0);
    CHECK(m[0][0] == doctest::Approx(std::acos(0.5) - 0.5 * std::sqrt(0.75)).epsilon(1e-12));
}
