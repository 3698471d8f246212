#include <cmath>
#include <random>

#include "doctest.h"
#include "neuron_lab/rng.hpp"
#include "neuron_lab/theory.hpp"

using namespace neuron_lab;

namespace {

// Hit-or-miss area of {w.y > b, v.y > b, |y| <= alpha}.
double mc_region_area(const Eigen::Vector2d& w, const Eigen::Vector2d& v, double b, double alpha, std::size_t n,
                      std::uint64_t seed) {
    Rng rng = make_rng(seed, stream::oracle, 3);
    std::uniform_real_distribution<double> u(-alpha, alpha);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector2d y(u(rng), u(rng));
        hits += y.squaredNorm() <= alpha * alpha && w.dot(y) > b && v.dot(y) > b;
    }
    return 4.0 * alpha * alpha * static_cast<double>(hits) / static_cast<double>(n);
}

Eigen::Vector2d dir(double phi) { return {std::cos(phi), std::sin(phi)}; }

Vec lifted(std::initializer_list<double> wt, double b) {
    Vec w(static_cast<Eigen::Index>(wt.size()) + 1);
    Eigen::Index i = 0;
    for (double x : wt) w(i++) = x;
    w(i) = b;
    return w;
}

}  // namespace

TEST_CASE("linear rate gamma at (0.1, 1, 1, 1) is 1e-3 / 11664 to within one ulp") {
    const double g = linear_rate_gamma(0.1, 1.0, 1.0, 1.0);
    const long double exact = 1e-3L / 11664.0L;
    const double nearest = static_cast<double>(exact);
    CHECK(g >= std::nextafter(nearest, 0.0));
    CHECK(g <= std::nextafter(nearest, 1.0));
    CHECK(std::abs(g - 8.5734e-8) < 0.5e-12);
}

TEST_CASE("constant formulas") {
    CHECK(contraction_gamma(0.1, 3.0, 1.0, 1.0) == linear_rate_gamma(0.1, 1.0, 1.0, 1.0));
    // gamma scales as delta^3 / (c^8 c'^2).
    CHECK(linear_rate_gamma(0.2, 1.0, 1.0, 1.0) == doctest::Approx(8.0 * linear_rate_gamma(0.1, 1.0, 1.0, 1.0)));
    CHECK(linear_rate_gamma(0.1, 1.0, 2.0, 1.0) == doctest::Approx(linear_rate_gamma(0.1, 1.0, 1.0, 1.0) / 256.0));
    CHECK(linear_rate_gamma(0.1, 1.0, 1.0, 3.0) == doctest::Approx(linear_rate_gamma(0.1, 1.0, 1.0, 1.0) / 9.0));
    CHECK_THROWS_AS(linear_rate_gamma(0.1, 1.0, 0.5, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(linear_rate_gamma(-0.1, 1.0, 1.0, 1.0), std::invalid_argument);

    const double s = std::sin(M_PI / 8);
    const InitConstants k = small_init_constants(2.0, 0.1, 1.5);
    CHECK(k.M == doctest::Approx(16.0 * 0.1 * s * s * s / (256.0 * 1.5)));
    CHECK(k.rho == doctest::Approx(k.M / 2.25));
    CHECK(k.delta == doctest::Approx(k.M * k.M / 4.5));

    CHECK(symmetric_alpha_floor(2.0 / M_PI) == doctest::Approx(2.5 * std::sqrt(2.0) * std::sqrt(M_PI / 2.0)));
    CHECK(symmetric_alpha_floor(4.0) == doctest::Approx(2.5 * std::sqrt(2.0)));
    const SymmetricRate r = symmetric_rate(2.0, 4.0, 0.05, 0.5, 35.0);
    CHECK(r.lambda == doctest::Approx(2.0 * 0.05 / (35.0 * 16.0)));
    CHECK(r.eta_max == doctest::Approx(r.lambda * 0.5));
    CHECK(region_area_bound(1.0, 0.3, M_PI / 2) ==
          doctest::Approx(std::pow(std::sin(M_PI / 4) - 0.3, 2) / (4 * std::sin(M_PI / 4))));
    CHECK(bias_push_threshold(2.0, 0.5) == doctest::Approx(4.0 / 640.0));
}

TEST_CASE("mutation canary flips the sign of gamma") {
    testing::set_gamma_sign_flip(true);
    const double g = linear_rate_gamma(0.1, 1.0, 1.0, 1.0);
    testing::set_gamma_sign_flip(false);
    CHECK(g < 0.0);
    CHECK(linear_rate_gamma(0.1, 1.0, 1.0, 1.0) > 0.0);
}

TEST_CASE("region area at the quarter-disk configuration matches the closed form and clears the bound") {
    const Eigen::Vector2d w = dir(0.0), v = dir(M_PI / 2);
    const double b = 0.3;
    const double x1 = std::sqrt(1 - b * b);
    auto F = [](double x) { return 0.5 * (x * std::sqrt(1 - x * x) + std::asin(x)); };
    const double exact = F(x1) - F(b) - b * (x1 - b);
    CHECK(region_area(w, v, b, 1.0) == doctest::Approx(exact).epsilon(1e-9));
    const TheoremReport r = check_region_area(w, v, b, 1.0, M_PI / 2);
    CHECK(r.status == CheckStatus::Pass);
    CHECK(r.measured >= 0.0586);
    CHECK(r.bound == doctest::Approx(0.0586).epsilon(1e-3));
}

TEST_CASE("region area agrees with a 1e7-point hit-or-miss oracle") {
    const std::size_t n = 10'000'000;
    struct Case {
        double phi_w, phi_v, b, alpha;
    };
    for (const Case c : {Case{0.0, 2.0, 0.1, 1.0}, Case{0.3, 1.2, 0.0, 2.0}, Case{-0.5, 0.5, 0.4, 1.5}}) {
        const double a = region_area(dir(c.phi_w), dir(c.phi_v), c.b, c.alpha);
        const double box = 4 * c.alpha * c.alpha;
        const double p = a / box;
        const double se = box * std::sqrt(p * (1 - p) / n);
        CHECK(std::abs(a - mc_region_area(dir(c.phi_w), dir(c.phi_v), c.b, c.alpha, n, 1)) <= 5 * se);
    }
}

TEST_CASE("region area check skips outside its hypotheses and names the reason") {
    const TheoremReport neg = check_region_area(dir(0.0), dir(1.0), -0.1, 1.0, 1.0);
    CHECK(neg.status == CheckStatus::Skipped);
    CHECK(neg.notes.find("b >= 0") != std::string::npos);
    const TheoremReport wide = check_region_area(dir(0.0), dir(3.0), 0.1, 1.0, 1.0);
    CHECK(wide.status == CheckStatus::Skipped);
    CHECK_FALSE(wide.notes.empty());
}

TEST_CASE("critical point classes") {
    const auto ball = InputDistribution::uniform_ball(2, 1.0);
    const Vec v = lifted({1.0, 0.0}, 0.0);
    CHECK(classify_critical(v, v, ball).tag == CriticalTag::GlobalMin);
    CHECK(classify_critical(lifted({0.0, 0.0}, 0.0), v, ball).tag == CriticalTag::OriginNonSmooth);
    CHECK(classify_critical(lifted({0.0, 0.0}, -0.3), v, ball).tag == CriticalTag::FlatNegativeBias);
    CHECK(classify_critical(lifted({0.0, 0.0}, 0.3), v, ball).tag == CriticalTag::NonCritical);
    CHECK(classify_critical(lifted({0.5, 0.0}, -0.6), v, ball).tag == CriticalTag::DeadCone);
    CHECK(classify_critical(lifted({0.5, 0.0}, -0.5), v, ball).tag == CriticalTag::DeadCone);
    const auto nc = classify_critical(lifted({0.5, 0.0}, -0.4), v, ball);
    CHECK(nc.tag == CriticalTag::NonCritical);
    CHECK(nc.margin == doctest::Approx(0.2));
}

TEST_CASE("classifier tags agree with gradient behavior") {
    const auto ball = InputDistribution::uniform_ball(3, 1.0);
    const auto mc = GradientEngine::monte_carlo(100000, 2);
    const auto quad = GradientEngine::quadrature({}, true);
    const Vec v = lifted({0.0, 1.0, 0.0}, 0.2);
    for (const Vec& w : {lifted({0.0, 0.0, 0.0}, -0.5), lifted({0.3, 0.1, 0.0}, -0.5), lifted({0.3, 0.1, 0.0}, 0.1)}) {
        const TheoremReport r = check_classifier_consistency(w, v, ball, mc, quad);
        CHECK(r.status == CheckStatus::Pass);
    }
}

TEST_CASE("one step contraction holds on a small-initialization point") {
    const auto ball = InputDistribution::uniform_ball(4, 1.0);
    const auto k = estimate_constants(ball, 0);
    const BoundedSetting s = bounded_setting(k);
    CHECK(s.c >= 1.0);
    CHECK(s.c_prime >= 1.0);
    const Vec v = lifted({1.0, 0.0, 0.0, 0.0}, 0.0);
    const Vec w = lifted({0.9, 0.1, 0.0, 0.0}, 0.05);
    const double delta = loss_at_origin(v, ball, GradientEngine::quadrature()) -
                         loss(w, v, ball, GradientEngine::quadrature());
    REQUIRE(delta > 0.0);
    const TheoremReport r = check_one_step_contraction(w, v, ball, GradientEngine::quadrature(), delta,
                                                       w.norm() + 2.0, s);
    CHECK(r.status == CheckStatus::Pass);
}

TEST_CASE("symmetric descent converges from near the target") {
    const auto g = InputDistribution::standard_gaussian(3);
    const Vec v = lifted({1.0, 0.0, 0.0}, 0.3);
    const Vec w0 = lifted({0.8, 0.3, 0.1}, 0.2);
    const TheoremReport r = check_symmetric_descent(w0, v, g, GradientEngine::quadrature(), 0.5, 2.0 / M_PI, 5000);
    CHECK(r.status == CheckStatus::Pass);
}

TEST_CASE("envelope tracking resolves sub-ulp progress") {
    const auto ball = InputDistribution::uniform_ball(3, 1.0);
    const Vec v = lifted({1.0, 0.0, 0.0}, 0.0);
    const Vec w0 = lifted({0.5, 0.5, 0.0}, 0.0);
    // eta so small that w0 - eta grad rounds back to w0.
    const double eta = 1e-20;
    const EnvelopeRun run = track_envelope(w0, v, ball, GradientEngine::quadrature(), eta, 1e-22, 50);
    CHECK(run.steps == 50);
    CHECK(run.violations == 0);
    CHECK(run.final_drop < 0.0);
    CHECK(run.final_drop <= run.final_envelope_drop);
    CHECK((run.final_w - w0).norm() < 1e-15);
}

TEST_CASE("battery is deterministic and passes on the lemma suite") {
    BatteryOptions opt;
    opt.size_scale = 0.2;
    const auto a = run_battery(Suite::Lemmas, opt);
    const auto b = run_battery(Suite::Lemmas, opt);
    CHECK(battery_table(a) == battery_table(b));
    for (const auto& row : a) {
        CHECK_MESSAGE(row.fail == 0, row.theorem_id);
        for (const auto& rep : row.reports)
            if (rep.status == CheckStatus::Skipped) CHECK_FALSE(rep.notes.empty());
    }
    CHECK(parse_suite("all") == Suite::All);
    CHECK_FALSE(parse_suite("everything").has_value());
}
