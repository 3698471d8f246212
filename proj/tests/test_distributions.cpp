#include <cmath>
#include <random>

#include "doctest.h"
#include "neuron_lab/distributions.hpp"
#include "neuron_lab/io.hpp"
#include "neuron_lab/params.hpp"
#include "neuron_lab/rng.hpp"
#include "neuron_lab/stats.hpp"

using namespace neuron_lab;

namespace {

// Monte Carlo oracle for P(u_1 >= t), u uniform on S^{d-1}.
double mc_sphere_cap(int d, double t, std::size_t n, std::uint64_t seed) {
    Rng rng = make_rng(seed, stream::oracle, 1);
    std::normal_distribution<double> g;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double n2 = 0.0, x1 = 0.0;
        for (int k = 0; k < d; ++k) {
            const double z = g(rng);
            if (k == 0) x1 = z;
            n2 += z * z;
        }
        hits += x1 / std::sqrt(n2) >= t;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("make_rng gives the same stream for the same path and different streams otherwise") {
    Rng a = make_rng(7, 1, 2, 3), b = make_rng(7, 1, 2, 3), c = make_rng(7, 1, 2, 4), e = make_rng(8, 1, 2, 3);
    const auto x = a();
    CHECK(x == b());
    CHECK(x != c());
    CHECK(x != e());
}

TEST_CASE("wilson interval matches hand-computed values") {
    // 50/100 at z = 1.96: centre 0.5, half-width 1.96 sqrt(0.25/100 + 1.96^2/40000)/(1 + 1.96^2/100).
    const Interval ci = wilson_interval(50, 100);
    const double z = 1.959963984540054;
    const double hw = z * std::sqrt(0.25 / 100 + z * z / 40000) / (1 + z * z / 100);
    CHECK(ci.lo == doctest::Approx(0.5 - hw).epsilon(1e-12));
    CHECK(ci.hi == doctest::Approx(0.5 + hw).epsilon(1e-12));
    const Interval zero = wilson_interval(0, 20);
    CHECK(zero.lo == doctest::Approx(0.0));
    CHECK(zero.hi > 0.0);
    CHECK(wilson_interval(20, 20).hi == doctest::Approx(1.0));
}

TEST_CASE("sphere cap probability agrees with closed forms and Monte Carlo") {
    // d = 3: u_1 is uniform on [-1, 1].
    CHECK(sphere_cap_probability(3, 0.3) == doctest::Approx(0.35).epsilon(1e-12));
    CHECK(sphere_cap_probability(3, -1.0) == doctest::Approx(1.0));
    // d = 2: P(cos phi >= t) = acos(t)/pi.
    CHECK(sphere_cap_probability(2, 0.2) == doctest::Approx(std::acos(0.2) / M_PI).epsilon(1e-12));
    for (int d : {5, 25, 50}) {
        const double t = -0.1;
        const double p = sphere_cap_probability(d, t);
        const double mc = mc_sphere_cap(d, t, 200000, static_cast<std::uint64_t>(d));
        CHECK(std::abs(p - mc) < 5.0 * std::sqrt(p * (1 - p) / 200000));
    }
}

TEST_CASE("ball cap probability agrees with sampling") {
    const auto dist = InputDistribution::uniform_ball(4, 2.0);
    const auto x = sample(dist, 200000, 3);
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) hits += x(i, 0) >= 0.7;
    const double p = ball_cap_probability(4, 2.0, 0.7);
    const double mc = static_cast<double>(hits) / 200000.0;
    CHECK(std::abs(p - mc) < 5.0 * std::sqrt(p * (1 - p) / 200000));
    // d = 1: uniform on [-r, r].
    CHECK(ball_cap_probability(1, 2.0, 1.0) == doctest::Approx(0.25));
}

TEST_CASE("angle exceed probability is the sphere cap of cos theta") {
    CHECK(angle_exceeds_probability(10, 3 * M_PI / 4) ==
          doctest::Approx(1.0 - sphere_cap_probability(10, std::cos(3 * M_PI / 4))));
    CHECK(angle_exceeds_probability(2, M_PI / 2) == doctest::Approx(0.5));
}

TEST_CASE("gaussian norm quantile inverts the chi tail") {
    // d = 2: P(||g|| > R) = exp(-R^2/2).
    CHECK(gaussian_norm_quantile(2, 1e-6) == doctest::Approx(std::sqrt(-2.0 * std::log(1e-6))).epsilon(1e-9));
}

TEST_CASE("samples are lifted and lie in the support") {
    const auto ball = InputDistribution::uniform_ball(6, 1.5);
    const auto x = sample(ball, 10000, 1);
    CHECK(x.cols() == 7);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        CHECK(x(i, 6) == 1.0);
        CHECK(x.row(i).head(6).norm() <= 1.5);
    }
    const auto cap = InputDistribution::heavy_cap(10, 1.0, 0.5, 4.0);
    const auto y = sample(cap, 40000, 2);
    std::size_t in_cap = 0;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        CHECK(y.row(i).head(10).norm() <= 1.0 + 1e-12);
        in_cap += y(i, 0) > cap.cap_threshold();
    }
    CHECK(std::abs(in_cap / 40000.0 - 0.5) < 5.0 * std::sqrt(0.25 / 40000));
}

TEST_CASE("sampling is independent of how many samples are requested") {
    const auto g = InputDistribution::standard_gaussian(3);
    const auto a = sample(g, 5000, 9);
    const auto b = sample(g, 9000, 9);
    CHECK(a == b.topRows(5000));
}

TEST_CASE("second and fourth moments match closed forms") {
    const int d = 5;
    const auto g = InputDistribution::standard_gaussian(d);
    const auto b = InputDistribution::uniform_ball(d, 2.0);
    for (const auto& dist : {g, b}) {
        const auto x = sample(dist, 400000, 11);
        double m2 = 0.0, m4 = 0.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double n2 = x.row(i).head(d).squaredNorm();
            m2 += x(i, 0) * x(i, 0);
            m4 += n2 * n2;
        }
        m2 /= x.rows();
        m4 /= x.rows();
        const bool gauss = dist.kind == DistributionKind::StandardGaussian;
        const double m2_exact = gauss ? 1.0 : 4.0 / (d + 2);
        const double m4_exact = gauss ? d * (d + 2.0) : 16.0 * d / (d + 4.0);
        CHECK(m2 == doctest::Approx(m2_exact).epsilon(0.01));
        CHECK(m4 == doctest::Approx(m4_exact).epsilon(0.02));
    }
}

TEST_CASE("marginal densities integrate to one and match histograms") {
    const auto b = InputDistribution::uniform_ball(4, 1.0);
    // Riemann sum of the 1D marginal.
    double total = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) total += marginal_density_1d(b, -1.0 + (i + 0.5) * 2.0 / n) * 2.0 / n;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(ball_marginal_peak(4, 1.0) == doctest::Approx(marginal_density_1d(b, 0.0)));
    // 2D marginal of the Gaussian is the standard bivariate normal.
    const auto g = InputDistribution::standard_gaussian(7);
    CHECK(marginal_density_2d(g, 0.3, -0.4) == doctest::Approx(std::exp(-0.125) / (2 * M_PI)));
    // 2D marginal of the unit 4-ball: (2/pi)(1 - |y|^2) on the unit disk... check by histogram.
    const auto x = sample(b, 400000, 5);
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) hits += std::hypot(x(i, 0) - 0.2, x(i, 1) - 0.1) < 0.05;
    const double mc = hits / 400000.0 / (M_PI * 0.05 * 0.05);
    CHECK(mc == doctest::Approx(marginal_density_2d(b, 0.2, 0.1)).epsilon(0.05));
}

TEST_CASE("spread constants") {
    const auto g = InputDistribution::standard_gaussian(5);
    const auto k = estimate_constants(g, 0);
    REQUIRE(k.tau);
    CHECK(std::abs(*k.tau - 2.0 / M_PI) <= 0.01);
    REQUIRE(k.tau_mc);
    CHECK(std::abs(*k.tau_mc - 2.0 / M_PI) <= 0.01);
    CHECK(*k.c_prime == doctest::Approx(1.0 / std::sqrt(2 * M_PI)));
    CHECK_FALSE(k.c.has_value());
    CHECK(k.c_effective > 5.0);

    const auto b = InputDistribution::uniform_ball(6, 1.0);
    const auto kb = estimate_constants(b, 0, 0.5);
    CHECK(*kb.c == 1.0);
    CHECK(kb.c_lifted == doctest::Approx(std::sqrt(2.0)));
    CHECK(*kb.alpha == 0.5);
    CHECK(*kb.beta == doctest::Approx(marginal_density_2d(b, 0.5, 0.0)));

    const auto cap = InputDistribution::heavy_cap(10);
    const auto kc = estimate_constants(cap, 0);
    CHECK_FALSE(kc.tau.has_value());
    CHECK(kc.c_prime.has_value());
}

TEST_CASE("invalid descriptors are rejected") {
    CHECK_THROWS_AS(InputDistribution::uniform_ball(0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(InputDistribution::uniform_ball(3, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(InputDistribution::heavy_cap(1), std::invalid_argument);
    CHECK_THROWS_AS(marginal_density_2d(InputDistribution::heavy_cap(5), 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("parameter helpers") {
    Vec w(3);
    w << 1.0, 0.0, -0.5;
    Vec v(3);
    v << 0.0, 2.0, 0.3;
    CHECK(weight_angle(w, v) == doctest::Approx(M_PI / 2));
    CHECK(bias_ratio(w) == doctest::Approx(0.5));
    CHECK(bias_ratio(v) == 0.0);
    Vec dead(3);
    dead << 0.0, 0.0, -1.0;
    CHECK(std::isinf(bias_ratio(dead)));
    CHECK(std::isnan(weight_angle(dead, v)));
}

TEST_CASE("csv round trip keeps doubles exact") {
    std::vector<nlohmann::ordered_json> rows;
    rows.push_back({{"a", 0.1}, {"b", "x,y"}, {"c", 1e-300}});
    rows.push_back({{"a", 1.0 / 3.0}, {"b", "q\"uote"}, {"c", -2.5}});
    const CsvTable t = parse_csv(to_csv(rows));
    REQUIRE(t.rows.size() == 2);
    CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
    CHECK(std::stod(t.rows[0][0]) == 0.1);
    CHECK(std::stod(t.rows[1][0]) == 1.0 / 3.0);
    CHECK(std::stod(t.rows[0][2]) == 1e-300);
    CHECK(t.rows[0][1] == "x,y");
    CHECK(t.rows[1][1] == "q\"uote");
    CHECK(t.column("c") == 2);
    CHECK(t.column("zz") == -1);
}
