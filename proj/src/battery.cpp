#include <cmath>
#include <functional>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "neuron_lab/io.hpp"
#include "neuron_lab/parallel.hpp"
#include "neuron_lab/rng.hpp"
#include "neuron_lab/theory.hpp"

namespace neuron_lab {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec random_unit(Eigen::Index d, Rng& rng) {
    std::normal_distribution<double> n01;
    Vec x(d);
    do {
        for (Eigen::Index i = 0; i < d; ++i) x(i) = n01(rng);
    } while (x.norm() == 0.0);
    return x / x.norm();
}

// Unit vector making angle theta with the unit vector ref.
Vec at_angle(const Vec& ref, double theta, Rng& rng) {
    Vec o;
    do {
        o = random_unit(ref.size(), rng);
        o -= o.dot(ref) * ref;
    } while (o.norm() < 1e-6);
    o /= o.norm();
    return std::cos(theta) * ref + std::sin(theta) * o;
}

// Point uniform in the unit ball of R^n.
Vec in_unit_ball(Eigen::Index n, Rng& rng) {
    const double r = std::pow(uniform(rng, 0.0, 1.0), 1.0 / static_cast<double>(n));
    return r * random_unit(n, rng);
}

// Lifted unit target with v_tilde along a random direction.
Vec unit_target(int d, double bias_angle, Rng& rng) {
    return make_params(std::cos(bias_angle) * random_unit(d, rng), std::sin(bias_angle));
}

using Family = std::function<TheoremReport(std::size_t i, Rng& rng)>;

BatteryRow run_family(const std::string& id, std::uint64_t tag, std::size_t n,
                      const BatteryOptions& opt, const Family& f) {
    BatteryRow row;
    row.theorem_id = id;
    row.configs = n;
    row.reports.resize(n);
    parallel_for(
        n,
        [&](std::size_t i) {
            Rng rng = make_rng(opt.seed, stream::battery, tag, i);
            row.reports[i] = f(i, rng);
        },
        opt.workers);
    for (const auto& r : row.reports) {
        switch (r.status) {
            case CheckStatus::Pass: ++row.pass; break;
            case CheckStatus::Fail: ++row.fail; break;
            case CheckStatus::Skipped: ++row.skipped; break;
        }
        if (r.status != CheckStatus::Skipped && std::isfinite(r.margin))
            row.worst_margin = row.worst_margin ? std::min(*row.worst_margin, r.margin) : r.margin;
    }
    return row;
}

std::size_t scaled(std::size_t n, double s) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n * s)));
}

const GradientEngine& quad() {
    static const GradientEngine e = GradientEngine::quadrature();
    return e;
}

// Draws w = v + xi with xi uniform in a ball until F(w) <= F(0) - delta.
Vec draw_below(const Vec& v, const InputDistribution& dist, double delta, double radius, Rng& rng) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
        const Vec w = v + radius * in_unit_ball(v.size(), rng);
        if (evaluate(w, v, dist, quad()).loss_minus_f0 <= -delta) return w;
    }
    throw std::runtime_error("draw_below: no admissible point found");
}

// ---------------------------------------------------------------------------
// Lemma-level families

BatteryRow region_area_family(const BatteryOptions& opt) {
    return run_family("region_area_lower_bound", 1, scaled(200, opt.size_scale), opt,
                      [](std::size_t i, Rng& rng) {
                          double delta, alpha, b, theta;
                          if (i == 0) {
                              delta = kPi / 2;
                              alpha = 1.0;
                              b = 0.3;
                              theta = kPi / 2;
                          } else {
                              delta = uniform(rng, 0.05, kPi);
                              alpha = uniform(rng, 0.5, 3.0);
                              b = uniform(rng, 0.0, 0.999) * alpha * std::sin(0.5 * delta);
                              theta = uniform(rng, 0.0, kPi - delta);
                          }
                          const double phi = uniform(rng, 0.0, 2 * kPi);
                          const double sign = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
                          const Eigen::Vector2d wh(std::cos(phi), std::sin(phi));
                          const Eigen::Vector2d vh(std::cos(phi + sign * theta),
                                                   std::sin(phi + sign * theta));
                          return check_region_area(wh, vh, b, alpha, delta);
                      });
}

BatteryRow inner_product_family(const BatteryOptions& opt) {
    struct Setting {
        InputDistribution dist;
        SpreadConstants k;
    };
    static const std::vector<Setting> settings = [] {
        std::vector<Setting> s;
        for (const auto& dist :
             {InputDistribution::standard_gaussian(3), InputDistribution::standard_gaussian(8),
              InputDistribution::uniform_ball(3, 1.0), InputDistribution::uniform_ball(8, 1.0)})
            s.push_back({dist, estimate_constants(dist, 1, std::nullopt, 20000)});
        return s;
    }();
    return run_family("inner_product_lower_bound", 2, scaled(100, opt.size_scale), opt,
                      [](std::size_t i, Rng& rng) {
                          const Setting& st = settings[i % settings.size()];
                          const int d = st.dist.dim;
                          const double alpha = *st.k.alpha, beta = *st.k.beta;
                          const Vec vt = uniform(rng, 0.5, 1.5) * random_unit(d, rng);
                          const double theta = uniform(rng, 0.0, 0.95 * kPi);
                          const double delta = kPi - theta;
                          const double cap = 0.9 * alpha * std::sin(0.5 * delta);
                          const Vec wt = uniform(rng, 0.2, 2.0) * at_angle(vt / vt.norm(), theta, rng);
                          const double rw = uniform(rng, -0.5, 1.0) * cap;
                          const double rv = uniform(rng, -0.5, 1.0) * cap;
                          const Vec w = make_params(wt, -rw * wt.norm());
                          const Vec v = make_params(vt, -rv * vt.norm());
                          return check_inner_product(w, v, st.dist, quad(), alpha, beta, delta);
                      });
}

BatteryRow norm_and_overlap_family(const BatteryOptions& opt) {
    static const InputDistribution dist = InputDistribution::uniform_ball(6, 1.0);
    static const BoundedSetting s = bounded_setting(estimate_constants(dist, 1, std::nullopt, 20000));
    return run_family("norm_and_overlap_lower_bound", 3, scaled(200, opt.size_scale), opt,
                      [](std::size_t, Rng& rng) {
                          const Vec v = unit_target(6, uniform(rng, -0.3, 0.5), rng);
                          const double f0 = loss_at_origin(v, dist, quad());
                          const double delta = uniform(rng, 0.05, 0.5) * f0;
                          const Vec w = draw_below(v, dist, delta, 1.2, rng);
                          return check_norm_and_overlap(w, v, dist, quad(), delta, s.c);
                      });
}

BatteryRow contraction_family(const BatteryOptions& opt) {
    static const InputDistribution dist = InputDistribution::uniform_ball(4, 1.0);
    static const BoundedSetting s = bounded_setting(estimate_constants(dist, 1, std::nullopt, 20000));
    return run_family("one_step_contraction", 4, scaled(100, opt.size_scale), opt,
                      [](std::size_t, Rng& rng) {
                          const Vec v = unit_target(4, uniform(rng, -0.3, 0.5), rng);
                          const double f0 = loss_at_origin(v, dist, quad());
                          const double delta = uniform(rng, 0.05, 0.5) * f0;
                          const Vec w = draw_below(v, dist, delta, 1.2, rng);
                          const double B = (w - v).norm() + 1.0 + uniform(rng, 0.0, 1.0);
                          return check_one_step_contraction(w, v, dist, quad(), delta, B, s);
                      });
}

BatteryRow gradient_norm_family(const BatteryOptions& opt) {
    return run_family("gradient_norm_bound", 5, scaled(100, opt.size_scale), opt,
                      [](std::size_t i, Rng& rng) {
                          static const int dims[] = {2, 3, 6, 10};
                          static const double radii[] = {0.5, 1.0, 2.0};
                          const auto dist =
                              InputDistribution::uniform_ball(dims[i % 4], radii[(i / 4) % 3]);
                          const double c = std::max(1.0, std::sqrt(dist.radius * dist.radius + 1.0));
                          const Vec v = unit_target(dist.dim, uniform(rng, -0.3, 0.5), rng);
                          const Vec w = draw_below(v, dist, 0.0, 1.5, rng);
                          return check_gradient_norm_bound(w, v, dist, quad(), c);
                      });
}

BatteryRow lipschitz_family(const BatteryOptions& opt) {
    return run_family(
        "gradient_lipschitz_bound", 6, scaled(100, opt.size_scale), opt, [](std::size_t i, Rng& rng) {
            const auto dist = InputDistribution::uniform_ball(i % 2 == 0 ? 3 : 6, 1.0);
            const BoundedSetting s = bounded_setting(estimate_constants(dist, 1, std::nullopt, 1000));
            const Vec v = unit_target(dist.dim, uniform(rng, -0.3, 0.5), rng);
            const Vec wt = uniform(rng, 0.3, 2.0) * random_unit(dist.dim, rng);
            double b = uniform(rng, -1.0, 1.0);
            Vec w2;
            if (i % 3 == 2) {
                // The segment crosses w_tilde = 0 away from the origin.
                if (std::abs(b) < 0.3) b = b < 0 ? -0.3 : 0.3;
                w2 = make_params(-uniform(rng, 0.5, 1.0) * wt, b + uniform(rng, -0.1, 0.1));
            } else {
                w2 = make_params(wt, b) + uniform(rng, 0.01, 0.5) * random_unit(dist.dim + 1, rng);
            }
            const Vec w = make_params(wt, b);
            const Vec d = w2 - w;
            const double dd = d.squaredNorm();
            const double s_min = std::clamp(-w.dot(d) / dd, 0.0, 1.0);
            const double M = (w + s_min * d).norm();
            const double B = std::max(w.norm(), w2.norm());
            return check_gradient_lipschitz(w, w2, v, dist, quad(), M, B, s);
        });
}

BatteryRow loss_decrease_family(const BatteryOptions& opt) {
    static const InputDistribution dist = InputDistribution::uniform_ball(3, 1.0);
    static const BoundedSetting s = bounded_setting(estimate_constants(dist, 1, std::nullopt, 20000));
    return run_family("one_step_loss_decrease", 7, scaled(100, opt.size_scale), opt,
                      [](std::size_t, Rng& rng) {
                          const Vec v = unit_target(3, uniform(rng, -0.3, 0.5), rng);
                          const double f0 = loss_at_origin(v, dist, quad());
                          const double delta = uniform(rng, 0.1, 0.5) * f0;
                          const Vec w = draw_below(v, dist, delta, 1.2, rng);
                          const double B = w.norm() + 1.0;
                          const double eta = uniform(rng, 0.5, 1.0) *
                                             loss_decrease_constants(delta, B, s.c, s.c_prime, f0).eta_max;
                          return check_loss_decrease(w, v, dist, quad(), delta, B, eta, s);
                      });
}

struct SymmetricGaussian {
    InputDistribution dist = InputDistribution::standard_gaussian(5);
    SymmetricSetting s;
    SymmetricGaussian() {
        s.alpha = 4.5;
        s.tau = 2.0 / kPi;
        s.beta = marginal_density_2d(dist, s.alpha, 0.0);
    }
};

const SymmetricGaussian& symmetric_gaussian() {
    static const SymmetricGaussian g;
    return g;
}

BatteryRow bias_push_family(const BatteryOptions& opt) {
    // Grid over the closed box, including its outer faces.
    struct Point {
        double bv, nw, bw_frac, angle_frac;
    };
    std::vector<Point> pts;
    for (double bv : {0.0, 0.3}) {
        for (double bw : {0.5, 1.0}) pts.push_back({bv, 0.0, bw, 0.0});
        for (double nw : {0.1, 0.2, 0.3, 0.4})
            for (double bw : {0.0, 0.5, 1.0})
                for (double af : {0.0, 0.5, 1.0}) pts.push_back({bv, nw, bw, af});
    }
    return run_family("bias_gradient_push", 8, pts.size(), opt, [pts](std::size_t i, Rng& rng) {
        const auto& g = symmetric_gaussian();
        const Point& p = pts[i];
        const Vec vt = random_unit(5, rng);
        const Vec v = make_params(vt, p.bv);
        const double theta_max = std::acos(p.nw / 2.0);
        const Vec wt = p.nw * at_angle(vt, p.angle_frac * theta_max, rng);
        const Vec w = make_params(wt, p.bw_frac * bias_push_threshold(g.s.alpha, g.s.beta));
        return check_bias_push(w, v, g.dist, quad(), g.s);
    });
}

BatteryRow norm_push_family(const BatteryOptions& opt) {
    struct Point {
        double bv, nw, bw, angle_frac;
    };
    const double tau = symmetric_gaussian().s.tau;
    std::vector<Point> pts;
    for (double bv : {0.0, 0.3})
        for (double nf : {0.1, 0.25, 0.5, 0.75, 1.0})
            for (double bw : {0.0, -0.01, -0.1, -0.5})
                for (double af : {0.0, 0.5, 0.999999}) pts.push_back({bv, nf * tau / 2.0, bw, af});
    return run_family("weight_norm_push", 9, pts.size(), opt, [pts](std::size_t i, Rng& rng) {
        const auto& g = symmetric_gaussian();
        const Point& p = pts[i];
        const Vec vt = random_unit(5, rng);
        const Vec v = make_params(vt, p.bv);
        const double theta_max = std::acos(p.nw / 2.0);
        const Vec wt = p.nw * at_angle(vt, p.angle_frac * theta_max, rng);
        return check_norm_push(make_params(wt, p.bw), v, g.dist, quad(), g.s);
    });
}

// ---------------------------------------------------------------------------
// Theorem-level families

BatteryRow classifier_family(const BatteryOptions& opt) {
    struct Point {
        double nw, bw, theta;
    };
    std::vector<Point> pts;
    for (double nw : {0.0, 0.3, 1.0, 2.0, 3.0})
        for (double bw : {-2.5, -1.0, -0.4, 0.0, 0.6})
            for (double th : {0.0, kPi / 4, kPi / 2, 3 * kPi / 4, kPi}) pts.push_back({nw, bw, th});
    return run_family("critical_point_classes", 10, pts.size(), opt, [pts](std::size_t i, Rng&) {
        static const InputDistribution dist = InputDistribution::uniform_ball(3, 1.0);
        static const GradientEngine mc = GradientEngine::monte_carlo(100000, 7);
        static const GradientEngine q = GradientEngine::quadrature({}, true);
        const Point& p = pts[i];
        const Vec v = make_params(std::cos(0.2) * unit(3, 0), std::sin(0.2));
        const Vec wt = p.nw * (std::cos(p.theta) * unit(3, 0) + std::sin(p.theta) * unit(3, 1));
        return check_classifier_consistency(make_params(wt, p.bw), v, dist, mc, q);
    });
}

BatteryRow small_init_family(const BatteryOptions& opt) {
    struct Setting {
        InputDistribution dist;
        double alpha, beta, c;
    };
    static const std::vector<Setting> settings = [] {
        std::vector<Setting> s;
        for (const auto& dist :
             {InputDistribution::standard_gaussian(25), InputDistribution::uniform_ball(6, 1.0)}) {
            const auto k = estimate_constants(dist, 1, std::nullopt, 20000);
            s.push_back({dist, *k.alpha, *k.beta, k.c_lifted});
        }
        return s;
    }();
    return run_family("small_init_loss_gap", 11, scaled(100, opt.size_scale), opt,
                      [](std::size_t i, Rng& rng) {
                          const Setting& st = settings[i % settings.size()];
                          const int d = st.dist.dim;
                          const Vec v = make_params(random_unit(d, rng), 0.0);
                          const double rho = small_init_constants(st.alpha, st.beta, st.c).rho;
                          const Vec w = make_params(rho * random_unit(d, rng), 0.0);
                          return check_small_init_loss(w, v, st.dist, quad(), st.alpha, st.beta, st.c);
                      });
}

BatteryRow linear_rate_family(const BatteryOptions& opt) {
    return run_family(
        "linear_rate_envelope", 12, scaled(4, opt.size_scale), opt, [](std::size_t, Rng& rng) {
            static const InputDistribution dist = InputDistribution::uniform_ball(6, 1.0);
            static const SpreadConstants k = estimate_constants(dist, 1, std::nullopt, 20000);
            const BoundedSetting s = bounded_setting(k);
            const InitConstants ic = small_init_constants(*k.alpha, *k.beta, s.c);
            const Vec v = make_params(random_unit(6, rng), 0.0);
            Vec w0;
            do {
                w0 = make_params(ic.rho * random_unit(6, rng), 0.0);
            } while (weight_angle(w0, v) > 0.75 * kPi);
            TheoremReport r;
            r.theorem_id = "linear_rate_envelope";
            r.inputs = {{"w0", std::vector<double>(w0.data(), w0.data() + w0.size())},
                        {"dist", dist.name()}, {"steps", 2000}};
            const double gap = evaluate(w0, v, dist, quad()).loss_minus_f0;
            if (!(gap <= -ic.delta)) {
                r.status = CheckStatus::Skipped;
                r.notes = "precondition violated: F(w0) <= F(0) - delta";
                return r;
            }
            const double gamma = linear_rate_gamma(ic.delta, w0.norm(), s.c, s.c_prime);
            const double eta = gamma / std::pow(s.c, 4);
            r.constants = {{"gamma", gamma}, {"eta", eta}, {"delta", ic.delta}};
            const EnvelopeRun run = track_envelope(w0, v, dist, quad(), eta, gamma * eta, 2000);
            r.measured = static_cast<double>(run.violations);
            r.bound = 0.0;
            r.margin = run.violations == 0 ? run.worst_slack : -static_cast<double>(run.violations);
            r.status = run.violations == 0 ? CheckStatus::Pass : CheckStatus::Fail;
            r.notes = "measured is the number of steps above the envelope";
            return r;
        });
}

BatteryRow symmetric_descent_family(const BatteryOptions& opt) {
    return run_family("symmetric_descent", 13, scaled(8, opt.size_scale), opt,
                      [](std::size_t i, Rng& rng) {
                          const auto& g = symmetric_gaussian();
                          const Vec v = make_params(random_unit(5, rng), i % 2 == 0 ? 0.0 : 0.3);
                          Vec w0;
                          do {
                              w0 = v + in_unit_ball(6, rng);
                          } while (bias(w0) < 0.0);
                          return check_symmetric_descent(w0, v, g.dist, quad(), 0.2, g.s.tau, 5000);
                      });
}

}  // namespace

std::optional<Suite> parse_suite(const std::string& s) {
    if (s == "lemmas") return Suite::Lemmas;
    if (s == "theorems") return Suite::Theorems;
    if (s == "all") return Suite::All;
    return std::nullopt;
}

std::vector<BatteryRow> run_battery(Suite suite, const BatteryOptions& opt) {
    std::vector<BatteryRow> rows;
    if (suite != Suite::Theorems) {
        rows.push_back(region_area_family(opt));
        rows.push_back(inner_product_family(opt));
        rows.push_back(norm_and_overlap_family(opt));
        rows.push_back(contraction_family(opt));
        rows.push_back(gradient_norm_family(opt));
        rows.push_back(lipschitz_family(opt));
        rows.push_back(loss_decrease_family(opt));
        rows.push_back(bias_push_family(opt));
        rows.push_back(norm_push_family(opt));
    }
    if (suite != Suite::Lemmas) {
        rows.push_back(classifier_family(opt));
        rows.push_back(small_init_family(opt));
        rows.push_back(linear_rate_family(opt));
        rows.push_back(symmetric_descent_family(opt));
    }
    return rows;
}

std::string battery_table(const std::vector<BatteryRow>& rows) {
    std::ostringstream s;
    s << std::left << std::setw(30) << "theorem_id" << std::right << std::setw(8) << "configs"
      << std::setw(7) << "pass" << std::setw(7) << "fail" << std::setw(9) << "skipped"
      << "  worst_margin\n";
    for (const auto& r : rows) {
        s << std::left << std::setw(30) << r.theorem_id << std::right << std::setw(8) << r.configs
          << std::setw(7) << r.pass << std::setw(7) << r.fail << std::setw(9) << r.skipped << "  "
          << std::setprecision(6);
        if (r.worst_margin) s << *r.worst_margin;
        else s << '-';
        s << '\n';
    }
    return s.str();
}

}  // namespace neuron_lab
