#include "neuron_lab/theory.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "neuron_lab/quadrature.hpp"

namespace neuron_lab {

namespace {

constexpr double kPi = std::numbers::pi;

std::atomic<bool> g_gamma_flip{false};

void require_positive(double x, const char* name) {
    if (!(x > 0.0) || !std::isfinite(x))
        throw std::invalid_argument(std::string(name) + " must be positive and finite");
}

std::vector<double> to_std(const Vec& x) { return {x.data(), x.data() + x.size()}; }

// Collects the first violated precondition.
struct Gate {
    std::string failed;
    void require(bool ok, const std::string& what) {
        if (!ok && failed.empty()) failed = what;
    }
    bool open() const { return failed.empty(); }
};

TheoremReport skipped(TheoremReport r, const Gate& g) {
    r.status = CheckStatus::Skipped;
    r.notes = "precondition violated: " + g.failed;
    return r;
}

// Sets status from the margin (>= 0 passes).
TheoremReport decide(TheoremReport r) {
    r.status = r.margin >= 0.0 ? CheckStatus::Pass : CheckStatus::Fail;
    return r;
}

double sq(double x) { return x * x; }

bool unit_within(const Vec& x, double tol = 1e-12) { return std::abs(x.norm() - 1.0) <= tol; }

}  // namespace

std::string to_string(CriticalTag t) {
    switch (t) {
        case CriticalTag::GlobalMin: return "GlobalMin";
        case CriticalTag::FlatNegativeBias: return "FlatNegativeBias";
        case CriticalTag::DeadCone: return "DeadCone";
        case CriticalTag::NonCritical: return "NonCritical";
        case CriticalTag::OriginNonSmooth: return "OriginNonSmooth";
    }
    return "unknown";
}

std::string to_string(CheckStatus s) {
    switch (s) {
        case CheckStatus::Pass: return "pass";
        case CheckStatus::Fail: return "fail";
        case CheckStatus::Skipped: return "skipped";
    }
    return "unknown";
}

CriticalPointClass classify_critical(const Vec& w, const Vec& v, const InputDistribution& dist) {
    const double c = dist.effective_radius();
    const double to_v = (w - v).norm();
    if (to_v <= 1e-12) return {CriticalTag::GlobalMin, 1e-12 - to_v};
    if (w.isZero(0.0)) return {CriticalTag::OriginNonSmooth, 0.0};
    const double nw = tilde(w).norm();
    const double b = bias(w);
    if (nw == 0.0) {
        if (b < 0.0) return {CriticalTag::FlatNegativeBias, -b};
        return {CriticalTag::NonCritical, std::min(b, to_v - 1e-12)};
    }
    const double ratio = -b / nw;
    // Boundary is inclusive; the slack leans toward the dead cone.
    if (ratio >= c - 1e-12) return {CriticalTag::DeadCone, std::abs(ratio - c)};
    return {CriticalTag::NonCritical, std::min(c - ratio, to_v - 1e-12)};
}

// ---------------------------------------------------------------------------

double contraction_gamma(double delta, double B, double c, double c_prime) {
    require_positive(delta, "delta");
    require_positive(B, "B");
    if (!(c >= 1.0)) throw std::invalid_argument("c must be >= 1");
    if (!(c_prime >= 1.0)) throw std::invalid_argument("c_prime must be >= 1");
    const double c2 = c * c;
    const double c8 = c2 * c2 * c2 * c2;
    const double g = delta * delta * delta / (3.0 * 144.0 * B * B * B * c8 * c_prime * c_prime);
    return g_gamma_flip.load() ? -g : g;
}

double linear_rate_gamma(double delta, double w0_norm, double c, double c_prime) {
    if (!(w0_norm >= 0.0) || !std::isfinite(w0_norm))
        throw std::invalid_argument("w0_norm must be >= 0");
    return contraction_gamma(delta, w0_norm + 2.0, c, c_prime);
}

InitConstants small_init_constants(double alpha, double beta, double c) {
    require_positive(alpha, "alpha");
    require_positive(beta, "beta");
    if (!(c >= 1.0)) throw std::invalid_argument("c must be >= 1");
    const double s = std::sin(kPi / 8.0);
    InitConstants k;
    k.M = std::pow(alpha, 4) * beta * s * s * s / (256.0 * c);
    k.rho = k.M / (c * c);
    k.delta = k.M * k.M / (2.0 * c * c);
    return k;
}

double smoothness_bound(double M, double B, double c, double c_prime) {
    require_positive(M, "M");
    require_positive(B, "B");
    return c * c * (1.0 + 8.0 * (B + 1.0) * c_prime * c * c / M);
}

LossDecreaseConstants loss_decrease_constants(double delta, double B, double c, double c_prime,
                                              double f0) {
    require_positive(delta, "delta");
    require_positive(B, "B");
    require_positive(f0, "F(0)");
    LossDecreaseConstants k;
    k.L = c * c * (1.0 + 16.0 * (B + 1.0) * c_prime * std::pow(c, 4) / delta);
    k.eta_max = std::min(delta / (2.0 * c * c * c * std::sqrt(2.0 * f0)), 1.0 / k.L);
    return k;
}

SymmetricRate symmetric_rate(double C, double alpha, double beta, double tau, double c4) {
    require_positive(C, "C");
    require_positive(alpha, "alpha");
    require_positive(beta, "beta");
    require_positive(tau, "tau");
    require_positive(c4, "c4");
    SymmetricRate r;
    r.C = C;
    r.lambda = C * beta / (c4 * alpha * alpha);
    r.eta_max = r.lambda * std::min(1.0, tau);
    return r;
}

double symmetric_alpha_floor(double tau) {
    require_positive(tau, "tau");
    return 2.5 * std::sqrt(2.0) * std::max(1.0, 1.0 / std::sqrt(tau));
}

double b_prime(const Vec& w, const Vec& v, double delta_angle) {
    const double nw = tilde(w).norm();
    const double nv = tilde(v).norm();
    if (nw == 0.0 || nv == 0.0) return std::numeric_limits<double>::infinity();
    const double b = std::max({-bias(w) / nw, -bias(v) / nv, 0.0});
    return b / std::sin(0.5 * delta_angle);
}

double region_area_bound(double alpha, double b, double delta_angle) {
    const double s = std::sin(0.5 * delta_angle);
    return sq(alpha * s - b) / (4.0 * s);
}

double inner_product_coefficient(double alpha, double beta, double b_prime, double delta_angle) {
    const double s = std::sin(0.25 * delta_angle);
    return std::pow(alpha - b_prime, 4) * s * s * s * beta / 4096.0 *
           std::min(1.0, 1.0 / (alpha * alpha));
}

double bias_push_threshold(double alpha, double beta) { return alpha * alpha * alpha * beta / 640.0; }

nlohmann::ordered_json TheoremConstants::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    auto put = [&](const char* k, const std::optional<double>& x) {
        if (x) j[k] = *x;
    };
    put("gamma", gamma);
    put("M", M);
    put("rho", rho);
    put("delta", delta_cor);
    put("lambda", lambda);
    put("C", C_universal);
    put("L_smooth", L_smooth);
    put("eta_max", eta_max);
    put("b_prime", b_prime);
    return j;
}

namespace testing {
void set_gamma_sign_flip(bool on) { g_gamma_flip.store(on); }
bool gamma_sign_flip() { return g_gamma_flip.load(); }
}  // namespace testing

nlohmann::ordered_json TheoremReport::to_json() const {
    nlohmann::ordered_json j;
    j["theorem_id"] = theorem_id;
    j["inputs"] = inputs;
    j["computed_constants"] = constants;
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::ordered_json(x) : nlohmann::ordered_json(); };
    j["measured"] = num(measured);
    j["bound"] = num(bound);
    j["margin"] = num(margin);
    j["status"] = to_string(status);
    j["notes"] = notes;
    return j;
}

BoundedSetting bounded_setting(const SpreadConstants& k) {
    BoundedSetting s;
    s.c = std::max(1.0, k.c_lifted);
    s.c_prime = std::max(1.0, k.c_prime.value_or(1.0));
    return s;
}

// ---------------------------------------------------------------------------

TheoremReport check_small_init_loss(const Vec& w, const Vec& v, const InputDistribution& dist,
                                    const GradientEngine& engine, double alpha, double beta,
                                    double c) {
    TheoremReport r;
    r.theorem_id = "small_init_loss_gap";
    r.inputs = {{"w", to_std(w)}, {"v", to_std(v)}, {"dist", dist.name()},
                {"alpha", alpha}, {"beta", beta}, {"c", c}};
    const InitConstants k = small_init_constants(alpha, beta, c);
    r.constants = {{"M", k.M}, {"rho", k.rho}, {"delta", k.delta}};
    const double nw = w.norm();
    const double nv_t = tilde(v).norm();
    Gate g;
    g.require(unit_within(v), "||v|| = 1");
    g.require(std::abs(bias(w)) <= 1e-14 * std::max(1.0, nw), "b_w = 0");
    const double theta = weight_angle(w, v);
    g.require(!std::isnan(theta) && theta <= 0.75 * kPi + 1e-12, "theta(w_tilde, v_tilde) <= 3pi/4");
    g.require(nw < 2.0 * k.M / (c * c), "||w|| < 2M/c^2");
    g.require(nv_t > 0.0 && -bias(v) / nv_t <= alpha * std::sin(kPi / 8.0) / 4.0 + 1e-15,
              "-b_v/||v_tilde|| <= alpha sin(pi/8)/4");
    if (!g.open()) return skipped(r, g);
    const Evaluation e = evaluate(w, v, dist, engine);
    r.measured = e.loss_minus_f0;
    r.bound = nw * nw * c * c / 2.0 - nw * k.M;
    r.margin = r.bound - r.measured;
    r.notes = "measured and bound are F(w) - F(0)";
    if (!(r.bound < 0.0)) r.margin = std::min(r.margin, -r.bound);
    return decide(r);
}

TheoremReport check_norm_and_overlap(const Vec& w, const Vec& v, const InputDistribution& dist,
                                     const GradientEngine& engine, double delta, double c) {
    TheoremReport r;
    r.theorem_id = "norm_and_overlap_lower_bound";
    r.inputs = {{"w", to_std(w)}, {"v", to_std(v)}, {"dist", dist.name()},
                {"delta", delta}, {"c", c}};
    Gate g;
    g.require(delta > 0.0, "delta > 0");
    g.require(c >= 1.0, "c >= 1");
    if (!g.open()) return skipped(r, g);
    const Evaluation e = evaluate(w, v, dist, engine);
    g.require(e.loss_minus_f0 <= -delta, "F(w) <= F(0) - delta");
    if (!g.open()) return skipped(r, g);
    const double nw = w.norm();
    const double norm_margin = nw - delta / (c * c);
    r.measured = e.joint_prob;
    r.bound = delta / (c * c * nw);
    r.margin = std::min(norm_margin, r.measured - r.bound);
    r.constants = {{"norm_lower_bound", delta / (c * c)}, {"norm", nw}};
    r.notes = "measured is P[w.x >= 0, v.x >= 0]";
    return decide(r);
}

TheoremReport check_one_step_contraction(const Vec& w, const Vec& v, const InputDistribution& dist,
                                         const GradientEngine& engine, double delta, double B,
                                         const BoundedSetting& s) {
    TheoremReport r;
    r.theorem_id = "one_step_contraction";
    r.inputs = {{"w", to_std(w)}, {"v", to_std(v)}, {"dist", dist.name()}, {"delta", delta},
                {"B", B}, {"c", s.c}, {"c_prime", s.c_prime}};
    Gate g;
    g.require(delta > 0.0, "delta > 0");
    g.require(B > 1.0, "B > 1");
    g.require(s.c >= 1.0 && s.c_prime >= 1.0, "c >= 1 and c' >= 1");
    g.require((w - v).norm() <= B - 1.0, "||w - v|| <= B - 1");
    if (!g.open()) return skipped(r, g);
    const Evaluation e = evaluate(w, v, dist, engine);
    g.require(e.loss_minus_f0 <= -delta, "F(w) <= F(0) - delta");
    if (!g.open()) return skipped(r, g);
    const double gamma = contraction_gamma(delta, B, s.c, s.c_prime);
    const double eta = gamma / std::pow(s.c, 4);
    r.constants = {{"gamma", gamma}, {"eta", eta}};
    // Exact change of ||w - v||^2 over one step, without forming w'.
    const Vec diff = w - v;
    r.measured = -2.0 * eta * e.grad.dot(diff) + eta * eta * e.grad.squaredNorm();
    r.bound = -gamma * eta * diff.squaredNorm();
    r.margin = r.bound - r.measured;
    r.notes = "measured and bound are changes of ||w - v||^2";
    return decide(r);
}

TheoremReport check_gradient_norm_bound(const Vec& w, const Vec& v, const InputDistribution& dist,
                                        const GradientEngine& engine, double c) {
    TheoremReport r;
    r.theorem_id = "gradient_norm_bound";
    r.inputs = {{"w", to_std(w)}, {"v", to_std(v)}, {"dist", dist.name()}, {"c", c}};
    const Evaluation e = evaluate(w, v, dist, engine);
    Gate g;
    g.require(e.loss_minus_f0 <= 0.0, "F(w) <= F(0)");
    if (!g.open()) return skipped(r, g);
    r.measured = e.grad.norm();
    r.bound = c * std::sqrt(2.0 * e.f0);
    r.margin = r.bound - r.measured;
    return decide(r);
}

namespace {
// Distance from the origin to the segment [a, b].
double segment_min_norm(const Vec& a, const Vec& b) {
    const Vec d = b - a;
    const double dd = d.squaredNorm();
    if (dd == 0.0) return a.norm();
    const double s = std::clamp(-a.dot(d) / dd, 0.0, 1.0);
    return (a + s * d).norm();
}
}  // namespace

TheoremReport check_gradient_lipschitz(const Vec& w, const Vec& w_prime, const Vec& v,
                                       const InputDistribution& dist, const GradientEngine& engine,
                                       double M_lower, double B_upper, const BoundedSetting& s) {
    TheoremReport r;
    r.theorem_id = "gradient_lipschitz_bound";
    r.inputs = {{"w", to_std(w)}, {"w_prime", to_std(w_prime)}, {"v", to_std(v)},
                {"dist", dist.name()}, {"M", M_lower}, {"B", B_upper},
                {"c", s.c}, {"c_prime", s.c_prime}};
    Gate g;
    g.require(M_lower > 0.0 && B_upper > 0.0, "M > 0 and B > 0");
    const double lo = segment_min_norm(w, w_prime);
    const double hi = std::max(w.norm(), w_prime.norm());
    g.require(lo >= M_lower, "M <= ||w + s(w' - w)|| on the segment");
    g.require(hi <= B_upper, "||w + s(w' - w)|| <= B on the segment");
    if (!g.open()) return skipped(r, g);
    const double K = smoothness_bound(M_lower, B_upper, s.c, s.c_prime);
    r.constants = {{"lipschitz", K}, {"segment_min_norm", lo}, {"segment_max_norm", hi}};
    const Vec g1 = evaluate(w, v, dist, engine).grad;
    const Vec g2 = evaluate(w_prime, v, dist, engine).grad;
    r.measured = (g1 - g2).norm();
    r.bound = (w - w_prime).norm() * K;
    r.margin = r.bound - r.measured;
    return decide(r);
}

TheoremReport check_loss_decrease(const Vec& w, const Vec& v, const InputDistribution& dist,
                                  const GradientEngine& engine, double delta, double B, double eta,
                                  const BoundedSetting& s) {
    TheoremReport r;
    r.theorem_id = "one_step_loss_decrease";
    r.inputs = {{"w", to_std(w)}, {"v", to_std(v)}, {"dist", dist.name()}, {"delta", delta},
                {"B", B}, {"eta", eta}, {"c", s.c}, {"c_prime", s.c_prime}};
    Gate g;
    g.require(delta > 0.0 && B > 0.0 && eta > 0.0, "delta, B, eta > 0");
    if (!g.open()) return skipped(r, g);
    const Evaluation e = evaluate(w, v, dist, engine);
    g.require(e.loss_minus_f0 <= -delta, "F(w) <= F(0) - delta");
    if (!g.open()) return skipped(r, g);
    const LossDecreaseConstants k = loss_decrease_constants(delta, B, s.c, s.c_prime, e.f0);
    r.constants = {{"L", k.L}, {"eta_max", k.eta_max}};
    const Vec w2 = w - eta * e.grad;
    g.require(eta <= k.eta_max, "eta <= eta_max");
    g.require(w.norm() <= B && w2.norm() <= B, "||w||, ||w'|| <= B");
    if (!g.open()) return skipped(r, g);
    const Evaluation e2 = evaluate(w2, v, dist, engine);
    r.measured = e2.loss_minus_f0 - e.loss_minus_f0;
    r.bound = -eta * (1.0 - 0.5 * k.L * eta) * e.grad.squaredNorm();
    r.margin = std::min(r.bound - r.measured, -delta - e2.loss_minus_f0);
    r.notes = "measured is F(w') - F(w); also requires F(w') <= F(0) - delta";
    return decide(r);
}

double region_area(const Eigen::Vector2d& w_hat, const Eigen::Vector2d& v_hat, double b,
                   double alpha) {
    const double cos_t = std::clamp(w_hat.dot(v_hat), -1.0, 1.0);
    const double sin_t = std::abs(w_hat.x() * v_hat.y() - w_hat.y() * v_hat.x());
    const auto disk = make_disk_model(alpha, QuadratureGrid{});
    // Frame: s along w_hat, t toward v_hat.
    const CellMoments m = integrate_cell(*disk, b, alpha, HalfPlane{cos_t, sin_t, -b}, 0.0);
    return m[0][0];
}

TheoremReport check_region_area(const Eigen::Vector2d& w_hat, const Eigen::Vector2d& v_hat,
                                double b, double alpha, double delta_angle) {
    TheoremReport r;
    r.theorem_id = "region_area_lower_bound";
    r.inputs = {{"w_hat", {w_hat.x(), w_hat.y()}}, {"v_hat", {v_hat.x(), v_hat.y()}},
                {"b", b}, {"alpha", alpha}, {"delta", delta_angle}};
    Gate g;
    g.require(std::abs(w_hat.norm() - 1.0) <= 1e-12 && std::abs(v_hat.norm() - 1.0) <= 1e-12,
              "||w_hat|| = ||v_hat|| = 1");
    g.require(alpha > 0.0, "alpha > 0");
    g.require(delta_angle > 0.0 && delta_angle <= kPi, "delta in (0, pi]");
    const double theta = std::acos(std::clamp(w_hat.dot(v_hat), -1.0, 1.0));
    g.require(theta <= kPi - delta_angle + 1e-12, "theta(w_hat, v_hat) <= pi - delta");
    g.require(b < alpha * std::sin(0.5 * delta_angle), "b < alpha sin(delta/2)");
    // For b < 0 the bound grows without limit while the area stays below
    // pi alpha^2, so the statement is only checked for b >= 0.
    g.require(b >= 0.0, "b >= 0");
    if (!g.open()) return skipped(r, g);
    r.measured = region_area(w_hat, v_hat, b, alpha);
    r.bound = region_area_bound(alpha, b, delta_angle);
    r.margin = r.measured - r.bound;
    return decide(r);
}

TheoremReport check_inner_product(const Vec& w, const Vec& v, const InputDistribution& dist,
                                  const GradientEngine& engine, double alpha, double beta,
                                  double delta_angle) {
    TheoremReport r;
    r.theorem_id = "inner_product_lower_bound";
    r.inputs = {{"w", to_std(w)}, {"v", to_std(v)}, {"dist", dist.name()},
                {"alpha", alpha}, {"beta", beta}, {"delta", delta_angle}};
    Gate g;
    const bool same = (w - v).norm() == 0.0;
    if (same) {
        // Both sides vanish.
        r.measured = 0.0;
        r.bound = 0.0;
        r.margin = 0.0;
        r.notes = "w = v";
        return decide(r);
    }
    g.require(dist.spherically_symmetric(), "spherically symmetric distribution");
    g.require(tilde(w).norm() > 0.0 && tilde(v).norm() > 0.0, "w_tilde, v_tilde nonzero");
    g.require(delta_angle > 0.0 && delta_angle < kPi, "delta in (0, pi)");
    if (!g.open()) return skipped(r, g);
    const double theta = weight_angle(w, v);
    g.require(theta <= kPi - delta_angle + 1e-12, "theta(w_tilde, v_tilde) <= pi - delta");
    g.require(alpha > 0.0 && beta > 0.0, "alpha, beta > 0");
    if (!g.open()) return skipped(r, g);
    g.require(beta <= marginal_density_2d(dist, alpha, 0.0) * (1.0 + 1e-12),
              "2D marginal density >= beta on the disk of radius alpha");
    const double bp = b_prime(w, v, delta_angle);
    g.require(bp < alpha, "b' < alpha");
    if (!g.open()) return skipped(r, g);
    const double coef = inner_product_coefficient(alpha, beta, bp, delta_angle);
    r.constants = {{"b_prime", bp}, {"coefficient", coef}};
    const Evaluation e = evaluate(w, v, dist, engine);
    const Vec diff = w - v;
    r.measured = e.grad.dot(diff);
    r.bound = coef * diff.squaredNorm();
    r.margin = r.measured - r.bound;
    return decide(r);
}

namespace {
void require_symmetric_setting(Gate& g, const Vec& v, const InputDistribution& dist,
                               const SymmetricSetting& s) {
    g.require(dist.spherically_symmetric(), "spherically symmetric distribution");
    g.require(std::abs(tilde(v).norm() - 1.0) <= 1e-12, "||v_tilde|| = 1");
    g.require(bias(v) >= 0.0, "b_v >= 0");
    g.require(s.tau > 0.0 && s.alpha >= symmetric_alpha_floor(s.tau) * (1.0 - 1e-12),
              "alpha >= 2.5 sqrt(2) max{1, 1/sqrt(tau)}");
    if (g.open())
        g.require(s.beta > 0.0 && s.beta <= marginal_density_2d(dist, s.alpha, 0.0) * (1.0 + 1e-12),
                  "2D marginal density >= beta on the disk of radius alpha");
}
}  // namespace

TheoremReport check_bias_push(const Vec& w, const Vec& v, const InputDistribution& dist,
                              const GradientEngine& engine, const SymmetricSetting& s) {
    TheoremReport r;
    r.theorem_id = "bias_gradient_push";
    r.inputs = {{"w", to_std(w)}, {"v", to_std(v)}, {"dist", dist.name()},
                {"alpha", s.alpha}, {"beta", s.beta}, {"tau", s.tau}};
    Gate g;
    require_symmetric_setting(g, v, dist, s);
    const double thr = bias_push_threshold(s.alpha, s.beta);
    r.constants = {{"threshold", thr}};
    g.require(!w.isZero(0.0), "w != 0 (not differentiable at the origin)");
    g.require((tilde(w) - tilde(v)).squaredNorm() <= 1.0 + 1e-12, "||w_tilde - v_tilde||^2 <= 1");
    g.require(tilde(w).norm() <= 0.4 + 1e-12, "||w_tilde|| <= 0.4");
    g.require(bias(w) >= 0.0 && bias(w) <= thr, "b_w in [0, alpha^3 beta / 640]");
    if (!g.open()) return skipped(r, g);
    const Evaluation e = evaluate(w, v, dist, engine);
    r.measured = e.grad(e.grad.size() - 1);
    r.bound = -thr;
    r.margin = r.bound - r.measured;
    r.notes = "measured is the bias coordinate of the gradient";
    return decide(r);
}

TheoremReport check_norm_push(const Vec& w, const Vec& v, const InputDistribution& dist,
                              const GradientEngine& engine, const SymmetricSetting& s) {
    TheoremReport r;
    r.theorem_id = "weight_norm_push";
    r.inputs = {{"w", to_std(w)}, {"v", to_std(v)}, {"dist", dist.name()},
                {"alpha", s.alpha}, {"beta", s.beta}, {"tau", s.tau}};
    Gate g;
    require_symmetric_setting(g, v, dist, s);
    g.require((tilde(w) - tilde(v)).norm() < 1.0, "||w_tilde - v_tilde|| < 1");
    g.require(tilde(w).norm() <= 0.5 * s.tau + 1e-12, "||w_tilde|| <= tau/2");
    g.require(bias(w) <= 0.0, "b_w <= 0");
    if (!g.open()) return skipped(r, g);
    const Evaluation e = evaluate(w, v, dist, engine);
    const Eigen::Index d = ambient_dim(w);
    r.measured = e.grad.head(d).dot(tilde(w));
    r.bound = 0.0;
    r.margin = -r.measured;
    r.notes = "measured is <grad F(w)_{1:d}, w_tilde>";
    return decide(r);
}

TheoremReport check_classifier_consistency(const Vec& w, const Vec& v,
                                           const InputDistribution& dist,
                                           const GradientEngine& mc_engine,
                                           const GradientEngine& quad_engine, double loss_tol,
                                           double grad_floor) {
    TheoremReport r;
    r.theorem_id = "critical_point_classes";
    r.inputs = {{"w", to_std(w)}, {"v", to_std(v)}, {"dist", dist.name()}};
    const CriticalPointClass cls = classify_critical(w, v, dist);
    r.constants = {{"tag", to_string(cls.tag)}, {"class_margin", cls.margin}};
    switch (cls.tag) {
        case CriticalTag::OriginNonSmooth: {
            Gate g;
            g.require(false, "w = 0 (objective not differentiable)");
            return skipped(r, g);
        }
        case CriticalTag::GlobalMin: {
            const Evaluation q = evaluate(w, v, dist, quad_engine);
            r.measured = q.grad.norm();
            r.bound = 1e-10;
            r.margin = r.bound - r.measured;
            r.notes = "gradient norm at the global minimum";
            return decide(r);
        }
        case CriticalTag::FlatNegativeBias:
        case CriticalTag::DeadCone: {
            const Evaluation m = evaluate(w, v, dist, mc_engine);
            const Evaluation q = evaluate(w, v, dist, quad_engine);
            const double mc_norm = m.grad.norm();
            bool grad_ok = mc_norm == 0.0;
            if (!grad_ok && !dist.bounded()) grad_ok = q.grad.norm() < grad_floor;
            r.measured = std::abs(q.loss_minus_f0);
            r.bound = loss_tol;
            r.margin = grad_ok ? r.bound - r.measured : -std::max(mc_norm, 1e-300);
            r.constants["mc_grad_norm"] = mc_norm;
            r.notes = "measured is |F(w) - F(0)|; the Monte Carlo gradient must vanish";
            return decide(r);
        }
        case CriticalTag::NonCritical: {
            if ((w - v).norm() < 0.01) {
                Gate g;
                g.require(false, "||w - v|| >= 0.01");
                return skipped(r, g);
            }
            const Evaluation q = evaluate(w, v, dist, quad_engine);
            const double err = q.error_estimate.value_or(0.0);
            r.measured = q.grad.norm();
            r.bound = 10.0 * err;
            if (!dist.bounded() && r.measured <= r.bound) {
                // Nearly dead cone of an unbounded distribution: the gradient is
                // exponentially small rather than zero.
                r.notes = "below the rounding floor in the nearly dead cone";
                r.margin = r.measured < grad_floor ? 0.0 : r.measured - r.bound;
                return decide(r);
            }
            r.margin = r.measured - r.bound;
            r.notes = "quadrature gradient norm against 10x its error estimate";
            return decide(r);
        }
    }
    return r;
}

TheoremReport check_symmetric_descent(const Vec& w0, const Vec& v, const InputDistribution& dist,
                                      const GradientEngine& engine, double eta, double tau,
                                      std::size_t max_steps, double dist_tol) {
    TheoremReport r;
    r.theorem_id = "symmetric_descent";
    r.inputs = {{"w0", to_std(w0)}, {"v", to_std(v)}, {"dist", dist.name()}, {"eta", eta},
                {"tau", tau}, {"max_steps", max_steps}};
    Gate g;
    g.require(dist.spherically_symmetric(), "spherically symmetric distribution");
    g.require(std::abs(tilde(v).norm() - 1.0) <= 1e-12, "||v_tilde|| = 1");
    g.require(bias(v) >= 0.0, "b_v >= 0");
    g.require((w0 - v).squaredNorm() < 1.0, "||w0 - v||^2 < 1");
    g.require(bias(w0) >= 0.0, "b_w0 >= 0");
    g.require(eta > 0.0, "eta > 0");
    if (!g.open()) return skipped(r, g);
    const double b_cap = 2.4 * std::max(1.0, 1.0 / std::sqrt(tau));
    r.constants = {{"b_t_cap", b_cap}};
    Vec w = w0;
    double prev = (w - v).squaredNorm();
    double worst_theta = 0.0, worst_bt = 0.0;
    std::size_t steps = 0;
    std::string failure;
    double decrease_slack = std::numeric_limits<double>::infinity();
    while (steps < max_steps && std::sqrt(prev) > dist_tol) {
        const Evaluation e = evaluate(w, v, dist, engine);
        w -= eta * e.grad;
        ++steps;
        const double now = (w - v).squaredNorm();
        const double theta = weight_angle(w, v);
        const double bt = bias_ratio(w);
        worst_theta = std::max(worst_theta, std::isnan(theta) ? kPi : theta);
        worst_bt = std::max(worst_bt, bt);
        if (now > 0.0) decrease_slack = std::min(decrease_slack, (prev - now) / prev);
        if (failure.empty()) {
            if (!(now < prev) && now > 0.0) failure = "distance did not decrease at step " + std::to_string(steps);
            else if (!(theta <= 0.5 * kPi)) failure = "theta > pi/2 at step " + std::to_string(steps);
            else if (!(bt <= b_cap)) failure = "b_t above cap at step " + std::to_string(steps);
        }
        prev = now;
        if (!failure.empty()) break;
    }
    r.constants["steps"] = steps;
    r.constants["max_theta"] = worst_theta;
    r.constants["max_b_t"] = worst_bt;
    r.constants["min_relative_decrease"] = decrease_slack;
    r.measured = std::sqrt(prev);
    r.bound = dist_tol;
    r.margin = failure.empty() ? r.bound - r.measured : -1.0;
    r.notes = failure.empty() ? "measured is the final ||w - v||" : failure;
    return decide(r);
}

// ---------------------------------------------------------------------------

EnvelopeRun track_envelope(const Vec& w0, const Vec& v, const InputDistribution& dist,
                           const GradientEngine& engine, double eta, double rate,
                           std::size_t n_steps, const EnvelopeObserver& observer) {
    EnvelopeRun out;
    const Vec base = w0 - v;
    const double d0 = base.squaredNorm();
    const double log_factor = std::log1p(-rate);
    Vec u = Vec::Zero(w0.size());
    out.worst_slack = std::numeric_limits<double>::infinity();
    for (std::size_t t = 1; t <= n_steps; ++t) {
        const Evaluation e = evaluate(w0 + u, v, dist, engine);
        u -= eta * e.grad;
        const double drop = 2.0 * u.dot(base) + u.squaredNorm();
        const double env_drop = d0 * std::expm1(static_cast<double>(t) * log_factor);
        const double slack = env_drop - drop;
        if (d0 > 0.0) out.worst_slack = std::min(out.worst_slack, slack / d0);
        if (slack < 0.0) {
            ++out.violations;
            if (!out.first_violation) out.first_violation = t;
        }
        if (observer) observer(t, drop, env_drop);
        out.steps = t;
        out.final_drop = drop;
        out.final_envelope_drop = env_drop;
    }
    if (!std::isfinite(out.worst_slack)) out.worst_slack = 0.0;
    out.final_w = w0 + u;
    return out;
}

nlohmann::ordered_json CalibrationResult::to_json() const {
    nlohmann::ordered_json j;
    j["C"] = C ? nlohmann::ordered_json(*C) : nlohmann::ordered_json();
    j["grid"] = grid;
    j["violations"] = violations;
    j["note"] = "empirical calibration; not a proven constant";
    return j;
}

CalibrationResult calibrate_symmetric_C(const InputDistribution& dist,
                                        const GradientEngine& engine, double alpha, double beta,
                                        double tau, double c4,
                                        const std::vector<CalibrationCase>& cases,
                                        const std::vector<double>& C_grid, std::size_t n_steps) {
    CalibrationResult res;
    res.grid = C_grid;
    for (double C : C_grid) {
        const SymmetricRate sr = symmetric_rate(C, alpha, beta, tau, c4);
        // eta must stay strictly below its cap.
        const double eta = sr.eta_max * (1.0 - 1e-9);
        std::size_t bad = 0;
        if (!(eta * sr.lambda < 1.0)) {
            // The envelope collapses to zero after one step.
            res.violations.push_back(cases.size() * n_steps);
            continue;
        }
        for (const auto& cs : cases) {
            Vec w = cs.w0;
            const double d0 = (w - cs.v).squaredNorm();
            for (std::size_t t = 1; t <= n_steps; ++t) {
                w -= eta * evaluate(w, cs.v, dist, engine).grad;
                const double env = d0 * std::exp(static_cast<double>(t) * std::log1p(-eta * sr.lambda));
                if ((w - cs.v).squaredNorm() > env) ++bad;
            }
        }
        res.violations.push_back(bad);
        if (bad == 0 && (!res.C || C > *res.C)) res.C = C;
    }
    return res;
}

}  // namespace neuron_lab
