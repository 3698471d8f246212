#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuron_lab/distributions.hpp"
#include "neuron_lab/objective.hpp"
#include "neuron_lab/params.hpp"

namespace neuron_lab {

// ---------------------------------------------------------------------------
// Critical points

enum class CriticalTag { GlobalMin, FlatNegativeBias, DeadCone, NonCritical, OriginNonSmooth };
std::string to_string(CriticalTag t);

struct CriticalPointClass {
    CriticalTag tag = CriticalTag::NonCritical;
    // Distance to the nearest class boundary, >= 0. For DeadCone and
    // NonCritical with w_tilde != 0 it is |(-b_w/||w_tilde||) - c|.
    double margin = 0.0;
};

// Uses the declared support radius, or the effective radius when unbounded.
CriticalPointClass classify_critical(const Vec& w, const Vec& v, const InputDistribution& dist);

// ---------------------------------------------------------------------------
// Constants

// gamma = delta^3 / (3 * 12^2 * (||w0|| + 2)^3 * c^8 * c'^2).
double linear_rate_gamma(double delta, double w0_norm, double c, double c_prime);

// Same constant with B = ||w0|| + 2 given directly (contraction lemma form).
double contraction_gamma(double delta, double B, double c, double c_prime);

struct InitConstants {
    double M = 0.0;
    double rho = 0.0;    // M / c^2, initialization radius
    double delta = 0.0;  // M^2 / (2 c^2), guaranteed loss gap
};
// M = alpha^4 beta sin^3(pi/8) / (256 c).
InitConstants small_init_constants(double alpha, double beta, double c);

// c^2 (1 + 8 (B + 1) c' c^2 / M).
double smoothness_bound(double M, double B, double c, double c_prime);

struct LossDecreaseConstants {
    double L = 0.0;        // c^2 (1 + 16 (B + 1) c' c^4 / delta)
    double eta_max = 0.0;  // min{delta / (2 c^3 sqrt(2 F(0))), 1 / L}
};
LossDecreaseConstants loss_decrease_constants(double delta, double B, double c, double c_prime,
                                              double f0);

struct SymmetricRate {
    double C = 0.0;
    double eta_max = 0.0;  // C beta min{1, tau} / (c4 alpha^2), strict upper bound
    double lambda = 0.0;   // C beta / (c4 alpha^2)
};
SymmetricRate symmetric_rate(double C, double alpha, double beta, double tau, double c4);

// Smallest alpha the symmetric-case assumption allows: 2.5 sqrt(2) max{1, 1/sqrt(tau)}.
double symmetric_alpha_floor(double tau);

// b' = max{-b_w/||w_tilde||, -b_v/||v_tilde||, 0} / sin(delta_angle / 2).
double b_prime(const Vec& w, const Vec& v, double delta_angle);

// (alpha sin(delta/2) - b)^2 / (4 sin(delta/2)).
double region_area_bound(double alpha, double b, double delta_angle);

// (alpha - b')^4 sin(delta/4)^3 beta / 8^4 * min{1, 1/alpha^2}.
double inner_product_coefficient(double alpha, double beta, double b_prime, double delta_angle);

// alpha^3 beta / 640.
double bias_push_threshold(double alpha, double beta);

struct TheoremConstants {
    std::optional<double> gamma;
    std::optional<double> M, rho, delta_cor;
    std::optional<double> lambda, C_universal;
    std::optional<double> L_smooth, eta_max;
    std::optional<double> b_prime;
    nlohmann::ordered_json to_json() const;
};

namespace testing {
// Mutation canary: flips the sign of the contraction constant.
void set_gamma_sign_flip(bool on);
bool gamma_sign_flip();
}  // namespace testing

// ---------------------------------------------------------------------------
// Checkers

enum class CheckStatus { Pass, Fail, Skipped };
std::string to_string(CheckStatus s);

struct TheoremReport {
    std::string theorem_id;
    nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
    nlohmann::ordered_json constants = nlohmann::ordered_json::object();
    // NaN (null in JSON) when the check was skipped before measuring.
    double measured = std::numeric_limits<double>::quiet_NaN();
    double bound = std::numeric_limits<double>::quiet_NaN();
    // Slack in the direction of the inequality; negative means violated.
    double margin = std::numeric_limits<double>::quiet_NaN();
    CheckStatus status = CheckStatus::Skipped;
    // For skipped reports, the violated precondition.
    std::string notes;
    nlohmann::ordered_json to_json() const;
};

// Constants describing the input distribution as the bounded-case
// assumptions use them.
struct BoundedSetting {
    double c = 1.0;        // bound on ||x|| for the lifted x, >= 1
    double c_prime = 1.0;  // slab density bound, >= 1
};
BoundedSetting bounded_setting(const SpreadConstants& k);

TheoremReport check_small_init_loss(const Vec& w, const Vec& v, const InputDistribution& dist,
                                          const GradientEngine& engine, double alpha, double beta,
                                          double c);

TheoremReport check_norm_and_overlap(const Vec& w, const Vec& v, const InputDistribution& dist,
                             const GradientEngine& engine, double delta, double c);

// One gradient step with eta = gamma / c^4 contracts ||w - v||^2 by (1 - gamma eta).
TheoremReport check_one_step_contraction(const Vec& w, const Vec& v, const InputDistribution& dist,
                                   const GradientEngine& engine, double delta, double B,
                                   const BoundedSetting& s);

TheoremReport check_gradient_norm_bound(const Vec& w, const Vec& v, const InputDistribution& dist,
                             const GradientEngine& engine, double c);

TheoremReport check_gradient_lipschitz(const Vec& w, const Vec& w_prime, const Vec& v,
                                  const InputDistribution& dist, const GradientEngine& engine,
                                  double M_lower, double B_upper, const BoundedSetting& s);

// Loss decrease for one step of size eta <= eta_max.
TheoremReport check_loss_decrease(const Vec& w, const Vec& v, const InputDistribution& dist,
                                     const GradientEngine& engine, double delta, double B,
                                     double eta, const BoundedSetting& s);

TheoremReport check_region_area(const Eigen::Vector2d& w_hat, const Eigen::Vector2d& v_hat,
                                    double b, double alpha, double delta_angle);

// Area of {y : w_hat.y > b, v_hat.y > b, ||y|| <= alpha}.
double region_area(const Eigen::Vector2d& w_hat, const Eigen::Vector2d& v_hat, double b,
                      double alpha);

TheoremReport check_inner_product(const Vec& w, const Vec& v, const InputDistribution& dist,
                                    const GradientEngine& engine, double alpha, double beta,
                                    double delta_angle);

// Assumptions shared by the two region propositions of the symmetric case.
struct SymmetricSetting {
    double alpha = 0.0;
    double beta = 0.0;
    double tau = 0.0;
};

TheoremReport check_bias_push(const Vec& w, const Vec& v, const InputDistribution& dist,
                            const GradientEngine& engine, const SymmetricSetting& s);
TheoremReport check_norm_push(const Vec& w, const Vec& v, const InputDistribution& dist,
                            const GradientEngine& engine, const SymmetricSetting& s);

// Tag-gradient consistency at one point. Flat tags need an exactly zero
// Monte Carlo gradient and F(w) = F(0) within loss_tol; NonCritical points
// with ||w - v|| >= 0.01 need a quadrature gradient norm above 10x its
// error estimate. Unbounded kinds accept gradients below grad_floor in the
// nearly dead cone.
TheoremReport check_classifier_consistency(const Vec& w, const Vec& v,
                                           const InputDistribution& dist,
                                           const GradientEngine& mc_engine,
                                           const GradientEngine& quad_engine,
                                           double loss_tol = 1e-9, double grad_floor = 1e-10);

// Gradient descent from w0 in the symmetric setting: ||w_t - v||^2 strictly
// decreasing, theta(w_tilde_t, v_tilde) <= pi/2 and b_t <= 2.4 max{1, 1/sqrt(tau)}
// at every step, and ||w_T - v|| <= dist_tol at the end.
TheoremReport check_symmetric_descent(const Vec& w0, const Vec& v, const InputDistribution& dist,
                                      const GradientEngine& engine, double eta, double tau,
                                      std::size_t max_steps, double dist_tol = 1e-6);

// ---------------------------------------------------------------------------
// Gradient descent with drift tracking

// Runs w_{t+1} = w_t - eta grad F(w_t) while accumulating the displacement
// u_t = w_t - w_0 separately, so that ||w_t - v||^2 - ||w_0 - v||^2 =
// 2 u_t.(w_0 - v) + ||u_t||^2 stays resolvable when steps are far below the
// spacing of doubles near w_0. Checks the envelope
// ||w_t - v||^2 <= ||w_0 - v||^2 (1 - rate)^t at every step.
struct EnvelopeRun {
    std::size_t steps = 0;
    std::size_t violations = 0;
    std::optional<std::size_t> first_violation;
    double worst_slack = 0.0;  // min over t of (envelope - actual), relative to ||w_0 - v||^2
    double final_drop = 0.0;   // ||w_T - v||^2 - ||w_0 - v||^2
    double final_envelope_drop = 0.0;
    Vec final_w;
};
using EnvelopeObserver = std::function<void(std::size_t t, double drop, double envelope_drop)>;
EnvelopeRun track_envelope(const Vec& w0, const Vec& v, const InputDistribution& dist,
                           const GradientEngine& engine, double eta, double rate,
                           std::size_t n_steps, const EnvelopeObserver& observer = {});

// ---------------------------------------------------------------------------
// Calibration of the symmetric-case constant C

struct CalibrationCase {
    Vec w0;
    Vec v;
};
struct CalibrationResult {
    std::optional<double> C;  // largest grid value with no envelope violation
    std::vector<double> grid;
    std::vector<std::size_t> violations;  // per grid value
    nlohmann::ordered_json to_json() const;
};
// For each C in the grid, runs n_steps of gradient descent with
// eta = C beta min{1, tau} / (c4 alpha^2) from every case and counts steps
// violating ||w_t - v||^2 <= (1 - eta lambda)^t ||w_0 - v||^2.
CalibrationResult calibrate_symmetric_C(const InputDistribution& dist,
                                        const GradientEngine& engine, double alpha, double beta,
                                        double tau, double c4,
                                        const std::vector<CalibrationCase>& cases,
                                        const std::vector<double>& C_grid, std::size_t n_steps);

// ---------------------------------------------------------------------------
// Built-in checker battery

enum class Suite { Lemmas, Theorems, All };
std::optional<Suite> parse_suite(const std::string& s);

struct BatteryRow {
    std::string theorem_id;
    std::size_t configs = 0;
    std::size_t pass = 0;
    std::size_t fail = 0;
    std::size_t skipped = 0;
    std::optional<double> worst_margin;  // over pass/fail reports
    std::vector<TheoremReport> reports;
};

struct BatteryOptions {
    std::uint64_t seed = 0;
    unsigned workers = 0;
    // Multiplies the number of configs per checker; 1 gives the built-in grid.
    double size_scale = 1.0;
};

std::vector<BatteryRow> run_battery(Suite suite, const BatteryOptions& opt);
std::string battery_table(const std::vector<BatteryRow>& rows);

}  // namespace neuron_lab
