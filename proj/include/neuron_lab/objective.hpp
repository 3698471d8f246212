#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>

#include "neuron_lab/distributions.hpp"
#include "neuron_lab/params.hpp"
#include "neuron_lab/quadrature.hpp"

namespace neuron_lab {

struct MonteCarloMethod {
    std::size_t n_samples = 1'000'000;
    std::uint64_t seed = 0;
    // With common random numbers every evaluation uses the sample set of
    // `seed`; otherwise each (w, v) pair gets its own stream.
    bool common_random_numbers = true;
};

struct QuadratureMethod {
    QuadratureGrid grid;
    // Re-evaluate with twice the nodes and report the difference.
    bool estimate_error = false;
};

struct GradientEngine;

struct FiniteDiffMethod {
    std::shared_ptr<const GradientEngine> base;
    double step = 1e-4;
};

struct GradientEngine {
    std::variant<MonteCarloMethod, QuadratureMethod, FiniteDiffMethod> method;
    double relu_deriv_at_zero = 0.0;

    static GradientEngine monte_carlo(std::size_t n, std::uint64_t seed, bool crn = true);
    static GradientEngine quadrature(QuadratureGrid grid = {}, bool estimate_error = false);
    static GradientEngine finite_diff(const GradientEngine& base, double step = 1e-4);

    // Throws std::invalid_argument on bad parameters or an engine that cannot
    // handle the distribution.
    void validate(const InputDistribution& dist) const;
    std::string name() const;
};

// Everything one pass over the distribution yields for a pair (w, v).
struct Evaluation {
    double loss = 0.0;           // F(w)
    double f0 = 0.0;             // F(0)
    double loss_minus_f0 = 0.0;  // F(w) - F(0), computed without subtracting F(0)
    double joint_prob = 0.0;     // P[w.x >= 0 and v.x >= 0]
    double cross = 0.0;          // E[sigma(w.x) sigma(v.x)]
    double sigma_w_sq = 0.0;     // E[sigma(w.x)^2]
    Vec grad;
    std::optional<Vec> grad_se;          // Monte Carlo only
    std::optional<double> loss_se;       // Monte Carlo only
    std::optional<double> error_estimate;  // quadrature with estimate_error
};

struct LossGradResult {
    double loss = 0.0;
    Vec grad;
    std::optional<Vec> std_error;  // per coordinate, Monte Carlo only
};

Evaluation evaluate(const Vec& w, const Vec& v, const InputDistribution& dist,
                    const GradientEngine& engine);

double loss(const Vec& w, const Vec& v, const InputDistribution& dist, const GradientEngine& engine);
LossGradResult gradient(const Vec& w, const Vec& v, const InputDistribution& dist,
                        const GradientEngine& engine);
double joint_positive_prob(const Vec& w, const Vec& v, const InputDistribution& dist,
                           const GradientEngine& engine);
// E[sigma(w_bar.x) sigma(v.x)] with w_bar = w/||w||; throws for w = 0.
double correlation_term(const Vec& w, const Vec& v, const InputDistribution& dist,
                        const GradientEngine& engine);
double loss_at_origin(const Vec& v, const InputDistribution& dist, const GradientEngine& engine);

// Closed-form predicate: sigma(w.x) and sigma'(w.x) vanish on the whole
// support whatever sigma'(0) is. Unbounded kinds use the effective radius.
bool is_dead(const Vec& w, const InputDistribution& dist);

// Exact geometric test that {w.x > 0} and {v.x > 0} do not meet inside the
// support. Always false for unbounded support.
bool overlap_empty(const Vec& w, const Vec& v, const InputDistribution& dist);

// Drops cached Monte Carlo sample sets.
void clear_sample_cache();

}  // namespace neuron_lab
