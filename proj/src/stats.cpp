#include "neuron_lab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace neuron_lab {

Interval wilson_interval(std::size_t successes, std::size_t n, double z) {
    if (n == 0) throw std::invalid_argument("wilson_interval: n must be positive");
    if (successes > n) throw std::invalid_argument("wilson_interval: successes > n");
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(successes) / nn;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double centre = (p + z2 / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
    Interval out{std::max(0.0, centre - half), std::min(1.0, centre + half)};
    // The closed form is exact at the ends; pin them against rounding.
    if (successes == 0) out.lo = 0.0;
    if (successes == n) out.hi = 1.0;
    return out;
}

double sphere_cap_probability(int d, double t) {
    if (d < 2) throw std::invalid_argument("sphere_cap_probability: d must be >= 2");
    if (t >= 1.0) return 0.0;
    if (t <= -1.0) return 1.0;
    const double tail = 0.5 * boost::math::ibeta(0.5 * (d - 1), 0.5, 1.0 - t * t);
    return t >= 0.0 ? tail : 1.0 - tail;
}

double ball_cap_probability(int d, double r, double a) {
    if (d < 1 || r <= 0.0) throw std::invalid_argument("ball_cap_probability: bad arguments");
    // The 1D marginal of the d-ball matches that of the sphere in R^{d+2}.
    return sphere_cap_probability(d + 2, a / r);
}

double angle_exceeds_probability(int d, double theta) {
    return 1.0 - sphere_cap_probability(d, std::cos(theta));
}

double gaussian_norm_quantile(int d, double tail) {
    if (d < 1 || !(tail > 0.0 && tail < 1.0))
        throw std::invalid_argument("gaussian_norm_quantile: bad arguments");
    return std::sqrt(2.0 * boost::math::gamma_q_inv(0.5 * d, tail));
}

double ball_marginal_peak(int d, double r) {
    const double log_c = std::lgamma(0.5 * d + 1.0) - 0.5 * std::log(M_PI) -
                         std::lgamma(0.5 * (d + 1));
    return std::exp(log_c) / r;
}

}  // namespace neuron_lab
