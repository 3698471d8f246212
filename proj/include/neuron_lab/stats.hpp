#pragma once

#include <cstddef>

namespace neuron_lab {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double half_width() const { return 0.5 * (hi - lo); }
};

// Wilson score interval for a binomial proportion (95% by default).
Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.959963984540054);

// P(u_1 >= t) for u uniform on the unit sphere S^{d-1} in R^d.
double sphere_cap_probability(int d, double t);

// P(x_1 >= a) for x uniform in the d-dimensional ball of radius r.
double ball_cap_probability(int d, double r, double a);

// Probability that two independent uniform directions in R^d make an angle
// larger than theta, i.e. P(u_1 < cos(theta)).
double angle_exceeds_probability(int d, double theta);

// Radius R with P(||g|| > R) = tail for g ~ N(0, I_d).
double gaussian_norm_quantile(int d, double tail);

// Peak of the 1D marginal density of the uniform d-ball of radius r.
double ball_marginal_peak(int d, double r);

}  // namespace neuron_lab
