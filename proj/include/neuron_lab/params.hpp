#pragma once

#include <Eigen/Dense>

namespace neuron_lab {

using Vec = Eigen::VectorXd;

// Neuron parameters are stored as one vector w = (w_tilde, b_w) of length
// d + 1; the last coordinate is the bias.
inline Eigen::Index ambient_dim(const Vec& w) { return w.size() - 1; }
inline auto tilde(const Vec& w) { return w.head(w.size() - 1); }
inline double bias(const Vec& w) { return w(w.size() - 1); }

Vec make_params(const Vec& w_tilde, double b);

// Unit vector e_i in R^d (0-based index).
Vec unit(Eigen::Index d, Eigen::Index i);

// Angle in [0, pi] between the weight parts of w and v. Returns NaN if either
// weight part is zero.
double weight_angle(const Vec& w, const Vec& v);

// b_t = max{0, -b_w/||w_tilde||}; +inf when w_tilde = 0 and b_w < 0, 0 when
// w_tilde = 0 and b_w >= 0.
double bias_ratio(const Vec& w);

}  // namespace neuron_lab
