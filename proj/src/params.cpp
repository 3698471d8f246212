#include "neuron_lab/params.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace neuron_lab {

Vec make_params(const Vec& w_tilde, double b) {
    Vec w(w_tilde.size() + 1);
    w.head(w_tilde.size()) = w_tilde;
    w(w_tilde.size()) = b;
    return w;
}

Vec unit(Eigen::Index d, Eigen::Index i) {
    Vec e = Vec::Zero(d);
    e(i) = 1.0;
    return e;
}

double weight_angle(const Vec& w, const Vec& v) {
    const double nw = tilde(w).norm();
    const double nv = tilde(v).norm();
    if (nw == 0.0 || nv == 0.0) return std::numeric_limits<double>::quiet_NaN();
    // atan2 form stays accurate near 0 and pi, where acos loses digits.
    const Vec a = tilde(w) / nw;
    const Vec b = tilde(v) / nv;
    return 2.0 * std::atan2((a - b).norm(), (a + b).norm());
}

double bias_ratio(const Vec& w) {
    const double nw = tilde(w).norm();
    const double b = bias(w);
    if (nw == 0.0) return b < 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return std::max(0.0, -b / nw);
}

}  // namespace neuron_lab
