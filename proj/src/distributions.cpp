#include "neuron_lab/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "neuron_lab/stats.hpp"

namespace neuron_lab {

InputDistribution InputDistribution::uniform_ball(int d, double r) {
    InputDistribution out;
    out.kind = DistributionKind::UniformBall;
    out.dim = d;
    out.radius = r;
    out.validate();
    return out;
}

InputDistribution InputDistribution::standard_gaussian(int d) {
    InputDistribution out;
    out.kind = DistributionKind::StandardGaussian;
    out.dim = d;
    out.validate();
    return out;
}

InputDistribution InputDistribution::heavy_cap(int d, double r, double q, double depth) {
    InputDistribution out;
    out.kind = DistributionKind::HeavyCap;
    out.dim = d;
    out.radius = r;
    out.cap_fraction = q;
    out.cap_depth = depth;
    out.validate();
    return out;
}

void InputDistribution::validate() const {
    if (dim < 1) throw std::invalid_argument("distribution: dim must be >= 1");
    switch (kind) {
        case DistributionKind::StandardGaussian:
            return;
        case DistributionKind::UniformBall:
            if (!(radius > 0.0) || !std::isfinite(radius))
                throw std::invalid_argument("distribution: radius must be positive");
            return;
        case DistributionKind::HeavyCap:
            if (!(radius > 0.0) || !std::isfinite(radius))
                throw std::invalid_argument("distribution: radius must be positive");
            if (!(cap_fraction > 0.0 && cap_fraction < 1.0))
                throw std::invalid_argument("distribution: cap_fraction must lie in (0, 1)");
            if (!(cap_depth > 0.0))
                throw std::invalid_argument("distribution: cap_depth must be positive");
            if (dim < 2) throw std::invalid_argument("distribution: HeavyCap needs dim >= 2");
            return;
    }
    throw std::invalid_argument("distribution: unknown kind");
}

std::optional<double> InputDistribution::support_radius() const {
    if (kind == DistributionKind::StandardGaussian) return std::nullopt;
    return radius;
}

double InputDistribution::effective_radius(double tail) const {
    if (kind == DistributionKind::StandardGaussian) return gaussian_norm_quantile(dim, tail);
    return radius;
}

double InputDistribution::cap_threshold() const {
    return radius - radius / (cap_depth * dim * static_cast<double>(dim));
}

std::string InputDistribution::name() const {
    switch (kind) {
        case DistributionKind::UniformBall: return "UniformBall";
        case DistributionKind::StandardGaussian: return "StandardGaussian";
        case DistributionKind::HeavyCap: return "HeavyCap";
    }
    return "unknown";
}

bool operator==(const InputDistribution& a, const InputDistribution& b) {
    if (a.kind != b.kind || a.dim != b.dim) return false;
    switch (a.kind) {
        case DistributionKind::StandardGaussian: return true;
        case DistributionKind::UniformBall: return a.radius == b.radius;
        case DistributionKind::HeavyCap:
            return a.radius == b.radius && a.cap_fraction == b.cap_fraction &&
                   a.cap_depth == b.cap_depth;
    }
    return false;
}

namespace {

class Sampler {
public:
    Sampler(const InputDistribution& dist, Rng& rng) : dist_(dist), rng_(rng) {}

    void draw(double* row) {
        const int d = dist_.dim;
        switch (dist_.kind) {
            case DistributionKind::StandardGaussian:
                for (int i = 0; i < d; ++i) row[i] = normal_(rng_);
                break;
            case DistributionKind::UniformBall:
                ball(row, d, dist_.radius);
                break;
            case DistributionKind::HeavyCap:
                if (unif_(rng_) < dist_.cap_fraction) {
                    cap(row);
                } else {
                    const double a = dist_.cap_threshold();
                    do {
                        ball(row, d, dist_.radius);
                    } while (row[0] > a);
                }
                break;
        }
        row[d] = 1.0;
    }

private:
    // Uniform point in the k-ball of radius r: Gaussian direction times r U^{1/k}.
    void ball(double* out, int k, double r) {
        if (k == 0) return;
        double n2 = 0.0;
        do {
            n2 = 0.0;
            for (int i = 0; i < k; ++i) {
                out[i] = normal_(rng_);
                n2 += out[i] * out[i];
            }
        } while (n2 == 0.0);
        const double scale = r * std::pow(unif_(rng_), 1.0 / k) / std::sqrt(n2);
        for (int i = 0; i < k; ++i) out[i] *= scale;
    }

    // Uniform point in A: x_1 has density proportional to (r^2 - x_1^2)^{(d-1)/2}
    // on (a, r], drawn by rejection; the rest is uniform in the slice disk.
    void cap(double* out) {
        const int d = dist_.dim;
        const double r = dist_.radius;
        const double a = dist_.cap_threshold();
        const double base = r * r - a * a;
        const double expo = 0.5 * (d - 1);
        double x1 = 0.0;
        while (true) {
            x1 = a + (r - a) * (1.0 - unif_(rng_));
            const double accept = std::pow((r * r - x1 * x1) / base, expo);
            if (unif_(rng_) < accept) break;
        }
        out[0] = x1;
        ball(out + 1, d - 1, std::sqrt(std::max(0.0, r * r - x1 * x1)));
    }

    const InputDistribution& dist_;
    Rng& rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
};

}  // namespace

void draw_lifted(const InputDistribution& dist, Rng& rng, double* row) {
    Sampler s(dist, rng);
    s.draw(row);
}

void sample_chunk(const InputDistribution& dist, std::uint64_t seed, std::size_t chunk,
                  std::size_t count, double* out) {
    Rng rng = make_rng(seed, stream::mc_samples, chunk);
    Sampler s(dist, rng);
    const std::size_t stride = static_cast<std::size_t>(dist.dim) + 1;
    for (std::size_t i = 0; i < count; ++i) s.draw(out + i * stride);
}

SampleMatrix sample(const InputDistribution& dist, std::size_t n, std::uint64_t seed) {
    dist.validate();
    if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
    SampleMatrix x(static_cast<Eigen::Index>(n), dist.dim + 1);
    const std::size_t n_chunks = (n + kSampleChunk - 1) / kSampleChunk;
    for (std::size_t j = 0; j < n_chunks; ++j) {
        const std::size_t begin = j * kSampleChunk;
        const std::size_t count = std::min(kSampleChunk, n - begin);
        sample_chunk(dist, seed, j, count, x.data() + begin * (dist.dim + 1));
    }
    return x;
}

double marginal_density_2d(const InputDistribution& dist, double y1, double y2) {
    const double rho2 = y1 * y1 + y2 * y2;
    switch (dist.kind) {
        case DistributionKind::StandardGaussian:
            if (dist.dim < 2) break;
            return std::exp(-0.5 * rho2) / (2.0 * M_PI);
        case DistributionKind::UniformBall: {
            if (dist.dim < 2) break;
            const double r2 = dist.radius * dist.radius;
            if (rho2 >= r2) return 0.0;
            const double d = dist.dim;
            return d / (2.0 * M_PI * r2) * std::pow(1.0 - rho2 / r2, 0.5 * (d - 2.0));
        }
        case DistributionKind::HeavyCap:
            throw std::invalid_argument(
                "marginal_density_2d: HeavyCap is not spherically symmetric");
    }
    throw std::invalid_argument("marginal_density_2d: needs dim >= 2");
}

double marginal_density_1d(const InputDistribution& dist, double s) {
    switch (dist.kind) {
        case DistributionKind::StandardGaussian:
            return std::exp(-0.5 * s * s) / std::sqrt(2.0 * M_PI);
        case DistributionKind::UniformBall: {
            const double r = dist.radius;
            if (std::abs(s) >= r) return 0.0;
            const double u = s / r;
            return ball_marginal_peak(dist.dim, r) * std::pow(1.0 - u * u, 0.5 * (dist.dim - 1));
        }
        case DistributionKind::HeavyCap:
            throw std::invalid_argument(
                "marginal_density_1d: HeavyCap is not spherically symmetric");
    }
    throw std::invalid_argument("marginal_density_1d: unknown kind");
}

namespace {

void estimate_tau_mc(const InputDistribution& dist, std::uint64_t seed, std::size_t n,
                     SpreadConstants& out) {
    Rng rng = make_rng(seed, stream::constants, 1);
    std::vector<double> row(dist.dim + 1);
    double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        draw_lifted(dist, rng, row.data());
        const double a = std::abs(row[0] * row[1]);
        const double b = row[0] * row[0];
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
    }
    const double nn = static_cast<double>(n);
    const double ma = sa / nn, mb = sb / nn;
    const double ratio = ma / mb;
    // Delta method for a ratio of means.
    const double var_a = saa / nn - ma * ma;
    const double var_b = sbb / nn - mb * mb;
    const double cov = sab / nn - ma * mb;
    const double var = (var_a - 2.0 * ratio * cov + ratio * ratio * var_b) / (mb * mb);
    out.tau_mc = ratio;
    out.tau_mc_se = std::sqrt(std::max(0.0, var) / nn);
}

void estimate_c4_mc(const InputDistribution& dist, std::uint64_t seed, std::size_t n,
                    SpreadConstants& out) {
    Rng rng = make_rng(seed, stream::constants, 2);
    std::vector<double> row(dist.dim + 1);
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        draw_lifted(dist, rng, row.data());
        double n2 = 0.0;
        for (int k = 0; k < dist.dim; ++k) n2 += row[k] * row[k];
        const double q = n2 * n2;
        s += q;
        ss += q * q;
    }
    const double nn = static_cast<double>(n);
    out.c4 = s / nn;
    out.c4_se = std::sqrt(std::max(0.0, ss / nn - (s / nn) * (s / nn)) / nn);
}

}  // namespace

SpreadConstants estimate_constants(const InputDistribution& dist, std::uint64_t seed,
                                   std::optional<double> alpha, std::size_t n_mc) {
    dist.validate();
    if (alpha && !(*alpha > 0.0))
        throw std::invalid_argument("estimate_constants: alpha must be positive");
    SpreadConstants out;
    const int d = dist.dim;
    out.c = dist.support_radius();
    out.bounded = dist.bounded();
    out.c_effective = dist.effective_radius();
    out.c_lifted = std::sqrt(out.c_effective * out.c_effective + 1.0);

    switch (dist.kind) {
        case DistributionKind::StandardGaussian:
            out.c_prime = 1.0 / std::sqrt(2.0 * M_PI);
            out.c4 = static_cast<double>(d) * (d + 2);
            break;
        case DistributionKind::UniformBall: {
            const double r = dist.radius;
            out.c_prime = ball_marginal_peak(d, r);
            out.c4 = std::pow(r, 4) * d / (d + 4.0);
            break;
        }
        case DistributionKind::HeavyCap: {
            // 1D marginal along e_1, the concentrated direction: the cap part
            // peaks at x_1 = a, the remainder at x_1 = 0.
            const double r = dist.radius;
            const double a = dist.cap_threshold();
            const double q = dist.cap_fraction;
            const double peak = ball_marginal_peak(d, r);
            const double p_cap = ball_cap_probability(d, r, a);
            const double u = a / r;
            const double cap_peak = q * peak * std::pow(1.0 - u * u, 0.5 * (d - 1)) / p_cap;
            const double rest_peak = (1.0 - q) * peak / (1.0 - p_cap);
            out.c_prime = std::max(cap_peak, rest_peak);
            estimate_c4_mc(dist, seed, n_mc, out);
            break;
        }
    }

    if (dist.spherically_symmetric() && d >= 2) {
        // For any spherically symmetric law, (x1, x2) = rho (cos phi, sin phi)
        // with phi uniform, so E|x1 x2| / E[x1^2] = E|sin 2 phi| = 2/pi.
        out.tau = 2.0 / M_PI;
        estimate_tau_mc(dist, seed, n_mc, out);
        // alpha^4 beta peaks at alpha^2 = 4 r^2/(d+2) for the ball, alpha = 2
        // for the Gaussian.
        const double a = alpha ? *alpha
                               : (dist.kind == DistributionKind::UniformBall
                                      ? dist.radius * std::min(2.0 / std::sqrt(d + 2.0), 0.9)
                                      : 2.0);
        out.alpha = a;
        // Both 2D marginals are radially non-increasing, so the infimum over
        // the closed disk of radius alpha sits on its boundary.
        out.beta = marginal_density_2d(dist, a, 0.0);
    }
    return out;
}

}  // namespace neuron_lab
