#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "neuron_lab/params.hpp"
#include "neuron_lab/rng.hpp"

namespace neuron_lab {

enum class DistributionKind { UniformBall, StandardGaussian, HeavyCap };

// Descriptor of the input distribution over R^d. Samples are always returned
// lifted, x = (x_tilde, 1), so the bias is an ordinary weight.
struct InputDistribution {
    DistributionKind kind = DistributionKind::UniformBall;
    int dim = 1;
    double radius = 1.0;        // UniformBall, HeavyCap
    double cap_fraction = 0.5;  // HeavyCap: mass q placed uniformly in the cap A
    double cap_depth = 4.0;     // HeavyCap: A = {x_1 > r - r / (cap_depth * d^2)}

    static InputDistribution uniform_ball(int d, double r = 1.0);
    static InputDistribution standard_gaussian(int d);
    static InputDistribution heavy_cap(int d, double r = 1.0, double q = 0.5, double depth = 4.0);

    // Throws std::invalid_argument on an unsupported kind/dim combination.
    void validate() const;

    bool spherically_symmetric() const { return kind != DistributionKind::HeavyCap; }
    bool bounded() const { return kind != DistributionKind::StandardGaussian; }

    // Declared support radius c of x_tilde; absent for the Gaussian.
    std::optional<double> support_radius() const;

    // c for bounded kinds, otherwise the radius with P(||x_tilde|| > c) < tail.
    double effective_radius(double tail = 1e-12) const;

    // Threshold a of the HeavyCap set A.
    double cap_threshold() const;

    std::string name() const;
};

bool operator==(const InputDistribution& a, const InputDistribution& b);

using SampleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Samples are generated in fixed chunks; chunk j uses
// make_rng(seed, stream::mc_samples, j). The Monte Carlo engine uses the same
// rule, so sample(dist, n, seed) is exactly its sample set.
inline constexpr std::size_t kSampleChunk = 4096;

// Writes one lifted sample into row[0..d].
void draw_lifted(const InputDistribution& dist, Rng& rng, double* row);

SampleMatrix sample(const InputDistribution& dist, std::size_t n, std::uint64_t seed);

// Fills rows [0, count) with chunk `chunk` of the stream for `seed`.
void sample_chunk(const InputDistribution& dist, std::uint64_t seed, std::size_t chunk,
                  std::size_t count, double* out);

// Density of the projection of x_tilde onto any 2D subspace, at y = (y1, y2).
double marginal_density_2d(const InputDistribution& dist, double y1, double y2);

// Density of the projection of x_tilde onto any unit direction.
double marginal_density_1d(const InputDistribution& dist, double s);

struct SpreadConstants {
    std::optional<double> c;        // support radius of x_tilde
    double c_effective = 0.0;       // c, or the 1e-12 tail radius when unbounded
    double c_lifted = 0.0;          // sqrt(c_effective^2 + 1), bound on ||x||
    std::optional<double> c_prime;  // sup of the 1D marginal density
    std::optional<double> alpha;
    std::optional<double> beta;     // inf of the 2D marginal density on ||y|| <= alpha
    std::optional<double> tau;      // E|x1 x2| / E[x1^2]
    std::optional<double> tau_mc;   // Monte Carlo estimate of tau and its error
    std::optional<double> tau_mc_se;
    std::optional<double> c4;       // E ||x_tilde||^4
    std::optional<double> c4_se;
    bool bounded = true;
};

// Closed forms where available, Monte Carlo (n_mc samples) elsewhere. If
// alpha is not given, symmetric kinds use the alpha maximizing alpha^4 beta.
SpreadConstants estimate_constants(const InputDistribution& dist, std::uint64_t seed,
                                   std::optional<double> alpha = std::nullopt,
                                   std::size_t n_mc = 200000);

}  // namespace neuron_lab
