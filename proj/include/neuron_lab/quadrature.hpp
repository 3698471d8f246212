#pragma once

#include <array>
#include <memory>
#include <vector>

#include "neuron_lab/distributions.hpp"

namespace neuron_lab {

// Gauss-Legendre nodes and weights mapped to [0, 1].
struct GaussLegendreRule {
    std::vector<double> x;
    std::vector<double> w;
};
const GaussLegendreRule& gauss_legendre(int n);

struct QuadratureGrid {
    int nodes = 16;            // Gauss-Legendre nodes per panel
    double panel_width = 2.0;  // widest panel, in units of the density's length scale
};

// Radially symmetric density on the plane together with its 1D marginal.
// Coordinates are (s, t); s is the outer integration variable.
class PlanarModel {
public:
    virtual ~PlanarModel() = default;

    // Half-length of the support chord at abscissa s (+inf when unbounded).
    virtual double half_chord(double s) const = 0;
    // Outer integration range is [-radius, radius].
    virtual double radius() const = 0;
    virtual double scale() const = 0;
    // True when the density is not analytic at the edge of its support.
    virtual bool edge_singular() const = 0;

    // m[k] = integral over t in [lo, hi] of t^k p(s, t), k = 0, 1, 2.
    // lo_edge / hi_edge flag ends that sit on the support boundary.
    virtual void inner_moments(double s, double lo, double hi, bool lo_edge, bool hi_edge,
                               std::array<double, 3>& m) const = 0;

    // m[k] = integral over s > a of (s - a)^k p1(s), k = 0, 1, 2.
    virtual std::array<double, 3> tail_moments(double a) const = 0;

    const QuadratureGrid& grid() const { return grid_; }
    double max_panel() const { return grid_.panel_width * scale(); }

protected:
    explicit PlanarModel(QuadratureGrid grid) : grid_(grid) {}
    QuadratureGrid grid_;
};

// Planar model of the 2D marginal of a spherically symmetric distribution.
std::unique_ptr<PlanarModel> make_planar_model(const InputDistribution& dist, QuadratureGrid grid);

// Constant unit density on the disk of radius r (plane areas).
std::unique_ptr<PlanarModel> make_disk_model(double r, QuadratureGrid grid);

// Region a_s * s + a_t * t + c > 0.
struct HalfPlane {
    double a_s = 0.0;
    double a_t = 0.0;
    double c = 1.0;
};

// m[j][k] = integral of (s - shift)^j t^k p(s, t) over
// {s_lo < s < s_hi} ∩ support ∩ half-plane, for j, k in {0, 1, 2}.
using CellMoments = std::array<std::array<double, 3>, 3>;
CellMoments integrate_cell(const PlanarModel& model, double s_lo, double s_hi,
                           const HalfPlane& hp, double shift);

}  // namespace neuron_lab
