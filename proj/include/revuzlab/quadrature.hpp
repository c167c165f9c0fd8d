/// @file quadrature.hpp
/// @brief Deterministic quadrature building blocks: Gauss-Legendre and
///        Gauss-Hermite rules, tensor-product integration over boxes with
///        membership masks and Richardson-style refinement, graded polar
///        shells for integrable point singularities, sphere grids, and the
///        Halton low-discrepancy sequence.
#pragma once

#include <functional>
#include <vector>

#include "revuzlab/estimate.hpp"
#include "revuzlab/geometry.hpp"

namespace revuzlab {

struct Quad1D {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule on [-1, 1]; exact for polynomials of degree 2n-1.
const Quad1D& gauss_legendre(int n);

/// Gauss-Hermite rule for weight exp(-t^2) on (-inf, inf) (physicists'
/// convention). E[g(Z)] for Z ~ N(0,1) is (1/sqrt(pi)) * sum w_i g(sqrt(2) t_i).
const Quad1D& gauss_hermite(int n);

/// Gauss-Legendre transplanted to [a, b].
Quad1D gauss_legendre_on(int n, double a, double b);

/// Standard normal density / cdf / upper tail.
inline double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) * 0.3989422804014327;
}
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }
inline double norm_sf(double x) { return 0.5 * std::erfc(x * M_SQRT1_2); }

using ScalarField = std::function<double(const Pt&)>;
using SetMask = std::function<bool(const Pt&)>;

/// Result of a self-refining quadrature: the value at the finest level plus
/// the last refinement delta as an error surrogate.
struct QuadResult {
  double value = 0.0;
  double est_error = 0.0;
  bool converged = false;
  int levels = 0;

  Estimate estimate(std::string note = {}) const {
    Estimate e;
    e.value = value;
    e.se = 0.0;
    e.n = 0;
    e.bias_note = Estimate::join_notes(
        note, "quad refinement delta " + std::to_string(est_error) +
                  (converged ? "" : " (not converged)"));
    return e;
  }
};

/// Tensor Gauss-Legendre over a box (no mask); n points per axis.
double integrate_box_gauss(const Box& box, int n_per_axis, const ScalarField& f);

/// Midpoint rule over a box with an optional membership mask, refined by
/// doubling the per-axis resolution until the relative change is below
/// rel_tol (or max_levels is hit). Suitable for piecewise-smooth integrands
/// with irregular membership boundaries.
QuadResult integrate_box_masked(const Box& box, const ScalarField& f,
                                const SetMask& mask, double rel_tol = 1e-4,
                                int start_per_axis = 16, int max_levels = 6);

/// Integral of f over the ball(center, r1) minus ball(center, r0) using
/// geometrically graded radial shells (toward r0 if r0 == 0) with
/// Gauss-Legendre in r and a sphere grid in the angle; refined until stable.
/// Handles integrands with an integrable power singularity at the center.
QuadResult integrate_polar_shells(const Pt& center, int dim, double r0,
                                  double r1, const ScalarField& f,
                                  const SetMask& mask, double rel_tol = 1e-4,
                                  int max_levels = 5);

/// Unit-sphere direction grid with weights summing to the sphere area.
/// d=1: {-1,+1}; d=2: uniform angles; d=3: Gauss-Legendre in cos(theta) x
/// uniform in phi (exact for spherical polynomials of matching degree).
struct SphereGrid {
  std::vector<Pt> dirs;
  std::vector<double> weights;
};
SphereGrid sphere_grid(int dim, int resolution);

/// Halton sequence point i (0-based) in [0,1)^dim, bases 2, 3, 5.
Pt halton(int index, int dim);

/// Least-squares straight-line fit y ~ a + b x; returns {a, b}.
std::pair<double, double> fit_line(const std::vector<double>& x,
                                   const std::vector<double>& y);

}  // namespace revuzlab
