#pragma once

// Potentials of smooth measures and the energy geometry built on them:
// U_alpha mu as a Monte-Carlo object, energy pairings E_alpha(U mu, U nu),
// the rho_0 / rho metrics on measures attached to a nest, the uniform
// convergence conditions (A1), (A2) and the one-potential bound, and the
// boundary functional nu_0 evaluated on grid functions.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "revuzlab/estimate.hpp"
#include "revuzlab/geometry.hpp"
#include "revuzlab/measure.hpp"
#include "revuzlab/pcaf.hpp"
#include "revuzlab/process.hpp"

namespace revuzlab {

// ---------------------------------------------------------------------------
// Grid functions
// ---------------------------------------------------------------------------

/// A scalar field sampled on a regular node lattice over a box, evaluated
/// anywhere by clamped multilinear interpolation.  Nodes include the box
/// faces; axis k carries nodes[k] >= 1 nodes (1 only for degenerate edges).
struct GridFunction {
  Box box;
  int dim = 1;
  std::array<int, 3> nodes{1, 1, 1};
  std::vector<double> values;  ///< row-major, axis 0 slowest

  /// Node lattice covering `box` with spacing at most `spacing` per axis.
  static GridFunction on_box(const Box& box, double spacing);

  std::int64_t size() const;
  Pt node(std::int64_t flat) const;
  double at(const Pt& x) const;
};

/// Writes "x0[,x1[,x2]],value" rows, one per node, with full precision.
void write_grid_csv(std::ostream& os, const GridFunction& g);

// ---------------------------------------------------------------------------
// Potentials
// ---------------------------------------------------------------------------

struct PotentialConfig {
  double dt = 1e-2;
  std::uint64_t seed = 0x00C0FFEEULL;
  int workers = 0;  ///< 0 -> REVUZ_LAB_WORKERS or hardware
  SubstepRule rule{};
};

/// U_alpha mu (x) = E_x[int_0^infty e^{-alpha s} dA_s] by path simulation,
/// truncated at T* = max(20/alpha, horizon) with the Laplace tail recorded
/// in the bias note.  Deterministic in (seed, config).
/// Throws std::invalid_argument for alpha <= 0 or dimension mismatch.
Estimate potential_U(const ProcessSpec& process, const SmoothMeasureSpec& mu,
                     double alpha, const Pt& x, double horizon,
                     std::int64_t n_paths, const PotentialConfig& cfg = {});

/// Batch of potential_U over the node lattice; nodes outside the state
/// space (e.g. on an absorbing boundary) get the boundary value 0.
GridFunction potential_grid(const ProcessSpec& process,
                            const SmoothMeasureSpec& mu, double alpha,
                            const Box& box, double spacing, double horizon,
                            std::int64_t n_paths,
                            const PotentialConfig& cfg = {});

// ---------------------------------------------------------------------------
// Energy pairings and the measure metrics
// ---------------------------------------------------------------------------

struct PairingConfig {
  /// Cells per axis for the measure quadrature (0 -> 64 / 32 / 14 by dim).
  int per_axis = 0;
  /// false: deterministic route - both measures become weighted cells and
  /// the resolvent kernel is summed over cell pairs (self-pairs use the
  /// cell-averaged kernel).  true: outer quadrature over nu, inner
  /// potential_U at each outer node with common random numbers.
  bool monte_carlo = false;
  double horizon = 0.0;  ///< MC route; effective T* = max(20/alpha, horizon)
  double dt = 1e-2;
  std::int64_t paths_per_node = 256;
  std::uint64_t seed = 0x00C0FFEEULL;
  int workers = 0;
  SubstepRule rule{};
  /// Quadrature boxes for measures without an intrinsic bounded support
  /// (constant or radial densities, hyperplanes).
  std::optional<Box> mu_box;
  std::optional<Box> nu_box;
};

/// E_alpha(U_alpha mu, U_alpha nu) = int U_alpha mu d nu.  Divergent mass
/// or a non-square-integrable shared singularity reports +inf in-band.
/// The stderr of the deterministic route is the delta between two cell
/// refinement levels.
Estimate energy_pairing(const ProcessSpec& process, const SmoothMeasureSpec& mu,
                        const SmoothMeasureSpec& nu, double alpha,
                        const PairingConfig& cfg = {});

/// One signed quadrature cell of a measure: midpoint and cell mass.
struct WeightedNode {
  Pt x{};
  double w = 0.0;
};

/// Midpoint cells of mu over `box` (per_axis <= 0 picks the dimension
/// default).  Hyperplane and Dirac parts collapse onto their carrier; cells
/// at a singular center integrate the density adaptively instead of
/// sampling it, so the masses stay finite whenever the measure is Radon.
std::vector<WeightedNode> measure_cells(const SmoothMeasureSpec& mu,
                                        const Box& box, int per_axis = 0);

/// int weight(x) G_alpha(x, y) mu(dx) nu(dy): the energy pairing with the
/// first measure reweighted by a bounded function (so for nu = h.m this is
/// int weight . R_alpha h d mu).  Deterministic cell route only; the stderr
/// is the delta between two refinement levels.
Estimate weighted_energy_pairing(const ProcessSpec& process,
                                 const SmoothMeasureSpec& mu, const Fn& weight,
                                 const SmoothMeasureSpec& nu, double alpha,
                                 const PairingConfig& cfg = {});

/// rho_0(mu, nu) = sqrt(E_1(U mu - U nu, U mu - U nu)), computed from the
/// pairing expansion with coupled quadrature/randomness and clamped at 0.
/// The arguments are ordered canonically first, so the value is exactly
/// symmetric; identical measures give exactly 0.  A significantly negative
/// expansion (< -5 stderr) throws std::runtime_error.
Estimate rho0_distance(const ProcessSpec& process, const SmoothMeasureSpec& mu,
                       const SmoothMeasureSpec& nu, double alpha = 1.0,
                       const PairingConfig& cfg = {});

/// rho(mu, nu) = sum_{l=1..max_level} 2^{-l} (1 ^ rho_0 of the restrictions
/// to the l-th nest member).  Attachment failures (infinite restricted
/// energy) cap their summand at 2^{-l} and are named in the bias note; the
/// truncation tail bound 2^{-max_level} is recorded there too.
Estimate rho_distance(const ProcessSpec& process, const SmoothMeasureSpec& mu,
                      const SmoothMeasureSpec& nu, const NestSpec& nest,
                      int max_level, const PairingConfig& cfg = {});

// ---------------------------------------------------------------------------
// Uniform-convergence conditions
// ---------------------------------------------------------------------------

struct ConditionConfig {
  int grid_per_axis = 4;  ///< integration lattice over the compact set K
  double dt = 1e-2;
  double horizon_pad = 0.0;  ///< extra horizon beyond the largest time needed
  std::uint64_t seed = 0x00C0FFEEULL;
  int workers = 0;
  SubstepRule rule{};
};

/// Per family member: sup over the time grid of
///   int_K | E_x[(1_F A^n)_s] - E_x[(1_F A)_s] | dx,
/// F the ell-th nest member, with one coupled path set driving every
/// functional at each start point.
std::vector<Estimate> condition_A1(const ProcessSpec& process,
                                   const std::vector<SmoothMeasureSpec>& family,
                                   const SmoothMeasureSpec& mu,
                                   const NestSpec& nest, int ell,
                                   const SetSpec& K, double t,
                                   const std::vector<double>& time_grid,
                                   std::int64_t n_paths,
                                   const ConditionConfig& cfg = {});

/// Per schedule time t_j:
///   int_K max over {family, mu} of E_x[int_{t_j}^infty e^{-alpha s}
///                                      d(1_F A)_s] dx,
/// the maximum taken inside the K-integral.
std::vector<Estimate> condition_A2(const ProcessSpec& process,
                                   const std::vector<SmoothMeasureSpec>& family,
                                   const SmoothMeasureSpec& mu,
                                   const NestSpec& nest, int ell,
                                   const SetSpec& K, double alpha,
                                   const std::vector<double>& t_schedule,
                                   std::int64_t n_paths,
                                   const ConditionConfig& cfg = {});

/// M_ell = max over a rejection-filtered lattice in the ell-th member of
/// E_x[int_0^infty e^{-t} d(1_F A)_t]; a lower surrogate for the sup,
/// as the bias note records.  grid_per_axis 0 -> 16, total capped at 4096.
Estimate condition_1pot(const ProcessSpec& process, const SmoothMeasureSpec& mu,
                        const NestSpec& nest, int ell, int grid_per_axis,
                        std::int64_t n_paths, const PotentialConfig& cfg = {});

// ---------------------------------------------------------------------------
// The boundary functional nu_0
// ---------------------------------------------------------------------------

struct Nu0Config {
  std::vector<double> schedule{0.2, 0.1, 0.05, 0.025};
  /// Declares g to be an alpha-excessive potential: the defining quotient
  /// must then increase as s decreases; a violation beyond tolerance
  /// throws std::runtime_error.
  bool declared_excessive = false;
  int n_space = 160;    ///< spatial Gauss-Legendre nodes
  int n_hermite = 48;   ///< semigroup quadrature order
};

/// nu_0(g) = lim_{s->0} (1/s) int g (phi_alpha - e^{-alpha s} p_s phi_alpha)
/// dm, extrapolated from the schedule with a v0 + a sqrt(s) + b s model
/// (the quotient picks up a sqrt(s) term from the boundary layer).  Exact 0
/// for processes without boundary escape.
Estimate nu0_functional(const ProcessSpec& process, const GridFunction& g,
                        double alpha, const Nu0Config& cfg = {});

}  // namespace revuzlab
