/// @file pcaf.hpp
/// @brief Additive functionals along sampled paths: density integrals with
///        singularity-aware bridge refinement, hyperplane/point local time
///        via expected bridge crossing mass, restriction, Laplace-Stieltjes
///        functionals, and grid total variation.  A streaming evaluator
///        shares one per-step mass decomposition across every requested
///        functional so that coupled measures use common randomness.
#pragma once

#include <iosfwd>
#include <memory>
#include <vector>

#include "revuzlab/measure.hpp"
#include "revuzlab/process.hpp"

namespace revuzlab {

/// Controls substep refinement near singular centers and the tagging of the
/// auxiliary bridge-midpoint streams (which never disturb the main path
/// stream, so refined and unrefined runs share trajectories).
struct SubstepRule {
  double detect_factor = 10.0;  ///< refine when endpoint is within
                                ///< detect_factor * sqrt(h) of a center
  int max_depth = 8;
  /// Local-time gate half-width; <= 0 means the default 4 sqrt(h) per step.
  double local_eps = -1.0;
  /// Added to step indices when tagging refinement streams; lets a shifted
  /// sub-path reproduce the exact refinement draws of the original.
  std::uint64_t step_tag_offset = 0;
};

/// A(t_i) on the same grid as the source path; nondecreasing, A(0) = 0,
/// frozen after the lifetime.
struct PcafTrace {
  std::vector<double> times;
  std::vector<double> values;
  std::vector<char> refined;  ///< per-step flag: substep refinement fired
  bool overflow = false;      ///< a sampled point coincided with a center
};

namespace detail {

/// One attributed piece of PCAF mass inside a step: time s, increment dA,
/// and the state the mass is charged to (used by restrictions and weights).
struct MassBit {
  double s = 0.0;
  double dA = 0.0;
  Pt x{};
};

/// Measure-specific decomposition of one path step into mass bits.
class StepKernel {
 public:
  virtual ~StepKernel() = default;
  virtual void decompose(const Step& s, std::vector<MassBit>& bits) = 0;
  bool overflow = false;
  bool refined_last = false;  ///< whether the last step was substep-refined
};

}  // namespace detail

/// Builds the step kernel realizing mu as a PCAF along paths of the given
/// process.  Supported: densities (trapezoid + bridge refinement),
/// hyperplane surface measure (d >= 2) and point mass (d = 1) via expected
/// bridge crossing mass, plus scalings, sums, and restrictions thereof.
/// Throws std::invalid_argument for unsupported combinations.
std::unique_ptr<detail::StepKernel> make_step_kernel(
    const ProcessSpec& process, const SmoothMeasureSpec& mu,
    const SubstepRule& rule, std::uint64_t master_seed,
    std::uint64_t path_index);

/// Density-PCAF trace A_t = int_0^t f(X_s) ds by trapezoid accumulation with
/// substep refinement near singular centers.
PcafTrace integrate_density_pcaf(const ProcessSpec& process,
                                 const PathSample& path,
                                 const SmoothMeasureSpec& mu,
                                 const SubstepRule& rule = {},
                                 std::uint64_t master_seed = 0x5EEDULL,
                                 std::uint64_t path_index = 0);

/// Local-time trace for hyperplane surface measure (d >= 2) or a point mass
/// (d = 1): each step whose endpoint distance to the level set dips below
/// epsilon contributes its exact expected bridge local time.  epsilon <= 0
/// is an argument error.
PcafTrace local_time_pcaf(const ProcessSpec& process, const PathSample& path,
                          const SmoothMeasureSpec& mu, double epsilon);

/// (1_B A)_t: Stieltjes sum of the left-endpoint indicator against the
/// trace increments.  Grids must match.
PcafTrace restrict_pcaf(const PathSample& path, const PcafTrace& trace,
                        const SetSpec& B);

/// Midpoint-exponential Stieltjes sum of e^{-alpha s} against the trace
/// increments over grid-aligned [t0, t1] (t1 = +inf integrates to the end).
double laplace_functional(const PcafTrace& trace, double alpha, double t0,
                          double t1);

/// Same with an extra state weight g evaluated at step-midpoint states.
double weighted_laplace(const PcafTrace& trace, const PathSample& path,
                        const Fn& g, double alpha, double t0, double t1);

/// Grid total variation of the difference: sum over t_{i+1} <= T of
/// |dA_i - dB_i|; a lower bound for the partition supremum, exact when the
/// difference is monotone in each increment.
double total_variation_diff(const PcafTrace& a, const PcafTrace& b, double T);

/// |A_{s+t} - A_s - (PCAF of the sub-path shifted by s)_t|; the shifted
/// evaluation re-tags its refinement streams so the residual is pure
/// rounding for every supported measure.
double additivity_check(const ProcessSpec& process, const PathSample& path,
                        const SmoothMeasureSpec& mu, double s, double t,
                        const SubstepRule& rule = {},
                        std::uint64_t master_seed = 0x5EEDULL,
                        std::uint64_t path_index = 0);

/// Writes "t,value" lines.
void write_trace_csv(std::ostream& os, const PcafTrace& trace);

// ---------------------------------------------------------------------------
// Streaming evaluation
// ---------------------------------------------------------------------------

/// Which functionals a PcafStream accumulates while a path streams through.
struct PcafStreamConfig {
  double alpha = 1.0;         ///< discount rate for the Laplace taps
  std::vector<double> grid;   ///< ascending, grid-aligned record times
  double time_weight_t = -1.0;  ///< if >= 0: accumulate int_0^T (T-s) dA
  Fn weight_g;                ///< if set: accumulate int e^{-alpha s} g dA
  std::shared_ptr<const SetSpec> restrict_to;  ///< bit-state restriction
};

/// Feeds path steps through one measure's kernel and maintains every
/// requested functional on the shared mass decomposition.  Laplace sums
/// weight each step's total mass by exp(-alpha * step midpoint), matching
/// laplace_functional on the materialized trace bit for bit.
class PcafStream {
 public:
  PcafStream(const ProcessSpec& process, const SmoothMeasureSpec& mu,
             const SubstepRule& rule, PcafStreamConfig cfg,
             std::uint64_t master_seed, std::uint64_t path_index);
  ~PcafStream();
  PcafStream(PcafStream&&) noexcept;
  PcafStream& operator=(PcafStream&&) noexcept;

  void on_step(const Step& s);

  double total() const { return total_; }            ///< A at current time
  double laplace() const { return laplace_; }        ///< int e^{-as} dA
  double time_weighted() const { return time_weighted_; }
  double weighted() const { return weighted_; }
  bool overflow() const;
  /// A at the config grid times (size = grid.size(), valid once streamed
  /// past each time).
  const std::vector<double>& at_grid() const { return at_grid_; }
  /// Partial Laplace sums at the config grid times; tail(t_j) =
  /// laplace() - laplace_at_grid()[j].
  const std::vector<double>& laplace_at_grid() const {
    return laplace_at_grid_;
  }

 private:
  std::unique_ptr<detail::StepKernel> kernel_;
  PcafStreamConfig cfg_;
  std::vector<detail::MassBit> scratch_;
  double total_ = 0.0, laplace_ = 0.0, time_weighted_ = 0.0, weighted_ = 0.0;
  std::vector<double> at_grid_, laplace_at_grid_;
  std::size_t next_grid_ = 0;
};

}  // namespace revuzlab
