/// @file revuz_check.hpp
/// @brief Two-sided verification of the Revuz correspondence between
///        positive continuous additive functionals and smooth measures.
///        Every check estimates the path-functional side of one identity by
///        Monte Carlo under an explicit initial law and the measure-integral
///        side by kernel quadrature, then compares the two through a z-score
///        with declared absolute bias budgets (box truncation, horizon
///        tails, grid noise) kept separate from the sampling error.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "revuzlab/estimate.hpp"
#include "revuzlab/geometry.hpp"
#include "revuzlab/measure.hpp"
#include "revuzlab/pcaf.hpp"
#include "revuzlab/potential.hpp"
#include "revuzlab/process.hpp"

namespace revuzlab {

/// Shared knobs for all identity checks.  Deterministic in (seed, fields).
struct CheckConfig {
  std::int64_t n_paths = 20000;  ///< Monte-Carlo paths for the left side
  double dt = 1e-2;              ///< walking step
  /// Laplace-type walks run to max(20/alpha, horizon); windowed checks
  /// always walk exactly to their t.
  double horizon = 0.0;
  std::uint64_t seed = 0x00C0FFEEULL;
  int workers = 0;  ///< 0 -> REVUZ_LAB_WORKERS or hardware
  SubstepRule rule{};
  /// Cells per axis for right-side measure quadrature; the refinement mate
  /// at half resolution supplies the quadrature stderr.
  int quad_per_axis = 24;
  int n_time = 24;     ///< Gauss-Legendre nodes for windowed time quadrature
  int n_hermite = 32;  ///< semigroup quadrature order in right-side terms
  /// Node spacing of boundary-functional grids (0 -> interval length / 64).
  double grid_spacing = 0.0;
  /// Paths per boundary-grid node (0 -> max(n_paths / 10, 500)).
  std::int64_t grid_paths = 0;
  Nu0Config nu0{};  ///< extrapolation schedule for boundary-flux parts
  double z_tolerance = 3.0;
  /// Sampling / quadrature box for data without intrinsic bounded support
  /// (constant test functions, unrestricted Lebesgue measures).  Mandatory
  /// in those cases; otherwise ignored in favor of intrinsic boxes.
  std::optional<Box> domain_box;

  nlohmann::json to_json() const;
};

/// Outcome of one identity check.  `pass` holds iff
///   |lhs - rhs| <= z_tolerance * sqrt(lhs.se^2 + rhs.se^2) + bias_budget,
/// where bias_budget = 2 x the sum of the declared deterministic error
/// bounds (truncation tails, grid split-half noise, semigroup refinement
/// deltas folded into a closed right side).  `z` is the raw discrepancy in
/// combined standard errors, ignoring the budget.
struct VerificationReport {
  std::string identity;  ///< which identity was checked, named by content
  Estimate lhs;          ///< path-functional side
  Estimate rhs;          ///< measure-integral side
  double z = 0.0;
  double z_tolerance = 3.0;
  double bias_budget = 0.0;
  bool pass = false;
  /// The identity reduces to 0 = 0 for this process (no interior killing /
  /// no boundary escape); both sides are then exact zeros.
  bool degenerate = false;
  std::string note;
  nlohmann::json config;  ///< snapshot of every input for reproducibility
  nlohmann::json detail;  ///< per-part estimates of composite left sides

  nlohmann::json to_json() const;
  /// "identity: lhs +- se vs rhs +- se, z = ..., pass" single line.
  std::string summary() const;
};

/// E_{h.m}[int_0^inf e^{-alpha s} f(X_s) dA_s] = int f . R_alpha h dmu,
/// A the additive functional of mu.  Left: paths started from the
/// normalized law h.m on its box by rejection sampling.  Right: weighted
/// energy pairing of (f.mu, h.m).
/// Throws std::invalid_argument when h (or an unbounded mu) has no usable
/// box and cfg.domain_box is empty, or for alpha <= 0 / dimension mismatch.
VerificationReport check_revuz_alpha(const ProcessSpec& process,
                                     const SmoothMeasureSpec& mu,
                                     const DensityFamily& f,
                                     const DensityFamily& h, double alpha,
                                     const CheckConfig& cfg = {});

/// E_{h.m}[int_0^t f dA_s] = int (int_0^t p_s h ds) f dmu.  The windowed
/// kernel is closed for free motion and a time quadrature of the semigroup
/// otherwise.
VerificationReport check_revuz_t(const ProcessSpec& process,
                                 const SmoothMeasureSpec& mu,
                                 const DensityFamily& f,
                                 const DensityFamily& h, double t,
                                 const CheckConfig& cfg = {});

/// E_kappa[int_0^inf e^{-alpha s} f dA_s] = int (1 - alpha R_alpha 1 -
/// phi_alpha) f dmu, kappa the interior killing measure.  Processes with
/// kappa = 0 report a degenerate 0 = 0 with a notice.
VerificationReport check_kappa_alpha(const ProcessSpec& process,
                                     const SmoothMeasureSpec& mu,
                                     const DensityFamily& f, double alpha,
                                     const CheckConfig& cfg = {});

/// E_kappa[int_0^t f dA_s] = int (1 - phi - p_t(1 - phi)) f dmu with phi
/// the probability of eventual boundary escape (phi_0).
VerificationReport check_kappa_t(const ProcessSpec& process,
                                 const SmoothMeasureSpec& mu,
                                 const DensityFamily& f, double t,
                                 const CheckConfig& cfg = {});

/// E_{nu_0}[int_0^inf e^{-alpha s} f dA_s] = int phi_alpha f dmu, nu_0 the
/// boundary-escape measure.  The left side applies the boundary flux
/// functional to a Monte-Carlo grid of x -> E_x[int e^{-alpha s} f dA]
/// (nu_0 acts on functions, not on paths).  Processes without boundary
/// escape report a degenerate 0 = 0.  Requires f constant or mu with a
/// density (the grid needs the f-weighted measure).
VerificationReport check_nu_alpha(const ProcessSpec& process,
                                  const SmoothMeasureSpec& mu,
                                  const DensityFamily& f, double alpha,
                                  const CheckConfig& cfg = {});

/// E_{nu_0}[int_0^t f dA_s] = int (phi - p_t phi) f dmu (= int (1 - p_t 1)
/// f dmu when every path eventually escapes).
VerificationReport check_nu_t(const ProcessSpec& process,
                              const SmoothMeasureSpec& mu,
                              const DensityFamily& f, double t,
                              const CheckConfig& cfg = {});

/// E_{alpha m + kappa + nu_0}[int_0^inf e^{-alpha s} f dA_s] = int f dmu.
/// The alpha.m and kappa parts share one uniform sampling pass (both are
/// multiples of Lebesgue); the nu_0 part goes through the grid functional.
/// Per-part estimates are recorded in the report detail.
VerificationReport check_trinity_alpha(const ProcessSpec& process,
                                       const SmoothMeasureSpec& mu,
                                       const DensityFamily& f, double alpha,
                                       const CheckConfig& cfg = {});

/// E_m[int_0^t f dA] + E_{kappa + nu_0}[int_0^t (t - s) f dA_s] = t int f
/// dmu.  The (t - s)-weighted parts run the stream of the f-weighted
/// measure, so they need f constant or mu with a density.
VerificationReport check_trinity_t(const ProcessSpec& process,
                                   const SmoothMeasureSpec& mu,
                                   const DensityFamily& f, double t,
                                   const CheckConfig& cfg = {});

/// E_{alpha m + kappa/2 + nu_0/2}[A~_inf B~_inf] = E_alpha(U_alpha mu,
/// U_alpha nu) with A~_inf = int_0^inf e^{-alpha s} dA_s and B~ likewise:
/// the second-moment identity tying coupled exponential functionals to the
/// mutual energy.  Left: one walk per path feeds both measure streams
/// (common increments); right: energy_pairing.
VerificationReport check_second_moment(const ProcessSpec& process,
                                       const SmoothMeasureSpec& mu,
                                       const SmoothMeasureSpec& nu,
                                       double alpha,
                                       const CheckConfig& cfg = {});

}  // namespace revuzlab
