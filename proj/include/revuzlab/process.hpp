/// @file process.hpp
/// @brief Catalog of symmetric diffusions (free, interior-killed, and
///        interval-absorbed Brownian motion) with exact-increment path
///        sampling, transition densities, semigroup and resolvent
///        evaluation, and the lifetime Laplace functional.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "revuzlab/estimate.hpp"
#include "revuzlab/geometry.hpp"
#include "revuzlab/rng.hpp"

namespace revuzlab {

enum class Variant { FreeBM, KilledBM, AbsorbedBM };

enum class KillMode { None, InteriorKill, BoundaryExit };

/// Immutable description of one catalog process.  The reference measure is
/// Lebesgue on R^d (free / killed) or on the open interval (a,b) (absorbed).
struct ProcessSpec {
  Variant variant = Variant::FreeBM;
  int dim = 1;
  double kill_c = 0.0;  ///< constant interior killing rate (KilledBM only)
  double a = 0.0;       ///< interval endpoints (AbsorbedBM only)
  double b = 1.0;

  static ProcessSpec free_bm(int d);
  static ProcessSpec killed_bm(int d, double c);
  static ProcessSpec absorbed_bm(double a, double b);

  /// Throws std::invalid_argument when the fields are inconsistent.
  void validate() const;

  bool conservative() const { return variant == Variant::FreeBM; }
  double interval_length() const { return b - a; }
  bool in_state_space(const Pt& x) const;
  std::string label() const;

  nlohmann::json to_json() const;
  static ProcessSpec from_json(const nlohmann::json& j);
};

/// Cemetery states are encoded as all-NaN points.
inline Pt cemetery_point() {
  Pt p{};
  p.fill(std::numeric_limits<double>::quiet_NaN());
  return p;
}
inline bool is_cemetery(const Pt& x) { return std::isnan(x[0]); }

/// One sampled trajectory on the grid {0, dt, 2dt, ..., horizon}.  Entries
/// with times[i] >= zeta hold the cemetery marker.
struct PathSample {
  std::vector<double> times;
  std::vector<Pt> states;
  double zeta = std::numeric_limits<double>::infinity();
  KillMode kill_mode = KillMode::None;
  Pt death_point{};          ///< left limit at zeta: boundary point for
                             ///< absorption, last interior state for killing
  std::size_t alive_count = 0;  ///< number of leading non-cemetery states

  bool dead() const { return std::isfinite(zeta); }
};

/// One step of a streamed trajectory.  When `dies` is set the path ends
/// inside (t0, t1]; `x1` is then unspecified and `zeta`, `mode` and
/// `death_point` describe the terminal event.
struct Step {
  std::int64_t index = 0;
  double t0 = 0, t1 = 0;
  Pt x0{}, x1{};
  bool dies = false;
  double zeta = std::numeric_limits<double>::infinity();
  KillMode mode = KillMode::None;
  Pt death_point{};
};

namespace detail {
/// Terminal-event decision for one proposed step of an interval-absorbed
/// path.  Uses the exact Brownian-bridge boundary-crossing probability
/// exp(-2 d0 d1 / h) per endpoint so the exit time carries no O(sqrt(dt))
/// bias; the crossing instant itself is reported mid-step.
struct AbsorbStep {
  bool exits = false;
  double boundary = 0.0;
};
inline AbsorbStep absorb_test(double lo, double hi, double x, double y,
                              double h, Rng& rng) {
  AbsorbStep r;
  if (y <= lo) {
    r.exits = true;
    r.boundary = lo;
    return r;
  }
  if (y >= hi) {
    r.exits = true;
    r.boundary = hi;
    return r;
  }
  const double pa = std::exp(-2.0 * (x - lo) * (y - lo) / h);
  const double pb = std::exp(-2.0 * (hi - x) * (hi - y) / h);
  const double u = rng.uniform();
  if (u < pa) {
    r.exits = true;
    r.boundary = lo;
  } else if (u < pa + pb * (1.0 - pa)) {
    r.exits = true;
    r.boundary = hi;
  }
  return r;
}
}  // namespace detail

/// Streams one trajectory step by step without materializing it.  Exact
/// Gaussian increments; per step the generator consumes `dim` normals and
/// then, for killed paths always and for absorbed paths that stay inside,
/// one uniform.  The visitor receives each Step in order and the walk stops
/// after a terminal step.
template <class Visitor>
void walk_path(const ProcessSpec& spec, const Pt& x0, double horizon,
               double dt, Rng& rng, Visitor&& visit) {
  spec.validate();
  if (!(dt > 0.0)) throw std::invalid_argument("walk_path: dt must be > 0");
  if (!(horizon > 0.0))
    throw std::invalid_argument("walk_path: horizon must be > 0");
  if (!spec.in_state_space(x0))
    throw std::domain_error("walk_path: start point outside the state space");

  const std::int64_t n_steps =
      static_cast<std::int64_t>(std::ceil(horizon / dt - 1e-9));
  Pt x = x0;
  for (std::int64_t i = 0; i < n_steps; ++i) {
    Step s;
    s.index = i;
    s.t0 = static_cast<double>(i) * dt;
    s.t1 = std::min(static_cast<double>(i + 1) * dt, horizon);
    s.x0 = x;
    const double h = s.t1 - s.t0;
    const double sq = std::sqrt(h);
    Pt y = x;
    for (int k = 0; k < spec.dim; ++k) y[k] += sq * rng.normal();

    switch (spec.variant) {
      case Variant::FreeBM:
        s.x1 = y;
        break;
      case Variant::KilledBM: {
        const double u = rng.uniform();
        if (u >= std::exp(-spec.kill_c * h)) {
          s.dies = true;
          s.zeta = s.t0 + 0.5 * h;
          s.mode = KillMode::InteriorKill;
          s.death_point = x;
        } else {
          s.x1 = y;
        }
        break;
      }
      case Variant::AbsorbedBM: {
        const auto r = detail::absorb_test(spec.a, spec.b, x[0], y[0], h, rng);
        if (r.exits) {
          s.dies = true;
          s.zeta = s.t0 + 0.5 * h;
          s.mode = KillMode::BoundaryExit;
          s.death_point = pt(r.boundary);
        } else {
          s.x1 = y;
        }
        break;
      }
    }
    visit(static_cast<const Step&>(s));
    if (s.dies) return;
    x = s.x1;
  }
}

/// Materializes one trajectory; deterministic in (spec, x0, horizon, dt,
/// seed) regardless of scheduling.
PathSample sample_path(const ProcessSpec& spec, const Pt& x0, double horizon,
                       double dt, std::uint64_t seed);

/// Transition density p_t(x, y) with respect to the reference measure.
/// Free: Gaussian kernel.  Killed: e^{-ct} times Gaussian.  Absorbed:
/// image-charge series, truncated once a symmetric image pair contributes
/// less than 1e-12 of the running sum (Gaussian tail bound).
double transition_density(const ProcessSpec& spec, double t, const Pt& x,
                          const Pt& y);

/// d-dimensional Gaussian kernel (2 pi t)^{-d/2} exp(-|x-y|^2 / 2t).
double free_gauss_density(int dim, double t, const Pt& x, const Pt& y);

using Fn = std::function<double(const Pt&)>;

/// p_t g(x) by Gauss-Hermite quadrature (tensorized over dimensions).  The
/// absorbed case integrates the Gaussian kernel against the odd-periodic
/// reflection of g, one reflection period per quadrature panel (the fold is
/// discontinuous when g does not vanish at the endpoints).  The returned se
/// is the refinement delta between two quadrature orders.
Estimate semigroup_apply(const ProcessSpec& spec, double t, const Fn& g,
                         const Pt& x, int n_hermite = 32);

/// R_alpha g(x) = int_0^infty e^{-alpha t} p_t g(x) dt by time quadrature in
/// the variable s = sqrt(t) up to T* = min(40/alpha, 400), with the analytic
/// tail bound recorded in the bias note.
Estimate resolvent(const ProcessSpec& spec, double alpha, const Fn& g,
                   const Pt& x, int n_time = 64, int n_hermite = 32);

/// Closed-form resolvent kernel G_alpha(x, y) (density of R_alpha against
/// the reference measure).  Diverges at x = y for d >= 2; returns +inf there.
double resolvent_kernel(const ProcessSpec& spec, double alpha, const Pt& x,
                        const Pt& y);

/// Lifetime Laplace functional restricted to continuous escape:
/// E_x[e^{-alpha zeta}; X_{zeta-} leaves through the boundary].  Exactly 0
/// for free and interior-killed motion; closed cosh form on an interval.
Estimate survival_phi_alpha(const ProcessSpec& spec, double alpha,
                            const Pt& x);

/// Monte-Carlo estimate of the same functional from sampled paths (paths
/// still alive at the horizon contribute zero; the bias note records the
/// resulting cutoff bound).
Estimate survival_phi_alpha_mc(const ProcessSpec& spec, double alpha,
                               const Pt& x, double horizon, double dt,
                               std::int64_t n_paths, std::uint64_t master_seed,
                               int workers = 0);

}  // namespace revuzlab
