/// @file pcaf.cpp
/// @brief Step-kernel decompositions of measures into path-attached mass,
///        trace builders, Laplace-Stieltjes functionals, and the streaming
///        evaluator.

#include "revuzlab/pcaf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>

#include "revuzlab/quadrature.hpp"
#include "revuzlab/rng.hpp"

namespace revuzlab {
namespace {

using detail::MassBit;
using detail::StepKernel;
using u64 = std::uint64_t;

/// Hard ceiling on evaluated densities; reached only through the overflow
/// path (a sampled point sitting exactly on a singular center).
constexpr double kDensityCap = 1e12;

/// Expected local time at 0 of a Brownian bridge over [0, h] from u to v
/// (endpoints relative to the level): sqrt(h) * Sf((|u|+|v|)/sqrt(h)) /
/// pdf((v-u)/sqrt(h)).  For far endpoints the quotient is evaluated through
/// the Mills ratio so it underflows gracefully instead of dividing zeros.
double expected_bridge_local_time(double u, double v, double h) {
  const double sq = std::sqrt(h);
  const double a = (std::fabs(u) + std::fabs(v)) / sq;
  const double b = (v - u) / sq;
  if (a < 25.0) return sq * norm_sf(a) / norm_pdf(b);
  return sq * std::exp(0.5 * (b * b - a * a)) / a;
}

// ---------------------------------------------------------------------------
// Step kernels
// ---------------------------------------------------------------------------

/// Trapezoid mass of a density along each step, recursively bisected with
/// Brownian-bridge midpoints near refinement centers.  Midpoint draws come
/// from streams tagged (path, step + offset, binary tree node), so they are
/// reproducible, independent of traversal order, and shared across coupled
/// measures.
class DensityKernel final : public StepKernel {
 public:
  DensityKernel(const ProcessSpec& process, const SmoothMeasureSpec& mu,
                const SubstepRule& rule, u64 master_seed, u64 path_index)
      : dim_(process.dim),
        mu_(mu),
        rule_(rule),
        master_(master_seed),
        path_(path_index) {
    for (const auto& c : refinement_centers(mu_)) centers_.push_back(c.where);
  }

  void decompose(const Step& s, std::vector<MassBit>& bits) override {
    refined_last = false;
    const double tb = s.dies ? s.zeta : s.t1;
    const Pt& xb = s.dies ? s.death_point : s.x1;
    if (!(tb > s.t0)) return;
    refine(s.t0, s.x0, tb, xb, 0,
           rule_.step_tag_offset + static_cast<u64>(s.index), 1, bits);
  }

 private:
  bool near_center(const Pt& xa, const Pt& xb, double h) const {
    const double thr = rule_.detect_factor * std::sqrt(h);
    for (const auto& c : centers_)
      if (dist(xa, c, dim_) < thr || dist(xb, c, dim_) < thr) return true;
    return false;
  }

  double eval(const Pt& x) {
    double v = density_eval(mu_, x);
    if (!std::isfinite(v)) {
      // A trapezoid node landed exactly on a singular center (possible only
      // through a hand-picked start): nudge off and flag the trace.
      overflow = true;
      Pt y = x;
      y[0] += 1e-9 * (1.0 + std::fabs(x[0]));
      v = density_eval(mu_, y);
      if (!std::isfinite(v)) v = kDensityCap;
    }
    return std::min(v, kDensityCap);
  }

  void refine(double ta, const Pt& xa, double tb, const Pt& xb, int depth,
              u64 step_tag, u64 node, std::vector<MassBit>& bits) {
    const double h = tb - ta;
    if (depth < rule_.max_depth && !centers_.empty() &&
        near_center(xa, xb, h)) {
      refined_last = true;
      Rng rng = tagged_rng(master_, path_, step_tag, node);
      const double tm = 0.5 * (ta + tb);
      const double sd = 0.5 * std::sqrt(h);  // bridge midpoint spread
      Pt xm{};
      for (int k = 0; k < dim_; ++k)
        xm[k] = 0.5 * (xa[k] + xb[k]) + sd * rng.normal();
      refine(ta, xa, tm, xm, depth + 1, step_tag, 2 * node, bits);
      refine(tm, xm, tb, xb, depth + 1, step_tag, 2 * node + 1, bits);
      return;
    }
    MassBit b;
    b.s = 0.5 * (ta + tb);
    b.dA = 0.5 * (eval(xa) + eval(xb)) * h;
    for (int k = 0; k < dim_; ++k) b.x[k] = 0.5 * (xa[k] + xb[k]);
    bits.push_back(b);
  }

  int dim_;
  SmoothMeasureSpec mu_;
  SubstepRule rule_;
  u64 master_, path_;
  std::vector<Pt> centers_;
};

/// Local time on a coordinate level set: every step whose endpoint distance
/// to the level dips below the gate contributes its exact expected bridge
/// crossing mass.  The mass is charged to the step midpoint projected onto
/// the level set.
class LocalTimeKernel final : public StepKernel {
 public:
  LocalTimeKernel(int coord, double level, double eps)
      : coord_(coord), level_(level), eps_(eps) {}

  void decompose(const Step& s, std::vector<MassBit>& bits) override {
    refined_last = false;
    const double tb = s.dies ? s.zeta : s.t1;
    const Pt& xb = s.dies ? s.death_point : s.x1;
    const double h = tb - s.t0;
    if (!(h > 0.0)) return;
    const double u = s.x0[coord_] - level_;
    const double v = xb[coord_] - level_;
    const double gate = eps_ > 0.0 ? eps_ : 4.0 * std::sqrt(h);
    if (std::min(std::fabs(u), std::fabs(v)) > gate) return;
    const double dL = expected_bridge_local_time(u, v, h);
    if (!(dL > 0.0)) return;
    MassBit b;
    b.s = 0.5 * (s.t0 + tb);
    for (int k = 0; k < 3; ++k) b.x[k] = 0.5 * (s.x0[k] + xb[k]);
    b.x[coord_] = level_;
    b.dA = dL;
    bits.push_back(b);
  }

 private:
  int coord_;
  double level_, eps_;
};

class ScaledKernel final : public StepKernel {
 public:
  ScaledKernel(double c, std::unique_ptr<StepKernel> child)
      : c_(c), child_(std::move(child)) {}

  void decompose(const Step& s, std::vector<MassBit>& bits) override {
    const std::size_t n0 = bits.size();
    child_->decompose(s, bits);
    for (std::size_t i = n0; i < bits.size(); ++i) bits[i].dA *= c_;
    overflow = overflow || child_->overflow;
    refined_last = child_->refined_last;
  }

 private:
  double c_;
  std::unique_ptr<StepKernel> child_;
};

class SumKernel final : public StepKernel {
 public:
  explicit SumKernel(std::vector<std::unique_ptr<StepKernel>> kids)
      : kids_(std::move(kids)) {}

  void decompose(const Step& s, std::vector<MassBit>& bits) override {
    refined_last = false;
    for (auto& k : kids_) {
      k->decompose(s, bits);
      overflow = overflow || k->overflow;
      refined_last = refined_last || k->refined_last;
    }
  }

 private:
  std::vector<std::unique_ptr<StepKernel>> kids_;
};

/// Keeps only the mass bits whose attributed state lies in the set.
class RestrictedKernel final : public StepKernel {
 public:
  RestrictedKernel(std::shared_ptr<const SetSpec> set,
                   std::unique_ptr<StepKernel> child)
      : set_(std::move(set)), child_(std::move(child)) {}

  void decompose(const Step& s, std::vector<MassBit>& bits) override {
    const std::size_t n0 = bits.size();
    child_->decompose(s, bits);
    std::size_t w = n0;
    for (std::size_t i = n0; i < bits.size(); ++i)
      if (set_->contains(bits[i].x)) bits[w++] = bits[i];
    bits.resize(w);
    overflow = overflow || child_->overflow;
    refined_last = child_->refined_last;
  }

 private:
  std::shared_ptr<const SetSpec> set_;
  std::unique_ptr<StepKernel> child_;
};

// ---------------------------------------------------------------------------
// Shared trace machinery
// ---------------------------------------------------------------------------

/// Reconstructs the visitation steps of a materialized path, terminal step
/// included, in exactly the order the walk emitted them.
template <class F>
void for_each_step(const PathSample& p, F&& f) {
  const std::size_t n = p.times.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (is_cemetery(p.states[i])) break;
    Step s;
    s.index = static_cast<std::int64_t>(i);
    s.t0 = p.times[i];
    s.t1 = p.times[i + 1];
    s.x0 = p.states[i];
    if (is_cemetery(p.states[i + 1])) {
      s.dies = true;
      s.zeta = p.zeta;
      s.mode = p.kill_mode;
      s.death_point = p.death_point;
    } else {
      s.x1 = p.states[i + 1];
    }
    f(static_cast<const Step&>(s));
    if (s.dies) break;
  }
}

PcafTrace trace_from_kernel(const PathSample& path, StepKernel& kernel) {
  if (path.times.size() != path.states.size() || path.times.empty())
    throw std::invalid_argument("pcaf: malformed path sample");
  PcafTrace tr;
  tr.times = path.times;
  tr.values.assign(path.times.size(), 0.0);
  tr.refined.assign(path.times.size() - 1, 0);
  std::vector<MassBit> bits;
  double acc = 0.0;
  std::size_t last = 0;
  for_each_step(path, [&](const Step& s) {
    bits.clear();
    kernel.decompose(s, bits);
    double dA = 0.0;
    for (const auto& b : bits) dA += b.dA;
    const auto i = static_cast<std::size_t>(s.index);
    acc += dA;
    tr.values[i + 1] = acc;
    tr.refined[i] = kernel.refined_last ? 1 : 0;
    last = i + 1;
  });
  for (std::size_t i = last + 1; i < tr.values.size(); ++i) tr.values[i] = acc;
  tr.overflow = kernel.overflow;
  return tr;
}

/// Exact-match lookup of a time on a trace/path grid.
std::size_t grid_index(const std::vector<double>& times, double t,
                       const char* what) {
  const double tol = 1e-9 * (1.0 + std::fabs(t));
  const auto it = std::lower_bound(times.begin(), times.end(), t - tol);
  if (it == times.end() || std::fabs(*it - t) > tol)
    throw std::invalid_argument(std::string(what) +
                                ": time is not on the grid");
  return static_cast<std::size_t>(it - times.begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

std::unique_ptr<detail::StepKernel> make_step_kernel(
    const ProcessSpec& process, const SmoothMeasureSpec& mu,
    const SubstepRule& rule, u64 master_seed, u64 path_index) {
  if (mu.dim != process.dim)
    throw std::invalid_argument(
        "make_step_kernel: measure/process dimension mismatch");
  if (has_density(mu))
    return std::make_unique<DensityKernel>(process, mu, rule, master_seed,
                                           path_index);
  switch (mu.kind) {
    case SmoothMeasureSpec::Kind::Hyperplane:
      if (process.variant != Variant::FreeBM)
        throw std::invalid_argument(
            "make_step_kernel: hyperplane local time needs free Brownian "
            "paths");
      return std::make_unique<LocalTimeKernel>(mu.hyper_coord, 0.0,
                                               rule.local_eps);
    case SmoothMeasureSpec::Kind::Dirac:
      if (process.variant != Variant::FreeBM)
        throw std::invalid_argument(
            "make_step_kernel: point local time needs free Brownian paths");
      return std::make_unique<LocalTimeKernel>(0, mu.dirac_point,
                                               rule.local_eps);
    case SmoothMeasureSpec::Kind::Scaled:
      return std::make_unique<ScaledKernel>(
          mu.scale,
          make_step_kernel(process, mu.parts[0], rule, master_seed,
                           path_index));
    case SmoothMeasureSpec::Kind::Sum: {
      std::vector<std::unique_ptr<StepKernel>> kids;
      for (const auto& p : mu.parts)
        kids.push_back(
            make_step_kernel(process, p, rule, master_seed, path_index));
      return std::make_unique<SumKernel>(std::move(kids));
    }
    case SmoothMeasureSpec::Kind::Restricted:
      return std::make_unique<RestrictedKernel>(
          mu.set, make_step_kernel(process, mu.parts[0], rule, master_seed,
                                   path_index));
    default:
      throw std::invalid_argument(
          "make_step_kernel: unsupported measure kind");
  }
}

PcafTrace integrate_density_pcaf(const ProcessSpec& process,
                                 const PathSample& path,
                                 const SmoothMeasureSpec& mu,
                                 const SubstepRule& rule, u64 master_seed,
                                 u64 path_index) {
  if (!has_density(mu))
    throw std::invalid_argument(
        "integrate_density_pcaf: measure carries no density");
  auto kernel = make_step_kernel(process, mu, rule, master_seed, path_index);
  return trace_from_kernel(path, *kernel);
}

PcafTrace local_time_pcaf(const ProcessSpec& process, const PathSample& path,
                          const SmoothMeasureSpec& mu, double epsilon) {
  if (!(epsilon > 0.0))
    throw std::invalid_argument("local_time_pcaf: epsilon must be positive");
  if (has_density(mu))
    throw std::invalid_argument(
        "local_time_pcaf: measure has a density; use the density integral");
  SubstepRule rule;
  rule.local_eps = epsilon;
  auto kernel = make_step_kernel(process, mu, rule, 0, 0);
  return trace_from_kernel(path, *kernel);
}

PcafTrace restrict_pcaf(const PathSample& path, const PcafTrace& trace,
                        const SetSpec& B) {
  if (trace.times.size() != path.times.size() ||
      trace.times.size() != trace.values.size() || trace.times.empty())
    throw std::invalid_argument("restrict_pcaf: trace/path grid mismatch");
  PcafTrace out;
  out.times = trace.times;
  out.refined = trace.refined;
  out.overflow = trace.overflow;
  out.values.assign(trace.values.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < trace.times.size(); ++i) {
    const double d = trace.values[i + 1] - trace.values[i];
    const Pt& x = path.states[i];
    if (d != 0.0 && !is_cemetery(x) && B.contains(x)) acc += d;
    out.values[i + 1] = acc;
  }
  return out;
}

double laplace_functional(const PcafTrace& trace, double alpha, double t0,
                          double t1) {
  if (trace.times.size() != trace.values.size() || trace.times.empty())
    throw std::invalid_argument("laplace_functional: malformed trace");
  const std::size_t i0 = grid_index(trace.times, t0, "laplace_functional");
  const std::size_t i1 = std::isinf(t1)
                             ? trace.times.size() - 1
                             : grid_index(trace.times, t1,
                                          "laplace_functional");
  if (i1 < i0)
    throw std::invalid_argument("laplace_functional: window is reversed");
  double sum = 0.0;
  for (std::size_t i = i0; i < i1; ++i) {
    const double d = trace.values[i + 1] - trace.values[i];
    if (d == 0.0) continue;
    sum += std::exp(-alpha * 0.5 * (trace.times[i] + trace.times[i + 1])) * d;
  }
  return sum;
}

double weighted_laplace(const PcafTrace& trace, const PathSample& path,
                        const Fn& g, double alpha, double t0, double t1) {
  if (trace.times.size() != path.times.size())
    throw std::invalid_argument("weighted_laplace: trace/path grid mismatch");
  if (!g) throw std::invalid_argument("weighted_laplace: empty weight");
  const std::size_t i0 = grid_index(trace.times, t0, "weighted_laplace");
  const std::size_t i1 = std::isinf(t1)
                             ? trace.times.size() - 1
                             : grid_index(trace.times, t1, "weighted_laplace");
  if (i1 < i0)
    throw std::invalid_argument("weighted_laplace: window is reversed");
  double sum = 0.0;
  for (std::size_t i = i0; i < i1; ++i) {
    const double d = trace.values[i + 1] - trace.values[i];
    if (d == 0.0) continue;
    const Pt& a = path.states[i];
    const Pt& b = is_cemetery(path.states[i + 1]) ? path.death_point
                                                  : path.states[i + 1];
    Pt xm{};
    for (int k = 0; k < 3; ++k) xm[k] = 0.5 * (a[k] + b[k]);
    sum += std::exp(-alpha * 0.5 * (trace.times[i] + trace.times[i + 1])) *
           g(xm) * d;
  }
  return sum;
}

double total_variation_diff(const PcafTrace& a, const PcafTrace& b,
                            double T) {
  if (a.times.size() != b.times.size())
    throw std::invalid_argument("total_variation_diff: grid mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < a.times.size(); ++i) {
    if (std::fabs(a.times[i + 1] - b.times[i + 1]) >
        1e-9 * (1.0 + std::fabs(a.times[i + 1])))
      throw std::invalid_argument("total_variation_diff: grid mismatch");
    if (a.times[i + 1] > T + 1e-9 * (1.0 + T)) break;
    sum += std::fabs((a.values[i + 1] - a.values[i]) -
                     (b.values[i + 1] - b.values[i]));
  }
  return sum;
}

double additivity_check(const ProcessSpec& process, const PathSample& path,
                        const SmoothMeasureSpec& mu, double s, double t,
                        const SubstepRule& rule, u64 master_seed,
                        u64 path_index) {
  if (!(s >= 0.0) || !(t >= 0.0))
    throw std::invalid_argument("additivity_check: negative times");
  const std::size_t is = grid_index(path.times, s, "additivity_check");
  const std::size_t it = grid_index(path.times, s + t, "additivity_check");

  auto kernel = make_step_kernel(process, mu, rule, master_seed, path_index);
  const PcafTrace full = trace_from_kernel(path, *kernel);

  // Shifted sub-path: same states with the clock restarted at s.  The
  // shifted kernel re-tags its refinement streams by the step offset, so
  // both evaluations draw identical bridge midpoints.
  PathSample sub;
  sub.times.assign(path.times.begin() + static_cast<std::ptrdiff_t>(is),
                   path.times.end());
  for (auto& tt : sub.times) tt -= s;
  sub.states.assign(path.states.begin() + static_cast<std::ptrdiff_t>(is),
                    path.states.end());
  sub.zeta = path.zeta - s;
  sub.kill_mode = path.kill_mode;
  sub.death_point = path.death_point;
  sub.alive_count = path.alive_count > is ? path.alive_count - is : 0;

  SubstepRule shifted_rule = rule;
  shifted_rule.step_tag_offset = rule.step_tag_offset + is;
  auto shifted_kernel =
      make_step_kernel(process, mu, shifted_rule, master_seed, path_index);
  const PcafTrace shifted = trace_from_kernel(sub, *shifted_kernel);

  const std::size_t jt = grid_index(shifted.times, t, "additivity_check");
  return std::fabs(full.values[it] - full.values[is] - shifted.values[jt]);
}

void write_trace_csv(std::ostream& os, const PcafTrace& trace) {
  os << "t,value\n";
  char line[80];
  for (std::size_t i = 0; i < trace.times.size(); ++i) {
    std::snprintf(line, sizeof line, "%.17g,%.17g\n", trace.times[i],
                  trace.values[i]);
    os << line;
  }
}

// ---------------------------------------------------------------------------
// Streaming evaluation
// ---------------------------------------------------------------------------

PcafStream::PcafStream(const ProcessSpec& process,
                       const SmoothMeasureSpec& mu, const SubstepRule& rule,
                       PcafStreamConfig cfg, u64 master_seed, u64 path_index)
    : kernel_(make_step_kernel(process, mu, rule, master_seed, path_index)),
      cfg_(std::move(cfg)) {
  for (std::size_t j = 1; j < cfg_.grid.size(); ++j)
    if (!(cfg_.grid[j] > cfg_.grid[j - 1]))
      throw std::invalid_argument("PcafStream: grid must be ascending");
  at_grid_.assign(cfg_.grid.size(), 0.0);
  laplace_at_grid_.assign(cfg_.grid.size(), 0.0);
  while (next_grid_ < cfg_.grid.size() && cfg_.grid[next_grid_] <= 0.0)
    ++next_grid_;
}

PcafStream::~PcafStream() = default;
PcafStream::PcafStream(PcafStream&&) noexcept = default;
PcafStream& PcafStream::operator=(PcafStream&&) noexcept = default;

bool PcafStream::overflow() const { return kernel_->overflow; }

void PcafStream::on_step(const Step& s) {
  scratch_.clear();
  kernel_->decompose(s, scratch_);
  double dA = 0.0;
  for (const auto& b : scratch_)
    if (!cfg_.restrict_to || cfg_.restrict_to->contains(b.x)) dA += b.dA;

  // Route increments through the running total so every functional sees the
  // same rounded increment a materialized trace would.
  const double before = total_;
  total_ += dA;
  const double d = total_ - before;
  if (d != 0.0) {
    const double mid = 0.5 * (s.t0 + s.t1);
    const double w = std::exp(-cfg_.alpha * mid);
    laplace_ += w * d;
    if (cfg_.time_weight_t >= 0.0 &&
        s.t1 <= cfg_.time_weight_t + 1e-9 * (1.0 + cfg_.time_weight_t))
      time_weighted_ += (cfg_.time_weight_t - mid) * d;
    if (cfg_.weight_g) {
      const Pt& xb = s.dies ? s.death_point : s.x1;
      Pt xm{};
      for (int k = 0; k < 3; ++k) xm[k] = 0.5 * (s.x0[k] + xb[k]);
      weighted_ += w * cfg_.weight_g(xm) * d;
    }
  }

  while (next_grid_ < cfg_.grid.size() &&
         cfg_.grid[next_grid_] <= s.t1 + 1e-9 * (1.0 + s.t1)) {
    at_grid_[next_grid_] = total_;
    laplace_at_grid_[next_grid_] = laplace_;
    ++next_grid_;
  }
  if (s.dies) {
    // The walk stops here; freeze every remaining snapshot at the final
    // accumulated value.
    while (next_grid_ < cfg_.grid.size()) {
      at_grid_[next_grid_] = total_;
      laplace_at_grid_[next_grid_] = laplace_;
      ++next_grid_;
    }
  }
}

}  // namespace revuzlab
