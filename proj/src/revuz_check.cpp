#include "revuzlab/revuz_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "revuzlab/parallel.hpp"
#include "revuzlab/quadrature.hpp"
#include "revuzlab/rng.hpp"

namespace revuzlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::string fmt(const char* f, ...) {
  char buf[320];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

nlohmann::json box_json(const Box& b) {
  nlohmann::json j;
  j["dim"] = b.dim;
  for (int k = 0; k < b.dim; ++k) {
    j["lo"].push_back(b.lo[k]);
    j["hi"].push_back(b.hi[k]);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Support boxes and derived working boxes
// ---------------------------------------------------------------------------

std::optional<Box> family_box(int dim, const DensityFamily& f) {
  if (f.kind == DensityFamily::Kind::GaussBump)
    return Box::cube(dim, 8.0 * f.width, f.center);
  return std::nullopt;
}

/// Intrinsic bounded support of the measure, when one is declared.
std::optional<Box> measure_box(const SmoothMeasureSpec& mu) {
  switch (mu.kind) {
    case SmoothMeasureSpec::Kind::Density:
      return family_box(mu.dim, mu.family);
    case SmoothMeasureSpec::Kind::Hyperplane:
      return std::nullopt;
    case SmoothMeasureSpec::Kind::Dirac:
      return Box::interval(mu.dirac_point, mu.dirac_point);
    case SmoothMeasureSpec::Kind::Scaled:
      return measure_box(mu.parts[0]);
    case SmoothMeasureSpec::Kind::Sum: {
      std::optional<Box> acc;
      for (const auto& p : mu.parts) {
        auto b = measure_box(p);
        if (!b) return std::nullopt;
        acc = acc ? Box::hull(*acc, *b) : *b;
      }
      return acc;
    }
    case SmoothMeasureSpec::Kind::Restricted:
      return mu.set->box;
  }
  return std::nullopt;
}

/// Interval state space of an absorbed process as a Box.
Box interval_box(const ProcessSpec& spec) {
  return Box::interval(spec.a, spec.b);
}

/// Quadrature box for the mu side of an identity: the intrinsic support if
/// declared, else the support of f, else cfg.domain_box, else (absorbed
/// motion only) the state interval.  Always intersected with the state
/// interval for absorbed motion.
Box resolve_mu_box(const ProcessSpec& spec, const SmoothMeasureSpec& mu,
                   const DensityFamily& f, const CheckConfig& cfg,
                   const char* who) {
  std::optional<Box> b = measure_box(mu);
  if (!b) b = family_box(spec.dim, f);
  if (!b) b = cfg.domain_box;
  if (!b && spec.variant == Variant::AbsorbedBM) b = interval_box(spec);
  if (!b)
    throw std::invalid_argument(
        std::string(who) +
        ": neither mu nor f has bounded support; set cfg.domain_box");
  if (spec.variant == Variant::AbsorbedBM) {
    Box clipped = Box::intersect(*b, interval_box(spec));
    for (int k = 0; k < clipped.dim; ++k)
      if (clipped.hi[k] < clipped.lo[k])
        throw std::invalid_argument(
            std::string(who) + ": working box lies outside the state space");
    return clipped;
  }
  return *b;
}

// ---------------------------------------------------------------------------
// Right-side cell sums
// ---------------------------------------------------------------------------

Fn family_fn(const DensityFamily& f, int dim) {
  return [f, dim](const Pt& x) { return f.eval(dim, x); };
}

struct CellSet {
  std::vector<WeightedNode> fine, coarse;  ///< f-weighted cell masses
  int per_fine = 0, per_coarse = 0;
  double abs_fine = 0.0;  ///< sum |w f| at the fine level (for tail bounds)
};

CellSet weighted_cells(const SmoothMeasureSpec& mu, const DensityFamily& f,
                       const Box& box, int per_axis) {
  CellSet cs;
  cs.per_fine = per_axis > 0 ? per_axis : 24;
  cs.per_coarse = std::max(4, cs.per_fine / 2);
  for (int level = 0; level < 2; ++level) {
    const int n = level == 0 ? cs.per_fine : cs.per_coarse;
    auto raw = measure_cells(mu, box, n);
    auto& out = level == 0 ? cs.fine : cs.coarse;
    out.reserve(raw.size());
    for (auto& c : raw) {
      const double fv = f.eval(mu.dim, c.x);
      if (fv == 0.0) continue;
      out.push_back({c.x, c.w * fv});
      if (level == 0) cs.abs_fine += std::abs(c.w * fv);
    }
  }
  return cs;
}

/// sum over cells of w * g(x) at both refinement levels; se = the delta.
Estimate cell_sum(const CellSet& cs, const Fn& g, const char* what) {
  double s1 = 0.0, s0 = 0.0;
  for (const auto& c : cs.fine) s1 += c.w * g(c.x);
  for (const auto& c : cs.coarse) s0 += c.w * g(c.x);
  Estimate e;
  e.value = s1;
  e.se = std::abs(s1 - s0);
  e.n = static_cast<std::int64_t>(cs.fine.size());
  e.bias_note = fmt("%s; se = cell refinement delta (%d vs %d per axis)", what,
                    cs.per_fine, cs.per_coarse);
  return e;
}

/// Rough sup over probe points of sum_i |w_i| G_alpha(x, y_i); used only in
/// tail budgets (never in the estimates themselves).
double potential_sup(const ProcessSpec& spec, double alpha, const CellSet& cs,
                     const Box& probe) {
  const int d = spec.dim;
  double edge = 0.0;
  for (int k = 0; k < d; ++k)
    edge = std::max(edge, probe.edge(k) / cs.per_fine);
  double best = 0.0;
  const int n = 7;
  std::array<int, 3> reps{1, 1, 1};
  for (int k = 0; k < d; ++k) reps[k] = n;
  for (int i0 = 0; i0 < reps[0]; ++i0)
    for (int i1 = 0; i1 < reps[1]; ++i1)
      for (int i2 = 0; i2 < reps[2]; ++i2) {
        Pt x{};
        const int idx[3] = {i0, i1, i2};
        for (int k = 0; k < d; ++k)
          x[k] = probe.lo[k] + (idx[k] + 0.5) * probe.edge(k) / n;
        if (!spec.in_state_space(x)) continue;
        double s = 0.0;
        for (const auto& c : cs.fine) {
          if (spec.variant == Variant::AbsorbedBM) {
            // d = 1: the kernel is finite everywhere on the interval.
            s += std::abs(c.w) * resolvent_kernel(spec, alpha, x, c.x);
            continue;
          }
          double r = dist(x, c.x, d);
          if (r < 0.35 * edge) r = 0.35 * edge;
          // Radial, translation-invariant kernel: only the distance matters.
          Pt y = x;
          y[0] += r;
          s += std::abs(c.w) * resolvent_kernel(spec, alpha, x, y);
        }
        best = std::max(best, s);
      }
  return best;
}

// ---------------------------------------------------------------------------
// Tail weights for box truncation budgets
// ---------------------------------------------------------------------------

/// Bound for int over {|x - y| >= d} of G_alpha(x, y) dx (free / killed
/// motion: radial, translation invariant), by radial quadrature.
double radial_tail(const ProcessSpec& spec, double alpha, double d) {
  const int dim = spec.dim;
  const double gamma = std::sqrt(2.0 * (alpha + spec.kill_c));
  const double len = 60.0 / gamma;
  const int n = 512;
  const double h = len / n;
  double acc = 0.0;
  Pt zero{};
  for (int i = 0; i < n; ++i) {
    const double r = d + (i + 0.5) * h;
    Pt y{};
    y[0] = r;
    acc += resolvent_kernel(spec, alpha, zero, y) * unit_sphere_area(dim) *
           std::pow(r, dim - 1) * h;
  }
  return acc;
}

/// int_0^t p_s(r) ds for free motion, closed per dimension.  +inf at r = 0
/// for dim >= 2.
double windowed_kernel_free(int dim, double t, double r) {
  if (t <= 0.0) return 0.0;
  const double u = r / std::sqrt(2.0 * t);
  switch (dim) {
    case 1:
      return std::sqrt(2.0 * t / M_PI) * std::exp(-u * u) - r * std::erfc(u);
    case 2: {
      const double v = u * u;
      if (v <= 0.0) return kInf;
      return -std::expint(-v) / (2.0 * M_PI);
    }
    default:
      if (r <= 0.0) return kInf;
      return std::erfc(u) / (2.0 * M_PI * r);
  }
}

/// Bound for int over {|x - y| >= d} of (int_0^t p_s(x, y) ds) dx; the free
/// kernel dominates the killed one.
double windowed_radial_tail(int dim, double t, double d) {
  const double len = 14.0 * std::sqrt(t) + d;
  const int n = 512;
  const double h = (len - d) / n;
  if (h <= 0.0) return 0.0;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = d + (i + 0.5) * h;
    acc += windowed_kernel_free(dim, t, r) * unit_sphere_area(dim) *
           std::pow(r, dim - 1) * h;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Initial laws
// ---------------------------------------------------------------------------

struct SampleLaw {
  Box box;
  int dim = 1;
  bool uniform = true;       ///< constant density: no rejection needed
  DensityFamily h{};         ///< density when not uniform
  double envelope = 1.0;     ///< rejection envelope (lattice max x 1.1)
  double mass = 0.0;         ///< law total mass over the box
  double mass_se = 0.0;      ///< quadrature error of the mass
};

/// The sampled law is h.m restricted to `box`: a declared box truncates h by
/// definition, and the right side of every identity uses the same
/// truncation, so no truncation bias arises from the h side.
SampleLaw make_law(const ProcessSpec& spec, const DensityFamily& h,
                   const Box& box) {
  SampleLaw law;
  law.box = box;
  law.dim = spec.dim;
  if (h.kind == DensityFamily::Kind::Constant) {
    law.uniform = true;
    law.mass = h.c * box.volume();
    return law;
  }
  law.uniform = false;
  law.h = h;
  const int n = 16;
  double hmax = 0.0;
  std::array<int, 3> reps{1, 1, 1};
  for (int k = 0; k < spec.dim; ++k) reps[k] = n + 1;
  for (int i0 = 0; i0 < reps[0]; ++i0)
    for (int i1 = 0; i1 < reps[1]; ++i1)
      for (int i2 = 0; i2 < reps[2]; ++i2) {
        Pt x{};
        const int idx[3] = {i0, i1, i2};
        for (int k = 0; k < spec.dim; ++k)
          x[k] = box.lo[k] + idx[k] * box.edge(k) / n;
        hmax = std::max(hmax, h.eval(spec.dim, x));
      }
  if (!(hmax > 0.0) || !std::isfinite(hmax))
    throw std::invalid_argument(
        "initial law: h must be bounded with positive mass on its box");
  law.envelope = 1.1 * hmax;
  Estimate m = measure_of_set(measure_density(spec.dim, h), set_box(box));
  law.mass = m.value;
  law.mass_se = m.se;
  return law;
}

Pt draw_start(const SampleLaw& law, const ProcessSpec& spec, Rng& rng,
              std::int64_t& breaches) {
  for (int attempt = 0; attempt < 200000; ++attempt) {
    Pt x{};
    for (int k = 0; k < law.dim; ++k)
      x[k] = law.box.lo[k] + rng.uniform() * law.box.edge(k);
    if (!spec.in_state_space(x)) continue;
    if (law.uniform) return x;
    const double hv = law.h.eval(law.dim, x);
    if (hv > law.envelope) {
      ++breaches;
      return x;
    }
    if (rng.uniform() * law.envelope <= hv) return x;
  }
  throw std::runtime_error(
      "initial law: rejection sampling failed to accept (law nearly "
      "degenerate on its box)");
}

/// Per-part seed separation: each Monte-Carlo part of a check walks under
/// its own derived master seed so parts stay independent.
std::uint64_t part_seed(std::uint64_t seed, std::uint64_t salt) {
  return seed ^ (salt * kGolden);
}

// ---------------------------------------------------------------------------
// Budgets, report assembly
// ---------------------------------------------------------------------------

struct Budget {
  double sum = 0.0;
  std::string items;

  void add(double v, const std::string& what) {
    if (!(v > 0.0)) return;
    sum += v;
    if (!items.empty()) items += "; ";
    items += fmt("%s = %.3g", what.c_str(), v);
  }
};

VerificationReport finish(std::string identity, const Estimate& lhs,
                          const Estimate& rhs, const CheckConfig& cfg,
                          const Budget& bud, nlohmann::json config,
                          nlohmann::json detail = {}) {
  VerificationReport r;
  r.identity = std::move(identity);
  r.lhs = lhs;
  r.rhs = rhs;
  r.z = z_score(lhs, rhs);
  r.z_tolerance = cfg.z_tolerance;
  r.bias_budget = 2.0 * bud.sum;
  const double d = std::abs(lhs.value - rhs.value);
  const double s = std::hypot(lhs.se, rhs.se);
  r.pass = std::isfinite(lhs.value) && std::isfinite(rhs.value) &&
           d <= cfg.z_tolerance * s + r.bias_budget;
  r.note = bud.items.empty() ? "no declared bias terms"
                             : "declared biases: " + bud.items;
  r.config = std::move(config);
  r.detail = std::move(detail);
  return r;
}

VerificationReport degenerate_report(std::string identity,
                                     const CheckConfig& cfg,
                                     nlohmann::json config, std::string why) {
  VerificationReport r;
  r.identity = std::move(identity);
  r.lhs = Estimate::exact(0.0);
  r.rhs = Estimate::exact(0.0);
  r.z = 0.0;
  r.z_tolerance = cfg.z_tolerance;
  r.pass = true;
  r.degenerate = true;
  r.note = std::move(why);
  r.config = std::move(config);
  return r;
}

nlohmann::json snapshot(const ProcessSpec& process,
                        const SmoothMeasureSpec& mu, const DensityFamily* f,
                        const DensityFamily* h, const SmoothMeasureSpec* nu,
                        const char* rate_key, double rate,
                        const CheckConfig& cfg) {
  nlohmann::json j;
  j["process"] = process.to_json();
  j["mu"] = mu.to_json();
  if (f) j["f"] = f->to_json();
  if (h) j["h"] = h->to_json();
  if (nu) j["nu"] = nu->to_json();
  j[rate_key] = rate;
  j["config"] = cfg.to_json();
  return j;
}

// ---------------------------------------------------------------------------
// Monte-Carlo drivers
// ---------------------------------------------------------------------------

struct StreamRequest {
  const SmoothMeasureSpec* measure = nullptr;
  double alpha = 1.0;
  const Fn* weight = nullptr;    ///< taps int e^{-alpha s} weight dA
  double time_weight = -1.0;     ///< taps int_0^T (T - s) dA
};

/// One walk from x0 feeding every requested stream; returns the requested
/// accessor values in order (weight set -> weighted(), time_weight >= 0 ->
/// time_weighted(), else laplace()).
std::vector<double> run_streams(const ProcessSpec& spec, const Pt& x0,
                                double horizon, double dt,
                                const SubstepRule& rule, std::uint64_t seed,
                                std::int64_t path,
                                const std::vector<StreamRequest>& reqs) {
  std::vector<PcafStream> streams;
  streams.reserve(reqs.size());
  for (const auto& rq : reqs) {
    PcafStreamConfig sc;
    sc.alpha = rq.alpha;
    if (rq.weight) sc.weight_g = *rq.weight;
    sc.time_weight_t = rq.time_weight;
    streams.emplace_back(spec, *rq.measure, rule, std::move(sc), seed,
                         static_cast<std::uint64_t>(path));
  }
  Rng rng = path_rng(seed, static_cast<std::uint64_t>(path));
  walk_path(spec, x0, horizon, dt, rng, [&](const Step& s) {
    for (auto& st : streams) st.on_step(s);
  });
  std::vector<double> out;
  out.reserve(reqs.size());
  for (std::size_t k = 0; k < reqs.size(); ++k) {
    if (reqs[k].weight)
      out.push_back(streams[k].weighted());
    else if (reqs[k].time_weight >= 0.0)
      out.push_back(streams[k].time_weighted());
    else
      out.push_back(streams[k].laplace());
  }
  return out;
}

/// mass x mean of a single-stream functional under the law; the law mass
/// uncertainty goes to the budget, not the stderr.
Estimate law_mc(const ProcessSpec& spec, const SampleLaw& law,
                const SmoothMeasureSpec& measure, double stream_alpha,
                const Fn* weight, double time_weight, double horizon,
                const CheckConfig& cfg, std::uint64_t salt, Budget& bud,
                std::int64_t* breaches_out = nullptr) {
  if (law.mass == 0.0) return Estimate::exact(0.0, "zero-mass initial law");
  const std::uint64_t ps = part_seed(cfg.seed, salt);
  std::vector<StreamRequest> reqs{{&measure, stream_alpha, weight,
                                   time_weight}};
  std::int64_t breaches = 0;
  auto slots = chunked_map<std::pair<Welford, std::int64_t>>(
      cfg.n_paths, 256, cfg.workers,
      [&](std::int64_t, std::int64_t lo, std::int64_t hi,
          std::pair<Welford, std::int64_t>& acc) {
        for (std::int64_t i = lo; i < hi; ++i) {
          Rng rej = tagged_rng(ps, 0x5A17, static_cast<std::uint64_t>(i), 1);
          Pt x0 = draw_start(law, spec, rej, acc.second);
          acc.first.add(run_streams(spec, x0, horizon, cfg.dt, cfg.rule, ps, i,
                                    reqs)[0]);
        }
      });
  Welford agg;
  for (const auto& s : slots) {
    agg.merge(s.first);
    breaches += s.second;
  }
  if (breaches_out) *breaches_out = breaches;
  if (breaches > cfg.n_paths / 1000 + 2)
    throw std::runtime_error(
        "initial law: rejection envelope materially violated; refine the "
        "envelope lattice");
  Estimate m = agg.estimate();
  bud.add(law.mass_se * std::abs(m.value), "law mass quadrature");
  Estimate e = m;
  e.value = law.mass * m.value;
  e.se = law.mass * m.se;
  e.bias_note = fmt("law mass %.6g x path mean", law.mass);
  return e;
}

// ---------------------------------------------------------------------------
// Boundary-flux grids
// ---------------------------------------------------------------------------

double grid_spacing_of(const ProcessSpec& spec, const CheckConfig& cfg) {
  return cfg.grid_spacing > 0.0 ? cfg.grid_spacing
                                : spec.interval_length() / 64.0;
}

std::int64_t grid_paths_of(const CheckConfig& cfg) {
  return cfg.grid_paths > 0 ? cfg.grid_paths
                            : std::max<std::int64_t>(cfg.n_paths / 10, 500);
}

constexpr int kGridGroups = 8;  ///< jackknife groups for grid-noise stderr

/// Extraction of the averaged grid plus a leave-one-group-out jackknife:
/// the spread of the J leave-one-out extractions estimates the statistical
/// noise the boundary functional inherits from the Monte-Carlo grids, which
/// its own reported se (a model-residual proxy) does not cover.
Estimate jackknife_nu0(const ProcessSpec& spec,
                       const std::vector<GridFunction>& groups, double alpha,
                       const Nu0Config& nc, std::int64_t n_paths_total,
                       Budget& bud) {
  const int J = static_cast<int>(groups.size());
  GridFunction full = groups.front();
  const std::size_t nn = full.values.size();
  for (std::size_t v = 0; v < nn; ++v) {
    double s = 0.0;
    for (const auto& g : groups) s += g.values[v];
    full.values[v] = s / J;
  }
  Estimate nf = nu0_functional(spec, full, alpha, nc);
  std::vector<double> theta(static_cast<std::size_t>(J));
  GridFunction loo = full;
  for (int k = 0; k < J; ++k) {
    for (std::size_t v = 0; v < nn; ++v)
      loo.values[v] =
          (full.values[v] * J - groups[static_cast<std::size_t>(k)].values[v]) /
          (J - 1);
    theta[static_cast<std::size_t>(k)] =
        nu0_functional(spec, loo, alpha, nc).value;
  }
  double mean = 0.0;
  for (double v : theta) mean += v;
  mean /= J;
  double ss = 0.0;
  for (double v : theta) ss += (v - mean) * (v - mean);
  const double se_jack = std::sqrt((J - 1.0) / J * ss);
  bud.add(nf.se, "boundary extrapolation model residual");
  Estimate out;
  out.value = nf.value;
  out.se = se_jack;
  out.n = n_paths_total;
  out.bias_note =
      fmt("%s; se = %d-group jackknife", nf.bias_note.c_str(), J);
  return out;
}

/// Laplace-potential grids of the weighted measure in independent groups,
/// combined by jackknife_nu0.
Estimate nu0_of_potential_grid(const ProcessSpec& spec,
                               const SmoothMeasureSpec& wmu, double alpha,
                               const CheckConfig& cfg, std::uint64_t salt,
                               Budget& bud) {
  const Box box = interval_box(spec);
  const double spacing = grid_spacing_of(spec, cfg);
  const std::int64_t per_group =
      std::max<std::int64_t>(grid_paths_of(cfg) / kGridGroups, 32);
  PotentialConfig pc;
  pc.dt = cfg.dt;
  pc.workers = cfg.workers;
  pc.rule = cfg.rule;
  std::vector<GridFunction> groups;
  groups.reserve(kGridGroups);
  for (int k = 0; k < kGridGroups; ++k) {
    pc.seed = part_seed(cfg.seed, salt + static_cast<std::uint64_t>(k));
    groups.push_back(potential_grid(spec, wmu, alpha, box, spacing,
                                    cfg.horizon, per_group, pc));
  }
  return jackknife_nu0(spec, groups, alpha, cfg.nu0,
                       per_group * kGridGroups, bud);
}

/// Monte-Carlo grid of a windowed per-path functional (common increments
/// across nodes, paths split round-robin into jackknife groups), then the
/// boundary functional via jackknife_nu0.
template <class PerNodePath>
Estimate nu0_of_mc_grid(const ProcessSpec& spec, double nu_alpha,
                        const CheckConfig& cfg, std::uint64_t salt,
                        Budget& bud, PerNodePath&& value_at) {
  const Box box = interval_box(spec);
  GridFunction layout = GridFunction::on_box(box, grid_spacing_of(spec, cfg));
  const std::int64_t nn = layout.size();
  const std::int64_t paths = std::max<std::int64_t>(grid_paths_of(cfg),
                                                    16 * kGridGroups);
  const std::uint64_t ps = part_seed(cfg.seed, salt);
  struct Acc {
    std::vector<double> sum;          // kGridGroups x nn, group-major
    std::vector<std::int64_t> count;  // paths per group
  };
  auto slots = chunked_map<Acc>(
      paths, 32, cfg.workers,
      [&](std::int64_t, std::int64_t lo, std::int64_t hi, Acc& a) {
        a.sum.assign(static_cast<std::size_t>(kGridGroups * nn), 0.0);
        a.count.assign(kGridGroups, 0);
        for (std::int64_t i = lo; i < hi; ++i) {
          const auto grp = static_cast<std::size_t>(i % kGridGroups);
          for (std::int64_t j = 0; j < nn; ++j) {
            const Pt x = layout.node(j);
            if (!spec.in_state_space(x)) continue;
            a.sum[grp * static_cast<std::size_t>(nn) +
                  static_cast<std::size_t>(j)] += value_at(x, ps, i);
          }
          a.count[grp] += 1;
        }
      });
  Acc total;
  total.sum.assign(static_cast<std::size_t>(kGridGroups * nn), 0.0);
  total.count.assign(kGridGroups, 0);
  for (const auto& s : slots) {
    for (std::size_t v = 0; v < total.sum.size(); ++v) total.sum[v] += s.sum[v];
    for (int k = 0; k < kGridGroups; ++k) total.count[k] += s.count[k];
  }
  std::vector<GridFunction> groups(kGridGroups, layout);
  for (int k = 0; k < kGridGroups; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    for (std::int64_t j = 0; j < nn; ++j)
      groups[ku].values[static_cast<std::size_t>(j)] =
          total.count[ku] > 0
              ? total.sum[ku * static_cast<std::size_t>(nn) +
                          static_cast<std::size_t>(j)] /
                    static_cast<double>(total.count[ku])
              : 0.0;
  }
  return jackknife_nu0(spec, groups, nu_alpha, cfg.nu0, paths, bud);
}

/// The measure both sides of an identity actually use: measures without an
/// intrinsic bounded support are restricted to the working box, so the
/// path-side additive functional and the cell-side quadrature truncate
/// identically (the restriction is itself a smooth measure, so the identity
/// holds for it exactly).
SmoothMeasureSpec clipped_measure(const SmoothMeasureSpec& mu,
                                  const Box& box) {
  if (measure_box(mu)) return mu;
  return measure_restricted(mu, set_box(box));
}

/// f-weighted measure for streams and grids: f folded into the density (or
/// a plain scaling when f is constant, which works for every measure kind).
SmoothMeasureSpec weighted_measure(const SmoothMeasureSpec& mu,
                                   const DensityFamily& f, const char* who) {
  if (f.kind == DensityFamily::Kind::Constant)
    return measure_scaled(f.c, mu);
  if (!has_density(mu))
    throw std::invalid_argument(
        std::string(who) +
        ": this part needs f constant or mu given by a density");
  DensityFamily prod;
  prod.kind = DensityFamily::Kind::Custom;
  const int dim = mu.dim;
  SmoothMeasureSpec base = mu;
  prod.custom = [base, f, dim](const Pt& x) {
    return f.eval(dim, x) * density_eval(base, x);
  };
  prod.custom_tag = "f-weighted " + mu.label();
  return measure_density(dim, prod);
}

bool zero_family(const DensityFamily& f) {
  return f.kind == DensityFamily::Kind::Constant && f.c == 0.0;
}

void validate_common(const ProcessSpec& process, const SmoothMeasureSpec& mu,
                     const char* who) {
  process.validate();
  if (mu.dim != process.dim)
    throw std::invalid_argument(std::string(who) + ": dimension mismatch");
}

double require_positive(double v, const char* who, const char* what) {
  if (!(v > 0.0))
    throw std::invalid_argument(fmt("%s: %s must be > 0", who, what));
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// CheckConfig / VerificationReport plumbing
// ---------------------------------------------------------------------------

nlohmann::json CheckConfig::to_json() const {
  nlohmann::json j;
  j["n_paths"] = n_paths;
  j["dt"] = dt;
  j["horizon"] = horizon;
  j["seed"] = seed;
  j["workers"] = workers;
  j["quad_per_axis"] = quad_per_axis;
  j["n_time"] = n_time;
  j["n_hermite"] = n_hermite;
  j["grid_spacing"] = grid_spacing;
  j["grid_paths"] = grid_paths;
  j["z_tolerance"] = z_tolerance;
  if (domain_box) j["domain_box"] = box_json(*domain_box);
  return j;
}

nlohmann::json VerificationReport::to_json() const {
  nlohmann::json j;
  j["identity"] = identity;
  j["lhs"] = revuzlab::to_json(lhs);
  j["rhs"] = revuzlab::to_json(rhs);
  j["z"] = z;
  j["z_tolerance"] = z_tolerance;
  j["bias_budget"] = bias_budget;
  j["pass"] = pass;
  j["degenerate"] = degenerate;
  if (!note.empty()) j["note"] = note;
  if (!config.is_null()) j["config"] = config;
  if (!detail.is_null()) j["detail"] = detail;
  return j;
}

std::string VerificationReport::summary() const {
  return fmt("%-26s lhs %12.6g +- %-9.3g rhs %12.6g +- %-9.3g z %7.3f  %s",
             identity.c_str(), lhs.value, lhs.se, rhs.value, rhs.se, z,
             degenerate ? "pass (degenerate)" : (pass ? "pass" : "FAIL"));
}

// ---------------------------------------------------------------------------
// Resolvent identity: E_{h.m}[int e^{-as} f dA] = int f R_a h dmu
// ---------------------------------------------------------------------------

VerificationReport check_revuz_alpha(const ProcessSpec& process,
                                     const SmoothMeasureSpec& mu,
                                     const DensityFamily& f,
                                     const DensityFamily& h, double alpha,
                                     const CheckConfig& cfg) {
  const char* who = "check_revuz_alpha";
  validate_common(process, mu, who);
  require_positive(alpha, who, "alpha");
  nlohmann::json config =
      snapshot(process, mu, &f, &h, nullptr, "alpha", alpha, cfg);
  Budget bud;
  if (zero_family(f) || zero_family(h)) {
    auto r = finish("resolvent_pairing_alpha", Estimate::exact(0.0),
                    Estimate::exact(0.0), cfg, bud, std::move(config));
    r.note = "trivially zero: f or h vanishes identically";
    return r;
  }

  const Box mu_box = resolve_mu_box(process, mu, f, cfg, who);
  std::optional<Box> h_box = family_box(process.dim, h);
  if (!h_box) h_box = cfg.domain_box;
  if (!h_box && process.variant == Variant::AbsorbedBM)
    h_box = interval_box(process);
  if (!h_box)
    throw std::invalid_argument(
        std::string(who) + ": h has no bounded support; set cfg.domain_box");
  if (process.variant == Variant::AbsorbedBM)
    *h_box = Box::intersect(*h_box, interval_box(process));

  SampleLaw law = make_law(process, h, *h_box);
  const SmoothMeasureSpec mu_eff = clipped_measure(mu, mu_box);

  // Right side: f-weighted mu paired with h.m through the resolvent kernel.
  PairingConfig pc;
  pc.per_axis = cfg.quad_per_axis;
  pc.workers = cfg.workers;
  pc.mu_box = mu_box;
  pc.nu_box = *h_box;
  Estimate rhs = weighted_energy_pairing(process, mu_eff,
                                         family_fn(f, mu.dim),
                                         measure_density(process.dim, h),
                                         alpha, pc);

  // Left side: paths from the normalized law, Laplace-weighted f against A.
  const double T = std::max(20.0 / alpha, cfg.horizon);
  const Fn f_fn = family_fn(f, mu.dim);
  std::int64_t breaches = 0;
  Estimate lhs = law_mc(process, law, mu_eff, alpha, &f_fn, -1.0, T, cfg,
                        0x11, bud, &breaches);

  // Horizon tail: E[int_T^inf e^{-as} f dA] <= e^{-aT} sup_x U_a(f mu)(x).
  CellSet cells = weighted_cells(mu_eff, f, mu_box, cfg.quad_per_axis);
  const double gsup = potential_sup(process, alpha, cells, *h_box);
  bud.add(law.mass * gsup * std::exp(-alpha * T), "Laplace horizon tail");
  // f leaking outside the mu quadrature box (only when f has genuine tails).
  if (f.kind == DensityFamily::Kind::GaussBump)
    bud.add(f.c * std::exp(-32.0) * law.mass / alpha,
            "f tail outside its 8-sigma box");

  nlohmann::json detail;
  detail["law_mass"] = law.mass;
  detail["envelope_breaches"] = breaches;
  return finish("resolvent_pairing_alpha", lhs, rhs, cfg, bud,
                std::move(config), std::move(detail));
}

// ---------------------------------------------------------------------------
// Windowed identity: E_{h.m}[int_0^t f dA] = int (int_0^t p_s h ds) f dmu
// ---------------------------------------------------------------------------

VerificationReport check_revuz_t(const ProcessSpec& process,
                                 const SmoothMeasureSpec& mu,
                                 const DensityFamily& f,
                                 const DensityFamily& h, double t,
                                 const CheckConfig& cfg) {
  const char* who = "check_revuz_t";
  validate_common(process, mu, who);
  if (t < 0.0) throw std::invalid_argument("check_revuz_t: t must be >= 0");
  nlohmann::json config = snapshot(process, mu, &f, &h, nullptr, "t", t, cfg);
  Budget bud;
  if (t == 0.0 || zero_family(f) || zero_family(h)) {
    auto r = finish("window_pairing_t", Estimate::exact(0.0),
                    Estimate::exact(0.0), cfg, bud, std::move(config));
    r.note = "trivially zero: t = 0 or a vanishing test function";
    return r;
  }

  const Box mu_box = resolve_mu_box(process, mu, f, cfg, who);
  std::optional<Box> h_box = family_box(process.dim, h);
  if (!h_box) h_box = cfg.domain_box;
  if (!h_box && process.variant == Variant::AbsorbedBM)
    h_box = interval_box(process);
  if (!h_box)
    throw std::invalid_argument(
        std::string(who) + ": h has no bounded support; set cfg.domain_box");
  if (process.variant == Variant::AbsorbedBM)
    *h_box = Box::intersect(*h_box, interval_box(process));
  SampleLaw law = make_law(process, h, *h_box);

  const SmoothMeasureSpec mu_eff = clipped_measure(mu, mu_box);

  // Right side: sum over mu cells of w f(x) W_t h(x) with W_t h the
  // windowed semigroup integral of h; both cell lattices refine together.
  CellSet mu_cells = weighted_cells(mu_eff, f, mu_box, cfg.quad_per_axis);
  DensityFamily one = DensityFamily::constant(1.0);
  CellSet h_cells = weighted_cells(measure_density(process.dim, h), one,
                                   *h_box, cfg.quad_per_axis);
  Estimate rhs;
  if (process.variant == Variant::FreeBM) {
    const int d = process.dim;
    auto window_sum = [&](const std::vector<WeightedNode>& a,
                          const std::vector<WeightedNode>& b, int per_axis) {
      double hedge = 0.0;
      for (int k = 0; k < d; ++k)
        hedge = std::max(hedge, h_box->edge(k) / per_axis);
      double s = 0.0;
      for (const auto& ca : a)
        for (const auto& cb : b) {
          double r = dist(ca.x, cb.x, d);
          if (d >= 2 && r < 0.35 * hedge) r = 0.35 * hedge;
          s += ca.w * cb.w * windowed_kernel_free(d, t, r);
        }
      return s;
    };
    const double v1 = window_sum(mu_cells.fine, h_cells.fine,
                                 mu_cells.per_fine);
    const double v0 = window_sum(mu_cells.coarse, h_cells.coarse,
                                 mu_cells.per_coarse);
    rhs.value = v1;
    rhs.se = std::abs(v1 - v0);
    rhs.n = static_cast<std::int64_t>(mu_cells.fine.size()) *
            static_cast<std::int64_t>(h_cells.fine.size());
    rhs.bias_note = fmt(
        "closed windowed kernel; se = cell refinement delta (%d vs %d per "
        "axis)",
        mu_cells.per_fine, mu_cells.per_coarse);
  } else {
    // Time quadrature in sqrt(s) of the semigroup applied to h (restricted
    // to the law box, matching the sampled truncation).
    const Box hb = *h_box;
    const DensityFamily hh = h;
    const int dim = process.dim;
    Fn h_fn = [hh, hb, dim](const Pt& x) {
      return hb.contains(x) ? hh.eval(dim, x) : 0.0;
    };
    Quad1D q = gauss_legendre_on(cfg.n_time, 0.0, std::sqrt(t));
    double sem_bias = 0.0;
    auto window_at = [&](const Pt& x, double abs_w) {
      double acc = 0.0;
      for (std::size_t k = 0; k < q.nodes.size(); ++k) {
        const double u = q.nodes[k];
        if (u <= 0.0) continue;
        Estimate ps = semigroup_apply(process, u * u, h_fn, x, cfg.n_hermite);
        acc += 2.0 * u * q.weights[k] * ps.value;
        sem_bias += abs_w * 2.0 * u * q.weights[k] * ps.se;
      }
      return acc;
    };
    double s1 = 0.0, s0 = 0.0;
    for (const auto& c : mu_cells.fine)
      s1 += c.w * window_at(c.x, std::abs(c.w));
    for (const auto& c : mu_cells.coarse) s0 += c.w * window_at(c.x, 0.0);
    rhs.value = s1;
    rhs.se = std::abs(s1 - s0);
    rhs.n = static_cast<std::int64_t>(mu_cells.fine.size());
    rhs.bias_note = fmt(
        "semigroup time quadrature (%d nodes); se = cell refinement delta",
        cfg.n_time);
    bud.add(sem_bias, "semigroup refinement inside the window");
  }

  // Left side: undiscounted weighted stream to horizon t.
  const Fn f_fn = family_fn(f, mu.dim);
  std::int64_t breaches = 0;
  Estimate lhs = law_mc(process, law, mu_eff, 0.0, &f_fn, -1.0, t, cfg, 0x12,
                        bud, &breaches);
  if (f.kind == DensityFamily::Kind::GaussBump)
    bud.add(f.c * std::exp(-32.0) * law.mass * t,
            "f tail outside its 8-sigma box");

  nlohmann::json detail;
  detail["law_mass"] = law.mass;
  detail["envelope_breaches"] = breaches;
  return finish("window_pairing_t", lhs, rhs, cfg, bud, std::move(config),
                std::move(detail));
}

// ---------------------------------------------------------------------------
// Interior-killing identities
// ---------------------------------------------------------------------------

VerificationReport check_kappa_alpha(const ProcessSpec& process,
                                     const SmoothMeasureSpec& mu,
                                     const DensityFamily& f, double alpha,
                                     const CheckConfig& cfg) {
  const char* who = "check_kappa_alpha";
  validate_common(process, mu, who);
  require_positive(alpha, who, "alpha");
  nlohmann::json config =
      snapshot(process, mu, &f, nullptr, nullptr, "alpha", alpha, cfg);
  if (process.variant != Variant::KilledBM || process.kill_c <= 0.0)
    return degenerate_report(
        "interior_killing_alpha", cfg, std::move(config),
        "no interior killing for this process: both sides vanish "
        "identically");
  Budget bud;
  if (zero_family(f)) {
    auto r = finish("interior_killing_alpha", Estimate::exact(0.0),
                    Estimate::exact(0.0), cfg, bud, std::move(config));
    r.note = "trivially zero: f vanishes identically";
    return r;
  }

  const double c = process.kill_c;
  const Box mu_box = resolve_mu_box(process, mu, f, cfg, who);
  const SmoothMeasureSpec mu_eff = clipped_measure(mu, mu_box);
  CellSet cells = weighted_cells(mu_eff, f, mu_box, cfg.quad_per_axis);
  // Right side, closed: 1 - alpha R_alpha 1 - phi_alpha = c / (alpha + c).
  Estimate base = cell_sum(cells, [](const Pt&) { return 1.0; },
                           "int f dmu");
  Estimate rhs = base.scaled(c / (alpha + c));
  rhs.bias_note = fmt("closed factor c/(alpha+c) = %.6g x %s",
                      c / (alpha + c), base.bias_note.c_str());

  // Left side: the killing measure is c x Lebesgue; sample uniformly on an
  // inflated box and budget the exterior by the kernel tail.
  const double gamma = std::sqrt(2.0 * (alpha + c));
  const double pad = 6.0 / gamma;
  const Box sample_box =
      (cfg.domain_box ? *cfg.domain_box : mu_box).inflated(pad);
  SampleLaw law = make_law(process, DensityFamily::constant(c), sample_box);
  const double T = std::max(20.0 / alpha, cfg.horizon);
  const Fn f_fn = family_fn(f, mu.dim);
  Estimate lhs = law_mc(process, law, mu_eff, alpha, &f_fn, -1.0, T, cfg,
                        0x21, bud);
  bud.add(c * cells.abs_fine * radial_tail(process, alpha, pad),
          "killing-law box truncation");
  const double gsup = potential_sup(process, alpha, cells, sample_box);
  bud.add(law.mass * gsup * std::exp(-alpha * T), "Laplace horizon tail");

  nlohmann::json detail;
  detail["closed_rhs_factor"] = c / (alpha + c);
  detail["sample_box"] = box_json(sample_box);
  return finish("interior_killing_alpha", lhs, rhs, cfg, bud,
                std::move(config), std::move(detail));
}

VerificationReport check_kappa_t(const ProcessSpec& process,
                                 const SmoothMeasureSpec& mu,
                                 const DensityFamily& f, double t,
                                 const CheckConfig& cfg) {
  const char* who = "check_kappa_t";
  validate_common(process, mu, who);
  if (t < 0.0) throw std::invalid_argument("check_kappa_t: t must be >= 0");
  nlohmann::json config = snapshot(process, mu, &f, nullptr, nullptr, "t", t,
                                   cfg);
  if (process.variant != Variant::KilledBM || process.kill_c <= 0.0)
    return degenerate_report(
        "interior_killing_window", cfg, std::move(config),
        "no interior killing for this process: both sides vanish "
        "identically");
  Budget bud;
  if (t == 0.0 || zero_family(f)) {
    auto r = finish("interior_killing_window", Estimate::exact(0.0),
                    Estimate::exact(0.0), cfg, bud, std::move(config));
    r.note = "trivially zero: t = 0 or f vanishes identically";
    return r;
  }

  const double c = process.kill_c;
  const Box mu_box = resolve_mu_box(process, mu, f, cfg, who);
  const SmoothMeasureSpec mu_eff = clipped_measure(mu, mu_box);
  CellSet cells = weighted_cells(mu_eff, f, mu_box, cfg.quad_per_axis);
  // 1 - phi - p_t(1 - phi) with phi = 0 and p_t 1 = e^{-ct}.
  Estimate base = cell_sum(cells, [](const Pt&) { return 1.0; },
                           "int f dmu");
  Estimate rhs = base.scaled(1.0 - std::exp(-c * t));
  rhs.bias_note = fmt("closed survival factor (1 - e^{-ct}) = %.6g x %s",
                      1.0 - std::exp(-c * t), base.bias_note.c_str());

  const double pad = std::max(6.0 * std::sqrt(t), 1.0);
  const Box sample_box =
      (cfg.domain_box ? *cfg.domain_box : mu_box).inflated(pad);
  SampleLaw law = make_law(process, DensityFamily::constant(c), sample_box);
  const Fn f_fn = family_fn(f, mu.dim);
  Estimate lhs = law_mc(process, law, mu_eff, 0.0, &f_fn, -1.0, t, cfg, 0x22,
                        bud);
  bud.add(c * cells.abs_fine * windowed_radial_tail(process.dim, t, pad),
          "killing-law box truncation");

  nlohmann::json detail;
  detail["sample_box"] = box_json(sample_box);
  return finish("interior_killing_window", lhs, rhs, cfg, bud,
                std::move(config), std::move(detail));
}

// ---------------------------------------------------------------------------
// Boundary-flux identities
// ---------------------------------------------------------------------------

VerificationReport check_nu_alpha(const ProcessSpec& process,
                                  const SmoothMeasureSpec& mu,
                                  const DensityFamily& f, double alpha,
                                  const CheckConfig& cfg) {
  const char* who = "check_nu_alpha";
  validate_common(process, mu, who);
  require_positive(alpha, who, "alpha");
  nlohmann::json config =
      snapshot(process, mu, &f, nullptr, nullptr, "alpha", alpha, cfg);
  if (process.variant != Variant::AbsorbedBM)
    return degenerate_report(
        "boundary_flux_alpha", cfg, std::move(config),
        "no boundary escape for this process: both sides vanish identically");
  Budget bud;
  if (zero_family(f)) {
    auto r = finish("boundary_flux_alpha", Estimate::exact(0.0),
                    Estimate::exact(0.0), cfg, bud, std::move(config));
    r.note = "trivially zero: f vanishes identically";
    return r;
  }

  const Box mu_box = resolve_mu_box(process, mu, f, cfg, who);
  const SmoothMeasureSpec mu_eff = clipped_measure(mu, mu_box);
  CellSet cells = weighted_cells(mu_eff, f, mu_box, cfg.quad_per_axis);
  Estimate rhs = cell_sum(
      cells,
      [&](const Pt& x) { return survival_phi_alpha(process, alpha, x).value; },
      "int phi_alpha f dmu");

  SmoothMeasureSpec wmu = weighted_measure(mu_eff, f, who);
  Estimate lhs = nu0_of_potential_grid(process, wmu, alpha, cfg, 0x31, bud);

  return finish("boundary_flux_alpha", lhs, rhs, cfg, bud, std::move(config));
}

VerificationReport check_nu_t(const ProcessSpec& process,
                              const SmoothMeasureSpec& mu,
                              const DensityFamily& f, double t,
                              const CheckConfig& cfg) {
  const char* who = "check_nu_t";
  validate_common(process, mu, who);
  if (t < 0.0) throw std::invalid_argument("check_nu_t: t must be >= 0");
  nlohmann::json config = snapshot(process, mu, &f, nullptr, nullptr, "t", t,
                                   cfg);
  if (process.variant != Variant::AbsorbedBM)
    return degenerate_report(
        "boundary_flux_window", cfg, std::move(config),
        "no boundary escape for this process: both sides vanish identically");
  Budget bud;
  if (t == 0.0 || zero_family(f)) {
    auto r = finish("boundary_flux_window", Estimate::exact(0.0),
                    Estimate::exact(0.0), cfg, bud, std::move(config));
    r.note = "trivially zero: t = 0 or f vanishes identically";
    return r;
  }

  const Box mu_box = resolve_mu_box(process, mu, f, cfg, who);
  const SmoothMeasureSpec mu_eff = clipped_measure(mu, mu_box);
  CellSet cells = weighted_cells(mu_eff, f, mu_box, cfg.quad_per_axis);
  // phi = 1 here (every path eventually escapes): RHS = int (1 - p_t 1) f.
  Fn one = [](const Pt&) { return 1.0; };
  double sem_bias = 0.0;
  double s1 = 0.0, s0 = 0.0;
  for (const auto& c : cells.fine) {
    Estimate p1 = semigroup_apply(process, t, one, c.x, cfg.n_hermite);
    s1 += c.w * (1.0 - p1.value);
    sem_bias += std::abs(c.w) * p1.se;
  }
  for (const auto& c : cells.coarse)
    s0 += c.w * (1.0 - semigroup_apply(process, t, one, c.x,
                                       cfg.n_hermite).value);
  Estimate rhs;
  rhs.value = s1;
  rhs.se = std::abs(s1 - s0);
  rhs.n = static_cast<std::int64_t>(cells.fine.size());
  rhs.bias_note = fmt(
      "int (1 - p_t 1) f dmu; se = cell refinement delta (%d vs %d per axis)",
      cells.per_fine, cells.per_coarse);
  bud.add(sem_bias, "exit-probability quadrature");

  SmoothMeasureSpec wmu = weighted_measure(mu_eff, f, who);
  Estimate lhs = nu0_of_mc_grid(
      process, 1.0, cfg, 0x32, bud,
      [&](const Pt& x0, std::uint64_t ps, std::int64_t i) {
        PcafStreamConfig sc;
        sc.alpha = 0.0;
        PcafStream st(process, wmu, cfg.rule, sc, ps,
                      static_cast<std::uint64_t>(i));
        Rng rng = path_rng(ps, static_cast<std::uint64_t>(i));
        walk_path(process, x0, t, cfg.dt, rng,
                  [&](const Step& s) { st.on_step(s); });
        return st.total();
      });

  return finish("boundary_flux_window", lhs, rhs, cfg, bud,
                std::move(config));
}

// ---------------------------------------------------------------------------
// Mass decomposition (trinity) identities
// ---------------------------------------------------------------------------

VerificationReport check_trinity_alpha(const ProcessSpec& process,
                                       const SmoothMeasureSpec& mu,
                                       const DensityFamily& f, double alpha,
                                       const CheckConfig& cfg) {
  const char* who = "check_trinity_alpha";
  validate_common(process, mu, who);
  require_positive(alpha, who, "alpha");
  nlohmann::json config =
      snapshot(process, mu, &f, nullptr, nullptr, "alpha", alpha, cfg);
  Budget bud;
  if (zero_family(f)) {
    auto r = finish("mass_decomposition_alpha", Estimate::exact(0.0),
                    Estimate::exact(0.0), cfg, bud, std::move(config));
    r.note = "trivially zero: f vanishes identically";
    return r;
  }

  const Box mu_box = resolve_mu_box(process, mu, f, cfg, who);
  const SmoothMeasureSpec mu_eff = clipped_measure(mu, mu_box);
  CellSet cells = weighted_cells(mu_eff, f, mu_box, cfg.quad_per_axis);
  Estimate rhs = cell_sum(cells, [](const Pt&) { return 1.0; }, "int f dmu");

  // alpha.m + kappa share one uniform pass: both are multiples of Lebesgue.
  const double c = process.kill_c;
  const double rate = alpha + c;
  Box sample_box = interval_box(process);
  if (process.variant != Variant::AbsorbedBM) {
    const double pad = 6.0 / std::sqrt(2.0 * rate);
    sample_box = (cfg.domain_box ? *cfg.domain_box : mu_box).inflated(pad);
    bud.add(rate * cells.abs_fine * radial_tail(process, alpha, pad),
            "uniform-law box truncation");
  }
  SampleLaw law = make_law(process, DensityFamily::constant(rate), sample_box);
  const double T = std::max(20.0 / alpha, cfg.horizon);
  const Fn f_fn = family_fn(f, mu.dim);
  Estimate bulk = law_mc(process, law, mu_eff, alpha, &f_fn, -1.0, T, cfg,
                         0x41, bud);
  const double gsup = potential_sup(process, alpha, cells, sample_box);
  bud.add(law.mass * gsup * std::exp(-alpha * T), "Laplace horizon tail");

  nlohmann::json detail;
  detail["alpha_m_part"] = revuzlab::to_json(bulk.scaled(alpha / rate));
  detail["kappa_part"] =
      revuzlab::to_json(c > 0.0 ? bulk.scaled(c / rate)
                                : Estimate::exact(0.0, "no interior killing"));

  Estimate lhs = bulk;
  if (process.variant == Variant::AbsorbedBM) {
    SmoothMeasureSpec wmu = weighted_measure(mu_eff, f, who);
    Estimate nupart =
        nu0_of_potential_grid(process, wmu, alpha, cfg, 0x42, bud);
    detail["nu0_part"] = revuzlab::to_json(nupart);
    lhs = lhs + nupart;
  } else {
    detail["nu0_part"] =
        revuzlab::to_json(Estimate::exact(0.0, "no boundary escape"));
  }

  return finish("mass_decomposition_alpha", lhs, rhs, cfg, bud,
                std::move(config), std::move(detail));
}

VerificationReport check_trinity_t(const ProcessSpec& process,
                                   const SmoothMeasureSpec& mu,
                                   const DensityFamily& f, double t,
                                   const CheckConfig& cfg) {
  const char* who = "check_trinity_t";
  validate_common(process, mu, who);
  if (t < 0.0) throw std::invalid_argument("check_trinity_t: t must be >= 0");
  nlohmann::json config = snapshot(process, mu, &f, nullptr, nullptr, "t", t,
                                   cfg);
  Budget bud;
  if (t == 0.0 || zero_family(f)) {
    auto r = finish("mass_decomposition_window", Estimate::exact(0.0),
                    Estimate::exact(0.0), cfg, bud, std::move(config));
    r.note = "trivially zero: t = 0 or f vanishes identically";
    return r;
  }

  const Box mu_box = resolve_mu_box(process, mu, f, cfg, who);
  const SmoothMeasureSpec mu_eff = clipped_measure(mu, mu_box);
  CellSet cells = weighted_cells(mu_eff, f, mu_box, cfg.quad_per_axis);
  Estimate base = cell_sum(cells, [](const Pt&) { return 1.0; }, "int f dmu");
  Estimate rhs = base.scaled(t);
  rhs.bias_note = fmt("t x int f dmu; %s", base.bias_note.c_str());

  const double c = process.kill_c;
  Box sample_box = interval_box(process);
  if (process.variant != Variant::AbsorbedBM) {
    const double pad = std::max(6.0 * std::sqrt(t), 1.0);
    sample_box = (cfg.domain_box ? *cfg.domain_box : mu_box).inflated(pad);
    const double wt = windowed_radial_tail(process.dim, t, pad);
    bud.add(cells.abs_fine * wt, "m-part box truncation");
    if (c > 0.0)
      bud.add(c * t * cells.abs_fine * wt, "kappa-part box truncation");
  }

  // One uniform pass feeds the m-part stream (f against A to time t) and,
  // for killed motion, the (t - s)-weighted stream of the f-weighted
  // measure.
  const std::uint64_t ps = part_seed(cfg.seed, 0x51);
  const Fn f_fn = family_fn(f, mu.dim);
  SmoothMeasureSpec wmu =
      c > 0.0 ? weighted_measure(mu_eff, f, who) : measure_scaled(0.0, mu);
  SampleLaw law = make_law(process, DensityFamily::constant(1.0), sample_box);
  struct Acc {
    Welford sum, m_part, k_part;
    std::int64_t breaches = 0;
  };
  auto slots = chunked_map<Acc>(
      cfg.n_paths, 256, cfg.workers,
      [&](std::int64_t, std::int64_t lo, std::int64_t hi, Acc& a) {
        for (std::int64_t i = lo; i < hi; ++i) {
          Rng rej = tagged_rng(ps, 0x5A17, static_cast<std::uint64_t>(i), 1);
          Pt x0 = draw_start(law, process, rej, a.breaches);
          std::vector<StreamRequest> reqs{{&mu_eff, 0.0, &f_fn, -1.0}};
          if (c > 0.0) reqs.push_back({&wmu, 0.0, nullptr, t});
          auto vals = run_streams(process, x0, t, cfg.dt, cfg.rule, ps, i,
                                  reqs);
          const double vm = law.mass * vals[0];
          const double vk = c > 0.0 ? c * law.mass * vals[1] : 0.0;
          a.m_part.add(vm);
          a.k_part.add(vk);
          a.sum.add(vm + vk);
        }
      });
  Acc total;
  for (const auto& s : slots) {
    total.sum.merge(s.sum);
    total.m_part.merge(s.m_part);
    total.k_part.merge(s.k_part);
  }
  Estimate lhs = total.sum.estimate("uniform-law m + kappa parts");

  nlohmann::json detail;
  detail["m_part"] = revuzlab::to_json(total.m_part.estimate());
  detail["kappa_part"] = revuzlab::to_json(
      c > 0.0 ? total.k_part.estimate()
              : Estimate::exact(0.0, "no interior killing"));

  if (process.variant == Variant::AbsorbedBM) {
    SmoothMeasureSpec wmu_abs = weighted_measure(mu_eff, f, who);
    Estimate nupart = nu0_of_mc_grid(
        process, 1.0, cfg, 0x52, bud,
        [&](const Pt& x0, std::uint64_t gps, std::int64_t i) {
          PcafStreamConfig sc;
          sc.alpha = 0.0;
          sc.time_weight_t = t;
          PcafStream st(process, wmu_abs, cfg.rule, sc, gps,
                        static_cast<std::uint64_t>(i));
          Rng rng = path_rng(gps, static_cast<std::uint64_t>(i));
          walk_path(process, x0, t, cfg.dt, rng,
                    [&](const Step& s) { st.on_step(s); });
          return st.time_weighted();
        });
    detail["nu0_part"] = revuzlab::to_json(nupart);
    lhs = lhs + nupart;
  } else {
    detail["nu0_part"] =
        revuzlab::to_json(Estimate::exact(0.0, "no boundary escape"));
  }

  return finish("mass_decomposition_window", lhs, rhs, cfg, bud,
                std::move(config), std::move(detail));
}

// ---------------------------------------------------------------------------
// Second-moment / energy identity
// ---------------------------------------------------------------------------

VerificationReport check_second_moment(const ProcessSpec& process,
                                       const SmoothMeasureSpec& mu,
                                       const SmoothMeasureSpec& nu,
                                       double alpha, const CheckConfig& cfg) {
  const char* who = "check_second_moment";
  validate_common(process, mu, who);
  if (nu.dim != process.dim)
    throw std::invalid_argument("check_second_moment: dimension mismatch");
  require_positive(alpha, who, "alpha");
  nlohmann::json config =
      snapshot(process, mu, nullptr, nullptr, &nu, "alpha", alpha, cfg);
  Budget bud;

  DensityFamily one = DensityFamily::constant(1.0);
  std::optional<Box> mb = measure_box(mu);
  if (!mb) mb = cfg.domain_box;
  std::optional<Box> nb = measure_box(nu);
  if (!nb) nb = cfg.domain_box;
  if ((!mb || !nb) && process.variant == Variant::AbsorbedBM) {
    if (!mb) mb = interval_box(process);
    if (!nb) nb = interval_box(process);
  }
  if (!mb || !nb)
    throw std::invalid_argument(
        "check_second_moment: measures without bounded support need "
        "cfg.domain_box");
  if (process.variant == Variant::AbsorbedBM) {
    *mb = Box::intersect(*mb, interval_box(process));
    *nb = Box::intersect(*nb, interval_box(process));
  }

  const SmoothMeasureSpec mu_eff = clipped_measure(mu, *mb);
  const SmoothMeasureSpec nu_eff = clipped_measure(nu, *nb);
  PairingConfig pc;
  pc.per_axis = cfg.quad_per_axis;
  pc.workers = cfg.workers;
  pc.mu_box = *mb;
  pc.nu_box = *nb;
  Estimate rhs = energy_pairing(process, mu_eff, nu_eff, alpha, pc);

  const double c = process.kill_c;
  const double rate = alpha + 0.5 * c;
  Box sample_box = interval_box(process);
  CellSet mu_cells = weighted_cells(mu_eff, one, *mb, cfg.quad_per_axis);
  CellSet nu_cells = weighted_cells(nu_eff, one, *nb, cfg.quad_per_axis);
  const Box hullb = Box::hull(*mb, *nb);
  if (process.variant != Variant::AbsorbedBM) {
    const double pad = 6.0 / std::sqrt(2.0 * alpha);
    sample_box = (cfg.domain_box ? *cfg.domain_box : hullb).inflated(pad);
    const double sup_mu = potential_sup(process, alpha, mu_cells, hullb);
    const double sup_nu = potential_sup(process, alpha, nu_cells, hullb);
    const double rt = radial_tail(process, alpha, pad);
    // E_x[A~ B~] <= sup U.mu x U.nu(x) + sup U.nu x U.mu(x) outside the box.
    bud.add(rate * (sup_mu * nu_cells.abs_fine + sup_nu * mu_cells.abs_fine) *
                rt,
            "mixed-law box truncation");
  }
  SampleLaw law = make_law(process, DensityFamily::constant(rate), sample_box);
  const double T = std::max(20.0 / alpha, cfg.horizon);
  const std::uint64_t ps = part_seed(cfg.seed, 0x61);
  struct Acc {
    Welford prod;
    std::int64_t breaches = 0;
  };
  auto slots = chunked_map<Acc>(
      cfg.n_paths, 128, cfg.workers,
      [&](std::int64_t, std::int64_t lo, std::int64_t hi, Acc& a) {
        for (std::int64_t i = lo; i < hi; ++i) {
          Rng rej = tagged_rng(ps, 0x5A17, static_cast<std::uint64_t>(i), 1);
          Pt x0 = draw_start(law, process, rej, a.breaches);
          std::vector<StreamRequest> reqs{{&mu_eff, alpha, nullptr, -1.0},
                                          {&nu_eff, alpha, nullptr, -1.0}};
          auto vals = run_streams(process, x0, T, cfg.dt, cfg.rule, ps, i,
                                  reqs);
          a.prod.add(vals[0] * vals[1]);
        }
      });
  Welford prod;
  for (const auto& s : slots) prod.merge(s.prod);
  Estimate bulk = prod.estimate("mixed-law product of exponential functionals")
                      .scaled(law.mass);

  const double sup_mu2 = potential_sup(process, alpha, mu_cells, sample_box);
  const double sup_nu2 = potential_sup(process, alpha, nu_cells, sample_box);
  bud.add(2.0 * law.mass * sup_mu2 * sup_nu2 * std::exp(-alpha * T),
          "Laplace horizon tail");

  nlohmann::json detail;
  detail["bulk_part"] = revuzlab::to_json(bulk);
  Estimate lhs = bulk;
  if (process.variant == Variant::AbsorbedBM) {
    Estimate nupart = nu0_of_mc_grid(
        process, alpha, cfg, 0x62, bud,
        [&](const Pt& x0, std::uint64_t gps, std::int64_t i) {
          PcafStreamConfig sa, sb;
          sa.alpha = alpha;
          sb.alpha = alpha;
          PcafStream stA(process, mu_eff, cfg.rule, sa, gps,
                         static_cast<std::uint64_t>(i));
          PcafStream stB(process, nu_eff, cfg.rule, sb, gps,
                         static_cast<std::uint64_t>(i));
          Rng rng = path_rng(gps, static_cast<std::uint64_t>(i));
          walk_path(process, x0, T, cfg.dt, rng, [&](const Step& s) {
            stA.on_step(s);
            stB.on_step(s);
          });
          return stA.laplace() * stB.laplace();
        });
    nupart = nupart.scaled(0.5);
    detail["nu0_part"] = revuzlab::to_json(nupart);
    lhs = lhs + nupart;
  } else {
    detail["nu0_part"] =
        revuzlab::to_json(Estimate::exact(0.0, "no boundary escape"));
  }

  return finish("second_moment_energy", lhs, rhs, cfg, bud, std::move(config),
                std::move(detail));
}

}  // namespace revuzlab
