/// @file process.cpp
/// @brief Catalog processes: spec plumbing, path sampling, transition
///        densities, semigroup / resolvent quadrature, lifetime functional.
#include "revuzlab/process.hpp"

#include <algorithm>
#include <cmath>

#include "revuzlab/parallel.hpp"
#include "revuzlab/quadrature.hpp"

namespace revuzlab {

// ---------------------------------------------------------------------------
// ProcessSpec
// ---------------------------------------------------------------------------

ProcessSpec ProcessSpec::free_bm(int d) {
  ProcessSpec s;
  s.variant = Variant::FreeBM;
  s.dim = d;
  s.validate();
  return s;
}

ProcessSpec ProcessSpec::killed_bm(int d, double c) {
  ProcessSpec s;
  s.variant = Variant::KilledBM;
  s.dim = d;
  s.kill_c = c;
  s.validate();
  return s;
}

ProcessSpec ProcessSpec::absorbed_bm(double a, double b) {
  ProcessSpec s;
  s.variant = Variant::AbsorbedBM;
  s.dim = 1;
  s.a = a;
  s.b = b;
  s.validate();
  return s;
}

void ProcessSpec::validate() const {
  if (dim < 1 || dim > kMaxDim)
    throw std::invalid_argument("ProcessSpec: dim must be in [1, 3]");
  switch (variant) {
    case Variant::FreeBM:
      break;
    case Variant::KilledBM:
      if (!(kill_c >= 0.0))
        throw std::invalid_argument("ProcessSpec: killing rate must be >= 0");
      break;
    case Variant::AbsorbedBM:
      if (dim != 1)
        throw std::invalid_argument("ProcessSpec: absorbed variant needs d=1");
      if (!(a < b))
        throw std::invalid_argument("ProcessSpec: interval needs a < b");
      break;
  }
}

bool ProcessSpec::in_state_space(const Pt& x) const {
  if (is_cemetery(x)) return false;
  if (variant == Variant::AbsorbedBM) return x[0] > a && x[0] < b;
  return true;
}

std::string ProcessSpec::label() const {
  switch (variant) {
    case Variant::FreeBM:
      return "free_bm(d=" + std::to_string(dim) + ")";
    case Variant::KilledBM:
      return "killed_bm(d=" + std::to_string(dim) +
             ",c=" + std::to_string(kill_c) + ")";
    case Variant::AbsorbedBM:
      return "absorbed_bm(" + std::to_string(a) + "," + std::to_string(b) +
             ")";
  }
  return "?";
}

nlohmann::json ProcessSpec::to_json() const {
  nlohmann::json j;
  switch (variant) {
    case Variant::FreeBM:
      j["variant"] = "free_bm";
      j["kill_rate"] = nullptr;
      j["interval"] = nullptr;
      break;
    case Variant::KilledBM:
      j["variant"] = "killed_bm";
      j["kill_rate"] = {{"kind", "const"}, {"c", kill_c}};
      j["interval"] = nullptr;
      break;
    case Variant::AbsorbedBM:
      j["variant"] = "absorbed_bm";
      j["kill_rate"] = nullptr;
      j["interval"] = {a, b};
      break;
  }
  j["dim"] = dim;
  return j;
}

ProcessSpec ProcessSpec::from_json(const nlohmann::json& j) {
  ProcessSpec s;
  const std::string v = j.at("variant").get<std::string>();
  s.dim = j.at("dim").get<int>();
  if (v == "free_bm") {
    s.variant = Variant::FreeBM;
  } else if (v == "killed_bm") {
    s.variant = Variant::KilledBM;
    const auto& kr = j.at("kill_rate");
    if (kr.is_null() || kr.at("kind").get<std::string>() != "const")
      throw std::invalid_argument(
          "ProcessSpec: killed_bm needs kill_rate {kind:const, c}");
    s.kill_c = kr.at("c").get<double>();
  } else if (v == "absorbed_bm") {
    s.variant = Variant::AbsorbedBM;
    const auto& iv = j.at("interval");
    if (iv.is_null() || iv.size() != 2)
      throw std::invalid_argument("ProcessSpec: absorbed_bm needs interval");
    s.a = iv[0].get<double>();
    s.b = iv[1].get<double>();
  } else {
    throw std::invalid_argument("ProcessSpec: unknown variant " + v);
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Path sampling
// ---------------------------------------------------------------------------

PathSample sample_path(const ProcessSpec& spec, const Pt& x0, double horizon,
                       double dt, std::uint64_t seed) {
  PathSample p;
  const std::int64_t n_steps =
      static_cast<std::int64_t>(std::ceil(horizon / dt - 1e-9));
  p.times.reserve(n_steps + 1);
  p.states.reserve(n_steps + 1);
  p.times.push_back(0.0);
  p.states.push_back(x0);
  Rng rng(seed);
  walk_path(spec, x0, horizon, dt, rng, [&](const Step& s) {
    if (s.dies) {
      p.zeta = s.zeta;
      p.kill_mode = s.mode;
      p.death_point = s.death_point;
    } else {
      p.times.push_back(s.t1);
      p.states.push_back(s.x1);
    }
  });
  p.alive_count = p.states.size();
  // Pad the remainder of the grid with cemetery states.
  for (std::int64_t i = static_cast<std::int64_t>(p.times.size()) - 1;
       i < n_steps; ++i) {
    p.times.push_back(
        std::min(static_cast<double>(i + 1) * dt, horizon));
    p.states.push_back(cemetery_point());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Transition densities
// ---------------------------------------------------------------------------

double free_gauss_density(int dim, double t, const Pt& x, const Pt& y) {
  const double r2 = norm2(sub(x, y), dim);
  return std::pow(2.0 * M_PI * t, -0.5 * dim) * std::exp(-r2 / (2.0 * t));
}

namespace {

double gauss1(double t, double u) {
  return std::exp(-u * u / (2.0 * t)) / std::sqrt(2.0 * M_PI * t);
}

/// Image-charge series for the interval-absorbed density.  Terms decay like
/// exp(-2 n^2 L^2 / t); the loop stops once a symmetric image pair adds less
/// than 1e-12 of the running sum.
double absorbed_density(double a, double b, double t, double x, double y) {
  const double L = b - a;
  const double u = y - x;
  const double v = y + x - 2.0 * a;
  double sum = gauss1(t, u) - gauss1(t, v);
  for (int n = 1; n <= 512; ++n) {
    const double shift = 2.0 * n * L;
    const double inc = gauss1(t, u + shift) + gauss1(t, u - shift) -
                       gauss1(t, v + shift) - gauss1(t, v - shift);
    sum += inc;
    if (std::abs(inc) < 1e-12 * std::max(sum, 1e-300)) break;
  }
  return std::max(sum, 0.0);
}

}  // namespace

double transition_density(const ProcessSpec& spec, double t, const Pt& x,
                          const Pt& y) {
  if (!(t > 0.0))
    throw std::invalid_argument("transition_density: t must be > 0");
  switch (spec.variant) {
    case Variant::FreeBM:
      return free_gauss_density(spec.dim, t, x, y);
    case Variant::KilledBM:
      return std::exp(-spec.kill_c * t) * free_gauss_density(spec.dim, t, x, y);
    case Variant::AbsorbedBM:
      return absorbed_density(spec.a, spec.b, t, x[0], y[0]);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Semigroup and resolvent
// ---------------------------------------------------------------------------

namespace {

/// Odd-periodic reflection of g about both interval endpoints; evaluating
/// the free expectation against the folded function realizes the
/// image-charge series exactly.
double folded_eval(const Fn& g, double a, double b, double y) {
  const double L = b - a;
  double u = std::fmod(y - a, 2.0 * L);
  if (u < 0.0) u += 2.0 * L;
  if (u <= L) return g(pt(a + u));
  return -g(pt(a + 2.0 * L - u));
}

/// p_t g(x) on the interval: integrate the Gaussian kernel against the
/// folded function over one reflection period at a time, so each
/// Gauss-Legendre panel sees a smooth integrand (the fold is discontinuous
/// whenever g does not vanish at the endpoints, which defeats a single
/// global rule).  The window +-8.5 sqrt(t) keeps the tail below 1e-15.
double absorbed_semigroup(double a, double b, const Fn& g, double x, double t,
                          int order) {
  const double L = b - a;
  const double radius = 8.5 * std::sqrt(t);
  const double lo = x - radius, hi = x + radius;
  const Quad1D& base = gauss_legendre(order);
  double sum = 0.0;
  for (double k = std::floor((lo - a) / L);; k += 1.0) {
    const double s0 = std::max(lo, a + k * L);
    const double s1 = std::min(hi, a + (k + 1.0) * L);
    if (s0 >= hi) break;
    if (s1 <= s0) continue;
    const double mid = 0.5 * (s0 + s1), half = 0.5 * (s1 - s0);
    for (int i = 0; i < order; ++i) {
      const double y = mid + half * base.nodes[i];
      sum += half * base.weights[i] * gauss1(t, y - x) * folded_eval(g, a, b, y);
    }
  }
  return sum;
}

/// E[g(x + sdev * Z)] over a d-dimensional standard normal Z, by tensorized
/// Gauss-Hermite quadrature with n nodes per axis.
double gh_mean(const Fn& g, int dim, const Pt& x, double sdev, int n) {
  const Quad1D& q = gauss_hermite(n);
  const double w0 = 1.0 / std::sqrt(M_PI);
  const double s = sdev * M_SQRT2;
  double sum = 0.0;
  if (dim == 1) {
    for (int i = 0; i < n; ++i)
      sum += q.weights[i] * w0 * g(pt(x[0] + s * q.nodes[i]));
  } else if (dim == 2) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        sum += q.weights[i] * q.weights[j] * w0 * w0 *
               g(pt(x[0] + s * q.nodes[i], x[1] + s * q.nodes[j]));
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          sum += q.weights[i] * q.weights[j] * q.weights[k] * w0 * w0 * w0 *
                 g(pt(x[0] + s * q.nodes[i], x[1] + s * q.nodes[j],
                      x[2] + s * q.nodes[k]));
  }
  return sum;
}

double semigroup_value(const ProcessSpec& spec, double t, const Fn& g,
                       const Pt& x, int n_hermite) {
  const double sdev = std::sqrt(t);
  switch (spec.variant) {
    case Variant::FreeBM:
      return gh_mean(g, spec.dim, x, sdev, n_hermite);
    case Variant::KilledBM:
      return std::exp(-spec.kill_c * t) *
             gh_mean(g, spec.dim, x, sdev, n_hermite);
    case Variant::AbsorbedBM:
      return absorbed_semigroup(spec.a, spec.b, g, x[0], t, n_hermite);
  }
  return 0.0;
}

}  // namespace

Estimate semigroup_apply(const ProcessSpec& spec, double t, const Fn& g,
                         const Pt& x, int n_hermite) {
  spec.validate();
  if (t < 0.0) throw std::invalid_argument("semigroup_apply: t must be >= 0");
  if (t == 0.0) return Estimate::exact(g(x));
  const double coarse = semigroup_value(spec, t, g, x, n_hermite);
  const double fine = semigroup_value(spec, t, g, x, n_hermite + n_hermite / 2);
  Estimate e;
  e.value = fine;
  e.se = std::abs(fine - coarse) + 1e-15;
  e.n = 1;
  e.bias_note = "gauss-hermite refinement delta";
  return e;
}

Estimate resolvent(const ProcessSpec& spec, double alpha, const Fn& g,
                   const Pt& x, int n_time, int n_hermite) {
  spec.validate();
  if (!(alpha > 0.0))
    throw std::invalid_argument("resolvent: alpha must be > 0");
  const double t_star = std::min(40.0 / alpha, 400.0);
  const double s_max = std::sqrt(t_star);
  // int_0^{T*} e^{-alpha t} p_t g dt with t = s^2; the integrand
  // 2 s e^{-alpha s^2} p_{s^2} g(x) is smooth in s.
  const auto eval = [&](int nodes) {
    Quad1D q = gauss_legendre_on(nodes, 0.0, s_max);
    double sum = 0.0;
    for (int i = 0; i < nodes; ++i) {
      const double s = q.nodes[i];
      sum += q.weights[i] * 2.0 * s * std::exp(-alpha * s * s) *
             semigroup_value(spec, s * s, g, x, n_hermite);
    }
    return sum;
  };
  const double coarse = eval(n_time);
  const double fine = eval(n_time + n_time / 2);
  Estimate e;
  e.value = fine;
  e.se = std::abs(fine - coarse) + 1e-15;
  e.n = 1;
  e.bias_note = "time-quadrature refinement delta; tail cutoff exp(-alpha T*)";
  return e;
}

double resolvent_kernel(const ProcessSpec& spec, double alpha, const Pt& x,
                        const Pt& y) {
  if (!(alpha > 0.0))
    throw std::invalid_argument("resolvent_kernel: alpha must be > 0");
  double shifted = alpha;
  if (spec.variant == Variant::KilledBM) shifted += spec.kill_c;

  if (spec.variant == Variant::AbsorbedBM) {
    const double k = std::sqrt(2.0 * alpha);
    const double lo = std::min(x[0], y[0]);
    const double hi = std::max(x[0], y[0]);
    // 2 sinh(k(lo-a)) sinh(k(b-hi)) / (k sinh(kL)), written with scaled
    // exponentials so large k L cannot overflow.
    const double p = k * (lo - spec.a);
    const double q = k * (spec.b - hi);
    const double kl = k * spec.interval_length();
    return std::exp(p + q - kl) * (1.0 - std::exp(-2.0 * p)) *
           (1.0 - std::exp(-2.0 * q)) / (k * (1.0 - std::exp(-2.0 * kl)));
  }

  const double k = std::sqrt(2.0 * shifted);
  const double r = dist(x, y, spec.dim);
  switch (spec.dim) {
    case 1:
      return std::exp(-k * r) / k;
    case 2:
      if (r == 0.0) return std::numeric_limits<double>::infinity();
      return std::cyl_bessel_k(0.0, k * r) / M_PI;
    default:
      if (r == 0.0) return std::numeric_limits<double>::infinity();
      return std::exp(-k * r) / (2.0 * M_PI * r);
  }
}

// ---------------------------------------------------------------------------
// Lifetime functional
// ---------------------------------------------------------------------------

Estimate survival_phi_alpha(const ProcessSpec& spec, double alpha,
                            const Pt& x) {
  spec.validate();
  if (alpha < 0.0)
    throw std::invalid_argument("survival_phi_alpha: alpha must be >= 0");
  if (spec.variant != Variant::AbsorbedBM) return Estimate::exact(0.0);
  if (!spec.in_state_space(x))
    throw std::domain_error("survival_phi_alpha: x outside the interval");
  if (alpha == 0.0) return Estimate::exact(1.0);
  const double k = std::sqrt(2.0 * alpha);
  const double mid = 0.5 * (spec.a + spec.b);
  const double u = k * std::abs(x[0] - mid);
  const double half = 0.5 * k * spec.interval_length();
  // cosh(u)/cosh(half) in overflow-safe form.
  const double v = std::exp(u - half) * (1.0 + std::exp(-2.0 * u)) /
                   (1.0 + std::exp(-2.0 * half));
  return Estimate::exact(v);
}

Estimate survival_phi_alpha_mc(const ProcessSpec& spec, double alpha,
                               const Pt& x, double horizon, double dt,
                               std::int64_t n_paths, std::uint64_t master_seed,
                               int workers) {
  spec.validate();
  auto slots = chunked_map<Welford>(
      n_paths, 1024, workers,
      [&](std::int64_t, std::int64_t b, std::int64_t e, Welford& w) {
        for (std::int64_t i = b; i < e; ++i) {
          Rng rng = path_rng(master_seed, static_cast<std::uint64_t>(i));
          double contrib = 0.0;
          walk_path(spec, x, horizon, dt, rng, [&](const Step& s) {
            if (s.dies && s.mode == KillMode::BoundaryExit)
              contrib = std::exp(-alpha * s.zeta);
          });
          w.add(contrib);
        }
      });
  Welford total;
  for (const auto& s : slots) total.merge(s);
  Estimate e = total.estimate();
  e.bias_note = "paths alive at horizon contribute 0 (cutoff <= exp(-alpha*T))";
  return e;
}

}  // namespace revuzlab
