/// @file measure.cpp
/// @brief Set descriptors, density families, the singular series system,
///        measure variants, and quadrature masses with divergence detection.
#include "revuzlab/measure.hpp"

#include <algorithm>
#include <cmath>

namespace revuzlab {

namespace {

nlohmann::json pt_to_json(const Pt& p, int dim) {
  nlohmann::json a = nlohmann::json::array();
  for (int k = 0; k < dim; ++k) a.push_back(p[k]);
  return a;
}

Pt pt_from_json(const nlohmann::json& j) {
  Pt p{};
  if (j.size() > kMaxDim)
    throw std::invalid_argument("point: more than 3 coordinates");
  for (std::size_t k = 0; k < j.size(); ++k) p[k] = j[k].get<double>();
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Set descriptors
// ---------------------------------------------------------------------------

SetSpec set_ball(int dim, const Pt& center, double r) {
  if (!(r >= 0.0)) throw std::invalid_argument("set_ball: r must be >= 0");
  SetSpec s;
  s.dim = dim;
  s.box = Box::cube(dim, r, center);
  const Pt c = center;
  s.member = [c, r, dim](const Pt& x) { return dist(x, c, dim) <= r; };
  s.label = "ball(r=" + std::to_string(r) + ")";
  s.jform = nlohmann::json{
      {"kind", "ball"}, {"dim", dim}, {"center", pt_to_json(center, dim)},
      {"r", r}};
  return s;
}

SetSpec set_box(const Box& b) {
  SetSpec s;
  s.dim = b.dim;
  s.box = b;
  const Box bb = b;
  s.member = [bb](const Pt& x) { return bb.contains(x); };
  s.label = "box";
  nlohmann::json lo = nlohmann::json::array(), hi = nlohmann::json::array();
  for (int k = 0; k < b.dim; ++k) {
    lo.push_back(b.lo[k]);
    hi.push_back(b.hi[k]);
  }
  s.jform = nlohmann::json{{"kind", "box"}, {"lo", lo}, {"hi", hi}};
  return s;
}

SetSpec set_annulus(int dim, const Pt& center, double r0, double r1) {
  if (!(0.0 <= r0 && r0 <= r1))
    throw std::invalid_argument("set_annulus: need 0 <= r0 <= r1");
  SetSpec s;
  s.dim = dim;
  s.box = Box::cube(dim, r1, center);
  const Pt c = center;
  s.member = [c, r0, r1, dim](const Pt& x) {
    const double r = dist(x, c, dim);
    return r0 <= r && r <= r1;
  };
  s.label = "annulus(" + std::to_string(r0) + "," + std::to_string(r1) + ")";
  s.jform = nlohmann::json{{"kind", "annulus"},
                           {"dim", dim},
                           {"center", pt_to_json(center, dim)},
                           {"r0", r0},
                           {"r1", r1}};
  return s;
}

SetSpec set_intersect(const SetSpec& a, const SetSpec& b) {
  SetSpec s;
  s.dim = a.dim;
  s.box = Box::intersect(a.box, b.box);
  const SetMask ma = a.member, mb = b.member;
  s.member = [ma, mb](const Pt& x) { return ma(x) && mb(x); };
  s.label = a.label + " & " + b.label;
  return s;
}

SetSpec set_union(const SetSpec& a, const SetSpec& b) {
  SetSpec s;
  s.dim = a.dim;
  s.box = Box::hull(a.box, b.box);
  const SetMask ma = a.member, mb = b.member;
  s.member = [ma, mb](const Pt& x) { return ma(x) || mb(x); };
  s.label = a.label + " | " + b.label;
  return s;
}

SetSpec set_difference(const SetSpec& a, const SetSpec& b) {
  SetSpec s;
  s.dim = a.dim;
  s.box = a.box;
  const SetMask ma = a.member, mb = b.member;
  s.member = [ma, mb](const Pt& x) { return ma(x) && !mb(x); };
  s.label = a.label + " \\ " + b.label;
  return s;
}

SetSpec set_empty(int dim) {
  SetSpec s;
  s.dim = dim;
  s.box = Box::cube(dim, 0.0);
  s.member = [](const Pt&) { return false; };
  s.label = "empty";
  s.jform = nlohmann::json{{"kind", "empty"}, {"dim", dim}};
  return s;
}

nlohmann::json set_to_json(const SetSpec& s) {
  if (!s.jform)
    throw std::invalid_argument(
        "set_to_json: combinator-built sets are not serializable");
  return *s.jform;
}

SetSpec set_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "ball")
    return set_ball(j.at("dim").get<int>(), pt_from_json(j.at("center")),
                    j.at("r").get<double>());
  if (kind == "box") {
    Box b;
    const auto& lo = j.at("lo");
    const auto& hi = j.at("hi");
    b.dim = static_cast<int>(lo.size());
    for (int k = 0; k < b.dim; ++k) {
      b.lo[k] = lo[k].get<double>();
      b.hi[k] = hi[k].get<double>();
    }
    return set_box(b);
  }
  if (kind == "annulus")
    return set_annulus(j.at("dim").get<int>(), pt_from_json(j.at("center")),
                       j.at("r0").get<double>(), j.at("r1").get<double>());
  if (kind == "empty") return set_empty(j.at("dim").get<int>());
  if (kind == "nest_member")
    return nest_member(NestSpec::from_json(j.at("nest")),
                       j.at("level").get<int>());
  throw std::invalid_argument("set_from_json: unknown kind " + kind);
}

// ---------------------------------------------------------------------------
// Series system
// ---------------------------------------------------------------------------

double SeriesSystem::density(const Pt& x) const {
  double sum = 0.0;
  for (int j = 0; j < count; ++j) {
    const double r = dist(x, centers[j], dim);
    if (r == 0.0) return std::numeric_limits<double>::infinity();
    sum += coeffs[j] * std::pow(r, -exponents[j]);
  }
  return sum;
}

std::shared_ptr<const SeriesSystem> SeriesSystem::standard(int dim,
                                                           int count) {
  auto sys = std::make_shared<SeriesSystem>();
  sys->dim = dim;
  sys->count = count;
  // Centers: dyadic-rational points of [-1,1]^dim, enumerated generation by
  // generation (denominator 2^g, new numerators odd), lexicographic within
  // a generation.
  for (int g = 0; static_cast<int>(sys->centers.size()) < count && g < 12;
       ++g) {
    const int den = 1 << g;
    // A lattice point k/2^g is new at generation g when g = 0 or at least
    // one numerator is odd.  Lexicographic order within the generation.
    std::vector<int> idx(dim, -den);
    for (;;) {
      bool fresh = g == 0;
      Pt p{};
      for (int k = 0; k < dim; ++k) {
        p[k] = double(idx[k]) / den;
        if (idx[k] % 2 != 0) fresh = true;
      }
      if (fresh) {
        sys->centers.push_back(p);
        if (static_cast<int>(sys->centers.size()) == count) break;
      }
      int k = dim - 1;
      while (k >= 0 && ++idx[k] > den) {
        idx[k] = -den;
        --k;
      }
      if (k < 0) break;
    }
  }
  if (static_cast<int>(sys->centers.size()) < count)
    throw std::invalid_argument("SeriesSystem: count too large");

  for (int j = 0; j < count; ++j) {
    const int level = j + 1;
    const double alpha = dim + 1.0;
    // Clearance: distance from the center to the level-`level` member of
    // its own nest (either its removed-ball radius, or — when the center
    // lies outside the ambient ball of that level — the distance to it).
    const double rn = norm(sys->centers[j], dim);
    const double clearance =
        rn <= double(level) ? sys->radius(j, level) : rn - double(level);
    sys->exponents.push_back(alpha);
    sys->coeffs.push_back(std::ldexp(1.0, -level) * std::pow(clearance, alpha));
  }
  return sys;
}

// ---------------------------------------------------------------------------
// Density families
// ---------------------------------------------------------------------------

DensityFamily DensityFamily::constant(double c) {
  DensityFamily f;
  f.kind = Kind::Constant;
  f.c = c;
  return f;
}

DensityFamily DensityFamily::radial_power(double c, const Pt& center,
                                          double beta) {
  DensityFamily f;
  f.kind = Kind::RadialPower;
  f.c = c;
  f.center = center;
  f.beta = beta;
  return f;
}

DensityFamily DensityFamily::truncated_radial_power(double c, const Pt& center,
                                                    double beta, double cap) {
  DensityFamily f = radial_power(c, center, beta);
  f.kind = Kind::TruncatedRadialPower;
  f.cap = cap;
  return f;
}

DensityFamily DensityFamily::make_series(std::shared_ptr<const SeriesSystem> sys) {
  DensityFamily f;
  f.kind = Kind::Series;
  f.series = std::move(sys);
  return f;
}

DensityFamily DensityFamily::gauss_bump(int /*dim*/, double amp,
                                        const Pt& center, double width) {
  if (!(width > 0.0))
    throw std::invalid_argument("gauss_bump: width must be > 0");
  DensityFamily f;
  f.kind = Kind::GaussBump;
  f.c = amp;
  f.center = center;
  f.width = width;
  return f;
}

double DensityFamily::eval(int dim, const Pt& x) const {
  switch (kind) {
    case Kind::Constant:
      return c;
    case Kind::RadialPower: {
      const double r = dist(x, center, dim);
      if (r == 0.0 && beta > 0.0)
        return std::numeric_limits<double>::infinity();
      return c * std::pow(r, -beta);
    }
    case Kind::TruncatedRadialPower: {
      const double r = dist(x, center, dim);
      const double v = r == 0.0 && beta > 0.0
                           ? std::numeric_limits<double>::infinity()
                           : std::pow(r, -beta);
      return c * std::min(v, cap);
    }
    case Kind::Series:
      return series->density(x);
    case Kind::GaussBump: {
      const double r2 = norm2(sub(x, center), dim);
      return c * std::exp(-r2 / (2.0 * width * width));
    }
    case Kind::Custom:
      return custom(x);
  }
  return 0.0;
}

nlohmann::json DensityFamily::to_json() const {
  switch (kind) {
    case Kind::Constant:
      return {{"kind", "constant"}, {"c", c}};
    case Kind::RadialPower:
      return {{"kind", "radial_power"},
              {"c", c},
              {"center", pt_to_json(center, kMaxDim)},
              {"beta", beta}};
    case Kind::TruncatedRadialPower:
      return {{"kind", "truncated_radial_power"},
              {"c", c},
              {"center", pt_to_json(center, kMaxDim)},
              {"beta", beta},
              {"cap", cap}};
    case Kind::Series:
      return {{"kind", "series"},
              {"dim", series->dim},
              {"count", series->count}};
    case Kind::GaussBump:
      return {{"kind", "gauss_bump"},
              {"amp", c},
              {"center", pt_to_json(center, kMaxDim)},
              {"width", width}};
    case Kind::Custom:
      throw std::invalid_argument(
          "DensityFamily: custom functions are not serializable");
  }
  return {};
}

DensityFamily DensityFamily::from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "constant") return constant(j.at("c").get<double>());
  if (kind == "radial_power")
    return radial_power(j.at("c").get<double>(), pt_from_json(j.at("center")),
                        j.at("beta").get<double>());
  if (kind == "truncated_radial_power")
    return truncated_radial_power(
        j.at("c").get<double>(), pt_from_json(j.at("center")),
        j.at("beta").get<double>(), j.at("cap").get<double>());
  if (kind == "series")
    return make_series(
        SeriesSystem::standard(j.at("dim").get<int>(), j.at("count").get<int>()));
  if (kind == "gauss_bump")
    return gauss_bump(0, j.at("amp").get<double>(),
                      pt_from_json(j.at("center")), j.at("width").get<double>());
  throw std::invalid_argument("DensityFamily: unknown kind " + kind);
}

// ---------------------------------------------------------------------------
// Measure variants
// ---------------------------------------------------------------------------

SmoothMeasureSpec measure_density(int dim, DensityFamily f) {
  SmoothMeasureSpec m;
  m.kind = SmoothMeasureSpec::Kind::Density;
  m.dim = dim;
  m.family = std::move(f);
  return m;
}

SmoothMeasureSpec measure_lebesgue(int dim) {
  return measure_density(dim, DensityFamily::constant(1.0));
}

SmoothMeasureSpec measure_hyperplane(int dim, int coord) {
  if (dim < 2)
    throw std::invalid_argument("measure_hyperplane: needs d >= 2");
  if (coord < 0 || coord >= dim)
    throw std::invalid_argument("measure_hyperplane: bad coordinate");
  SmoothMeasureSpec m;
  m.kind = SmoothMeasureSpec::Kind::Hyperplane;
  m.dim = dim;
  m.hyper_coord = coord;
  return m;
}

SmoothMeasureSpec measure_dirac(double point) {
  SmoothMeasureSpec m;
  m.kind = SmoothMeasureSpec::Kind::Dirac;
  m.dim = 1;
  m.dirac_point = point;
  return m;
}

SmoothMeasureSpec measure_scaled(double c, SmoothMeasureSpec inner) {
  if (!(c >= 0.0)) throw std::invalid_argument("measure_scaled: c must be >= 0");
  SmoothMeasureSpec m;
  m.kind = SmoothMeasureSpec::Kind::Scaled;
  m.dim = inner.dim;
  m.scale = c;
  m.parts.push_back(std::move(inner));
  return m;
}

SmoothMeasureSpec measure_sum(std::vector<SmoothMeasureSpec> parts) {
  if (parts.empty()) throw std::invalid_argument("measure_sum: empty list");
  SmoothMeasureSpec m;
  m.kind = SmoothMeasureSpec::Kind::Sum;
  m.dim = parts.front().dim;
  for (const auto& p : parts)
    if (p.dim != m.dim)
      throw std::invalid_argument("measure_sum: mixed dimensions");
  m.parts = std::move(parts);
  return m;
}

SmoothMeasureSpec measure_restricted(SmoothMeasureSpec inner, SetSpec set) {
  SmoothMeasureSpec m;
  m.kind = SmoothMeasureSpec::Kind::Restricted;
  m.dim = inner.dim;
  m.set = std::make_shared<const SetSpec>(std::move(set));
  m.parts.push_back(std::move(inner));
  return m;
}

std::string SmoothMeasureSpec::label() const {
  switch (kind) {
    case Kind::Density:
      switch (family.kind) {
        case DensityFamily::Kind::Constant:
          return std::to_string(family.c) + "*lebesgue(d=" +
                 std::to_string(dim) + ")";
        case DensityFamily::Kind::RadialPower:
          return "radial_power(beta=" + std::to_string(family.beta) + ")";
        case DensityFamily::Kind::TruncatedRadialPower:
          return "trunc_radial_power(beta=" + std::to_string(family.beta) +
                 ",cap=" + std::to_string(family.cap) + ")";
        case DensityFamily::Kind::Series:
          return "series(J=" + std::to_string(family.series->count) + ")";
        case DensityFamily::Kind::GaussBump:
          return "gauss_bump(w=" + std::to_string(family.width) + ")";
        case DensityFamily::Kind::Custom:
          return "custom(" + family.custom_tag + ")";
      }
      return "density";
    case Kind::Hyperplane:
      return "hyperplane(x" + std::to_string(hyper_coord) + "=0)";
    case Kind::Dirac:
      return "dirac(" + std::to_string(dirac_point) + ")";
    case Kind::Scaled:
      return std::to_string(scale) + "*" + parts[0].label();
    case Kind::Sum:
      return "sum(" + std::to_string(parts.size()) + ")";
    case Kind::Restricted:
      return parts[0].label() + "|" + set->label;
  }
  return "?";
}

nlohmann::json SmoothMeasureSpec::to_json() const {
  switch (kind) {
    case Kind::Density:
      return {{"kind", "density"}, {"dim", dim}, {"family", family.to_json()}};
    case Kind::Hyperplane:
      return {{"kind", "hyperplane"}, {"dim", dim}, {"coord", hyper_coord}};
    case Kind::Dirac:
      return {{"kind", "dirac"}, {"point", dirac_point}};
    case Kind::Scaled:
      return {{"kind", "scaled"}, {"c", scale}, {"inner", parts[0].to_json()}};
    case Kind::Sum: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& p : parts) arr.push_back(p.to_json());
      return {{"kind", "sum"}, {"parts", arr}};
    }
    case Kind::Restricted:
      return {{"kind", "restricted"},
              {"inner", parts[0].to_json()},
              {"set", set_to_json(*set)}};
  }
  return {};
}

SmoothMeasureSpec SmoothMeasureSpec::from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "density")
    return measure_density(j.at("dim").get<int>(),
                           DensityFamily::from_json(j.at("family")));
  if (kind == "hyperplane")
    return measure_hyperplane(j.at("dim").get<int>(), j.at("coord").get<int>());
  if (kind == "dirac") return measure_dirac(j.at("point").get<double>());
  if (kind == "scaled")
    return measure_scaled(j.at("c").get<double>(), from_json(j.at("inner")));
  if (kind == "sum") {
    std::vector<SmoothMeasureSpec> parts;
    for (const auto& p : j.at("parts")) parts.push_back(from_json(p));
    return measure_sum(std::move(parts));
  }
  if (kind == "restricted")
    return measure_restricted(from_json(j.at("inner")),
                              set_from_json(j.at("set")));
  throw std::invalid_argument("SmoothMeasureSpec: unknown kind " + kind);
}

bool has_density(const SmoothMeasureSpec& mu) {
  switch (mu.kind) {
    case SmoothMeasureSpec::Kind::Density:
      return true;
    case SmoothMeasureSpec::Kind::Hyperplane:
    case SmoothMeasureSpec::Kind::Dirac:
      return false;
    case SmoothMeasureSpec::Kind::Scaled:
    case SmoothMeasureSpec::Kind::Restricted:
      return has_density(mu.parts[0]);
    case SmoothMeasureSpec::Kind::Sum:
      return std::all_of(mu.parts.begin(), mu.parts.end(),
                         [](const auto& p) { return has_density(p); });
  }
  return false;
}

double density_eval(const SmoothMeasureSpec& mu, const Pt& x) {
  switch (mu.kind) {
    case SmoothMeasureSpec::Kind::Density:
      return mu.family.eval(mu.dim, x);
    case SmoothMeasureSpec::Kind::Hyperplane:
    case SmoothMeasureSpec::Kind::Dirac:
      throw std::invalid_argument(
          "density_eval: measure has no density against Lebesgue");
    case SmoothMeasureSpec::Kind::Scaled:
      return mu.scale == 0.0 ? 0.0 : mu.scale * density_eval(mu.parts[0], x);
    case SmoothMeasureSpec::Kind::Sum: {
      double s = 0.0;
      for (const auto& p : mu.parts) s += density_eval(p, x);
      return s;
    }
    case SmoothMeasureSpec::Kind::Restricted:
      return mu.set->contains(x) ? density_eval(mu.parts[0], x) : 0.0;
  }
  return 0.0;
}

std::vector<SingularCenter> singular_centers(const SmoothMeasureSpec& mu) {
  std::vector<SingularCenter> out;
  switch (mu.kind) {
    case SmoothMeasureSpec::Kind::Density:
      switch (mu.family.kind) {
        case DensityFamily::Kind::RadialPower:
          if (mu.family.beta > 0.0)
            out.push_back({mu.family.center, mu.family.beta});
          break;
        case DensityFamily::Kind::Series:
          for (int j = 0; j < mu.family.series->count; ++j)
            out.push_back({mu.family.series->centers[j],
                           mu.family.series->exponents[j]});
          break;
        default:
          break;
      }
      break;
    case SmoothMeasureSpec::Kind::Scaled:
      if (mu.scale > 0.0) return singular_centers(mu.parts[0]);
      break;
    case SmoothMeasureSpec::Kind::Sum:
      for (const auto& p : mu.parts)
        for (const auto& c : singular_centers(p)) out.push_back(c);
      break;
    case SmoothMeasureSpec::Kind::Restricted:
      return singular_centers(mu.parts[0]);
    default:
      break;
  }
  return out;
}

std::vector<SingularCenter> refinement_centers(const SmoothMeasureSpec& mu) {
  std::vector<SingularCenter> out = singular_centers(mu);
  switch (mu.kind) {
    case SmoothMeasureSpec::Kind::Density:
      if (mu.family.kind == DensityFamily::Kind::TruncatedRadialPower &&
          mu.family.beta > 0.0)
        out.push_back({mu.family.center, mu.family.beta});
      break;
    case SmoothMeasureSpec::Kind::Scaled:
      if (mu.scale > 0.0) return refinement_centers(mu.parts[0]);
      break;
    case SmoothMeasureSpec::Kind::Sum: {
      out.clear();
      for (const auto& p : mu.parts)
        for (const auto& c : refinement_centers(p)) out.push_back(c);
      break;
    }
    case SmoothMeasureSpec::Kind::Restricted:
      return refinement_centers(mu.parts[0]);
    default:
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadrature mass
// ---------------------------------------------------------------------------

namespace {

/// Embeds a (d-1)-dimensional point into the hyperplane {x_coord = 0}.
Pt embed_slice(const Pt& u, int dim, int coord) {
  Pt x{};
  int src = 0;
  for (int k = 0; k < dim; ++k) x[k] = k == coord ? 0.0 : u[src++];
  return x;
}

/// Cap integral around a center with known local exponent beta < dim.
/// Radial Gauss-Legendre in t = r^{dim-beta} makes the rule exact for the
/// pure power (the transformed integrand is constant), so even nearly
/// critical exponents keep their full mass; the angular grid is refined
/// until stable.
QuadResult polar_cap_power(const Pt& center, int dim, double beta,
                           double r_cap, const Fn& f, const SetMask& mask,
                           double rel_tol, int max_levels) {
  const double gamma = double(dim) - beta;
  // Points closer to the center than its floating-point granularity cannot
  // be formed, so below r_eps the density is continued by its local power:
  // the inner mass is f(r_eps dir) r_eps^dim / gamma per direction.
  const double r_eps = std::min(1e-9, 0.5 * r_cap);
  const Quad1D q =
      gauss_legendre_on(24, std::pow(r_eps, gamma), std::pow(r_cap, gamma));
  QuadResult out;
  double prev = 0.0;
  for (int lvl = 0; lvl < max_levels; ++lvl) {
    const SphereGrid sph = sphere_grid(dim, 8 << lvl);
    double total = 0.0;
    for (std::size_t a = 0; a < sph.dirs.size(); ++a) {
      const Pt x = add(center, scale(sph.dirs[a], r_eps));
      if (mask && !mask(x)) continue;
      total += sph.weights[a] * f(x) * std::pow(r_eps, dim) / gamma;
    }
    for (std::size_t i = 0; i < q.nodes.size(); ++i) {
      const double t = q.nodes[i];
      const double r = std::pow(t, 1.0 / gamma);
      const double jac = std::pow(t, double(dim) / gamma - 1.0) / gamma;
      double ang = 0.0;
      for (std::size_t a = 0; a < sph.dirs.size(); ++a) {
        const Pt x = add(center, scale(sph.dirs[a], r));
        if (mask && !mask(x)) continue;
        ang += sph.weights[a] * f(x);
      }
      total += q.weights[i] * jac * ang;
    }
    out.value = total;
    out.levels = lvl + 1;
    if (lvl > 0) {
      out.est_error = std::abs(total - prev);
      if (out.est_error <= rel_tol * std::max(std::abs(total), 1e-300)) {
        out.converged = true;
        return out;
      }
    }
    prev = total;
  }
  out.converged = false;
  return out;
}

Estimate density_mass(const SmoothMeasureSpec& mu, const SetSpec& B,
                      const QuadConfig& cfg) {
  const int dim = mu.dim;
  const Fn f = [&mu](const Pt& x) { return density_eval(mu, x); };

  // Divergence detection: a local exponent >= d whose center carries
  // membership makes the integral infinite.
  std::vector<SingularCenter> centers;
  for (const auto& c : singular_centers(mu)) {
    if (c.exponent >= double(dim) && B.contains(c.where)) {
      Estimate e;
      e.value = std::numeric_limits<double>::infinity();
      e.se = 0.0;
      e.n = 0;
      e.bias_note = "non-integrable singularity inside the set";
      return e;
    }
    // Keep centers near enough to the box to matter for quadrature.
    if (B.box.inflated(0.25 * B.box.diameter()).contains(c.where))
      centers.push_back(c);
  }

  // Detection radius: a fraction of the box diameter, shrunk so polar caps
  // around distinct centers cannot overlap.
  double r_det = cfg.polar_fraction * B.box.diameter();
  for (std::size_t i = 0; i < centers.size(); ++i)
    for (std::size_t j = i + 1; j < centers.size(); ++j)
      r_det = std::min(
          r_det, 0.45 * dist(centers[i].where, centers[j].where, dim));

  Estimate total = Estimate::exact(0.0);
  SetMask outside_caps = B.member;
  if (!centers.empty() && r_det > 0.0) {
    std::vector<Pt> caps;
    for (const auto& c : centers) caps.push_back(c.where);
    const SetMask base = B.member;
    const double rd = r_det;
    outside_caps = [base, caps, rd, dim](const Pt& x) {
      if (!base(x)) return false;
      for (const auto& c : caps)
        if (dist(x, c, dim) < rd) return false;
      return true;
    };
    for (const auto& c : centers) {
      // Integrable exponents get the power-transformed rule (keeps the
      // full mass near the center); super-critical ones, only reachable
      // here with the center outside B, fall back to geometric shells.
      QuadResult polar =
          c.exponent < double(dim)
              ? polar_cap_power(c.where, dim, c.exponent, r_det, f, B.member,
                                cfg.rel_tol, cfg.max_levels)
              : integrate_polar_shells(c.where, dim, 0.0, r_det, f, B.member,
                                       cfg.rel_tol, cfg.max_levels);
      total = total + polar.estimate("polar cap");
    }

    // With a single center, extend the exact radial treatment outward to
    // the largest probed sphere that stays inside B.  The midpoint grid is
    // then left only with the region where the integrand is already tame,
    // and the radial cut coincides with a shell boundary.
    if (centers.size() == 1) {
      const Pt c0 = centers[0].where;
      const double r_reach =
          0.5 * B.box.diameter() + dist(c0, B.box.center(), dim) + 1e-12;
      const SphereGrid probe = sphere_grid(dim, dim == 3 ? 24 : 256);
      const auto sphere_inside = [&](double r) {
        for (const auto& dir : probe.dirs)
          if (!B.contains(add(c0, scale(dir, r)))) return false;
        return true;
      };
      double r_in = r_det;
      if (sphere_inside(r_det)) {
        double good = r_det;
        while (good < r_reach &&
               sphere_inside(std::min(2.0 * good, r_reach)))
          good = std::min(2.0 * good, r_reach);
        if (good < r_reach) {
          double bad = std::min(2.0 * good, r_reach);
          for (int it = 0; it < 60; ++it) {
            const double m = 0.5 * (good + bad);
            (sphere_inside(m) ? good : bad) = m;
          }
        }
        r_in = good;
      }
      if (r_in > r_det * (1.0 + 1e-9)) {
        QuadResult ring = integrate_polar_shells(
            c0, dim, r_det, r_in, f, B.member, cfg.rel_tol, cfg.max_levels);
        total = total + ring.estimate("polar ring");
        const SetMask outer = outside_caps;
        const double ri = r_in;
        outside_caps = [outer, c0, ri, dim](const Pt& x) {
          return dist(x, c0, dim) > ri && outer(x);
        };
      }
    }
  }

  // d=3 midpoint grids grow like n^3; cap the refinement depth there.
  const int levels = dim == 3 ? std::min(cfg.max_levels, 4) : cfg.max_levels;
  QuadResult bulk = integrate_box_masked(B.box, f, outside_caps, cfg.rel_tol,
                                         cfg.start_grid, levels);
  total = total + bulk.estimate("masked midpoint");
  total.n = 1;
  return total;
}

}  // namespace

Estimate measure_of_set(const SmoothMeasureSpec& mu, const SetSpec& B,
                        const QuadConfig& cfg) {
  switch (mu.kind) {
    case SmoothMeasureSpec::Kind::Density:
      return density_mass(mu, B, cfg);
    case SmoothMeasureSpec::Kind::Dirac:
      return Estimate::exact(B.contains(pt(mu.dirac_point)) ? 1.0 : 0.0);
    case SmoothMeasureSpec::Kind::Hyperplane: {
      const int dim = mu.dim, coord = mu.hyper_coord;
      if (B.box.lo[coord] > 0.0 || B.box.hi[coord] < 0.0)
        return Estimate::exact(0.0);
      Box slice;
      slice.dim = dim - 1;
      int dst = 0;
      for (int k = 0; k < dim; ++k) {
        if (k == coord) continue;
        slice.lo[dst] = B.box.lo[k];
        slice.hi[dst] = B.box.hi[k];
        dst++;
      }
      const SetMask member = B.member;
      const SetMask sliced = [member, dim, coord](const Pt& u) {
        return member(embed_slice(u, dim, coord));
      };
      if (dim == 2) {
        // 1-D slice: resolve membership intervals directly, bisecting each
        // boundary crossing to machine precision.
        const double lo = slice.lo[0], hi = slice.hi[0];
        const int cells = 4096;
        const double w = (hi - lo) / cells;
        const auto inside = [&sliced](double u) { return sliced(pt(u)); };
        double len = 0.0;
        bool in0 = inside(lo);
        for (int i = 0; i < cells; ++i) {
          const double a = lo + i * w, b = lo + (i + 1) * w;
          const bool in1 = inside(b);
          if (in0 && in1) {
            len += b - a;
          } else if (in0 != in1) {
            double x0 = a, x1 = b;  // inside(x0) == in0 throughout
            for (int it = 0; it < 50; ++it) {
              const double m = 0.5 * (x0 + x1);
              (inside(m) == in0 ? x0 : x1) = m;
            }
            const double c = 0.5 * (x0 + x1);
            len += in0 ? c - a : b - c;
          }
          in0 = in1;
        }
        Estimate e = Estimate::exact(len);
        e.bias_note = "slice interval scan";
        return e;
      }
      QuadResult r = integrate_box_masked(
          slice, [](const Pt&) { return 1.0; }, sliced, cfg.rel_tol,
          cfg.start_grid, cfg.max_levels);
      return r.estimate("hyperplane slice");
    }
    case SmoothMeasureSpec::Kind::Scaled: {
      if (mu.scale == 0.0) return Estimate::exact(0.0);
      return measure_of_set(mu.parts[0], B, cfg).scaled(mu.scale);
    }
    case SmoothMeasureSpec::Kind::Sum: {
      Estimate total = Estimate::exact(0.0);
      for (const auto& p : mu.parts) total = total + measure_of_set(p, B, cfg);
      return total;
    }
    case SmoothMeasureSpec::Kind::Restricted:
      return measure_of_set(mu.parts[0], set_intersect(B, *mu.set), cfg);
  }
  return Estimate::exact(0.0);
}

}  // namespace revuzlab
