/// @file nest.cpp
/// @brief Exhaustion nests: constructors, JSON forms, member sets, and the
///        Monte-Carlo nest-quality surrogate.

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "revuzlab/measure.hpp"
#include "revuzlab/parallel.hpp"
#include "revuzlab/process.hpp"
#include "revuzlab/rng.hpp"

namespace revuzlab {
namespace {

Pt nest_pt_from_json(const nlohmann::json& j) {
  Pt p{};
  for (std::size_t k = 0; k < j.size() && k < 3; ++k)
    p[k] = j[k].get<double>();
  return p;
}

nlohmann::json nest_pt_to_json(const Pt& p, int dim) {
  nlohmann::json j = nlohmann::json::array();
  for (int k = 0; k < dim; ++k) j.push_back(p[k]);
  return j;
}

void check_dim(int dim, const char* what) {
  if (dim < 1 || dim > 3)
    throw std::invalid_argument(std::string(what) + ": dim must be 1..3");
}

}  // namespace

NestSpec nest_balls(int dim, double scale) {
  check_dim(dim, "nest_balls");
  if (!(scale > 0.0))
    throw std::invalid_argument("nest_balls: scale must be > 0");
  NestSpec n;
  n.kind = NestSpec::Kind::Balls;
  n.dim = dim;
  n.scale = scale;
  return n;
}

NestSpec nest_annuli(int dim, const Pt& center) {
  check_dim(dim, "nest_annuli");
  NestSpec n;
  n.kind = NestSpec::Kind::Annuli;
  n.dim = dim;
  n.center = center;
  return n;
}

NestSpec nest_annuli_minus_balls(int dim, const Pt& center,
                                 std::vector<Pt> excluded) {
  check_dim(dim, "nest_annuli_minus_balls");
  if (excluded.empty())
    throw std::invalid_argument(
        "nest_annuli_minus_balls: need at least one excluded center");
  NestSpec n;
  n.kind = NestSpec::Kind::AnnuliMinusBalls;
  n.dim = dim;
  n.center = center;
  n.excluded = std::move(excluded);
  return n;
}

NestSpec nest_series(std::shared_ptr<const SeriesSystem> sys) {
  if (!sys) throw std::invalid_argument("nest_series: null system");
  NestSpec n;
  n.kind = NestSpec::Kind::SeriesNest;
  n.dim = sys->dim;
  n.series = std::move(sys);
  return n;
}

NestSpec nest_intersect(const NestSpec& a, const NestSpec& b) {
  if (a.dim != b.dim)
    throw std::invalid_argument("nest_intersect: dimension mismatch");
  NestSpec n;
  n.kind = NestSpec::Kind::Intersect;
  n.dim = a.dim;
  n.left = std::make_shared<NestSpec>(a);
  n.right = std::make_shared<NestSpec>(b);
  return n;
}

std::string NestSpec::label() const {
  switch (kind) {
    case Kind::Balls:
      return "balls(d=" + std::to_string(dim) +
             ",scale=" + std::to_string(scale) + ")";
    case Kind::Annuli:
      return "annuli(d=" + std::to_string(dim) + ")";
    case Kind::AnnuliMinusBalls:
      return "annuli_minus_balls(d=" + std::to_string(dim) +
             ",holes=" + std::to_string(excluded.size()) + ")";
    case Kind::SeriesNest:
      return "series_nest(d=" + std::to_string(dim) +
             ",count=" + std::to_string(series ? series->count : 0) + ")";
    case Kind::Intersect:
      return "intersect(" + left->label() + "," + right->label() + ")";
  }
  return "nest";
}

nlohmann::json NestSpec::to_json() const {
  switch (kind) {
    case Kind::Balls:
      return {{"kind", "balls"}, {"dim", dim}, {"scale", scale}};
    case Kind::Annuli:
      return {{"kind", "annuli"},
              {"dim", dim},
              {"center", nest_pt_to_json(center, dim)}};
    case Kind::AnnuliMinusBalls: {
      nlohmann::json ex = nlohmann::json::array();
      for (const auto& p : excluded) ex.push_back(nest_pt_to_json(p, dim));
      return {{"kind", "annuli_minus_balls"},
              {"dim", dim},
              {"center", nest_pt_to_json(center, dim)},
              {"excluded", ex}};
    }
    case Kind::SeriesNest:
      // Only the standard calibrated instance round-trips.
      return {{"kind", "series_nest"},
              {"dim", dim},
              {"count", series ? series->count : 0}};
    case Kind::Intersect:
      return {{"kind", "intersect"},
              {"left", left->to_json()},
              {"right", right->to_json()}};
  }
  return nullptr;
}

NestSpec NestSpec::from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "balls")
    return nest_balls(j.at("dim").get<int>(), j.at("scale").get<double>());
  if (kind == "annuli")
    return nest_annuli(j.at("dim").get<int>(),
                       nest_pt_from_json(j.at("center")));
  if (kind == "annuli_minus_balls") {
    std::vector<Pt> ex;
    for (const auto& p : j.at("excluded")) ex.push_back(nest_pt_from_json(p));
    return nest_annuli_minus_balls(j.at("dim").get<int>(),
                                   nest_pt_from_json(j.at("center")),
                                   std::move(ex));
  }
  if (kind == "series_nest")
    return nest_series(SeriesSystem::standard(j.at("dim").get<int>(),
                                              j.at("count").get<int>()));
  if (kind == "intersect")
    return nest_intersect(NestSpec::from_json(j.at("left")),
                          NestSpec::from_json(j.at("right")));
  throw std::invalid_argument("NestSpec: unknown kind " + kind);
}

SetSpec nest_member(const NestSpec& nest, int ell) {
  if (ell < 1)
    throw std::invalid_argument("nest_member: level must be >= 1");
  const double L = double(ell);
  const int dim = nest.dim;
  SetSpec s;
  s.dim = dim;
  switch (nest.kind) {
    case NestSpec::Kind::Balls: {
      const double r = nest.scale * L;
      s.box = Box::cube(dim, r);
      s.member = [r, dim](const Pt& x) { return norm(x, dim) <= r; };
      break;
    }
    case NestSpec::Kind::Annuli: {
      const Pt a = nest.center;
      const double r0 = 1.0 / L;
      s.box = Box::cube(dim, L, a);
      s.member = [a, dim, r0, L](const Pt& x) {
        const double r = dist(x, a, dim);
        return r >= r0 && r <= L;
      };
      break;
    }
    case NestSpec::Kind::AnnuliMinusBalls: {
      const Pt a = nest.center;
      const std::vector<Pt> holes = nest.excluded;
      const double r0 = 1.0 / L;
      s.box = Box::cube(dim, L, a);
      s.member = [a, holes, dim, r0, L](const Pt& x) {
        if (dist(x, a, dim) > L) return false;
        for (const auto& h : holes)
          if (dist(x, h, dim) < r0) return false;
        return true;
      };
      break;
    }
    case NestSpec::Kind::SeriesNest: {
      // Level l keeps the ambient ball of radius l minus the open wells:
      // radius index 2l around the first l centers, j around the j-th
      // center beyond that, so every well shrinks to its center as l grows.
      auto sys = nest.series;
      s.box = Box::cube(dim, L);
      s.member = [sys, dim, ell, L](const Pt& x) {
        if (norm(x, dim) > L) return false;
        for (int j = 0; j < sys->count; ++j) {
          const int jj = j + 1;
          const int k = jj <= ell ? 2 * ell : jj;
          if (dist(x, sys->centers[j], dim) < sys->radius(j, k)) return false;
        }
        return true;
      };
      break;
    }
    case NestSpec::Kind::Intersect: {
      s = set_intersect(nest_member(*nest.left, ell),
                        nest_member(*nest.right, ell));
      break;
    }
  }
  s.label = nest.label() + "[" + std::to_string(ell) + "]";
  s.jform = nlohmann::json{
      {"kind", "nest_member"}, {"nest", nest.to_json()}, {"level", ell}};
  return s;
}

Estimate nest_quality(const NestSpec& nest, const ProcessSpec& process,
                      const SetSpec& K, int ell, double T, double dt,
                      int grid_per_axis, std::int64_t paths_per_start,
                      std::uint64_t master_seed, int workers) {
  if (nest.dim != process.dim || K.dim != process.dim)
    throw std::invalid_argument("nest_quality: dimension mismatch");
  if (grid_per_axis < 1 || paths_per_start < 1)
    throw std::invalid_argument("nest_quality: empty sampling plan");
  const SetSpec F = nest_member(nest, ell);

  // Start lattice: cell midpoints of K's bounding box, kept when they lie
  // in K and in the state space.
  std::vector<Pt> starts;
  const int dim = process.dim;
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  for (;;) {
    Pt x{};
    for (int k = 0; k < dim; ++k) {
      const double w = K.box.edge(k) / grid_per_axis;
      x[k] = K.box.lo[k] + (idx[static_cast<std::size_t>(k)] + 0.5) * w;
    }
    if (K.contains(x) && process.in_state_space(x)) starts.push_back(x);
    int k = dim - 1;
    while (k >= 0 && ++idx[static_cast<std::size_t>(k)] == grid_per_axis) {
      idx[static_cast<std::size_t>(k)] = 0;
      --k;
    }
    if (k < 0) break;
  }
  if (starts.empty()) {
    Estimate e = Estimate::exact(0.0);
    e.bias_note = "start grid missed the compact set";
    return e;
  }

  // One hit counter per start; a path scores when some visited state lies
  // in K but outside the level-ell member.
  std::vector<std::int64_t> hits(starts.size(), 0);
  parallel_for(static_cast<std::int64_t>(starts.size()), workers,
               [&](std::int64_t si) {
                 const Pt x0 = starts[static_cast<std::size_t>(si)];
                 std::int64_t h = 0;
                 for (std::int64_t p = 0; p < paths_per_start; ++p) {
                   Rng rng = tagged_rng(master_seed, 0x71,
                                        static_cast<std::uint64_t>(si),
                                        static_cast<std::uint64_t>(p));
                   bool hit = K.contains(x0) && !F.contains(x0);
                   walk_path(process, x0, T, dt, rng, [&](const Step& s) {
                     if (hit || s.dies) return;
                     if (K.contains(s.x1) && !F.contains(s.x1)) hit = true;
                   });
                   if (hit) ++h;
                 }
                 hits[static_cast<std::size_t>(si)] = h;
               });

  std::int64_t best = 0;
  for (const auto h : hits) best = std::max(best, h);
  const double n = double(paths_per_start);
  const double p = double(best) / n;
  Estimate e;
  e.value = p;
  e.se = std::sqrt(std::max(p * (1.0 - p), 1.0 / n) / n);
  e.n = paths_per_start;
  e.bias_note = "max over a start grid of " + std::to_string(starts.size()) +
                " points";
  return e;
}

}  // namespace revuzlab
