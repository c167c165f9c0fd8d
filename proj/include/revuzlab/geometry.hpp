/// @file geometry.hpp
/// @brief Small fixed-capacity points and axis-aligned boxes for state spaces
///        of dimension 1..3.
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace revuzlab {

inline constexpr int kMaxDim = 3;

/// Point in R^d, d <= 3; unused coordinates stay zero so norms over the full
/// array are safe.
using Pt = std::array<double, kMaxDim>;

inline Pt pt(double x) { return Pt{x, 0.0, 0.0}; }
inline Pt pt(double x, double y) { return Pt{x, y, 0.0}; }
inline Pt pt(double x, double y, double z) { return Pt{x, y, z}; }

inline Pt sub(const Pt& a, const Pt& b) {
  return Pt{a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Pt add(const Pt& a, const Pt& b) {
  return Pt{a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Pt scale(const Pt& a, double s) { return Pt{a[0] * s, a[1] * s, a[2] * s}; }

inline double dot(const Pt& a, const Pt& b, int dim) {
  double s = 0.0;
  for (int j = 0; j < dim; ++j) s += a[j] * b[j];
  return s;
}
inline double norm2(const Pt& a, int dim) { return dot(a, a, dim); }
inline double norm(const Pt& a, int dim) { return std::sqrt(norm2(a, dim)); }
inline double dist(const Pt& a, const Pt& b, int dim) {
  return norm(sub(a, b), dim);
}

/// Closed axis-aligned box [lo, hi]^dim.
struct Box {
  int dim = 1;
  Pt lo{};
  Pt hi{};

  static Box cube(int dim, double half_width, const Pt& center = Pt{}) {
    Box b;
    b.dim = dim;
    for (int j = 0; j < dim; ++j) {
      b.lo[j] = center[j] - half_width;
      b.hi[j] = center[j] + half_width;
    }
    return b;
  }
  static Box interval(double a, double b) {
    Box bx;
    bx.dim = 1;
    bx.lo[0] = a;
    bx.hi[0] = b;
    return bx;
  }

  double edge(int j) const { return hi[j] - lo[j]; }
  double volume() const {
    double v = 1.0;
    for (int j = 0; j < dim; ++j) v *= edge(j);
    return v;
  }
  bool contains(const Pt& x) const {
    for (int j = 0; j < dim; ++j)
      if (x[j] < lo[j] || x[j] > hi[j]) return false;
    return true;
  }
  Pt center() const {
    Pt c{};
    for (int j = 0; j < dim; ++j) c[j] = 0.5 * (lo[j] + hi[j]);
    return c;
  }
  /// Longest diagonal, used to size bump radii relative to a region.
  double diameter() const {
    double s = 0.0;
    for (int j = 0; j < dim; ++j) s += edge(j) * edge(j);
    return std::sqrt(s);
  }
  /// Smallest box containing both (dims must agree).
  static Box hull(const Box& a, const Box& b) {
    if (a.dim != b.dim) throw std::invalid_argument("Box::hull: dim mismatch");
    Box h = a;
    for (int j = 0; j < a.dim; ++j) {
      h.lo[j] = std::min(a.lo[j], b.lo[j]);
      h.hi[j] = std::max(a.hi[j], b.hi[j]);
    }
    return h;
  }
  /// Axis-wise overlap; a disjoint pair collapses to a zero-volume box.
  static Box intersect(const Box& a, const Box& b) {
    if (a.dim != b.dim)
      throw std::invalid_argument("Box::intersect: dim mismatch");
    Box c = a;
    for (int j = 0; j < a.dim; ++j) {
      c.lo[j] = std::max(a.lo[j], b.lo[j]);
      c.hi[j] = std::max(c.lo[j], std::min(a.hi[j], b.hi[j]));
    }
    return c;
  }
  /// Grow by the same margin on every side.
  Box inflated(double margin) const {
    Box b = *this;
    for (int j = 0; j < dim; ++j) {
      b.lo[j] -= margin;
      b.hi[j] += margin;
    }
    return b;
  }
};

/// Surface area of the unit sphere S^{d-1}: 2, 2*pi, 4*pi for d = 1, 2, 3.
inline double unit_sphere_area(int dim) {
  switch (dim) {
    case 1: return 2.0;
    case 2: return 2.0 * M_PI;
    case 3: return 4.0 * M_PI;
    default: throw std::invalid_argument("unit_sphere_area: dim must be 1..3");
  }
}

/// Volume of the ball of radius r in R^d.
inline double ball_volume(int dim, double r) {
  return unit_sphere_area(dim) * std::pow(r, dim) / dim;
}

}  // namespace revuzlab
