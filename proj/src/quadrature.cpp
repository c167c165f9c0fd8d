/// @file quadrature.cpp
#include "revuzlab/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace revuzlab {
namespace {

Quad1D build_gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n >= 1 required");
  Quad1D q;
  q.nodes.resize(n);
  q.weights.resize(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    // Chebyshev-like initial guess, then Newton on P_n.
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    q.nodes[i] = -z;
    q.nodes[n - 1 - i] = z;
    const double w = 2.0 / ((1.0 - z * z) * pp * pp);
    q.weights[i] = w;
    q.weights[n - 1 - i] = w;
  }
  return q;
}

Quad1D build_gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n >= 1 required");
  Quad1D q;
  q.nodes.resize(n);
  q.weights.resize(n);
  const int m = (n + 1) / 2;
  double z = 0.0;
  std::vector<double> roots;
  for (int i = 0; i < m; ++i) {
    // Standard initial guesses for the i-th largest root.
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
    } else if (i == 1) {
      z -= 1.14 * std::pow(double(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * roots[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * roots[1];
    } else {
      z = 2.0 * z - roots[i - 2];
    }
    double pp = 0.0;
    for (int it = 0; it < 200; ++it) {
      // Orthonormal Hermite recurrence keeps values in range.
      double p0 = std::pow(M_PI, -0.25), p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = z * std::sqrt(2.0 / (j + 1.0)) * p1 -
             std::sqrt(double(j) / (j + 1.0)) * p2;
      }
      pp = std::sqrt(2.0 * n) * p1;
      const double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-14) break;
    }
    roots.push_back(z);
    q.nodes[n - 1 - i] = z;
    q.nodes[i] = -z;
    const double w = 2.0 / (pp * pp);
    q.weights[n - 1 - i] = w;
    q.weights[i] = w;
  }
  if (n % 2 == 1) q.nodes[n / 2] = 0.0;
  return q;
}

template <class Builder>
const Quad1D& cached_rule(int n, std::map<int, Quad1D>& cache, std::mutex& mu,
                          Builder build) {
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, build(n)).first;
  return it->second;
}

}  // namespace

const Quad1D& gauss_legendre(int n) {
  static std::map<int, Quad1D> cache;
  static std::mutex mu;
  return cached_rule(n, cache, mu, build_gauss_legendre);
}

const Quad1D& gauss_hermite(int n) {
  static std::map<int, Quad1D> cache;
  static std::mutex mu;
  return cached_rule(n, cache, mu, build_gauss_hermite);
}

Quad1D gauss_legendre_on(int n, double a, double b) {
  const Quad1D& base = gauss_legendre(n);
  Quad1D q;
  q.nodes.resize(n);
  q.weights.resize(n);
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  for (int i = 0; i < n; ++i) {
    q.nodes[i] = mid + half * base.nodes[i];
    q.weights[i] = half * base.weights[i];
  }
  return q;
}

double integrate_box_gauss(const Box& box, int n, const ScalarField& f) {
  std::array<Quad1D, kMaxDim> ax;
  for (int j = 0; j < box.dim; ++j) ax[j] = gauss_legendre_on(n, box.lo[j], box.hi[j]);
  double total = 0.0;
  Pt x{};
  const int d = box.dim;
  if (d == 1) {
    for (int i = 0; i < n; ++i) {
      x[0] = ax[0].nodes[i];
      total += ax[0].weights[i] * f(x);
    }
  } else if (d == 2) {
    for (int i = 0; i < n; ++i) {
      x[0] = ax[0].nodes[i];
      for (int j = 0; j < n; ++j) {
        x[1] = ax[1].nodes[j];
        total += ax[0].weights[i] * ax[1].weights[j] * f(x);
      }
    }
  } else {
    for (int i = 0; i < n; ++i) {
      x[0] = ax[0].nodes[i];
      for (int j = 0; j < n; ++j) {
        x[1] = ax[1].nodes[j];
        const double wij = ax[0].weights[i] * ax[1].weights[j];
        for (int k = 0; k < n; ++k) {
          x[2] = ax[2].nodes[k];
          total += wij * ax[2].weights[k] * f(x);
        }
      }
    }
  }
  return total;
}

namespace {

double midpoint_level(const Box& box, const ScalarField& f, const SetMask& mask,
                      int n_per_axis) {
  const int d = box.dim;
  std::array<double, kMaxDim> h{};
  for (int j = 0; j < d; ++j) h[j] = box.edge(j) / n_per_axis;
  double cell_vol = 1.0;
  for (int j = 0; j < d; ++j) cell_vol *= h[j];
  double total = 0.0;
  Pt x{};
  const auto eval = [&](const Pt& p) {
    if (mask && !mask(p)) return;
    total += f(p);
  };
  if (d == 1) {
    for (int i = 0; i < n_per_axis; ++i) {
      x[0] = box.lo[0] + (i + 0.5) * h[0];
      eval(x);
    }
  } else if (d == 2) {
    for (int i = 0; i < n_per_axis; ++i) {
      x[0] = box.lo[0] + (i + 0.5) * h[0];
      for (int j = 0; j < n_per_axis; ++j) {
        x[1] = box.lo[1] + (j + 0.5) * h[1];
        eval(x);
      }
    }
  } else {
    for (int i = 0; i < n_per_axis; ++i) {
      x[0] = box.lo[0] + (i + 0.5) * h[0];
      for (int j = 0; j < n_per_axis; ++j) {
        x[1] = box.lo[1] + (j + 0.5) * h[1];
        for (int k = 0; k < n_per_axis; ++k) {
          x[2] = box.lo[2] + (k + 0.5) * h[2];
          eval(x);
        }
      }
    }
  }
  return total * cell_vol;
}

}  // namespace

QuadResult integrate_box_masked(const Box& box, const ScalarField& f,
                                const SetMask& mask, double rel_tol,
                                int start_per_axis, int max_levels) {
  QuadResult r;
  int n = start_per_axis;
  double prev = midpoint_level(box, f, mask, n);
  r.levels = 1;
  for (int lvl = 1; lvl < max_levels; ++lvl) {
    n *= 2;
    const double cur = midpoint_level(box, f, mask, n);
    r.value = cur;
    r.est_error = std::abs(cur - prev);
    r.levels = lvl + 1;
    const double scale = std::max(std::abs(cur), 1e-300);
    if (r.est_error <= rel_tol * scale) {
      r.converged = true;
      return r;
    }
    prev = cur;
  }
  r.value = prev;
  r.converged = false;
  return r;
}

SphereGrid sphere_grid(int dim, int resolution) {
  SphereGrid g;
  if (dim == 1) {
    g.dirs = {pt(1.0), pt(-1.0)};
    g.weights = {1.0, 1.0};
  } else if (dim == 2) {
    const int m = std::max(4, resolution);
    for (int i = 0; i < m; ++i) {
      const double th = 2.0 * M_PI * (i + 0.5) / m;
      g.dirs.push_back(pt(std::cos(th), std::sin(th)));
      g.weights.push_back(2.0 * M_PI / m);
    }
  } else if (dim == 3) {
    const int nt = std::max(4, resolution);
    const int np = 2 * nt;
    const Quad1D& ct = gauss_legendre(nt);  // cos(theta) in [-1,1]
    for (int i = 0; i < nt; ++i) {
      const double c = ct.nodes[i];
      const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
      for (int j = 0; j < np; ++j) {
        const double ph = 2.0 * M_PI * (j + 0.5) / np;
        g.dirs.push_back(pt(s * std::cos(ph), s * std::sin(ph), c));
        g.weights.push_back(ct.weights[i] * 2.0 * M_PI / np);
      }
    }
  } else {
    throw std::invalid_argument("sphere_grid: dim must be 1..3");
  }
  return g;
}

QuadResult integrate_polar_shells(const Pt& center, int dim, double r0,
                                  double r1, const ScalarField& f,
                                  const SetMask& mask, double rel_tol,
                                  int max_levels) {
  if (!(r1 > r0) || r0 < 0.0)
    throw std::invalid_argument("integrate_polar_shells: need 0 <= r0 < r1");
  QuadResult out;
  double prev = 0.0;
  for (int lvl = 0; lvl < max_levels; ++lvl) {
    const int ang_res = 8 << lvl;
    const int gl_n = 8;
    const SphereGrid sph = sphere_grid(dim, ang_res);
    // Geometric shells toward the center resolve power singularities; the
    // innermost shell floor is scaled down each refinement level.
    const double rmin = r0 > 0.0 ? r0 : r1 * std::pow(2.0, -(12 + 4 * lvl));
    const int n_shell = int(std::ceil(std::log2(r1 / rmin))) + 1;
    double total = 0.0;
    double hi = r1;
    for (int sidx = 0; sidx < n_shell; ++sidx) {
      const double lo = std::max(rmin, hi * 0.5);
      const Quad1D rq = gauss_legendre_on(gl_n, lo, hi);
      for (int ir = 0; ir < gl_n; ++ir) {
        const double r = rq.nodes[ir];
        const double wr = rq.weights[ir] * std::pow(r, dim - 1);
        double ang = 0.0;
        for (size_t a = 0; a < sph.dirs.size(); ++a) {
          const Pt x = add(center, scale(sph.dirs[a], r));
          if (mask && !mask(x)) continue;
          ang += sph.weights[a] * f(x);
        }
        total += wr * ang;
      }
      hi = lo;
      if (hi <= rmin * (1.0 + 1e-12)) break;
    }
    out.value = total;
    out.levels = lvl + 1;
    if (lvl > 0) {
      out.est_error = std::abs(total - prev);
      const double scale_ = std::max(std::abs(total), 1e-300);
      if (out.est_error <= rel_tol * scale_) {
        out.converged = true;
        return out;
      }
    }
    prev = total;
  }
  out.converged = false;
  return out;
}

Pt halton(int index, int dim) {
  static const int bases[3] = {2, 3, 5};
  Pt x{};
  for (int j = 0; j < dim; ++j) {
    // Radical inverse of (index+1) in base b.
    int i = index + 1;
    double fsc = 1.0, v = 0.0;
    const int b = bases[j];
    while (i > 0) {
      fsc /= b;
      v += fsc * (i % b);
      i /= b;
    }
    x[j] = v;
  }
  return x;
}

std::pair<double, double> fit_line(const std::vector<double>& x,
                                   const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("fit_line: need >= 2 points");
  const double n = double(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  const double b = (n * sxy - sx * sy) / denom;
  const double a = (sy - b * sx) / n;
  return {a, b};
}

}  // namespace revuzlab
