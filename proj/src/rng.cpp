/// @file rng.cpp
/// @brief Ziggurat normal sampler. Layer tables are built once at startup from
///        the equal-area recursion for n = 256 strips of exp(-x^2/2).
#include "revuzlab/rng.hpp"

#include <cmath>

namespace revuzlab {
namespace {

constexpr int kLayers = 256;
// Tail cut R and per-strip area V for the 256-layer normal ziggurat. V equals
// R*f(R) + integral_R^inf f, which closes the equal-area recursion at x ~ 0.
constexpr double kR = 3.6541528853610088;
constexpr double kV = 0.00492867323399;

struct Tables {
  // X[i] is the right edge of layer i; X[0] = V/f(R) is the virtual base
  // width, X[1] = R, and X[i] decreases to ~0 at i = kLayers.
  double X[kLayers + 1];
  double F[kLayers + 1];  // F[i] = f(X[i]) with f(x) = exp(-x^2/2)

  Tables() {
    auto f = [](double x) { return std::exp(-0.5 * x * x); };
    X[1] = kR;
    X[0] = kV / f(kR);
    F[1] = f(kR);
    F[0] = 1.0;  // unused sentinel
    for (int i = 1; i < kLayers; ++i) {
      // Layer i is [0, X[i]] x [f(X[i]), f(X[i+1])] with area V:
      //   X[i] * (f(X[i+1]) - f(X[i])) = V.
      const double fy = F[i] + kV / X[i];
      X[i + 1] = fy >= 1.0 ? 0.0 : std::sqrt(-2.0 * std::log(fy));
      F[i + 1] = f(X[i + 1]);
    }
    X[kLayers] = 0.0;
    F[kLayers] = 1.0;
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

}  // namespace

double Rng::normal() {
  const Tables& t = tables();
  for (;;) {
    const std::uint64_t r = next_u64();
    const int i = int(r & 255u);
    const double sign = (r & 256u) ? -1.0 : 1.0;
    const double u = double(r >> 11) * 0x1.0p-53;  // [0,1)
    const double x = u * t.X[i];
    if (x < t.X[i + 1]) return sign * x;  // fully inside the layer
    if (i == 0) {
      // Base layer: x landed beyond R, sample the exact normal tail.
      double xs, ys;
      do {
        xs = -std::log(uniform_pos()) / kR;
        ys = -std::log(uniform_pos());
      } while (2.0 * ys < xs * xs);
      return sign * (kR + xs);
    }
    // Wedge between the rectangle and the density.
    const double y = t.F[i] + uniform() * (t.F[i + 1] - t.F[i]);
    if (y < std::exp(-0.5 * x * x)) return sign * x;
  }
}

}  // namespace revuzlab
