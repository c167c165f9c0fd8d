/// @file test_core.cpp
/// @brief Random-stream and quadrature foundations checked against closed
///        forms: normal moments and tails, scheduling-independent streams,
///        polynomial exactness of the Gauss rules, masked-box and polar-shell
///        integrals of known areas and radial powers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "revuzlab/estimate.hpp"
#include "revuzlab/parallel.hpp"
#include "revuzlab/quadrature.hpp"
#include "revuzlab/rng.hpp"

using namespace revuzlab;

TEST_CASE("normal sampler: moments match N(0,1)") {
  Rng rng(12345);
  const int n = 4'000'000;
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s1 += z;
    s2 += z * z;
    s3 += z * z * z;
    s4 += z * z * z * z;
  }
  const double m1 = s1 / n, m2 = s2 / n, m3 = s3 / n, m4 = s4 / n;
  // 5-sigma acceptance bands around the exact moments 0, 1, 0, 3.
  CHECK(std::abs(m1) < 5.0 / std::sqrt(double(n)));
  CHECK(std::abs(m2 - 1.0) < 5.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(m3) < 5.0 * std::sqrt(15.0 / n));
  CHECK(std::abs(m4 - 3.0) < 5.0 * std::sqrt(96.0 / n));
}

TEST_CASE("normal sampler: cdf bins including the ziggurat tail") {
  Rng rng(777);
  const int n = 4'000'000;
  const double edges[] = {-3.8, -2.0, -1.0, -0.3, 0.0, 0.6, 1.5, 2.5, 3.8};
  const int k = 10;
  std::vector<long> counts(k, 0);
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    int b = 0;
    while (b < k - 2 && z >= edges[b]) ++b;
    if (z >= edges[k - 2]) b = k - 1;
    counts[b]++;
  }
  double lo = -1e30;
  for (int b = 0; b < k; ++b) {
    const double hi = b < k - 1 ? edges[b] : 1e30;
    const double p = norm_cdf(hi) - norm_cdf(lo);
    const double se = std::sqrt(p * (1 - p) * n);
    CHECK(std::abs(counts[b] - p * n) < 6.0 * se + 3.0);
    lo = hi;
  }
}

TEST_CASE("path streams: bit-identical regardless of worker count") {
  const std::uint64_t master = 99;
  const int n_paths = 64;
  auto draw_all = [&](int workers) {
    std::vector<double> out(n_paths);
    parallel_for(n_paths, workers, [&](std::int64_t i) {
      Rng r = path_rng(master, std::uint64_t(i));
      double s = 0;
      for (int j = 0; j < 100; ++j) s += r.normal();
      out[i] = s;
    });
    return out;
  };
  const auto serial = draw_all(1);
  const auto par4 = draw_all(4);
  const auto par7 = draw_all(7);
  for (int i = 0; i < n_paths; ++i) {
    CHECK(serial[i] == par4[i]);
    CHECK(serial[i] == par7[i]);
  }
  // Distinct indices give distinct streams.
  CHECK(serial[0] != serial[1]);
}

TEST_CASE("chunked_map reduces independent of worker count") {
  auto run = [&](int workers) {
    auto slots = chunked_map<Welford>(
        100000, 1000, workers,
        [](std::int64_t, std::int64_t b, std::int64_t e, Welford& w) {
          for (std::int64_t i = b; i < e; ++i) {
            Rng r = path_rng(5, std::uint64_t(i));
            w.add(r.uniform());
          }
        });
    Welford total;
    for (const auto& s : slots) total.merge(s);
    return total;
  };
  const Welford a = run(1), b = run(5);
  CHECK(a.sum == b.sum);
  CHECK(a.sum_sq == b.sum_sq);
  CHECK(std::abs(a.mean() - 0.5) < 5.0 * a.stderr_of_mean());
}

TEST_CASE("gauss-legendre: polynomial exactness and smooth integrals") {
  for (int n : {4, 8, 16, 32}) {
    const Quad1D& q = gauss_legendre(n);
    double w_sum = 0, x2 = 0;
    for (int i = 0; i < n; ++i) {
      w_sum += q.weights[i];
      x2 += q.weights[i] * q.nodes[i] * q.nodes[i];
    }
    CHECK(w_sum == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(x2 == doctest::Approx(2.0 / 3.0).epsilon(1e-13));
  }
  // int_0^1 cos x dx = sin 1
  Quad1D q = gauss_legendre_on(16, 0.0, 1.0);
  double v = 0;
  for (int i = 0; i < 16; ++i) v += q.weights[i] * std::cos(q.nodes[i]);
  CHECK(v == doctest::Approx(std::sin(1.0)).epsilon(1e-14));
}

TEST_CASE("gauss-hermite: normal moments via substitution") {
  for (int n : {8, 16, 24, 32}) {
    const Quad1D& q = gauss_hermite(n);
    double m0 = 0, m2 = 0, m4 = 0, m6 = 0;
    for (int i = 0; i < n; ++i) {
      const double z = M_SQRT2 * q.nodes[i];  // Z ~ N(0,1)
      const double w = q.weights[i] / std::sqrt(M_PI);
      m0 += w;
      m2 += w * z * z;
      m4 += w * z * z * z * z;
      m6 += w * std::pow(z, 6);
    }
    CHECK(m0 == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m4 == doctest::Approx(3.0).epsilon(1e-12));
    if (n >= 16) CHECK(m6 == doctest::Approx(15.0).epsilon(1e-11));
  }
}

TEST_CASE("masked midpoint integration: disc area and moments") {
  Box box = Box::cube(2, 1.2);
  const auto in_disc = [](const Pt& x) { return x[0] * x[0] + x[1] * x[1] <= 1.0; };
  QuadResult area = integrate_box_masked(
      box, [](const Pt&) { return 1.0; }, in_disc, 1e-4, 16, 8);
  CHECK(area.converged);
  CHECK(area.value == doctest::Approx(M_PI).epsilon(2e-3));

  QuadResult m2 = integrate_box_masked(
      box, [](const Pt& x) { return x[0] * x[0]; }, in_disc, 1e-4, 16, 8);
  CHECK(m2.value == doctest::Approx(M_PI / 4.0).epsilon(5e-3));
}

TEST_CASE("polar shells: radial power integrals with singular center") {
  // int_{|x|<1} |x|^-beta dx in R^d equals area(S^{d-1})/(d-beta).
  for (int d : {1, 2, 3}) {
    for (double beta : {0.4, d - 0.5}) {
      const auto f = [&](const Pt& x) { return std::pow(norm(x, d), -beta); };
      QuadResult r = integrate_polar_shells(Pt{}, d, 0.0, 1.0, f, nullptr, 1e-6, 5);
      const double exact = unit_sphere_area(d) / (d - beta);
      CHECK(r.value == doctest::Approx(exact).epsilon(1e-4));
    }
  }
  // Annulus in R^2 with a mask cutting the left half-plane.
  const auto f1 = [](const Pt&) { return 1.0; };
  const auto right = [](const Pt& x) { return x[0] >= 0.0; };
  QuadResult half = integrate_polar_shells(Pt{}, 2, 0.5, 1.0, f1, right, 1e-5, 5);
  CHECK(half.value == doctest::Approx(0.5 * M_PI * (1.0 - 0.25)).epsilon(2e-3));
}

TEST_CASE("sphere grids integrate low-order harmonics exactly") {
  for (int d : {1, 2, 3}) {
    SphereGrid g = sphere_grid(d, 12);
    double s0 = 0, s2 = 0;
    for (size_t i = 0; i < g.dirs.size(); ++i) {
      s0 += g.weights[i];
      s2 += g.weights[i] * g.dirs[i][0] * g.dirs[i][0];
    }
    CHECK(s0 == doctest::Approx(unit_sphere_area(d)).epsilon(1e-12));
    CHECK(s2 == doctest::Approx(unit_sphere_area(d) / d).epsilon(1e-12));
  }
}

TEST_CASE("halton: low-discrepancy means") {
  double m0 = 0, m1 = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    Pt x = halton(i, 2);
    CHECK(x[0] >= 0.0);
    CHECK(x[0] < 1.0);
    m0 += x[0];
    m1 += x[1];
  }
  CHECK(m0 / n == doctest::Approx(0.5).epsilon(2e-3));
  CHECK(m1 / n == doctest::Approx(0.5).epsilon(2e-3));
}

TEST_CASE("fit_line recovers slope and intercept") {
  std::vector<double> x{0.1, 0.2, 0.3, 0.4}, y;
  for (double xi : x) y.push_back(2.5 - 1.25 * xi);
  auto [a, b] = fit_line(x, y);
  CHECK(a == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(b == doctest::Approx(-1.25).epsilon(1e-12));
}

TEST_CASE("estimate arithmetic and z-scores") {
  Estimate a{1.0, 0.1, 100, "a"};
  Estimate b{1.25, 0.1, 100, ""};
  CHECK(z_score(a, b) == doctest::Approx(0.25 / std::hypot(0.1, 0.1)));
  Estimate s = a + b;
  CHECK(s.value == doctest::Approx(2.25));
  CHECK(s.se == doctest::Approx(std::hypot(0.1, 0.1)));
}
