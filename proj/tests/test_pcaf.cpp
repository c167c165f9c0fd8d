/// @file test_pcaf.cpp
/// @brief Additive-functional traces checked against closed forms: exact
///        clocks for constant densities, partition and shift additivity,
///        singular-density means via the Gamma function, local-time means
///        via the reflection law, and bit-for-bit agreement between the
///        streaming evaluator and materialized traces.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "revuzlab/estimate.hpp"
#include "revuzlab/pcaf.hpp"
#include "revuzlab/quadrature.hpp"
#include "revuzlab/rng.hpp"

using namespace revuzlab;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Mean local time at distance `a` from the start after time t:
/// 2 sqrt(t) pdf(a/sqrt(t)) - 2 a cdf(-a/sqrt(t)).
double mean_local_time(double a, double t) {
  const double s = std::sqrt(t);
  return 2.0 * s * norm_pdf(a / s) - 2.0 * a * norm_cdf(-a / s);
}

}  // namespace

TEST_CASE("constant density integrates the clock exactly") {
  const ProcessSpec proc = ProcessSpec::free_bm(2);
  const PathSample path = sample_path(proc, pt(0.4, -0.2), 0.35, 0.1, 7);
  const SmoothMeasureSpec mu =
      measure_scaled(2.5, measure_lebesgue(2));
  const PcafTrace tr = integrate_density_pcaf(proc, path, mu);
  REQUIRE(tr.times.size() == path.times.size());
  CHECK(!tr.overflow);
  for (std::size_t i = 0; i < tr.times.size(); ++i)
    CHECK(tr.values[i] ==
          doctest::Approx(2.5 * tr.times[i]).epsilon(1e-13));
  // Final partial step [0.3, 0.35] is integrated, not dropped.
  CHECK(tr.times.back() == doctest::Approx(0.35));
}

TEST_CASE("killed path freezes the clock at the lifetime") {
  const ProcessSpec proc = ProcessSpec::killed_bm(1, 3.0);
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const PathSample path = sample_path(proc, pt(0.0), 2.0, 0.01, seed);
    const PcafTrace tr =
        integrate_density_pcaf(proc, path, measure_lebesgue(1));
    const double expect = std::min(path.zeta, 2.0);
    CHECK(tr.values.back() == doctest::Approx(expect).epsilon(1e-12));
    // Nondecreasing and frozen after death.
    for (std::size_t i = 0; i + 1 < tr.values.size(); ++i)
      CHECK(tr.values[i] <= tr.values[i + 1] + 1e-15);
  }
}

TEST_CASE("restriction partitions the trace increment by increment") {
  const ProcessSpec proc = ProcessSpec::free_bm(1);
  const PathSample path = sample_path(proc, pt(0.0), 1.0, 1e-3, 11);
  const PcafTrace tr =
      integrate_density_pcaf(proc, path, measure_lebesgue(1));
  const SetSpec B = set_ball(1, pt(0.0), 0.5);
  const SetSpec Bc = set_difference(set_box(Box::cube(1, 1e6)), B);
  const PcafTrace in = restrict_pcaf(path, tr, B);
  const PcafTrace out = restrict_pcaf(path, tr, Bc);
  for (std::size_t i = 0; i < tr.values.size(); ++i)
    CHECK(in.values[i] + out.values[i] ==
          doctest::Approx(tr.values[i]).epsilon(1e-12));
  CHECK(in.values.back() > 0.0);
  // The empty set wipes the trace.
  const PcafTrace none = restrict_pcaf(path, tr, set_empty(1));
  CHECK(none.values.back() == 0.0);
}

TEST_CASE("shift additivity holds to rounding for every kernel type") {
  SUBCASE("constant density on a killed path") {
    const ProcessSpec proc = ProcessSpec::killed_bm(2, 0.8);
    const PathSample path = sample_path(proc, pt(0.1, 0.1), 1.0, 1e-2, 3);
    const double r =
        additivity_check(proc, path, measure_lebesgue(2), 0.30, 0.50);
    CHECK(r <= 1e-11);
  }
  SUBCASE("refined singular density") {
    const ProcessSpec proc = ProcessSpec::free_bm(1);
    const PathSample path = sample_path(proc, pt(0.2), 1.0, 1e-2, 5);
    const SmoothMeasureSpec mu = measure_density(
        1, DensityFamily::radial_power(1.0, pt(0.0), 0.5));
    const double r = additivity_check(proc, path, mu, 0.25, 0.50);
    CHECK(r <= 1e-9);
  }
  SUBCASE("hyperplane local time") {
    const ProcessSpec proc = ProcessSpec::free_bm(2);
    const PathSample path = sample_path(proc, pt(0.0, 0.0), 1.0, 1e-3, 9);
    const double r =
        additivity_check(proc, path, measure_hyperplane(2, 0), 0.2, 0.6);
    CHECK(r <= 1e-11);
  }
}

TEST_CASE("singular radial density matches its Gamma-function mean") {
  // E0[int_0^1 |W_s|^{-1/2} ds] = (4/3) E|Z|^{-1/2}
  //                             = (4/3) 2^{-1/4} Gamma(1/4) / sqrt(pi).
  const double truth =
      4.0 / 3.0 * std::pow(2.0, -0.25) * std::tgamma(0.25) / std::sqrt(M_PI);
  const ProcessSpec proc = ProcessSpec::free_bm(1);
  const SmoothMeasureSpec mu =
      measure_density(1, DensityFamily::radial_power(1.0, pt(0.0), 0.5));
  const std::int64_t n = 4000;
  Welford acc;
  bool saw_refinement = false;
  for (std::int64_t i = 0; i < n; ++i) {
    const PathSample path =
        sample_path(proc, pt(0.0), 1.0, 1e-3, 1000 + std::uint64_t(i));
    const PcafTrace tr =
        integrate_density_pcaf(proc, path, mu, {}, 0xABCD, std::uint64_t(i));
    acc.add(tr.values.back());
    for (char f : tr.refined) saw_refinement = saw_refinement || f != 0;
  }
  CHECK(saw_refinement);
  const Estimate e = acc.estimate();
  // 3 sigma plus a small discretization allowance for the trapezoid tail.
  CHECK(std::fabs(e.value - truth) <= 3.0 * e.se + 0.05);
}

TEST_CASE("refinement deepens the effective grid without new path draws") {
  // Coarse vs 16x finer steps agree on the singular integral within MC
  // noise, showing the bridge refinement supplies the missing resolution.
  const ProcessSpec proc = ProcessSpec::free_bm(1);
  const SmoothMeasureSpec mu =
      measure_density(1, DensityFamily::radial_power(1.0, pt(0.0), 0.5));
  Welford coarse, fine;
  for (std::int64_t i = 0; i < 600; ++i) {
    const auto p1 = sample_path(proc, pt(0.0), 1.0, 4e-3, 50 + std::uint64_t(i));
    const auto p2 =
        sample_path(proc, pt(0.0), 1.0, 2.5e-4, 9050 + std::uint64_t(i));
    coarse.add(
        integrate_density_pcaf(proc, p1, mu, {}, 1, std::uint64_t(i)).values.back());
    fine.add(
        integrate_density_pcaf(proc, p2, mu, {}, 2, std::uint64_t(i)).values.back());
  }
  const Estimate a = coarse.estimate(), b = fine.estimate();
  CHECK(std::fabs(a.value - b.value) <= 3.0 * (a.se + b.se) + 0.06);
}

TEST_CASE("local time at the start matches the reflection law") {
  // d = 2 hyperplane through the start: mean sqrt(2/pi) at t = 1.
  const ProcessSpec proc = ProcessSpec::free_bm(2);
  const SmoothMeasureSpec mu = measure_hyperplane(2, 0);
  Welford acc;
  for (std::int64_t i = 0; i < 3000; ++i) {
    const PathSample path =
        sample_path(proc, pt(0.0, 0.0), 1.0, 1e-3, 300 + std::uint64_t(i));
    acc.add(local_time_pcaf(proc, path, mu, 0.2).values.back());
  }
  const Estimate e = acc.estimate();
  const double truth = std::sqrt(2.0 / M_PI);
  CHECK(std::fabs(e.value - truth) <= 3.5 * e.se);
}

TEST_CASE("point local time away from the start matches the shifted law") {
  const ProcessSpec proc = ProcessSpec::free_bm(1);
  const SmoothMeasureSpec mu = measure_dirac(0.3);
  Welford acc;
  for (std::int64_t i = 0; i < 3000; ++i) {
    const PathSample path =
        sample_path(proc, pt(0.0), 1.0, 1e-3, 7000 + std::uint64_t(i));
    acc.add(local_time_pcaf(proc, path, mu, 0.2).values.back());
  }
  const Estimate e = acc.estimate();
  CHECK(std::fabs(e.value - mean_local_time(0.3, 1.0)) <= 3.5 * e.se);
}

TEST_CASE("local time vanishes when the path keeps its distance") {
  const ProcessSpec proc = ProcessSpec::free_bm(2);
  const SmoothMeasureSpec mu = measure_hyperplane(2, 0);
  const PathSample path = sample_path(proc, pt(5.0, 0.0), 0.5, 1e-3, 21);
  double closest = kInf;
  for (std::size_t i = 0; i < path.states.size(); ++i)
    closest = std::min(closest, std::fabs(path.states[i][0]));
  const double eps = 0.5 * closest;
  REQUIRE(eps > 0.0);
  const PcafTrace tr = local_time_pcaf(proc, path, mu, eps);
  for (double v : tr.values) CHECK(v == 0.0);
}

TEST_CASE("laplace functional at rate zero telescopes the trace") {
  const ProcessSpec proc = ProcessSpec::free_bm(1);
  const PathSample path = sample_path(proc, pt(0.0), 1.0, 1e-3, 31);
  const SmoothMeasureSpec mu = measure_density(
      1, DensityFamily::gauss_bump(1, 2.0, pt(0.0), 0.7));
  const PcafTrace tr = integrate_density_pcaf(proc, path, mu);
  const double whole = laplace_functional(tr, 0.0, 0.0, kInf);
  CHECK(whole == doctest::Approx(tr.values.back()).epsilon(1e-12));
  const double part = laplace_functional(tr, 0.0, 0.2, 0.7);
  const std::size_t i0 = 200, i1 = 700;
  CHECK(part ==
        doctest::Approx(tr.values[i1] - tr.values[i0]).epsilon(1e-12));
  CHECK_THROWS_AS(laplace_functional(tr, 1.0, 0.00037, kInf),
                  std::invalid_argument);
}

TEST_CASE("discounted clock matches the closed-form midpoint rule") {
  const double alpha = 1.3, T = 1.0, c = 2.0;
  const ProcessSpec proc = ProcessSpec::free_bm(1);
  const PathSample path = sample_path(proc, pt(0.0), T, 1e-3, 41);
  const PcafTrace tr = integrate_density_pcaf(
      proc, path, measure_scaled(c, measure_lebesgue(1)));
  const double got = laplace_functional(tr, alpha, 0.0, kInf);
  const double truth = c * (1.0 - std::exp(-alpha * T)) / alpha;
  CHECK(got == doctest::Approx(truth).epsilon(1e-6));
  // A unit weight must reproduce the plain functional exactly.
  const Fn one = [](const Pt&) { return 1.0; };
  CHECK(weighted_laplace(tr, path, one, alpha, 0.0, kInf) == got);
}

TEST_CASE("grid total variation separates scaled clocks") {
  const ProcessSpec proc = ProcessSpec::free_bm(1);
  const PathSample path = sample_path(proc, pt(0.0), 1.0, 1e-3, 51);
  const PcafTrace a =
      integrate_density_pcaf(proc, path, measure_lebesgue(1));
  const PcafTrace b = integrate_density_pcaf(
      proc, path, measure_scaled(3.0, measure_lebesgue(1)));
  CHECK(total_variation_diff(a, a, 1.0) == 0.0);
  CHECK(total_variation_diff(a, b, 1.0) ==
        doctest::Approx(2.0 * 1.0).epsilon(1e-12));
  CHECK(total_variation_diff(a, b, 0.5) ==
        doctest::Approx(2.0 * 0.5).epsilon(1e-12));
}

TEST_CASE("sum and scale kernels agree with combined traces") {
  const ProcessSpec proc = ProcessSpec::free_bm(1);
  const PathSample path = sample_path(proc, pt(0.3), 1.0, 1e-2, 61);
  const SmoothMeasureSpec bump =
      measure_density(1, DensityFamily::gauss_bump(1, 1.5, pt(0.2), 0.5));
  const SmoothMeasureSpec combo = measure_sum(
      {measure_scaled(2.0, measure_lebesgue(1)), bump});
  const PcafTrace sum = integrate_density_pcaf(proc, path, combo);
  const PcafTrace lhs1 =
      integrate_density_pcaf(proc, path, measure_lebesgue(1));
  const PcafTrace lhs2 = integrate_density_pcaf(proc, path, bump);
  for (std::size_t i = 0; i < sum.values.size(); ++i)
    CHECK(sum.values[i] ==
          doctest::Approx(2.0 * lhs1.values[i] + lhs2.values[i])
              .epsilon(1e-12));
}

TEST_CASE("streaming evaluator equals the materialized trace bit for bit") {
  const ProcessSpec proc = ProcessSpec::killed_bm(2, 0.9);
  const Pt x0 = pt(0.1, -0.3);
  const double T = 1.0, dt = 1e-3, alpha = 0.7;
  const SmoothMeasureSpec mu = measure_sum(
      {measure_density(2, DensityFamily::gauss_bump(2, 1.0, pt(0.0, 0.0), 0.8)),
       measure_scaled(0.5, measure_lebesgue(2))});
  const Fn g = [](const Pt& x) { return 1.0 + x[0] * x[0]; };

  for (std::uint64_t seed : {5ULL, 8ULL, 12ULL, 23ULL}) {
    const PathSample path = sample_path(proc, x0, T, dt, seed);
    const PcafTrace tr = integrate_density_pcaf(proc, path, mu, {}, 77, seed);

    PcafStreamConfig cfg;
    cfg.alpha = alpha;
    cfg.grid = {0.25, 0.5, 0.75, 1.0};
    cfg.time_weight_t = T;
    cfg.weight_g = g;
    PcafStream stream(proc, mu, {}, cfg, 77, seed);
    Rng rng(seed);
    walk_path(proc, x0, T, dt, rng,
              [&](const Step& s) { stream.on_step(s); });

    CHECK(stream.total() == tr.values.back());
    CHECK(stream.laplace() == laplace_functional(tr, alpha, 0.0, kInf));
    CHECK(stream.weighted() ==
          weighted_laplace(tr, path, g, alpha, 0.0, kInf));
    for (std::size_t j = 0; j < cfg.grid.size(); ++j) {
      const std::size_t gi = std::size_t(std::lround(cfg.grid[j] / dt));
      CHECK(stream.at_grid()[j] == tr.values[gi]);
      CHECK(stream.laplace_at_grid()[j] ==
            laplace_functional(tr, alpha, 0.0, cfg.grid[j]));
    }
    // Time-weighted accumulator equals the trace-side midpoint sum.
    double tw = 0.0;
    for (std::size_t i = 0; i + 1 < tr.times.size(); ++i) {
      const double d = tr.values[i + 1] - tr.values[i];
      if (d != 0.0) tw += (T - 0.5 * (tr.times[i] + tr.times[i + 1])) * d;
    }
    CHECK(stream.time_weighted() == tw);
  }
}

TEST_CASE("streaming restriction filters by attributed state") {
  const ProcessSpec proc = ProcessSpec::free_bm(2);
  const Pt x0 = pt(0.0, 0.0);
  const SmoothMeasureSpec mu = measure_hyperplane(2, 0);
  const auto B = std::make_shared<SetSpec>(set_ball(2, pt(0.0, 0.0), 0.6));

  PcafStreamConfig cfg;
  cfg.restrict_to = B;
  SubstepRule rule;
  rule.local_eps = 0.2;
  PcafStream restricted(proc, mu, rule, cfg, 0, 0);
  PcafStream plain(proc, mu, rule, {}, 0, 0);
  Rng r1(17), r2(17);
  walk_path(proc, x0, 1.0, 1e-3, r1,
            [&](const Step& s) { restricted.on_step(s); });
  walk_path(proc, x0, 1.0, 1e-3, r2,
            [&](const Step& s) { plain.on_step(s); });
  CHECK(restricted.total() <= plain.total());
  CHECK(restricted.total() > 0.0);
}

TEST_CASE("center hits overflow in-band instead of poisoning the trace") {
  const ProcessSpec proc = ProcessSpec::free_bm(1);
  const PathSample path = sample_path(proc, pt(0.0), 0.1, 1e-2, 71);
  const SmoothMeasureSpec mu =
      measure_density(1, DensityFamily::radial_power(1.0, pt(0.0), 0.5));
  const PcafTrace tr = integrate_density_pcaf(proc, path, mu);
  CHECK(tr.overflow);
  for (double v : tr.values) CHECK(std::isfinite(v));
}

TEST_CASE("argument errors are rejected") {
  const ProcessSpec proc = ProcessSpec::free_bm(2);
  const PathSample path = sample_path(proc, pt(0.0, 0.0), 0.5, 1e-2, 81);
  const SmoothMeasureSpec plane = measure_hyperplane(2, 0);
  CHECK_THROWS_AS(local_time_pcaf(proc, path, plane, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(local_time_pcaf(proc, path, measure_lebesgue(2), 0.1),
                  std::invalid_argument);
  CHECK_THROWS_AS(integrate_density_pcaf(proc, path, plane),
                  std::invalid_argument);
  // Local time needs conservative free paths.
  CHECK_THROWS_AS(make_step_kernel(ProcessSpec::killed_bm(2, 1.0), plane,
                                   {}, 0, 0),
                  std::invalid_argument);
  // Dimension mismatch.
  CHECK_THROWS_AS(
      integrate_density_pcaf(proc, path, measure_lebesgue(1)),
      std::invalid_argument);
}

TEST_CASE("trace csv lists the grid") {
  const ProcessSpec proc = ProcessSpec::free_bm(1);
  const PathSample path = sample_path(proc, pt(0.0), 0.03, 1e-2, 91);
  const PcafTrace tr =
      integrate_density_pcaf(proc, path, measure_lebesgue(1));
  std::ostringstream os;
  write_trace_csv(os, tr);
  const std::string text = os.str();
  CHECK(text.rfind("t,value\n", 0) == 0);
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n' ? 1 : 0;
  CHECK(lines == tr.times.size() + 1);
}
