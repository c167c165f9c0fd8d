/// @file test_process.cpp
/// @brief Process catalog checked against closed forms: Gaussian kernels,
///        survival laws, the interval eigen-expansion as an independent
///        oracle for the image-charge series, resolvent kernel vs
///        time-quadrature duality, and the lifetime functional.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "revuzlab/process.hpp"
#include "revuzlab/quadrature.hpp"

using namespace revuzlab;

namespace {

/// Dirichlet eigen-expansion of the interval density: independent oracle for
/// the image-charge series.
double eigen_density(double a, double b, double t, double x, double y) {
  const double L = b - a;
  double sum = 0.0;
  for (int k = 1; k <= 2000; ++k) {
    const double lam = 0.5 * k * k * M_PI * M_PI / (L * L);
    const double term = std::exp(-lam * t) *
                        std::sin(k * M_PI * (x - a) / L) *
                        std::sin(k * M_PI * (y - a) / L);
    sum += term;
    if (std::exp(-lam * t) < 1e-16) break;
  }
  return 2.0 / L * sum;
}

}  // namespace

TEST_CASE("spec json round-trip and validation") {
  for (const ProcessSpec& s :
       {ProcessSpec::free_bm(2), ProcessSpec::killed_bm(1, 0.5),
        ProcessSpec::absorbed_bm(-0.3, 1.7)}) {
    ProcessSpec back = ProcessSpec::from_json(s.to_json());
    CHECK(back.variant == s.variant);
    CHECK(back.dim == s.dim);
    CHECK(back.kill_c == s.kill_c);
    CHECK(back.a == s.a);
    CHECK(back.b == s.b);
  }
  CHECK_THROWS_AS(ProcessSpec::absorbed_bm(1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(ProcessSpec::killed_bm(1, -0.2), std::invalid_argument);
  CHECK_THROWS_AS(ProcessSpec::free_bm(4), std::invalid_argument);
}

TEST_CASE("free paths: conservative, reproducible, correct increments") {
  ProcessSpec spec = ProcessSpec::free_bm(2);
  PathSample p = sample_path(spec, pt(0.5, -0.5), 1.0, 0.01, 42);
  CHECK(p.zeta == std::numeric_limits<double>::infinity());
  CHECK(p.kill_mode == KillMode::None);
  CHECK(p.times.size() == 101);
  CHECK(p.alive_count == 101);
  CHECK(p.times.front() == 0.0);
  CHECK(p.times.back() == doctest::Approx(1.0));

  PathSample q = sample_path(spec, pt(0.5, -0.5), 1.0, 0.01, 42);
  for (size_t i = 0; i < p.states.size(); ++i) {
    CHECK(p.states[i][0] == q.states[i][0]);
    CHECK(p.states[i][1] == q.states[i][1]);
  }

  // Pooled increment variance per unit time should be 1 per coordinate.
  double s2 = 0;
  long n = 0;
  for (int path = 0; path < 200; ++path) {
    PathSample r = sample_path(spec, pt(0.0, 0.0), 1.0, 0.01, 1000 + path);
    for (size_t i = 1; i < r.states.size(); ++i) {
      const double h = r.times[i] - r.times[i - 1];
      for (int k = 0; k < 2; ++k) {
        const double d = r.states[i][k] - r.states[i - 1][k];
        s2 += d * d / h;
        n++;
      }
    }
  }
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("killed paths follow the analytic survival law") {
  const double c = 0.7, t = 1.0;
  ProcessSpec spec = ProcessSpec::killed_bm(1, c);
  const long n = 100000;
  long alive = 0;
  for (long i = 0; i < n; ++i) {
    PathSample p = sample_path(spec, pt(0.0), t, 0.01,
                               7000000 + static_cast<std::uint64_t>(i));
    if (!p.dead()) {
      alive++;
    } else {
      CHECK(p.kill_mode == KillMode::InteriorKill);
      CHECK(p.zeta <= t);
    }
  }
  const double p_surv = std::exp(-c * t);
  const double se = std::sqrt(p_surv * (1 - p_surv) / n);
  CHECK(std::abs(double(alive) / n - p_surv) < 3.0 * se);
}

TEST_CASE("absorbed paths stay inside until boundary exit") {
  ProcessSpec spec = ProcessSpec::absorbed_bm(0.0, 1.0);
  int exits = 0;
  for (int i = 0; i < 500; ++i) {
    PathSample p = sample_path(spec, pt(0.5), 2.0, 1e-3, 31000 + i);
    for (size_t j = 0; j < p.alive_count; ++j) {
      CHECK(p.states[j][0] > 0.0);
      CHECK(p.states[j][0] < 1.0);
    }
    for (size_t j = p.alive_count; j < p.states.size(); ++j)
      CHECK(is_cemetery(p.states[j]));
    if (p.dead()) {
      CHECK(p.kill_mode == KillMode::BoundaryExit);
      const double bpt = p.death_point[0];
      CHECK((bpt == 0.0 || bpt == 1.0));
      exits++;
    }
  }
  // By t = 2 nearly every path has left (slowest mode decays like
  // exp(-pi^2 t / 2) ~ 5e-5).
  CHECK(exits >= 495);
  CHECK_THROWS_AS(sample_path(spec, pt(1.5), 1.0, 0.01, 1),
                  std::domain_error);
}

TEST_CASE("transition density: closed forms and symmetry") {
  ProcessSpec free1 = ProcessSpec::free_bm(1);
  CHECK(transition_density(free1, 1.0, pt(0.3), pt(0.3)) ==
        doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-14));

  ProcessSpec killed = ProcessSpec::killed_bm(2, 0.4);
  ProcessSpec free2 = ProcessSpec::free_bm(2);
  for (double t : {0.1, 1.0, 3.0}) {
    const Pt x = pt(0.2, -0.7), y = pt(-1.0, 0.4);
    CHECK(transition_density(killed, t, x, y) ==
          doctest::Approx(std::exp(-0.4 * t) *
                          transition_density(free2, t, x, y))
              .epsilon(1e-13));
    CHECK(transition_density(killed, t, x, y) ==
          doctest::Approx(transition_density(killed, t, y, x)).epsilon(1e-13));
  }
  CHECK_THROWS_AS(transition_density(free1, 0.0, pt(0.0), pt(0.0)),
                  std::invalid_argument);
}

TEST_CASE("absorbed density: image series matches the eigen-expansion") {
  const double a = -0.2, b = 1.1;
  ProcessSpec spec = ProcessSpec::absorbed_bm(a, b);
  for (double t : {0.01, 0.1, 0.5, 2.0, 10.0}) {
    for (double x : {0.0, 0.3, 0.9}) {
      for (double y : {-0.1, 0.5, 1.0}) {
        const double img = transition_density(spec, t, pt(x), pt(y));
        const double eig = eigen_density(a, b, t, x, y);
        CHECK(img == doctest::Approx(eig).epsilon(1e-9));
        CHECK(img == doctest::Approx(transition_density(spec, t, pt(y), pt(x)))
                         .epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("semigroup: conservativeness, killing factor, strong continuity") {
  const Fn one = [](const Pt&) { return 1.0; };
  Estimate e1 = semigroup_apply(ProcessSpec::free_bm(2), 0.7, one, pt(0.3, 0.1));
  CHECK(e1.value == doctest::Approx(1.0).epsilon(1e-12));

  Estimate e2 =
      semigroup_apply(ProcessSpec::killed_bm(1, 0.5), 0.9, one, pt(0.0));
  CHECK(e2.value == doctest::Approx(std::exp(-0.45)).epsilon(1e-12));

  const Fn bump = [](const Pt& x) {
    return std::exp(-8.0 * (x[0] - 0.2) * (x[0] - 0.2));
  };
  Estimate e3 = semigroup_apply(ProcessSpec::free_bm(1), 1e-5, bump, pt(0.2));
  CHECK(e3.value == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("semigroup on the interval: folding matches density quadrature") {
  const double a = 0.0, b = 1.0;
  ProcessSpec spec = ProcessSpec::absorbed_bm(a, b);
  const Fn g = [](const Pt& x) { return x[0] * (1.5 - x[0]); };
  for (double t : {0.05, 0.3, 1.0}) {
    for (double x : {0.25, 0.6}) {
      Estimate fold = semigroup_apply(spec, t, g, pt(x), 48);
      Quad1D q = gauss_legendre_on(64, a, b);
      double direct = 0.0;
      for (int i = 0; i < 64; ++i)
        direct += q.weights[i] * transition_density(spec, t, pt(x), pt(q.nodes[i])) *
                  g(pt(q.nodes[i]));
      CHECK(fold.value == doctest::Approx(direct).epsilon(5e-6));
    }
  }
}

TEST_CASE("resolvent: conservative and killed closed values") {
  const Fn one = [](const Pt&) { return 1.0; };
  Estimate r1 = resolvent(ProcessSpec::free_bm(1), 1.3, one, pt(0.4));
  CHECK(r1.value == doctest::Approx(1.0 / 1.3).epsilon(1e-8));

  Estimate r2 = resolvent(ProcessSpec::killed_bm(2, 0.5), 1.0, one, pt(0.1, 0.2));
  CHECK(r2.value == doctest::Approx(1.0 / 1.5).epsilon(1e-8));
}

TEST_CASE("resolvent kernel route agrees with time quadrature (d=1)") {
  ProcessSpec spec = ProcessSpec::free_bm(1);
  const double alpha = 0.8;
  const Fn f = [](const Pt& x) { return std::exp(-x[0] * x[0]); };
  const double x0 = 0.3;

  double kernel_route = 0.0;
  for (auto [lo, hi] : {std::pair{x0 - 12.0, x0}, std::pair{x0, x0 + 12.0}}) {
    Quad1D q = gauss_legendre_on(96, lo, hi);
    for (int i = 0; i < 96; ++i)
      kernel_route += q.weights[i] *
                      resolvent_kernel(spec, alpha, pt(x0), pt(q.nodes[i])) *
                      f(pt(q.nodes[i]));
  }

  Estimate time_route = resolvent(spec, alpha, f, pt(x0), 96, 48);
  CHECK(kernel_route ==
        doctest::Approx(time_route.value).epsilon(5e-6));
}

TEST_CASE("resolvent kernels: killed shift and d=2,3 small-r forms") {
  // Killed kernel equals the free kernel at shifted frequency.
  ProcessSpec k1 = ProcessSpec::killed_bm(1, 0.7);
  ProcessSpec f1 = ProcessSpec::free_bm(1);
  CHECK(resolvent_kernel(k1, 1.0, pt(0.0), pt(0.5)) ==
        doctest::Approx(resolvent_kernel(f1, 1.7, pt(0.0), pt(0.5)))
            .epsilon(1e-14));
  // d=3: e^{-sqrt(2a) r} / (2 pi r).
  ProcessSpec f3 = ProcessSpec::free_bm(3);
  const double r = 0.25, al = 1.0;
  CHECK(resolvent_kernel(f3, al, pt(0, 0, 0), pt(r, 0, 0)) ==
        doctest::Approx(std::exp(-std::sqrt(2.0 * al) * r) / (2 * M_PI * r))
            .epsilon(1e-14));
  // d=2 integrates to 1/alpha over the plane: int K0(kr)/pi r dr dtheta =
  // (2/k^2) * int K0(u) u du = 2/k^2 = 1/alpha.
  ProcessSpec f2 = ProcessSpec::free_bm(2);
  Quad1D q = gauss_legendre_on(200, 1e-6, 20.0);
  double total = 0.0;
  for (int i = 0; i < 200; ++i)
    total += q.weights[i] * 2.0 * M_PI * q.nodes[i] *
             resolvent_kernel(f2, 1.0, pt(0, 0), pt(q.nodes[i], 0));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("interval resolvent kernel integrates to (1 - phi_alpha)/alpha") {
  ProcessSpec spec = ProcessSpec::absorbed_bm(0.0, 1.0);
  const double alpha = 1.0;
  for (double x : {0.2, 0.5, 0.85}) {
    double r1 = 0.0;
    for (auto [lo, hi] : {std::pair{0.0, x}, std::pair{x, 1.0}}) {
      Quad1D q = gauss_legendre_on(48, lo, hi);
      for (int i = 0; i < 48; ++i)
        r1 += q.weights[i] *
              resolvent_kernel(spec, alpha, pt(x), pt(q.nodes[i]));
    }
    const double phi = survival_phi_alpha(spec, alpha, pt(x)).value;
    CHECK(r1 == doctest::Approx((1.0 - phi) / alpha).epsilon(1e-10));
  }
}

TEST_CASE("lifetime functional: zero off the interval catalog, cosh on it") {
  CHECK(survival_phi_alpha(ProcessSpec::free_bm(3), 2.0, pt(0, 0, 0)).value ==
        0.0);
  CHECK(survival_phi_alpha(ProcessSpec::killed_bm(1, 1.0), 2.0, pt(0.0)).value ==
        0.0);
  ProcessSpec spec = ProcessSpec::absorbed_bm(0.0, 1.0);
  CHECK(survival_phi_alpha(spec, 0.0, pt(0.3)).value == 1.0);
  const double k = std::sqrt(2.0);
  CHECK(survival_phi_alpha(spec, 1.0, pt(0.5)).value ==
        doctest::Approx(1.0 / std::cosh(0.5 * k)).epsilon(1e-14));
  CHECK(survival_phi_alpha(spec, 1.0, pt(0.9)).value ==
        doctest::Approx(std::cosh(0.4 * k) / std::cosh(0.5 * k))
            .epsilon(1e-13));
}

TEST_CASE("lifetime functional: MC with bridge exits matches the cosh form") {
  ProcessSpec spec = ProcessSpec::absorbed_bm(0.0, 1.0);
  const double alpha = 1.0;
  for (double x : {0.25, 0.5, 0.75}) {
    Estimate mc =
        survival_phi_alpha_mc(spec, alpha, pt(x), 4.0, 1e-3, 20000, 555);
    const double exact = survival_phi_alpha(spec, alpha, pt(x)).value;
    // 3-sigma MC band plus an O(alpha dt) bias allowance for the mid-step
    // lifetime convention.
    CHECK(std::abs(mc.value - exact) < 3.0 * mc.se + 2e-3);
  }
}

TEST_CASE("identity: 1 - phi_alpha = alpha R_alpha 1 on the interval") {
  ProcessSpec spec = ProcessSpec::absorbed_bm(0.0, 1.0);
  const Fn one = [](const Pt&) { return 1.0; };
  const double alpha = 1.5;
  for (double x : {0.2, 0.5, 0.7}) {
    Estimate r = resolvent(spec, alpha, one, pt(x), 64, 48);
    const double phi = survival_phi_alpha(spec, alpha, pt(x)).value;
    CHECK(alpha * r.value == doctest::Approx(1.0 - phi).epsilon(1e-7));
  }
}

TEST_CASE("resolvent equation via kink-split kernel quadrature (d=1)") {
  ProcessSpec spec = ProcessSpec::free_bm(1);
  const double alpha = 0.6, beta = 2.0;
  const Fn f = [](const Pt& x) {
    return std::exp(-0.5 * x[0] * x[0]) * (1.0 + 0.3 * x[0]);
  };
  const double lo = -18.0, hi = 18.0;
  // The kernel has a kink at y = x, so every application splits there.
  std::function<double(double, const std::function<double(double)>&, double)>
      apply = [&](double al, const std::function<double(double)>& g,
                  double x) {
        double sum = 0.0;
        for (auto [s0, s1] : {std::pair{lo, x}, std::pair{x, hi}}) {
          Quad1D q = gauss_legendre_on(64, s0, s1);
          for (int i = 0; i < 64; ++i)
            sum += q.weights[i] *
                   resolvent_kernel(spec, al, pt(x), pt(q.nodes[i])) *
                   g(q.nodes[i]);
        }
        return sum;
      };
  auto fv = [&](double y) { return f(pt(y)); };
  auto rbf = [&](double y) { return apply(beta, fv, y); };
  for (double x : {-2.0, -0.5, 0.0, 0.8, 2.5}) {
    const double lhs = apply(alpha, fv, x) - apply(beta, fv, x);
    const double rhs = (beta - alpha) * apply(alpha, rbf, x);
    CHECK(lhs == doctest::Approx(rhs).epsilon(2e-6));
  }
}
