#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mvldp/errors.hpp"
#include "mvldp/mvsde_solver.hpp"
#include "mvldp/rng.hpp"
#include "mvldp/strassen_lil.hpp"

using namespace mvldp;

TEST_CASE("lil scale") {
  // mpmath, 30 digits.
  const double u = std::exp(std::exp(1.0)) + 1.0;
  CHECK(lil_scale(u) == doctest::Approx(4.06566427596202370177).epsilon(1e-14));
  CHECK(lil_scale(100.0) == doctest::Approx(std::sqrt(100.0 * std::log(std::log(100.0)))).epsilon(1e-15));
  CHECK_THROWS_AS(lil_scale(3.0), DomainError);
  CHECK_THROWS_AS(lil_scale(-1.0), DomainError);
}

TEST_CASE("contraction probes") {
  for (const auto& x : {std::vector<double>{0.0}, std::vector<double>{1.0, -2.0}, std::vector<double>{0.5, 0, 3}}) {
    const auto g = ContractionSystem::linear(x);
    const auto p = probe_contraction(g, 1000, 7);
    CHECK(p.pass);
    CHECK(p.samples == 1000);
    CHECK(p.violations == 0);
    CHECK(p.inverse_error <= 1e-10);
  }

  // Expanding instead of contracting: inverse and center hold, second differences grow.
  const auto expand = ContractionSystem(
      {0.0}, [](double a, std::span<const double> y, std::span<double> o) { o[0] = a * y[0]; });
  const auto pe = probe_contraction(expand, 1000, 7);
  CHECK_FALSE(pe.pass);
  CHECK(pe.violations > 0);
  CHECK(pe.center_error == 0.0);

  // Drifting center.
  const auto shift = ContractionSystem(
      {0.0}, [](double a, std::span<const double> y, std::span<double> o) { o[0] = y[0] / a + (a - 1.0); });
  const auto ps = probe_contraction(shift, 200, 7);
  CHECK_FALSE(ps.pass);
  CHECK(ps.center_error > 1e-3);

  const auto g = ContractionSystem::linear({1.0});
  CHECK_THROWS_AS(g.apply(0.0, std::vector<double>{1.0}), DomainError);
  CHECK_THROWS_AS(g.apply(1.0, std::vector<double>{1.0, 2.0}), ParameterError);
  CHECK_THROWS_AS(ContractionSystem({}, [](double, std::span<const double>, std::span<double>) {}), ParameterError);
}

TEST_CASE("rescale") {
  const std::size_t n = 4 * 1000;  // [0, 1000] at 4 per unit
  const Path constant = Path::from_function(1000.0, n, 2, [](double, std::span<double> o) {
    o[0] = 1.5;
    o[1] = -0.5;
  });
  const auto g = ContractionSystem::linear({1.5, -0.5});
  const Path z = rescale(g, constant, 100.0, 50);
  for (std::size_t k = 0; k <= 50; ++k) {
    CHECK(z(k, 0) == 1.5);
    CHECK(z(k, 1) == -0.5);
  }

  const auto key = rng::derive(3, "walk", 0);
  std::vector<double> v(n + 1, 0.0);
  for (std::size_t k = 1; k <= n; ++k) v[k] = v[k - 1] + 0.5 * rng::normal(key, k);
  const Path y(1000.0, n, 1, v);
  const auto g0 = ContractionSystem::linear({0.0});
  const double u = 250.0;
  const Path zu = rescale(g0, y, u);
  CHECK(zu.grid_size() == 1000);
  CHECK(zu.horizon() == 1.0);
  CHECK(zu(0, 0) == 0.0);
  const double phi = lil_scale(u);
  for (std::size_t k = 0; k <= 1000; k += 37) CHECK(zu(k, 0) == doctest::Approx(v[k] / phi).epsilon(1e-15));
  const Path coarse = rescale(g0, y, u, 10);
  for (std::size_t k = 0; k <= 10; ++k) CHECK(coarse(k, 0) == zu(100 * k, 0));

  CHECK_THROWS_AS(rescale(g0, y, 3.0), DomainError);
  CHECK_THROWS_AS(rescale(g0, y, 1000.5), DomainError);
  CHECK_THROWS_AS(rescale(g0, y, 100.1), DomainError);
  CHECK_THROWS_AS(rescale(g0, y, 100.0, 3), DomainError);
  CHECK_THROWS_AS(rescale(ContractionSystem::linear({0.0, 0.0}), y, 100.0), ParameterError);
}

TEST_CASE("transformed coefficients, linear system") {
  const auto g = ContractionSystem::linear({0.0});
  const std::vector<std::vector<double>> probes{{0.0}, {0.7}, {-1.3}, {2.0}};
  const std::vector<double> us{1e2, 1e4, 1e6, 1e8};

  // sigma = I: the phi prefactor cancels the Jacobian 1/phi.
  const auto bm = make_model("brownian");
  const auto rb = transformed_coefficients_report(g, bm.coefficients(), us, probes);
  CHECK(rb.drift_converges);
  CHECK(rb.diffusion_converges);
  for (double s : rb.drift_size) CHECK(s == 0.0);
  for (double c : rb.diffusion_change) CHECK(c <= 1e-15);
  CHECK(rb.specialization_error <= 1e-15);
  std::vector<double> b(1), s(1);
  for (double u : us) {
    transformed_coefficients(g, bm.coefficients(), u, std::vector<double>{0.4}, EmpiricalMeasure::dirac(std::vector{0.4}),
                             b, s);
    CHECK(b[0] == 0.0);
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-15));
  }

  // b(x) = -x: u L[Gamma](Gamma^-1 y) = u (1/phi)(-phi y) = -u y.
  const auto lin = make_model("linear:a=1");
  for (double y : {0.7, -1.3}) {
    transformed_coefficients(g, lin.coefficients(), 100.0, std::vector<double>{y},
                             EmpiricalMeasure::dirac(std::vector{y}), b, s);
    CHECK(b[0] == doctest::Approx(-100.0 * y).epsilon(1e-13));
  }
  const auto rl = transformed_coefficients_report(g, lin.coefficients(), us, probes);
  CHECK_FALSE(rl.drift_converges);
  CHECK(rl.diffusion_converges);
  CHECK(rl.specialization_error <= 1e-13);
  CHECK(rl.drift_size.back() > rl.drift_size.front());

  // Mean-field drift: the law is pushed through Gamma^-1 as well.
  const auto ou = make_model("ou:a=2");
  const auto ro = transformed_coefficients_report(g, ou.coefficients(), us, probes);
  CHECK(ro.specialization_error <= 1e-13);
  CHECK_FALSE(ro.drift_converges);
  const EmpiricalMeasure cloud = EmpiricalMeasure::uniform(1, {0.2, 1.0, -0.3});
  transformed_coefficients(g, ou.coefficients(), 1e4, std::vector<double>{0.5}, cloud, b, s);
  CHECK(b[0] == doctest::Approx(1e4 * 2.0 * (0.3 - 0.5)).epsilon(1e-12));

  // Off-center system: sigma_hat is still sigma.
  const auto gc = ContractionSystem::linear({2.0});
  const auto rc = transformed_coefficients_report(gc, bm.coefficients(), us, probes);
  CHECK(std::isnan(rc.specialization_error));
  CHECK(rc.diffusion_converges);

  const auto rough = ContractionSystem({0.0}, [](double a, std::span<const double> y, std::span<double> o) {
    o[0] = y[0] / a;
  });
  CHECK_FALSE(rough.differentiable());
  CHECK_THROWS_AS(transformed_coefficients(rough, bm.coefficients(), 100.0, std::vector<double>{0.1},
                                           EmpiricalMeasure::dirac(std::vector{0.1}), b, s),
                  UnsupportedError);
}

TEST_CASE("transformed coefficients, Hessian term") {
  // Gamma_a(y) = sinh(asinh(y)/a) fixes 0 and inverts as Gamma_{1/a}, with a nonzero
  // Hessian. Its second differences are not monotone, so only the formula is tested.
  // At w = Gamma^-1(y) = sinh(a asinh(y)) the Ito drift is u (Gamma'(w) b(w) + sigma^2 Gamma''(w) / 2).
  const auto g = ContractionSystem(
      {0.0}, [](double a, std::span<const double> y, std::span<double> o) { o[0] = std::sinh(std::asinh(y[0]) / a); },
      [](double a, std::span<const double> y, std::span<double> o) {
        const double s = std::asinh(y[0]);
        o[0] = std::cosh(s / a) / (a * std::sqrt(1.0 + y[0] * y[0]));
      },
      [](double a, std::span<const double> y, std::span<double> o) {
        const double s = std::asinh(y[0]);
        const double r = std::sqrt(1.0 + y[0] * y[0]);
        o[0] = std::sinh(s / a) / (a * a * r * r) - std::cosh(s / a) * y[0] / (a * r * r * r);
      });
  const auto probe = probe_contraction(g, 1000, 3);
  CHECK(probe.center_error <= 1e-12);
  CHECK(probe.inverse_error <= 1e-10);

  const auto lin = make_model("linear:a=0.5,sigma=0.8");
  const double u = 50.0, y = 0.3;
  const double phi = lil_scale(u);
  const double w = std::sinh(phi * std::asinh(y));
  // Finite-difference derivatives of Gamma_phi at w.
  auto G = [phi](double v) { return std::sinh(std::asinh(v) / phi); };
  const double hstep = 1e-4 * (1.0 + std::fabs(w));
  const double g1 = (G(w + hstep) - G(w - hstep)) / (2.0 * hstep);
  const double g2 = (G(w + hstep) - 2.0 * G(w) + G(w - hstep)) / (hstep * hstep);
  const double expect_b = u * (g1 * (-0.5 * w) + 0.5 * 0.64 * g2);
  const double expect_s = phi * g1 * 0.8;
  std::vector<double> b(1), s(1);
  transformed_coefficients(g, lin.coefficients(), u, std::vector<double>{y}, EmpiricalMeasure::dirac(std::vector{y}),
                           b, s);
  CHECK(b[0] == doctest::Approx(expect_b).epsilon(1e-5));
  CHECK(s[0] == doctest::Approx(expect_s).epsilon(1e-6));
}

TEST_CASE("limit set") {
  const auto g = ContractionSystem::linear({0.0});
  const auto k = LimitSetK::from_model(g, make_model("brownian:sigma=2").coefficients(), 32);
  CHECK(k.grid_size() == 32);
  CameronMartinPath h(1.0, 32, 1);
  for (std::size_t i = 0; i < 32; ++i) h.rate(i)[0] = std::sqrt(2.0) * std::cos(3.0 * (i + 0.5) / 32.0);
  const Path f = k.member(h);
  const Path hp = cm_to_path(h);
  for (std::size_t i = 0; i <= 32; ++i) CHECK(f(i, 0) == doctest::Approx(2.0 * hp(i, 0)).epsilon(1e-13));

  LimitSetK kk = k;
  for (double& v : h.derivative()) v *= 0.5;
  kk.add_member(h);
  CHECK(kk.members().size() == 1);
  for (double& v : h.derivative()) v *= 4.0;
  CHECK_THROWS_AS(kk.add_member(h), DomainError);

  CHECK_THROWS_AS(LimitSetK::from_model(g, make_model("linear").coefficients()), UnsupportedError);
  CHECK_THROWS_AS(LimitSetK::from_model(g, make_model("ou").coefficients()), UnsupportedError);
  CHECK_THROWS_AS(LimitSetK::from_model(g, make_model("cubic").coefficients()), UnsupportedError);
}

TEST_CASE("distance to K") {
  const auto g = ContractionSystem::linear({0.0});
  const auto k = LimitSetK::from_model(g, make_model("brownian").coefficients(), 64);

  // Feasible point on the boundary of the energy ball.
  CameronMartinPath h(1.0, 64, 1);
  for (std::size_t i = 0; i < 64; ++i) h.rate(i)[0] = std::sin(5.0 * (i + 0.5) / 64.0) + 0.4;
  const double scale = std::sqrt(2.0 / h.energy());
  for (double& v : h.derivative()) v *= scale;
  CHECK(h.energy() == doctest::Approx(2.0).epsilon(1e-14));
  const auto r0 = distance_to_K(k.member(h), k, 0.25);
  CHECK(r0.value <= 1e-4);
  CHECK(r0.upper_bound);

  const Path zero(1.0, 64, 1);
  CHECK(distance_to_K(zero, k, 0.3).value == 0.0);

  // z = 2t has energy 4. Restricted-family oracle: linear h = s t, s in [0, sqrt 2].
  const Path line = Path::from_function(1.0, 64, 1, [](double t, std::span<double> o) { o[0] = 2.0 * t; });
  for (double alpha : {0.1, 0.25, 0.4}) {
    double oracle = 1e300;
    for (int i = 0; i <= 2000; ++i) {
      const double s = std::sqrt(2.0) * i / 2000.0;
      const Path res = Path::from_function(1.0, 64, 1, [s](double t, std::span<double> o) { o[0] = (2.0 - s) * t; });
      oracle = std::min(oracle, holder_norm(res, alpha));
    }
    const auto r = distance_to_K(line, k, alpha);
    CHECK(r.value <= oracle + 1e-9);
    CHECK(r.value >= oracle - 1e-6);
    CHECK(r.minimizer.energy() <= 2.0 * (1.0 + 1e-12));
    CHECK_FALSE(r.budget_exhausted);
  }

  // A rough path: never worse than the projected least-squares start or the zero control.
  const auto key = rng::derive(9, "rough", 0);
  std::vector<double> v(65, 0.0);
  for (std::size_t i = 1; i <= 64; ++i) v[i] = v[i - 1] + 0.1 * rng::normal(key, i);
  const Path w(1.0, 64, 1, v);
  const auto rw = distance_to_K(w, k, 0.25);
  CHECK(rw.value <= holder_norm(w, 0.25));
  CHECK(rw.value == doctest::Approx(holder_norm([&] {
          const Path phi = k.member(rw.minimizer);
          std::vector<double> e(65);
          for (std::size_t i = 0; i <= 64; ++i) e[i] = w(i, 0) - phi(i, 0);
          return Path(1.0, 64, 1, e);
        }(), 0.25)).epsilon(1e-12));

  CHECK_THROWS_AS(distance_to_K(line, k, 0.5), DomainError);
  CHECK_THROWS_AS(distance_to_K(line, k, 0.0), DomainError);
}

TEST_CASE("strassen experiment, small horizon") {
  StrassenOptions opt;
  opt.horizon = 4096;
  opt.trajectories = 4;
  opt.seed = 11;
  opt.budget.starts = 1;
  const auto g = ContractionSystem::linear({0.0});
  const auto r = strassen_experiment("brownian", g, opt, Executor::serial());
  REQUIRE(r.levels.size() == 10);
  CHECK(r.levels.front().j == 3);
  CHECK(r.levels.back().u == 4096.0);
  for (const auto& lv : r.levels) {
    CHECK(lv.u == std::pow(2.0, lv.j));
    CHECK(lv.d_alpha.size() == 4);
    CHECK(lv.a_jc.size() == 4);
    for (double d : lv.d_alpha) CHECK(d >= 0.0);
    for (double a : lv.a_jc) CHECK(a > 0.0);
  }
  CHECK(r.sup_z1.size() == 4);
  CHECK(r.sup_z1_max >= r.sup_z1_median);
  for (std::size_t l = 1; l < r.compactness_proxy.size(); ++l)
    CHECK(r.compactness_proxy[l] <= r.compactness_proxy[l - 1]);
  CHECK(r.compactness_proxy_nonincreasing);

  // Independent check of one statistic: rerun one trajectory and read Y(u) directly.
  const auto bm = make_model("brownian");
  const TimeGrid grid{4096.0, 4096 * 64};
  const BrownianDriver driver(11, "strassen", 1, grid, 1);
  double best = -1e300;
  simulate_single(bm.coefficients(), bm.default_x0, grid, 1.0, driver, driver.key(2),
                  [&](std::size_t k, std::span<const double> y) {
                    if (k % 64 == 0 && k / 64 >= 16) best = std::max(best, y[0] / lil_scale(k / 64.0));
                  });
  CHECK(r.sup_z1[2] == doctest::Approx(best).epsilon(1e-14));

  // Thread count and step halving with common noise leave Brownian statistics unchanged.
  StrassenOptions o2 = opt;
  o2.distances = false;
  o2.substeps = 2;
  const auto fine = [&] {
    StrassenOptions o = o2;
    o.n_per_unit = 128;
    o.substeps = 1;
    return strassen_experiment("brownian", g, o, Executor(2));
  }();
  const auto coarse = strassen_experiment("brownian", g, o2, Executor::serial());
  for (std::size_t t = 0; t < 4; ++t) CHECK(fine.sup_z1[t] == doctest::Approx(coarse.sup_z1[t]).epsilon(1e-12));
  for (std::size_t l = 0; l < coarse.levels.size(); ++l)
    CHECK(fine.levels[l].median_a_jc == doctest::Approx(coarse.levels[l].median_a_jc).epsilon(1e-10));
  CHECK(std::isnan(coarse.levels[0].median_d_alpha));
}

TEST_CASE("strassen experiment, deterministic limit and errors") {
  StrassenOptions opt;
  opt.horizon = 2048;
  opt.trajectories = 2;
  opt.epsilon = 0.0;
  opt.budget.starts = 1;
  const auto r = strassen_experiment("brownian", ContractionSystem::linear({0.0}), opt, Executor::serial());
  for (const auto& lv : r.levels) {
    CHECK(lv.median_d_alpha == 0.0);
    CHECK(lv.median_a_jc == 0.0);
  }
  CHECK(r.sup_z1_max == 0.0);

  StrassenOptions small = opt;
  small.horizon = 200;
  CHECK_THROWS_AS(strassen_experiment("brownian", ContractionSystem::linear({0.0}), small, Executor::serial()),
                  DomainError);
  StrassenOptions badc = opt;
  badc.c = 1.0;
  CHECK_THROWS_AS(strassen_experiment("brownian", ContractionSystem::linear({0.0}), badc, Executor::serial()),
                  ParameterError);
  CHECK_THROWS_AS(strassen_experiment("linear", ContractionSystem::linear({0.0}), opt, Executor::serial()),
                  UnsupportedError);
  StrassenOptions nod = opt;
  nod.distances = false;
  nod.epsilon = 1.0;
  const auto rl = strassen_experiment("linear", ContractionSystem::linear({1.0}), nod, Executor::serial());
  CHECK(rl.levels.size() >= 8);
}

TEST_CASE("A_jc grows with the level ratio") {
  StrassenOptions opt;
  opt.horizon = 1 << 18;
  opt.trajectories = 8;
  opt.distances = false;
  opt.seed = 5;
  opt.n_per_unit = 16;
  opt.rescale_steps = 16;
  const auto g = ContractionSystem::linear({0.0});
  auto overall = [&](double c) {
    StrassenOptions o = opt;
    o.c = c;
    const auto r = strassen_experiment("brownian", g, o, Executor::serial());
    std::vector<double> m;
    for (const auto& lv : r.levels) m.push_back(lv.median_a_jc);
    return median(m);
  };
  const double a15 = overall(1.5);
  const double a4 = overall(4.0);
  CHECK(a15 < a4);
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK_THROWS_AS(median({}), DomainError);
}
