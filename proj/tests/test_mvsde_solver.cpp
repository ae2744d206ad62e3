#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvldp/mvsde_solver.hpp"

using namespace mvldp;

namespace {

double terminal_second_moment(const ParticleSystem& ps, double* se) {
  const std::size_t N = ps.size();
  const std::size_t n = ps.grid.steps;
  std::vector<double> v(N);
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0;
    for (double a : ps.paths[i].at(n)) s += a * a;
    v[i] = s;
  }
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / N;
  double q = 0;
  for (double a : v) q += (a - m) * (a - m);
  *se = std::sqrt(q / (N - 1) / N);
  return m;
}

}  // namespace

TEST_CASE("Brownian driver: substeps reproduce the finer grid") {
  const TimeGrid coarse{1.0, 8}, fine{1.0, 16};
  const BrownianDriver c(7, "t", 2, coarse, 2), f(7, "t", 2, fine, 1);
  for (std::size_t k = 0; k < 8; ++k) {
    double a[2], b0[2], b1[2];
    c.increment(3, k, a);
    f.increment(3, 2 * k, b0);
    f.increment(3, 2 * k + 1, b1);
    for (int j = 0; j < 2; ++j) CHECK(a[j] == doctest::Approx(b0[j] + b1[j]).epsilon(1e-14));
  }
}

TEST_CASE("Brownian particles: terminal second moment is d T") {
  const auto m = make_model("brownian:d=2");
  const TimeGrid g{2.0, 50};
  const auto ps = simulate_particles(m.coefficients(), InitialCondition::fixed({0, 0}), 10000, g, 1.0, 11);
  double se = 0;
  const double mom = terminal_second_moment(ps, &se);
  CHECK(std::fabs(mom - 4.0) < 3 * se);
}

TEST_CASE("eps = 0 mean-field OU started at 2 stays at 2") {
  const auto m = make_model("ou:a=1");
  const auto ps = simulate_particles(m.coefficients(), InitialCondition::fixed({2.0}), 16, {1.0, 100}, 0.0, 1);
  for (const auto& p : ps.paths)
    for (double v : p.values()) CHECK(v == 2.0);
}

TEST_CASE("single particle cubic ODE matches the closed form") {
  const auto m = make_model("cubic:sigma=0");
  const auto ps = simulate_particles(m.coefficients(), InitialCondition::fixed({1.0}), 1, {1.0, 10000}, 0.0, 1);
  for (std::size_t k = 0; k <= 10000; k += 500) {
    const double t = ps.grid.time(k);
    CHECK(std::fabs(ps.paths[0](k, 0) - 1.0 / std::sqrt(1.0 + 2.0 * t)) < 1e-3);
  }
}

TEST_CASE("taming keeps superlinear drift finite from far away") {
  const auto m = make_model("cubic");
  const auto ps = simulate_particles(m.coefficients(), InitialCondition::fixed({1e3}), 4, {1.0, 50}, 1.0, 3);
  for (const auto& p : ps.paths) CHECK(std::isfinite(sup_norm(p)));
}

TEST_CASE("determinism across thread counts") {
  const auto m = make_model("doublewell:theta=0.5");
  const TimeGrid g{1.0, 64};
  const auto a = simulate_particles(m.coefficients(), InitialCondition::fixed({0.5}), 333, g, 0.3, 5, Executor(1));
  const auto b = simulate_particles(m.coefficients(), InitialCondition::fixed({0.5}), 333, g, 0.3, 5, Executor(2));
  const auto c = simulate_particles(m.coefficients(), InitialCondition::fixed({0.5}), 333, g, 0.3, 5, Executor(8));
  for (std::size_t i = 0; i < 333; ++i) {
    CHECK(a.paths[i].values() == b.paths[i].values());
    CHECK(a.paths[i].values() == c.paths[i].values());
  }
}

TEST_CASE("exchangeability: permuted replica ids permute the paths") {
  const auto m = make_model("ou:a=2");
  const TimeGrid g{1.0, 32};
  const std::size_t N = 50;
  SimulateOptions o1, o2;
  for (std::size_t i = 0; i < N; ++i) {
    o1.replica_ids.push_back(i);
    o2.replica_ids.push_back((i * 17 + 3) % N);
  }
  InitialCondition init;
  init.point = {0.0};
  init.sampler = [](rng::StreamKey k, std::span<double> x) { x[0] = rng::normal(k, 0); };
  init.moment_order = 1e9;
  const auto a = simulate_particles(m.coefficients(), init, N, g, 0.5, 9, Executor::serial(), o1);
  const auto b = simulate_particles(m.coefficients(), init, N, g, 0.5, 9, Executor::serial(), o2);
  for (std::size_t i = 0; i < N; ++i) {
    const auto& pa = a.paths[o2.replica_ids[i]];
    const auto& pb = b.paths[i];
    for (std::size_t k = 0; k <= 32; ++k) CHECK(std::fabs(pa(k, 0) - pb(k, 0)) < 1e-12);
  }
}

TEST_CASE("law-independent particles equal independent single runs") {
  const auto m = make_model("linear:a=0.7");
  const TimeGrid g{1.0, 40};
  const auto all = simulate_particles(m.coefficients(), InitialCondition::fixed({1.0}), 20, g, 0.4, 13);
  for (std::uint64_t i = 0; i < 20; ++i) {
    SimulateOptions o;
    o.replica_ids = {i};
    const auto one = simulate_particles(m.coefficients(), InitialCondition::fixed({1.0}), 1, g, 0.4, 13,
                                        Executor::serial(), o);
    CHECK(one.paths[0].values() == all.paths[i].values());
  }
}

TEST_CASE("single-trajectory streamer equals the N = 1 particle system") {
  const auto m = make_model("cubic");
  const TimeGrid g{1.0, 100};
  const auto ps = simulate_particles(m.coefficients(), InitialCondition::fixed({0.2}), 1, g, 0.3, 21);
  const BrownianDriver drv(21, "particles", 1, g);
  std::vector<double> xs;
  const double x0[] = {0.2};
  simulate_single(m.coefficients(), x0, g, 0.3, drv, drv.key(0),
                  [&](std::size_t, std::span<const double> x) { xs.push_back(x[0]); });
  CHECK(xs == ps.paths[0].values());
}

TEST_CASE("eps scaling of the Brownian terminal law") {
  const auto m = make_model("brownian");
  const TimeGrid g{1.0, 20};
  const auto one = simulate_particles(m.coefficients(), InitialCondition::fixed({0.0}), 2000, g, 1.0, 4);
  const auto small = simulate_particles(m.coefficients(), InitialCondition::fixed({0.0}), 2000, g, 0.09, 4);
  const auto scaled = measure_scale(0.3, one.marginal(20));
  CHECK(wasserstein2(scaled, small.marginal(20)) < 1e-12);
}

TEST_CASE("Picard: law-independent coefficients converge at the second iterate") {
  const auto m = make_model("linear");
  const auto sol = solve_picard(m.coefficients(), InitialCondition::fixed({1.0}), 64, {1.0, 50}, 0.5, 1e-10, 10, 2);
  CHECK(sol.converged);
  CHECK(sol.iterations == 2);
  CHECK(sol.convergence_trace[2] == 0.0);
}

TEST_CASE("Picard: mean-field OU keeps the mean at the initial mean") {
  const auto m = make_model("ou");
  const auto sol = solve_picard(m.coefficients(), InitialCondition::fixed({0.0}), 4096, {1.0, 100}, 0.1, 1e-4, 12, 8);
  CHECK(sol.converged);
  for (std::size_t k = 0; k <= 100; k += 10) {
    const auto mu = path_marginal_at_node(sol.final_paths, k);
    const double var = mu.second_moment() - mu.mean()[0] * mu.mean()[0];
    CHECK(std::fabs(mu.mean()[0]) <= 3.0 * std::sqrt(var / 4096.0) + 1e-15);
  }
}

TEST_CASE("Picard at eps = 0 reproduces the deterministic flow") {
  const auto m = make_model("doublewell:theta=1");
  const TimeGrid g{1.0, 1000};
  const auto sol = solve_picard(m.coefficients(), InitialCondition::fixed({1.5}), 2, g, 0.0, 1e-12, 20, 1);
  CHECK(sol.converged);
  // Reference: RK4 on psi' = psi - psi^3 (self-interaction vanishes on a Dirac law) at 10x resolution.
  double y = 1.5;
  const double h = 1e-4;
  for (std::size_t k = 0; k < 10000; ++k) {
    auto f = [](double v) { return v - v * v * v; };
    const double k1 = f(y), k2 = f(y + h / 2 * k1), k3 = f(y + h / 2 * k2), k4 = f(y + h * k3);
    y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    if ((k + 1) % 1000 == 0) CHECK(std::fabs(sol.final_paths[0]((k + 1) / 10, 0) - y) < 5e-3);
  }
}

TEST_CASE("Picard fixed point agrees with the particle law") {
  for (const char* name : {"ou", "doublewell:theta=1"}) {
    const auto m = make_model(name);
    const TimeGrid g{1.0, 100};
    const auto x0 = InitialCondition::fixed(m.default_x0);
    const auto sol = solve_picard(m.coefficients(), x0, 2048, g, 0.5, 1e-6, 20, 31);
    const auto ps = simulate_particles(m.coefficients(), x0, 2048, g, 0.5, 77);
    const double bound = 5.0 * (2.0 / std::sqrt(2048.0)) * m.picard_scale;
    CHECK(sup_time_wasserstein2(sol.final_paths, ps.paths) <= bound);
  }
}

TEST_CASE("moment diagnostic") {
  const auto b = make_model("brownian");
  const auto still = simulate_particles(b.coefficients(), InitialCondition::fixed({0.0}), 10, {1.0, 10}, 0.0, 1);
  CHECK(moment_diagnostic(still, 2).value == 0.0);
  // Oracle: independent numpy Monte Carlo of E max_k W(t_k)^2 on the same grid,
  // n = 1000, 10^6 paths: 1.78693 with standard error 0.00158.
  const auto ps = simulate_particles(b.coefficients(), InitialCondition::fixed({0.0}), 20000, {1.0, 1000}, 1.0, 2);
  const auto mv = moment_diagnostic(ps, 2);
  CHECK(std::fabs(mv.value - 1.78693) <= 3.0 * mv.std_error + 3.0 * 0.00158);
  CHECK_THROWS_AS(moment_diagnostic(ps, 3), ParameterError);

  const auto ou = make_model("ou");
  const auto x0 = InitialCondition::fixed({0.0});
  const auto po = simulate_particles(ou.coefficients(), x0, 4000, {1.0, 200}, 1.0, 3);
  const auto mo = moment_diagnostic(po, 2);
  CHECK(mo.value + 3 * mo.std_error <= moment_bound(ou.coefficients(), x0, 1.0, 2, ou.moment_constant));
}

TEST_CASE("continuity diagnostic") {
  const auto b = make_model("brownian");
  auto ps = simulate_particles(b.coefficients(), InitialCondition::fixed({0.0}), 2000, {1.0, 256}, 1.0, 5);
  auto fit = continuity_diagnostic(ps);
  CHECK(std::fabs(fit.slope - 1.0) < 0.1);

  const auto lin = make_model("linear");
  ps = simulate_particles(lin.coefficients(), InitialCondition::fixed({1.0}), 1, {1.0, 256}, 0.0, 5);
  fit = continuity_diagnostic(ps);
  CHECK(std::fabs(fit.slope - 2.0) < 0.1);

  const auto ou = make_model("ou");
  ps = simulate_particles(ou.coefficients(), InitialCondition::fixed({0.0}), 2000, {1.0, 256}, 1.0, 6);
  fit = continuity_diagnostic(ps);
  CHECK(fit.slope >= 0.85);
  CHECK(fit.slope <= 1.15);

  const auto still = simulate_particles(b.coefficients(), InitialCondition::fixed({0.0}), 3, {1.0, 32}, 0.0, 1);
  CHECK_THROWS_AS(continuity_diagnostic(still), DomainError);
  CHECK_THROWS_AS(continuity_diagnostic(ps, {1, 2, 3}), ParameterError);
}

TEST_CASE("invalid inputs") {
  const auto b = make_model("brownian");
  CHECK_THROWS_AS(simulate_particles(b.coefficients(), InitialCondition::fixed({0.0}), 0, {1.0, 10}, 1.0, 1),
                  ParameterError);
  CHECK_THROWS_AS(simulate_particles(b.coefficients(), InitialCondition::fixed({0.0}), 1, {1.0, 10}, -1.0, 1),
                  ParameterError);
  CHECK_THROWS_AS(simulate_particles(b.coefficients(), InitialCondition::fixed({0.0, 1.0}), 1, {1.0, 10}, 1.0, 1),
                  ParameterError);
  CHECK_THROWS_AS(solve_picard(b.coefficients(), InitialCondition::fixed({0.0}), 1, {1.0, 10}, 1.0, 1e-3, 5, 1),
                  ParameterError);
}
