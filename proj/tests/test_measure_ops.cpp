#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "mvldp/errors.hpp"
#include "mvldp/measure_ops.hpp"
#include "mvldp/rng.hpp"

using namespace mvldp;

namespace {

EmpiricalMeasure cloud(std::uint64_t seed, std::size_t n, std::size_t d, double scale = 1.0) {
  rng::Stream s(rng::derive(seed, "test/cloud", 0));
  std::vector<double> a(n * d);
  for (auto& v : a) v = scale * s.next_normal();
  return EmpiricalMeasure::uniform(d, a);
}

EmpiricalMeasure weighted_cloud(std::uint64_t seed, std::size_t n) {
  rng::Stream s(rng::derive(seed, "test/wcloud", 0));
  std::vector<double> a(n), w(n);
  double tot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = s.next_normal();
    w[i] = s.next_uniform();
    tot += w[i];
  }
  for (auto& x : w) x /= tot;
  // Renormalise the last weight so the sum is 1 to round-off.
  w.back() = 1.0 - std::accumulate(w.begin(), w.end() - 1, 0.0);
  return EmpiricalMeasure(1, a, w);
}

// Exhaustive matching for small clouds.
double brute_w2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  const std::size_t n = mu.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < mu.dim(); ++k) s += std::pow(mu.atom(i)[k] - nu.atom(perm[i])[k], 2);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(n));
}

}  // namespace

TEST_CASE("wasserstein2 examples") {
  const double zero[] = {0.0}, one[] = {1.0};
  CHECK(wasserstein2(EmpiricalMeasure::dirac(zero), EmpiricalMeasure::dirac(one)) == 1.0);
  CHECK(wasserstein2(EmpiricalMeasure::uniform(1, {0, 2}), EmpiricalMeasure::uniform(1, {1, 3})) ==
        doctest::Approx(1.0).epsilon(1e-15));
  const auto mu = cloud(1, 17, 2);
  CHECK(wasserstein2(mu, EmpiricalMeasure::dirac(std::vector<double>{0.0, 0.0})) ==
        doctest::Approx(std::sqrt(mu.second_moment())).epsilon(1e-14));
}

TEST_CASE("wasserstein2_to_dirac") {
  const double zero[] = {0.0};
  CHECK(wasserstein2_to_dirac(EmpiricalMeasure::uniform(1, {-1, 1}), zero) == 1.0);
  const double c[] = {2.5, -1.0};
  CHECK(wasserstein2_to_dirac(EmpiricalMeasure::dirac(c), c) == 0.0);
  CHECK(wasserstein2_to_dirac(EmpiricalMeasure::uniform(1, {0, 2}), zero) == doctest::Approx(std::sqrt(2.0)));
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto mu = cloud(seed, 1 + seed % 40, 1 + seed % 3);
    std::vector<double> p(mu.dim(), 0.3);
    double s = 0;
    for (std::size_t i = 0; i < mu.size(); ++i)
      for (std::size_t k = 0; k < mu.dim(); ++k) s += mu.weight(i) * std::pow(mu.atom(i)[k] - 0.3, 2);
    CHECK(std::fabs(wasserstein2_to_dirac(mu, p) - std::sqrt(s)) <= 1e-12);
    CHECK(std::fabs(wasserstein2(mu, EmpiricalMeasure::dirac(p)) - std::sqrt(s)) <= 1e-12);
  }
}

TEST_CASE("assignment solver matches exhaustive search") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::size_t n = 2 + seed % 5;
    const std::size_t d = 1 + seed % 3;
    const auto mu = cloud(seed, n, d), nu = cloud(seed + 77, n, d, 2.0);
    CHECK(wasserstein2_assignment(mu, nu) == doctest::Approx(brute_w2(mu, nu)).epsilon(1e-12));
  }
}

TEST_CASE("1-d sorted coupling equals assignment coupling") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t n = 1 + seed % 64;
    const auto mu = cloud(seed, n, 1), nu = cloud(seed + 999, n, 1, 1.5);
    CHECK(std::fabs(wasserstein2(mu, nu) - wasserstein2_assignment(mu, nu)) <= 1e-10);
  }
}

TEST_CASE("weighted 1-d coupling: splitting atoms does not change the distance") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto mu = weighted_cloud(seed, 7);
    const auto nu = weighted_cloud(seed + 50, 5);
    // Split every atom of mu in two halves.
    std::vector<double> a, w;
    for (std::size_t i = 0; i < mu.size(); ++i)
      for (int r = 0; r < 2; ++r) {
        a.push_back(mu.atom(i)[0]);
        w.push_back(mu.weight(i) / 2);
      }
    const EmpiricalMeasure split(1, a, w);
    CHECK(wasserstein2(split, nu) == doctest::Approx(wasserstein2(mu, nu)).epsilon(1e-12));
    CHECK(wasserstein2(mu, nu) == doctest::Approx(wasserstein2(nu, mu)).epsilon(1e-12));
  }
}

TEST_CASE("metric axioms on random triples") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const std::size_t d = 1 + seed % 3;
    const std::size_t n = 3 + seed % 30;
    const auto a = cloud(seed, n, d), b = cloud(seed + 1, n, d, 0.5), c = cloud(seed + 2, n, d, 2.0);
    const double ab = wasserstein2(a, b), ba = wasserstein2(b, a), bc = wasserstein2(b, c), ac = wasserstein2(a, c);
    CHECK(ab >= 0.0);
    CHECK(std::fabs(ab - ba) <= 1e-9);
    CHECK(ac <= ab + bc + 1e-9);
    // Permuted copy of a is at distance 0.
    std::vector<double> atoms = a.atoms();
    std::vector<double> rev(atoms.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) rev[(n - 1 - i) * d + k] = atoms[i * d + k];
    CHECK(wasserstein2(a, EmpiricalMeasure::uniform(d, rev)) <= 1e-9);
  }
}

TEST_CASE("unsupported configurations") {
  const auto a = cloud(1, 4, 2), b = cloud(2, 5, 2);
  CHECK_THROWS_AS(wasserstein2(a, b), UnsupportedError);
  CHECK_THROWS_AS(wasserstein2(a, cloud(3, 4, 1)), ParameterError);
  CHECK_THROWS_AS(wasserstein2(cloud(1, 2049, 2), cloud(2, 2049, 2)), UnsupportedError);
  CHECK_THROWS_AS(EmpiricalMeasure(1, {0.0, 1.0}, {0.5, 0.6}), ParameterError);
  CHECK_THROWS_AS(EmpiricalMeasure(1, {0.0, 1.0}, {1.5, -0.5}), ParameterError);
}

TEST_CASE("modified Wasserstein") {
  const double z[] = {0.0}, f[] = {5.0}, s[] = {0.3};
  CHECK(modified_wasserstein(EmpiricalMeasure::dirac(z), EmpiricalMeasure::dirac(f)) == 1.0);
  CHECK(modified_wasserstein(EmpiricalMeasure::dirac(z), EmpiricalMeasure::dirac(s)) == doctest::Approx(0.3));
  const auto mu = cloud(4, 20, 2);
  CHECK(modified_wasserstein(mu, mu) == 0.0);
  // Truncated cost is not convex: the sorted coupling is not optimal here.
  CHECK(modified_wasserstein(EmpiricalMeasure::uniform(1, {0, 10}), EmpiricalMeasure::uniform(1, {10, 20})) ==
        doctest::Approx(0.5));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double v = modified_wasserstein(cloud(seed, 10, 1, 3.0), cloud(seed + 5, 10, 1));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("measure vector operations") {
  const double zero[] = {0.0};
  const auto mu = cloud(9, 6, 1);
  const auto sum0 = measure_add(mu, EmpiricalMeasure::dirac(zero));
  CHECK(wasserstein2(sum0, mu) <= 1e-15);
  const double a[] = {1.5}, b[] = {-4.0};
  const auto ab = measure_add(EmpiricalMeasure::dirac(a), EmpiricalMeasure::dirac(b));
  CHECK(ab.size() == 1);
  CHECK(ab.atom(0)[0] == -2.5);
  const auto u = EmpiricalMeasure::uniform(1, {0, 1});
  const auto uu = measure_add(u, u);
  CHECK(uu.atoms() == std::vector<double>{0, 1, 1, 2});
  for (double w : uu.weights()) CHECK(w == 0.25);
  CHECK(measure_scale(1.0, mu).atoms() == mu.atoms());
  const double three[] = {3.0};
  CHECK(measure_scale(2.0, EmpiricalMeasure::dirac(three)).atom(0)[0] == 6.0);
  CHECK(measure_scale(-1.0, u).atoms() == std::vector<double>{-0.0, -1.0});
  CHECK_THROWS_AS(measure_scale(0.0, u), ParameterError);
  // Vector-space axioms modulo reordering: commutativity, associativity, distributivity of scaling.
  const auto v = cloud(10, 3, 1), w = cloud(11, 4, 1);
  CHECK(wasserstein2(measure_add(v, w), measure_add(w, v)) <= 1e-12);
  CHECK(wasserstein2(measure_add(measure_add(u, v), w), measure_add(u, measure_add(v, w))) <= 1e-12);
  CHECK(wasserstein2(measure_scale(2.0, measure_add(v, w)), measure_add(measure_scale(2.0, v), measure_scale(2.0, w))) <=
        1e-12);
  CHECK(wasserstein2(measure_scale(3.0, measure_scale(0.5, v)), measure_scale(1.5, v)) <= 1e-12);
}

TEST_CASE("path marginals") {
  std::vector<Path> one{Path::from_function(1.0, 10, 1, [](double t, std::span<double> x) { x[0] = t * t; })};
  const auto m = path_marginal(one, 0.5);
  CHECK(m.size() == 1);
  CHECK(m.atom(0)[0] == doctest::Approx(0.25));
  std::vector<Path> two{Path(1.0, 8, 1, std::vector<double>(9, 0.0)), Path(1.0, 8, 1, std::vector<double>(9, 2.0))};
  for (double t : {0.0, 0.3, 1.0}) CHECK(path_marginal(two, t).atoms() == std::vector<double>{0.0, 2.0});
  CHECK_THROWS_AS(path_marginal(std::vector<Path>{}, 0.5), ParameterError);
  // Brownian cloud: second moment at t = 1 is 1 with standard error sqrt(2/N).
  const std::size_t N = 10000, n = 16;
  std::vector<Path> cloud_paths;
  for (std::size_t i = 0; i < N; ++i) {
    Path p(1.0, n, 1);
    for (std::size_t k = 0; k < n; ++k) p(k + 1, 0) = p(k, 0) + std::sqrt(1.0 / n) * rng::normal(rng::derive(5, "bm", i), k);
    cloud_paths.push_back(p);
  }
  CHECK(std::fabs(path_marginal(cloud_paths, 1.0).second_moment() - 1.0) < 0.05);
}

TEST_CASE("measure CSV round trip") {
  const auto mu = cloud(12, 5, 2);
  std::stringstream ss;
  write_measure_csv(mu, ss);
  const auto nu = read_measure_csv(ss);
  CHECK(nu.atoms() == mu.atoms());
  CHECK(nu.weights() == mu.weights());
}
