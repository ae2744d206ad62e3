#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvldp/rng.hpp"

using namespace mvldp;

TEST_CASE("draws are pure functions of key and index") {
  const auto k = rng::derive(42, "solver", 7);
  CHECK(rng::derive(42, "solver", 7).value == k.value);
  CHECK(rng::derive(42, "solver", 8).value != k.value);
  CHECK(rng::derive(43, "solver", 7).value != k.value);
  CHECK(rng::derive(42, "picard", 7).value != k.value);
  std::vector<double> buf(1000);
  rng::fill_normals(k, 500, buf);
  for (std::size_t i = 0; i < buf.size(); i += 37) CHECK(buf[i] == rng::normal(k, 500 + i));
}

TEST_CASE("uniforms stay in the open unit interval") {
  CHECK(rng::to_open_unit(0) > 0.0);
  CHECK(rng::to_open_unit(~0ULL) < 1.0);
}

TEST_CASE("normal moments and tail") {
  const auto k = rng::derive(1, "moments", 0);
  const std::size_t n = 2'000'000;
  std::vector<double> z(n);
  rng::fill_normals(k, 0, z);
  double m1 = 0, m2 = 0, m4 = 0, tail = 0;
  for (double x : z) {
    m1 += x;
    m2 += x * x;
    m4 += x * x * x * x;
    tail += std::fabs(x) > 3.0;
  }
  m1 /= n;
  m2 /= n;
  m4 /= n;
  tail /= n;
  // Standard errors: 1/sqrt(n), sqrt(2/n), sqrt(96/n), sqrt(p(1-p)/n).
  CHECK(std::fabs(m1) < 4.0 / std::sqrt(n));
  CHECK(std::fabs(m2 - 1.0) < 4.0 * std::sqrt(2.0 / n));
  CHECK(std::fabs(m4 - 3.0) < 4.0 * std::sqrt(96.0 / n));
  const double p3 = 0.0026997960632601866;
  CHECK(std::fabs(tail - p3) < 4.0 * std::sqrt(p3 / n));
}

TEST_CASE("neighbouring replica streams are uncorrelated") {
  const std::size_t n = 200000;
  double cross = 0;
  for (std::size_t i = 0; i < n; ++i)
    cross += rng::normal(rng::derive(9, "x", 0), i) * rng::normal(rng::derive(9, "x", 1), i);
  CHECK(std::fabs(cross / n) < 4.0 / std::sqrt(n));
}
