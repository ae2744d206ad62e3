#include "mvldp/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "mvldp/errors.hpp"

namespace mvldp {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sup(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s = std::max(s, std::fabs(v));
  return s;
}

}  // namespace

LbfgsResult minimize_lbfgs(const Objective& f, std::vector<double> x0, const LbfgsOptions& opt,
                           const Projection& project) {
  const std::size_t n = x0.size();
  if (n == 0) throw ParameterError("optimizer needs at least one variable");
  LbfgsResult res;
  std::vector<double> x = std::move(x0);
  if (project) project(x);
  std::vector<double> g(n), xn(n), gn(n), dir(n), alpha(opt.memory);
  double fx = f(x, g);
  res.evaluations = 1;
  if (!std::isfinite(fx)) throw NumericalError("objective is not finite at the starting point", 0);

  std::deque<std::vector<double>> S, Y;
  std::deque<double> rho;
  std::size_t stalls = 0;

  auto stationarity = [&]() {
    if (!project) return sup(g);
    // Projected-gradient step length as a first-order measure.
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = x[i] - g[i];
    project(t);
    for (std::size_t i = 0; i < n; ++i) t[i] -= x[i];
    return sup(t);
  };

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    if (stationarity() <= opt.gradient_tol) {
      res.converged = true;
      res.status = "gradient tolerance reached";
      break;
    }
    // Two-loop recursion.
    std::copy(g.begin(), g.end(), dir.begin());
    const std::size_t m = S.size();
    for (std::size_t k = m; k-- > 0;) {
      alpha[k] = rho[k] * dot(S[k], dir);
      for (std::size_t i = 0; i < n; ++i) dir[i] -= alpha[k] * Y[k][i];
    }
    double gamma = 1.0;
    if (m > 0) gamma = dot(S[m - 1], Y[m - 1]) / dot(Y[m - 1], Y[m - 1]);
    for (double& v : dir) v *= gamma;
    for (std::size_t k = 0; k < m; ++k) {
      const double beta = rho[k] * dot(Y[k], dir);
      for (std::size_t i = 0; i < n; ++i) dir[i] += S[k][i] * (alpha[k] - beta);
    }
    for (double& v : dir) v = -v;
    if (dot(dir, g) >= 0.0) {
      S.clear();
      Y.clear();
      rho.clear();
      for (std::size_t i = 0; i < n; ++i) dir[i] = -g[i];
    }
    double step = 1.0;
    if (S.empty()) step = std::min(1.0, 1.0 / std::max(sup(g), 1e-300));

    bool accepted = false;
    double fn = fx;
    for (int ls = 0; ls < 60 && res.evaluations < opt.max_evaluations; ++ls) {
      for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] + step * dir[i];
      if (project) project(xn);
      fn = f(xn, gn);
      ++res.evaluations;
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (xn[i] - x[i]);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * decrease) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      res.status = res.evaluations >= opt.max_evaluations ? "evaluation budget exhausted" : "line search failed";
      res.converged = stationarity() <= std::sqrt(opt.gradient_tol);
      break;
    }
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = xn[i] - x[i];
      y[i] = gn[i] - g[i];
    }
    const double sy = dot(s, y);
    if (sy > 1e-12 * std::sqrt(dot(s, s) * dot(y, y))) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (S.size() > opt.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    const double rel = (fx - fn) / std::max(std::fabs(fx), 1e-300);
    x.swap(xn);
    g.swap(gn);
    fx = fn;
    stalls = rel <= opt.value_tol ? stalls + 1 : 0;
    if (stalls >= 3) {
      res.converged = true;
      res.status = "relative decrease below tolerance";
      break;
    }
    if (res.evaluations >= opt.max_evaluations) {
      res.status = "evaluation budget exhausted";
      break;
    }
  }
  if (res.status.empty()) res.status = "iteration budget exhausted";
  res.x = std::move(x);
  res.value = fx;
  return res;
}

}  // namespace mvldp
