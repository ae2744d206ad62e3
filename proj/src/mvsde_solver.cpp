#include "mvldp/mvsde_solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace mvldp {

void TimeGrid::validate() const {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ParameterError("time horizon must be positive");
  if (steps < 1) throw ParameterError("time grid needs at least one step");
}

BrownianDriver::BrownianDriver(std::uint64_t seed, std::string tag, std::size_t dim_w, TimeGrid grid,
                               std::size_t substeps)
    : seed_(seed), tag_(std::move(tag)), dim_w_(dim_w), grid_(grid), substeps_(substeps) {
  grid_.validate();
  if (dim_w_ == 0) throw ParameterError("Brownian dimension must be positive");
  if (substeps_ == 0) throw ParameterError("substeps must be positive");
  sub_sd_ = std::sqrt(grid_.dt() / static_cast<double>(substeps_));
}

void BrownianDriver::increment(rng::StreamKey key, std::size_t step, std::span<double> out) const noexcept {
  const std::uint64_t base = static_cast<std::uint64_t>(step) * substeps_ * dim_w_;
  if (substeps_ == 1) {
    rng::fill_normals(key, base, out.first(dim_w_));
    for (std::size_t j = 0; j < dim_w_; ++j) out[j] *= sub_sd_;
    return;
  }
  for (std::size_t j = 0; j < dim_w_; ++j) out[j] = 0.0;
  for (std::size_t r = 0; r < substeps_; ++r)
    for (std::size_t j = 0; j < dim_w_; ++j) out[j] += rng::normal(key, base + r * dim_w_ + j);
  for (std::size_t j = 0; j < dim_w_; ++j) out[j] *= sub_sd_;
}

InitialCondition InitialCondition::fixed(std::vector<double> x0) {
  InitialCondition ic;
  ic.point = std::move(x0);
  return ic;
}

namespace {

void check_common(const CoefficientSet& cs, const InitialCondition& init, std::size_t N, const TimeGrid& grid,
                  double epsilon) {
  cs.validate();
  grid.validate();
  if (N == 0) throw ParameterError("particle count must be positive");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ParameterError("epsilon must be finite and nonnegative");
  if (init.dim() != cs.dim_x) throw ParameterError("initial condition dimension does not match the model");
}

void initial_state(const InitialCondition& init, std::uint64_t seed, const std::string& tag, std::uint64_t id,
                   std::span<double> out) {
  if (init.sampler) {
    init.sampler(rng::derive(seed, tag + "/init", id), out);
  } else {
    std::copy(init.point.begin(), init.point.end(), out.begin());
  }
}

std::vector<std::uint64_t> replica_ids(const SimulateOptions& opt, std::size_t N) {
  if (!opt.replica_ids.empty()) {
    if (opt.replica_ids.size() != N) throw ParameterError("replica_ids must have one entry per particle");
    return opt.replica_ids;
  }
  std::vector<std::uint64_t> ids(N);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

}  // namespace

void simulate_streaming(const CoefficientSet& cs, const InitialCondition& init, std::size_t N, const TimeGrid& grid,
                        double epsilon, std::uint64_t seed, const Executor& exec, const SimulateOptions& opt,
                        const std::function<void(std::size_t, std::span<const double>)>& observer) {
  check_common(cs, init, N, grid, epsilon);
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  const BrownianDriver driver(seed, opt.tag, m, grid, opt.substeps);
  const auto ids = replica_ids(opt, N);
  std::vector<rng::StreamKey> keys(N);
  std::vector<double> x(N * d);
  for (std::size_t i = 0; i < N; ++i) {
    keys[i] = driver.key(ids[i]);
    initial_state(init, seed, opt.tag, ids[i], std::span<double>(x).subspan(i * d, d));
  }
  for (double v : x)
    if (!std::isfinite(v)) throw NumericalError("non-finite initial state", 0);
  observer(0, x);

  const EmpiricalMeasure placeholder = EmpiricalMeasure::dirac(std::vector<double>(d, 0.0));
  const double dt = grid.dt();
  const double se = std::sqrt(epsilon);
  EmpiricalMeasure current;
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const double t = grid.time(k);
    const EmpiricalMeasure* law = &placeholder;
    if (opt.frozen_law) {
      law = &opt.frozen_law(k);
    } else if (cs.law_dependent) {
      current = EmpiricalMeasure::uniform(d, x);
      law = &current;
    }
    std::atomic<std::size_t> bad{N};
    exec.parallel_for(N, [&](std::size_t b, std::size_t e) {
      std::vector<double> drift(d), sig(d * m), dw(m);
      for (std::size_t i = b; i < e; ++i) {
        std::span<double> xi(x.data() + i * d, d);
        cs.drift(t, xi, *law, drift);
        cs.diffusion(t, xi, *law, sig);
        driver.increment(keys[i], k, dw);
        tamed_euler_step(xi, drift, sig, dw, dt, se);
        for (double v : xi)
          if (!std::isfinite(v)) {
            std::size_t cur = bad.load();
            while (i < cur && !bad.compare_exchange_weak(cur, i)) {
            }
          }
      }
    });
    if (bad.load() < N)
      throw NumericalError("non-finite state of particle " + std::to_string(bad.load()), k + 1);
    observer(k + 1, x);
  }
}

ParticleSystem simulate_particles(const CoefficientSet& cs, const InitialCondition& init, std::size_t N,
                                  const TimeGrid& grid, double epsilon, std::uint64_t seed, const Executor& exec,
                                  const SimulateOptions& opt) {
  check_common(cs, init, N, grid, epsilon);
  const std::size_t d = cs.dim_x;
  const std::size_t n = grid.steps;
  std::vector<std::vector<double>> store(N, std::vector<double>((n + 1) * d));
  simulate_streaming(cs, init, N, grid, epsilon, seed, exec, opt, [&](std::size_t k, std::span<const double> x) {
    for (std::size_t i = 0; i < N; ++i) std::copy_n(x.data() + i * d, d, store[i].data() + k * d);
  });
  ParticleSystem ps;
  ps.epsilon = epsilon;
  ps.grid = grid;
  ps.paths.reserve(N);
  for (auto& v : store) ps.paths.emplace_back(grid.horizon, n, d, std::move(v));
  return ps;
}

namespace {

double coupled_distance(const std::vector<Path>& a, const std::vector<Path>& b, std::size_t node) {
  const std::size_t d = a[0].dim();
  if (d == 1) return wasserstein2(path_marginal_at_node(a, node), path_marginal_at_node(b, node));
  // Index coupling: an upper bound on W2 (the clouds share their noise by index).
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) s += std::pow(a[i](node, j) - b[i](node, j), 2);
  return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

PicardSolution solve_picard(const CoefficientSet& cs, const InitialCondition& init, std::size_t M,
                            const TimeGrid& grid, double epsilon, double tol, std::size_t max_iter,
                            std::uint64_t seed, const Executor& exec, const PicardOptions& opt) {
  if (M < 2) throw ParameterError("Picard cloud needs at least 2 paths");
  if (!(tol > 0.0)) throw ParameterError("Picard tolerance must be positive");
  if (max_iter < 1) throw ParameterError("max_iter must be at least 1");
  check_common(cs, init, M, grid, epsilon);
  const std::size_t d = cs.dim_x;
  const std::size_t n = grid.steps;

  std::vector<Path> prev;
  prev.reserve(M);
  std::vector<double> x0(d);
  for (std::size_t i = 0; i < M; ++i) {
    initial_state(init, seed, opt.tag, i, x0);
    Path p(grid.horizon, n, d);
    for (std::size_t k = 0; k <= n; ++k) std::copy(x0.begin(), x0.end(), p.at(k).begin());
    prev.push_back(std::move(p));
  }

  PicardSolution sol;
  sol.trace_is_upper_bound = d > 1;
  sol.convergence_trace.push_back(std::numeric_limits<double>::quiet_NaN());
  if (opt.keep_history) sol.law_flow.push_back(prev);

  for (std::size_t it = 1; it <= max_iter; ++it) {
    std::vector<EmpiricalMeasure> laws;
    laws.reserve(n + 1);
    for (std::size_t k = 0; k <= n; ++k) laws.push_back(path_marginal_at_node(prev, k));
    SimulateOptions so;
    so.tag = opt.tag;
    so.substeps = opt.substeps;
    so.frozen_law = [&laws](std::size_t k) -> const EmpiricalMeasure& { return laws[k]; };
    ParticleSystem next = simulate_particles(cs, init, M, grid, epsilon, seed, exec, so);

    std::vector<double> per_node(n + 1);
    exec.parallel_for(n + 1, [&](std::size_t b, std::size_t e) {
      for (std::size_t k = b; k < e; ++k) per_node[k] = coupled_distance(prev, next.paths, k);
    });
    const double gap = *std::max_element(per_node.begin(), per_node.end());
    if (!std::isfinite(gap)) throw NumericalError("non-finite Picard trace", it);
    sol.convergence_trace.push_back(gap);
    sol.iterations = it;
    prev = std::move(next.paths);
    if (opt.keep_history) sol.law_flow.push_back(prev);
    if (gap <= tol) {
      sol.converged = true;
      break;
    }
  }
  sol.final_paths = std::move(prev);
  return sol;
}

MonteCarloValue moment_diagnostic(const ParticleSystem& ps, int p) {
  if (p != 2 && p != 4 && p != 6 && p != 8) throw ParameterError("moment order must be 2, 4, 6 or 8");
  if (ps.paths.empty()) throw ParameterError("empty particle system");
  const std::size_t N = ps.paths.size();
  std::vector<double> v(N);
  for (std::size_t i = 0; i < N; ++i) v[i] = std::pow(sup_norm(ps.paths[i]), p);
  MonteCarloValue r;
  r.value = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(N);
  if (N > 1) {
    double s = 0.0;
    for (double a : v) s += (a - r.value) * (a - r.value);
    r.std_error = std::sqrt(s / static_cast<double>(N - 1) / static_cast<double>(N));
  }
  return r;
}

double moment_bound(const CoefficientSet& cs, const InitialCondition& init, double horizon, int p, double C) {
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  double y0 = 0.0;
  if (init.sampler) {
    if (init.moment_order < p) return std::numeric_limits<double>::infinity();
    const std::size_t draws = 10000;
    std::vector<double> x(d);
    for (std::size_t i = 0; i < draws; ++i) {
      init.sampler(rng::derive(0, "moment_bound/init", i), x);
      double s = 0.0;
      for (double a : x) s += a * a;
      y0 += std::pow(s, 0.5 * p);
    }
    y0 /= static_cast<double>(draws);
  } else {
    double s = 0.0;
    for (double a : init.point) s += a * a;
    y0 = std::pow(s, 0.5 * p);
  }
  const std::vector<double> zero(d, 0.0);
  const auto dirac0 = EmpiricalMeasure::dirac(zero);
  const std::size_t nodes = 1000;
  const double h = horizon / static_cast<double>(nodes);
  std::vector<double> b(d), sig(d * m);
  double ib = 0.0, is = 0.0;
  for (std::size_t k = 0; k < nodes; ++k) {
    const double t = (static_cast<double>(k) + 0.5) * h;
    cs.drift(t, zero, dirac0, b);
    cs.diffusion(t, zero, dirac0, sig);
    double nb = 0.0, ns = 0.0;
    for (double a : b) nb += a * a;
    for (double a : sig) ns += a * a;
    ib += std::sqrt(nb) * h;
    is += ns * h;
  }
  return C * (y0 + std::pow(ib, p) + std::pow(is, 0.5 * p)) * std::exp(C * horizon);
}

namespace {

double student_t975(std::size_t df) {
  static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                 2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086};
  return df >= 1 && df <= 20 ? table[df - 1] : 1.96 + 2.5 / static_cast<double>(df);
}

}  // namespace

ContinuityFit continuity_diagnostic(const ParticleSystem& ps, const std::vector<std::size_t>& lags) {
  if (ps.paths.empty()) throw ParameterError("empty particle system");
  if (lags.size() < 5) throw ParameterError("continuity fit needs at least 5 lags");
  const std::size_t n = ps.grid.steps;
  for (std::size_t i = 0; i < lags.size(); ++i) {
    if (lags[i] == 0 || lags[i] > n) throw ParameterError("lags must lie in [1, steps]");
    for (std::size_t j = 0; j < i; ++j)
      if (lags[j] == lags[i]) throw ParameterError("lags must be distinct");
  }
  const std::size_t d = ps.paths[0].dim();
  ContinuityFit fit;
  for (std::size_t lag : lags) {
    double s = 0.0;
    std::size_t count = 0;
    for (const Path& p : ps.paths)
      for (std::size_t k = 0; k + lag <= n; ++k) {
        for (std::size_t j = 0; j < d; ++j) s += std::pow(p(k + lag, j) - p(k, j), 2);
        ++count;
      }
    const double ms = s / static_cast<double>(count);
    if (!(ms > 0.0)) throw DomainError("degenerate lags: zero mean squared increment at lag " + std::to_string(lag));
    fit.lag_times.push_back(static_cast<double>(lag) * ps.grid.dt());
    fit.mean_sq_increment.push_back(ms);
  }
  const std::size_t L = lags.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    mx += std::log(fit.lag_times[i]);
    my += std::log(fit.mean_sq_increment[i]);
  }
  mx /= static_cast<double>(L);
  my /= static_cast<double>(L);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    const double dx = std::log(fit.lag_times[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(fit.mean_sq_increment[i]) - my);
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    const double r = std::log(fit.mean_sq_increment[i]) - fit.intercept - fit.slope * std::log(fit.lag_times[i]);
    ssr += r * r;
  }
  fit.half_width = student_t975(L - 2) * std::sqrt(ssr / static_cast<double>(L - 2) / sxx);
  return fit;
}

}  // namespace mvldp
