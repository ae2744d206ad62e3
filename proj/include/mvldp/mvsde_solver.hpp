#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvldp/errors.hpp"
#include "mvldp/measure_ops.hpp"
#include "mvldp/model.hpp"
#include "mvldp/parallel.hpp"
#include "mvldp/path_space.hpp"
#include "mvldp/rng.hpp"

namespace mvldp {

struct TimeGrid {
  double horizon = 1.0;
  std::size_t steps = 100;

  double dt() const noexcept { return horizon / static_cast<double>(steps); }
  double time(std::size_t k) const noexcept { return horizon * static_cast<double>(k) / static_cast<double>(steps); }
  void validate() const;
};

/// N(0, dt I) increments per (replica, step). With `substeps` = s each increment
/// is the sum of s finer increments, so a grid of n steps with s = 2 sees exactly
/// the noise of a grid of 2n steps with s = 1 (common random numbers).
class BrownianDriver {
 public:
  BrownianDriver(std::uint64_t seed, std::string tag, std::size_t dim_w, TimeGrid grid, std::size_t substeps = 1);

  rng::StreamKey key(std::uint64_t replica) const noexcept { return rng::derive(seed_, tag_, replica); }
  void increment(rng::StreamKey key, std::size_t step, std::span<double> out) const noexcept;
  void increment(std::uint64_t replica, std::size_t step, std::span<double> out) const noexcept {
    increment(key(replica), step, out);
  }

  std::size_t dim_w() const noexcept { return dim_w_; }
  std::size_t substeps() const noexcept { return substeps_; }
  const TimeGrid& grid() const noexcept { return grid_; }

 private:
  std::uint64_t seed_;
  std::string tag_;
  std::size_t dim_w_;
  TimeGrid grid_;
  std::size_t substeps_;
  double sub_sd_;
};

struct InitialCondition {
  std::vector<double> point;
  /// Optional random initial value; receives the replica's own stream.
  std::function<void(rng::StreamKey, std::span<double>)> sampler;
  /// Largest p with E|Y0|^p < infinity, declared by the sampler's author.
  double moment_order = std::numeric_limits<double>::infinity();

  static InitialCondition fixed(std::vector<double> x0);
  std::size_t dim() const noexcept { return point.size(); }
};

struct SimulateOptions {
  std::string tag = "particles";
  std::size_t substeps = 1;
  /// Stream index per particle position; defaults to 0..N-1.
  std::vector<std::uint64_t> replica_ids;
  /// Replaces the empirical law by a prescribed flow (Picard iterations, frozen-law schemes).
  std::function<const EmpiricalMeasure&(std::size_t step)> frozen_law;
};

struct ParticleSystem {
  double epsilon = 0.0;
  TimeGrid grid;
  std::vector<Path> paths;

  std::size_t size() const noexcept { return paths.size(); }
  EmpiricalMeasure marginal(std::size_t node) const { return path_marginal_at_node(paths, node); }
};

/// One tamed Euler step: x += b/(1 + dt|b|) dt + sqrt(eps) sigma dW.
inline void tamed_euler_step(std::span<double> x, std::span<const double> drift, std::span<const double> sigma,
                             std::span<const double> dw, double dt, double sqrt_eps) noexcept {
  const std::size_t d = x.size();
  const std::size_t m = dw.size();
  double nb = 0.0;
  for (std::size_t i = 0; i < d; ++i) nb += drift[i] * drift[i];
  const double tame = dt / (1.0 + dt * std::sqrt(nb));
  for (std::size_t i = 0; i < d; ++i) {
    double noise = 0.0;
    for (std::size_t j = 0; j < m; ++j) noise += sigma[i * m + j] * dw[j];
    x[i] += drift[i] * tame + sqrt_eps * noise;
  }
}

/// Streams the N-particle system: observer(step, states) is called for step 0..n
/// with the N x d row-major state after that step.
void simulate_streaming(const CoefficientSet& cs, const InitialCondition& init, std::size_t N, const TimeGrid& grid,
                        double epsilon, std::uint64_t seed, const Executor& exec, const SimulateOptions& opt,
                        const std::function<void(std::size_t, std::span<const double>)>& observer);

ParticleSystem simulate_particles(const CoefficientSet& cs, const InitialCondition& init, std::size_t N,
                                  const TimeGrid& grid, double epsilon, std::uint64_t seed,
                                  const Executor& exec = Executor::serial(), const SimulateOptions& opt = {});

/// Single trajectory whose law argument is the Dirac mass at its own state
/// (the N = 1 particle system), streamed to `observer(step, x)` without storage.
template <class Observer>
void simulate_single(const CoefficientSet& cs, std::span<const double> x0, const TimeGrid& grid, double epsilon,
                     const BrownianDriver& driver, rng::StreamKey key, Observer&& observer) {
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  std::vector<double> x(x0.begin(), x0.end()), b(d), sig(d * m), dw(m);
  const double dt = grid.dt();
  const double se = std::sqrt(epsilon);
  EmpiricalMeasure law = EmpiricalMeasure::dirac(x);
  const bool frozen_sigma = cs.constant_diffusion;
  if (frozen_sigma) cs.diffusion(0.0, x, law, sig);
  observer(std::size_t{0}, std::span<const double>(x));
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const double t = grid.time(k);
    if (cs.law_dependent) law = EmpiricalMeasure::dirac(x);
    cs.drift(t, x, law, b);
    if (!frozen_sigma) cs.diffusion(t, x, law, sig);
    driver.increment(key, k, dw);
    tamed_euler_step(x, b, sig, dw, dt, se);
    for (double v : x)
      if (!std::isfinite(v)) throw NumericalError("non-finite state in single-trajectory simulation", k + 1);
    observer(k + 1, std::span<const double>(x));
  }
}

struct PicardOptions {
  std::string tag = "picard";
  std::size_t substeps = 1;
  bool keep_history = false;
};

struct PicardSolution {
  std::size_t iterations = 0;
  bool converged = false;
  /// Entry k: sup over grid times of W2 between iterations k and k-1 (k >= 1).
  std::vector<double> convergence_trace;
  /// True when the trace is an index-coupling upper bound (d >= 2).
  bool trace_is_upper_bound = false;
  std::vector<Path> final_paths;
  /// All iterates' path clouds when keep_history is set; iterate 0 is the constant-path law.
  std::vector<std::vector<Path>> law_flow;
};

PicardSolution solve_picard(const CoefficientSet& cs, const InitialCondition& init, std::size_t M,
                            const TimeGrid& grid, double epsilon, double tol, std::size_t max_iter,
                            std::uint64_t seed, const Executor& exec = Executor::serial(),
                            const PicardOptions& opt = {});

struct MonteCarloValue {
  double value = 0.0;
  double std_error = 0.0;
};

/// Empirical E[sup_t |Y(t)|^p] over particles with its standard error; p in {2,4,6,8}.
MonteCarloValue moment_diagnostic(const ParticleSystem& ps, int p);

/// Right side C (E|Y0|^p + (int |b(t,0,delta_0)| dt)^p + (int |sigma(t,0,delta_0)|^2 dt)^{p/2}) e^{CT}.
double moment_bound(const CoefficientSet& cs, const InitialCondition& init, double horizon, int p, double C);

struct ContinuityFit {
  std::vector<double> lag_times;
  std::vector<double> mean_sq_increment;
  double slope = 0.0;
  double intercept = 0.0;
  /// 95% half-width of the slope from the regression residuals.
  double half_width = 0.0;
};

/// Least-squares slope of log E|Y(t+l) - Y(t)|^2 against log l, averaging over
/// particles and all start nodes. Lags are in grid steps.
ContinuityFit continuity_diagnostic(const ParticleSystem& ps,
                                    const std::vector<std::size_t>& lags = {1, 2, 4, 8, 16});

}  // namespace mvldp
