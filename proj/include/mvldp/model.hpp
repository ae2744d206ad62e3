#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvldp/measure_ops.hpp"
#include "mvldp/parallel.hpp"

namespace mvldp {

/// (t, x, law, out). Drift writes d values; diffusion writes d x d' row-major.
using CoefficientFn = std::function<void(double, std::span<const double>, const EmpiricalMeasure&, std::span<double>)>;

struct CoefficientSet {
  std::size_t dim_x = 1;
  std::size_t dim_w = 1;
  CoefficientFn drift;
  CoefficientFn diffusion;
  /// Optional d x d Jacobian of the drift in x; finite differences otherwise.
  CoefficientFn drift_jacobian;
  /// Optional: out[(i * d' + j) * d + k] = d sigma_ij / d x_k.
  CoefficientFn diffusion_jacobian;

  double lipschitz_L = 1.0;
  int poly_degree_q = 2;
  std::optional<double> diffusion_bound_M;
  std::optional<double> time_holder_beta;

  /// False when drift and diffusion ignore the law argument.
  bool law_dependent = true;
  /// True when sigma does not depend on (t, x, law).
  bool constant_diffusion = false;

  void validate() const;

  void eval_drift(double t, std::span<const double> x, const EmpiricalMeasure& mu, std::span<double> out) const {
    drift(t, x, mu, out);
  }
  void eval_diffusion(double t, std::span<const double> x, const EmpiricalMeasure& mu, std::span<double> out) const {
    diffusion(t, x, mu, out);
  }
  void eval_drift_jacobian(double t, std::span<const double> x, const EmpiricalMeasure& mu, std::span<double> out) const;
  void eval_diffusion_jacobian(double t, std::span<const double> x, const EmpiricalMeasure& mu,
                               std::span<double> out) const;
};

/// Limit coefficients plus the perturbed family and its declared uniform gap.
struct EpsilonFamily {
  CoefficientSet base;
  std::function<CoefficientSet(double)> perturbed;
  std::function<double(double)> eta;

  /// Family with b_eps = b, sigma_eps = sigma, eta = 0.
  static EpsilonFamily constant(const CoefficientSet& cs);
};

struct ModelFact {
  std::string key;
  double value = 0.0;
  std::string origin;  ///< "closed-form", "definition" or "oracle"
  std::string note;
};

struct ModelLibraryEntry {
  std::string name;
  std::string description;
  std::map<std::string, double> parameters;
  EpsilonFamily family;
  std::vector<double> default_x0;
  std::vector<ModelFact> facts;
  double probe_box = 5.0;
  /// Constant C of the p = 2 moment bound C (E|Y0|^2 + (int|b(t,0,d0)|)^2 + int|sigma(t,0,d0)|^2) e^{CT}.
  double moment_constant = 4.0;
  /// Scale multiplying 5 (M^-1/2 + N^-1/2) in the Picard/particle agreement check.
  double picard_scale = 1.0;
  /// Particles per system in Monte Carlo LDP runs.
  std::size_t ldp_particles = 1000;

  const CoefficientSet& coefficients() const { return family.base; }
  std::optional<double> fact(const std::string& key) const;
};

/// Parses "name" or "name:key=value,key=value". Throws ConfigError for unknown names/keys.
ModelLibraryEntry make_model(const std::string& spec);
std::vector<std::string> list_models();

using ModelFactory = std::function<ModelLibraryEntry(const std::map<std::string, double>&)>;
/// Adds a compiled-in model to the registry.
void register_model(const std::string& name, ModelFactory factory);

struct ProbeReport {
  std::string name;
  std::size_t samples = 0;
  double max_observed = 0.0;
  double declared = 0.0;
  bool pass = true;
  std::size_t worst_sample = 0;
  std::string worst_point;  ///< human-readable (t, x, x') of the maximiser
};

struct ProbeOptions {
  std::size_t samples = 10000;
  double box_radius = 5.0;
  double horizon = 1.0;
  std::uint64_t seed = 1;
  /// Relative slack for round-off when comparing against the declared constant.
  double rel_tol = 1e-9;
};

/// Max of <x-x', b(t,x,mu)-b(t,x',mu)> / |x-x'|^2 against L.
ProbeReport probe_monotonicity(const CoefficientSet& cs, const ProbeOptions& opt,
                               const Executor& exec = Executor::serial());
/// Max of |b(t,x,mu)-b(t,x,mu')| / W2(mu,mu') against L.
ProbeReport probe_drift_measure_lipschitz(const CoefficientSet& cs, const ProbeOptions& opt,
                                          const Executor& exec = Executor::serial());
/// Max of |b(t,x,mu)-b(t,x',mu)| / ((1+|x|^{q-1}+|x'|^{q-1})|x-x'|) against L.
ProbeReport probe_polynomial_growth(const CoefficientSet& cs, const ProbeOptions& opt,
                                    const Executor& exec = Executor::serial());
/// Max of |sigma(t,x,mu)-sigma(t,x',mu')|_F / (|x-x'| + W2(mu,mu')) against L.
ProbeReport probe_lipschitz_sigma(const CoefficientSet& cs, const ProbeOptions& opt,
                                  const Executor& exec = Executor::serial());
/// Max of |sigma|_F against M (skipped, passing, when M is not declared).
ProbeReport probe_diffusion_bound(const CoefficientSet& cs, const ProbeOptions& opt,
                                  const Executor& exec = Executor::serial());

struct UniformConvergenceReport {
  std::vector<double> eps;
  std::vector<double> gap;       ///< sampled sup |b_eps - b| + |sigma_eps - sigma|_F
  std::vector<double> declared;  ///< eta(eps)
  bool within_declared = true;
  bool monotone = true;
  bool pass = true;
};

UniformConvergenceReport probe_uniform_convergence(const EpsilonFamily& fam, const std::vector<double>& eps_list,
                                                   const ProbeOptions& opt,
                                                   const Executor& exec = Executor::serial());

/// Every probe against the declared constants.
std::vector<ProbeReport> probe_all(const CoefficientSet& cs, const ProbeOptions& opt,
                                   const Executor& exec = Executor::serial());

}  // namespace mvldp
