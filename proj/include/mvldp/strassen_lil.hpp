#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvldp/measure_ops.hpp"
#include "mvldp/model.hpp"
#include "mvldp/optimizer.hpp"
#include "mvldp/parallel.hpp"
#include "mvldp/path_space.hpp"
#include "mvldp/skeleton_rate.hpp"

namespace mvldp {

/// sqrt(u log log u); DomainError for u <= 3.
double lil_scale(double u);

/// Family of bijections Gamma_a of R^d fixing a center, with Gamma_a^-1 = Gamma_{1/a}.
class ContractionSystem {
 public:
  using Map = std::function<void(double, std::span<const double>, std::span<double>)>;

  /// `jacobian` writes d x d (row r, column i = dGamma_r/dy_i); `hessian` writes
  /// out[(r*d+i)*d+j]. Either may be empty for a non-differentiable system.
  ContractionSystem(std::vector<double> center, Map apply, Map jacobian = {}, Map hessian = {},
                    bool is_linear = false);

  /// Gamma_a(y) = (y - x)/a + x.
  static ContractionSystem linear(std::vector<double> center);

  std::size_t dim() const noexcept { return center_.size(); }
  const std::vector<double>& center() const noexcept { return center_; }
  bool is_linear() const noexcept { return linear_; }
  bool differentiable() const noexcept { return static_cast<bool>(jacobian_) && static_cast<bool>(hessian_); }

  void apply(double a, std::span<const double> y, std::span<double> out) const;
  std::vector<double> apply(double a, std::span<const double> y) const;
  /// UnsupportedError when the system carries no derivatives.
  void jacobian(double a, std::span<const double> y, std::span<double> out) const;
  void hessian(double a, std::span<const double> y, std::span<double> out) const;

 private:
  std::vector<double> center_;
  Map apply_;
  Map jacobian_;
  Map hessian_;
  bool linear_ = false;
};

struct ContractionProbe {
  std::size_t samples = 0;
  double center_error = 0.0;
  double identity_error = 0.0;
  double inverse_error = 0.0;
  /// Largest excess of |second difference under Gamma_a| over the same under Gamma_b, a >= b.
  double second_difference_excess = 0.0;
  std::size_t violations = 0;
  bool pass = false;
};

/// Checks the defining properties on random points and scale pairs in [-box, box]^d.
ContractionProbe probe_contraction(const ContractionSystem& gamma, std::size_t samples = 1000,
                                   std::uint64_t seed = 1, double box = 5.0, double tol = 1e-10);

/// Z_u(t_k) = Gamma_{lil_scale(u)}(Y(u t_k)) on [0,1] with `out_steps` cells; every
/// u t_k must be a node of y. DomainError otherwise, or for u <= 3 or u > horizon.
Path rescale(const ContractionSystem& gamma, const Path& y, double u, std::size_t out_steps = 0);

/// Transformed coefficients at (u, y, law).
/// sigma_u = phi J sigma(Gamma^-1 y), b_u = u (J b + 1/2 sum_ij (sigma sigma^T)_ij H_ij) at Gamma^-1 y,
/// with phi = lil_scale(u), J and H the derivatives of Gamma_phi, and the law pushed through Gamma_{1/phi}.
void transformed_coefficients(const ContractionSystem& gamma, const CoefficientSet& cs, double u,
                              std::span<const double> y, const EmpiricalMeasure& law, std::span<double> drift_out,
                              std::span<double> diffusion_out);

struct TransformedCoefficientReport {
  std::vector<double> u_values;
  /// Per u: max over probes of |b_u(y)|.
  std::vector<double> drift_size;
  /// Per u: max over probes of |sigma_u(y) - sigma_{u_last}(y)| (Frobenius).
  std::vector<double> diffusion_change;
  bool drift_converges = false;
  bool diffusion_converges = false;
  /// Linear system centered at 0 with constant sigma: max deviation of the generic
  /// evaluation from (u/phi) b(phi y) and sigma. NaN when the case does not apply.
  double specialization_error = 0.0;
};

TransformedCoefficientReport transformed_coefficients_report(const ContractionSystem& gamma,
                                                             const CoefficientSet& cs,
                                                             const std::vector<double>& u_values,
                                                             const std::vector<std::vector<double>>& probes);

/// Limit set {Phi(h): ||hdot||^2 <= 2} of the skeleton driven by the limit coefficients.
class LimitSetK {
 public:
  static constexpr double kEnergy = 2.0;

  LimitSetK(CoefficientSet generator, std::vector<double> center, std::size_t grid_size = 64);

  /// Limit of the transformed coefficients of `cs`; UnsupportedError when the
  /// transformed drift does not settle or the diffusion is not constant in the limit.
  static LimitSetK from_model(const ContractionSystem& gamma, const CoefficientSet& cs, std::size_t grid_size = 64);

  const CoefficientSet& generator() const noexcept { return generator_; }
  const std::vector<double>& center() const noexcept { return center_; }
  std::size_t grid_size() const noexcept { return grid_size_; }

  Path member(const CameronMartinPath& h) const;
  /// Stores h after checking the energy constraint (DomainError otherwise).
  void add_member(CameronMartinPath h);
  const std::vector<CameronMartinPath>& members() const noexcept { return members_; }

 private:
  CoefficientSet generator_;
  std::vector<double> center_;
  std::size_t grid_size_;
  std::vector<CameronMartinPath> members_;
};

struct DistanceBudget {
  std::size_t starts = 3;
  /// Inverse temperatures of the smoothed maximum, relative to the current norm.
  std::vector<double> sharpness{30.0, 150.0, 750.0, 4000.0};
  LbfgsOptions lbfgs{200, 800, 10, 1e-12, 1e-10};
  std::uint64_t seed = 1;
};

struct DistanceResult {
  double value = 0.0;
  /// The optimizer only certifies feasible points, so this is always an upper bound.
  bool upper_bound = true;
  bool budget_exhausted = false;
  CameronMartinPath minimizer;
  std::size_t evaluations = 0;
};

/// Minimizes ||z - Phi(h)||_alpha over ||hdot||^2 <= 2 on z's grid.
DistanceResult distance_to_K(const Path& z, const LimitSetK& k, double alpha, const DistanceBudget& budget = {});

struct StrassenOptions {
  double horizon = 1e6;
  double c = 2.0;
  double alpha = 0.25;
  std::size_t trajectories = 64;
  std::size_t n_per_unit = 64;
  std::size_t substeps = 1;
  /// Cells of each rescaled path on [0,1].
  std::size_t rescale_steps = 64;
  /// Extra u values per level for the sup in A_{j,c}.
  std::size_t u_per_level = 8;
  double epsilon = 1.0;
  std::uint64_t seed = 1;
  bool distances = true;
  std::size_t trend_levels = 5;
  DistanceBudget budget;
};

struct StrassenLevel {
  int j = 0;
  double u = 0.0;
  /// Per trajectory; empty when distances are off.
  std::vector<double> d_alpha;
  std::vector<double> a_jc;
  double median_d_alpha = 0.0;
  double median_a_jc = 0.0;
};

struct StrassenReport {
  std::string model;
  StrassenOptions options;
  std::vector<StrassenLevel> levels;
  /// Per trajectory: sup over integer u in [e^e, U] of the first coordinate of Z_u(1) - x.
  std::vector<double> sup_z1;
  double sup_z1_median = 0.0;
  double sup_z1_mean = 0.0;
  double sup_z1_max = 0.0;
  bool d_alpha_trend_nonincreasing = false;
  bool a_jc_trend_nonincreasing = false;
  /// Median over trajectories of max_{j >= j0} d_alpha, per starting level j0.
  std::vector<double> compactness_proxy;
  bool compactness_proxy_nonincreasing = false;
  double seconds = 0.0;
};

StrassenReport strassen_experiment(const std::string& model, const ContractionSystem& gamma,
                                   const StrassenOptions& opt, const Executor& exec);

double median(std::vector<double> v);

}  // namespace mvldp
