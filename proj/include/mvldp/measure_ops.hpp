#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "mvldp/path_space.hpp"

namespace mvldp {

/// Weighted particle cloud in R^d. Immutable; mean and second moment are cached.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;
  /// atoms: N*d row-major; weights: N nonnegative, summing to 1 within 1e-12.
  EmpiricalMeasure(std::size_t dim, std::vector<double> atoms, std::vector<double> weights);

  static EmpiricalMeasure uniform(std::size_t dim, std::vector<double> atoms);
  static EmpiricalMeasure dirac(std::span<const double> point);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return weights_.size(); }
  std::span<const double> atom(std::size_t i) const noexcept { return {atoms_.data() + i * dim_, dim_}; }
  double weight(std::size_t i) const noexcept { return weights_[i]; }
  const std::vector<double>& atoms() const noexcept { return atoms_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  bool is_uniform() const noexcept { return uniform_; }

  std::span<const double> mean() const noexcept { return mean_; }
  /// sum_i w_i |x_i|^2
  double second_moment() const noexcept { return second_moment_; }

 private:
  void finish();

  std::size_t dim_ = 0;
  std::vector<double> atoms_;
  std::vector<double> weights_;
  std::vector<double> mean_;
  double second_moment_ = 0.0;
  bool uniform_ = false;
};

/// Largest cloud accepted by the assignment solver.
inline constexpr std::size_t kAssignmentCap = 2048;

/// Exact W2. d = 1: quantile coupling, any weights. d >= 2: assignment on
/// uniform clouds of equal size (at most kAssignmentCap atoms).
double wasserstein2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

/// W2 between two uniform equal-size clouds by minimum-cost assignment, any d.
double wasserstein2_assignment(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

double wasserstein2_to_dirac(const EmpiricalMeasure& mu, std::span<const double> point);

/// Transport cost with cost min(1, |x - y|). Exact when one side is a single atom
/// or both are uniform clouds of equal size.
double modified_wasserstein(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

/// Law of X + Y for independent X ~ mu, Y ~ nu (product cloud).
EmpiricalMeasure measure_add(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

/// Law of c X; c must be nonzero.
EmpiricalMeasure measure_scale(double c, const EmpiricalMeasure& mu);

/// Uniform measure on {path_i(t)}, t snapped to the shared grid.
EmpiricalMeasure path_marginal(std::span<const Path> cloud, double t);
EmpiricalMeasure path_marginal_at_node(std::span<const Path> cloud, std::size_t node);

/// max over grid nodes of W2 between the time marginals of two path clouds.
double sup_time_wasserstein2(std::span<const Path> a, std::span<const Path> b);

/// Minimum-cost perfect assignment for an n x n cost given by cost(i, j).
/// Returns the column assigned to each row.
std::vector<std::size_t> solve_assignment(std::size_t n, const std::vector<double>& cost);

void write_measure_csv(const EmpiricalMeasure& mu, std::ostream& out, int precision = 17);
EmpiricalMeasure read_measure_csv(std::istream& in);

}  // namespace mvldp
