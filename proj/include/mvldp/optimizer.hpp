#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mvldp {

/// f(x, grad) returns the value and writes the gradient.
using Objective = std::function<double(std::span<const double>, std::span<double>)>;
/// In-place projection onto a closed convex feasible set.
using Projection = std::function<void(std::span<double>)>;

struct LbfgsOptions {
  std::size_t max_iterations = 400;
  std::size_t max_evaluations = 4000;
  std::size_t memory = 10;
  /// Stop when the (projected) gradient sup-norm falls below this.
  double gradient_tol = 1e-10;
  /// Stop after three iterations whose relative decrease is below this.
  double value_tol = 1e-13;
};

struct LbfgsResult {
  std::vector<double> x;
  double value = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  bool converged = false;
  std::string status;
};

/// Limited-memory BFGS with Armijo backtracking; with a projection the trial
/// points are projected (projected quasi-Newton).
LbfgsResult minimize_lbfgs(const Objective& f, std::vector<double> x0, const LbfgsOptions& opt = {},
                           const Projection& project = {});

}  // namespace mvldp
