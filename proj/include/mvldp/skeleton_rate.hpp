#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvldp/model.hpp"
#include "mvldp/mvsde_solver.hpp"
#include "mvldp/optimizer.hpp"
#include "mvldp/parallel.hpp"
#include "mvldp/path_space.hpp"

namespace mvldp {

struct SkeletonOptions {
  /// Step-halving defect tolerance, relative to 1 + sup|path|.
  double tolerance = 1e-6;
  bool check_defect = true;
};

struct SkeletonSolution {
  Path path;
  CameronMartinPath driver;
  /// Richardson estimate of the global error from a rerun at half the step.
  double residual = 0.0;
};

/// psi' = b(t, psi, delta_psi), psi(0) = x, by classical RK4.
SkeletonSolution solve_psi(const CoefficientSet& cs, std::span<const double> x, const TimeGrid& grid,
                           const SkeletonOptions& opt = {});

/// Phi' = b(t, Phi, delta_psi(t)) + sigma(t, Phi, delta_psi(t)) hdot, on the grid of h.
/// Shares the integrator with solve_psi, so h = 0 reproduces psi bit for bit.
SkeletonSolution solve_skeleton(const CoefficientSet& cs, std::span<const double> x, const CameronMartinPath& h,
                                const SkeletonOptions& opt = {});

/// Coefficients frozen at the coarse nodes k T / m (with law delta_psi(kT/m)),
/// evaluated on the grid of g; grid_size must be a multiple of m.
Path discrete_skeleton_Fm(const CoefficientSet& cs, std::span<const double> x, const CameronMartinPath& g,
                          std::size_t m);

struct RateValue {
  double value = 0.0;
  bool infinite = false;
  /// No feasible control found within budget (rate_of_event only).
  bool infeasible = false;
  /// Optimizer output: an upper bound on the infimum.
  bool upper_bound = false;
  std::optional<CameronMartinPath> minimizer;
  /// Largest per-cell least-squares residual (rate_of_path) or final event margin (rate_of_event).
  double attainability_residual = 0.0;
  std::size_t worst_cell = 0;
  std::size_t evaluations = 0;
};

/// Rate of the piecewise-linear path f: per cell, the minimum-norm control
/// solving sigma u = fdot - b, coefficients at the chord midpoint with law delta_psi.
RateValue rate_of_path(const CoefficientSet& cs, std::span<const double> x, const Path& f);

/// Same quantity through 1/2 sum (fdot - b)^T (sigma sigma^T)^{-1} (fdot - b) dt;
/// requires square invertible sigma along f.
double rate_of_path_quadratic(const CoefficientSet& cs, std::span<const double> x, const Path& f);

struct EventSpec {
  enum class Kind { terminal, supexit, supball, holderball, holderout };
  enum class Center { psi, start, line };

  Kind kind = Kind::terminal;
  std::vector<double> v{1.0};  ///< terminal direction
  double c = 1.0;              ///< terminal level
  double radius = 1.0;         ///< R or r
  double alpha = 0.3;
  Center center = Center::psi;
  double slope = 1.0;          ///< line center: x + slope t

  /// Signed margin: >= 0 iff f lies in the event.
  double margin(const Path& f, const Path& psi) const;
  bool contains(const Path& f, const Path& psi) const { return margin(f, psi) >= 0.0; }
  /// Margin and its gradient with respect to the path nodes (n+1) x d.
  double margin_gradient(const Path& f, const Path& psi, std::span<double> grad) const;
  Path center_path(const Path& psi) const;
};

/// "terminal:v=1,c=1", "supexit:R=1", "supball:r=0.5,center=psi",
/// "holderball:alpha=0.3,r=1,center=line,slope=1", "holderout:...".
/// Vector v uses '|' between coordinates. Throws ConfigError.
EventSpec parse_event(const std::string& text);
std::string to_string(const EventSpec& e);

struct RateBudget {
  std::size_t grid_size = 100;
  double horizon = 1.0;
  std::size_t starts = 5;  ///< init plus 4 perturbations
  std::size_t doublings = 12;
  double initial_weight = 1.0;
  /// Target margin inside the event, relative to the event scale.
  double margin = 1e-4;
  LbfgsOptions lbfgs{};
  std::uint64_t seed = 1;
};

/// Quasi-Newton minimisation of 1/2 |hdot|^2 plus a smooth-hinge exact penalty on
/// the event margin of solve_skeleton(h); result flagged as an upper bound.
RateValue rate_of_event(const CoefficientSet& cs, std::span<const double> x, const EventSpec& event,
                        const std::optional<CameronMartinPath>& init, const RateBudget& budget = {},
                        const Executor& exec = Executor::serial());

/// Penalised objective used by rate_of_event, exposed for gradient checks.
class EventObjective {
 public:
  EventObjective(const CoefficientSet& cs, std::span<const double> x, const EventSpec& event, const TimeGrid& grid,
                 double weight, double margin, double smoothing);

  double operator()(std::span<const double> hdot, std::span<double> grad) const;
  /// Event margin of the skeleton driven by hdot.
  double margin(std::span<const double> hdot) const;
  const Path& psi() const noexcept { return psi_.path; }
  void set_weight(double w) noexcept { weight_ = w; }

 private:
  const CoefficientSet& cs_;
  std::vector<double> x_;
  EventSpec event_;
  TimeGrid grid_;
  SkeletonSolution psi_;
  std::vector<double> psi_stages_;
  double weight_;
  double target_;
  double smoothing_;
};

/// Hölder seminorm with a maximising node pair (i < j).
struct HolderArgmax {
  double value = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
};
HolderArgmax holder_argmax(const Path& f, double alpha);

namespace detail {

/// RK4 of the controlled skeleton; `law_stages` (4 per step, d each) freezes the
/// law at given states, nullptr means the law follows the state itself (psi).
/// Writes the stage states used by the law when `stages_out` is non-null.
Path integrate_rk4(const CoefficientSet& cs, std::span<const double> x, const TimeGrid& grid,
                   std::span<const double> hdot, const std::vector<double>* law_stages,
                   std::vector<double>* stages_out);

/// Adds to `grad` (n x d') the pull-back through integrate_rk4 of `lambda`, the
/// derivative of a scalar with respect to the (n+1) x d path nodes.
void adjoint_rk4(const CoefficientSet& cs, const TimeGrid& grid, std::span<const double> hdot,
                 const std::vector<double>& law_stages, const std::vector<double>& stages,
                 std::span<const double> lambda, std::span<double> grad);

}  // namespace detail

}  // namespace mvldp
