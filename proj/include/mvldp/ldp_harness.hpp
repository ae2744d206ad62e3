#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mvldp/parallel.hpp"
#include "mvldp/skeleton_rate.hpp"

namespace mvldp {

inline constexpr double kWilsonZ99 = 2.5758293035489004;
/// One-sided 99% quantile, used for the upper bound of a cell without hits.
inline constexpr double kWilsonZ99OneSided = 2.3263478740408408;

struct WilsonInterval {
  double lo = 0.0;
  double hi = 1.0;
};

WilsonInterval wilson_interval(std::size_t hits, std::size_t trials, double z = kWilsonZ99);

/// log P[N(0,1) > x], accurate far into the tail.
double log_normal_tail(double x);

/// P[sup_{t <= tau} |W_t| >= a] for a scalar Brownian motion (image and eigenfunction series).
double brownian_sup_two_sided(double a, double tau);
/// P[sup_{t <= tau} W_t >= a] = 2 P[W_tau >= a].
double brownian_sup_one_sided(double a, double tau);

/// 4 d' exp(-delta^2 / (2 d' tau eps)).
double brownian_sup_bound(double delta, double eps, double tau, std::size_t dim_w);

/// C max(1, (u/v)^{1/alpha}) exp(-u^{1/alpha} / (C v^{1/alpha - 2})).
double holder_sup_bound(double u, double v, double alpha, double C);

/// Constant of the Hölder-versus-sup bound, pinned by tools/calibrate_holder_bound:
/// 1.25 times the smallest C covering its sweep (21.73, at alpha = 0.15; 6.17 for alpha >= 0.2).
inline constexpr double kHolderBoundC = 27.16;

enum class LdpMethod { monte_carlo, exact_gaussian };
enum class NormKind { sup, holder };

struct LdpExperiment {
  std::string model = "brownian";
  /// Empty: the model's default starting point.
  std::vector<double> x0;
  EventSpec event;
  std::vector<double> eps_schedule;
  std::size_t replicas = 100000;
  /// Particles per system; 0 takes the model card value.
  std::size_t particles = 0;
  std::size_t grid_size = 100;
  double horizon = 1.0;
  NormKind norm = NormKind::sup;
  double alpha = 0.3;
  std::uint64_t seed = 1;
  LdpMethod method = LdpMethod::monte_carlo;
  RateBudget rate_budget{};

  void validate() const;
};

struct LdpCell {
  double eps = 0.0;
  std::size_t hits = 0;
  std::size_t replicas = 0;
  double p_hat = 0.0;
  double wilson_lo = 0.0;
  double wilson_hi = 1.0;
  /// -eps log p_hat; for a censored cell -eps log(wilson_hi), a lower bound.
  double minus_eps_log_p = 0.0;
  bool censored = false;
};

struct LdpEstimate {
  std::vector<LdpCell> cells;
  /// Linear-in-eps value at eps = 0 over the last three uncensored cells (NaN with fewer than two).
  double extrapolated = std::numeric_limits<double>::quiet_NaN();
  RateValue reference;
  /// -eps log p moves monotonically along the schedule, in the direction of the reference
  /// as seen from the first cell (the last cell may overshoot).
  bool monotone_toward_reference = false;
  /// |last - reference| / reference.
  double final_relative_error = std::numeric_limits<double>::quiet_NaN();
};

LdpEstimate estimate_event_probability(const LdpExperiment& exp, const Executor& exec = Executor::serial());

struct BoundCheck {
  std::string name;
  std::vector<double> parameters;
  std::size_t hits = 0;
  std::size_t replicas = 0;
  double p_hat = 0.0;
  double wilson_hi = 1.0;
  double bound = 0.0;
  /// Closed-form probability where one exists, NaN otherwise.
  double exact = std::numeric_limits<double>::quiet_NaN();
  bool pass = false;
};

/// P[||W||_alpha >= u, ||W||_inf <= v] on [0,1] against holder_sup_bound; one path set for the whole grid.
/// parameters = {u, v, alpha}.
std::vector<BoundCheck> check_holder_event_grid(const std::vector<double>& us, const std::vector<double>& vs,
                                                const std::vector<double>& alphas, std::size_t replicas,
                                                std::size_t grid_size, std::uint64_t seed,
                                                const Executor& exec = Executor::serial(),
                                                double C = kHolderBoundC);
BoundCheck check_holder_event_bound(double u, double v, double alpha, std::size_t replicas, std::size_t grid_size,
                                    std::uint64_t seed, const Executor& exec = Executor::serial(),
                                    double C = kHolderBoundC);

/// P[sup_{t <= tau} |sqrt(eps) W_t| >= delta] against brownian_sup_bound; exact is the
/// two-sided value for d' = 1. parameters = {delta, eps, tau, d'}.
std::vector<BoundCheck> check_brownian_sup_grid(const std::vector<double>& deltas, const std::vector<double>& epss,
                                                double tau, std::size_t dim_w, std::size_t replicas,
                                                std::size_t grid_size, std::uint64_t seed,
                                                const Executor& exec = Executor::serial());
BoundCheck check_brownian_sup_bound(double delta, double eps, double tau, std::size_t dim_w, std::size_t replicas,
                                    std::uint64_t seed, std::size_t grid_size = 1024,
                                    const Executor& exec = Executor::serial());

struct EquivalenceCell {
  double eps = 0.0;
  /// Coarse resolution; 0 marks the particle-system versus frozen-law row.
  std::size_t m = 0;
  std::size_t hits = 0;
  std::size_t replicas = 0;
  double p_hat = 0.0;
  /// eps log p_hat, or eps log(one-sided upper bound) when censored.
  double eps_log_p = 0.0;
  bool censored = false;
};

struct EquivalenceReport {
  double delta = 0.25;
  std::vector<double> eps_schedule;
  std::vector<std::size_t> m_schedule;
  /// [eps][m]: gap between the frozen-law process and its coarse-coefficient version.
  std::vector<std::vector<EquivalenceCell>> discretization;
  /// Per eps: gap between a particle of the interacting system and the frozen-law process.
  std::vector<EquivalenceCell> particle_vs_frozen;
  std::size_t informative = 0;
  bool decreasing_in_m = false;
  bool decreasing_in_eps = false;
};

struct EquivalenceOptions {
  double delta = 0.25;
  std::size_t grid_size = 256;
  std::size_t particles = 0;  ///< 0: model card value
  double horizon = 1.0;
};

EquivalenceReport exponential_equivalence_gap(const std::string& model, const std::vector<double>& eps_schedule,
                                              const std::vector<std::size_t>& m_schedule, std::size_t replicas,
                                              std::uint64_t seed, const EquivalenceOptions& opt = {},
                                              const Executor& exec = Executor::serial());

/// Largest delta <= 1/2 in {rho / 2^k} such that the Hölder-versus-sup bound of the
/// stochastic-integral term, holder_sup_bound(rho / (4 M l sqrt(eps)), delta / sqrt(eps)),
/// is at most e^{-R/eps}. M bounds |sigma|; l is the number of freezing intervals (1 for constant sigma).
double select_spot_delta(double rho, double alpha, double eps, double R, double M = 1.0, std::size_t l = 1,
                         double C = kHolderBoundC);

struct HolderSpotCheck {
  double eps = 0.0;
  double rho = 1.0;
  double delta = 0.5;
  double R = 1.0;
  double alpha = 0.3;
  std::size_t hits = 0;
  std::size_t replicas = 0;
  double p_hat = 0.0;
  double threshold = 0.0;  ///< e^{-R/eps}
  double bound = 0.0;      ///< bound of select_spot_delta at the selected delta
  bool pass = false;
};

/// Empirical P[||X_eps - Phi(h)||_alpha >= rho, ||sqrt(eps) W - h||_inf <= delta] for
/// the line control h(t) = slope t (d' = 1 models).
HolderSpotCheck holder_ldp_spot_check(const std::string& model, double slope, double alpha, double rho, double R,
                                      double eps, std::size_t replicas, std::size_t grid_size, std::uint64_t seed,
                                      const Executor& exec = Executor::serial());

}  // namespace mvldp
