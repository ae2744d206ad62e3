#include "mvldp/ldp_harness.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvldp/errors.hpp"
#include "mvldp/model.hpp"
#include "mvldp/mvsde_solver.hpp"

namespace mvldp {

namespace {

double normal_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

// Batch size for Monte Carlo: whole systems for interacting models, large blocks otherwise.
std::size_t batch_size(const ModelLibraryEntry& entry, std::size_t requested) {
  if (requested > 0) return requested;
  return entry.coefficients().law_dependent ? std::max<std::size_t>(entry.ldp_particles, 1) : 4096;
}

std::vector<double> start_point(const ModelLibraryEntry& entry, const std::vector<double>& x0) {
  std::vector<double> x = x0.empty() ? entry.default_x0 : x0;
  if (x.size() != entry.coefficients().dim_x) throw ParameterError("starting point has wrong dimension");
  return x;
}

std::size_t count(const std::vector<std::uint8_t>& flags, std::size_t stride, std::size_t col) {
  std::size_t c = 0;
  for (std::size_t i = col; i < flags.size(); i += stride) c += flags[i];
  return c;
}

double censored_upper(std::size_t trials) {
  const double z2 = kWilsonZ99OneSided * kWilsonZ99OneSided;
  return z2 / (static_cast<double>(trials) + z2);
}

}  // namespace

WilsonInterval wilson_interval(std::size_t hits, std::size_t trials, double z) {
  if (trials == 0) throw ParameterError("Wilson interval needs at least one trial");
  if (hits > trials) throw ParameterError("more hits than trials");
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(hits) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

double log_normal_tail(double x) {
  if (x < 0.0) return std::log1p(-normal_tail(-x));
  if (x < 25.0) return std::log(normal_tail(x));
  const double r = 1.0 / (x * x);
  const double series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
  return -0.5 * x * x - std::log(x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

double brownian_sup_two_sided(double a, double tau) {
  if (!(a >= 0.0) || !(tau > 0.0)) throw ParameterError("sup probability needs a >= 0, tau > 0");
  if (a == 0.0) return 1.0;
  const double y = a / std::sqrt(tau);
  if (y >= 1.0) {
    double s = 0.0;
    for (int k = 0; k < 200; ++k) {
      const double term = normal_tail((2.0 * k + 1.0) * y);
      s += (k % 2 == 0 ? term : -term);
      if (term < 1e-300 || term < 1e-18 * s) break;
    }
    return 4.0 * s;
  }
  const double pi = std::numbers::pi;
  double s = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double j = 2.0 * k + 1.0;
    const double term = std::exp(-j * j * pi * pi / (8.0 * y * y)) / j;
    s += (k % 2 == 0 ? term : -term);
    if (term < 1e-18) break;
  }
  return 1.0 - 4.0 / pi * s;
}

double brownian_sup_one_sided(double a, double tau) {
  if (!(tau > 0.0)) throw ParameterError("sup probability needs tau > 0");
  return std::min(1.0, 2.0 * normal_tail(a / std::sqrt(tau)));
}

double brownian_sup_bound(double delta, double eps, double tau, std::size_t dim_w) {
  if (!(delta > 0.0 && eps > 0.0 && tau > 0.0) || dim_w == 0) throw ParameterError("bound needs positive parameters");
  const double dw = static_cast<double>(dim_w);
  return 4.0 * dw * std::exp(-delta * delta / (2.0 * dw * tau * eps));
}

double holder_sup_bound(double u, double v, double alpha, double C) {
  if (!(u > 0.0 && v > 0.0 && C > 0.0) || !(alpha > 0.0 && alpha < 0.5)) {
    throw ParameterError("bound needs u, v, C > 0 and alpha in (0, 1/2)");
  }
  const double ia = 1.0 / alpha;
  return C * std::max(1.0, std::pow(u / v, ia)) * std::exp(-std::pow(u, ia) / (C * std::pow(v, ia - 2.0)));
}

void LdpExperiment::validate() const {
  if (eps_schedule.empty()) throw ParameterError("eps schedule is empty");
  for (std::size_t i = 0; i < eps_schedule.size(); ++i) {
    if (!(eps_schedule[i] > 0.0)) throw ParameterError("eps values must be positive");
    if (i > 0 && !(eps_schedule[i] < eps_schedule[i - 1])) throw ParameterError("eps schedule must decrease");
  }
  if (norm == NormKind::holder && !(alpha > 0.0 && alpha < 0.5)) throw ParameterError("alpha must lie in (0, 1/2)");
  if (method == LdpMethod::monte_carlo && replicas < 100) throw ParameterError("at least 100 replicas are required");
  if (grid_size == 0 || !(horizon > 0.0)) throw ParameterError("grid must be non-empty");
}

namespace {

LdpCell exact_gaussian_cell(const ModelLibraryEntry& entry, std::span<const double> x, const EventSpec& e,
                            double eps, double horizon) {
  if (entry.name != "brownian" || e.kind != EventSpec::Kind::terminal) {
    throw UnsupportedError("exact tail is available for the brownian model with a terminal event only");
  }
  const auto it = entry.parameters.find("sigma");
  const double sigma = it == entry.parameters.end() ? 1.0 : it->second;
  if (e.v.size() != x.size()) throw DomainError("terminal direction has wrong dimension");
  double vx = 0.0, vv = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    vx += e.v[j] * x[j];
    vv += e.v[j] * e.v[j];
  }
  const double z = (e.c - vx) / (std::fabs(sigma) * std::sqrt(vv * eps * horizon));
  const double lp = log_normal_tail(z);
  LdpCell c;
  c.eps = eps;
  c.p_hat = std::exp(lp);
  c.wilson_lo = c.wilson_hi = c.p_hat;
  c.minus_eps_log_p = -eps * lp;
  return c;
}

LdpCell monte_carlo_cell(const ModelLibraryEntry& entry, std::span<const double> x, const LdpExperiment& exp,
                         const Path& psi, std::size_t index, const Executor& exec) {
  const CoefficientSet& cs = entry.coefficients();
  const TimeGrid grid{exp.horizon, exp.grid_size};
  const double eps = exp.eps_schedule[index];
  const std::size_t batch = batch_size(entry, exp.particles);
  const InitialCondition init = InitialCondition::fixed(std::vector<double>(x.begin(), x.end()));
  std::size_t hits = 0;
  for (std::size_t first = 0; first < exp.replicas; first += batch) {
    const std::size_t size = std::min(batch, exp.replicas - first);
    SimulateOptions opt;
    opt.tag = "ldp/" + std::to_string(index);
    opt.replica_ids.resize(size);
    for (std::size_t i = 0; i < size; ++i) opt.replica_ids[i] = first + i;
    const ParticleSystem ps = simulate_particles(cs, init, size, grid, eps, exp.seed, exec, opt);
    std::vector<std::uint8_t> flags(size, 0);
    exec.parallel_for(size, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) flags[i] = exp.event.contains(ps.paths[i], psi) ? 1 : 0;
    });
    hits += count(flags, 1, 0);
  }
  LdpCell c;
  c.eps = eps;
  c.hits = hits;
  c.replicas = exp.replicas;
  c.p_hat = static_cast<double>(hits) / static_cast<double>(exp.replicas);
  if (hits == 0) {
    c.censored = true;
    c.wilson_lo = 0.0;
    c.wilson_hi = censored_upper(exp.replicas);
    c.minus_eps_log_p = -eps * std::log(c.wilson_hi);
  } else {
    const auto w = wilson_interval(hits, exp.replicas);
    c.wilson_lo = w.lo;
    c.wilson_hi = w.hi;
    c.minus_eps_log_p = -eps * std::log(c.p_hat);
  }
  return c;
}

double linear_extrapolation(const std::vector<LdpCell>& cells) {
  std::vector<const LdpCell*> pts;
  for (auto it = cells.rbegin(); it != cells.rend() && pts.size() < 3; ++it) {
    if (!it->censored) pts.push_back(&*it);
  }
  if (pts.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double k = static_cast<double>(pts.size());
  for (const auto* c : pts) {
    sx += c->eps;
    sy += c->minus_eps_log_p;
    sxx += c->eps * c->eps;
    sxy += c->eps * c->minus_eps_log_p;
  }
  const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  return (sy - slope * sx) / k;
}

}  // namespace

LdpEstimate estimate_event_probability(const LdpExperiment& exp, const Executor& exec) {
  exp.validate();
  const ModelLibraryEntry entry = make_model(exp.model);
  const std::vector<double> x = start_point(entry, exp.x0);
  const TimeGrid grid{exp.horizon, exp.grid_size};
  const Path psi = solve_psi(entry.coefficients(), x, grid).path;

  LdpEstimate est;
  for (std::size_t i = 0; i < exp.eps_schedule.size(); ++i) {
    est.cells.push_back(exp.method == LdpMethod::exact_gaussian
                            ? exact_gaussian_cell(entry, x, exp.event, exp.eps_schedule[i], exp.horizon)
                            : monte_carlo_cell(entry, x, exp, psi, i, exec));
  }
  est.extrapolated = linear_extrapolation(est.cells);

  RateBudget budget = exp.rate_budget;
  budget.horizon = exp.horizon;
  est.reference = rate_of_event(entry.coefficients(), x, exp.event, std::nullopt, budget, exec);
  const double ref = est.reference.value;
  const double dir = ref >= est.cells.front().minus_eps_log_p ? 1.0 : -1.0;
  est.monotone_toward_reference = true;
  for (std::size_t i = 1; i < est.cells.size(); ++i) {
    if (dir * (est.cells[i].minus_eps_log_p - est.cells[i - 1].minus_eps_log_p) < 0.0) {
      est.monotone_toward_reference = false;
    }
  }
  if (ref > 0.0) est.final_relative_error = std::fabs(est.cells.back().minus_eps_log_p - ref) / ref;
  return est;
}

// ---------------------------------------------------------------------------
// Gaussian bounds

std::vector<BoundCheck> check_holder_event_grid(const std::vector<double>& us, const std::vector<double>& vs,
                                                const std::vector<double>& alphas, std::size_t replicas,
                                                std::size_t grid_size, std::uint64_t seed, const Executor& exec,
                                                double C) {
  if (us.empty() || vs.empty() || alphas.empty()) throw ParameterError("empty parameter grid");
  if (replicas == 0 || grid_size == 0) throw ParameterError("replicas and grid size must be positive");
  for (double a : alphas) {
    if (!(a > 0.0 && a < 0.5)) throw ParameterError("alpha must lie in (0, 1/2)");
  }
  const TimeGrid grid{1.0, grid_size};
  const BrownianDriver driver(seed, "holder-bound", 1, grid);
  const double vmax = *std::max_element(vs.begin(), vs.end());
  const std::size_t cells = us.size() * vs.size() * alphas.size();
  std::vector<std::uint8_t> flags(replicas * cells, 0);

  exec.parallel_for(replicas, [&](std::size_t begin, std::size_t end) {
    std::vector<double> w(grid_size + 1), hol(alphas.size());
    double dw = 0.0;
    for (std::size_t r = begin; r < end; ++r) {
      const auto key = driver.key(r);
      double sup = 0.0;
      for (std::size_t k = 0; k < grid_size; ++k) {
        driver.increment(key, k, std::span<double>(&dw, 1));
        w[k + 1] = w[k] + dw;
        sup = std::max(sup, std::fabs(w[k + 1]));
      }
      if (sup > vmax) continue;
      const Path p(1.0, grid_size, 1, w);
      for (std::size_t a = 0; a < alphas.size(); ++a) hol[a] = holder_norm(p, alphas[a]);
      std::size_t c = 0;
      for (double u : us) {
        for (double v : vs) {
          for (std::size_t a = 0; a < alphas.size(); ++a, ++c) {
            flags[r * cells + c] = (hol[a] >= u && sup <= v) ? 1 : 0;
          }
        }
      }
    }
  });

  std::vector<BoundCheck> out;
  std::size_t c = 0;
  for (double u : us) {
    for (double v : vs) {
      for (double a : alphas) {
        BoundCheck b;
        b.name = "holder-sup";
        b.parameters = {u, v, a};
        b.replicas = replicas;
        b.hits = count(flags, cells, c++);
        b.p_hat = static_cast<double>(b.hits) / static_cast<double>(replicas);
        b.wilson_hi = b.hits == 0 ? censored_upper(replicas) : wilson_interval(b.hits, replicas).hi;
        b.bound = holder_sup_bound(u, v, a, C);
        b.pass = b.p_hat <= b.bound;
        out.push_back(std::move(b));
      }
    }
  }
  return out;
}

BoundCheck check_holder_event_bound(double u, double v, double alpha, std::size_t replicas, std::size_t grid_size,
                                    std::uint64_t seed, const Executor& exec, double C) {
  return check_holder_event_grid({u}, {v}, {alpha}, replicas, grid_size, seed, exec, C).front();
}

std::vector<BoundCheck> check_brownian_sup_grid(const std::vector<double>& deltas, const std::vector<double>& epss,
                                                double tau, std::size_t dim_w, std::size_t replicas,
                                                std::size_t grid_size, std::uint64_t seed, const Executor& exec) {
  if (deltas.empty() || epss.empty()) throw ParameterError("empty parameter grid");
  if (replicas == 0 || grid_size == 0 || dim_w == 0) throw ParameterError("replicas, grid and dimension must be positive");
  if (!(tau > 0.0)) throw ParameterError("tau must be positive");
  const TimeGrid grid{tau, grid_size};
  const BrownianDriver driver(seed, "sup-bound", dim_w, grid);
  std::vector<double> sups(replicas);
  exec.parallel_for(replicas, [&](std::size_t begin, std::size_t end) {
    std::vector<double> w(dim_w), dw(dim_w);
    for (std::size_t r = begin; r < end; ++r) {
      const auto key = driver.key(r);
      std::fill(w.begin(), w.end(), 0.0);
      double best = 0.0;
      for (std::size_t k = 0; k < grid_size; ++k) {
        driver.increment(key, k, dw);
        double s = 0.0;
        for (std::size_t j = 0; j < dim_w; ++j) {
          w[j] += dw[j];
          s += w[j] * w[j];
        }
        best = std::max(best, s);
      }
      sups[r] = std::sqrt(best);
    }
  });

  std::vector<BoundCheck> out;
  for (double delta : deltas) {
    for (double eps : epss) {
      BoundCheck b;
      b.name = "brownian-sup";
      b.parameters = {delta, eps, tau, static_cast<double>(dim_w)};
      b.replicas = replicas;
      const double level = delta / std::sqrt(eps);
      for (double s : sups) b.hits += s >= level ? 1 : 0;
      b.p_hat = static_cast<double>(b.hits) / static_cast<double>(replicas);
      b.wilson_hi = b.hits == 0 ? censored_upper(replicas) : wilson_interval(b.hits, replicas).hi;
      b.bound = brownian_sup_bound(delta, eps, tau, dim_w);
      if (dim_w == 1) b.exact = brownian_sup_two_sided(level, tau);
      b.pass = b.p_hat <= b.bound;
      out.push_back(std::move(b));
    }
  }
  return out;
}

BoundCheck check_brownian_sup_bound(double delta, double eps, double tau, std::size_t dim_w, std::size_t replicas,
                                    std::uint64_t seed, std::size_t grid_size, const Executor& exec) {
  return check_brownian_sup_grid({delta}, {eps}, tau, dim_w, replicas, grid_size, seed, exec).front();
}

// ---------------------------------------------------------------------------
// Exponential equivalence

namespace {

EquivalenceCell make_cell(double eps, std::size_t m, std::size_t hits, std::size_t replicas) {
  EquivalenceCell c;
  c.eps = eps;
  c.m = m;
  c.hits = hits;
  c.replicas = replicas;
  c.p_hat = static_cast<double>(hits) / static_cast<double>(replicas);
  c.censored = hits == 0;
  c.eps_log_p = eps * std::log(c.censored ? censored_upper(replicas) : c.p_hat);
  return c;
}

// b is non-increasing from a to b: strict decrease between informative cells,
// a later hit after a censored cell counts as an increase.
bool non_increasing(const EquivalenceCell& a, const EquivalenceCell& b) {
  if (b.censored) return true;
  if (a.censored) return false;
  return b.eps_log_p < a.eps_log_p;
}

}  // namespace

EquivalenceReport exponential_equivalence_gap(const std::string& model, const std::vector<double>& eps_schedule,
                                              const std::vector<std::size_t>& m_schedule, std::size_t replicas,
                                              std::uint64_t seed, const EquivalenceOptions& opt,
                                              const Executor& exec) {
  if (eps_schedule.empty() || m_schedule.empty()) throw ParameterError("empty schedule");
  for (std::size_t i = 1; i < eps_schedule.size(); ++i) {
    if (!(eps_schedule[i] < eps_schedule[i - 1])) throw ParameterError("eps schedule must decrease");
  }
  for (std::size_t i = 0; i < m_schedule.size(); ++i) {
    if (m_schedule[i] == 0 || opt.grid_size % m_schedule[i] != 0) {
      throw ParameterError("every m must divide the grid size");
    }
    if (i > 0 && !(m_schedule[i] > m_schedule[i - 1])) throw ParameterError("m schedule must increase");
  }
  if (replicas == 0) throw ParameterError("replicas must be positive");

  const ModelLibraryEntry entry = make_model(model);
  const CoefficientSet& cs = entry.coefficients();
  const std::size_t d = cs.dim_x;
  const std::size_t dw = cs.dim_w;
  const std::size_t n = opt.grid_size;
  const TimeGrid grid{opt.horizon, n};
  const double dt = grid.dt();
  const std::vector<double> x = entry.default_x0;
  const Path psi = solve_psi(cs, x, grid).path;
  std::vector<EmpiricalMeasure> laws;
  laws.reserve(n + 1);
  for (std::size_t k = 0; k <= n; ++k) laws.push_back(EmpiricalMeasure::dirac(psi.at(k)));
  const BrownianDriver driver(seed, "equivalence", dw, grid);
  const std::size_t nm = m_schedule.size();

  // Frozen-law process Y on the grid, with its increments.
  auto frozen = [&](rng::StreamKey key, double se, std::vector<double>& y, std::vector<double>& inc) {
    std::vector<double> b(d), sig(d * dw);
    std::copy(x.begin(), x.end(), y.begin());
    for (std::size_t k = 0; k < n; ++k) {
      std::span<double> yk(y.data() + k * d, d), yn(y.data() + (k + 1) * d, d);
      std::span<double> w(inc.data() + k * dw, dw);
      cs.eval_drift(grid.time(k), yk, laws[k], b);
      cs.eval_diffusion(grid.time(k), yk, laws[k], sig);
      driver.increment(key, k, w);
      std::copy(yk.begin(), yk.end(), yn.begin());
      tamed_euler_step(yn, b, sig, w, dt, se);
    }
  };

  EquivalenceReport rep;
  rep.delta = opt.delta;
  rep.eps_schedule = eps_schedule;
  rep.m_schedule = m_schedule;
  const std::size_t batch = batch_size(entry, opt.particles);

  for (double eps : eps_schedule) {
    const double se = std::sqrt(eps);
    std::vector<std::uint8_t> flags(replicas * nm, 0);
    exec.parallel_for(replicas, [&](std::size_t begin, std::size_t end) {
      std::vector<double> y((n + 1) * d), inc(n * dw), z(d), b(d), sig(d * dw);
      for (std::size_t r = begin; r < end; ++r) {
        frozen(driver.key(r), se, y, inc);
        for (std::size_t mi = 0; mi < nm; ++mi) {
          const std::size_t stride = n / m_schedule[mi];
          std::copy(x.begin(), x.end(), z.begin());
          double gap = 0.0;
          for (std::size_t k = 0; k < n; ++k) {
            if (k % stride == 0) {
              std::span<const double> yc(y.data() + k * d, d);
              cs.eval_drift(grid.time(k), yc, laws[k], b);
              cs.eval_diffusion(grid.time(k), yc, laws[k], sig);
            }
            tamed_euler_step(z, b, sig, std::span<const double>(inc.data() + k * dw, dw), dt, se);
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) s += (z[i] - y[(k + 1) * d + i]) * (z[i] - y[(k + 1) * d + i]);
            gap = std::max(gap, s);
          }
          flags[r * nm + mi] = std::sqrt(gap) > opt.delta ? 1 : 0;
        }
      }
    });
    std::vector<EquivalenceCell> row;
    for (std::size_t mi = 0; mi < nm; ++mi) row.push_back(make_cell(eps, m_schedule[mi], count(flags, nm, mi), replicas));
    rep.discretization.push_back(std::move(row));

    // Interacting particles against the frozen-law process on common noise.
    std::size_t hits = 0;
    const InitialCondition init = InitialCondition::fixed(x);
    for (std::size_t first = 0; first < replicas; first += batch) {
      const std::size_t size = std::min(batch, replicas - first);
      SimulateOptions so;
      so.tag = "equivalence";
      so.replica_ids.resize(size);
      for (std::size_t i = 0; i < size; ++i) so.replica_ids[i] = first + i;
      const ParticleSystem ps = simulate_particles(cs, init, size, grid, eps, seed, exec, so);
      std::vector<std::uint8_t> pf(size, 0);
      exec.parallel_for(size, [&](std::size_t begin, std::size_t end) {
        std::vector<double> y((n + 1) * d), inc(n * dw);
        for (std::size_t i = begin; i < end; ++i) {
          frozen(driver.key(first + i), se, y, inc);
          double gap = 0.0;
          for (std::size_t k = 0; k <= n; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (ps.paths[i](k, j) - y[k * d + j]) * (ps.paths[i](k, j) - y[k * d + j]);
            gap = std::max(gap, s);
          }
          pf[i] = std::sqrt(gap) > opt.delta ? 1 : 0;
        }
      });
      hits += count(pf, 1, 0);
    }
    rep.particle_vs_frozen.push_back(make_cell(eps, 0, hits, replicas));
  }

  rep.decreasing_in_m = true;
  for (const auto& row : rep.discretization) {
    for (const auto& c : row) rep.informative += c.censored ? 0 : 1;
    for (std::size_t mi = 1; mi < nm; ++mi) rep.decreasing_in_m = rep.decreasing_in_m && non_increasing(row[mi - 1], row[mi]);
  }
  rep.decreasing_in_eps = true;
  for (std::size_t e = 1; e < rep.discretization.size(); ++e) {
    rep.decreasing_in_eps =
        rep.decreasing_in_eps && non_increasing(rep.discretization[e - 1].back(), rep.discretization[e].back());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Hölder-topology spot check

namespace {

double spot_bound(double rho, double delta, double alpha, double eps, double M, std::size_t l, double C) {
  const double se = std::sqrt(eps);
  return holder_sup_bound(rho / (4.0 * M * static_cast<double>(l) * se), delta / se, alpha, C);
}

}  // namespace

double select_spot_delta(double rho, double alpha, double eps, double R, double M, std::size_t l, double C) {
  if (!(rho > 0.0 && eps > 0.0 && R > 0.0 && M > 0.0) || l == 0) {
    throw ParameterError("spot check needs positive rho, eps, R, M and l");
  }
  const double target = -R / eps;
  for (int k = 0; k < 64; ++k) {
    const double delta = rho / std::ldexp(1.0, k);
    if (delta > 0.5) continue;
    if (std::log(spot_bound(rho, delta, alpha, eps, M, l, C)) <= target) return delta;
  }
  throw DomainError("no admissible delta for the Hölder spot check");
}

HolderSpotCheck holder_ldp_spot_check(const std::string& model, double slope, double alpha, double rho, double R,
                                      double eps, std::size_t replicas, std::size_t grid_size, std::uint64_t seed,
                                      const Executor& exec) {
  const ModelLibraryEntry entry = make_model(model);
  const CoefficientSet& cs = entry.coefficients();
  if (cs.dim_w != 1 || cs.dim_x != 1) throw UnsupportedError("spot check supports scalar models");
  if (replicas == 0) throw ParameterError("replicas must be positive");
  HolderSpotCheck out;
  out.eps = eps;
  out.rho = rho;
  out.R = R;
  out.alpha = alpha;
  if (!cs.constant_diffusion || !cs.diffusion_bound_M) {
    throw UnsupportedError("spot check needs a constant diffusion with a declared bound");
  }
  const double M = *cs.diffusion_bound_M;
  out.delta = select_spot_delta(rho, alpha, eps, R, M);
  out.bound = spot_bound(rho, out.delta, alpha, eps, M, 1, kHolderBoundC);
  out.threshold = std::exp(-R / eps);
  out.replicas = replicas;

  const TimeGrid grid{1.0, grid_size};
  const std::vector<double> x = entry.default_x0;
  const CameronMartinPath h(1.0, grid_size, 1, std::vector<double>(grid_size, slope));
  const Path phi = solve_skeleton(cs, x, h).path;
  const BrownianDriver driver(seed, "spot", 1, grid);
  const InitialCondition init = InitialCondition::fixed(x);
  const std::size_t batch = batch_size(entry, 0);
  const double se = std::sqrt(eps);
  for (std::size_t first = 0; first < replicas; first += batch) {
    const std::size_t size = std::min(batch, replicas - first);
    SimulateOptions so;
    so.tag = "spot";
    so.replica_ids.resize(size);
    for (std::size_t i = 0; i < size; ++i) so.replica_ids[i] = first + i;
    const ParticleSystem ps = simulate_particles(cs, init, size, grid, eps, seed, exec, so);
    std::vector<std::uint8_t> flags(size, 0);
    exec.parallel_for(size, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const auto key = driver.key(first + i);
        double w = 0.0, dw = 0.0, tube = 0.0;
        for (std::size_t k = 0; k < grid_size; ++k) {
          driver.increment(key, k, std::span<double>(&dw, 1));
          w += dw;
          tube = std::max(tube, std::fabs(se * w - slope * grid.time(k + 1)));
        }
        if (tube > out.delta) continue;
        std::vector<double> diff(grid_size + 1);
        for (std::size_t k = 0; k <= grid_size; ++k) diff[k] = ps.paths[i](k, 0) - phi(k, 0);
        flags[i] = holder_norm(Path(1.0, grid_size, 1, std::move(diff)), alpha) >= rho ? 1 : 0;
      }
    });
    out.hits += count(flags, 1, 0);
  }
  out.p_hat = static_cast<double>(out.hits) / static_cast<double>(replicas);
  out.pass = out.p_hat <= out.threshold;
  return out;
}

}  // namespace mvldp
