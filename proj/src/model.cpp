#include "mvldp/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>

#include "mvldp/errors.hpp"
#include "mvldp/numfmt.hpp"
#include "mvldp/rng.hpp"

namespace mvldp {

void CoefficientSet::validate() const {
  if (dim_x == 0 || dim_w == 0) throw ParameterError("coefficient dimensions must be positive");
  if (!drift || !diffusion) throw ParameterError("drift and diffusion must be set");
  if (!(lipschitz_L > 0.0) || !std::isfinite(lipschitz_L)) throw ParameterError("declared L must be positive");
  if (poly_degree_q < 2) throw ParameterError("declared q must be at least 2");
  if (diffusion_bound_M && !(*diffusion_bound_M > 0.0)) throw ParameterError("declared M must be positive");
  if (time_holder_beta && !(*time_holder_beta > 0.0 && *time_holder_beta <= 1.0))
    throw ParameterError("declared beta must lie in (0,1]");
}

void CoefficientSet::eval_drift_jacobian(double t, std::span<const double> x, const EmpiricalMeasure& mu,
                                         std::span<double> out) const {
  if (drift_jacobian) {
    drift_jacobian(t, x, mu, out);
    return;
  }
  const std::size_t d = dim_x;
  std::vector<double> xp(x.begin(), x.end()), fp(d), fm(d);
  for (std::size_t k = 0; k < d; ++k) {
    const double h = 1e-6 * std::max(1.0, std::fabs(x[k]));
    xp[k] = x[k] + h;
    drift(t, xp, mu, fp);
    xp[k] = x[k] - h;
    drift(t, xp, mu, fm);
    xp[k] = x[k];
    for (std::size_t i = 0; i < d; ++i) out[i * d + k] = (fp[i] - fm[i]) / (2.0 * h);
  }
}

void CoefficientSet::eval_diffusion_jacobian(double t, std::span<const double> x, const EmpiricalMeasure& mu,
                                             std::span<double> out) const {
  const std::size_t d = dim_x;
  const std::size_t m = dim_w;
  if (constant_diffusion) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  if (diffusion_jacobian) {
    diffusion_jacobian(t, x, mu, out);
    return;
  }
  std::vector<double> xp(x.begin(), x.end()), fp(d * m), fm(d * m);
  for (std::size_t k = 0; k < d; ++k) {
    const double h = 1e-6 * std::max(1.0, std::fabs(x[k]));
    xp[k] = x[k] + h;
    diffusion(t, xp, mu, fp);
    xp[k] = x[k] - h;
    diffusion(t, xp, mu, fm);
    xp[k] = x[k];
    for (std::size_t ij = 0; ij < d * m; ++ij) out[ij * d + k] = (fp[ij] - fm[ij]) / (2.0 * h);
  }
}

EpsilonFamily EpsilonFamily::constant(const CoefficientSet& cs) {
  EpsilonFamily f;
  f.base = cs;
  f.perturbed = [cs](double) { return cs; };
  f.eta = [](double) { return 0.0; };
  return f;
}

std::optional<double> ModelLibraryEntry::fact(const std::string& key) const {
  for (const auto& f : facts)
    if (f.key == key) return f.value;
  return std::nullopt;
}

namespace {

double get(const std::map<std::string, double>& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

std::size_t get_dim(const std::map<std::string, double>& p) {
  const double d = get(p, "d", 1.0);
  if (d < 1.0 || d > 64.0 || d != std::floor(d)) throw ConfigError("model parameter d must be an integer in [1, 64]");
  return static_cast<std::size_t>(d);
}

void set_scaled_identity(CoefficientSet& cs, double sigma) {
  const std::size_t d = cs.dim_x;
  cs.dim_w = d;
  cs.diffusion = [d, sigma](double, std::span<const double>, const EmpiricalMeasure&, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) out[i * d + i] = sigma;
  };
  cs.constant_diffusion = true;
  cs.diffusion_bound_M = std::max(std::fabs(sigma) * std::sqrt(static_cast<double>(d)), 1e-300);
  cs.time_holder_beta = 1.0;
}

ModelLibraryEntry brownian_model(const std::map<std::string, double>& p) {
  const std::size_t d = get_dim(p);
  const double sigma = get(p, "sigma", 1.0);
  CoefficientSet cs;
  cs.dim_x = d;
  cs.drift = [](double, std::span<const double>, const EmpiricalMeasure&, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
  };
  cs.drift_jacobian = cs.drift;
  set_scaled_identity(cs, sigma);
  cs.lipschitz_L = 1.0;
  cs.poly_degree_q = 2;
  cs.law_dependent = false;
  ModelLibraryEntry e;
  e.name = "brownian";
  e.description = "pure Brownian motion: b = 0, sigma = s I";
  e.parameters = {{"d", static_cast<double>(d)}, {"sigma", sigma}};
  e.family = EpsilonFamily::constant(cs);
  e.default_x0.assign(d, 0.0);
  e.facts = {{"terminal_variance_per_coordinate_T1_eps1", sigma * sigma, "closed-form", "Var W(1) = 1"},
             {"rate_terminal_half_space_delta1", 0.5 / (sigma * sigma), "closed-form", "delta^2 / (2 sigma^2)"},
             {"limsup_lil_statistic", std::sqrt(2.0) * std::fabs(sigma), "closed-form", "Strassen/Khinchin constant"}};
  e.moment_constant = 1.0;
  e.picard_scale = std::fabs(sigma) + 1e-12;
  e.ldp_particles = 1;
  return e;
}

ModelLibraryEntry ou_model(const std::map<std::string, double>& p) {
  const std::size_t d = get_dim(p);
  const double a = get(p, "a", 1.0);
  const double sigma = get(p, "sigma", 1.0);
  if (!(a > 0.0)) throw ConfigError("ou: a must be positive");
  CoefficientSet cs;
  cs.dim_x = d;
  cs.drift = [a](double, std::span<const double> x, const EmpiricalMeasure& mu, std::span<double> out) {
    const auto m = mu.mean();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * (m[i] - x[i]);
  };
  cs.drift_jacobian = [a, d](double, std::span<const double>, const EmpiricalMeasure&, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) out[i * d + i] = -a;
  };
  set_scaled_identity(cs, sigma);
  cs.lipschitz_L = a;
  cs.poly_degree_q = 2;
  ModelLibraryEntry e;
  e.name = "ou";
  e.description = "mean-field Ornstein-Uhlenbeck: b(x, mu) = a (mean(mu) - x), sigma = s I";
  e.parameters = {{"a", a}, {"d", static_cast<double>(d)}, {"sigma", sigma}};
  e.family = EpsilonFamily::constant(cs);
  e.default_x0.assign(d, 0.0);
  const double var1 = sigma * sigma * (1.0 - std::exp(-2.0 * a)) / (2.0 * a);
  e.facts = {{"terminal_mean_shift_T1", 0.0, "closed-form", "m'(t) = 0"},
             {"terminal_variance_T1_eps1", var1, "closed-form", "s^2 (1 - e^{-2a}) / (2a)"},
             {"rate_terminal_half_space_c1", 0.5 / var1, "closed-form",
              "c^2 / (2 v) with v = s^2 (1 - e^{-2a}) / (2a), c = 1"}};
  e.moment_constant = 4.0 * std::max(1.0, a);
  e.picard_scale = std::fabs(sigma) + 1e-12;
  e.ldp_particles = 1000;
  return e;
}

ModelLibraryEntry linear_model(const std::map<std::string, double>& p) {
  const std::size_t d = get_dim(p);
  const double a = get(p, "a", 1.0);
  const double sigma = get(p, "sigma", 1.0);
  if (!(a > 0.0)) throw ConfigError("linear: a must be positive");
  CoefficientSet cs;
  cs.dim_x = d;
  cs.drift = [a](double, std::span<const double> x, const EmpiricalMeasure&, std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = -a * x[i];
  };
  cs.drift_jacobian = [a, d](double, std::span<const double>, const EmpiricalMeasure&, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) out[i * d + i] = -a;
  };
  set_scaled_identity(cs, sigma);
  cs.lipschitz_L = a;
  cs.poly_degree_q = 2;
  cs.law_dependent = false;
  ModelLibraryEntry e;
  e.name = "linear";
  e.description = "classical Ornstein-Uhlenbeck: b(x) = -a x, sigma = s I";
  e.parameters = {{"a", a}, {"d", static_cast<double>(d)}, {"sigma", sigma}};
  e.family = EpsilonFamily::constant(cs);
  e.default_x0.assign(d, 1.0);
  e.facts = {{"psi_T1_from_1", std::exp(-a), "closed-form", "x e^{-aT}"}};
  e.moment_constant = 4.0 * std::max(1.0, a);
  e.picard_scale = std::fabs(sigma) + 1e-12;
  e.ldp_particles = 1;
  return e;
}

ModelLibraryEntry doublewell_model(const std::map<std::string, double>& p) {
  if (get_dim(p) != 1) throw ConfigError("doublewell: only d = 1 is available");
  const double theta = get(p, "theta", 1.0);
  const double sigma = get(p, "sigma", 1.0);
  if (!(theta >= 0.0)) throw ConfigError("doublewell: theta must be nonnegative");
  CoefficientSet cs;
  cs.dim_x = 1;
  cs.drift = [theta](double, std::span<const double> x, const EmpiricalMeasure& mu, std::span<double> out) {
    out[0] = -x[0] * x[0] * x[0] + x[0] - theta * (x[0] - mu.mean()[0]);
  };
  cs.drift_jacobian = [theta](double, std::span<const double> x, const EmpiricalMeasure&, std::span<double> out) {
    out[0] = -3.0 * x[0] * x[0] + 1.0 - theta;
  };
  set_scaled_identity(cs, sigma);
  // |x^2 + x x' + x'^2 - (1 - theta)| <= 1.5 (x^2 + x'^2) + |1 - theta|
  cs.lipschitz_L = std::max({1.5, std::fabs(1.0 - theta), theta});
  cs.poly_degree_q = 3;
  ModelLibraryEntry e;
  e.name = "doublewell";
  e.description = "double well V(x) = x^4/4 - x^2/2 with quadratic self-stabilising interaction theta/2 |x - y|^2";
  e.parameters = {{"sigma", sigma}, {"theta", theta}};
  e.family = EpsilonFamily::constant(cs);
  e.default_x0 = {1.0};
  e.facts = {{"psi_fixed_point_from_1", 1.0, "closed-form", "b(1, delta_1) = 0"}};
  e.probe_box = 3.0;
  e.moment_constant = 4.0 * cs.lipschitz_L;
  e.picard_scale = std::fabs(sigma) + 1e-12;
  e.ldp_particles = 1000;
  return e;
}

ModelLibraryEntry cubic_model(const std::map<std::string, double>& p) {
  if (get_dim(p) != 1) throw ConfigError("cubic: only d = 1 is available");
  const double sigma = get(p, "sigma", 1.0);
  CoefficientSet cs;
  cs.dim_x = 1;
  cs.drift = [](double, std::span<const double> x, const EmpiricalMeasure&, std::span<double> out) {
    out[0] = -x[0] * x[0] * x[0];
  };
  cs.drift_jacobian = [](double, std::span<const double> x, const EmpiricalMeasure&, std::span<double> out) {
    out[0] = -3.0 * x[0] * x[0];
  };
  set_scaled_identity(cs, sigma);
  cs.lipschitz_L = 1.5;
  cs.poly_degree_q = 3;
  cs.law_dependent = false;
  ModelLibraryEntry e;
  e.name = "cubic";
  e.description = "superlinear dissipative drift b(x) = -x^3";
  e.parameters = {{"sigma", sigma}};
  e.family = EpsilonFamily::constant(cs);
  e.default_x0 = {1.0};
  e.facts = {{"psi_T1_from_1", 1.0 / std::sqrt(3.0), "closed-form", "x / sqrt(1 + 2 x^2 T)"}};
  e.probe_box = 3.0;
  e.moment_constant = 6.0;
  e.picard_scale = std::fabs(sigma) + 1e-12;
  e.ldp_particles = 1;
  return e;
}

struct Registry {
  std::mutex mutex;
  std::map<std::string, ModelFactory> factories{{"brownian", brownian_model},
                                                {"ou", ou_model},
                                                {"linear", linear_model},
                                                {"doublewell", doublewell_model},
                                                {"cubic", cubic_model}};
  std::map<std::string, std::vector<std::string>> keys{{"brownian", {"d", "sigma"}},
                                                       {"ou", {"a", "d", "sigma"}},
                                                       {"linear", {"a", "d", "sigma"}},
                                                       {"doublewell", {"sigma", "theta"}},
                                                       {"cubic", {"sigma"}}};
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_model(const std::string& name, ModelFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[name] = std::move(factory);
  r.keys.erase(name);
}

std::vector<std::string> list_models() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [k, v] : r.factories) names.push_back(k);
  return names;
}

ModelLibraryEntry make_model(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  std::map<std::string, double> params;
  if (colon != std::string::npos) {
    std::stringstream ss(spec.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw ConfigError("model parameter '" + item + "' is not key=value");
      try {
        params[item.substr(0, eq)] = parse_number(item.substr(eq + 1));
      } catch (const ParameterError&) {
        throw ConfigError("model parameter '" + item + "' has a non-numeric value");
      }
    }
  }
  ModelFactory factory;
  std::vector<std::string> allowed;
  bool check_keys = false;
  {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.factories.find(name);
    if (it == r.factories.end()) throw ConfigError("unknown model '" + name + "'");
    factory = it->second;
    if (auto k = r.keys.find(name); k != r.keys.end()) {
      allowed = k->second;
      check_keys = true;
    }
  }
  if (check_keys)
    for (const auto& [k, v] : params)
      if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
        throw ConfigError("model '" + name + "' has no parameter '" + k + "'");
  ModelLibraryEntry e = factory(params);
  e.family.base.validate();
  return e;
}

// ---------------------------------------------------------------------------
// Probes

namespace {

constexpr std::size_t kProbeAtoms = 8;

struct ProbeDraw {
  double t = 0.0;
  std::vector<double> x, xp;
  EmpiricalMeasure mu, nu;
};

ProbeDraw draw(std::string_view tag, const ProbeOptions& opt, std::size_t d, std::size_t sample) {
  rng::Stream s(rng::derive(opt.seed, tag, sample));
  ProbeDraw p;
  p.t = opt.horizon * s.next_uniform();
  p.x.resize(d);
  p.xp.resize(d);
  for (auto& v : p.x) v = opt.box_radius * (2.0 * s.next_uniform() - 1.0);
  for (auto& v : p.xp) v = opt.box_radius * (2.0 * s.next_uniform() - 1.0);
  auto cloud = [&] {
    std::vector<double> a(kProbeAtoms * d);
    for (auto& v : a) v = opt.box_radius * (2.0 * s.next_uniform() - 1.0);
    return EmpiricalMeasure::uniform(d, std::move(a));
  };
  p.mu = cloud();
  p.nu = cloud();
  return p;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double a : v) s += a * a;
  return std::sqrt(s);
}

double diff_norm(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::string describe(const ProbeDraw& p) {
  std::ostringstream o;
  o << "t=" << format_number(p.t, 6) << " x=(";
  for (std::size_t i = 0; i < p.x.size(); ++i) o << (i ? "," : "") << format_number(p.x[i], 6);
  o << ") x'=(";
  for (std::size_t i = 0; i < p.xp.size(); ++i) o << (i ? "," : "") << format_number(p.xp[i], 6);
  o << ")";
  return o.str();
}

template <class Quotient>
ProbeReport run_probe(const std::string& name, const ProbeOptions& opt, std::size_t d, double declared,
                      const Executor& exec, Quotient quotient) {
  if (opt.samples == 0) throw ParameterError("probe needs at least one sample");
  std::vector<double> q(opt.samples, 0.0);
  exec.parallel_for(opt.samples, [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) q[s] = quotient(draw(name, opt, d, s));
  });
  ProbeReport r;
  r.name = name;
  r.samples = opt.samples;
  r.declared = declared;
  r.max_observed = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < q.size(); ++s)
    if (q[s] > r.max_observed) {
      r.max_observed = q[s];
      r.worst_sample = s;
    }
  r.pass = r.max_observed <= declared * (1.0 + opt.rel_tol) + opt.rel_tol;
  r.worst_point = describe(draw(name, opt, d, r.worst_sample));
  return r;
}

}  // namespace

ProbeReport probe_monotonicity(const CoefficientSet& cs, const ProbeOptions& opt, const Executor& exec) {
  const std::size_t d = cs.dim_x;
  return run_probe("monotonicity", opt, d, cs.lipschitz_L, exec, [&](const ProbeDraw& p) {
    std::vector<double> b1(d), b2(d);
    cs.drift(p.t, p.x, p.mu, b1);
    cs.drift(p.t, p.xp, p.mu, b2);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      num += (p.x[i] - p.xp[i]) * (b1[i] - b2[i]);
      den += (p.x[i] - p.xp[i]) * (p.x[i] - p.xp[i]);
    }
    return den > 0.0 ? num / den : 0.0;
  });
}

ProbeReport probe_drift_measure_lipschitz(const CoefficientSet& cs, const ProbeOptions& opt, const Executor& exec) {
  const std::size_t d = cs.dim_x;
  return run_probe("drift_measure_lipschitz", opt, d, cs.lipschitz_L, exec, [&](const ProbeDraw& p) {
    std::vector<double> b1(d), b2(d);
    cs.drift(p.t, p.x, p.mu, b1);
    cs.drift(p.t, p.x, p.nu, b2);
    const double w = wasserstein2(p.mu, p.nu);
    return w > 0.0 ? diff_norm(b1, b2) / w : 0.0;
  });
}

ProbeReport probe_polynomial_growth(const CoefficientSet& cs, const ProbeOptions& opt, const Executor& exec) {
  const std::size_t d = cs.dim_x;
  const double power = cs.poly_degree_q - 1.0;
  return run_probe("polynomial_growth", opt, d, cs.lipschitz_L, exec, [&](const ProbeDraw& p) {
    std::vector<double> b1(d), b2(d);
    cs.drift(p.t, p.x, p.mu, b1);
    cs.drift(p.t, p.xp, p.mu, b2);
    const double dx = diff_norm(p.x, p.xp);
    const double w = (1.0 + std::pow(norm2(p.x), power) + std::pow(norm2(p.xp), power)) * dx;
    return w > 0.0 ? diff_norm(b1, b2) / w : 0.0;
  });
}

ProbeReport probe_lipschitz_sigma(const CoefficientSet& cs, const ProbeOptions& opt, const Executor& exec) {
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  return run_probe("lipschitz_sigma", opt, d, cs.lipschitz_L, exec, [&](const ProbeDraw& p) {
    std::vector<double> s1(d * m), s2(d * m);
    cs.diffusion(p.t, p.x, p.mu, s1);
    cs.diffusion(p.t, p.xp, p.nu, s2);
    const double den = diff_norm(p.x, p.xp) + wasserstein2(p.mu, p.nu);
    return den > 0.0 ? diff_norm(s1, s2) / den : 0.0;
  });
}

ProbeReport probe_diffusion_bound(const CoefficientSet& cs, const ProbeOptions& opt, const Executor& exec) {
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  if (!cs.diffusion_bound_M) {
    ProbeReport r;
    r.name = "diffusion_bound";
    r.worst_point = "M not declared";
    return r;
  }
  return run_probe("diffusion_bound", opt, d, *cs.diffusion_bound_M, exec, [&](const ProbeDraw& p) {
    std::vector<double> s1(d * m);
    cs.diffusion(p.t, p.x, p.mu, s1);
    return norm2(s1);
  });
}

std::vector<ProbeReport> probe_all(const CoefficientSet& cs, const ProbeOptions& opt, const Executor& exec) {
  return {probe_monotonicity(cs, opt, exec), probe_drift_measure_lipschitz(cs, opt, exec),
          probe_polynomial_growth(cs, opt, exec), probe_lipschitz_sigma(cs, opt, exec),
          probe_diffusion_bound(cs, opt, exec)};
}

UniformConvergenceReport probe_uniform_convergence(const EpsilonFamily& fam, const std::vector<double>& eps_list,
                                                   const ProbeOptions& opt, const Executor& exec) {
  for (std::size_t i = 1; i < eps_list.size(); ++i)
    if (!(eps_list[i] < eps_list[i - 1])) throw ParameterError("eps_list must be strictly decreasing");
  const auto& base = fam.base;
  const std::size_t d = base.dim_x;
  const std::size_t m = base.dim_w;
  UniformConvergenceReport r;
  for (double eps : eps_list) {
    const CoefficientSet pert = fam.perturbed(eps);
    const double gap = run_probe("uniform_convergence", opt, d, 0.0, exec, [&](const ProbeDraw& p) {
                         std::vector<double> b1(d), b2(d), s1(d * m), s2(d * m);
                         base.drift(p.t, p.x, p.mu, b1);
                         pert.drift(p.t, p.x, p.mu, b2);
                         base.diffusion(p.t, p.x, p.mu, s1);
                         pert.diffusion(p.t, p.x, p.mu, s2);
                         return std::max(diff_norm(b1, b2), diff_norm(s1, s2));
                       }).max_observed;
    const double eta = fam.eta(eps);
    r.eps.push_back(eps);
    r.gap.push_back(gap);
    r.declared.push_back(eta);
    if (gap > eta * (1.0 + opt.rel_tol) + opt.rel_tol) r.within_declared = false;
    if (r.gap.size() >= 2 && gap > r.gap[r.gap.size() - 2] * (1.0 + opt.rel_tol) + opt.rel_tol) r.monotone = false;
  }
  r.pass = r.within_declared && r.monotone;
  return r;
}

}  // namespace mvldp
