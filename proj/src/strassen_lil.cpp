#include "mvldp/strassen_lil.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "mvldp/errors.hpp"
#include "mvldp/mvsde_solver.hpp"
#include "mvldp/rng.hpp"

namespace mvldp {

double lil_scale(double u) {
  if (!(u > 3.0) || !std::isfinite(u)) throw DomainError("rescaling needs u > 3");
  return std::sqrt(u * std::log(std::log(u)));
}

double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median of an empty sample");
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  const double hi = v[h];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h));
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Contraction systems

ContractionSystem::ContractionSystem(std::vector<double> center, Map apply, Map jacobian, Map hessian,
                                     bool is_linear)
    : center_(std::move(center)),
      apply_(std::move(apply)),
      jacobian_(std::move(jacobian)),
      hessian_(std::move(hessian)),
      linear_(is_linear) {
  if (center_.empty()) throw ParameterError("contraction center must have dimension >= 1");
  if (!apply_) throw ParameterError("contraction system needs a map");
  for (double v : center_)
    if (!std::isfinite(v)) throw ParameterError("contraction center must be finite");
}

ContractionSystem ContractionSystem::linear(std::vector<double> center) {
  const std::vector<double> x = center;
  const std::size_t d = x.size();
  Map apply = [x](double a, std::span<const double> y, std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (y[i] - x[i]) / a + x[i];
  };
  Map jac = [d](double a, std::span<const double>, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) out[i * d + i] = 1.0 / a;
  };
  Map hess = [](double, std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  return ContractionSystem(std::move(center), std::move(apply), std::move(jac), std::move(hess), true);
}

namespace {

void check_scale(double a) {
  if (!(a > 0.0) || !std::isfinite(a)) throw DomainError("contraction scale must be positive and finite");
}

}  // namespace

void ContractionSystem::apply(double a, std::span<const double> y, std::span<double> out) const {
  check_scale(a);
  if (y.size() != dim() || out.size() != dim()) throw ParameterError("point has wrong dimension");
  apply_(a, y, out);
}

std::vector<double> ContractionSystem::apply(double a, std::span<const double> y) const {
  std::vector<double> out(dim());
  apply(a, y, out);
  return out;
}

void ContractionSystem::jacobian(double a, std::span<const double> y, std::span<double> out) const {
  if (!differentiable()) throw UnsupportedError("contraction system is not differentiable");
  check_scale(a);
  if (y.size() != dim() || out.size() != dim() * dim()) throw ParameterError("jacobian buffer has wrong size");
  jacobian_(a, y, out);
}

void ContractionSystem::hessian(double a, std::span<const double> y, std::span<double> out) const {
  if (!differentiable()) throw UnsupportedError("contraction system is not differentiable");
  check_scale(a);
  if (y.size() != dim() || out.size() != dim() * dim() * dim()) throw ParameterError("hessian buffer has wrong size");
  hessian_(a, y, out);
}

ContractionProbe probe_contraction(const ContractionSystem& gamma, std::size_t samples, std::uint64_t seed,
                                   double box, double tol) {
  if (samples == 0) throw ParameterError("probe needs at least one sample");
  const std::size_t d = gamma.dim();
  ContractionProbe r;
  r.samples = samples;
  std::vector<double> p[4], ga[4], gb[4], tmp(d), back(d);
  for (int q = 0; q < 4; ++q) {
    p[q].resize(d);
    ga[q].resize(d);
    gb[q].resize(d);
  }
  const auto& x = gamma.center();
  auto dist = [d](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };

  for (std::size_t s = 0; s < samples; ++s) {
    const auto key = rng::derive(seed, "contraction-probe", s);
    std::uint64_t c = 0;
    for (int q = 0; q < 4; ++q)
      for (std::size_t i = 0; i < d; ++i) p[q][i] = box * (2.0 * rng::uniform(key, c++) - 1.0);
    double a = std::exp(6.0 * rng::uniform(key, c++) - 3.0);
    double b = std::exp(6.0 * rng::uniform(key, c++) - 3.0);
    if (a < b) std::swap(a, b);

    gamma.apply(a, x, tmp);
    r.center_error = std::max(r.center_error, dist(tmp, x));
    gamma.apply(1.0, p[0], tmp);
    r.identity_error = std::max(r.identity_error, dist(tmp, p[0]));
    gamma.apply(1.0 / a, p[1], tmp);
    gamma.apply(a, tmp, back);
    r.inverse_error = std::max(r.inverse_error, dist(back, p[1]) / (1.0 + dist(p[1], x)));

    for (int q = 0; q < 4; ++q) {
      gamma.apply(a, p[q], ga[q]);
      gamma.apply(b, p[q], gb[q]);
    }
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double da = ga[0][i] - ga[1][i] - ga[2][i] + ga[3][i];
      const double db = gb[0][i] - gb[1][i] - gb[2][i] + gb[3][i];
      lhs += da * da;
      rhs += db * db;
    }
    lhs = std::sqrt(lhs);
    rhs = std::sqrt(rhs);
    const double excess = lhs - rhs;
    r.second_difference_excess = std::max(r.second_difference_excess, excess);
    if (excess > tol * (1.0 + rhs)) ++r.violations;
  }
  r.pass = r.center_error <= tol && r.identity_error <= tol && r.inverse_error <= tol && r.violations == 0;
  return r;
}

// ---------------------------------------------------------------------------
// Rescaling

namespace {

std::size_t exact_index(double v, const char* what) {
  const double r = std::round(v);
  if (r < 0.0 || std::fabs(v - r) > 1e-9 * std::max(1.0, r)) throw DomainError(what);
  return static_cast<std::size_t>(r);
}

}  // namespace

Path rescale(const ContractionSystem& gamma, const Path& y, double u, std::size_t out_steps) {
  const double phi = lil_scale(u);
  if (y.dim() != gamma.dim()) throw ParameterError("path and contraction system differ in dimension");
  if (u > y.horizon() * (1.0 + 1e-12)) throw DomainError("rescaling needs u <= horizon of the long path");
  const double dt = y.step();
  const std::size_t span_nodes = exact_index(u / dt, "u is not a node of the long grid");
  if (out_steps == 0) out_steps = span_nodes;
  const std::size_t d = y.dim();
  Path z(1.0, out_steps, d);
  for (std::size_t k = 0; k <= out_steps; ++k) {
    const double node = static_cast<double>(span_nodes) * static_cast<double>(k) / static_cast<double>(out_steps);
    const std::size_t idx = exact_index(node, "u t_k does not land on the long grid");
    gamma.apply(phi, y.at(idx), z.at(k));
  }
  return z;
}

// ---------------------------------------------------------------------------
// Transformed coefficients

void transformed_coefficients(const ContractionSystem& gamma, const CoefficientSet& cs, double u,
                              std::span<const double> y, const EmpiricalMeasure& law, std::span<double> drift_out,
                              std::span<double> diffusion_out) {
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  if (gamma.dim() != d || y.size() != d) throw ParameterError("dimension mismatch in transformed coefficients");
  if (drift_out.size() != d || diffusion_out.size() != d * m) throw ParameterError("output buffers have wrong size");
  if (!gamma.differentiable()) throw UnsupportedError("transformed coefficients need a twice differentiable system");
  const double phi = lil_scale(u);

  std::vector<double> yinv(d);
  gamma.apply(1.0 / phi, y, yinv);
  std::vector<double> atoms(law.atoms().size());
  for (std::size_t i = 0; i < law.size(); ++i)
    gamma.apply(1.0 / phi, law.atom(i), std::span<double>(atoms.data() + i * d, d));
  const EmpiricalMeasure pushed(d, std::move(atoms), law.weights());

  std::vector<double> jac(d * d), hess(d * d * d), b(d), sig(d * m);
  gamma.jacobian(phi, yinv, jac);
  gamma.hessian(phi, yinv, hess);
  cs.eval_drift(0.0, yinv, pushed, b);
  cs.eval_diffusion(0.0, yinv, pushed, sig);

  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) acc += jac[r * d + i] * sig[i * m + j];
      diffusion_out[r * m + j] = phi * acc;
    }
  }
  for (std::size_t r = 0; r < d; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) acc += jac[r * d + i] * b[i];
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double h = hess[(r * d + i) * d + j];
        if (h == 0.0) continue;
        double a = 0.0;
        for (std::size_t k = 0; k < m; ++k) a += sig[i * m + k] * sig[j * m + k];
        acc += 0.5 * a * h;
      }
    }
    drift_out[r] = u * acc;
  }
}

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double diff_norm(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

constexpr double kSettleTol = 1e-6;

}  // namespace

TransformedCoefficientReport transformed_coefficients_report(const ContractionSystem& gamma,
                                                             const CoefficientSet& cs,
                                                             const std::vector<double>& u_values,
                                                             const std::vector<std::vector<double>>& probes) {
  if (u_values.size() < 2) throw ParameterError("convergence check needs at least two u values");
  if (probes.empty()) throw ParameterError("convergence check needs probe points");
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  const std::size_t nu = u_values.size();
  const std::size_t np = probes.size();

  // One law for every probe: the uniform cloud on the probe points.
  std::vector<double> atoms;
  for (const auto& p : probes) {
    if (p.size() != d) throw ParameterError("probe point has wrong dimension");
    atoms.insert(atoms.end(), p.begin(), p.end());
  }
  const EmpiricalMeasure law = EmpiricalMeasure::uniform(d, atoms);

  std::vector<std::vector<double>> b(nu * np, std::vector<double>(d)), s(nu * np, std::vector<double>(d * m));
  for (std::size_t a = 0; a < nu; ++a) {
    for (std::size_t p = 0; p < np; ++p) {
      transformed_coefficients(gamma, cs, u_values[a], probes[p], law, b[a * np + p], s[a * np + p]);
    }
  }

  TransformedCoefficientReport r;
  r.u_values = u_values;
  r.drift_size.assign(nu, 0.0);
  r.diffusion_change.assign(nu, 0.0);
  double drift_step = 0.0, drift_last = 0.0, sigma_last = 0.0;
  for (std::size_t a = 0; a < nu; ++a) {
    for (std::size_t p = 0; p < np; ++p) {
      r.drift_size[a] = std::max(r.drift_size[a], norm2(b[a * np + p]));
      r.diffusion_change[a] = std::max(r.diffusion_change[a], diff_norm(s[a * np + p], s[(nu - 1) * np + p]));
    }
  }
  for (std::size_t p = 0; p < np; ++p) {
    drift_step = std::max(drift_step, diff_norm(b[(nu - 1) * np + p], b[(nu - 2) * np + p]));
    drift_last = std::max(drift_last, norm2(b[(nu - 1) * np + p]));
    sigma_last = std::max(sigma_last, norm2(s[(nu - 1) * np + p]));
  }
  r.drift_converges = drift_step <= kSettleTol * (1.0 + drift_last);
  r.diffusion_converges = r.diffusion_change[nu - 2] <= kSettleTol * (1.0 + sigma_last);

  const bool centered = std::all_of(gamma.center().begin(), gamma.center().end(), [](double v) { return v == 0.0; });
  if (gamma.is_linear() && centered && cs.constant_diffusion) {
    double err = 0.0;
    std::vector<double> scaled(d), bd(d), sd(d * m);
    for (std::size_t a = 0; a < nu; ++a) {
      const double phi = lil_scale(u_values[a]);
      std::vector<double> spread = atoms;
      for (double& v : spread) v *= phi;
      const EmpiricalMeasure pushed = EmpiricalMeasure::uniform(d, std::move(spread));
      for (std::size_t p = 0; p < np; ++p) {
        for (std::size_t i = 0; i < d; ++i) scaled[i] = phi * probes[p][i];
        cs.eval_drift(0.0, scaled, pushed, bd);
        cs.eval_diffusion(0.0, scaled, pushed, sd);
        for (std::size_t i = 0; i < d; ++i) {
          const double expect = u_values[a] / phi * bd[i];
          err = std::max(err, std::fabs(b[a * np + p][i] - expect) / (1.0 + std::fabs(expect)));
        }
        for (std::size_t i = 0; i < d * m; ++i) err = std::max(err, std::fabs(s[a * np + p][i] - sd[i]));
      }
    }
    r.specialization_error = err;
  } else {
    r.specialization_error = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

// ---------------------------------------------------------------------------
// Limit set

LimitSetK::LimitSetK(CoefficientSet generator, std::vector<double> center, std::size_t grid_size)
    : generator_(std::move(generator)), center_(std::move(center)), grid_size_(grid_size) {
  generator_.validate();
  if (center_.size() != generator_.dim_x) throw ParameterError("limit set center has wrong dimension");
  if (grid_size_ == 0) throw ParameterError("limit set grid must have at least one cell");
}

LimitSetK LimitSetK::from_model(const ContractionSystem& gamma, const CoefficientSet& cs, std::size_t grid_size) {
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  std::vector<std::vector<double>> probes;
  probes.push_back(gamma.center());
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<double> p = gamma.center();
    p[i] += 0.5;
    probes.push_back(p);
    p[i] -= 1.5;
    probes.push_back(p);
  }
  std::vector<double> diag = gamma.center();
  for (double& v : diag) v += 0.3;
  probes.push_back(diag);

  const std::vector<double> us{1e2, 1e4, 1e6, 1e8, 1e10};
  const auto rep = transformed_coefficients_report(gamma, cs, us, probes);
  if (!rep.drift_converges)
    throw UnsupportedError("transformed drift does not settle as u grows; no limit set for this model");
  if (!rep.diffusion_converges)
    throw UnsupportedError("transformed diffusion does not settle as u grows; no limit set for this model");

  const double u_last = us.back();
  CoefficientSet gen = cs;
  if (rep.drift_size.back() == 0.0) {
    gen.drift = [](double, std::span<const double>, const EmpiricalMeasure&, std::span<double> out) {
      std::fill(out.begin(), out.end(), 0.0);
    };
    gen.drift_jacobian = gen.drift;
  } else {
    gen.drift = [gamma, cs, u_last, m](double, std::span<const double> y, const EmpiricalMeasure& mu,
                                       std::span<double> out) {
      std::vector<double> sig(out.size() * m);
      transformed_coefficients(gamma, cs, u_last, y, mu, out, sig);
    };
    gen.drift_jacobian = {};
  }
  if (cs.constant_diffusion && gamma.is_linear()) {
    std::vector<double> b(d), sig(d * m);
    const auto law = EmpiricalMeasure::dirac(gamma.center());
    transformed_coefficients(gamma, cs, u_last, gamma.center(), law, b, sig);
    gen.diffusion = [sig](double, std::span<const double>, const EmpiricalMeasure&, std::span<double> out) {
      std::copy(sig.begin(), sig.end(), out.begin());
    };
    gen.constant_diffusion = true;
  } else {
    gen.diffusion = [gamma, cs, u_last, d](double, std::span<const double> y, const EmpiricalMeasure& mu,
                                          std::span<double> out) {
      std::vector<double> b(d);
      transformed_coefficients(gamma, cs, u_last, y, mu, b, out);
    };
    gen.constant_diffusion = false;
  }
  gen.diffusion_jacobian = {};
  return LimitSetK(std::move(gen), gamma.center(), grid_size);
}

Path LimitSetK::member(const CameronMartinPath& h) const {
  if (h.dim() != generator_.dim_w) throw ParameterError("control has wrong dimension");
  const TimeGrid grid{h.horizon(), h.grid_size()};
  std::vector<double> psi_stages;
  const std::vector<double> zero(h.derivative().size(), 0.0);
  detail::integrate_rk4(generator_, center_, grid, zero, nullptr, &psi_stages);
  return detail::integrate_rk4(generator_, center_, grid, h.derivative(), &psi_stages, nullptr);
}

void LimitSetK::add_member(CameronMartinPath h) {
  if (h.dim() != generator_.dim_w) throw ParameterError("control has wrong dimension");
  if (!(h.energy() <= kEnergy * (1.0 + 1e-12))) throw DomainError("member violates the energy constraint");
  members_.push_back(std::move(h));
}

// ---------------------------------------------------------------------------
// Distance to K

namespace {

void project_energy(std::span<double> hdot, double dt) {
  double e = 0.0;
  for (double v : hdot) e += v * v;
  e *= dt;
  if (!std::isfinite(e) || e <= LimitSetK::kEnergy) return;
  const double s = std::sqrt(LimitSetK::kEnergy / e);
  for (double& v : hdot) v *= s;
}

// Log-sum-exp smoothing of the Hölder seminorm of z - Phi(h) over all node pairs.
class SmoothHolderObjective {
 public:
  SmoothHolderObjective(const Path& z, const LimitSetK& k, double alpha)
      : z_(z), k_(k), grid_{z.horizon(), z.grid_size()}, alpha_(alpha) {
    const std::size_t n = grid_.steps;
    const std::vector<double> zero(n * k.generator().dim_w, 0.0);
    detail::integrate_rk4(k.generator(), k.center(), grid_, zero, nullptr, &psi_stages_);
    inv_tau_.resize(n + 1);
    for (std::size_t l = 1; l <= n; ++l) inv_tau_[l] = std::pow(static_cast<double>(l) * grid_.dt(), -alpha);
  }

  void set_sharpness(double beta) { beta_ = beta; }

  Path image(std::span<const double> hdot, std::vector<double>* stages) const {
    return detail::integrate_rk4(k_.generator(), k_.center(), grid_, hdot, &psi_stages_, stages);
  }

  double exact(std::span<const double> hdot) const { return residual_norm(image(hdot, nullptr)); }

  double residual_norm(const Path& phi) const {
    std::vector<double> e(z_.values().size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = z_.values()[i] - phi.values()[i];
    return holder_norm(Path(z_.horizon(), z_.grid_size(), z_.dim(), std::move(e)), alpha_);
  }

  double operator()(std::span<const double> hdot, std::span<double> grad) const {
    const std::size_t n = grid_.steps;
    const std::size_t d = z_.dim();
    std::vector<double> stages;
    Path phi;
    try {
      phi = image(hdot, &stages);
    } catch (const NumericalError&) {
      std::fill(grad.begin(), grad.end(), 0.0);
      return std::numeric_limits<double>::infinity();
    }
    std::vector<double> e(z_.values().size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = z_.values()[i] - phi.values()[i];

    const std::size_t pairs = n * (n + 1) / 2;
    std::vector<double> g(pairs), r(pairs);
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t p = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j <= n; ++j, ++p) {
        double s = kSmoothFloor * kSmoothFloor;
        for (std::size_t c = 0; c < d; ++c) {
          const double v = e[j * d + c] - e[i * d + c];
          s += v * v;
        }
        r[p] = std::sqrt(s);
        g[p] = r[p] * inv_tau_[j - i];
        gmax = std::max(gmax, g[p]);
      }
    }
    double sum = 0.0;
    for (std::size_t q = 0; q < pairs; ++q) {
      g[q] = std::exp(beta_ * (g[q] - gmax));
      sum += g[q];
    }
    const double value = gmax + std::log(sum) / beta_;

    // d value / d Phi_node = -(d value / d e_node).
    std::vector<double> lambda((n + 1) * d, 0.0);
    p = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j <= n; ++j, ++p) {
        const double w = g[p] / sum * inv_tau_[j - i] / r[p];
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) {
          const double v = w * (e[j * d + c] - e[i * d + c]);
          lambda[j * d + c] -= v;
          lambda[i * d + c] += v;
        }
      }
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    detail::adjoint_rk4(k_.generator(), grid_, hdot, psi_stages_, stages, lambda, grad);
    return value;
  }

 private:
  static constexpr double kSmoothFloor = 1e-9;

  const Path& z_;
  const LimitSetK& k_;
  TimeGrid grid_;
  double alpha_;
  double beta_ = 1.0;
  std::vector<double> psi_stages_;
  std::vector<double> inv_tau_;
};

}  // namespace

DistanceResult distance_to_K(const Path& z, const LimitSetK& k, double alpha, const DistanceBudget& budget) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw DomainError("Hölder exponent must lie in (0, 1/2)");
  if (z.dim() != k.generator().dim_x) throw ParameterError("path and limit set differ in dimension");
  if (z.grid_size() == 0) throw ParameterError("path needs at least one cell");
  if (budget.starts == 0 || budget.sharpness.empty()) throw ParameterError("distance budget is empty");
  z.validate();

  const std::size_t n = z.grid_size();
  const std::size_t m = k.generator().dim_w;
  const double dt = z.step();
  SmoothHolderObjective obj(z, k, alpha);
  const Projection project = [dt](std::span<double> h) { project_energy(h, dt); };

  std::vector<std::vector<double>> inits;
  {
    std::vector<double> fit(n * m, 0.0);
    try {
      const RateValue rv = rate_of_path(k.generator(), k.center(), z);
      if (!rv.infinite && rv.minimizer) fit = rv.minimizer->derivative();
    } catch (const std::exception&) {
    }
    project_energy(fit, dt);
    inits.push_back(std::move(fit));
  }
  for (std::size_t s = 1; s < budget.starts; ++s) {
    std::vector<double> h(n * m, 0.0);
    if (s > 1) {
      const auto key = rng::derive(budget.seed, "distance/start", s);
      for (std::size_t i = 0; i < h.size(); ++i) h[i] = rng::normal(key, i);
      double e = 0.0;
      for (double v : h) e += v * v;
      const double scale = std::sqrt(0.5 * LimitSetK::kEnergy / (e * dt));
      for (double& v : h) v *= scale;
    }
    inits.push_back(std::move(h));
  }

  DistanceResult best;
  best.value = std::numeric_limits<double>::infinity();
  const Objective f = [&obj](std::span<const double> h, std::span<double> g) { return obj(h, g); };
  for (auto& h : inits) {
    double current = obj.exact(h);
    bool exhausted = false;
    for (double beta_rel : budget.sharpness) {
      if (current <= 1e-13) break;
      obj.set_sharpness(beta_rel / current);
      const LbfgsResult res = minimize_lbfgs(f, h, budget.lbfgs, project);
      best.evaluations += res.evaluations;
      exhausted = !res.converged && res.status.find("budget") != std::string::npos;
      const double v = obj.exact(res.x);
      if (v < current) {
        current = v;
        h = res.x;
      }
    }
    if (current < best.value) {
      best.value = current;
      best.budget_exhausted = exhausted;
      best.minimizer = CameronMartinPath(z.horizon(), n, m, h);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Long-horizon experiment

namespace {

struct LevelPlan {
  int j = 0;
  std::vector<std::uint64_t> u;  // ascending, last one is the level's c^j
};

std::uint64_t snap(double v, std::uint64_t q) {
  const double r = std::max(1.0, std::round(v / static_cast<double>(q)));
  return static_cast<std::uint64_t>(r) * q;
}

}  // namespace

StrassenReport strassen_experiment(const std::string& model, const ContractionSystem& gamma,
                                   const StrassenOptions& opt, const Executor& exec) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!(opt.c > 1.0) || !std::isfinite(opt.c)) throw ParameterError("level ratio c must exceed 1");
  if (!(opt.alpha > 0.0 && opt.alpha < 0.5)) throw ParameterError("Hölder exponent must lie in (0, 1/2)");
  if (opt.trajectories == 0 || opt.n_per_unit == 0 || opt.rescale_steps == 0 || opt.substeps == 0)
    throw ParameterError("trajectories, n_per_unit, rescale_steps and substeps must be positive");
  if (!(opt.epsilon >= 0.0)) throw ParameterError("epsilon must be nonnegative");
  if (!(opt.horizon > 3.0) || opt.horizon != std::floor(opt.horizon) || opt.horizon > 1e12)
    throw ParameterError("horizon must be an integer above 3");

  const ModelLibraryEntry entry = make_model(model);
  const CoefficientSet& cs = entry.coefficients();
  const std::vector<double>& x0 = entry.default_x0;
  const std::size_t d = cs.dim_x;
  if (gamma.dim() != d) throw ParameterError("contraction system and model differ in dimension");

  // u must make every u t_k a long-grid node: u * n_per_unit divisible by rescale_steps.
  const std::uint64_t q = opt.rescale_steps / std::gcd(opt.rescale_steps, opt.n_per_unit);
  const auto U = static_cast<std::uint64_t>(opt.horizon);

  std::vector<LevelPlan> plan;
  for (int j = 1;; ++j) {
    const double lo = std::pow(opt.c, j - 1);
    const double hi = std::pow(opt.c, j);
    if (hi > opt.horizon) break;
    if (!(lo > 3.0)) continue;
    LevelPlan lp;
    lp.j = j;
    for (std::size_t i = 0; i <= opt.u_per_level; ++i) {
      const double u = lo * std::pow(opt.c, static_cast<double>(i) / static_cast<double>(opt.u_per_level));
      const std::uint64_t s = snap(u, q);
      if (s <= 3 || s > U) continue;
      if (lp.u.empty() || s > lp.u.back()) lp.u.push_back(s);
    }
    const std::uint64_t top = snap(hi, q);
    if (top <= 3 || top > U) continue;
    while (!lp.u.empty() && lp.u.back() > top) lp.u.pop_back();
    if (lp.u.empty() || lp.u.back() != top) lp.u.push_back(top);
    plan.push_back(std::move(lp));
  }
  if (plan.size() < 8) throw DomainError("insufficient horizon: fewer than 8 levels of u");

  std::vector<std::uint64_t> nodes;
  for (const auto& lp : plan)
    for (std::uint64_t u : lp.u)
      for (std::size_t k = 0; k <= opt.rescale_steps; ++k) nodes.push_back(u * opt.n_per_unit * k / opt.rescale_steps);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  auto node_slot = [&nodes](std::uint64_t node) {
    return static_cast<std::size_t>(std::lower_bound(nodes.begin(), nodes.end(), node) - nodes.begin());
  };

  std::optional<LimitSetK> k;
  if (opt.distances) k.emplace(LimitSetK::from_model(gamma, cs, opt.rescale_steps));

  const TimeGrid grid{opt.horizon, static_cast<std::size_t>(U * opt.n_per_unit)};
  const BrownianDriver driver(opt.seed, "strassen", cs.dim_w, grid, opt.substeps);
  const std::uint64_t first_u = static_cast<std::uint64_t>(std::ceil(std::exp(std::exp(1.0))));
  const std::size_t L = plan.size();
  const std::size_t T = opt.trajectories;

  std::vector<double> sup_z1(T), dist(opt.distances ? T * L : 0), ajc(T * L);
  exec.parallel_for(T, [&](std::size_t begin, std::size_t end) {
    std::vector<double> store(nodes.size() * d), buf(d);
    for (std::size_t tr = begin; tr < end; ++tr) {
      std::size_t next = 0, countdown = 0;
      std::uint64_t u = 0;
      double best = -std::numeric_limits<double>::infinity();
      auto observer = [&](std::size_t step, std::span<const double> y) {
        if (next < nodes.size() && step == nodes[next]) {
          std::copy(y.begin(), y.end(), store.begin() + static_cast<std::ptrdiff_t>(next * d));
          ++next;
        }
        if (countdown-- != 0) return;
        countdown = opt.n_per_unit - 1;
        if (u >= first_u) {
          gamma.apply(lil_scale(static_cast<double>(u)), y, buf);
          best = std::max(best, buf[0] - gamma.center()[0]);
        }
        ++u;
      };
      simulate_single(cs, x0, grid, opt.epsilon, driver, driver.key(tr), observer);
      sup_z1[tr] = best;

      auto rescaled = [&](std::uint64_t u) {
        Path z(1.0, opt.rescale_steps, d);
        const double phi = lil_scale(static_cast<double>(u));
        for (std::size_t kk = 0; kk <= opt.rescale_steps; ++kk) {
          const std::size_t slot = node_slot(u * opt.n_per_unit * kk / opt.rescale_steps);
          gamma.apply(phi, std::span<const double>(store.data() + slot * d, d), z.at(kk));
        }
        return z;
      };
      for (std::size_t l = 0; l < L; ++l) {
        const auto& lp = plan[l];
        const std::uint64_t uj = lp.u.back();
        const Path zj = rescaled(uj);
        const double phij = lil_scale(static_cast<double>(uj));
        double a = 0.0;
        for (std::uint64_t u : lp.u) {
          if (u == uj) continue;
          const Path zu = rescaled(u);
          const double phi = lil_scale(static_cast<double>(u));
          Path diff(1.0, opt.rescale_steps, d);
          std::vector<double> back(d), fwd(d);
          for (std::size_t kk = 0; kk <= opt.rescale_steps; ++kk) {
            gamma.apply(1.0 / phij, zj.at(kk), back);
            gamma.apply(phi, back, fwd);
            for (std::size_t c = 0; c < d; ++c) diff(kk, c) = zu(kk, c) - fwd[c];
          }
          a = std::max(a, holder_norm(diff, opt.alpha));
        }
        ajc[tr * L + l] = a;
        if (opt.distances) dist[tr * L + l] = distance_to_K(zj, *k, opt.alpha, opt.budget).value;
      }
    }
  });

  StrassenReport rep;
  rep.model = model;
  rep.options = opt;
  rep.sup_z1 = sup_z1;
  rep.sup_z1_median = median(sup_z1);
  rep.sup_z1_mean = std::accumulate(sup_z1.begin(), sup_z1.end(), 0.0) / static_cast<double>(T);
  rep.sup_z1_max = *std::max_element(sup_z1.begin(), sup_z1.end());
  for (std::size_t l = 0; l < L; ++l) {
    StrassenLevel lv;
    lv.j = plan[l].j;
    lv.u = static_cast<double>(plan[l].u.back());
    for (std::size_t tr = 0; tr < T; ++tr) {
      lv.a_jc.push_back(ajc[tr * L + l]);
      if (opt.distances) lv.d_alpha.push_back(dist[tr * L + l]);
    }
    lv.median_a_jc = median(lv.a_jc);
    lv.median_d_alpha = opt.distances ? median(lv.d_alpha) : std::numeric_limits<double>::quiet_NaN();
    rep.levels.push_back(std::move(lv));
  }

  const std::size_t tail = std::min(opt.trend_levels, L);
  auto nonincreasing = [&](auto get) {
    for (std::size_t l = L - tail + 1; l < L; ++l)
      if (get(rep.levels[l]) > get(rep.levels[l - 1])) return false;
    return true;
  };
  rep.a_jc_trend_nonincreasing = nonincreasing([](const StrassenLevel& lv) { return lv.median_a_jc; });
  if (opt.distances) {
    rep.d_alpha_trend_nonincreasing = nonincreasing([](const StrassenLevel& lv) { return lv.median_d_alpha; });
    rep.compactness_proxy.resize(L);
    for (std::size_t l0 = 0; l0 < L; ++l0) {
      std::vector<double> mx(T, 0.0);
      for (std::size_t tr = 0; tr < T; ++tr)
        for (std::size_t l = l0; l < L; ++l) mx[tr] = std::max(mx[tr], dist[tr * L + l]);
      rep.compactness_proxy[l0] = median(std::move(mx));
    }
    rep.compactness_proxy_nonincreasing = true;
    for (std::size_t l = 1; l < L; ++l)
      if (rep.compactness_proxy[l] > rep.compactness_proxy[l - 1]) rep.compactness_proxy_nonincreasing = false;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace mvldp
