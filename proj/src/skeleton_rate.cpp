#include "mvldp/skeleton_rate.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mvldp/errors.hpp"
#include "mvldp/numfmt.hpp"
#include "mvldp/rng.hpp"

namespace mvldp {

namespace detail {

Path integrate_rk4(const CoefficientSet& cs, std::span<const double> x, const TimeGrid& grid,
                   std::span<const double> hdot, const std::vector<double>* law_stages,
                   std::vector<double>* stages_out) {
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  const std::size_t n = grid.steps;
  const double dt = grid.dt();
  if (x.size() != d) throw ParameterError("initial point has wrong dimension");
  if (hdot.size() != n * m) throw ParameterError("control does not match the grid");
  if (law_stages && law_stages->size() != 4 * n * d) throw ParameterError("law stages do not match the grid");

  Path out(grid.horizon, n, d);
  std::copy(x.begin(), x.end(), out.at(0).begin());
  if (stages_out) stages_out->assign(4 * n * d, 0.0);

  std::vector<double> y(x.begin(), x.end()), z(d), b(d), sig(d * m);
  std::vector<double> k[4];
  for (auto& v : k) v.assign(d, 0.0);
  const double c[4] = {0.0, 0.5, 0.5, 1.0};

  for (std::size_t s = 0; s < n; ++s) {
    const double t = grid.time(s);
    const double* u = hdot.data() + s * m;
    for (int st = 0; st < 4; ++st) {
      if (st == 0) {
        z = y;
      } else {
        for (std::size_t i = 0; i < d; ++i) z[i] = y[i] + c[st] * dt * k[st - 1][i];
      }
      for (std::size_t i = 0; i < d; ++i) {
        if (!std::isfinite(z[i])) throw NumericalError("skeleton integration diverged", s + 1);
      }
      const std::size_t off = (4 * s + static_cast<std::size_t>(st)) * d;
      if (stages_out) std::copy(z.begin(), z.end(), stages_out->begin() + static_cast<std::ptrdiff_t>(off));
      const auto law = EmpiricalMeasure::dirac(
          law_stages ? std::span<const double>(law_stages->data() + off, d) : std::span<const double>(z));
      const double ts = t + c[st] * dt;
      cs.eval_drift(ts, z, law, b);
      cs.eval_diffusion(ts, z, law, sig);
      for (std::size_t i = 0; i < d; ++i) {
        double acc = b[i];
        for (std::size_t j = 0; j < m; ++j) acc += sig[i * m + j] * u[j];
        k[st][i] = acc;
      }
    }
    for (std::size_t i = 0; i < d; ++i) y[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    for (std::size_t i = 0; i < d; ++i) {
      if (!std::isfinite(y[i])) throw NumericalError("skeleton integration diverged", s + 1);
    }
    std::copy(y.begin(), y.end(), out.at(s + 1).begin());
  }
  return out;
}

void adjoint_rk4(const CoefficientSet& cs, const TimeGrid& grid, std::span<const double> hdot,
                 const std::vector<double>& law_stages, const std::vector<double>& stages,
                 std::span<const double> lambda, std::span<double> grad) {
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  const std::size_t n = grid.steps;
  const double dt = grid.dt();
  std::vector<double> ybar(lambda.begin() + static_cast<std::ptrdiff_t>(n * d), lambda.end());
  std::vector<double> kbar[4], zbar(d), jac(d * d), djac(d * m * d), sig(d * m), yk(d);
  for (auto& v : kbar) v.assign(d, 0.0);
  const double c[4] = {0.0, 0.5, 0.5, 1.0};
  const double w[4] = {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0};
  const bool sigma_moves = !cs.constant_diffusion;

  for (std::size_t s = n; s-- > 0;) {
    const double* u = hdot.data() + s * m;
    double* ubar = grad.data() + s * m;
    for (int st = 0; st < 4; ++st) {
      for (std::size_t i = 0; i < d; ++i) kbar[st][i] = w[st] * dt * ybar[i];
    }
    yk = ybar;
    for (int st = 3; st >= 0; --st) {
      const std::size_t off = (4 * s + static_cast<std::size_t>(st)) * d;
      std::span<const double> z(stages.data() + off, d);
      const auto law = EmpiricalMeasure::dirac(std::span<const double>(law_stages.data() + off, d));
      const double ts = grid.time(s) + c[st] * dt;
      cs.eval_drift_jacobian(ts, z, law, jac);
      cs.eval_diffusion(ts, z, law, sig);
      if (sigma_moves) cs.eval_diffusion_jacobian(ts, z, law, djac);
      const auto& kb = kbar[st];
      // zbar = J^T kb with J_ik = db_i/dz_k + sum_j dsigma_ij/dz_k u_j.
      for (std::size_t k = 0; k < d; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          double jik = jac[i * d + k];
          if (sigma_moves) {
            for (std::size_t j = 0; j < m; ++j) jik += djac[(i * m + j) * d + k] * u[j];
          }
          acc += jik * kb[i];
        }
        zbar[k] = acc;
      }
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += sig[i * m + j] * kb[i];
        ubar[j] += acc;
      }
      for (std::size_t i = 0; i < d; ++i) yk[i] += zbar[i];
      if (st > 0) {
        for (std::size_t i = 0; i < d; ++i) kbar[st - 1][i] += c[st] * dt * zbar[i];
      }
    }
    for (std::size_t i = 0; i < d; ++i) ybar[i] = yk[i] + lambda[s * d + i];
  }
}

}  // namespace detail

namespace {

std::vector<double> refine_control(std::span<const double> hdot, std::size_t n, std::size_t m) {
  std::vector<double> fine(2 * n * m);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < m; ++j) {
      fine[(2 * s) * m + j] = hdot[s * m + j];
      fine[(2 * s + 1) * m + j] = hdot[s * m + j];
    }
  }
  return fine;
}

double defect(const Path& coarse, const Path& fine) {
  double worst = 0.0;
  for (std::size_t k = 0; k <= coarse.grid_size(); ++k) {
    for (std::size_t j = 0; j < coarse.dim(); ++j) worst = std::max(worst, std::fabs(coarse(k, j) - fine(2 * k, j)));
  }
  return worst * 16.0 / 15.0;
}

// Runs the psi / skeleton pair at the given control; psi first so its stages freeze the law.
Path run_pair(const CoefficientSet& cs, std::span<const double> x, const TimeGrid& grid,
              std::span<const double> hdot, Path* psi_out) {
  const std::vector<double> zero(grid.steps * cs.dim_w, 0.0);
  std::vector<double> stages;
  Path psi = detail::integrate_rk4(cs, x, grid, zero, nullptr, &stages);
  Path phi = detail::integrate_rk4(cs, x, grid, hdot, &stages, nullptr);
  if (psi_out) *psi_out = std::move(psi);
  return phi;
}

void check_residual(double residual, const Path& path, double tol) {
  if (residual > tol * (1.0 + sup_norm(path))) {
    std::ostringstream os;
    os << "skeleton step-halving defect " << format_number(residual, 6) << " exceeds tolerance; refine the grid (n="
       << path.grid_size() << ")";
    throw NumericalError(os.str(), path.grid_size());
  }
}

}  // namespace

SkeletonSolution solve_psi(const CoefficientSet& cs, std::span<const double> x, const TimeGrid& grid,
                           const SkeletonOptions& opt) {
  cs.validate();
  grid.validate();
  const std::vector<double> zero(grid.steps * cs.dim_w, 0.0);
  SkeletonSolution sol;
  sol.path = detail::integrate_rk4(cs, x, grid, zero, nullptr, nullptr);
  sol.driver = CameronMartinPath(grid.horizon, grid.steps, cs.dim_w);
  sol.residual = std::numeric_limits<double>::quiet_NaN();
  if (opt.check_defect) {
    const TimeGrid fine{grid.horizon, 2 * grid.steps};
    const std::vector<double> zf(fine.steps * cs.dim_w, 0.0);
    sol.residual = defect(sol.path, detail::integrate_rk4(cs, x, fine, zf, nullptr, nullptr));
    check_residual(sol.residual, sol.path, opt.tolerance);
  }
  return sol;
}

SkeletonSolution solve_skeleton(const CoefficientSet& cs, std::span<const double> x, const CameronMartinPath& h,
                                const SkeletonOptions& opt) {
  cs.validate();
  if (h.dim() != cs.dim_w) throw ParameterError("control dimension differs from the noise dimension");
  const TimeGrid grid{h.horizon(), h.grid_size()};
  grid.validate();
  SkeletonSolution sol;
  sol.path = run_pair(cs, x, grid, h.derivative(), nullptr);
  sol.driver = h;
  sol.residual = std::numeric_limits<double>::quiet_NaN();
  if (opt.check_defect) {
    const TimeGrid fine{grid.horizon, 2 * grid.steps};
    const auto hf = refine_control(h.derivative(), grid.steps, cs.dim_w);
    sol.residual = defect(sol.path, run_pair(cs, x, fine, hf, nullptr));
    check_residual(sol.residual, sol.path, opt.tolerance);
  }
  return sol;
}

Path discrete_skeleton_Fm(const CoefficientSet& cs, std::span<const double> x, const CameronMartinPath& g,
                          std::size_t m) {
  cs.validate();
  const std::size_t n = g.grid_size();
  if (m == 0 || n % m != 0) throw ParameterError("grid size must be a multiple of m");
  if (g.dim() != cs.dim_w) throw ParameterError("control dimension differs from the noise dimension");
  const std::size_t d = cs.dim_x;
  const std::size_t dw = cs.dim_w;
  const TimeGrid grid{g.horizon(), n};
  const std::vector<double> zero(n * dw, 0.0);
  const Path psi = detail::integrate_rk4(cs, x, grid, zero, nullptr, nullptr);
  const Path gp = cm_to_path(g);

  Path out(g.horizon(), n, d);
  std::copy(x.begin(), x.end(), out.at(0).begin());
  const std::size_t r = n / m;
  std::vector<double> b(d), sig(d * dw);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t base = k * r;
    const double tk = grid.time(base);
    const auto law = EmpiricalMeasure::dirac(psi.at(base));
    const auto hk = out.at(base);
    cs.eval_drift(tk, hk, law, b);
    cs.eval_diffusion(tk, hk, law, sig);
    for (std::size_t l = 1; l <= r; ++l) {
      const double dtl = grid.time(base + l) - tk;
      for (std::size_t i = 0; i < d; ++i) {
        double v = out(base, i) + b[i] * dtl;
        for (std::size_t j = 0; j < dw; ++j) v += sig[i * dw + j] * (gp(base + l, j) - gp(base, j));
        out(base + l, i) = v;
      }
    }
  }
  out.validate();
  return out;
}

namespace {

struct CellSystem {
  Eigen::MatrixXd sigma;
  Eigen::VectorXd rhs;  ///< fdot - b
  double fdot_norm = 0.0;
};

Path psi_for(const CoefficientSet& cs, std::span<const double> x, const Path& f) {
  return solve_psi(cs, x, TimeGrid{f.horizon(), f.grid_size()}).path;
}

void check_start(std::span<const double> x, const Path& f) {
  if (f.dim() != x.size()) throw DomainError("path dimension differs from the initial point");
  double dist = 0.0, scale = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    dist = std::max(dist, std::fabs(f(0, j) - x[j]));
    scale = std::max(scale, std::fabs(x[j]));
  }
  if (dist > 1e-9 * (1.0 + scale)) throw DomainError("path does not start at the initial point");
}

// Coefficients at the chord midpoint of cell k, law at the midpoint of psi.
CellSystem cell_system(const CoefficientSet& cs, const Path& f, const Path& psi, std::size_t k) {
  const std::size_t d = cs.dim_x;
  const std::size_t m = cs.dim_w;
  const double dt = f.step();
  std::vector<double> z(d), w(d), b(d), sig(d * m);
  CellSystem c;
  c.rhs.resize(static_cast<Eigen::Index>(d));
  double fn = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    z[i] = 0.5 * (f(k, i) + f(k + 1, i));
    w[i] = 0.5 * (psi(k, i) + psi(k + 1, i));
  }
  const double tm = f.time(k) + 0.5 * dt;
  const auto law = EmpiricalMeasure::dirac(w);
  cs.eval_drift(tm, z, law, b);
  cs.eval_diffusion(tm, z, law, sig);
  for (std::size_t i = 0; i < d; ++i) {
    const double fd = (f(k + 1, i) - f(k, i)) / dt;
    fn += fd * fd;
    c.rhs[static_cast<Eigen::Index>(i)] = fd - b[i];
  }
  c.fdot_norm = std::sqrt(fn);
  c.sigma = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      sig.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(m));
  return c;
}

}  // namespace

RateValue rate_of_path(const CoefficientSet& cs, std::span<const double> x, const Path& f) {
  cs.validate();
  check_start(x, f);
  const Path psi = psi_for(cs, x, f);
  const std::size_t n = f.grid_size();
  const std::size_t m = cs.dim_w;
  CameronMartinPath h(f.horizon(), n, m);
  RateValue rv;
  for (std::size_t k = 0; k < n; ++k) {
    const CellSystem c = cell_system(cs, f, psi, k);
    Eigen::VectorXd u = c.sigma.completeOrthogonalDecomposition().solve(c.rhs);
    if (!u.allFinite()) u.setZero();
    const double res = (c.sigma * u - c.rhs).norm();
    const double rel = res / (1.0 + c.fdot_norm);
    if (rel > rv.attainability_residual) {
      rv.attainability_residual = rel;
      rv.worst_cell = k;
    }
    if (res > 1e-6 * (1.0 + c.fdot_norm)) rv.infinite = true;
    for (std::size_t j = 0; j < m; ++j) h.rate(k)[j] = u[static_cast<Eigen::Index>(j)];
  }
  if (rv.infinite) {
    rv.value = std::numeric_limits<double>::infinity();
    return rv;
  }
  rv.value = 0.5 * h.energy();
  rv.minimizer = std::move(h);
  return rv;
}

double rate_of_path_quadratic(const CoefficientSet& cs, std::span<const double> x, const Path& f) {
  cs.validate();
  if (cs.dim_x != cs.dim_w) throw DomainError("quadratic-form rate needs a square diffusion matrix");
  check_start(x, f);
  const Path psi = psi_for(cs, x, f);
  double acc = 0.0;
  for (std::size_t k = 0; k < f.grid_size(); ++k) {
    const CellSystem c = cell_system(cs, f, psi, k);
    const Eigen::MatrixXd a = c.sigma * c.sigma.transpose();
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw DomainError("sigma sigma^T is not positive definite along the path");
    acc += c.rhs.dot(llt.solve(c.rhs));
  }
  return 0.5 * acc * f.step();
}

// ---------------------------------------------------------------------------
// Events

HolderArgmax holder_argmax(const Path& f, double alpha) {
  HolderArgmax best;
  const std::size_t n = f.grid_size();
  const std::size_t d = f.dim();
  const double dt = f.step();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j <= n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double e = f(j, c) - f(i, c);
        s += e * e;
      }
      const double v = std::sqrt(s) / std::pow(static_cast<double>(j - i) * dt, alpha);
      if (v > best.value) best = {v, i, j};
    }
  }
  return best;
}

Path EventSpec::center_path(const Path& psi) const {
  Path c(psi.horizon(), psi.grid_size(), psi.dim());
  for (std::size_t k = 0; k <= psi.grid_size(); ++k) {
    for (std::size_t j = 0; j < psi.dim(); ++j) {
      switch (center) {
        case Center::psi: c(k, j) = psi(k, j); break;
        case Center::start: c(k, j) = psi(0, j); break;
        case Center::line: c(k, j) = psi(0, j) + slope * psi.time(k); break;
      }
    }
  }
  return c;
}

namespace {

Path difference(const Path& a, const Path& b) {
  std::vector<double> v(a.values().size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
  return Path(a.horizon(), a.grid_size(), a.dim(), std::move(v));
}

void check_shapes(const Path& f, const Path& psi) {
  if (f.grid_size() != psi.grid_size() || f.dim() != psi.dim()) throw DomainError("event paths on different grids");
}

// Node with the largest Euclidean norm; ties go to the last node.
std::size_t sup_node(const Path& f, double& norm) {
  std::size_t arg = 0;
  double best = -1.0;
  for (std::size_t k = 0; k <= f.grid_size(); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < f.dim(); ++j) s += f(k, j) * f(k, j);
    if (s >= best) {
      best = s;
      arg = k;
    }
  }
  norm = std::sqrt(best);
  return arg;
}

void unit_direction(const Path& f, std::size_t k, double norm, std::span<double> out) {
  for (std::size_t j = 0; j < f.dim(); ++j) out[j] = norm > 0.0 ? f(k, j) / norm : (j == 0 ? 1.0 : 0.0);
}

}  // namespace

double EventSpec::margin(const Path& f, const Path& psi) const {
  check_shapes(f, psi);
  switch (kind) {
    case Kind::terminal: {
      if (v.size() != f.dim()) throw DomainError("terminal direction has wrong dimension");
      double s = 0.0;
      for (std::size_t j = 0; j < f.dim(); ++j) s += f(f.grid_size(), j) * v[j];
      return s - c;
    }
    case Kind::supexit: return sup_norm(f) - radius;
    case Kind::supball: return radius - sup_norm(difference(f, center_path(psi)));
    case Kind::holderball: return radius - holder_norm(difference(f, center_path(psi)), alpha);
    case Kind::holderout: return holder_norm(difference(f, center_path(psi)), alpha) - radius;
  }
  return 0.0;
}

double EventSpec::margin_gradient(const Path& f, const Path& psi, std::span<double> grad) const {
  check_shapes(f, psi);
  const std::size_t d = f.dim();
  const std::size_t n = f.grid_size();
  if (grad.size() != (n + 1) * d) throw ParameterError("gradient buffer has wrong size");
  std::fill(grad.begin(), grad.end(), 0.0);
  switch (kind) {
    case Kind::terminal: {
      if (v.size() != d) throw DomainError("terminal direction has wrong dimension");
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        s += f(n, j) * v[j];
        grad[n * d + j] = v[j];
      }
      return s - c;
    }
    case Kind::supexit: {
      double norm = 0.0;
      const std::size_t k = sup_node(f, norm);
      unit_direction(f, k, norm, grad.subspan(k * d, d));
      return norm - radius;
    }
    case Kind::supball: {
      const Path g = difference(f, center_path(psi));
      double norm = 0.0;
      const std::size_t k = sup_node(g, norm);
      unit_direction(g, k, norm, grad.subspan(k * d, d));
      for (std::size_t j = 0; j < d; ++j) grad[k * d + j] = -grad[k * d + j];
      return radius - norm;
    }
    case Kind::holderball:
    case Kind::holderout: {
      const Path g = difference(f, center_path(psi));
      const HolderArgmax a = holder_argmax(g, alpha);
      const double sign = kind == Kind::holderout ? 1.0 : -1.0;
      if (a.j > a.i) {
        const double scale = std::pow(static_cast<double>(a.j - a.i) * g.step(), alpha);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += (g(a.j, j) - g(a.i, j)) * (g(a.j, j) - g(a.i, j));
        const double len = std::sqrt(s);
        for (std::size_t j = 0; j < d; ++j) {
          const double e = len > 0.0 ? (g(a.j, j) - g(a.i, j)) / len : (j == 0 ? 1.0 : 0.0);
          grad[a.j * d + j] += sign * e / scale;
          grad[a.i * d + j] -= sign * e / scale;
        }
      }
      return sign * a.value - sign * radius;
    }
  }
  return 0.0;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double event_number(const std::string& key, const std::string& value) {
  try {
    return parse_number(value);
  } catch (const ParameterError&) {
    throw ConfigError("event key '" + key + "' expects a number, got '" + value + "'");
  }
}

}  // namespace

EventSpec parse_event(const std::string& text) {
  EventSpec e;
  const auto colon = text.find(':');
  const std::string kind = trim(text.substr(0, colon));
  if (kind == "terminal") e.kind = EventSpec::Kind::terminal;
  else if (kind == "supexit") e.kind = EventSpec::Kind::supexit;
  else if (kind == "supball") e.kind = EventSpec::Kind::supball;
  else if (kind == "holderball") e.kind = EventSpec::Kind::holderball;
  else if (kind == "holderout") e.kind = EventSpec::Kind::holderout;
  else throw ConfigError("unknown event kind '" + kind + "'");

  const bool is_terminal = e.kind == EventSpec::Kind::terminal;
  const bool has_center = e.kind == EventSpec::Kind::supball || e.kind == EventSpec::Kind::holderball ||
                          e.kind == EventSpec::Kind::holderout;
  const bool has_alpha = e.kind == EventSpec::Kind::holderball || e.kind == EventSpec::Kind::holderout;

  if (colon == std::string::npos) return e;
  std::stringstream ss(text.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("event item '" + item + "' is not key=value");
    const std::string key = trim(item.substr(0, eq));
    const std::string value = trim(item.substr(eq + 1));
    if (is_terminal && key == "v") {
      e.v.clear();
      std::stringstream vs(value);
      std::string part;
      while (std::getline(vs, part, '|')) e.v.push_back(event_number(key, trim(part)));
      if (e.v.empty()) throw ConfigError("event key 'v' is empty");
    } else if (is_terminal && key == "c") {
      e.c = event_number(key, value);
    } else if (!is_terminal && (key == "R" || key == "r")) {
      e.radius = event_number(key, value);
    } else if (has_alpha && key == "alpha") {
      e.alpha = event_number(key, value);
      if (!(e.alpha > 0.0 && e.alpha < 0.5)) throw ConfigError("event alpha must lie in (0, 1/2)");
    } else if (has_center && key == "center") {
      if (value == "psi") e.center = EventSpec::Center::psi;
      else if (value == "x") e.center = EventSpec::Center::start;
      else if (value == "line") e.center = EventSpec::Center::line;
      else throw ConfigError("unknown event center '" + value + "'");
    } else if (has_center && key == "slope") {
      e.slope = event_number(key, value);
    } else {
      throw ConfigError("unknown event key '" + key + "' for kind " + kind);
    }
  }
  if (!is_terminal && !(e.radius > 0.0)) throw ConfigError("event radius must be positive");
  return e;
}

std::string to_string(const EventSpec& e) {
  std::ostringstream os;
  auto center = [&] {
    switch (e.center) {
      case EventSpec::Center::psi: os << ",center=psi"; break;
      case EventSpec::Center::start: os << ",center=x"; break;
      case EventSpec::Center::line: os << ",center=line,slope=" << format_number(e.slope); break;
    }
  };
  switch (e.kind) {
    case EventSpec::Kind::terminal: {
      os << "terminal:v=";
      for (std::size_t j = 0; j < e.v.size(); ++j) os << (j ? "|" : "") << format_number(e.v[j]);
      os << ",c=" << format_number(e.c);
      break;
    }
    case EventSpec::Kind::supexit: os << "supexit:R=" << format_number(e.radius); break;
    case EventSpec::Kind::supball:
      os << "supball:r=" << format_number(e.radius);
      center();
      break;
    case EventSpec::Kind::holderball:
    case EventSpec::Kind::holderout:
      os << (e.kind == EventSpec::Kind::holderball ? "holderball" : "holderout") << ":alpha=" << format_number(e.alpha)
         << ",r=" << format_number(e.radius);
      center();
      break;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Event rate

namespace {

// Huber-smoothed hinge max(0, s): quadratic on [0, kappa], linear beyond.
double smooth_hinge(double s, double kappa, double& slope) {
  if (s <= 0.0) {
    slope = 0.0;
    return 0.0;
  }
  if (s <= kappa) {
    slope = s / kappa;
    return 0.5 * s * s / kappa;
  }
  slope = 1.0;
  return s - 0.5 * kappa;
}

double event_scale(const EventSpec& e) {
  return std::max(1.0, e.kind == EventSpec::Kind::terminal ? std::fabs(e.c) : e.radius);
}

}  // namespace

EventObjective::EventObjective(const CoefficientSet& cs, std::span<const double> x, const EventSpec& event,
                               const TimeGrid& grid, double weight, double margin, double smoothing)
    : cs_(cs),
      x_(x.begin(), x.end()),
      event_(event),
      grid_(grid),
      weight_(weight),
      target_(margin),
      smoothing_(smoothing) {
  psi_ = solve_psi(cs, x, grid);
  const std::vector<double> zero(grid.steps * cs.dim_w, 0.0);
  detail::integrate_rk4(cs, x, grid, zero, nullptr, &psi_stages_);
}

double EventObjective::margin(std::span<const double> hdot) const {
  const Path phi = detail::integrate_rk4(cs_, x_, grid_, hdot, &psi_stages_, nullptr);
  return event_.margin(phi, psi_.path);
}

double EventObjective::operator()(std::span<const double> hdot, std::span<double> grad) const {
  const std::size_t d = cs_.dim_x;
  const std::size_t n = grid_.steps;
  const double dt = grid_.dt();

  std::vector<double> stages;
  const Path phi = detail::integrate_rk4(cs_, x_, grid_, hdot, &psi_stages_, &stages);

  double energy = 0.0;
  for (double v : hdot) energy += v * v;
  energy *= 0.5 * dt;
  for (std::size_t i = 0; i < hdot.size(); ++i) grad[i] = hdot[i] * dt;

  std::vector<double> lambda((n + 1) * d);
  const double g = event_.margin_gradient(phi, psi_.path, lambda);
  double slope = 0.0;
  const double pen = smooth_hinge(target_ - g, smoothing_, slope);
  if (slope == 0.0) return energy;

  // d(penalty)/d(node) = -w * slope * dg/d(node); pull it back through RK4.
  const double coef = -weight_ * slope;
  for (double& l : lambda) l *= coef;
  detail::adjoint_rk4(cs_, grid_, hdot, psi_stages_, stages, lambda, grad);
  return energy + weight_ * pen;
}

RateValue rate_of_event(const CoefficientSet& cs, std::span<const double> x, const EventSpec& event,
                        const std::optional<CameronMartinPath>& init, const RateBudget& budget,
                        const Executor& exec) {
  cs.validate();
  const TimeGrid grid{budget.horizon, budget.grid_size};
  grid.validate();
  const std::size_t m = cs.dim_w;
  const std::size_t size = grid.steps * m;
  if (init && (init->grid_size() != grid.steps || init->dim() != m)) {
    throw ParameterError("initial control does not match the optimisation grid");
  }
  if (budget.starts == 0) throw ParameterError("at least one start is required");

  const double tau = budget.margin * event_scale(event);
  std::vector<double> base = init ? init->derivative() : std::vector<double>(size, 0.0);

  struct StartResult {
    std::vector<double> u;
    double energy = std::numeric_limits<double>::infinity();
    double margin = -std::numeric_limits<double>::infinity();
    bool feasible = false;
    std::size_t evaluations = 0;
  };
  std::vector<StartResult> results(budget.starts);

  exec.parallel_for(budget.starts, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      EventObjective obj(cs, x, event, grid, budget.initial_weight, tau, 0.5 * tau);
      std::vector<double> u = base;
      if (s > 0) {
        const rng::StreamKey key = rng::derive(budget.seed, "rate/start", s);
        for (std::size_t i = 0; i < size; ++i) u[i] += 0.5 * rng::normal(key, i);
      }
      StartResult& r = results[s];
      double w = budget.initial_weight;
      for (std::size_t round = 0; round <= budget.doublings; ++round) {
        obj.set_weight(w);
        const Objective f = [&obj](std::span<const double> v, std::span<double> g) { return obj(v, g); };
        LbfgsResult lr = minimize_lbfgs(f, u, budget.lbfgs);
        r.evaluations += lr.evaluations;
        u = std::move(lr.x);
        const double g = obj.margin(u);
        if (g >= 0.0) {
          r.feasible = true;
          r.margin = g;
          break;
        }
        r.margin = g;
        w *= 2.0;
      }
      double e = 0.0;
      for (double v : u) e += v * v;
      r.energy = 0.5 * e * grid.dt();
      r.u = std::move(u);
    }
  });

  RateValue rv;
  rv.upper_bound = true;
  std::size_t best = results.size();
  for (std::size_t s = 0; s < results.size(); ++s) {
    rv.evaluations += results[s].evaluations;
    if (results[s].feasible && (best == results.size() || results[s].energy < results[best].energy)) best = s;
  }
  if (best == results.size()) {
    rv.infeasible = true;
    std::size_t closest = 0;
    for (std::size_t s = 1; s < results.size(); ++s) {
      if (results[s].margin > results[closest].margin) closest = s;
    }
    best = closest;
  }
  CameronMartinPath h(grid.horizon, grid.steps, m, results[best].u);
  rv.value = 0.5 * h.energy();
  rv.attainability_residual = results[best].margin;
  rv.worst_cell = best;
  rv.minimizer = std::move(h);
  return rv;
}

}  // namespace mvldp
