#include "mvldp/measure_ops.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "mvldp/errors.hpp"
#include "mvldp/numfmt.hpp"

namespace mvldp {

EmpiricalMeasure::EmpiricalMeasure(std::size_t dim, std::vector<double> atoms, std::vector<double> weights)
    : dim_(dim), atoms_(std::move(atoms)), weights_(std::move(weights)) {
  if (dim_ == 0) throw ParameterError("measure dimension must be positive");
  if (weights_.empty()) throw ParameterError("measure needs at least one atom");
  if (atoms_.size() != weights_.size() * dim_) throw ParameterError("atoms/weights size mismatch");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ParameterError("measure weights must be finite and nonnegative");
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-12) throw ParameterError("measure weights must sum to 1");
  for (double a : atoms_)
    if (!std::isfinite(a)) throw ParameterError("measure atoms must be finite");
  uniform_ = std::all_of(weights_.begin(), weights_.end(), [&](double w) { return w == weights_[0]; });
  finish();
}

EmpiricalMeasure EmpiricalMeasure::uniform(std::size_t dim, std::vector<double> atoms) {
  if (dim == 0 || atoms.empty() || atoms.size() % dim != 0) throw ParameterError("uniform measure: bad atom array");
  const std::size_t n = atoms.size() / dim;
  EmpiricalMeasure m;
  m.dim_ = dim;
  m.atoms_ = std::move(atoms);
  m.weights_.assign(n, 1.0 / static_cast<double>(n));
  for (double a : m.atoms_)
    if (!std::isfinite(a)) throw ParameterError("measure atoms must be finite");
  m.uniform_ = true;
  m.finish();
  return m;
}

EmpiricalMeasure EmpiricalMeasure::dirac(std::span<const double> point) {
  return uniform(point.size(), std::vector<double>(point.begin(), point.end()));
}

void EmpiricalMeasure::finish() {
  const std::size_t n = weights_.size();
  mean_.assign(dim_, 0.0);
  second_moment_ = 0.0;
  if (uniform_) {
    // Plain sums divided once: exact for Dirac measures and symmetric clouds.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dim_; ++j) {
        const double a = atoms_[i * dim_ + j];
        mean_[j] += a;
        second_moment_ += a * a;
      }
    for (double& m : mean_) m /= static_cast<double>(n);
    second_moment_ /= static_cast<double>(n);
    return;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim_; ++j) {
      const double a = atoms_[i * dim_ + j];
      mean_[j] += weights_[i] * a;
      second_moment_ += weights_[i] * a * a;
    }
}

namespace {

void check_dims(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.dim() != nu.dim())
    throw ParameterError("dimension mismatch: " + std::to_string(mu.dim()) + " vs " + std::to_string(nu.dim()));
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

double w2_sorted(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  const std::size_t n = mu.size();
  const std::size_t m = nu.size();
  if (mu.is_uniform() && nu.is_uniform() && n == m) {
    std::vector<double> a = mu.atoms();
    std::vector<double> b = nu.atoms();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(n));
  }
  std::vector<std::size_t> ia(n), ib(m);
  std::iota(ia.begin(), ia.end(), 0);
  std::iota(ib.begin(), ib.end(), 0);
  std::sort(ia.begin(), ia.end(), [&](auto x, auto y) { return mu.atoms()[x] < mu.atoms()[y]; });
  std::sort(ib.begin(), ib.end(), [&](auto x, auto y) { return nu.atoms()[x] < nu.atoms()[y]; });
  // Walk both quantile functions; each segment moves mass min(remaining) between current atoms.
  std::size_t i = 0, j = 0;
  double ra = mu.weight(ia[0]);
  double rb = nu.weight(ib[0]);
  double s = 0.0;
  while (i < n && j < m) {
    const double mass = std::min(ra, rb);
    const double diff = mu.atoms()[ia[i]] - nu.atoms()[ib[j]];
    s += mass * diff * diff;
    ra -= mass;
    rb -= mass;
    if (ra <= 0.0) {
      if (++i < n) ra = mu.weight(ia[i]);
    }
    if (rb <= 0.0) {
      if (++j < m) rb = nu.weight(ib[j]);
    }
    // Round-off can leave one side with a vanishing residue at the end.
    if (i == n || j == m) break;
  }
  return std::sqrt(std::max(0.0, s));
}

void check_assignment_shape(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (!mu.is_uniform() || !nu.is_uniform() || mu.size() != nu.size())
    throw UnsupportedError("exact transport for this configuration needs uniform clouds of equal size");
  if (mu.size() > kAssignmentCap)
    throw UnsupportedError("assignment solver capped at " + std::to_string(kAssignmentCap) +
                           " atoms; subsample the clouds explicitly");
}

}  // namespace

std::vector<std::size_t> solve_assignment(std::size_t n, const std::vector<double>& cost) {
  // Shortest augmenting path with potentials (Hungarian method), O(n^3).
  if (cost.size() != n * n) throw ParameterError("assignment: cost matrix must be n x n");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      const double* row = cost.data() + (i0 - 1) * n;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> match(n);
  for (std::size_t j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
  return match;
}

double wasserstein2_assignment(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  check_dims(mu, nu);
  check_assignment_shape(mu, nu);
  const std::size_t n = mu.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = sq_dist(mu.atom(i), nu.atom(j));
  const auto match = solve_assignment(n, cost);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += cost[i * n + match[i]];
  return std::sqrt(s / static_cast<double>(n));
}

double wasserstein2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  check_dims(mu, nu);
  if (nu.size() == 1) return wasserstein2_to_dirac(mu, nu.atom(0));
  if (mu.size() == 1) return wasserstein2_to_dirac(nu, mu.atom(0));
  if (mu.dim() == 1) return w2_sorted(mu, nu);
  return wasserstein2_assignment(mu, nu);
}

double wasserstein2_to_dirac(const EmpiricalMeasure& mu, std::span<const double> point) {
  if (point.size() != mu.dim()) throw ParameterError("point dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += mu.weight(i) * sq_dist(mu.atom(i), point);
  return std::sqrt(s);
}

double modified_wasserstein(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  check_dims(mu, nu);
  auto capped = [](double sq) { return std::min(1.0, std::sqrt(sq)); };
  if (mu.size() == 1 || nu.size() == 1) {
    const EmpiricalMeasure& cloud = mu.size() == 1 ? nu : mu;
    const auto point = mu.size() == 1 ? mu.atom(0) : nu.atom(0);
    double s = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) s += cloud.weight(i) * capped(sq_dist(cloud.atom(i), point));
    return std::min(1.0, s);
  }
  check_assignment_shape(mu, nu);
  const std::size_t n = mu.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = capped(sq_dist(mu.atom(i), nu.atom(j)));
  const auto match = solve_assignment(n, cost);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += cost[i * n + match[i]];
  return std::min(1.0, s / static_cast<double>(n));
}

EmpiricalMeasure measure_add(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  check_dims(mu, nu);
  const std::size_t d = mu.dim();
  std::vector<double> atoms;
  std::vector<double> weights;
  atoms.reserve(mu.size() * nu.size() * d);
  weights.reserve(mu.size() * nu.size());
  for (std::size_t i = 0; i < mu.size(); ++i)
    for (std::size_t j = 0; j < nu.size(); ++j) {
      for (std::size_t k = 0; k < d; ++k) atoms.push_back(mu.atom(i)[k] + nu.atom(j)[k]);
      weights.push_back(mu.weight(i) * nu.weight(j));
    }
  if (mu.is_uniform() && nu.is_uniform()) return EmpiricalMeasure::uniform(d, std::move(atoms));
  // Renormalise away the product round-off before validation.
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double& w : weights) w /= total;
  return EmpiricalMeasure(d, std::move(atoms), std::move(weights));
}

EmpiricalMeasure measure_scale(double c, const EmpiricalMeasure& mu) {
  if (c == 0.0 || !std::isfinite(c))
    throw ParameterError("measure_scale: factor must be finite and nonzero (use a Dirac at 0 instead)");
  std::vector<double> atoms = mu.atoms();
  for (double& a : atoms) a *= c;
  if (mu.is_uniform()) return EmpiricalMeasure::uniform(mu.dim(), std::move(atoms));
  return EmpiricalMeasure(mu.dim(), std::move(atoms), mu.weights());
}

EmpiricalMeasure path_marginal_at_node(std::span<const Path> cloud, std::size_t node) {
  if (cloud.empty()) throw ParameterError("path_marginal: empty cloud");
  const Path& first = cloud[0];
  const std::size_t d = first.dim();
  std::vector<double> atoms;
  atoms.reserve(cloud.size() * d);
  for (const Path& p : cloud) {
    if (p.grid_size() != first.grid_size() || p.dim() != d || p.horizon() != first.horizon())
      throw ParameterError("path_marginal: paths must share a grid");
    if (node > p.grid_size()) throw DomainError("path_marginal: node beyond grid");
    const auto x = p.at(node);
    atoms.insert(atoms.end(), x.begin(), x.end());
  }
  return EmpiricalMeasure::uniform(d, std::move(atoms));
}

EmpiricalMeasure path_marginal(std::span<const Path> cloud, double t) {
  if (cloud.empty()) throw ParameterError("path_marginal: empty cloud");
  return path_marginal_at_node(cloud, cloud[0].nearest_node(t));
}

double sup_time_wasserstein2(std::span<const Path> a, std::span<const Path> b) {
  if (a.empty() || b.empty()) throw ParameterError("sup_time_wasserstein2: empty cloud");
  if (a[0].grid_size() != b[0].grid_size()) throw ParameterError("sup_time_wasserstein2: grids differ");
  double best = 0.0;
  for (std::size_t k = 0; k <= a[0].grid_size(); ++k)
    best = std::max(best, wasserstein2(path_marginal_at_node(a, k), path_marginal_at_node(b, k)));
  return best;
}

void write_measure_csv(const EmpiricalMeasure& mu, std::ostream& out, int precision) {
  out << "weight";
  for (std::size_t j = 0; j < mu.dim(); ++j) out << ",x_" << (j + 1);
  out << '\n';
  for (std::size_t i = 0; i < mu.size(); ++i) {
    out << format_number(mu.weight(i), precision);
    for (double a : mu.atom(i)) out << ',' << format_number(a, precision);
    out << '\n';
  }
}

EmpiricalMeasure read_measure_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("weight,", 0) != 0) throw ParameterError("measure CSV: bad header");
  const std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<double> atoms, weights;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      (col == 0 ? weights : atoms).push_back(parse_number(cell));
      ++col;
    }
    if (col != d + 1) throw ParameterError("measure CSV: ragged row");
  }
  return EmpiricalMeasure(d, std::move(atoms), std::move(weights));
}

}  // namespace mvldp
