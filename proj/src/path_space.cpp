#include "mvldp/path_space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mvldp/errors.hpp"
#include "mvldp/numfmt.hpp"

namespace mvldp {

namespace {

void check_grid(double horizon, std::size_t grid_size, std::size_t dim) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ParameterError("path horizon must be positive and finite");
  if (grid_size < 2) throw ParameterError("grid_size must be at least 2");
  if (dim == 0) throw ParameterError("path dimension must be positive");
}

}  // namespace

Path::Path(double horizon, std::size_t grid_size, std::size_t dim)
    : horizon_(horizon), n_(grid_size), d_(dim), values_((grid_size + 1) * dim, 0.0) {
  check_grid(horizon, grid_size, dim);
}

Path::Path(double horizon, std::size_t grid_size, std::size_t dim, std::vector<double> values)
    : horizon_(horizon), n_(grid_size), d_(dim), values_(std::move(values)) {
  check_grid(horizon, grid_size, dim);
  if (values_.size() != (grid_size + 1) * dim)
    throw ParameterError("path values: expected " + std::to_string((grid_size + 1) * dim) + " entries, got " +
                         std::to_string(values_.size()));
  validate();
}

Path Path::from_function(double horizon, std::size_t grid_size, std::size_t dim,
                         const std::function<void(double, std::span<double>)>& f) {
  Path p(horizon, grid_size, dim);
  for (std::size_t k = 0; k <= grid_size; ++k) f(p.time(k), p.at(k));
  p.validate();
  return p;
}

std::size_t Path::nearest_node(double t) const {
  if (!(t >= 0.0 && t <= horizon_)) throw DomainError("time " + format_number(t) + " outside [0, T]");
  const double k = std::nearbyint(t / horizon_ * static_cast<double>(n_));
  return std::min(n_, static_cast<std::size_t>(k));
}

void Path::validate() const {
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (!std::isfinite(values_[i])) throw NumericalError("non-finite path value", i / (d_ ? d_ : 1));
}

double sup_norm(const Path& path) {
  double best = 0.0;
  const std::size_t d = path.dim();
  for (std::size_t k = 0; k <= path.grid_size(); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += path(k, j) * path(k, j);
    best = std::max(best, s);
  }
  return std::sqrt(best);
}

namespace {

// max_i |x_{i+lag} - x_i| for i + lag <= last, scalar coordinates.
double lag_max_scalar(const double* x, std::size_t last, std::size_t lag) {
  double m = 0.0;
  const std::size_t count = last + 1 - lag;
  const double* y = x + lag;
#pragma omp simd reduction(max : m)
  for (std::size_t i = 0; i < count; ++i) {
    const double a = std::fabs(y[i] - x[i]);
    m = a > m ? a : m;
  }
  return m;
}

double lag_max_vector(const Path& p, std::size_t last, std::size_t lag) {
  const std::size_t d = p.dim();
  const double* v = p.values().data();
  double m = 0.0;
  for (std::size_t i = 0; i + lag <= last; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double a = v[(i + lag) * d + j] - v[i * d + j];
      s += a * a;
    }
    m = std::max(m, s);
  }
  return std::sqrt(m);
}

double lag_max(const Path& p, std::size_t last, std::size_t lag) {
  return p.dim() == 1 ? lag_max_scalar(p.values().data(), last, lag) : lag_max_vector(p, last, lag);
}

// Euclidean diameter bound of nodes 0..last: any increment is at most this.
double range_bound(const Path& p, std::size_t last) {
  double s = 0.0;
  for (std::size_t j = 0; j < p.dim(); ++j) {
    double lo = p(0, j);
    double hi = lo;
    for (std::size_t k = 1; k <= last; ++k) {
      lo = std::min(lo, p(k, j));
      hi = std::max(hi, p(k, j));
    }
    s += (hi - lo) * (hi - lo);
  }
  return std::sqrt(s);
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("Hölder exponent must lie in (0,1)");
}

double holder_prefix(const Path& path, std::size_t last, double alpha) {
  if (last == 0) return 0.0;
  const double dt = path.step();
  const double range = range_bound(path, last);
  double best = 0.0;
  for (std::size_t lag = 1; lag <= last; ++lag) {
    const double scale = std::pow(static_cast<double>(lag) * dt, alpha);
    if (range / scale <= best) break;
    best = std::max(best, lag_max(path, last, lag) / scale);
  }
  return best;
}

}  // namespace

double holder_norm(const Path& path, double alpha) {
  check_alpha(alpha);
  return holder_prefix(path, path.grid_size(), alpha);
}

std::vector<double> increment_profile(const Path& path, std::size_t last_node) {
  if (last_node > path.grid_size()) throw DomainError("increment_profile: node beyond grid");
  std::vector<double> prof(last_node + 1, 0.0);
  for (std::size_t lag = 1; lag <= last_node; ++lag) prof[lag] = lag_max(path, last_node, lag);
  return prof;
}

std::vector<double> increment_profile(const Path& path) { return increment_profile(path, path.grid_size()); }

double holder_from_profile(std::span<const double> profile, double dt, double alpha) {
  check_alpha(alpha);
  double best = 0.0;
  for (std::size_t lag = 1; lag < profile.size(); ++lag)
    best = std::max(best, profile[lag] / std::pow(static_cast<double>(lag) * dt, alpha));
  return best;
}

RestrictedNorms restricted_norms(const Path& path, double t, double alpha) {
  check_alpha(alpha);
  const std::size_t last = path.nearest_node(t);
  RestrictedNorms r;
  double s2 = 0.0;
  for (std::size_t k = 0; k <= last; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < path.dim(); ++j) s += path(k, j) * path(k, j);
    s2 = std::max(s2, s);
  }
  r.sup = std::sqrt(s2);
  r.holder = holder_prefix(path, last, alpha);
  return r;
}

SchauderCoefficients schauder_decompose(const Path& path, std::size_t levels) {
  if (levels > 40) throw ParameterError("Schauder level too large");
  const std::size_t n = path.grid_size();
  const std::size_t finest = std::size_t{1} << (levels + 1);
  if (n % finest != 0)
    throw ParameterError("grid_size " + std::to_string(n) + " is not a multiple of 2^(P+1) = " + std::to_string(finest));
  SchauderCoefficients c;
  c.levels = levels;
  c.dim = path.dim();
  c.horizon = path.horizon();
  c.coeffs.assign(c.dim, std::vector<double>((std::size_t{1} << (levels + 1)) - 1, 0.0));
  c.endpoint_increment.resize(c.dim);
  for (std::size_t j = 0; j < c.dim; ++j) {
    c.endpoint_increment[j] = std::fabs(path(n, j) - path(0, j));
    for (std::size_t p = 0; p <= levels; ++p) {
      const std::size_t cells = std::size_t{1} << p;
      const std::size_t width = n / cells;
      const double weight = std::pow(2.0, 0.5 * static_cast<double>(p));
      for (std::size_t m = 1; m <= cells; ++m) {
        const std::size_t left = (m - 1) * width;
        const std::size_t right = m * width;
        const std::size_t mid = left + width / 2;
        c.coeffs[j][cells - 1 + (m - 1)] = weight * std::fabs(2.0 * path(mid, j) - path(right, j) - path(left, j));
      }
    }
  }
  return c;
}

double schauder_holder_estimate(const SchauderCoefficients& c, double alpha) {
  check_alpha(alpha);
  double best = 0.0;
  for (std::size_t j = 0; j < c.dim; ++j) {
    best = std::max(best, c.endpoint_increment[j]);
    for (std::size_t p = 0; p <= c.levels; ++p) {
      const std::size_t cells = std::size_t{1} << p;
      const double w = std::pow(2.0, static_cast<double>(p) * (alpha - 0.5));
      for (std::size_t m = 0; m < cells; ++m) best = std::max(best, w * c.coeffs[j][cells - 1 + m]);
    }
  }
  return best * std::pow(c.horizon, -alpha);
}

CameronMartinPath::CameronMartinPath(double horizon, std::size_t grid_size, std::size_t dim)
    : horizon_(horizon), n_(grid_size), d_(dim), derivative_(grid_size * dim, 0.0) {
  check_grid(horizon, grid_size, dim);
}

CameronMartinPath::CameronMartinPath(double horizon, std::size_t grid_size, std::size_t dim,
                                     std::vector<double> derivative)
    : horizon_(horizon), n_(grid_size), d_(dim), derivative_(std::move(derivative)) {
  check_grid(horizon, grid_size, dim);
  if (derivative_.size() != grid_size * dim) throw ParameterError("Cameron-Martin derivative has wrong length");
  for (double v : derivative_)
    if (!std::isfinite(v)) throw ParameterError("Cameron-Martin derivative must be finite");
}

double CameronMartinPath::energy() const noexcept {
  double s = 0.0;
  for (double v : derivative_) s += v * v;
  return s * step();
}

Path cm_to_path(const CameronMartinPath& h) {
  Path p(h.horizon(), h.grid_size(), h.dim());
  const double dt = h.step();
  for (std::size_t k = 0; k < h.grid_size(); ++k)
    for (std::size_t j = 0; j < h.dim(); ++j) p(k + 1, j) = p(k, j) + h.rate(k)[j] * dt;
  return p;
}

void write_path_csv(const Path& path, std::ostream& out, int precision) {
  out << 't';
  for (std::size_t j = 0; j < path.dim(); ++j) out << ",x_" << (j + 1);
  out << '\n';
  for (std::size_t k = 0; k <= path.grid_size(); ++k) {
    out << format_number(path.time(k), precision);
    for (std::size_t j = 0; j < path.dim(); ++j) out << ',' << format_number(path(k, j), precision);
    out << '\n';
  }
}

Path read_path_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParameterError("path CSV: missing header");
  const std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (d == 0 || line.rfind("t,", 0) != 0) throw ParameterError("path CSV: header must be t,x_1..x_d");
  std::vector<double> times;
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col == 0)
        times.push_back(parse_number(cell));
      else
        values.push_back(parse_number(cell));
      ++col;
    }
    if (col != d + 1) throw ParameterError("path CSV: ragged row");
  }
  if (times.size() < 3) throw ParameterError("path CSV: need at least 3 rows");
  const std::size_t n = times.size() - 1;
  const double horizon = times.back();
  for (std::size_t k = 0; k <= n; ++k) {
    const double expected = horizon * static_cast<double>(k) / static_cast<double>(n);
    if (std::fabs(times[k] - expected) > 1e-9 * std::max(1.0, horizon))
      throw ParameterError("path CSV: time column is not a uniform grid starting at 0");
  }
  return Path(horizon, n, d, std::move(values));
}

void write_path_binary(const Path& path, std::ostream& out) {
  const double horizon = path.horizon();
  const std::uint64_t n = path.grid_size();
  const std::uint64_t d = path.dim();
  out.write(reinterpret_cast<const char*>(&horizon), sizeof horizon);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  out.write(reinterpret_cast<const char*>(path.values().data()),
            static_cast<std::streamsize>(path.values().size() * sizeof(double)));
  if (!out) throw ParameterError("path binary: write failed");
}

Path read_path_binary(std::istream& in) {
  double horizon = 0.0;
  std::uint64_t n = 0;
  std::uint64_t d = 0;
  in.read(reinterpret_cast<char*>(&horizon), sizeof horizon);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  in.read(reinterpret_cast<char*>(&d), sizeof d);
  if (!in || n < 2 || d == 0 || n > (std::uint64_t{1} << 40) || d > 4096)
    throw ParameterError("path binary: bad header");
  std::vector<double> values((n + 1) * d);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw ParameterError("path binary: truncated data");
  return Path(horizon, n, d, std::move(values));
}

void save_path(const Path& path, const std::string& file) {
  const bool binary = file.size() > 4 && file.substr(file.size() - 4) == ".bin";
  std::ofstream out(file, binary ? std::ios::binary : std::ios::out);
  if (!out) throw ParameterError("cannot open " + file + " for writing");
  if (binary)
    write_path_binary(path, out);
  else
    write_path_csv(path, out);
}

Path load_path(const std::string& file) {
  const bool binary = file.size() > 4 && file.substr(file.size() - 4) == ".bin";
  std::ifstream in(file, binary ? std::ios::binary : std::ios::in);
  if (!in) throw ParameterError("cannot open " + file);
  return binary ? read_path_binary(in) : read_path_csv(in);
}

}  // namespace mvldp
