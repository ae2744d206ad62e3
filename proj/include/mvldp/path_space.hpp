#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mvldp {

/// Continuous path on [0, T] sampled at t_k = k T / n, k = 0..n, values in R^d.
class Path {
 public:
  Path() = default;
  /// Zero path.
  Path(double horizon, std::size_t grid_size, std::size_t dim);
  /// Takes (n+1)*d row-major values; throws on size mismatch or non-finite entries.
  Path(double horizon, std::size_t grid_size, std::size_t dim, std::vector<double> values);

  static Path from_function(double horizon, std::size_t grid_size, std::size_t dim,
                            const std::function<void(double, std::span<double>)>& f);

  double horizon() const noexcept { return horizon_; }
  std::size_t grid_size() const noexcept { return n_; }
  std::size_t dim() const noexcept { return d_; }
  double step() const noexcept { return horizon_ / static_cast<double>(n_); }
  double time(std::size_t k) const noexcept { return horizon_ * static_cast<double>(k) / static_cast<double>(n_); }

  std::span<const double> at(std::size_t k) const noexcept { return {values_.data() + k * d_, d_}; }
  std::span<double> at(std::size_t k) noexcept { return {values_.data() + k * d_, d_}; }
  double operator()(std::size_t k, std::size_t j) const noexcept { return values_[k * d_ + j]; }
  double& operator()(std::size_t k, std::size_t j) noexcept { return values_[k * d_ + j]; }

  const std::vector<double>& values() const noexcept { return values_; }

  /// Grid node closest to t; throws DomainError if t is outside [0, T].
  std::size_t nearest_node(double t) const;

  /// Throws NumericalError at the first non-finite entry.
  void validate() const;

 private:
  double horizon_ = 1.0;
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::vector<double> values_;
};

double sup_norm(const Path& path);

/// Exact discrete Hölder seminorm: max over grid pairs of |f(t)-f(s)| / |t-s|^alpha.
double holder_norm(const Path& path, double alpha);

/// max_i |f(t_{i+l}) - f(t_i)| for every lag l = 0..last_node, over nodes 0..last_node.
/// One O(n^2) pass serves Hölder norms for any number of exponents.
std::vector<double> increment_profile(const Path& path, std::size_t last_node);
std::vector<double> increment_profile(const Path& path);

/// Hölder seminorm from an increment profile of a path with grid step dt.
double holder_from_profile(std::span<const double> profile, double dt, double alpha);

struct RestrictedNorms {
  double sup = 0.0;
  double holder = 0.0;
};

/// Norms over [0, t], t snapped to the nearest node.
RestrictedNorms restricted_norms(const Path& path, double t, double alpha);

struct SchauderCoefficients {
  std::size_t levels = 0;  ///< P; levels 0..P
  std::size_t dim = 0;
  double horizon = 1.0;
  /// coeffs[j][2^p - 1 + (m - 1)] = W_pm of coordinate j.
  std::vector<std::vector<double>> coeffs;
  /// |f(T) - f(0)| per coordinate; carries the linear component the hats miss.
  std::vector<double> endpoint_increment;

  double at(std::size_t j, std::size_t p, std::size_t m) const { return coeffs[j][(std::size_t{1} << p) - 1 + (m - 1)]; }
};

SchauderCoefficients schauder_decompose(const Path& path, std::size_t levels);

/// max( |f(T)-f(0)|, sup_{p,m} 2^{p(alpha-1/2)} W_pm ) * T^{-alpha}.
double schauder_holder_estimate(const SchauderCoefficients& coeffs, double alpha);

/// h(t) = int_0^t hdot(s) ds with hdot constant on each grid cell.
class CameronMartinPath {
 public:
  CameronMartinPath() = default;
  CameronMartinPath(double horizon, std::size_t grid_size, std::size_t dim);
  CameronMartinPath(double horizon, std::size_t grid_size, std::size_t dim, std::vector<double> derivative);

  double horizon() const noexcept { return horizon_; }
  std::size_t grid_size() const noexcept { return n_; }
  std::size_t dim() const noexcept { return d_; }
  double step() const noexcept { return horizon_ / static_cast<double>(n_); }

  std::span<const double> rate(std::size_t k) const noexcept { return {derivative_.data() + k * d_, d_}; }
  std::span<double> rate(std::size_t k) noexcept { return {derivative_.data() + k * d_, d_}; }
  const std::vector<double>& derivative() const noexcept { return derivative_; }
  std::vector<double>& derivative() noexcept { return derivative_; }

  /// ||hdot||_2^2 = sum_k |hdot_k|^2 T/n.
  double energy() const noexcept;

 private:
  double horizon_ = 1.0;
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::vector<double> derivative_;
};

Path cm_to_path(const CameronMartinPath& h);

// Serialization. CSV columns: t,x_1..x_d. Binary: double T, uint64 n, uint64 d, row-major doubles.
void write_path_csv(const Path& path, std::ostream& out, int precision = 17);
Path read_path_csv(std::istream& in);
void write_path_binary(const Path& path, std::ostream& out);
Path read_path_binary(std::istream& in);
void save_path(const Path& path, const std::string& file);
Path load_path(const std::string& file);

}  // namespace mvldp
