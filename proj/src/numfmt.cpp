#include "mvldp/numfmt.hpp"

#include <charconv>
#include <cmath>
#include <system_error>

#include "mvldp/errors.hpp"

namespace mvldp {

std::string format_number(double x, int significant) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::to_chars_result r{};
  if (significant >= 17) {
    r = std::to_chars(buf, buf + sizeof buf, x);
  } else {
    const double y = round_significant(x, significant);
    r = std::to_chars(buf, buf + sizeof buf, y);
  }
  return std::string(buf, r.ptr);
}

double parse_number(const std::string& s) {
  if (s == "inf" || s == "+inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  if (s == "nan") return NAN;
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  if (b != e && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ParameterError("not a number: '" + s + "'");
  return v;
}

double round_significant(double x, int significant) {
  if (!std::isfinite(x) || x == 0.0 || significant >= 17) return x;
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::scientific, significant - 1);
  double y = 0.0;
  std::from_chars(buf, r.ptr, y);
  return y;
}

}  // namespace mvldp
