#pragma once

#include <string>

namespace mvldp {

/// Shortest decimal form of x rounded to `significant` digits ("nan", "inf", "-inf" for non-finite).
std::string format_number(double x, int significant = 17);

/// Parses a full decimal string; throws ParameterError otherwise.
double parse_number(const std::string& s);

/// x rounded to `significant` decimal digits (round-trips through text).
double round_significant(double x, int significant);

}  // namespace mvldp
