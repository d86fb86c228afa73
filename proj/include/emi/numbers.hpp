#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace emi {

// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

// Fixed-precision formatting for plot coordinates and similar output.
std::string format_fixed(double value, int digits);

// Parses a decimal number with an optional SI suffix (k, M, m, u, n, p).
// Suffixes are case-sensitive; plain and scientific notation also accepted.
std::optional<double> parse_si_number(std::string_view text);

} // namespace emi
