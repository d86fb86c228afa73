#include "emi/numbers.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace emi {

std::string format_double(double value) {
    std::array<char, 40> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), res.ptr);
}

std::string format_fixed(double value, int digits) {
    std::array<char, 64> buf{};
    std::snprintf(buf.data(), buf.size(), "%.*f", digits, value);
    return std::string(buf.data());
}

std::optional<double> parse_si_number(std::string_view text) {
    if (text.empty())
        return std::nullopt;
    double mantissa = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), mantissa);
    if (res.ec != std::errc{})
        return std::nullopt;
    std::string_view rest(res.ptr, static_cast<size_t>(text.data() + text.size() - res.ptr));
    if (rest.empty())
        return mantissa;
    if (rest.size() > 1)
        return std::nullopt;
    const char* exponent = nullptr;
    switch (rest[0]) {
    case 'k': exponent = "e3"; break;
    case 'M': exponent = "e6"; break;
    case 'm': exponent = "e-3"; break;
    case 'u': exponent = "e-6"; break;
    case 'n': exponent = "e-9"; break;
    case 'p': exponent = "e-12"; break;
    default: return std::nullopt;
    }
    // Splice the suffix in as a decimal exponent so "2.5u" parses to exactly 2.5e-6.
    std::string spliced(text.substr(0, text.size() - 1));
    spliced += exponent;
    double value = 0;
    auto res2 = std::from_chars(spliced.data(), spliced.data() + spliced.size(), value);
    if (res2.ec != std::errc{} || res2.ptr != spliced.data() + spliced.size())
        return std::nullopt;
    return value;
}

} // namespace emi
