#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

#include "qafel/core.hpp"

namespace qafel {

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Accepts plain decimals and simple fractions such as "1/8124".
inline double parse_double(const std::string& text) {
  const auto slash = text.find('/');
  if (slash != std::string::npos)
    return parse_double(text.substr(0, slash)) /
           parse_double(text.substr(slash + 1));
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  if (first < last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw ConfigError("not a number: '" + text + "'");
  return v;
}

}  // namespace qafel
