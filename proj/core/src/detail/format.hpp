#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace slope::detail {

// Shortest decimal form that round-trips to the same double; locale free,
// so emitted text is byte-stable across runs and thread counts.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[48];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace slope::detail
