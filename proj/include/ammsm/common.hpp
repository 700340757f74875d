#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ammsm {

using Index = std::int64_t;
using Shape = std::vector<Index>;

// Error taxonomy. Contract violations are caller bugs (bad shapes, labels out
// of range); numeric errors are non-finite values surfacing mid-computation;
// config errors are rejected user input; format errors are malformed files.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractViolation : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};

inline Index numel_of(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

inline void require_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace ammsm
