#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace viewmetric {

/// Dense matrices hold one sample per row.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Invalid configuration or malformed input. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values encountered during training or evaluation. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal string that parses back to exactly `value`.
std::string format_real(double value);

/// Parses a real written by format_real (or any strtod-compatible literal).
/// Throws ConfigError on trailing garbage or an empty field.
double parse_real(std::string_view text);

long long parse_integer(std::string_view text);

std::vector<std::string> split(std::string_view text, char delimiter);

std::string_view trim(std::string_view text);

/// Order-sensitive 64-bit hash combination (splitmix64 finalizer).
inline std::uint64_t mix_hash(std::uint64_t seed, std::uint64_t value) {
  std::uint64_t z = seed ^ (value + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace viewmetric
