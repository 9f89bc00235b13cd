#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qbic {

/// Failure categories shared by every module. The CLI maps each one to a
/// distinct exit code.
enum class ErrorKind {
  InvalidInput,
  Domain,
  FitFailure,
  Singularity,
  NoPairs,
  EmptyMask,
  Parse,
  Io,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

/// Neumaier-compensated summation. Result depends only on the input order.
class CompensatedSum {
 public:
  void add(double value) noexcept;
  double value() const noexcept { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

double compensated_sum(std::span<const double> values) noexcept;

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares y = intercept + slope * x. Needs two distinct x.
LineFit fit_line(std::span<const double> x, std::span<const double> y);

/// Least squares y = slope * x. R^2 is computed against the centered total
/// sum of squares; returns 1 when every point is exact.
LineFit fit_line_through_origin(std::span<const double> x, std::span<const double> y);

/// SplitMix64 mix of (base, stream); independent seeds for parallel or
/// repeated simulations from one user seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

}  // namespace qbic
