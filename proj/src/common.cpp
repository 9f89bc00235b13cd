#include "qbic/common.hpp"

#include <cmath>

namespace qbic {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid_input";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::FitFailure: return "fit_failure";
    case ErrorKind::Singularity: return "singularity";
    case ErrorKind::NoPairs: return "no_pairs";
    case ErrorKind::EmptyMask: return "empty_mask";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

void CompensatedSum::add(double value) noexcept {
  const double t = sum_ + value;
  if (std::abs(sum_) >= std::abs(value)) {
    compensation_ += (sum_ - t) + value;
  } else {
    compensation_ += (value - t) + sum_;
  }
  sum_ = t;
}

double compensated_sum(std::span<const double> values) noexcept {
  CompensatedSum acc;
  for (double v : values) acc.add(v);
  return acc.value();
}

namespace {

double mean_of(std::span<const double> v) {
  return compensated_sum(v) / static_cast<double>(v.size());
}

double centered_total(std::span<const double> y) {
  const double my = mean_of(y);
  CompensatedSum ss;
  for (double v : y) ss.add((v - my) * (v - my));
  return ss.value();
}

double r_squared_from(double ss_res, double ss_tot) {
  if (ss_tot <= 0.0) return ss_res <= 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

}  // namespace

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::InvalidInput, "fit_line: size mismatch");
  require(x.size() >= 2, ErrorKind::FitFailure, "fit_line: need at least two points");
  const double mx = mean_of(x);
  const double my = mean_of(y);
  CompensatedSum sxx, sxy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx.add((x[i] - mx) * (x[i] - mx));
    sxy.add((x[i] - mx) * (y[i] - my));
  }
  require(sxx.value() > 0.0, ErrorKind::FitFailure, "fit_line: all abscissae equal");
  LineFit fit;
  fit.slope = sxy.value() / sxx.value();
  fit.intercept = my - fit.slope * mx;
  CompensatedSum ss_res;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    ss_res.add(r * r);
  }
  fit.r_squared = r_squared_from(ss_res.value(), centered_total(y));
  return fit;
}

LineFit fit_line_through_origin(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::InvalidInput, "fit_line_through_origin: size mismatch");
  require(!x.empty(), ErrorKind::FitFailure, "fit_line_through_origin: no points");
  CompensatedSum sxx, sxy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx.add(x[i] * x[i]);
    sxy.add(x[i] * y[i]);
  }
  require(sxx.value() > 0.0, ErrorKind::FitFailure, "fit_line_through_origin: all abscissae zero");
  LineFit fit;
  fit.slope = sxy.value() / sxx.value();
  CompensatedSum ss_res;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - fit.slope * x[i];
    ss_res.add(r * r);
  }
  fit.r_squared = r_squared_from(ss_res.value(), centered_total(y));
  return fit;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace qbic
