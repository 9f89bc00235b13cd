#pragma once

// ODMR spectra: forward model, nonlinear fitting and thermometry.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace qbic::odmr {

/// Equal-depth Lorentzian doublet centred on `center`. Each dip carries half
/// the contrast so that splitting = 0 collapses to a single dip of depth
/// `contrast`:
///   s(f) = baseline * (1 - contrast/2 * [L(f; c - d/2) + L(f; c + d/2)]),
///   L(f; x, w) = (w/2)^2 / ((f - x)^2 + (w/2)^2).
struct DipModel {
  double center = 2.870e9;   // Hz
  double splitting = 12e6;   // Hz
  double linewidth = 6e6;    // Hz, FWHM
  double contrast = 0.05;
  double baseline = 1.0;

  void validate() const;
  double signal(double frequency) const;
};

struct OdmrSpectrum {
  std::vector<double> frequencies;  // Hz, strictly increasing
  std::vector<double> signal;
  /// Photon shots per point; +inf marks noiseless data.
  double shots_per_point = 1e4;

  void validate() const;
};

/// Literature value, not measured by this toolkit: dD/dT of the NV zero-field splitting.
struct ThermometryCoefficient {
  double dD_dT = -74e3;  // Hz/K

  void validate() const;
};

std::vector<double> linear_grid(double start, double stop, int points);

/// Default sweep: 2.87 GHz +/- 30 MHz in 0.5 MHz steps.
std::vector<double> default_frequencies();

/// Adds Gaussian shot noise with sigma = baseline / sqrt(shots_per_point).
/// Samples are floored at 1e-12 * baseline so the signal stays positive.
OdmrSpectrum synthesize_spectrum(const DipModel& model, std::span<const double> frequencies,
                                 double shots_per_point, std::uint64_t seed);

struct FitOptions {
  /// Fix splitting at zero and fit a single Lorentzian.
  bool single_dip = false;
  int max_iterations = 500;
};

/// Parameter order in `covariance`: center, splitting, linewidth, contrast,
/// baseline (Hz, Hz, Hz, 1, signal units). A single-dip fit reports zero
/// variance for splitting.
struct SpectrumFit {
  DipModel model;
  Eigen::Matrix<double, 5, 5> covariance;
  double rms_residual = 0.0;
  int iterations = 0;

  double center_sigma() const;
};

/// Without an initial guess a coarse grid over center, splitting and
/// linewidth seeds several starts and the lowest-cost fit wins. A doublet whose
/// splitting collapses far below its linewidth is refitted as a single dip.
/// Flat or unfittable spectra raise FitFailure.
SpectrumFit fit_spectrum(const OdmrSpectrum& spectrum,
                         const std::optional<DipModel>& initial_guess = std::nullopt,
                         const FitOptions& options = {});

struct TemperatureShift {
  double delta_t = 0.0;      // K
  double uncertainty = 0.0;  // K, one standard deviation
  SpectrumFit fit_a;
  SpectrumFit fit_b;
};

/// Delta T = (center_b - center_a) / dD_dT with independent fit errors added
/// in quadrature.
TemperatureShift temperature_shift_from_spectra(const OdmrSpectrum& spec_a,
                                                const OdmrSpectrum& spec_b,
                                                const ThermometryCoefficient& coeff,
                                                const FitOptions& options = {});

struct PrecisionPoint {
  double shots = 0.0;
  double center_std = 0.0;  // Hz
  int successful_fits = 0;
};

/// Empirical center scatter over `repeats` syntheses per shot count. Fits
/// start from the true model; failed fits are counted out.
std::vector<PrecisionPoint> precision_scaling(const DipModel& model,
                                              std::span<const double> frequencies,
                                              std::span<const double> shots_list, int repeats,
                                              std::uint64_t seed);

}  // namespace qbic::odmr
