#include "qbic/odmr.hpp"

#include "qbic/common.hpp"
#include "qbic/lsq.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace qbic::odmr {
namespace {

double lorentzian(double f, double x0, double fwhm) {
  const double h = 0.5 * fwhm;
  const double d = f - x0;
  return h * h / (d * d + h * h);
}

// Fit problem in normalized units: u = (f - mid) / span, y = signal / scale.
struct Normalized {
  double mid = 0.0;
  double span = 1.0;
  double scale = 1.0;
  std::vector<double> u;
  std::vector<double> y;
};

Normalized normalize(const OdmrSpectrum& s) {
  Normalized n;
  n.mid = 0.5 * (s.frequencies.front() + s.frequencies.back());
  n.span = s.frequencies.back() - s.frequencies.front();
  n.scale = compensated_sum(s.signal) / static_cast<double>(s.signal.size());
  n.u.reserve(s.frequencies.size());
  n.y.reserve(s.signal.size());
  for (double f : s.frequencies) n.u.push_back((f - n.mid) / n.span);
  for (double v : s.signal) n.y.push_back(v / n.scale);
  return n;
}

// Full parameter vector in normalized units: c, d, w, contrast, baseline.
using Params = std::array<double, 5>;

Params to_normalized(const DipModel& m, const Normalized& n) {
  return {(m.center - n.mid) / n.span, m.splitting / n.span, m.linewidth / n.span, m.contrast,
          m.baseline / n.scale};
}

DipModel from_normalized(const Params& p, const Normalized& n) {
  DipModel m;
  m.center = n.mid + p[0] * n.span;
  m.splitting = std::abs(p[1]) * n.span;
  m.linewidth = p[2] * n.span;
  m.contrast = p[3];
  m.baseline = p[4] * n.scale;
  return m;
}

struct Layout {
  bool single_dip;
  Eigen::Index size() const { return single_dip ? 4 : 5; }

  Params expand(const Eigen::VectorXd& x) const {
    if (single_dip) return {x[0], 0.0, x[1], x[2], x[3]};
    return {x[0], x[1], x[2], x[3], x[4]};
  }

  Eigen::VectorXd pack(const Params& p) const {
    Eigen::VectorXd x(size());
    if (single_dip) {
      x << p[0], p[2], p[3], p[4];
    } else {
      x << p[0], p[1], p[2], p[3], p[4];
    }
    return x;
  }
};

struct Seed {
  Params params{};
  double ssr = std::numeric_limits<double>::infinity();
  bool found = false;
};

// Coarse grid over (center, splitting, linewidth); baseline and depth solved
// linearly for each shape. Returns the best seed per splitting, best first.
std::vector<Seed> grid_seeds(const Normalized& n, bool single_dip) {
  const double u_lo = n.u.front(), u_hi = n.u.back();
  // The splitting derivative vanishes at zero, so doublet seeds stay off it.
  std::vector<double> splittings;
  if (single_dip) {
    splittings.push_back(0.0);
  } else {
    splittings.push_back(0.01);
    for (int i = 1; i <= 10; ++i) splittings.push_back(0.04 * i);
  }
  const std::array<double, 5> widths{0.02, 0.04, 0.08, 0.16, 0.32};
  const int centers = 61;
  const auto m = static_cast<double>(n.u.size());

  std::vector<Seed> best(splittings.size());
  std::vector<double> g(n.u.size());
  for (int ci = 0; ci < centers; ++ci) {
    const double c = u_lo + (u_hi - u_lo) * (ci + 0.5) / centers;
    for (std::size_t di = 0; di < splittings.size(); ++di) {
      const double d = splittings[di];
      for (double w : widths) {
        double sg = 0.0, sgg = 0.0, sy = 0.0, syg = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < n.u.size(); ++i) {
          g[i] = 0.5 * (lorentzian(n.u[i], c - 0.5 * d, w) + lorentzian(n.u[i], c + 0.5 * d, w));
          sg += g[i];
          sgg += g[i] * g[i];
          sy += n.y[i];
          syg += n.y[i] * g[i];
          syy += n.y[i] * n.y[i];
        }
        // y ~ b + q g, q = -b * contrast
        const double det = m * sgg - sg * sg;
        if (!(det > 0.0)) continue;
        const double b = (sy * sgg - sg * syg) / det;
        const double q = (m * syg - sg * sy) / det;
        if (!(b > 0.0) || !(q < 0.0)) continue;
        const double contrast = -q / b;
        if (contrast >= 1.0) continue;
        const double ssr = syy - b * sy - q * syg;
        if (ssr < best[di].ssr) {
          best[di].ssr = ssr;
          best[di].params = {c, d, w, contrast, b};
          best[di].found = true;
        }
      }
    }
  }
  std::erase_if(best, [](const Seed& sd) { return !sd.found; });
  std::stable_sort(best.begin(), best.end(),
                   [](const Seed& a, const Seed& b) { return a.ssr < b.ssr; });
  return best;
}

std::string describe(const DipModel& m) {
  std::ostringstream os;
  os.precision(10);
  os << "center=" << m.center << " splitting=" << m.splitting << " linewidth=" << m.linewidth
     << " contrast=" << m.contrast << " baseline=" << m.baseline;
  return os.str();
}

}  // namespace

void DipModel::validate() const {
  require(std::isfinite(center), ErrorKind::InvalidInput, "dip model: center must be finite");
  require(std::isfinite(linewidth) && linewidth > 0.0, ErrorKind::InvalidInput,
          "dip model: linewidth must be > 0");
  require(contrast > 0.0 && contrast < 1.0, ErrorKind::InvalidInput,
          "dip model: contrast must be in (0, 1)");
  require(std::isfinite(splitting) && splitting >= 0.0, ErrorKind::InvalidInput,
          "dip model: splitting must be >= 0");
  require(std::isfinite(baseline) && baseline > 0.0, ErrorKind::InvalidInput,
          "dip model: baseline must be > 0");
}

double DipModel::signal(double frequency) const {
  const double dips = lorentzian(frequency, center - 0.5 * splitting, linewidth) +
                      lorentzian(frequency, center + 0.5 * splitting, linewidth);
  return baseline * (1.0 - 0.5 * contrast * dips);
}

void OdmrSpectrum::validate() const {
  require(frequencies.size() == signal.size(), ErrorKind::InvalidInput,
          "spectrum: frequency and signal lengths differ");
  for (std::size_t i = 1; i < frequencies.size(); ++i) {
    require(frequencies[i] > frequencies[i - 1], ErrorKind::InvalidInput,
            "spectrum: frequencies must be strictly increasing");
  }
  for (double v : signal) {
    require(std::isfinite(v) && v > 0.0, ErrorKind::InvalidInput, "spectrum: signal must be > 0");
  }
  require(shots_per_point > 0.0, ErrorKind::InvalidInput, "spectrum: shots_per_point must be > 0");
}

void ThermometryCoefficient::validate() const {
  require(std::isfinite(dD_dT) && dD_dT != 0.0, ErrorKind::InvalidInput,
          "thermometry: dD_dT must be nonzero");
}

std::vector<double> linear_grid(double start, double stop, int points) {
  require(points >= 2 && stop > start, ErrorKind::InvalidInput,
          "grid: need at least two points and stop > start");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) out.push_back(start + (stop - start) * i / (points - 1));
  return out;
}

std::vector<double> default_frequencies() { return linear_grid(2.840e9, 2.900e9, 121); }

OdmrSpectrum synthesize_spectrum(const DipModel& model, std::span<const double> frequencies,
                                 double shots_per_point, std::uint64_t seed) {
  model.validate();
  require(frequencies.size() >= 5, ErrorKind::InvalidInput, "synthesize: need at least 5 frequencies");
  require(shots_per_point > 0.0, ErrorKind::InvalidInput, "synthesize: shots_per_point must be > 0");
  OdmrSpectrum spectrum;
  spectrum.frequencies.assign(frequencies.begin(), frequencies.end());
  spectrum.shots_per_point = shots_per_point;
  spectrum.signal.reserve(frequencies.size());
  const double sigma = std::isinf(shots_per_point) ? 0.0 : model.baseline / std::sqrt(shots_per_point);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (double f : frequencies) {
    double v = model.signal(f);
    if (sigma > 0.0) v += sigma * noise(rng);
    spectrum.signal.push_back(std::max(v, 1e-12 * model.baseline));
  }
  spectrum.validate();
  return spectrum;
}

double SpectrumFit::center_sigma() const { return std::sqrt(std::max(covariance(0, 0), 0.0)); }

namespace {

lsq::Result run_fit(const Normalized& n, const Layout& layout, const Params& start, int max_iterations) {
  lsq::Problem problem;
  problem.observations = static_cast<Eigen::Index>(n.u.size());
  problem.residuals = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    const Params p = layout.expand(x);
    for (std::size_t i = 0; i < n.u.size(); ++i) {
      const double dips = lorentzian(n.u[i], p[0] - 0.5 * p[1], p[2]) +
                          lorentzian(n.u[i], p[0] + 0.5 * p[1], p[2]);
      r[static_cast<Eigen::Index>(i)] = p[4] * (1.0 - 0.5 * p[3] * dips) - n.y[i];
    }
  };
  problem.jacobian = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& jac) {
    const Params p = layout.expand(x);
    const double h = 0.5 * p[2];
    const double h2 = h * h;
    for (std::size_t i = 0; i < n.u.size(); ++i) {
      const double d1 = n.u[i] - (p[0] - 0.5 * p[1]);
      const double d2 = n.u[i] - (p[0] + 0.5 * p[1]);
      const double q1 = d1 * d1 + h2, q2 = d2 * d2 + h2;
      const double l1 = h2 / q1, l2 = h2 / q2;
      // dL/dx0 and dL/dw for each line.
      const double lx1 = 2.0 * h2 * d1 / (q1 * q1), lx2 = 2.0 * h2 * d2 / (q2 * q2);
      const double lw1 = h * d1 * d1 / (q1 * q1), lw2 = h * d2 * d2 / (q2 * q2);
      const double k = -0.5 * p[4] * p[3];
      const auto row = static_cast<Eigen::Index>(i);
      Eigen::Index col = 0;
      jac(row, col++) = k * (lx1 + lx2);
      if (!layout.single_dip) jac(row, col++) = k * 0.5 * (lx2 - lx1);
      jac(row, col++) = k * (lw1 + lw2);
      jac(row, col++) = -0.5 * p[4] * (l1 + l2);
      jac(row, col++) = 1.0 - 0.5 * p[3] * (l1 + l2);
    }
  };
  problem.feasible = [&](const Eigen::VectorXd& x) {
    const Params p = layout.expand(x);
    return p[2] > 0.0 && p[3] > 0.0 && p[3] < 1.0 && p[4] > 0.0;
  };
  lsq::Options lm;
  lm.max_iterations = max_iterations;
  return lsq::levenberg_marquardt(problem, layout.pack(start), lm);
}

SpectrumFit to_physical(const lsq::Result& result, const Layout& layout, const Normalized& n) {
  const Params best = layout.expand(result.params);
  const std::array<double, 5> unit{n.span, n.span * (best[1] < 0.0 ? -1.0 : 1.0), n.span, 1.0, n.scale};
  std::array<int, 5> index{};
  if (layout.single_dip) {
    index = {0, -1, 1, 2, 3};
  } else {
    index = {0, 1, 2, 3, 4};
  }
  SpectrumFit fit;
  fit.model = from_normalized(best, n);
  fit.covariance.setZero();
  for (int a = 0; a < 5; ++a) {
    for (int b = 0; b < 5; ++b) {
      if (index[a] < 0 || index[b] < 0) continue;
      fit.covariance(a, b) = result.covariance(index[a], index[b]) * unit[a] * unit[b];
    }
  }
  fit.rms_residual = result.rms * n.scale;
  fit.iterations = result.iterations;
  return fit;
}

// A doublet whose splitting shrank far below its linewidth is not resolved.
bool collapsed(const lsq::Result& result, const Layout& layout) {
  if (layout.single_dip) return false;
  const Params p = layout.expand(result.params);
  return std::abs(p[1]) < 1e-3 * p[2];
}

constexpr std::size_t kDoubletStarts = 4;

}  // namespace

SpectrumFit fit_spectrum(const OdmrSpectrum& spectrum, const std::optional<DipModel>& initial_guess,
                         const FitOptions& options) {
  spectrum.validate();
  const Layout layout{options.single_dip};
  require(static_cast<Eigen::Index>(spectrum.frequencies.size()) > layout.size(),
          ErrorKind::FitFailure, "odmr fit: fewer points than free parameters");
  const Normalized n = normalize(spectrum);

  std::vector<Params> starts;
  if (initial_guess) {
    initial_guess->validate();
    Params start = to_normalized(*initial_guess, n);
    if (options.single_dip) start[1] = 0.0;
    starts.push_back(start);
  } else {
    const auto seeds = grid_seeds(n, options.single_dip);
    require(!seeds.empty(), ErrorKind::FitFailure,
            "odmr fit: no dip found in spectrum (flat or inverted signal)");
    for (std::size_t i = 0; i < seeds.size() && i < kDoubletStarts; ++i) starts.push_back(seeds[i].params);
  }

  std::optional<lsq::Result> chosen;
  std::optional<lsq::Result> fallback;
  for (const Params& start : starts) {
    auto result = run_fit(n, layout, start, options.max_iterations);
    if (!fallback || result.sum_squares < fallback->sum_squares) fallback = result;
    if (!result.converged || !result.covariance_valid || collapsed(result, layout)) continue;
    if (!chosen || result.sum_squares < chosen->sum_squares) chosen = std::move(result);
  }

  if (!chosen && !layout.single_dip && fallback->converged && collapsed(*fallback, layout)) {
    // Unresolved doublet: report it as one dip.
    FitOptions single = options;
    single.single_dip = true;
    return fit_spectrum(spectrum, std::nullopt, single);
  }

  if (!chosen) {
    const DipModel model = from_normalized(layout.expand(fallback->params), n);
    require(fallback->converged, ErrorKind::FitFailure,
            "odmr fit: no convergence after " + std::to_string(fallback->iterations) +
                " iterations; best " + describe(model) +
                " rms=" + std::to_string(fallback->rms * n.scale));
    fail(ErrorKind::FitFailure,
         "odmr fit: singular information matrix (dip not constrained); best " + describe(model));
  }
  return to_physical(*chosen, layout, n);
}

TemperatureShift temperature_shift_from_spectra(const OdmrSpectrum& spec_a, const OdmrSpectrum& spec_b,
                                                const ThermometryCoefficient& coeff,
                                                const FitOptions& options) {
  coeff.validate();
  TemperatureShift shift;
  shift.fit_a = fit_spectrum(spec_a, std::nullopt, options);
  shift.fit_b = fit_spectrum(spec_b, std::nullopt, options);
  shift.delta_t = (shift.fit_b.model.center - shift.fit_a.model.center) / coeff.dD_dT;
  shift.uncertainty = std::hypot(shift.fit_a.center_sigma(), shift.fit_b.center_sigma()) /
                      std::abs(coeff.dD_dT);
  return shift;
}

std::vector<PrecisionPoint> precision_scaling(const DipModel& model, std::span<const double> frequencies,
                                              std::span<const double> shots_list, int repeats,
                                              std::uint64_t seed) {
  model.validate();
  require(!shots_list.empty(), ErrorKind::InvalidInput, "precision scaling: empty shot list");
  require(repeats >= 2, ErrorKind::InvalidInput, "precision scaling: need at least two repeats");
  std::vector<PrecisionPoint> out;
  for (std::size_t s = 0; s < shots_list.size(); ++s) {
    std::vector<double> centers;
    for (int r = 0; r < repeats; ++r) {
      const auto stream = static_cast<std::uint64_t>(s) * 1000003ULL + static_cast<std::uint64_t>(r);
      const auto spectrum = synthesize_spectrum(model, frequencies, shots_list[s], derive_seed(seed, stream));
      try {
        centers.push_back(fit_spectrum(spectrum, model).model.center);
      } catch (const Error&) {
        // Counted through successful_fits.
      }
    }
    PrecisionPoint point;
    point.shots = shots_list[s];
    point.successful_fits = static_cast<int>(centers.size());
    if (centers.size() >= 2) {
      const double mean = compensated_sum(centers) / static_cast<double>(centers.size());
      CompensatedSum ss;
      for (double c : centers) ss.add((c - mean) * (c - mean));
      point.center_std = std::sqrt(ss.value() / static_cast<double>(centers.size() - 1));
    } else {
      point.center_std = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(point);
  }
  return out;
}

}  // namespace qbic::odmr
