#pragma once

// Vesicle trajectories: time-averaged mean squared displacement and ensemble
// viability classification.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace qbic::tracking {

inline constexpr double kDefaultFramePeriod = 1.0 / 0.68;  // s
inline constexpr double kTimeTolerance = 1e-6;              // s

struct TrackPoint {
  double t = 0.0;  // s
  double x = 0.0;  // um
  double y = 0.0;  // um
};

/// Points sampled on a uniform frame grid. Missing frames are not allowed
/// inside a trajectory; use split_at_gaps on raw tracks.
struct Trajectory {
  std::vector<TrackPoint> points;
  double frame_period = kDefaultFramePeriod;

  void validate() const;
  double span() const { return points.back().t - points.front().t; }
};

/// Splits wherever consecutive times differ from frame_period by more than
/// kTimeTolerance. Pieces with fewer than two points are dropped.
std::vector<Trajectory> split_at_gaps(const Trajectory& raw);

/// Lag in frames for `tau`. Throws InvalidInput unless tau is a non-negative
/// integer multiple of frame_period within kTimeTolerance.
std::size_t lag_frames(double tau, double frame_period);

struct MsdValue {
  double msd = 0.0;        // um^2
  std::size_t count = 0;   // overlapping pairs averaged
};

/// Overlapping-pair estimator <|r(t + tau) - r(t)|^2>. Throws NoPairs when
/// tau exceeds the trajectory span.
MsdValue msd_with_count(const Trajectory& traj, double tau);
double msd(const Trajectory& traj, double tau);

struct MsdCurve {
  std::vector<double> taus;
  std::vector<double> msd_values;
  std::vector<std::size_t> counts;
};

/// Every multiple of frame_period in (0, max_tau].
MsdCurve msd_curve(const Trajectory& traj, double max_tau);

/// Pools pairs of all trajectories: each lag's value is the pair-weighted mean
/// and its count the total number of pairs. Lags without pairs are omitted.
/// All trajectories must share one frame period.
MsdCurve ensemble_msd_curve(std::span<const Trajectory> trajs, double max_tau, int jobs = 1);

enum class Verdict { Healthy, Impaired, BelowFloor };

std::string to_string(Verdict verdict);

struct ViabilityOptions {
  double tau = 10.0;            // s, snapped to the nearest frame multiple
  double window = 600.0;        // s
  double noise_floor = 0.0;     // um^2
  double impaired_fraction = 0.5;
};

struct ViabilityWindow {
  double start = 0.0;
  double end = 0.0;
  std::size_t trajectories = 0;
  double mean = 0.0;
  double std_dev = 0.0;          // sample standard deviation across trajectories
  bool single_sample = false;    // one contributing trajectory; std_dev is 0
  bool skipped = false;          // no trajectory has a pair at tau in the window
  Verdict verdict = Verdict::Healthy;
};

struct ViabilityReport {
  double tau_effective = 0.0;   // s
  double noise_floor = 0.0;     // um^2
  double baseline_mean = 0.0;   // um^2, first non-skipped window
  std::vector<ViabilityWindow> windows;
};

/// Windows tile [earliest time, latest time] from the earliest sample. Each
/// trajectory contributes the MSD of its points inside the window. Verdicts:
/// below-floor when mean <= noise_floor, impaired when mean <
/// impaired_fraction * baseline_mean, healthy otherwise. Skipped windows carry
/// no verdict meaning.
ViabilityReport ensemble_viability(std::span<const Trajectory> trajs, const ViabilityOptions& options);

/// Diffusion coefficient switching at given times: D(t) = values[i] for
/// t >= starts[i]. starts[0] must be 0.
struct DiffusionSchedule {
  std::vector<double> starts;  // s
  std::vector<double> values;  // um^2/s

  double at(double t) const;
};

/// Planar random walk with per-axis step variance 2 D(t) dt, starting at the
/// origin at t = 0.
Trajectory simulate_diffusion(const DiffusionSchedule& schedule, std::size_t frames,
                              double frame_period, std::uint64_t seed);

}  // namespace qbic::tracking
