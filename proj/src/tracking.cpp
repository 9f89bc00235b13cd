#include "qbic/tracking.hpp"

#include "qbic/common.hpp"
#include "qbic/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace qbic::tracking {
namespace {

void require_period(double frame_period) {
  require(std::isfinite(frame_period) && frame_period > 0.0, ErrorKind::InvalidInput,
          "trajectory: frame_period must be > 0");
}

bool uniform_step(double dt, double frame_period) {
  return std::abs(dt - frame_period) <= kTimeTolerance;
}

// Sum of squared displacements over lag k, and number of pairs.
MsdValue lag_sums(std::span<const TrackPoint> pts, std::size_t k) {
  MsdValue out;
  if (k == 0 || pts.size() <= k) return out;
  CompensatedSum acc;
  for (std::size_t i = 0; i + k < pts.size(); ++i) {
    const double dx = pts[i + k].x - pts[i].x;
    const double dy = pts[i + k].y - pts[i].y;
    acc.add(dx * dx + dy * dy);
  }
  out.count = pts.size() - k;
  out.msd = acc.value();
  return out;
}

}  // namespace

void Trajectory::validate() const {
  require_period(frame_period);
  require(points.size() >= 2, ErrorKind::InvalidInput, "trajectory: need at least two points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    require(std::isfinite(p.t) && std::isfinite(p.x) && std::isfinite(p.y), ErrorKind::InvalidInput,
            "trajectory: non-finite point at index " + std::to_string(i));
    if (i == 0) continue;
    require(p.t > points[i - 1].t, ErrorKind::InvalidInput,
            "trajectory: times must be strictly increasing (index " + std::to_string(i) + ")");
    require(uniform_step(p.t - points[i - 1].t, frame_period), ErrorKind::InvalidInput,
            "trajectory: frame gap at index " + std::to_string(i) + "; split at gaps first");
  }
}

std::vector<Trajectory> split_at_gaps(const Trajectory& raw) {
  require_period(raw.frame_period);
  std::vector<Trajectory> out;
  Trajectory current;
  current.frame_period = raw.frame_period;
  auto flush = [&] {
    if (current.points.size() >= 2) out.push_back(current);
    current.points.clear();
  };
  for (std::size_t i = 0; i < raw.points.size(); ++i) {
    if (i > 0) {
      const double dt = raw.points[i].t - raw.points[i - 1].t;
      require(dt > 0.0, ErrorKind::InvalidInput, "trajectory: times must be strictly increasing");
      if (!uniform_step(dt, raw.frame_period)) flush();
    }
    current.points.push_back(raw.points[i]);
  }
  flush();
  return out;
}

std::size_t lag_frames(double tau, double frame_period) {
  require_period(frame_period);
  require(std::isfinite(tau) && tau >= 0.0, ErrorKind::InvalidInput, "msd: tau must be >= 0");
  const double k = std::round(tau / frame_period);
  require(std::abs(tau - k * frame_period) <= kTimeTolerance, ErrorKind::InvalidInput,
          "msd: tau is not an integer multiple of the frame period");
  return static_cast<std::size_t>(k);
}

MsdValue msd_with_count(const Trajectory& traj, double tau) {
  traj.validate();
  const std::size_t k = lag_frames(tau, traj.frame_period);
  if (k == 0) return {0.0, traj.points.size()};
  require(k < traj.points.size(), ErrorKind::NoPairs, "msd: tau exceeds the trajectory span");
  MsdValue v = lag_sums(traj.points, k);
  v.msd /= static_cast<double>(v.count);
  return v;
}

double msd(const Trajectory& traj, double tau) { return msd_with_count(traj, tau).msd; }

MsdCurve msd_curve(const Trajectory& traj, double max_tau) {
  traj.validate();
  require(max_tau <= traj.span() + kTimeTolerance, ErrorKind::NoPairs,
          "msd curve: max_tau exceeds the trajectory span");
  const auto lags = static_cast<std::size_t>(std::floor((max_tau + kTimeTolerance) / traj.frame_period));
  MsdCurve curve;
  for (std::size_t k = 1; k <= lags; ++k) {
    MsdValue v = lag_sums(traj.points, k);
    curve.taus.push_back(static_cast<double>(k) * traj.frame_period);
    curve.msd_values.push_back(v.msd / static_cast<double>(v.count));
    curve.counts.push_back(v.count);
  }
  return curve;
}

MsdCurve ensemble_msd_curve(std::span<const Trajectory> trajs, double max_tau, int jobs) {
  require(!trajs.empty(), ErrorKind::NoPairs, "ensemble msd: no trajectories");
  const double period = trajs.front().frame_period;
  for (const auto& t : trajs) {
    t.validate();
    require(t.frame_period == period, ErrorKind::InvalidInput,
            "ensemble msd: trajectories must share one frame period");
  }
  require(std::isfinite(max_tau) && max_tau > 0.0, ErrorKind::InvalidInput,
          "ensemble msd: max_tau must be > 0");
  const auto lags = static_cast<std::size_t>(std::floor((max_tau + kTimeTolerance) / period));
  require(lags >= 1, ErrorKind::NoPairs, "ensemble msd: max_tau shorter than one frame");

  // Per-trajectory sums, reduced afterwards in index order.
  std::vector<std::vector<MsdValue>> parts(trajs.size());
  parallel_for(trajs.size(), jobs, [&](std::size_t i) {
    parts[i].resize(lags);
    for (std::size_t k = 1; k <= lags; ++k) parts[i][k - 1] = lag_sums(trajs[i].points, k);
  });

  MsdCurve curve;
  for (std::size_t k = 1; k <= lags; ++k) {
    CompensatedSum sum;
    std::size_t count = 0;
    for (const auto& p : parts) {
      sum.add(p[k - 1].msd);
      count += p[k - 1].count;
    }
    if (count == 0) continue;
    curve.taus.push_back(static_cast<double>(k) * period);
    curve.msd_values.push_back(sum.value() / static_cast<double>(count));
    curve.counts.push_back(count);
  }
  require(!curve.taus.empty(), ErrorKind::NoPairs, "ensemble msd: no pairs at any lag");
  return curve;
}

std::string to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::Healthy: return "healthy";
    case Verdict::Impaired: return "impaired";
    case Verdict::BelowFloor: return "below-floor";
  }
  return "unknown";
}

ViabilityReport ensemble_viability(std::span<const Trajectory> trajs, const ViabilityOptions& options) {
  require(!trajs.empty(), ErrorKind::InvalidInput, "viability: no trajectories");
  require(std::isfinite(options.window) && options.window > 0.0, ErrorKind::InvalidInput,
          "viability: window must be > 0");
  require(std::isfinite(options.tau) && options.tau > 0.0, ErrorKind::InvalidInput,
          "viability: tau must be > 0");
  require(std::isfinite(options.noise_floor) && options.noise_floor >= 0.0, ErrorKind::InvalidInput,
          "viability: noise_floor must be >= 0");
  require(options.impaired_fraction > 0.0 && options.impaired_fraction <= 1.0, ErrorKind::InvalidInput,
          "viability: impaired_fraction must be in (0, 1]");
  const double period = trajs.front().frame_period;
  double t_min = trajs.front().points.front().t;
  double t_max = t_min;
  for (const auto& t : trajs) {
    t.validate();
    require(t.frame_period == period, ErrorKind::InvalidInput,
            "viability: trajectories must share one frame period");
    t_min = std::min(t_min, t.points.front().t);
    t_max = std::max(t_max, t.points.back().t);
  }
  const auto lag = static_cast<std::size_t>(std::max(1.0, std::round(options.tau / period)));

  ViabilityReport report;
  report.tau_effective = static_cast<double>(lag) * period;
  report.noise_floor = options.noise_floor;
  const auto count = static_cast<std::size_t>(std::max(1.0, std::ceil((t_max - t_min) / options.window)));
  bool have_baseline = false;
  for (std::size_t w = 0; w < count; ++w) {
    ViabilityWindow win;
    win.start = t_min + static_cast<double>(w) * options.window;
    win.end = win.start + options.window;
    const bool last = w + 1 == count;
    std::vector<double> values;
    for (const auto& t : trajs) {
      const auto lo = std::lower_bound(t.points.begin(), t.points.end(), win.start,
                                       [](const TrackPoint& p, double v) { return p.t < v; });
      const auto hi = last ? t.points.end()
                           : std::lower_bound(lo, t.points.end(), win.end,
                                              [](const TrackPoint& p, double v) { return p.t < v; });
      const MsdValue v = lag_sums(std::span<const TrackPoint>(lo, hi), lag);
      if (v.count > 0) values.push_back(v.msd / static_cast<double>(v.count));
    }
    win.trajectories = values.size();
    if (values.empty()) {
      win.skipped = true;
      report.windows.push_back(win);
      continue;
    }
    win.mean = compensated_sum(values) / static_cast<double>(values.size());
    if (values.size() == 1) {
      win.single_sample = true;
    } else {
      CompensatedSum ss;
      for (double v : values) ss.add((v - win.mean) * (v - win.mean));
      win.std_dev = std::sqrt(ss.value() / static_cast<double>(values.size() - 1));
    }
    if (!have_baseline) {
      report.baseline_mean = win.mean;
      have_baseline = true;
    }
    if (win.mean <= options.noise_floor) {
      win.verdict = Verdict::BelowFloor;
    } else if (win.mean < options.impaired_fraction * report.baseline_mean) {
      win.verdict = Verdict::Impaired;
    } else {
      win.verdict = Verdict::Healthy;
    }
    report.windows.push_back(win);
  }
  return report;
}

double DiffusionSchedule::at(double t) const {
  double d = values.front();
  for (std::size_t i = 0; i < starts.size() && starts[i] <= t; ++i) d = values[i];
  return d;
}

Trajectory simulate_diffusion(const DiffusionSchedule& schedule, std::size_t frames, double frame_period,
                              std::uint64_t seed) {
  require(!schedule.starts.empty() && schedule.starts.size() == schedule.values.size(),
          ErrorKind::InvalidInput, "diffusion: schedule needs matching starts and values");
  require(schedule.starts.front() == 0.0, ErrorKind::InvalidInput, "diffusion: schedule must start at 0");
  for (double d : schedule.values) {
    require(std::isfinite(d) && d >= 0.0, ErrorKind::InvalidInput, "diffusion: D must be >= 0");
  }
  require(frames >= 2, ErrorKind::InvalidInput, "diffusion: need at least two frames");
  require_period(frame_period);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Trajectory traj;
  traj.frame_period = frame_period;
  traj.points.reserve(frames);
  double x = 0.0, y = 0.0;
  traj.points.push_back({0.0, x, y});
  for (std::size_t i = 1; i < frames; ++i) {
    const double t_prev = static_cast<double>(i - 1) * frame_period;
    const double sigma = std::sqrt(2.0 * schedule.at(t_prev) * frame_period);
    x += sigma * normal(rng);
    y += sigma * normal(rng);
    traj.points.push_back({static_cast<double>(i) * frame_period, x, y});
  }
  return traj;
}

}  // namespace qbic::tracking
