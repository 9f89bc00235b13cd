#include "qbic/common.hpp"
#include "qbic/tracking.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace qbic;
using namespace qbic::tracking;

namespace {

Trajectory ballistic(double vx, double vy, std::size_t frames, double period) {
  Trajectory t;
  t.frame_period = period;
  for (std::size_t i = 0; i < frames; ++i) {
    const double time = static_cast<double>(i) * period;
    t.points.push_back({time, 3.0 + vx * time, -1.0 + vy * time});
  }
  return t;
}

// Independent random-walk generator for the diffusion oracle.
Trajectory walk(double d, std::size_t frames, double period, std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 * d * period));
  Trajectory t;
  t.frame_period = period;
  double x = 0.0, y = 0.0;
  for (std::size_t i = 0; i < frames; ++i) {
    t.points.push_back({static_cast<double>(i) * period, x, y});
    x += n(rng);
    y += n(rng);
  }
  return t;
}

Trajectory transformed(const Trajectory& in, double angle, double dx, double dy) {
  Trajectory out = in;
  const double c = std::cos(angle), s = std::sin(angle);
  for (auto& p : out.points) {
    const double x = c * p.x - s * p.y + dx;
    const double y = s * p.x + c * p.y + dy;
    p.x = x;
    p.y = y;
  }
  return out;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::Io;
}

}  // namespace

TEST(Msd, StationaryIsZero) {
  Trajectory t = ballistic(0.0, 0.0, 20, 0.5);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(msd(t, k * 0.5), 0.0);
}

TEST(Msd, BallisticIsExact) {
  const double period = kDefaultFramePeriod;
  const Trajectory t = ballistic(0.3, 0.4, 50, period);
  for (int k = 1; k < 50; ++k) {
    const double tau = k * period;
    const double v = 0.5;
    EXPECT_NEAR(msd(t, tau), v * v * tau * tau, 1e-12 * v * v * tau * tau) << k;
  }
}

TEST(Msd, CurveIsQuadraticForBallistic) {
  const Trajectory t = ballistic(1.0, 0.0, 30, 0.25);
  const auto c = msd_curve(t, 29 * 0.25);
  ASSERT_EQ(c.taus.size(), 29u);
  for (std::size_t i = 0; i < c.taus.size(); ++i) {
    EXPECT_NEAR(c.msd_values[i] / (c.taus[i] * c.taus[i]), 1.0, 1e-12);
    EXPECT_EQ(c.counts[i], 30u - (i + 1));
    if (i > 0) {
      EXPECT_LT(c.counts[i], c.counts[i - 1]);
    }
  }
}

TEST(Msd, TwoPointTrajectoryGivesSingleTau) {
  Trajectory t;
  t.frame_period = 2.0;
  t.points = {{0.0, 0.0, 0.0}, {2.0, 3.0, 4.0}};
  const auto c = msd_curve(t, 2.0);
  ASSERT_EQ(c.taus.size(), 1u);
  EXPECT_DOUBLE_EQ(c.msd_values[0], 25.0);
  EXPECT_EQ(c.counts[0], 1u);
}

TEST(Msd, ZeroLagIsZero) {
  std::mt19937 rng(3);
  EXPECT_EQ(msd(walk(0.1, 40, 1.0, rng), 0.0), 0.0);
}

TEST(Msd, Errors) {
  const Trajectory t = ballistic(1.0, 1.0, 10, 1.0);
  EXPECT_EQ(kind_of([&] { msd(t, 10.0); }), ErrorKind::NoPairs);
  EXPECT_EQ(kind_of([&] { msd(t, 1.5); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([&] { msd(t, -1.0); }), ErrorKind::InvalidInput);
  Trajectory gappy = t;
  gappy.points.erase(gappy.points.begin() + 4);
  EXPECT_EQ(kind_of([&] { msd(gappy, 1.0); }), ErrorKind::InvalidInput);
}

TEST(Msd, TauToleranceIsOneMicrosecond) {
  const Trajectory t = ballistic(1.0, 0.0, 10, 1.0);
  EXPECT_NO_THROW(msd(t, 2.0 + 0.9e-6));
  EXPECT_THROW(msd(t, 2.0 + 1.1e-6), Error);
}

TEST(Msd, InvariantUnderTranslationRotationAndReversal) {
  std::mt19937 rng(11);
  const Trajectory t = walk(0.2, 200, 0.5, rng);
  const Trajectory moved = transformed(t, 0.7, 123.0, -45.0);
  Trajectory reversed = t;
  const double t_end = t.points.back().t;
  std::reverse(reversed.points.begin(), reversed.points.end());
  for (auto& p : reversed.points) p.t = t_end - p.t;
  for (int k = 1; k < 60; ++k) {
    const double a = msd(t, k * 0.5);
    EXPECT_NEAR(msd(moved, k * 0.5), a, 1e-9 * a);
    EXPECT_NEAR(msd(reversed, k * 0.5), a, 1e-12 * a);
  }
}

TEST(Msd, DiffusionEnsembleSlopeIsFourD) {
  const double d = 0.05, period = kDefaultFramePeriod;
  std::mt19937 rng(2024);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 10000; ++i) trajs.push_back(walk(d, 40, period, rng));
  const auto c = ensemble_msd_curve(trajs, 10 * period, 4);
  const auto fit = fit_line_through_origin(c.taus, c.msd_values);
  EXPECT_NEAR(fit.slope / (4.0 * d), 1.0, 0.05);
  for (std::size_t i = 0; i < c.taus.size(); ++i) {
    EXPECT_NEAR(c.msd_values[i] / (4.0 * d * c.taus[i]), 1.0, 0.05) << c.taus[i];
  }
}

TEST(Msd, EnsembleIsIndependentOfJobCount) {
  std::mt19937 rng(5);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 300; ++i) trajs.push_back(walk(0.1, 25 + i % 7, 1.0, rng));
  const auto a = ensemble_msd_curve(trajs, 20.0, 1);
  const auto b = ensemble_msd_curve(trajs, 20.0, 7);
  EXPECT_EQ(a.msd_values, b.msd_values);
  EXPECT_EQ(a.counts, b.counts);
}

TEST(Gaps, SplitDropsShortPieces) {
  Trajectory raw = ballistic(1.0, 0.0, 12, 1.0);
  raw.points.erase(raw.points.begin() + 5);   // gap between t=4 and t=6
  raw.points.erase(raw.points.begin() + 6);   // isolates t=6
  const auto pieces = split_at_gaps(raw);
  ASSERT_EQ(pieces.size(), 2u);
  EXPECT_EQ(pieces[0].points.size(), 5u);
  EXPECT_EQ(pieces[1].points.front().t, 8.0);
  for (const auto& p : pieces) EXPECT_NO_THROW(p.validate());
}

TEST(Viability, StationaryIsBelowFloorEverywhere) {
  std::vector<Trajectory> trajs(3, ballistic(0.0, 0.0, 500, 1.0));
  ViabilityOptions o;
  o.window = 100.0;
  o.noise_floor = 1e-3;
  const auto r = ensemble_viability(trajs, o);
  ASSERT_EQ(r.windows.size(), 5u);
  for (const auto& w : r.windows) {
    EXPECT_FALSE(w.skipped);
    EXPECT_EQ(w.verdict, Verdict::BelowFloor);
  }
}

TEST(Viability, SingleTrajectoryFlagsSingleSample) {
  std::mt19937 rng(1);
  std::vector<Trajectory> trajs{walk(0.1, 300, 1.0, rng)};
  ViabilityOptions o;
  o.window = 100.0;
  const auto r = ensemble_viability(trajs, o);
  for (const auto& w : r.windows) {
    EXPECT_TRUE(w.single_sample);
    EXPECT_EQ(w.std_dev, 0.0);
  }
}

TEST(Viability, TauSnapsToNearestFrame) {
  std::vector<Trajectory> trajs(2, ballistic(0.1, 0.0, 100, kDefaultFramePeriod));
  ViabilityOptions o;
  o.window = 1000.0;
  const auto r = ensemble_viability(trajs, o);
  EXPECT_NEAR(r.tau_effective, 7.0 * kDefaultFramePeriod, 1e-12);
}

TEST(Viability, EmptyWindowIsSkipped) {
  Trajectory early = ballistic(0.1, 0.0, 50, 1.0);
  Trajectory late = early;
  for (auto& p : late.points) p.t += 300.0;
  std::vector<Trajectory> trajs{early, late};
  ViabilityOptions o;
  o.window = 100.0;
  const auto r = ensemble_viability(trajs, o);
  ASSERT_EQ(r.windows.size(), 4u);
  EXPECT_FALSE(r.windows[0].skipped);
  EXPECT_TRUE(r.windows[1].skipped);
  EXPECT_TRUE(r.windows[2].skipped);
  EXPECT_FALSE(r.windows[3].skipped);
}

TEST(Viability, TwoPhaseEnsembleFlipsAtChangepoint) {
  const double period = kDefaultFramePeriod;
  const auto frames = static_cast<std::size_t>(3600.0 / period) + 1;
  DiffusionSchedule schedule{{0.0, 1800.0}, {0.05, 0.025}};
  std::vector<Trajectory> trajs;
  for (std::uint64_t i = 0; i < 100; ++i) {
    trajs.push_back(simulate_diffusion(schedule, frames, period, derive_seed(9, i)));
  }
  ViabilityOptions o;
  o.window = 600.0;
  o.noise_floor = 0.01;
  o.impaired_fraction = 0.75;
  const auto r = ensemble_viability(trajs, o);
  ASSERT_EQ(r.windows.size(), 6u);
  for (std::size_t w = 0; w < 6; ++w) {
    EXPECT_EQ(r.windows[w].verdict, w < 3 ? Verdict::Healthy : Verdict::Impaired) << w;
    EXPECT_EQ(r.windows[w].trajectories, 100u);
  }
  EXPECT_NEAR(r.baseline_mean / (4.0 * 0.05 * r.tau_effective), 1.0, 0.05);
}

TEST(Simulation, IsSeedDeterministic) {
  DiffusionSchedule s{{0.0}, {0.1}};
  const auto a = simulate_diffusion(s, 100, 1.0, 42);
  const auto b = simulate_diffusion(s, 100, 1.0, 42);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(a.points[i].x, b.points[i].x);
}
