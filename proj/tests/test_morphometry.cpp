#include "qbic/common.hpp"
#include "qbic/morphometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace qbic;
using namespace qbic::morphometry;

namespace {

constexpr double kPi = std::numbers::pi;

// Naive orthonormal DCT-II of the full image; O(W^2 H^2), tiny inputs only.
std::vector<double> naive_dct(const GrayImage& im) {
  const double w = static_cast<double>(im.width), h = static_cast<double>(im.height);
  std::vector<double> c(im.values.size(), 0.0);
  for (std::size_t v = 0; v < im.height; ++v) {
    for (std::size_t u = 0; u < im.width; ++u) {
      double acc = 0.0;
      for (std::size_t y = 0; y < im.height; ++y) {
        for (std::size_t x = 0; x < im.width; ++x) {
          acc += im.at(x, y) * std::cos(kPi * (2.0 * x + 1.0) * u / (2.0 * w)) *
                 std::cos(kPi * (2.0 * y + 1.0) * v / (2.0 * h));
        }
      }
      const double su = std::sqrt((u == 0 ? 1.0 : 2.0) / w), sv = std::sqrt((v == 0 ? 1.0 : 2.0) / h);
      c[v * im.width + u] = su * sv * acc;
    }
  }
  return c;
}

GrayImage naive_idct(const std::vector<double>& c, std::size_t width, std::size_t height) {
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  GrayImage out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double acc = 0.0;
      for (std::size_t v = 0; v < height; ++v) {
        for (std::size_t u = 0; u < width; ++u) {
          const double su = std::sqrt((u == 0 ? 1.0 : 2.0) / w), sv = std::sqrt((v == 0 ? 1.0 : 2.0) / h);
          acc += su * sv * c[v * width + u] * std::cos(kPi * (2.0 * x + 1.0) * u / (2.0 * w)) *
                 std::cos(kPi * (2.0 * y + 1.0) * v / (2.0 * h));
        }
      }
      out.at(x, y) = acc;
    }
  }
  return out;
}

GrayImage noise_image(std::size_t w, std::size_t h, unsigned seed, double mean = 0.0, double sd = 1.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n(mean, sd);
  GrayImage im(w, h);
  for (auto& v : im.values) v = n(rng);
  return im;
}

double variance(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

BinaryMask mask_from(const std::vector<std::string>& rows) {
  BinaryMask m(rows.front().size(), rows.size());
  for (std::size_t y = 0; y < rows.size(); ++y) {
    for (std::size_t x = 0; x < rows[y].size(); ++x) m.set(x, y, rows[y][x] == '#');
  }
  return m;
}

BinaryMask rect_mask(std::size_t w, std::size_t h, std::size_t x0, std::size_t y0, std::size_t rw,
                     std::size_t rh) {
  BinaryMask m(w, h);
  for (std::size_t y = y0; y < y0 + rh; ++y) {
    for (std::size_t x = x0; x < x0 + rw; ++x) m.set(x, y, true);
  }
  return m;
}

// Filled ellipse of full length l and half-width a, pixel centres tested.
GrayImage ellipse_image(std::size_t w, std::size_t h, double cx, double cy, double l, double a,
                        double fg, double bg, double gradient = 0.0) {
  GrayImage im(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double ex = (x + 0.5 - cx) / (0.5 * l), ey = (y + 0.5 - cy) / a;
      im.at(x, y) = (ex * ex + ey * ey <= 1.0 ? fg : bg) + gradient * static_cast<double>(x);
    }
  }
  return im;
}

int count_components(const BinaryMask& m, bool foreground, bool eight) {
  const int w = static_cast<int>(m.width), h = static_cast<int>(m.height);
  std::vector<int> seen(m.bits.size(), 0);
  int count = 0;
  for (int sy = 0; sy < h; ++sy) {
    for (int sx = 0; sx < w; ++sx) {
      const auto s = static_cast<std::size_t>(sy * w + sx);
      if (m.at(sx, sy) != foreground || seen[s]) continue;
      ++count;
      std::vector<std::pair<int, int>> stack{{sx, sy}};
      seen[s] = 1;
      while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0)) continue;
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const auto n = static_cast<std::size_t>(ny * w + nx);
            if (m.at(nx, ny) == foreground && !seen[n]) {
              seen[n] = 1;
              stack.push_back({nx, ny});
            }
          }
        }
      }
    }
  }
  return count;
}

// Holes: 4-connected background components after padding with background.
int count_holes(const BinaryMask& m) {
  BinaryMask padded(m.width + 2, m.height + 2);
  for (std::size_t y = 0; y < m.height; ++y) {
    for (std::size_t x = 0; x < m.width; ++x) padded.set(x + 1, y + 1, m.at(x, y));
  }
  return count_components(padded, false, false) - 1;
}

// Floyd-Warshall over skeleton pixels; maximum over endpoint pairs.
double brute_force_longest(const Skeleton& sk) {
  const std::size_t n = sk.pixels.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(n * n, inf);
  for (std::size_t i = 0; i < n; ++i) {
    d[i * n + i] = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const int dx = std::abs(sk.pixels[i].x - sk.pixels[j].x), dy = std::abs(sk.pixels[i].y - sk.pixels[j].y);
      if (i != j && dx <= 1 && dy <= 1) d[i * n + j] = (dx + dy == 2) ? std::sqrt(2.0) : 1.0;
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        d[i * n + j] = std::min(d[i * n + j], d[i * n + k] + d[k * n + j]);
      }
    }
  }
  double best = 0.0;
  for (const auto& a : sk.endpoints) {
    for (const auto& b : sk.endpoints) {
      std::size_t ia = 0, ib = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sk.pixels[i] == a) ia = i;
        if (sk.pixels[i] == b) ib = i;
      }
      if (std::isfinite(d[ia * n + ib])) best = std::max(best, d[ia * n + ib]);
    }
  }
  return best;
}

bool has_2x2_block(const BinaryMask& m) {
  for (std::size_t y = 0; y + 1 < m.height; ++y) {
    for (std::size_t x = 0; x + 1 < m.width; ++x) {
      if (m.at(x, y) && m.at(x + 1, y) && m.at(x, y + 1) && m.at(x + 1, y + 1)) return true;
    }
  }
  return false;
}

bool subset(const BinaryMask& a, const BinaryMask& b) {
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    if (a.bits[i] && !b.bits[i]) return false;
  }
  return true;
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

TEST(Dct, ConstantImageVanishes) {
  GrayImage im(40, 30, 1.0, 123.5);
  const auto r = dct_background_subtract(im);
  for (double v : r.values) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(Dct, MatchesNaiveFullTransform) {
  const GrayImage im = noise_image(13, 11, 4, 5.0, 2.0);
  for (int modes : {1, 3, 10}) {
    auto c = naive_dct(im);
    for (std::size_t v = 0; v < im.height; ++v) {
      for (std::size_t u = 0; u < im.width; ++u) {
        if (u < static_cast<std::size_t>(modes) && v < static_cast<std::size_t>(modes)) c[v * im.width + u] = 0.0;
      }
    }
    const GrayImage expected = naive_idct(c, im.width, im.height);
    const GrayImage got = dct_background_subtract(im, modes);
    for (std::size_t i = 0; i < im.values.size(); ++i) EXPECT_NEAR(got.values[i], expected.values[i], 1e-10);
  }
}

TEST(Dct, LowModeImageIsRemoved) {
  GrayImage im(64, 48);
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> amp(-10.0, 10.0);
  for (int v = 0; v < 10; ++v) {
    for (int u = 0; u < 10; ++u) {
      const double a = amp(rng);
      for (std::size_t y = 0; y < im.height; ++y) {
        for (std::size_t x = 0; x < im.width; ++x) {
          im.at(x, y) += a * std::cos(kPi * (2.0 * x + 1.0) * u / (2.0 * im.width)) *
                         std::cos(kPi * (2.0 * y + 1.0) * v / (2.0 * im.height));
        }
      }
    }
  }
  for (auto& x : im.values) x += 500.0;
  double mx = 0.0;
  for (double x : im.values) mx = std::max(mx, std::abs(x));
  const auto r = dct_background_subtract(im);
  for (double v : r.values) EXPECT_NEAR(v, 0.0, 1e-6 * mx);
}

TEST(Dct, WhiteNoiseVarianceFollowsParseval) {
  const GrayImage im = noise_image(64, 64, 21);
  const auto r = dct_background_subtract(im);
  const double expected = variance(im.values) * (1.0 - 100.0 / (64.0 * 64.0));
  EXPECT_NEAR(variance(r.values) / expected, 1.0, 0.1);
}

TEST(Dct, IsIdempotent) {
  const GrayImage im = ellipse_image(120, 60, 60, 30, 90, 10, 200, 20, 0.3);
  const auto once = dct_background_subtract(im);
  const auto twice = dct_background_subtract(once);
  for (std::size_t i = 0; i < im.values.size(); ++i) EXPECT_NEAR(once.values[i], twice.values[i], 1e-9);
}

TEST(Dct, ModesOutOfRange) {
  GrayImage im(8, 6);
  EXPECT_EQ(kind_of([&] { dct_background_subtract(im, 0); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([&] { dct_background_subtract(im, 7); }), ErrorKind::InvalidInput);
  EXPECT_NO_THROW(dct_background_subtract(im, 6));
}

TEST(Otsu, BimodalThresholdLiesBetweenPeaksAndMaximizesVariance) {
  GrayImage im(50, 40, 1.0, 30.0);
  for (std::size_t i = 0; i < im.values.size(); i += 3) im.values[i] = 180.0;
  const double t = otsu_threshold(im);
  EXPECT_GT(t, 30.0);
  EXPECT_LT(t, 180.0);

  // Brute force over every bin edge with pixel-level class statistics.
  GrayImage ramp = noise_image(40, 40, 3, 100.0, 30.0);
  for (std::size_t i = 0; i < 400; ++i) ramp.values[i] += 150.0;
  auto between = [&](double edge) {
    double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (double v : ramp.values) {
      if (v > edge) {
        n1 += 1;
        s1 += v;
      } else {
        n0 += 1;
        s0 += v;
      }
    }
    if (n0 == 0 || n1 == 0) return 0.0;
    return n0 * n1 * (s0 / n0 - s1 / n1) * (s0 / n0 - s1 / n1);
  };
  const auto [lo, hi] = std::minmax_element(ramp.values.begin(), ramp.values.end());
  double best = 0.0;
  for (int k = 1; k < 256; ++k) best = std::max(best, between(*lo + k * (*hi - *lo) / 256.0));
  // Histogram binning shifts class means by at most half a bin.
  EXPECT_GE(between(otsu_threshold(ramp)), best * (1.0 - 1e-3));
}

TEST(Segment, EmptyForegroundThrows) {
  GrayImage im(10, 10, 1.0, 5.0);
  EXPECT_EQ(kind_of([&] { threshold_segment(im, 6.0); }), ErrorKind::EmptyMask);
  EXPECT_EQ(kind_of([&] { threshold_segment(im); }), ErrorKind::EmptyMask);
}

TEST(Segment, KeepsLargestComponent) {
  GrayImage im(30, 20, 1.0, 0.0);
  for (std::size_t y = 2; y < 6; ++y) {
    for (std::size_t x = 2; x < 6; ++x) im.at(x, y) = 10.0;
  }
  for (std::size_t y = 10; y < 18; ++y) {
    for (std::size_t x = 12; x < 25; ++x) im.at(x, y) = 10.0;
  }
  const auto m = threshold_segment(im, 5.0);
  EXPECT_EQ(m.count(), 8u * 13u);
  EXPECT_FALSE(m.at(3, 3));
  EXPECT_TRUE(m.at(20, 15));
}

TEST(Skeleton, RectangleGivesCenterline) {
  const BinaryMask m = rect_mask(120, 20, 10, 8, 100, 5);
  const auto sk = skeletonize(m);
  ASSERT_EQ(sk.endpoints.size(), 2u);
  for (const auto& p : sk.pixels) EXPECT_EQ(p.y, 10);
  int lo = 1000, hi = -1;
  for (const auto& e : sk.endpoints) {
    lo = std::min(lo, e.x);
    hi = std::max(hi, e.x);
  }
  // Medial axis of a 100x5 rectangle runs from x = 12 to x = 107.
  EXPECT_LE(std::abs(lo - 12), 3);
  EXPECT_LE(std::abs(hi - 107), 3);
  EXPECT_TRUE(subset(sk.mask, m));
}

TEST(Skeleton, DiskCollapsesToCenter) {
  BinaryMask m(41, 41);
  for (int y = 0; y < 41; ++y) {
    for (int x = 0; x < 41; ++x) m.set(x, y, (x - 20) * (x - 20) + (y - 20) * (y - 20) <= 225);
  }
  const auto sk = skeletonize(m);
  EXPECT_LE(sk.pixels.size(), 5u);
  for (const auto& p : sk.pixels) {
    EXPECT_LE(std::abs(p.x - 20), 2);
    EXPECT_LE(std::abs(p.y - 20), 2);
  }
}

TEST(Skeleton, LBandLengthMatchesArms) {
  // Arms 7 px thick; centerline arms of 120 and 80 px meeting at the corner.
  BinaryMask m(160, 130);
  for (std::size_t y = 10; y < 17; ++y) {
    for (std::size_t x = 10; x < 137; ++x) m.set(x, y, true);
  }
  for (std::size_t y = 10; y < 97; ++y) {
    for (std::size_t x = 10; x < 17; ++x) m.set(x, y, true);
  }
  const auto sk = skeletonize(m);
  const auto g = longest_geodesic(sk, 1.0);
  const double arms = (136.0 - 13.0) + (96.0 - 13.0);
  EXPECT_NEAR(g.length / arms, 1.0, 0.1);
}

TEST(Skeleton, TopologyAndThinness) {
  std::vector<BinaryMask> shapes;
  shapes.push_back(rect_mask(60, 30, 5, 5, 50, 9));
  BinaryMask ring(60, 60);
  for (int y = 0; y < 60; ++y) {
    for (int x = 0; x < 60; ++x) {
      const int r2 = (x - 30) * (x - 30) + (y - 30) * (y - 30);
      ring.set(x, y, r2 <= 400 && r2 >= 144);
    }
  }
  shapes.push_back(ring);
  shapes.push_back(mask_from({"..........", ".##.......", ".##.......", "..........", "......###.",
                              "......###.", ".........."}));
  for (const auto& m : shapes) {
    const auto sk = skeletonize(m);
    EXPECT_TRUE(subset(sk.mask, m));
    EXPECT_EQ(count_components(sk.mask, true, true), count_components(m, true, true));
    EXPECT_EQ(count_holes(sk.mask), count_holes(m));
    EXPECT_FALSE(has_2x2_block(sk.mask));
    for (const auto& e : sk.endpoints) {
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int x = e.x + dx, y = e.y + dy;
          if (x >= 0 && y >= 0 && x < static_cast<int>(m.width) && y < static_cast<int>(m.height) &&
              sk.mask.at(x, y)) {
            ++n;
          }
        }
      }
      EXPECT_EQ(n, 1);
    }
  }
}

TEST(Skeleton, SinglePixelHasNoEndpoints) {
  BinaryMask m(5, 5);
  m.set(2, 2, true);
  const auto sk = skeletonize(m);
  EXPECT_EQ(sk.pixels.size(), 1u);
  EXPECT_TRUE(sk.endpoints.empty());
  EXPECT_EQ(longest_geodesic(sk, 1.0).length, 0.0);
}

TEST(Geodesic, StraightAndDiagonal) {
  BinaryMask line(120, 10);
  for (std::size_t x = 5; x < 105; ++x) line.set(x, 4, true);
  EXPECT_NEAR(longest_geodesic(skeletonize(line), 1.0).length, 99.0, 1e-9);
  BinaryMask diag(110, 110);
  for (std::size_t i = 0; i < 100; ++i) diag.set(i + 3, i + 5, true);
  const auto sk = skeletonize(diag);
  const auto g = longest_geodesic(sk, 1.0);
  EXPECT_NEAR(g.length, 99.0 * std::sqrt(2.0), 1e-9);
  EXPECT_EQ(g.path.size(), 100u);
  EXPECT_NEAR(longest_geodesic(sk, 0.5).length, 0.5 * 99.0 * std::sqrt(2.0), 1e-9);
}

TEST(Geodesic, YShapeMatchesBruteForce) {
  BinaryMask y(80, 80);
  for (int i = 0; i < 30; ++i) {
    y.set(40, 40 + i, true);          // stem down
    y.set(40 - i, 40 - i, true);      // left arm
    y.set(40 + i / 2, 40 - i, true);  // right arm, steeper
  }
  const auto sk = skeletonize(y);
  EXPECT_EQ(sk.endpoints.size(), 3u);
  EXPECT_NEAR(longest_geodesic(sk, 1.0).length, brute_force_longest(sk), 1e-9);
}

TEST(Geodesic, RandomSkeletonsMatchBruteForce) {
  std::mt19937 rng(99);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    // Random blobby mask: union of a few rectangles.
    BinaryMask m(40, 40);
    std::uniform_int_distribution<int> pos(2, 30), len(2, 9);
    for (int r = 0; r < 4; ++r) {
      const int x0 = pos(rng), y0 = pos(rng), w = len(rng), h = len(rng);
      for (int y = y0; y < std::min(38, y0 + h); ++y) {
        for (int x = x0; x < std::min(38, x0 + w); ++x) m.set(x, y, true);
      }
    }
    const auto sk = skeletonize(largest_component(m));
    if (sk.endpoints.size() < 2 || sk.endpoints.size() > 12) continue;
    ++checked;
    EXPECT_NEAR(longest_geodesic(sk, 1.0).length, brute_force_longest(sk), 1e-9) << trial;
  }
  EXPECT_GE(checked, 20);
}

TEST(Geodesic, DisconnectedIsFlagged) {
  BinaryMask m(60, 10);
  for (std::size_t x = 2; x < 20; ++x) m.set(x, 3, true);
  for (std::size_t x = 25; x < 55; ++x) m.set(x, 6, true);
  const auto g = longest_geodesic(skeletonize(m), 1.0);
  EXPECT_TRUE(g.disconnected);
  EXPECT_NEAR(g.length, 29.0, 1e-9);
}

TEST(Volume, ClosedFormsAgree) {
  const double l = 1000.0, a = 40.0;
  const double area = kPi * a * l / 2.0;
  EXPECT_NEAR(area, 62831.853, 1e-3);
  const double v = worm_volume(l, area);
  EXPECT_NEAR(v / (4.0 * kPi / 3.0 * a * a * (l / 2.0)), 1.0, 1e-9);
  EXPECT_NEAR(v, 3.3510e6, 1e2);
  EXPECT_NEAR(worm_volume(2 * l, 4 * area) / v, 8.0, 1e-12);
  EXPECT_EQ(kind_of([] { worm_volume(0.0, 1.0); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([] { worm_volume(1.0, -1.0); }), ErrorKind::InvalidInput);
}

TEST(Pipeline, RasterizedEllipseVolume) {
  const double l = 1000.0, a = 40.0;
  const double analytic = 4.0 * kPi / 3.0 * a * a * (l / 2.0);
  // Ten DCT modes only spare the worm when the field is large next to it.
  const GrayImage im = ellipse_image(1200, 1200, 600.0, 600.0, l, a, 200.0, 20.0, 0.05);
  for (int modes : {0, 10}) {
    MorphOptions o;
    o.dct_modes = modes;
    const auto m = measure_worm(im, o);
    EXPECT_NEAR(m.volume / analytic, 1.0, 0.05) << modes;
    EXPECT_NEAR(m.length / l, 1.0, 0.05) << modes;
    EXPECT_NEAR(m.half_width / a, 1.0, 0.05) << modes;
  }
}

TEST(Pipeline, TranslationChangesLittle) {
  const GrayImage a = ellipse_image(400, 400, 200.0, 200.0, 300.0, 15.0, 200.0, 20.0);
  const GrayImage b = ellipse_image(400, 400, 213.0, 195.0, 300.0, 15.0, 200.0, 20.0);
  MorphOptions o;
  o.dct_modes = 0;
  const auto ma = measure_worm(a, o), mb = measure_worm(b, o);
  EXPECT_NEAR(ma.length, mb.length, 1e-9);
  EXPECT_NEAR(ma.area, mb.area, 1e-9);
  o.dct_modes = 10;
  const auto da = measure_worm(a, o), db = measure_worm(b, o);
  EXPECT_NEAR(da.length, db.length, std::sqrt(2.0));
  EXPECT_NEAR(da.area / db.area, 1.0, 0.01);
}

TEST(Stress, NormalizationProperties) {
  const GrayImage im = ellipse_image(200, 80, 100.0, 40.0, 150.0, 10.0, 100.0, 0.0);
  const auto mask = threshold_segment(im);
  const double raw = normalized_stress(im, mask, 1000.0, 0.0);
  EXPECT_NEAR(normalized_stress(im, mask, 1000.0, raw), 0.0, 1e-12);

  GrayImage doubled = im;
  for (auto& v : doubled.values) v *= 2.0;
  MorphOptions o;
  const auto m1 = measure_worm(im, o), m2 = measure_worm(doubled, o);
  EXPECT_EQ(m2.normalized_stress, 2.0 * m1.normalized_stress);

  // Same total fluorescence, volumes V and 2V.
  EXPECT_NEAR(normalized_stress(im, mask, 1000.0, 0.0) / normalized_stress(im, mask, 2000.0, 0.0), 2.0, 1e-12);
}

TEST(Stress, VolumeOverride) {
  const GrayImage im = ellipse_image(200, 80, 100.0, 40.0, 150.0, 10.0, 100.0, 0.0);
  MorphOptions o;
  o.volume_override = 5000.0;
  const auto m = measure_worm(im, o);
  EXPECT_TRUE(m.volume_overridden);
  EXPECT_EQ(m.volume, 5000.0);
  EXPECT_NEAR(m.normalized_stress, m.total_fluorescence / 5000.0, 1e-12);
}

TEST(ZStack, SumsSlices) {
  std::vector<GrayImage> slices{GrayImage(4, 3, 1.0, 1.0), GrayImage(4, 3, 1.0, 2.5)};
  const auto s = sum_zstack(slices);
  for (double v : s.values) EXPECT_EQ(v, 3.5);
  slices.push_back(GrayImage(3, 3));
  EXPECT_EQ(kind_of([&] { sum_zstack(slices); }), ErrorKind::InvalidInput);
}
