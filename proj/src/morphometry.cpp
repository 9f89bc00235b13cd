#include "qbic/morphometry.hpp"

#include "qbic/common.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <queue>

namespace qbic::morphometry {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows are the first `modes` orthonormal DCT-II basis vectors of length n.
Eigen::MatrixXd dct_basis(std::size_t n, int modes) {
  Eigen::MatrixXd c(modes, static_cast<Eigen::Index>(n));
  const double nn = static_cast<double>(n);
  for (int k = 0; k < modes; ++k) {
    const double s = std::sqrt((k == 0 ? 1.0 : 2.0) / nn);
    for (std::size_t i = 0; i < n; ++i) {
      c(k, static_cast<Eigen::Index>(i)) =
          s * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) * k / (2.0 * nn));
    }
  }
  return c;
}

void require_same_shape(const GrayImage& image, const BinaryMask& mask) {
  require(image.width == mask.width && image.height == mask.height, ErrorKind::InvalidInput,
          "morphometry: image and mask dimensions differ");
}

constexpr std::array<std::array<int, 2>, 8> kNeighbors{
    {{-1, -1}, {0, -1}, {1, -1}, {-1, 0}, {1, 0}, {-1, 1}, {0, 1}, {1, 1}}};

// 8-connected labels (1-based, 0 = background) and per-label sizes.
std::vector<int> label_components(const BinaryMask& mask, std::vector<std::size_t>& sizes) {
  const auto w = static_cast<int>(mask.width), h = static_cast<int>(mask.height);
  std::vector<int> labels(mask.bits.size(), 0);
  sizes.assign(1, 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.bits.size(); ++start) {
    if (!mask.bits[start] || labels[start]) continue;
    const int label = static_cast<int>(sizes.size());
    sizes.push_back(0);
    labels[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      ++sizes[static_cast<std::size_t>(label)];
      const int x = static_cast<int>(idx % mask.width), y = static_cast<int>(idx / mask.width);
      for (const auto& [dx, dy] : kNeighbors) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const auto n = static_cast<std::size_t>(ny) * mask.width + static_cast<std::size_t>(nx);
        if (mask.bits[n] && !labels[n]) {
          labels[n] = label;
          stack.push_back(n);
        }
      }
    }
  }
  return labels;
}

class Grid {
 public:
  explicit Grid(BinaryMask& m) : m_(m) {}
  int get(int x, int y) const {
    if (x < 0 || y < 0 || x >= static_cast<int>(m_.width) || y >= static_cast<int>(m_.height)) return 0;
    return m_.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) ? 1 : 0;
  }
  // Zhang-Suen order P2..P9: N, NE, E, SE, S, SW, W, NW.
  std::array<int, 8> ring(int x, int y) const {
    return {get(x, y - 1), get(x + 1, y - 1), get(x + 1, y), get(x + 1, y + 1),
            get(x, y + 1), get(x - 1, y + 1), get(x - 1, y), get(x - 1, y - 1)};
  }

 private:
  BinaryMask& m_;
};

int neighbor_count(const std::array<int, 8>& p) {
  int n = 0;
  for (int v : p) n += v;
  return n;
}

// Yokoi 8-connectivity number; a pixel is simple iff it equals 1.
bool is_simple(const std::array<int, 8>& p) {
  // Yokoi order from ring (N, NE, E, SE, S, SW, W, NW): E, NE, N, NW, W, SW, S, SE.
  const std::array<int, 8> x{p[2], p[1], p[0], p[7], p[6], p[5], p[4], p[3]};
  int c = 0;
  for (int k = 0; k < 8; k += 2) {
    const int a = 1 - x[k], b = 1 - x[(k + 1) % 8], d = 1 - x[(k + 2) % 8];
    c += a - a * b * d;
  }
  return c == 1;
}

void zhang_suen(BinaryMask& m) {
  Grid g(m);
  std::vector<std::size_t> remove;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      remove.clear();
      for (std::size_t y = 0; y < m.height; ++y) {
        for (std::size_t x = 0; x < m.width; ++x) {
          if (!m.at(x, y)) continue;
          const auto p = g.ring(static_cast<int>(x), static_cast<int>(y));
          const int b = neighbor_count(p);
          if (b < 2 || b > 6) continue;
          int a = 0;
          for (int i = 0; i < 8; ++i) a += (p[i] == 0 && p[(i + 1) % 8] == 1) ? 1 : 0;
          if (a != 1) continue;
          // p[0]=P2 N, p[2]=P4 E, p[4]=P6 S, p[6]=P8 W
          const bool ok = pass == 0 ? (p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0)
                                    : (p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0);
          if (ok) remove.push_back(y * m.width + x);
        }
      }
      for (std::size_t idx : remove) m.bits[idx] = 0;
      changed = changed || !remove.empty();
    }
  }
}

void remove_redundant_simple_points(BinaryMask& m) {
  Grid g(m);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t y = 0; y < m.height; ++y) {
      for (std::size_t x = 0; x < m.width; ++x) {
        if (!m.at(x, y)) continue;
        const auto p = g.ring(static_cast<int>(x), static_cast<int>(y));
        if (neighbor_count(p) < 2) continue;
        if (is_simple(p)) {
          m.set(x, y, false);
          changed = true;
        }
      }
    }
  }
}

}  // namespace

void GrayImage::validate() const {
  require(width > 0 && height > 0, ErrorKind::InvalidInput, "image: dimensions must be > 0");
  require(values.size() == width * height, ErrorKind::InvalidInput, "image: value count mismatch");
  require(std::isfinite(pixel_size) && pixel_size > 0.0, ErrorKind::InvalidInput,
          "image: pixel_size must be > 0");
  for (double v : values) {
    require(std::isfinite(v), ErrorKind::InvalidInput, "image: values must be finite");
  }
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

GrayImage dct_background_subtract(const GrayImage& image, int modes) {
  image.validate();
  require(modes >= 1 && static_cast<std::size_t>(modes) <= std::min(image.width, image.height),
          ErrorKind::InvalidInput, "dct: modes must be in [1, min(width, height)]");
  const auto h = static_cast<Eigen::Index>(image.height), w = static_cast<Eigen::Index>(image.width);
  const Eigen::Map<const RowMatrix> img(image.values.data(), h, w);
  const Eigen::MatrixXd cy = dct_basis(image.height, modes);
  const Eigen::MatrixXd cx = dct_basis(image.width, modes);
  const Eigen::MatrixXd coeffs = (cy * img) * cx.transpose();
  const RowMatrix background = cy.transpose() * coeffs * cx;
  GrayImage out = image;
  Eigen::Map<RowMatrix> res(out.values.data(), h, w);
  res = img - background;
  return out;
}

double otsu_threshold(const GrayImage& image) {
  image.validate();
  const auto [lo_it, hi_it] = std::minmax_element(image.values.begin(), image.values.end());
  const double lo = *lo_it, hi = *hi_it;
  require(hi > lo, ErrorKind::EmptyMask, "otsu: image is constant, no foreground");
  constexpr int kBins = 256;
  const double width = (hi - lo) / kBins;
  std::array<double, kBins> hist{};
  for (double v : image.values) {
    const int bin = std::min(kBins - 1, static_cast<int>((v - lo) / width));
    hist[static_cast<std::size_t>(bin)] += 1.0;
  }
  const double total = static_cast<double>(image.values.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += (i + 0.5) * hist[static_cast<std::size_t>(i)];

  std::array<double, kBins - 1> between{};
  double w0 = 0.0, s0 = 0.0, best = -1.0;
  for (int t = 0; t < kBins - 1; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    s0 += (t + 0.5) * hist[static_cast<std::size_t>(t)];
    const double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) {
      between[static_cast<std::size_t>(t)] = -1.0;
      continue;
    }
    const double m0 = s0 / w0, m1 = (sum_all - s0) / w1;
    between[static_cast<std::size_t>(t)] = w0 * w1 * (m0 - m1) * (m0 - m1);
    best = std::max(best, between[static_cast<std::size_t>(t)]);
  }
  int first = -1, last = -1;
  for (int t = 0; t < kBins - 1; ++t) {
    if (between[static_cast<std::size_t>(t)] >= best * (1.0 - 1e-12)) {
      if (first < 0) first = t;
      last = t;
    }
  }
  const int t = (first + last) / 2;
  return lo + (t + 1) * width;
}

BinaryMask largest_component(const BinaryMask& mask) {
  std::vector<std::size_t> sizes;
  const auto labels = label_components(mask, sizes);
  BinaryMask out(mask.width, mask.height);
  if (sizes.size() <= 1) return out;
  std::size_t best = 1;
  for (std::size_t l = 2; l < sizes.size(); ++l) {
    if (sizes[l] > sizes[best]) best = l;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.bits[i] = static_cast<std::size_t>(labels[i]) == best ? 1 : 0;
  }
  return out;
}

BinaryMask threshold_segment(const GrayImage& image, std::optional<double> threshold) {
  image.validate();
  const double t = threshold ? *threshold : otsu_threshold(image);
  require(std::isfinite(t), ErrorKind::InvalidInput, "threshold: must be finite");
  BinaryMask raw(image.width, image.height);
  for (std::size_t i = 0; i < image.values.size(); ++i) raw.bits[i] = image.values[i] > t ? 1 : 0;
  require(raw.count() > 0, ErrorKind::EmptyMask, "threshold: no pixel above threshold");
  return largest_component(raw);
}

Skeleton skeletonize(const BinaryMask& mask) {
  require(mask.width > 0 && mask.height > 0 && mask.bits.size() == mask.width * mask.height,
          ErrorKind::InvalidInput, "skeletonize: malformed mask");
  require(mask.count() > 0, ErrorKind::EmptyMask, "skeletonize: empty mask");
  std::vector<std::size_t> sizes;
  const auto labels = label_components(mask, sizes);

  Skeleton sk;
  sk.mask = mask;
  zhang_suen(sk.mask);
  remove_redundant_simple_points(sk.mask);

  // Components erased completely keep the pixel nearest their centroid.
  std::vector<std::size_t> survivors(sizes.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (sk.mask.bits[i]) ++survivors[static_cast<std::size_t>(labels[i])];
  }
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    if (survivors[l] > 0) continue;
    double cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (static_cast<std::size_t>(labels[i]) != l) continue;
      cx += static_cast<double>(i % mask.width);
      cy += static_cast<double>(i / mask.width);
    }
    cx /= static_cast<double>(sizes[l]);
    cy /= static_cast<double>(sizes[l]);
    std::size_t pick = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (static_cast<std::size_t>(labels[i]) != l) continue;
      const double dx = static_cast<double>(i % mask.width) - cx;
      const double dy = static_cast<double>(i / mask.width) - cy;
      if (dx * dx + dy * dy < best) {
        best = dx * dx + dy * dy;
        pick = i;
      }
    }
    sk.mask.bits[pick] = 1;
  }

  Grid g(sk.mask);
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!sk.mask.at(x, y)) continue;
      const Pixel p{static_cast<int>(x), static_cast<int>(y)};
      sk.pixels.push_back(p);
      if (neighbor_count(g.ring(p.x, p.y)) == 1) sk.endpoints.push_back(p);
    }
  }
  return sk;
}

Geodesic longest_geodesic(const Skeleton& skeleton, double pixel_size) {
  require(!skeleton.pixels.empty(), ErrorKind::EmptyMask, "geodesic: empty skeleton");
  require(std::isfinite(pixel_size) && pixel_size > 0.0, ErrorKind::InvalidInput,
          "geodesic: pixel_size must be > 0");
  const BinaryMask& m = skeleton.mask;
  const std::size_t n = skeleton.pixels.size();
  std::vector<std::size_t> index(m.bits.size(), n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = skeleton.pixels[i];
    index[static_cast<std::size_t>(p.y) * m.width + static_cast<std::size_t>(p.x)] = i;
  }
  struct Edge {
    std::size_t to;
    double w;
  };
  std::vector<std::vector<Edge>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = skeleton.pixels[i];
    for (const auto& [dx, dy] : kNeighbors) {
      const int nx = p.x + dx, ny = p.y + dy;
      if (nx < 0 || ny < 0 || nx >= static_cast<int>(m.width) || ny >= static_cast<int>(m.height)) continue;
      const std::size_t j = index[static_cast<std::size_t>(ny) * m.width + static_cast<std::size_t>(nx)];
      if (j == n) continue;
      adj[i].push_back({j, (dx != 0 && dy != 0) ? std::numbers::sqrt2 : 1.0});
    }
  }

  // Largest connected component of the skeleton graph.
  std::vector<int> comp(n, -1);
  std::vector<std::size_t> comp_size;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    const int c = static_cast<int>(comp_size.size());
    comp_size.push_back(0);
    std::vector<std::size_t> stack{s};
    comp[s] = c;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      ++comp_size.back();
      for (const auto& e : adj[u]) {
        if (comp[e.to] < 0) {
          comp[e.to] = c;
          stack.push_back(e.to);
        }
      }
    }
  }
  const int main = static_cast<int>(std::max_element(comp_size.begin(), comp_size.end()) - comp_size.begin());

  std::vector<double> dist(n);
  std::vector<std::size_t> prev(n);
  auto dijkstra = [&](std::size_t src) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    std::fill(prev.begin(), prev.end(), n);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[src] = 0.0;
    pq.push({0.0, src});
    while (!pq.empty()) {
      const auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[u]) continue;
      for (const auto& e : adj[u]) {
        const double nd = d + e.w;
        if (nd < dist[e.to]) {
          dist[e.to] = nd;
          prev[e.to] = u;
          pq.push({nd, e.to});
        }
      }
    }
  };

  std::vector<std::size_t> ends;
  for (std::size_t i = 0; i < n; ++i) {
    if (comp[i] == main && adj[i].size() == 1) ends.push_back(i);
  }
  std::size_t best_src = n, best_dst = n;
  double best = -1.0;
  if (ends.size() >= 2) {
    for (std::size_t a = 0; a + 1 < ends.size(); ++a) {
      dijkstra(ends[a]);
      for (std::size_t b = a + 1; b < ends.size(); ++b) {
        if (dist[ends[b]] > best) {
          best = dist[ends[b]];
          best_src = ends[a];
          best_dst = ends[b];
        }
      }
    }
  } else {
    std::size_t start = 0;
    while (comp[start] != main) ++start;
    dijkstra(start);
    std::size_t far = start;
    for (std::size_t i = 0; i < n; ++i) {
      if (comp[i] == main && dist[i] > dist[far]) far = i;
    }
    dijkstra(far);
    std::size_t other = far;
    for (std::size_t i = 0; i < n; ++i) {
      if (comp[i] == main && dist[i] > dist[other]) other = i;
    }
    best_src = far;
    best_dst = other;
    best = dist[other];
  }

  Geodesic g;
  g.disconnected = comp_size.size() > 1;
  g.length = best * pixel_size;
  dijkstra(best_src);
  for (std::size_t v = best_dst; v != n; v = prev[v]) g.path.push_back(skeleton.pixels[v]);
  std::reverse(g.path.begin(), g.path.end());
  return g;
}

double worm_volume(double length_um, double area_um2) {
  require(std::isfinite(length_um) && length_um > 0.0, ErrorKind::InvalidInput,
          "worm volume: length must be > 0");
  require(std::isfinite(area_um2) && area_um2 > 0.0, ErrorKind::InvalidInput,
          "worm volume: area must be > 0");
  return 8.0 / (3.0 * std::numbers::pi) * area_um2 * area_um2 / length_um;
}

GrayImage sum_zstack(std::span<const GrayImage> slices) {
  require(!slices.empty(), ErrorKind::InvalidInput, "z-stack: no slices");
  GrayImage out = slices.front();
  out.validate();
  for (std::size_t s = 1; s < slices.size(); ++s) {
    const auto& sl = slices[s];
    sl.validate();
    require(sl.width == out.width && sl.height == out.height, ErrorKind::InvalidInput,
            "z-stack: slice dimensions differ");
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += sl.values[i];
  }
  return out;
}

double normalized_stress(const GrayImage& zstack_sum, const BinaryMask& mask, double volume,
                         double control_mean) {
  zstack_sum.validate();
  require_same_shape(zstack_sum, mask);
  require(std::isfinite(volume) && volume > 0.0, ErrorKind::InvalidInput,
          "normalized stress: volume must be > 0");
  CompensatedSum total;
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (mask.bits[i]) total.add(zstack_sum.values[i]);
  }
  return total.value() / volume - control_mean;
}

WormMeasurement measure_worm(const GrayImage& zstack_sum, const MorphOptions& options) {
  zstack_sum.validate();
  require(options.dct_modes >= 0, ErrorKind::InvalidInput, "morph: dct_modes must be >= 0");
  const GrayImage processed =
      options.dct_modes > 0 ? dct_background_subtract(zstack_sum, options.dct_modes) : zstack_sum;
  const BinaryMask mask = threshold_segment(processed, options.threshold);
  const Skeleton sk = skeletonize(mask);
  const Geodesic geo = longest_geodesic(sk, zstack_sum.pixel_size);

  WormMeasurement m;
  m.length = geo.length;
  m.disconnected_skeleton = geo.disconnected;
  m.area = static_cast<double>(mask.count()) * zstack_sum.pixel_size * zstack_sum.pixel_size;
  require(m.length > 0.0, ErrorKind::EmptyMask, "morph: skeleton has zero length");
  m.half_width = 2.0 * m.area / (std::numbers::pi * m.length);
  if (options.volume_override) {
    require(std::isfinite(*options.volume_override) && *options.volume_override > 0.0,
            ErrorKind::InvalidInput, "morph: volume override must be > 0");
    m.volume = *options.volume_override;
    m.volume_overridden = true;
  } else {
    m.volume = worm_volume(m.length, m.area);
  }
  CompensatedSum total;
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (mask.bits[i]) total.add(processed.values[i]);
  }
  m.total_fluorescence = total.value();
  m.normalized_stress = normalized_stress(processed, mask, m.volume, options.control_mean);
  return m;
}

}  // namespace qbic::morphometry
