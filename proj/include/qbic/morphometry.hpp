#pragma once

// Worm morphometry: DCT background removal, segmentation, thinning, geodesic
// length, ellipsoid volume and fluorescence normalization.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace qbic::morphometry {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  double pixel_size = 1.0;     // um per pixel
  std::vector<double> values;  // row-major, height * width

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, double pixel_size_um = 1.0, double fill = 0.0)
      : width(w), height(h), pixel_size(pixel_size_um), values(w * h, fill) {}

  double& at(std::size_t x, std::size_t y) { return values[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  void validate() const;
};

struct BinaryMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(std::size_t w, std::size_t h) : width(w), height(h), bits(w * h, 0) {}

  bool at(std::size_t x, std::size_t y) const { return bits[y * width + x] != 0; }
  void set(std::size_t x, std::size_t y, bool v) { bits[y * width + x] = v ? 1 : 0; }
  std::size_t count() const;
};

struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Subtracts the inverse orthonormal DCT-II of the lowest modes x modes
/// coefficient block. Exact orthogonal projection, so the operation is
/// idempotent.
GrayImage dct_background_subtract(const GrayImage& image, int modes = 10);

/// Between-class-variance maximizing threshold from a 256-bin histogram over
/// [min, max]. Ties resolve to the middle of the tied run. Returns the upper
/// edge of the last background bin.
double otsu_threshold(const GrayImage& image);

/// Keeps the largest 8-connected component (first in raster order on ties).
BinaryMask largest_component(const BinaryMask& mask);

/// Foreground is value > threshold; nullopt selects Otsu. Only the largest
/// 8-connected component survives. Throws EmptyMask when nothing is above.
BinaryMask threshold_segment(const GrayImage& image, std::optional<double> threshold = std::nullopt);

struct Skeleton {
  BinaryMask mask;
  std::vector<Pixel> pixels;     // raster order
  std::vector<Pixel> endpoints;  // pixels with exactly one skeleton neighbor
};

/// Zhang-Suen thinning followed by sequential removal of redundant simple
/// points, giving a one-pixel-wide 8-connected skeleton. A component that
/// thinning would erase entirely (e.g. a 2x2 block) keeps one pixel.
Skeleton skeletonize(const BinaryMask& mask);

struct Geodesic {
  double length = 0.0;       // um
  std::vector<Pixel> path;   // endpoint to endpoint
  bool disconnected = false; // skeleton had several components; largest used
};

/// Longest shortest path between endpoint pairs (axial step 1, diagonal
/// sqrt 2, times pixel_size). Without two endpoints (closed loop or single
/// pixel) the graph diameter from a double sweep is returned instead.
Geodesic longest_geodesic(const Skeleton& skeleton, double pixel_size);

/// Radially symmetric ellipsoid: V = 8/(3 pi) A^2 / l.
double worm_volume(double length_um, double area_um2);

/// Pixel-wise sum of registered z-slices.
GrayImage sum_zstack(std::span<const GrayImage> slices);

struct MorphOptions {
  int dct_modes = 10;                  // 0 disables background removal
  std::optional<double> threshold;     // nullopt = Otsu
  double control_mean = 0.0;           // intensity per um^3
  std::optional<double> volume_override;  // um^3, hand-corrected volume
};

struct WormMeasurement {
  double length = 0.0;            // um
  double area = 0.0;              // um^2
  double half_width = 0.0;        // um, a = 2A / (pi l)
  double volume = 0.0;            // um^3
  double total_fluorescence = 0.0;
  double normalized_stress = 0.0; // intensity per um^3
  bool volume_overridden = false;
  bool disconnected_skeleton = false;
};

/// Sum of z-sum intensities under the segmentation mask, divided by volume,
/// minus the control mean.
double normalized_stress(const GrayImage& zstack_sum, const BinaryMask& mask, double volume,
                         double control_mean);

/// Full chain on a z-sum projection: background removal, segmentation,
/// skeleton length, area, volume and normalized fluorescence.
WormMeasurement measure_worm(const GrayImage& zstack_sum, const MorphOptions& options = {});

}  // namespace qbic::morphometry
