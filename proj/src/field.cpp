#include "qbic/field.hpp"

#include "qbic/common.hpp"
#include "qbic/thermal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace qbic::field {
namespace {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// Distance from p to the segment [a, b].
double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = sub(b, a);
  const double len2 = dot(ab, ab);
  double s = len2 > 0.0 ? dot(sub(p, a), ab) / len2 : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  const Vec3 closest{a[0] + s * ab[0], a[1] + s * ab[1], a[2] + s * ab[2]};
  return norm(sub(p, closest));
}

// Uniform sheet [x_lo, x_hi] split into n filaments at strip midpoints.
void add_sheet(std::vector<Filament>& out, double x_center, double width, int n, double length,
               std::complex<double> total_current) {
  const double pitch = width / n;
  for (int i = 0; i < n; ++i) {
    const double x = x_center + (i + 0.5 - 0.5 * n) * pitch;
    out.push_back({{x, -0.5 * length, 0.0}, {x, 0.5 * length, 0.0}, total_current / double(n)});
  }
}

}  // namespace

void CpwGeometry::validate() const {
  require(line_width > 0.0 && line_length > 0.0 && ground_gap > 0.0 && ground_width > 0.0,
          ErrorKind::InvalidInput, "cpw: widths, lengths and gap must be > 0");
  require(discretization > 0, ErrorKind::InvalidInput, "cpw: discretization must be > 0");
  require(std::isfinite(current_amplitude), ErrorKind::InvalidInput, "cpw: current must be finite");
}

std::vector<Filament> cpw_filaments(const CpwGeometry& geom) {
  geom.validate();
  std::vector<Filament> out;
  out.reserve(3 * static_cast<std::size_t>(geom.discretization));
  const std::complex<double> current(geom.current_amplitude, 0.0);
  const double ground_offset = 0.5 * geom.line_width + geom.ground_gap + 0.5 * geom.ground_width;
  add_sheet(out, -ground_offset, geom.ground_width, geom.discretization, geom.line_length, -0.5 * current);
  add_sheet(out, 0.0, geom.line_width, geom.discretization, geom.line_length, current);
  add_sheet(out, ground_offset, geom.ground_width, geom.discretization, geom.line_length, -0.5 * current);
  return out;
}

double singular_radius(const CpwGeometry& geom) {
  return 0.5 * geom.line_width / geom.discretization;
}

ComplexVec3 filament_field(std::span<const Filament> filaments, const Vec3& point,
                           double min_distance) {
  ComplexVec3 b{};
  const double prefactor = kMu0 / (4.0 * std::numbers::pi);
  for (const auto& f : filaments) {
    if (segment_distance(point, f.start, f.end) < min_distance) {
      fail(ErrorKind::Singularity, "biot-savart: point lies on a current filament");
    }
    const Vec3 seg = sub(f.end, f.start);
    const double len = norm(seg);
    if (len == 0.0) continue;
    const Vec3 u{seg[0] / len, seg[1] / len, seg[2] / len};
    const Vec3 r1 = sub(point, f.start);
    const Vec3 r2 = sub(point, f.end);
    const double along = dot(r1, u);
    const Vec3 rho{r1[0] - along * u[0], r1[1] - along * u[1], r1[2] - along * u[2]};
    const double d2 = dot(rho, rho);
    if (d2 == 0.0) {
      // On the filament's axis but beyond its ends: no contribution.
      continue;
    }
    const double span = along / norm(r1) - dot(r2, u) / norm(r2);
    const Vec3 dir = cross(u, rho);
    const double scale = prefactor * span / d2;
    for (int c = 0; c < 3; ++c) b[c] += f.current * (scale * dir[c]);
  }
  return b;
}

ComplexVec3 biot_savart_field(const CpwGeometry& geom, const Vec3& point) {
  const auto filaments = cpw_filaments(geom);
  return filament_field(filaments, point, singular_radius(geom));
}

void NvOrientation::validate() const {
  const double n = norm(axis);
  require(std::abs(n - 1.0) <= 1e-12, ErrorKind::InvalidInput, "nv: axis must be a unit vector");
}

NvOrientation tilted_nv(double tilt_deg) {
  const double t = tilt_deg * std::numbers::pi / 180.0;
  NvOrientation nv;
  nv.axis = {std::cos(t), 0.0, std::sin(t)};
  return nv;
}

double peak_amplitude(const ComplexVec3& b) {
  const Vec3 re{b[0].real(), b[1].real(), b[2].real()};
  const Vec3 im{b[0].imag(), b[1].imag(), b[2].imag()};
  const double rr = dot(re, re);
  const double ii = dot(im, im);
  const double ri = dot(re, im);
  const double half_diff = 0.5 * (rr - ii);
  const double major2 = 0.5 * (rr + ii) + std::sqrt(half_diff * half_diff + ri * ri);
  return std::sqrt(std::max(major2, 0.0));
}

double project_orthogonal_to_nv(const ComplexVec3& b, const NvOrientation& nv) {
  nv.validate();
  const std::complex<double> along = b[0] * nv.axis[0] + b[1] * nv.axis[1] + b[2] * nv.axis[2];
  ComplexVec3 perp{};
  for (int c = 0; c < 3; ++c) perp[c] = b[c] - along * nv.axis[c];
  return peak_amplitude(perp);
}

double rabi_from_field(double b_perp_tesla, const PhysicalConstants& constants) {
  require(std::isfinite(b_perp_tesla) && b_perp_tesla >= 0.0, ErrorKind::InvalidInput,
          "rabi_from_field: field must be >= 0");
  const double omega = 0.5 * constants.mu_b * constants.g_factor * b_perp_tesla / constants.hbar;
  return omega / (2.0 * std::numbers::pi);
}

double field_from_rabi(double rabi_hz, const PhysicalConstants& constants) {
  require(std::isfinite(rabi_hz) && rabi_hz >= 0.0, ErrorKind::InvalidInput,
          "field_from_rabi: rabi frequency must be >= 0");
  const double omega = 2.0 * std::numbers::pi * rabi_hz;
  return 2.0 * constants.hbar * omega / (constants.mu_b * constants.g_factor);
}

ProfilePoint field_at(const CpwGeometry& geom, const NvOrientation& nv, const Vec3& point,
                      const PhysicalConstants& constants) {
  const auto b = biot_savart_field(geom, point);
  return {point, peak_amplitude(b), rabi_from_field(project_orthogonal_to_nv(b, nv), constants)};
}

std::vector<ProfilePoint> field_profile(const CpwGeometry& geom, const NvOrientation& nv,
                                        std::span<const Vec3> path,
                                        const PhysicalConstants& constants) {
  nv.validate();
  const auto filaments = cpw_filaments(geom);
  const double radius = singular_radius(geom);
  std::vector<ProfilePoint> out;
  out.reserve(path.size());
  for (std::size_t i = 0; i < path.size(); ++i) {
    ComplexVec3 b;
    try {
      b = filament_field(filaments, path[i], radius);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(e.what()) + " (path index " + std::to_string(i) + ")");
    }
    out.push_back({path[i], peak_amplitude(b), rabi_from_field(project_orthogonal_to_nv(b, nv), constants)});
  }
  return out;
}

std::vector<Vec3> transverse_path(double half_span, double height, int points) {
  require(points >= 2, ErrorKind::InvalidInput, "path: need at least two points");
  std::vector<Vec3> path;
  for (int i = 0; i < points; ++i) {
    // Symmetric construction so x_i == -x_{n-1-i} exactly.
    const double frac = (2.0 * i - (points - 1)) / static_cast<double>(points - 1);
    path.push_back({half_span * frac, 0.0, height});
  }
  return path;
}

std::vector<Vec3> longitudinal_path(double half_span, double height, int points, double x) {
  auto path = transverse_path(half_span, height, points);
  for (auto& p : path) {
    p[1] = p[0];
    p[0] = x;
  }
  return path;
}

std::vector<RabiPowerPoint> rabi_vs_power_scaling(const CpwGeometry& geom,
                                                  std::span<const double> powers_dbm,
                                                  const Vec3& point, const NvOrientation& nv,
                                                  const PhysicalConstants& constants) {
  require(!powers_dbm.empty(), ErrorKind::InvalidInput, "rabi scaling: empty power list");
  std::vector<RabiPowerPoint> out;
  out.reserve(powers_dbm.size());
  for (double p : powers_dbm) {
    const double root = std::sqrt(thermal::dbm_to_milliwatts(p));
    CpwGeometry driven = geom;
    driven.current_amplitude = geom.current_amplitude * root;
    const auto b = biot_savart_field(driven, point);
    out.push_back({root, rabi_from_field(project_orthogonal_to_nv(b, nv), constants)});
  }
  return out;
}

}  // namespace qbic::field
