#pragma once

// Quasi-static microwave field of the coplanar waveguide, NV-axis projection
// and the Rabi/field conversion.
//
// Coordinates: x transverse to the line, y along the line, z out of the chip.
// The line is centered on the origin in the z = 0 plane.

#include <array>
#include <complex>
#include <span>
#include <string>
#include <vector>

namespace qbic::field {

using Vec3 = std::array<double, 3>;
using ComplexVec3 = std::array<std::complex<double>, 3>;

inline constexpr double kMu0 = 1.25663706212e-6;  // T m / A

struct PhysicalConstants {
  double mu_b = 9.2740100783e-24;  // J/T
  double g_factor = 2.0028;
  double hbar = 1.054571817e-34;   // J s
};

struct CpwGeometry {
  double line_width = 50e-6;     // m
  double line_length = 5e-3;     // m
  double ground_gap = 70e-6;     // m, clear region between line edge and ground edge
  double ground_width = 200e-6;  // m, modeled width of each return conductor
  double current_amplitude = 0.01;  // A, center-line current at 0 dBm drive
  int discretization = 64;       // filaments per conductor

  void validate() const;
};

/// Straight current segment from `start` to `end`.
struct Filament {
  Vec3 start{};
  Vec3 end{};
  std::complex<double> current{};
};

/// Center line plus two ground returns, each conductor a uniform sheet split
/// into `discretization` filaments. Each return carries minus half the center
/// current.
std::vector<Filament> cpw_filaments(const CpwGeometry& geom);

/// Closest approach that is still evaluated: half the center-line filament pitch.
double singular_radius(const CpwGeometry& geom);

/// Superposed finite-segment Biot-Savart field. Throws Singularity when the
/// point is closer than `min_distance` to any filament.
ComplexVec3 filament_field(std::span<const Filament> filaments, const Vec3& point,
                           double min_distance);

ComplexVec3 biot_savart_field(const CpwGeometry& geom, const Vec3& point);

struct NvOrientation {
  Vec3 axis{1.0, 0.0, 0.0};

  void validate() const;
};

/// Axis tilted `tilt_deg` out of the chip plane, perpendicular to the line.
NvOrientation tilted_nv(double tilt_deg = 30.0);

/// Largest instantaneous |Re(b e^{i phi})| over phase: the semi-major axis of
/// the polarization ellipse.
double peak_amplitude(const ComplexVec3& b);

/// Drive amplitude seen by the NV: the component along the axis is removed
/// and the remaining complex vector is reduced with peak_amplitude.
double project_orthogonal_to_nv(const ComplexVec3& b, const NvOrientation& nv);

/// Omega / 2 pi in hertz.
double rabi_from_field(double b_perp_tesla, const PhysicalConstants& constants = {});
double field_from_rabi(double rabi_hz, const PhysicalConstants& constants = {});

struct ProfilePoint {
  Vec3 position{};
  double b_total = 0.0;  // T, peak amplitude of the full field
  double rabi_hz = 0.0;  // from the NV-projected field
};

ProfilePoint field_at(const CpwGeometry& geom, const NvOrientation& nv, const Vec3& point,
                      const PhysicalConstants& constants = {});

std::vector<ProfilePoint> field_profile(const CpwGeometry& geom, const NvOrientation& nv,
                                        std::span<const Vec3> path,
                                        const PhysicalConstants& constants = {});

std::vector<Vec3> transverse_path(double half_span, double height, int points);
std::vector<Vec3> longitudinal_path(double half_span, double height, int points, double x = 0.0);

struct RabiPowerPoint {
  double sqrt_milliwatt = 0.0;
  double rabi_hz = 0.0;
};

/// Current scales as sqrt(P[mW]) relative to geom.current_amplitude at 1 mW.
std::vector<RabiPowerPoint> rabi_vs_power_scaling(const CpwGeometry& geom,
                                                  std::span<const double> powers_dbm,
                                                  const Vec3& point, const NvOrientation& nv,
                                                  const PhysicalConstants& constants = {});

}  // namespace qbic::field
