#pragma once

// Text formats: CSV tables, key=value files, PGM images and the calibration
// record. Numbers are written with 17 significant digits, locale independent.

#include "qbic/field.hpp"
#include "qbic/morphometry.hpp"
#include "qbic/odmr.hpp"
#include "qbic/thermal.hpp"
#include "qbic/tracking.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qbic::io {

std::string format_double(double value);
/// Whole-string decimal parse; throws Parse naming `what` on failure.
double parse_double(std::string_view text, std::string_view what);
long long parse_integer(std::string_view text, std::string_view what);

std::string read_text(const std::filesystem::path& path);
/// Creates missing parent directories.
void write_text(const std::filesystem::path& path, std::string_view content);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; throws Parse when absent.
  std::size_t column(std::string_view name) const;
};

/// Comma separated, first line is the header, blank lines ignored. Every row
/// must have as many fields as the header.
CsvTable parse_csv(std::string_view text, std::string_view source);
CsvTable read_csv(const std::filesystem::path& path);
std::string format_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows);

using KeyValues = std::map<std::string, std::string, std::less<>>;
using OrderedKeyValues = std::vector<std::pair<std::string, std::string>>;

/// `key=value` lines; `#` starts a comment, surrounding blanks are trimmed.
KeyValues parse_key_values(std::string_view text, std::string_view source);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const OrderedKeyValues& entries);

// Thermal traces: time_s,temperature_C
std::string trace_csv(const thermal::TemperatureTrace& trace);
thermal::TemperatureTrace read_trace_csv(const std::filesystem::path& path);

// Field profiles: x_m,y_m,z_m,b_total_T,rabi_Hz
std::string profile_csv(const std::vector<field::ProfilePoint>& profile);

// ODMR spectra: frequency_Hz,signal
std::string spectrum_csv(const odmr::OdmrSpectrum& spectrum);
odmr::OdmrSpectrum read_spectrum_csv(const std::filesystem::path& path);
std::string fit_report(const odmr::SpectrumFit& fit);

struct TrackSegment {
  std::string id;  // track_id, suffixed ".n" when the track was split at gaps
  tracking::Trajectory trajectory;
};

struct TrackSet {
  std::vector<TrackSegment> segments;
  std::size_t gap_splits = 0;       // extra segments created by gaps
  std::size_t dropped_points = 0;   // points left in single-point pieces
};

/// track_id,frame,time_s,x_um,y_um. Rows are grouped by track in order of
/// first appearance and sorted by frame; tracks are split at time gaps.
TrackSet read_tracks_csv(const std::filesystem::path& path, double frame_period);
std::string msd_csv(const tracking::MsdCurve& curve);
std::string viability_csv(const tracking::ViabilityReport& report);

/// P2 or P5, 8 or 16 bit. The pixel size comes from `<image>.meta` (or the
/// same name with the extension replaced by .meta) via `pixel_size_um=`,
/// otherwise `default_pixel_size`.
morphometry::GrayImage read_pgm(const std::filesystem::path& path, double default_pixel_size = 1.0);
/// Binary P5; values are rounded and clamped to [0, maxval]. Writes the
/// pixel-size sidecar next to the image.
void write_pgm(const std::filesystem::path& path, const morphometry::GrayImage& image,
               int maxval = 255);

struct SpecimenMeasurement {
  std::string id;
  morphometry::WormMeasurement measurement;
};

// specimen_id,length_um,area_um2,volume_um3,total_fluor,normalized_stress
std::string measurements_csv(const std::vector<SpecimenMeasurement>& rows);

/// Named constants snapshot persisted by `calib save`.
struct CalibrationRecord {
  std::string name = "default";
  std::string created_utc = "1970-01-01T00:00:00Z";
  std::string provenance = "defaults";
  thermal::RtdCalibration rtd;
  thermal::MicrowaveHeatingModel microwave;
  odmr::ThermometryCoefficient thermometry;
  field::PhysicalConstants constants;
};

std::string format_calibration(const CalibrationRecord& record);
CalibrationRecord parse_calibration(const KeyValues& values);

}  // namespace qbic::io
