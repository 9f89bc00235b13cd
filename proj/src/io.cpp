#include "qbic/io.hpp"

#include "qbic/common.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

namespace qbic::io {
namespace {

std::string_view trim(std::string_view s) {
  const auto blank = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && blank(s.front())) s.remove_prefix(1);
  while (!s.empty() && blank(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string f(double v) { return format_double(v); }

std::string where(std::string_view source, std::size_t line) {
  return std::string(source) + ":" + std::to_string(line);
}

const std::string& lookup(const KeyValues& kv, std::string_view key) {
  const auto it = kv.find(key);
  require(it != kv.end(), ErrorKind::Parse, "calibration: missing key '" + std::string(key) + "'");
  return it->second;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::string_view what) {
  const std::string_view t = trim(text);
  double v = 0.0;
  const char* first = t.data();
  if (!t.empty() && t.front() == '+') ++first;
  const auto res = std::from_chars(first, t.data() + t.size(), v);
  require(!t.empty() && res.ec == std::errc{} && res.ptr == t.data() + t.size(), ErrorKind::Parse,
          std::string(what) + ": not a number: '" + std::string(t) + "'");
  return v;
}

long long parse_integer(std::string_view text, std::string_view what) {
  const std::string_view t = trim(text);
  long long v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  require(!t.empty() && res.ec == std::errc{} && res.ptr == t.data() + t.size(), ErrorKind::Parse,
          std::string(what) + ": not an integer: '" + std::string(t) + "'");
  return v;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  require(!in.bad(), ErrorKind::Io, "read failed for '" + path.string() + "'");
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for '" + path.string() + "'");
}

std::size_t CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  require(it != header.end(), ErrorKind::Parse, "csv: missing column '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv(std::string_view text, std::string_view source) {
  CsvTable table;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        trim(text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos));
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    require(fields.size() == table.header.size(), ErrorKind::Parse,
            where(source, line_no) + ": expected " + std::to_string(table.header.size()) +
                " fields, found " + std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
  }
  require(!table.header.empty(), ErrorKind::Parse, std::string(source) + ": empty csv");
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path), path.string()); }

std::string format_csv(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += fields[i];
    }
    out += '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  return out;
}

KeyValues parse_key_values(std::string_view text, std::string_view source) {
  KeyValues kv;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string_view::npos && eq > 0, ErrorKind::Parse,
            where(source, line_no) + ": expected key=value");
    kv.insert_or_assign(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  return parse_key_values(read_text(path), path.string());
}

std::string format_key_values(const OrderedKeyValues& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  return out;
}

std::string trace_csv(const thermal::TemperatureTrace& trace) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(trace.samples.size());
  for (const auto& s : trace.samples) rows.push_back({f(s.time_s), f(s.temperature_c)});
  return format_csv({"time_s", "temperature_C"}, rows);
}

thermal::TemperatureTrace read_trace_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t ct = t.column("time_s"), cv = t.column("temperature_C");
  thermal::TemperatureTrace trace;
  for (const auto& r : t.rows) {
    trace.samples.push_back({parse_double(r[ct], "time_s"), parse_double(r[cv], "temperature_C")});
  }
  require(trace.samples.size() >= 2, ErrorKind::Parse, path.string() + ": trace needs two samples");
  trace.sample_period = trace.samples[1].time_s - trace.samples[0].time_s;
  trace.validate();
  return trace;
}

std::string profile_csv(const std::vector<field::ProfilePoint>& profile) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& p : profile) {
    rows.push_back({f(p.position[0]), f(p.position[1]), f(p.position[2]), f(p.b_total), f(p.rabi_hz)});
  }
  return format_csv({"x_m", "y_m", "z_m", "b_total_T", "rabi_Hz"}, rows);
}

std::string spectrum_csv(const odmr::OdmrSpectrum& spectrum) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < spectrum.frequencies.size(); ++i) {
    rows.push_back({f(spectrum.frequencies[i]), f(spectrum.signal[i])});
  }
  return format_csv({"frequency_Hz", "signal"}, rows);
}

odmr::OdmrSpectrum read_spectrum_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t cf = t.column("frequency_Hz"), cs = t.column("signal");
  odmr::OdmrSpectrum s;
  for (const auto& r : t.rows) {
    s.frequencies.push_back(parse_double(r[cf], "frequency_Hz"));
    s.signal.push_back(parse_double(r[cs], "signal"));
  }
  s.validate();
  return s;
}

std::string fit_report(const odmr::SpectrumFit& fit) {
  const auto sd = [&](int i) { return f(std::sqrt(std::max(fit.covariance(i, i), 0.0))); };
  return format_key_values({
      {"center_Hz", f(fit.model.center)},
      {"linewidth_Hz", f(fit.model.linewidth)},
      {"contrast", f(fit.model.contrast)},
      {"splitting_Hz", f(fit.model.splitting)},
      {"baseline", f(fit.model.baseline)},
      {"rms_residual", f(fit.rms_residual)},
      {"center_sigma_Hz", sd(0)},
      {"splitting_sigma_Hz", sd(1)},
      {"linewidth_sigma_Hz", sd(2)},
      {"contrast_sigma", sd(3)},
      {"baseline_sigma", sd(4)},
      {"iterations", std::to_string(fit.iterations)},
  });
}

TrackSet read_tracks_csv(const std::filesystem::path& path, double frame_period) {
  const CsvTable t = read_csv(path);
  const std::size_t cid = t.column("track_id"), cfr = t.column("frame"), ct = t.column("time_s"),
                    cx = t.column("x_um"), cy = t.column("y_um");
  struct Row {
    long long frame;
    tracking::TrackPoint p;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> tracks;
  for (const auto& r : t.rows) {
    if (!tracks.contains(r[cid])) order.push_back(r[cid]);
    tracks[r[cid]].push_back({parse_integer(r[cfr], "frame"),
                              {parse_double(r[ct], "time_s"), parse_double(r[cx], "x_um"),
                               parse_double(r[cy], "y_um")}});
  }
  TrackSet set;
  for (const auto& id : order) {
    auto& rows = tracks[id];
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.frame < b.frame; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
      require(rows[i].frame != rows[i - 1].frame, ErrorKind::Parse,
              path.string() + ": track " + id + " repeats frame " + std::to_string(rows[i].frame));
    }
    tracking::Trajectory raw;
    raw.frame_period = frame_period;
    for (const auto& r : rows) raw.points.push_back(r.p);
    const auto pieces = tracking::split_at_gaps(raw);
    std::size_t kept = 0;
    for (const auto& p : pieces) kept += p.points.size();
    set.dropped_points += raw.points.size() - kept;
    if (pieces.size() > 1) set.gap_splits += pieces.size() - 1;
    for (std::size_t k = 0; k < pieces.size(); ++k) {
      set.segments.push_back({pieces.size() == 1 ? id : id + "." + std::to_string(k + 1), pieces[k]});
    }
  }
  require(!set.segments.empty(), ErrorKind::NoPairs,
          path.string() + ": no track segment with two uniformly spaced frames (check frame period)");
  return set;
}

std::string msd_csv(const tracking::MsdCurve& curve) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < curve.taus.size(); ++i) {
    rows.push_back({f(curve.taus[i]), f(curve.msd_values[i]), std::to_string(curve.counts[i])});
  }
  return format_csv({"tau_s", "msd_um2", "count"}, rows);
}

std::string viability_csv(const tracking::ViabilityReport& report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& w : report.windows) {
    rows.push_back({f(w.start), f(w.end), std::to_string(w.trajectories), f(w.mean), f(w.std_dev),
                    w.skipped ? "skipped" : tracking::to_string(w.verdict), w.single_sample ? "1" : "0",
                    w.skipped ? "1" : "0"});
  }
  return format_csv({"window_start_s", "window_end_s", "trajectories", "mean_msd_um2", "std_msd_um2",
                     "verdict", "single_sample", "skipped"},
                    rows);
}

morphometry::GrayImage read_pgm(const std::filesystem::path& path, double default_pixel_size) {
  const std::string data = read_text(path);
  const std::string name = path.string();
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < data.size()) {
      const char c = data[pos];
      if (c == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos])) && data[pos] != '#') ++pos;
    require(pos > start, ErrorKind::Parse, name + ": truncated pgm header");
    return data.substr(start, pos - start);
  };
  const std::string magic = next_token();
  require(magic == "P2" || magic == "P5", ErrorKind::Parse, name + ": not a P2/P5 pgm");
  const long long w = parse_integer(next_token(), "pgm width");
  const long long h = parse_integer(next_token(), "pgm height");
  const long long maxval = parse_integer(next_token(), "pgm maxval");
  require(w > 0 && h > 0, ErrorKind::Parse, name + ": pgm dimensions must be > 0");
  require(maxval > 0 && maxval <= 65535, ErrorKind::Parse, name + ": pgm maxval must be in 1..65535");

  morphometry::GrayImage im(static_cast<std::size_t>(w), static_cast<std::size_t>(h), default_pixel_size);
  const std::size_t n = im.values.size();
  if (magic == "P2") {
    for (std::size_t i = 0; i < n; ++i) {
      const long long v = parse_integer(next_token(), "pgm pixel");
      require(v >= 0 && v <= maxval, ErrorKind::Parse, name + ": pixel exceeds maxval");
      im.values[i] = static_cast<double>(v);
    }
  } else {
    require(pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos])), ErrorKind::Parse,
            name + ": malformed pgm header");
    ++pos;
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    require(data.size() - pos >= n * bytes, ErrorKind::Parse, name + ": truncated pgm raster");
    for (std::size_t i = 0; i < n; ++i) {
      const auto* p = reinterpret_cast<const unsigned char*>(data.data() + pos + i * bytes);
      const unsigned v = bytes == 2 ? (static_cast<unsigned>(p[0]) << 8) | p[1] : p[0];
      require(v <= static_cast<unsigned>(maxval), ErrorKind::Parse, name + ": pixel exceeds maxval");
      im.values[i] = static_cast<double>(v);
    }
  }

  for (auto meta : {std::filesystem::path(name + ".meta"), std::filesystem::path(path).replace_extension(".meta")}) {
    if (!std::filesystem::exists(meta)) continue;
    const KeyValues kv = read_key_values(meta);
    if (const auto it = kv.find("pixel_size_um"); it != kv.end()) {
      im.pixel_size = parse_double(it->second, "pixel_size_um");
      require(im.pixel_size > 0.0 && std::isfinite(im.pixel_size), ErrorKind::Parse,
              meta.string() + ": pixel_size_um must be > 0");
    }
    break;
  }
  return im;
}

void write_pgm(const std::filesystem::path& path, const morphometry::GrayImage& image, int maxval) {
  image.validate();
  require(maxval > 0 && maxval <= 65535, ErrorKind::InvalidInput, "pgm: maxval must be in 1..65535");
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" +
                    std::to_string(maxval) + "\n";
  const bool wide = maxval > 255;
  out.reserve(out.size() + image.values.size() * (wide ? 2 : 1));
  for (double v : image.values) {
    const auto q = static_cast<unsigned>(std::clamp(std::round(v), 0.0, static_cast<double>(maxval)));
    if (wide) out += static_cast<char>(q >> 8);
    out += static_cast<char>(q & 0xFF);
  }
  write_text(path, out);
  write_text(path.string() + ".meta", format_key_values({{"pixel_size_um", f(image.pixel_size)}}));
}

std::string measurements_csv(const std::vector<SpecimenMeasurement>& rows) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows) {
    const auto& m = r.measurement;
    out.push_back({r.id, f(m.length), f(m.area), f(m.volume), f(m.total_fluorescence), f(m.normalized_stress)});
  }
  return format_csv({"specimen_id", "length_um", "area_um2", "volume_um3", "total_fluor", "normalized_stress"},
                    out);
}

std::string format_calibration(const CalibrationRecord& r) {
  return format_key_values({
      {"name", r.name},
      {"created_utc", r.created_utc},
      {"provenance", r.provenance},
      {"rtd.eta_per_K", f(r.rtd.eta)},
      {"rtd.r_ref_ohm", f(r.rtd.r_ref)},
      {"rtd.t_ref_C", f(r.rtd.t_ref)},
      {"microwave.slope_K_per_mW", f(r.microwave.slope)},
      {"microwave.t_baseline_C", f(r.microwave.t_baseline)},
      {"thermometry.dD_dT_Hz_per_K", f(r.thermometry.dD_dT)},
      {"constants.mu_b_J_per_T", f(r.constants.mu_b)},
      {"constants.g_factor", f(r.constants.g_factor)},
      {"constants.hbar_J_s", f(r.constants.hbar)},
  });
}

CalibrationRecord parse_calibration(const KeyValues& kv) {
  CalibrationRecord r;
  r.name = lookup(kv, "name");
  r.created_utc = lookup(kv, "created_utc");
  r.provenance = lookup(kv, "provenance");
  const auto num = [&](std::string_view key) { return parse_double(lookup(kv, key), key); };
  r.rtd.eta = num("rtd.eta_per_K");
  r.rtd.r_ref = num("rtd.r_ref_ohm");
  r.rtd.t_ref = num("rtd.t_ref_C");
  r.microwave.slope = num("microwave.slope_K_per_mW");
  r.microwave.t_baseline = num("microwave.t_baseline_C");
  r.thermometry.dD_dT = num("thermometry.dD_dT_Hz_per_K");
  r.constants.mu_b = num("constants.mu_b_J_per_T");
  r.constants.g_factor = num("constants.g_factor");
  r.constants.hbar = num("constants.hbar_J_s");
  r.rtd.validate();
  r.microwave.validate();
  r.thermometry.validate();
  return r;
}

}  // namespace qbic::io
