#include "qbic/cli.hpp"

#include "qbic/field.hpp"
#include "qbic/io.hpp"
#include "qbic/morphometry.hpp"
#include "qbic/odmr.hpp"
#include "qbic/parallel.hpp"
#include "qbic/thermal.hpp"
#include "qbic/tracking.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>

namespace qbic::cli {
namespace {

namespace fs = std::filesystem;
using io::format_double;

std::string quote(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (c == '\n') {
      out += "\\n";
    } else if (c == '\r') {
      out += "\\r";
    } else {
      out += c;
    }
  }
  return out;
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const auto piece = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
    if (!piece.empty()) out.emplace_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Value lookup: explicit flag, then --set, then --config, then default.
class Flags {
 public:
  explicit Flags(CLI::App* app) : app_(app) {}

  void add(const std::string& name, const std::string& help) {
    auto& slot = scalars_[name];
    options_[name] = app_->add_option("--" + name, slot, help);
  }
  void add_list(const std::string& name, const std::string& help) {
    auto& slot = lists_[name];
    options_[name] = app_->add_option("--" + name, slot, help)->delimiter(',');
  }
  void add_positional(const std::string& name, const std::string& help) {
    auto& slot = lists_[name];
    options_[name] = app_->add_option(name, slot, help);
  }
  void add_switch(const std::string& name, const std::string& help) {
    options_[name] = app_->add_flag("--" + name, switches_[name], help);
  }

  void bind(const io::KeyValues* settings) { settings_ = settings; }

  std::optional<std::string> find(const std::string& name) const {
    if (const auto it = options_.find(name); it != options_.end() && it->second->count() > 0) {
      if (const auto s = scalars_.find(name); s != scalars_.end()) return s->second;
    }
    if (const auto it = settings_->find(name); it != settings_->end()) return it->second;
    return std::nullopt;
  }
  bool has(const std::string& name) const { return find(name).has_value() || given(name); }
  bool given(const std::string& name) const {
    const auto it = options_.find(name);
    return it != options_.end() && it->second->count() > 0;
  }

  double num(const std::string& name, double fallback) const {
    const auto v = find(name);
    return v ? io::parse_double(*v, "--" + name) : fallback;
  }
  long long integer(const std::string& name, long long fallback) const {
    const auto v = find(name);
    return v ? io::parse_integer(*v, "--" + name) : fallback;
  }
  std::string text(const std::string& name, const std::string& fallback) const {
    const auto v = find(name);
    return v ? *v : fallback;
  }
  bool flag(const std::string& name) const {
    if (given(name)) return switches_.at(name);
    const auto v = find(name);
    if (!v) return false;
    require(*v == "true" || *v == "false" || *v == "1" || *v == "0", ErrorKind::Parse,
            "--" + name + ": expected true/false");
    return *v == "true" || *v == "1";
  }
  std::vector<std::string> list(const std::string& name, std::vector<std::string> fallback) const {
    if (given(name)) return lists_.at(name);
    if (const auto it = settings_->find(name); it != settings_->end()) return split_list(it->second);
    return fallback;
  }
  std::vector<double> numbers(const std::string& name, std::vector<double> fallback) const {
    if (!given(name) && !settings_->contains(name)) return fallback;
    std::vector<double> out;
    for (const auto& s : list(name, {})) out.push_back(io::parse_double(s, "--" + name));
    return out;
  }

 private:
  CLI::App* app_;
  const io::KeyValues* settings_ = nullptr;
  std::map<std::string, std::string> scalars_;
  std::map<std::string, std::vector<std::string>> lists_;
  std::map<std::string, bool> switches_;
  std::map<std::string, CLI::Option*> options_;
};

struct Context {
  fs::path out_dir;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::ostream* out = nullptr;

  void write(const std::string& name, std::string_view content) const {
    const fs::path p = out_dir / name;
    io::write_text(p, content);
    *out << "wrote " << p.string() << "\n";
  }
};

using Handler = std::function<void(const Flags&, const Context&)>;

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Flags> flags;
  Handler handler;
};

// ---- shared parameter groups ----

void add_plant_flags(Flags& f) {
  f.add("c-v", "heat capacity C_v, J/K (0.26)");
  f.add("k", "conductive loss rate k, J/K/s (0.0175)");
  f.add("r-heater", "heater resistance, ohm (100)");
  f.add("t-ambient", "ambient temperature T0, C (22)");
  f.add("duty-cycle", "heater duty cycle e in [0,1] (1)");
  f.add("t-start", "initial temperature, C (T0)");
}

thermal::ThermalPlant plant_from(const Flags& f) {
  thermal::ThermalPlant p;
  p.c_v = f.num("c-v", p.c_v);
  p.k = f.num("k", p.k);
  p.r_heater = f.num("r-heater", p.r_heater);
  p.t_ambient = f.num("t-ambient", p.t_ambient);
  p.duty_cycle = f.num("duty-cycle", p.duty_cycle);
  p.temperature = f.num("t-start", p.t_ambient);
  p.validate();
  return p;
}

void add_geometry_flags(Flags& f) {
  f.add("line-width", "center line width, m (50e-6)");
  f.add("line-length", "line length, m (5e-3)");
  f.add("ground-gap", "gap between line and ground, m (70e-6)");
  f.add("ground-width", "modeled ground width, m (200e-6)");
  f.add("current-a", "center-line current at 0 dBm, A (0.01)");
  f.add("filaments", "filaments per conductor (64)");
  f.add("tilt-deg", "NV tilt from the chip plane, degrees (30)");
  f.add("g-factor", "NV g-factor (2.0028)");
}

field::CpwGeometry geometry_from(const Flags& f) {
  field::CpwGeometry g;
  g.line_width = f.num("line-width", g.line_width);
  g.line_length = f.num("line-length", g.line_length);
  g.ground_gap = f.num("ground-gap", g.ground_gap);
  g.ground_width = f.num("ground-width", g.ground_width);
  g.current_amplitude = f.num("current-a", g.current_amplitude);
  g.discretization = static_cast<int>(f.integer("filaments", g.discretization));
  g.validate();
  return g;
}

field::PhysicalConstants constants_from(const Flags& f) {
  field::PhysicalConstants c;
  c.g_factor = f.num("g-factor", c.g_factor);
  return c;
}

void add_model_flags(Flags& f) {
  f.add("center", "zero-field splitting D, Hz (2.870e9)");
  f.add("splitting", "doublet splitting, Hz (12e6)");
  f.add("linewidth", "Lorentzian FWHM, Hz (6e6)");
  f.add("contrast", "total dip contrast (0.05)");
  f.add("baseline", "off-resonance signal (1)");
  f.add("f-start", "sweep start, Hz (2.84e9)");
  f.add("f-stop", "sweep stop, Hz (2.90e9)");
  f.add("points", "sweep points (121)");
  f.add("shots", "shots per point; inf for noiseless (1e4, odmr-thermo 1e6)");
}

odmr::DipModel model_from(const Flags& f) {
  odmr::DipModel m;
  m.center = f.num("center", m.center);
  m.splitting = f.num("splitting", m.splitting);
  m.linewidth = f.num("linewidth", m.linewidth);
  m.contrast = f.num("contrast", m.contrast);
  m.baseline = f.num("baseline", m.baseline);
  m.validate();
  return m;
}

std::vector<double> frequencies_from(const Flags& f) {
  return odmr::linear_grid(f.num("f-start", 2.840e9), f.num("f-stop", 2.900e9),
                           static_cast<int>(f.integer("points", 121)));
}

std::string sanitize(std::string id) {
  for (char& c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return id;
}

// ---- subcommands ----

void thermal_sim(const Flags& f, const Context& ctx) {
  const auto plant = plant_from(f);
  const double v0 = f.num("v0", 5.0);
  const double duration = f.num("duration", 300.0);
  const double period = f.num("sample-period", 0.1);
  const std::string integrator = f.text("integrator", "exact");
  require(integrator == "exact" || integrator == "euler", ErrorKind::InvalidInput,
          "--integrator must be exact or euler");
  thermal::TemperatureTrace trace;
  if (integrator == "exact") {
    trace = thermal::simulate_heating_curve(plant, v0, duration, period);
  } else {
    require(duration > 0.0 && period > 0.0, ErrorKind::InvalidInput, "duration and sample period must be > 0");
    trace.sample_period = period;
    auto state = plant;
    const auto steps = static_cast<std::size_t>(std::floor(duration / period + 1e-9));
    trace.samples.push_back({0.0, state.temperature});
    for (std::size_t i = 1; i <= steps; ++i) {
      state = thermal::plant_step(state, v0, period, 0.0, thermal::Integrator::Euler);
      trace.samples.push_back({static_cast<double>(i) * period, state.temperature});
    }
  }
  double max_dev = 0.0;
  for (const auto& s : trace.samples) {
    max_dev = std::max(max_dev, std::abs(s.temperature_c -
                                         thermal::heating_curve_value(plant, v0, plant.temperature, s.time_s)));
  }
  const double steady = plant.equilibrium(v0);
  const double final_c = trace.samples.back().temperature_c;
  ctx.write("thermal_sim.csv", io::trace_csv(trace));
  ctx.write("thermal_sim.txt", io::format_key_values({
                                   {"v0_V", format_double(v0)},
                                   {"time_constant_s", format_double(plant.time_constant())},
                                   {"steady_state_C", format_double(steady)},
                                   {"final_C", format_double(final_c)},
                                   {"final_rel_to_steady", format_double((final_c - steady) / steady)},
                                   {"max_dev_from_closed_form_K", format_double(max_dev)},
                                   {"integrator", integrator},
                               }));
}

void thermal_pid(const Flags& f, const Context& ctx) {
  auto plant = plant_from(f);
  thermal::PidController pid;
  pid.kp = f.num("kp", pid.kp);
  pid.ki = f.num("ki", pid.ki);
  pid.kd = f.num("kd", pid.kd);
  pid.output_min = f.num("output-min", pid.output_min);
  pid.output_max = f.num("output-max", pid.output_max);
  pid.validate();

  thermal::ClosedLoopConfig cfg;
  cfg.duration = f.num("duration", 600.0);
  cfg.dt = f.num("dt", 0.1);
  cfg.sensor_noise_sigma = f.num("noise", 0.01);
  cfg.seed = ctx.seed;
  const double setpoint = f.num("setpoint", 30.0);
  const double step = f.num("step", 1.5);
  const double period = f.num("period", 120.0);
  if (period > 0.0 && step != 0.0) {
    cfg.schedule = thermal::alternating_schedule(setpoint, step, period, cfg.duration);
  } else {
    cfg.schedule = {{0.0, setpoint}};
  }
  if (f.has("mw-power-dbm")) {
    thermal::MicrowaveHeatingModel mw;
    mw.slope = f.num("mw-slope", mw.slope);
    mw.t_baseline = f.num("mw-baseline", mw.t_baseline);
    mw.validate();
    cfg.extra_power_w = thermal::microwave_heating_power(mw, plant, f.num("mw-power-dbm", 0.0));
  }
  if (f.has("addition-time")) {
    thermal::LiquidAddition add;
    add.time_s = f.num("addition-time", 0.0);
    add.added_volume_ul = f.num("addition-volume-ul", 50.0);
    add.added_temp_c = f.num("addition-temp-c", 22.0);
    add.sample_volume_ul = f.num("sample-volume-ul", 400.0);
    cfg.additions.push_back(add);
  }
  const auto run = thermal::run_closed_loop(plant, pid, cfg);

  // Spread of the measured trace over the final minute.
  const auto& ms = run.measured.samples;
  const double t_end = ms.back().time_s;
  std::vector<double> tail;
  for (const auto& s : ms) {
    if (s.time_s >= t_end - 60.0) tail.push_back(s.temperature_c);
  }
  const double mean = compensated_sum(tail) / static_cast<double>(tail.size());
  CompensatedSum ss;
  for (double v : tail) ss.add((v - mean) * (v - mean));
  const double sd = tail.size() > 1 ? std::sqrt(ss.value() / static_cast<double>(tail.size() - 1)) : 0.0;

  std::vector<std::vector<std::string>> drive;
  for (std::size_t i = 0; i < run.drive_v.size(); ++i) {
    drive.push_back({format_double(run.actual.samples[i].time_s), format_double(run.drive_v[i])});
  }
  ctx.write("thermal_pid.csv", io::trace_csv(run.measured));
  ctx.write("thermal_pid_actual.csv", io::trace_csv(run.actual));
  ctx.write("thermal_pid_drive.csv", io::format_csv({"time_s", "drive_V"}, drive));
  ctx.write("thermal_pid.txt",
            io::format_key_values({
                {"final_setpoint_C", format_double(thermal::setpoint_at(cfg.schedule, t_end))},
                {"last_60s_mean_C", format_double(mean)},
                {"last_60s_std_K", format_double(sd)},
                {"extra_power_W", format_double(cfg.extra_power_w)},
                {"seed", std::to_string(ctx.seed)},
            }));
}

void thermal_fit(const Flags& f, const Context& ctx) {
  const auto specs = f.list("trace", {});
  require(!specs.empty(), ErrorKind::InvalidInput, "--trace FILE@V0 is required");
  const auto plant = plant_from(f);
  std::vector<thermal::DrivenTrace> traces;
  for (const auto& spec : specs) {
    const auto at = spec.rfind('@');
    require(at != std::string::npos && at > 0, ErrorKind::Parse, "--trace expects FILE@V0, got '" + spec + "'");
    thermal::DrivenTrace d;
    d.trace = io::read_trace_csv(spec.substr(0, at));
    d.v0 = io::parse_double(spec.substr(at + 1), "--trace V0");
    d.duty_cycle = plant.duty_cycle;
    d.r_heater = plant.r_heater;
    d.t_ambient = plant.t_ambient;
    traces.push_back(std::move(d));
  }
  const auto fit = thermal::fit_plant_parameters(traces);
  ctx.write("thermal_fit.txt", io::format_key_values({
                                   {"c_v_J_per_K", format_double(fit.c_v)},
                                   {"k_J_per_K_s", format_double(fit.k)},
                                   {"c_v_sigma", format_double(fit.c_v_sigma)},
                                   {"k_sigma", format_double(fit.k_sigma)},
                                   {"time_constant_s", format_double(fit.c_v / fit.k)},
                                   {"rms_residual_K", format_double(fit.rms_residual_k)},
                                   {"iterations", std::to_string(fit.iterations)},
                                   {"traces", std::to_string(traces.size())},
                               }));
}

void mw_heating(const Flags& f, const Context& ctx) {
  std::vector<thermal::PowerTemperature> points;
  const auto specs = f.list("point", {});
  if (specs.empty()) {
    points = thermal::reference_effective_temperatures();
  } else {
    for (const auto& s : specs) {
      const auto colon = s.find(':');
      require(colon != std::string::npos, ErrorKind::Parse, "--point expects DBM:CELSIUS, got '" + s + "'");
      points.push_back({io::parse_double(s.substr(0, colon), "--point power"),
                        io::parse_double(s.substr(colon + 1), "--point temperature")});
    }
  }
  const auto model = thermal::fit_microwave_heating(points);
  io::OrderedKeyValues kv{{"slope_K_per_mW", format_double(model.slope)},
                          {"t_baseline_C", format_double(model.t_baseline)}};
  double worst = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double r = points[i].temperature_c - thermal::effective_temperature(model, points[i].power_dbm);
    worst = std::max(worst, std::abs(r));
    kv.push_back({"residual_" + std::to_string(i) + "_K", format_double(r)});
  }
  kv.push_back({"max_abs_residual_K", format_double(worst)});
  std::vector<std::vector<std::string>> rows;
  for (double p : f.numbers("predict", {14.0, 21.8, 25.6})) {
    const double t = thermal::effective_temperature(model, p);
    rows.push_back({format_double(p), format_double(thermal::dbm_to_milliwatts(p)), format_double(t),
                    format_double(t - model.t_baseline)});
  }
  ctx.write("mw_heating.txt", io::format_key_values(kv));
  ctx.write("mw_heating_predictions.csv",
            io::format_csv({"power_dBm", "power_mW", "temperature_C", "rise_K"}, rows));
}

void field_profile(const Flags& f, const Context& ctx) {
  const auto geom = geometry_from(f);
  const auto nv = field::tilted_nv(f.num("tilt-deg", 30.0));
  const std::string kind = f.text("path", "transverse");
  const double height = f.num("height", 10e-6);
  const int points = static_cast<int>(f.integer("samples", 61));
  std::vector<field::Vec3> path;
  if (kind == "transverse") {
    path = field::transverse_path(f.num("half-span", 150e-6), height, points);
  } else if (kind == "longitudinal") {
    path = field::longitudinal_path(f.num("half-span", 2.5e-3), height, points, f.num("x", 0.0));
  } else {
    fail(ErrorKind::InvalidInput, "--path must be transverse or longitudinal");
  }
  ctx.write("field_profile.csv", io::profile_csv(field::field_profile(geom, nv, path, constants_from(f))));
}

void rabi(const Flags& f, const Context& ctx) {
  const auto constants = constants_from(f);
  io::OrderedKeyValues kv;
  for (double b : f.numbers("field-t", {1e-4})) {
    kv.push_back({"rabi_Hz_at_" + format_double(b) + "_T", format_double(field::rabi_from_field(b, constants))});
  }
  for (double r : f.numbers("rabi-hz", {})) {
    kv.push_back({"field_T_at_" + format_double(r) + "_Hz", format_double(field::field_from_rabi(r, constants))});
  }
  const auto geom = geometry_from(f);
  const auto nv = field::tilted_nv(f.num("tilt-deg", 30.0));
  const field::Vec3 point{f.num("x", 0.0), f.num("y", 0.0), f.num("height", 10e-6)};
  const auto powers = f.numbers("powers", {0.0, 5.0, 10.0, 15.0, 20.0, 25.0});
  const auto scaling = field::rabi_vs_power_scaling(geom, powers, point, nv, constants);
  std::vector<double> xs, ys;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < scaling.size(); ++i) {
    xs.push_back(scaling[i].sqrt_milliwatt);
    ys.push_back(scaling[i].rabi_hz);
    rows.push_back({format_double(powers[i]), format_double(scaling[i].sqrt_milliwatt),
                    format_double(scaling[i].rabi_hz)});
  }
  const auto line = fit_line_through_origin(xs, ys);
  kv.push_back({"rabi_per_sqrt_mW_Hz", format_double(line.slope)});
  kv.push_back({"r_squared", format_double(line.r_squared)});
  ctx.write("rabi.txt", io::format_key_values(kv));
  ctx.write("rabi_power.csv", io::format_csv({"power_dBm", "sqrt_mW", "rabi_Hz"}, rows));
}

void odmr_synth(const Flags& f, const Context& ctx) {
  const auto model = model_from(f);
  const auto freqs = frequencies_from(f);
  const double shots = f.num("shots", 1e4);
  ctx.write("odmr_spectrum.csv", io::spectrum_csv(odmr::synthesize_spectrum(model, freqs, shots, ctx.seed)));
  if (!f.flag("precision")) return;
  const auto shots_list = f.numbers("precision-shots", {1e4, 4e4, 1.6e5, 6.4e5});
  const auto repeats = static_cast<int>(f.integer("repeats", 50));
  const auto pts = odmr::precision_scaling(model, freqs, shots_list, repeats, ctx.seed);
  std::vector<std::vector<std::string>> rows;
  std::vector<double> lx, ly;
  for (const auto& p : pts) {
    rows.push_back({format_double(p.shots), format_double(p.center_std), std::to_string(p.successful_fits)});
    if (std::isfinite(p.center_std) && p.center_std > 0.0) {
      lx.push_back(std::log10(p.shots));
      ly.push_back(std::log10(p.center_std));
    }
  }
  ctx.write("odmr_precision.csv", io::format_csv({"shots", "center_std_Hz", "successful_fits"}, rows));
  require(lx.size() >= 2, ErrorKind::FitFailure, "precision scaling: fewer than two usable shot counts");
  ctx.write("odmr_precision.txt",
            io::format_key_values({{"loglog_slope", format_double(fit_line(lx, ly).slope)},
                                   {"repeats", std::to_string(repeats)}}));
}

void odmr_fit(const Flags& f, const Context& ctx) {
  require(f.has("spectrum"), ErrorKind::InvalidInput, "--spectrum FILE is required");
  const auto spectrum = io::read_spectrum_csv(f.text("spectrum", ""));
  odmr::FitOptions opt;
  opt.single_dip = f.flag("single-dip");
  ctx.write("odmr_fit.txt", io::fit_report(odmr::fit_spectrum(spectrum, std::nullopt, opt)));
}

void odmr_thermo(const Flags& f, const Context& ctx) {
  odmr::ThermometryCoefficient coeff;
  coeff.dD_dT = f.num("dd-dt", coeff.dD_dT);
  odmr::FitOptions opt;
  opt.single_dip = f.flag("single-dip");
  odmr::OdmrSpectrum a, b;
  const bool from_files = f.has("spectrum-a") || f.has("spectrum-b");
  double programmed = std::numeric_limits<double>::quiet_NaN();
  if (from_files) {
    require(f.has("spectrum-a") && f.has("spectrum-b"), ErrorKind::InvalidInput,
            "--spectrum-a and --spectrum-b go together");
    a = io::read_spectrum_csv(f.text("spectrum-a", ""));
    b = io::read_spectrum_csv(f.text("spectrum-b", ""));
  } else {
    auto model = model_from(f);
    const auto freqs = frequencies_from(f);
    const double shots = f.num("shots", 1e6);
    programmed = f.num("shift-k", 2.0);
    a = odmr::synthesize_spectrum(model, freqs, shots, derive_seed(ctx.seed, 0));
    model.center += coeff.dD_dT * programmed;
    b = odmr::synthesize_spectrum(model, freqs, shots, derive_seed(ctx.seed, 1));
    ctx.write("odmr_thermo_a.csv", io::spectrum_csv(a));
    ctx.write("odmr_thermo_b.csv", io::spectrum_csv(b));
  }
  const auto shift = odmr::temperature_shift_from_spectra(a, b, coeff, opt);
  io::OrderedKeyValues kv{{"delta_T_K", format_double(shift.delta_t)},
                          {"uncertainty_K", format_double(shift.uncertainty)},
                          {"center_a_Hz", format_double(shift.fit_a.model.center)},
                          {"center_b_Hz", format_double(shift.fit_b.model.center)},
                          {"dD_dT_Hz_per_K", format_double(coeff.dD_dT)}};
  if (!from_files) kv.push_back({"programmed_delta_T_K", format_double(programmed)});
  ctx.write("odmr_thermo.txt", io::format_key_values(kv));
}

io::TrackSet load_tracks(const Flags& f) {
  require(f.has("tracks"), ErrorKind::InvalidInput, "--tracks FILE is required");
  return io::read_tracks_csv(f.text("tracks", ""), f.num("frame-period", tracking::kDefaultFramePeriod));
}

void msd(const Flags& f, const Context& ctx) {
  const auto set = load_tracks(f);
  const double fp = f.num("frame-period", tracking::kDefaultFramePeriod);
  const double max_tau = f.num("max-tau", 10.0 * fp);
  std::vector<tracking::Trajectory> trajs;
  for (const auto& s : set.segments) trajs.push_back(s.trajectory);
  ctx.write("msd.csv", io::msd_csv(tracking::ensemble_msd_curve(trajs, max_tau, ctx.jobs)));
  if (f.flag("per-track")) {
    std::vector<std::string> bodies(trajs.size());
    parallel_for(trajs.size(), ctx.jobs, [&](std::size_t i) {
      const double limit = std::min(max_tau, trajs[i].span());
      bodies[i] = io::msd_csv(tracking::msd_curve(trajs[i], limit));
    });
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      ctx.write("msd_track_" + sanitize(set.segments[i].id) + ".csv", bodies[i]);
    }
  }
  ctx.write("msd_tracks.txt", io::format_key_values({
                                  {"segments", std::to_string(set.segments.size())},
                                  {"gap_splits", std::to_string(set.gap_splits)},
                                  {"dropped_points", std::to_string(set.dropped_points)},
                              }));
}

void viability(const Flags& f, const Context& ctx) {
  const auto set = load_tracks(f);
  std::vector<tracking::Trajectory> trajs;
  for (const auto& s : set.segments) trajs.push_back(s.trajectory);
  tracking::ViabilityOptions o;
  o.tau = f.num("tau", o.tau);
  o.window = f.num("window", o.window);
  o.noise_floor = f.num("noise-floor", o.noise_floor);
  o.impaired_fraction = f.num("impaired-fraction", o.impaired_fraction);
  const auto report = tracking::ensemble_viability(trajs, o);
  std::size_t skipped = 0;
  for (const auto& w : report.windows) skipped += w.skipped ? 1 : 0;
  ctx.write("viability.csv", io::viability_csv(report));
  ctx.write("viability.txt", io::format_key_values({
                                 {"tau_effective_s", format_double(report.tau_effective)},
                                 {"noise_floor_um2", format_double(report.noise_floor)},
                                 {"baseline_mean_um2", format_double(report.baseline_mean)},
                                 {"impaired_fraction", format_double(o.impaired_fraction)},
                                 {"windows", std::to_string(report.windows.size())},
                                 {"skipped_windows", std::to_string(skipped)},
                             }));
}

void morph(const Flags& f, const Context& ctx) {
  const auto specimens = f.list("specimens", {});
  require(!specimens.empty(), ErrorKind::InvalidInput, "morph: give at least one frame.pgm[:slice.pgm...]");
  morphometry::MorphOptions base;
  base.dct_modes = static_cast<int>(f.integer("dct-modes", base.dct_modes));
  const std::string thr = f.text("threshold", "otsu");
  if (thr != "otsu") base.threshold = io::parse_double(thr, "--threshold");
  base.control_mean = f.num("control-mean", 0.0);
  std::map<std::string, double> overrides;
  for (const auto& s : f.list("volume-override", {})) {
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::Parse, "--volume-override expects ID=UM3");
    overrides[s.substr(0, eq)] = io::parse_double(s.substr(eq + 1), "--volume-override");
  }
  const bool pixel_override = f.has("pixel-size");
  const double pixel_size = f.num("pixel-size", 1.0);

  std::vector<io::SpecimenMeasurement> rows(specimens.size());
  parallel_for(specimens.size(), ctx.jobs, [&](std::size_t i) {
    std::vector<morphometry::GrayImage> slices;
    std::size_t start = 0;
    const std::string& spec = specimens[i];
    while (start <= spec.size()) {
      const auto colon = spec.find(':', start);
      const std::string file = spec.substr(start, colon == std::string::npos ? std::string::npos : colon - start);
      require(!file.empty(), ErrorKind::InvalidInput, "morph: empty slice path in '" + spec + "'");
      slices.push_back(io::read_pgm(file, pixel_size));
      if (pixel_override) slices.back().pixel_size = pixel_size;
      if (colon == std::string::npos) break;
      start = colon + 1;
    }
    const std::string first = spec.substr(0, spec.find(':'));
    rows[i].id = fs::path(first).stem().string();
    auto opts = base;
    if (const auto it = overrides.find(rows[i].id); it != overrides.end()) opts.volume_override = it->second;
    rows[i].measurement = morphometry::measure_worm(morphometry::sum_zstack(slices), opts);
  });
  ctx.write("morph.csv", io::measurements_csv(rows));
}

void add_calibration_flags(Flags& f) {
  f.add("name", "record name (default)");
  f.add("created-utc", "creation timestamp, ISO 8601 (1970-01-01T00:00:00Z)");
  f.add("provenance", "free-text provenance note");
  f.add("eta", "RTD eta, 1/K (0.002)");
  f.add("r-ref", "RTD reference resistance, ohm (100)");
  f.add("t-ref", "RTD reference temperature, C (20)");
  f.add("mw-slope", "microwave heating slope, K/mW (fit of reference points)");
  f.add("mw-baseline", "microwave heating baseline, C (fit of reference points)");
  f.add("dd-dt", "dD/dT, Hz/K (-74e3)");
  f.add("g-factor", "NV g-factor (2.0028)");
  f.add("mu-b", "Bohr magneton, J/T");
  f.add("hbar", "reduced Planck constant, J s");
}

void calib_save(const Flags& f, const Context& ctx) {
  io::CalibrationRecord r;
  const auto fitted = thermal::fit_microwave_heating(thermal::reference_effective_temperatures());
  r.name = f.text("name", r.name);
  r.created_utc = f.text("created-utc", r.created_utc);
  r.provenance = f.text("provenance", "rtd nominal; microwave fit of reference effective temperatures");
  r.rtd.eta = f.num("eta", r.rtd.eta);
  r.rtd.r_ref = f.num("r-ref", r.rtd.r_ref);
  r.rtd.t_ref = f.num("t-ref", r.rtd.t_ref);
  r.microwave.slope = f.num("mw-slope", fitted.slope);
  r.microwave.t_baseline = f.num("mw-baseline", fitted.t_baseline);
  r.thermometry.dD_dT = f.num("dd-dt", r.thermometry.dD_dT);
  r.constants.g_factor = f.num("g-factor", r.constants.g_factor);
  r.constants.mu_b = f.num("mu-b", r.constants.mu_b);
  r.constants.hbar = f.num("hbar", r.constants.hbar);
  r.rtd.validate();
  r.microwave.validate();
  r.thermometry.validate();
  ctx.write(f.text("file", "calibration.txt"), io::format_calibration(r));
}

void calib_load(const Flags& f, const Context& ctx) {
  require(f.has("file"), ErrorKind::InvalidInput, "--file is required");
  const auto r = io::parse_calibration(io::read_key_values(f.text("file", "")));
  const double resistance = f.num("resistance", r.rtd.r_ref * 1.02);
  const double power = f.num("power-dbm", 21.5);
  ctx.write("calibration_check.txt",
            io::format_key_values({
                {"name", r.name},
                {"created_utc", r.created_utc},
                {"rtd_temperature_C", format_double(thermal::rtd_temperature_from_resistance(resistance, r.rtd))},
                {"rtd_spread_error_rel", format_double(thermal::calibration_spread_error(r.rtd, 0.05, 5, 10.0))},
                {"effective_temperature_C", format_double(thermal::effective_temperature(r.microwave, power))},
                {"rabi_Hz_at_1e-4_T", format_double(field::rabi_from_field(1e-4, r.constants))},
                {"delta_T_K_per_MHz", format_double(1e6 / r.thermometry.dD_dT)},
            }));
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return kIo;
    case ErrorKind::Parse: return kParse;
    case ErrorKind::InvalidInput:
    case ErrorKind::Domain: return kInvalidInput;
    case ErrorKind::FitFailure: return kFitFailure;
    case ErrorKind::Singularity:
    case ErrorKind::NoPairs:
    case ErrorKind::EmptyMask: return kNumerical;
  }
  return kInternal;
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"thermal-sim", "thermal-pid", "thermal-fit", "mw-heating",
                                              "field-profile", "rabi", "odmr-synth", "odmr-fit",
                                              "odmr-thermo", "msd", "viability", "morph", "calib"};
  return names;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale models for an NV-diamond biosensing chip: thermal control, microwave field, "
               "ODMR thermometry, vesicle tracking and worm morphometry.",
               "qbic"};
  app.fallthrough();
  app.require_subcommand(1);
  std::string config_path, out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key=value file; keys are long option names");
  app.add_option("--seed", seed, "random seed (1)");
  app.add_option("--out", out_dir, "output directory (.)");
  app.add_option("--jobs", jobs, "worker threads for msd and morph (1)")->check(CLI::PositiveNumber);
  app.add_option("--set", sets, "override a config key: --set key=value");

  std::map<std::string, Command> commands;
  auto make = [&](const std::string& name, const std::string& help, CLI::App* parent = nullptr) -> Command& {
    auto& c = commands[name];
    c.app = (parent ? parent : &app)->add_subcommand(name.substr(name.rfind(' ') + 1), help);
    c.flags = std::make_unique<Flags>(c.app);
    return c;
  };

  {
    auto& c = make("thermal-sim", "open-loop heating curve of the chip plant");
    add_plant_flags(*c.flags);
    c.flags->add("v0", "heater drive, V (5)");
    c.flags->add("duration", "simulated time, s (300)");
    c.flags->add("sample-period", "output spacing, s (0.1)");
    c.flags->add("integrator", "exact or euler (exact)");
    c.handler = thermal_sim;
  }
  {
    auto& c = make("thermal-pid", "closed-loop PID regulation with sensor noise");
    add_plant_flags(*c.flags);
    for (const auto& [n, h] : std::vector<std::pair<std::string, std::string>>{
             {"kp", "proportional gain, V/K (2)"}, {"ki", "integral gain, V/(K s) (0.2)"},
             {"kd", "derivative gain, V s/K (0)"}, {"output-min", "drive floor, V (0)"},
             {"output-max", "drive ceiling, V (10)"}, {"setpoint", "base set point, C (30)"},
             {"step", "set point step, K (1.5)"}, {"period", "step period, s; 0 holds the set point (120)"},
             {"duration", "simulated time, s (600)"}, {"dt", "control period, s (0.1)"},
             {"noise", "RTD noise sigma, K (0.01)"}, {"mw-power-dbm", "microwave power heating the sample, dBm"},
             {"mw-slope", "microwave heating slope, K/mW (0.066)"},
             {"mw-baseline", "microwave heating baseline, C (22)"},
             {"addition-time", "time of a liquid addition, s"}, {"addition-volume-ul", "added volume, uL (50)"},
             {"addition-temp-c", "added liquid temperature, C (22)"},
             {"sample-volume-ul", "sample volume, uL (400)"}}) {
      c.flags->add(n, h);
    }
    c.handler = thermal_pid;
  }
  {
    auto& c = make("thermal-fit", "fit C_v and k to recorded heating ramps");
    add_plant_flags(*c.flags);
    c.flags->add_list("trace", "heating ramp CSV and its drive voltage, FILE@V0 (repeatable)");
    c.handler = thermal_fit;
  }
  {
    auto& c = make("mw-heating", "linear-in-mW microwave heating model");
    c.flags->add_list("point", "measured point DBM:CELSIUS (repeatable; default reference points)");
    c.flags->add_list("predict", "powers to predict, dBm (14,21.8,25.6)");
    c.handler = mw_heating;
  }
  {
    auto& c = make("field-profile", "microwave field profile above the waveguide");
    add_geometry_flags(*c.flags);
    c.flags->add("path", "transverse or longitudinal (transverse)");
    c.flags->add("half-span", "half length of the path, m (150e-6 / 2.5e-3)");
    c.flags->add("height", "height above the chip, m (10e-6)");
    c.flags->add("samples", "points on the path (61)");
    c.flags->add("x", "transverse offset of a longitudinal path, m (0)");
    c.handler = field_profile;
  }
  {
    auto& c = make("rabi", "Rabi/field conversion and power scaling");
    add_geometry_flags(*c.flags);
    c.flags->add_list("field-t", "fields to convert, T (1e-4)");
    c.flags->add_list("rabi-hz", "Rabi frequencies to convert, Hz");
    c.flags->add_list("powers", "drive powers, dBm (0,5,10,15,20,25)");
    c.flags->add("x", "evaluation point x, m (0)");
    c.flags->add("y", "evaluation point y, m (0)");
    c.flags->add("height", "evaluation point z, m (10e-6)");
    c.handler = rabi;
  }
  {
    auto& c = make("odmr-synth", "synthesize a noisy ODMR spectrum");
    add_model_flags(*c.flags);
    c.flags->add_switch("precision", "also run the precision-scaling study");
    c.flags->add_list("precision-shots", "shot counts for the study (1e4,4e4,1.6e5,6.4e5)");
    c.flags->add("repeats", "spectra per shot count (50)");
    c.handler = odmr_synth;
  }
  {
    auto& c = make("odmr-fit", "fit a Lorentzian doublet to a spectrum");
    c.flags->add("spectrum", "spectrum CSV (frequency_Hz,signal)");
    c.flags->add_switch("single-dip", "fix the splitting at zero");
    c.handler = odmr_fit;
  }
  {
    auto& c = make("odmr-thermo", "temperature shift between two spectra");
    add_model_flags(*c.flags);
    c.flags->add("spectrum-a", "reference spectrum CSV");
    c.flags->add("spectrum-b", "shifted spectrum CSV");
    c.flags->add("dd-dt", "dD/dT, Hz/K (-74e3)");
    c.flags->add("shift-k", "programmed shift when synthesizing, K (2)");
    c.flags->add_switch("single-dip", "fit single dips");
    c.handler = odmr_thermo;
  }
  {
    auto& c = make("msd", "mean squared displacement of vesicle tracks");
    c.flags->add("tracks", "tracks CSV (track_id,frame,time_s,x_um,y_um)");
    c.flags->add("frame-period", "frame period, s (1/0.68)");
    c.flags->add("max-tau", "largest lag, s (10 frames)");
    c.flags->add_switch("per-track", "also write one curve per track segment");
    c.handler = msd;
  }
  {
    auto& c = make("viability", "windowed ensemble MSD viability verdicts");
    c.flags->add("tracks", "tracks CSV (track_id,frame,time_s,x_um,y_um)");
    c.flags->add("frame-period", "frame period, s (1/0.68)");
    c.flags->add("tau", "lag, s; snapped to a frame multiple (10)");
    c.flags->add("window", "window length, s (600)");
    c.flags->add("noise-floor", "MSD noise floor, um^2 (0)");
    c.flags->add("impaired-fraction", "impaired below this fraction of the first window (0.5)");
    c.handler = viability;
  }
  {
    auto& c = make("morph", "worm length, volume and normalized fluorescence");
    c.flags->add("dct-modes", "low-frequency DCT block removed as background; 0 disables (10)");
    c.flags->add("threshold", "segmentation threshold or otsu (otsu)");
    c.flags->add("control-mean", "control-group mean, intensity/um^3 (0)");
    c.flags->add("pixel-size", "um per pixel; overrides the .meta sidecar");
    c.flags->add_list("volume-override", "hand-corrected volume ID=UM3 (repeatable)");
    c.flags->add_positional("specimens", "frame.pgm[:slice.pgm...] per specimen");
    c.handler = morph;
  }
  CLI::App* calib = app.add_subcommand("calib", "save or load a calibration record");
  calib->require_subcommand(1);
  {
    auto& c = make("calib save", "write a calibration record", calib);
    add_calibration_flags(*c.flags);
    c.flags->add("file", "record path relative to --out (calibration.txt)");
    c.handler = calib_save;
  }
  {
    auto& c = make("calib load", "load a record and report derived values", calib);
    c.flags->add("file", "record path");
    c.flags->add("resistance", "RTD resistance to convert, ohm (1.02 r_ref)");
    c.flags->add("power-dbm", "microwave power for the effective temperature, dBm (21.5)");
    c.handler = calib_load;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: code=usage message=\"" << quote(e.what()) << "\"\n";
    return kUsage;
  }

  try {
    io::KeyValues settings;
    if (!config_path.empty()) settings = io::read_key_values(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      require(eq != std::string::npos && eq > 0, ErrorKind::Parse, "--set expects key=value, got '" + s + "'");
      settings.insert_or_assign(s.substr(0, eq), s.substr(eq + 1));
    }
    Context ctx;
    ctx.out_dir = out_dir;
    ctx.out = &out;
    ctx.seed = seed ? *seed
                    : static_cast<std::uint64_t>(settings.contains("seed")
                                                     ? io::parse_integer(settings.at("seed"), "seed")
                                                     : 1);
    ctx.jobs = jobs ? *jobs
                    : static_cast<int>(settings.contains("jobs") ? io::parse_integer(settings.at("jobs"), "jobs")
                                                                 : 1);
    require(ctx.jobs >= 1, ErrorKind::InvalidInput, "jobs must be >= 1");

    for (auto& [name, c] : commands) {
      if (!c.app->parsed()) continue;
      c.flags->bind(&settings);
      c.handler(*c.flags, ctx);
      return kOk;
    }
    fail(ErrorKind::InvalidInput, "no subcommand selected");
  } catch (const Error& e) {
    err << "error: code=" << to_string(e.kind()) << " message=\"" << quote(e.what()) << "\"\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: code=internal message=\"" << quote(e.what()) << "\"\n";
    return kInternal;
  }
}

}  // namespace qbic::cli
