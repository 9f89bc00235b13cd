#include "qbic/thermal.hpp"

#include "qbic/common.hpp"
#include "qbic/lsq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace qbic::thermal {

void RtdCalibration::validate() const {
  require(std::isfinite(eta) && eta > 0.0, ErrorKind::InvalidInput, "rtd: eta must be > 0");
  require(std::isfinite(r_ref) && r_ref > 0.0, ErrorKind::InvalidInput, "rtd: r_ref must be > 0");
  require(std::isfinite(t_ref), ErrorKind::InvalidInput, "rtd: t_ref must be finite");
}

double rtd_temperature_from_resistance(double resistance_ohm, const RtdCalibration& cal) {
  cal.validate();
  require(std::isfinite(resistance_ohm) && resistance_ohm > 0.0, ErrorKind::InvalidInput,
          "rtd: resistance must be positive");
  return cal.t_ref + (resistance_ohm / cal.r_ref - 1.0) / cal.eta;
}

double rtd_resistance_from_temperature(double temperature_c, const RtdCalibration& cal) {
  cal.validate();
  const double ratio = cal.eta * (temperature_c - cal.t_ref) + 1.0;
  require(std::isfinite(ratio) && ratio > 0.0, ErrorKind::Domain,
          "rtd: temperature below the zero-resistance point");
  return cal.r_ref * ratio;
}

double calibration_spread_error(const RtdCalibration& nominal, double relative_spread, int chips,
                                double delta_t) {
  nominal.validate();
  require(chips >= 1, ErrorKind::InvalidInput, "rtd spread: need at least one chip");
  require(relative_spread >= 0.0 && relative_spread < 1.0, ErrorKind::InvalidInput,
          "rtd spread: spread must be in [0, 1)");
  require(delta_t != 0.0, ErrorKind::InvalidInput, "rtd spread: delta_t must be nonzero");
  const double truth = nominal.t_ref + delta_t;
  double worst = 0.0;
  for (int i = 0; i < chips; ++i) {
    const double frac = chips == 1 ? 0.0 : -1.0 + 2.0 * i / static_cast<double>(chips - 1);
    RtdCalibration chip = nominal;
    chip.eta = nominal.eta * (1.0 + relative_spread * frac);
    const double r = rtd_resistance_from_temperature(truth, chip);
    const double estimate = rtd_temperature_from_resistance(r, nominal);
    worst = std::max(worst, std::abs(estimate - truth) / std::abs(delta_t));
  }
  return worst;
}

void ThermalPlant::validate() const {
  require(std::isfinite(c_v) && c_v > 0.0, ErrorKind::InvalidInput, "plant: c_v must be > 0");
  require(std::isfinite(k) && k > 0.0, ErrorKind::InvalidInput, "plant: k must be > 0");
  require(std::isfinite(r_heater) && r_heater > 0.0, ErrorKind::InvalidInput,
          "plant: r_heater must be > 0");
  require(duty_cycle >= 0.0 && duty_cycle <= 1.0, ErrorKind::InvalidInput,
          "plant: duty_cycle must be in [0, 1]");
  require(std::isfinite(t_ambient) && std::isfinite(temperature), ErrorKind::InvalidInput,
          "plant: temperatures must be finite");
}

double ThermalPlant::heater_power(double v0) const { return duty_cycle * v0 * v0 / r_heater; }

double ThermalPlant::equilibrium(double v0, double extra_power_w) const {
  return t_ambient + (heater_power(v0) + extra_power_w) / k;
}

ThermalPlant plant_step(const ThermalPlant& plant, double v0, double dt, double extra_power_w,
                        Integrator integrator) {
  plant.validate();
  require(std::isfinite(dt) && dt > 0.0, ErrorKind::InvalidInput, "plant_step: dt must be > 0");
  require(std::isfinite(v0) && std::isfinite(extra_power_w), ErrorKind::InvalidInput,
          "plant_step: drive must be finite");
  ThermalPlant next = plant;
  const double target = plant.equilibrium(v0, extra_power_w);
  if (integrator == Integrator::Exact) {
    next.temperature = target + (plant.temperature - target) * std::exp(-plant.k * dt / plant.c_v);
  } else {
    require(dt <= plant.c_v / (10.0 * plant.k), ErrorKind::InvalidInput,
            "plant_step: dt exceeds the explicit stability guard c_v/(10 k)");
    const double power = plant.heater_power(v0) + extra_power_w;
    next.temperature =
        plant.temperature + dt * (power - plant.k * (plant.temperature - plant.t_ambient)) / plant.c_v;
  }
  return next;
}

void TemperatureTrace::validate() const {
  require(sample_period > 0.0, ErrorKind::InvalidInput, "trace: sample_period must be > 0");
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const double gap = samples[i].time_s - samples[i - 1].time_s;
    require(gap > 0.0, ErrorKind::InvalidInput, "trace: times must be strictly increasing");
    require(std::abs(gap - sample_period) <= 1e-9, ErrorKind::InvalidInput,
            "trace: sample spacing differs from sample_period at index " + std::to_string(i));
  }
}

std::vector<double> TemperatureTrace::temperatures() const {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.temperature_c);
  return out;
}

TemperatureTrace simulate_heating_curve(const ThermalPlant& plant, double v0, double duration,
                                        double sample_period) {
  plant.validate();
  require(duration > 0.0, ErrorKind::InvalidInput, "heating curve: duration must be > 0");
  require(sample_period > 0.0, ErrorKind::InvalidInput, "heating curve: sample_period must be > 0");
  const auto steps = static_cast<std::size_t>(std::floor(duration / sample_period + 1e-9));
  TemperatureTrace trace;
  trace.sample_period = sample_period;
  trace.samples.reserve(steps + 1);
  ThermalPlant state = plant;
  trace.samples.push_back({0.0, state.temperature});
  for (std::size_t i = 1; i <= steps; ++i) {
    state = plant_step(state, v0, sample_period);
    trace.samples.push_back({static_cast<double>(i) * sample_period, state.temperature});
  }
  return trace;
}

double heating_curve_value(const ThermalPlant& plant, double v0, double start_c, double t) {
  const double decay = std::exp(-plant.k * t / plant.c_v);
  return plant.t_ambient + (start_c - plant.t_ambient) * decay +
         plant.heater_power(v0) / plant.k * (1.0 - decay);
}

namespace {

struct RampView {
  const DrivenTrace* source;
  double power;
  double start;
  double t0;
};

}  // namespace

PlantFit fit_plant_parameters(std::span<const DrivenTrace> traces) {
  require(!traces.empty(), ErrorKind::FitFailure, "plant fit: no traces");
  std::vector<RampView> ramps;
  Eigen::Index observations = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& d = traces[i];
    require(d.trace.samples.size() >= 10, ErrorKind::FitFailure,
            "plant fit: trace " + std::to_string(i) + " has fewer than 10 samples");
    require(d.r_heater > 0.0 && d.duty_cycle >= 0.0 && d.duty_cycle <= 1.0, ErrorKind::InvalidInput,
            "plant fit: invalid drive metadata on trace " + std::to_string(i));
    for (const auto& s : d.trace.samples) {
      lo = std::min(lo, s.temperature_c);
      hi = std::max(hi, s.temperature_c);
    }
    ramps.push_back({&d, d.duty_cycle * d.v0 * d.v0 / d.r_heater, d.trace.samples.front().temperature_c,
                     d.trace.samples.front().time_s});
    observations += static_cast<Eigen::Index>(d.trace.samples.size());
  }
  require(hi > lo, ErrorKind::FitFailure,
          "plant fit: degenerate data, every sample equals " + std::to_string(lo) + " degC");

  // Starting point: k from the largest observed rise, tau from its 63% crossing.
  double k0 = 0.0, tau0 = 0.0;
  for (const auto& ramp : ramps) {
    const auto& s = ramp.source->trace.samples;
    const double rise = s.back().temperature_c - ramp.start;
    const double final_rise = s.back().temperature_c - ramp.source->t_ambient;
    if (ramp.power <= 0.0 || final_rise <= 0.0 || rise <= 0.0) continue;
    const double k_guess = ramp.power / final_rise;
    double tau_guess = (s.back().time_s - ramp.t0) / 3.0;
    for (const auto& sample : s) {
      if (sample.temperature_c - ramp.start >= 0.632 * rise) {
        tau_guess = std::max(sample.time_s - ramp.t0, 1e-3);
        break;
      }
    }
    if (k_guess > k0) {
      k0 = k_guess;
      tau0 = tau_guess;
    }
  }
  if (k0 <= 0.0) {
    // Pure relaxation data: time constant only, k is set by scale.
    k0 = 0.01;
    tau0 = std::max((ramps.front().source->trace.samples.back().time_s - ramps.front().t0) / 3.0, 1e-3);
  }

  // Parameters are log C_v and log k.
  lsq::Problem problem;
  problem.observations = observations;
  problem.residuals = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
    const double c = std::exp(x[0]);
    const double k = std::exp(x[1]);
    Eigen::Index row = 0;
    for (const auto& ramp : ramps) {
      const double ta = ramp.source->t_ambient;
      for (const auto& s : ramp.source->trace.samples) {
        const double e = std::exp(-k * (s.time_s - ramp.t0) / c);
        r[row++] = ta + (ramp.start - ta) * e + ramp.power / k * (1.0 - e) - s.temperature_c;
      }
    }
  };
  problem.jacobian = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& jac) {
    const double c = std::exp(x[0]);
    const double k = std::exp(x[1]);
    Eigen::Index row = 0;
    for (const auto& ramp : ramps) {
      const double ta = ramp.source->t_ambient;
      const double amplitude = (ramp.start - ta) - ramp.power / k;
      for (const auto& s : ramp.source->trace.samples) {
        const double t = s.time_s - ramp.t0;
        const double e = std::exp(-k * t / c);
        const double de_dlogc = e * k * t / c;
        jac(row, 0) = amplitude * de_dlogc;
        jac(row, 1) = amplitude * (-de_dlogc) - ramp.power / k * (1.0 - e);
        ++row;
      }
    }
  };

  lsq::Result best;
  bool have_best = false;
  for (double scale : {1.0, 0.3, 3.0}) {
    Eigen::VectorXd start(2);
    start << std::log(k0 * tau0 * scale), std::log(k0);
    auto result = lsq::levenberg_marquardt(problem, start);
    if (!have_best || result.sum_squares < best.sum_squares) {
      best = std::move(result);
      have_best = true;
    }
  }
  require(best.converged, ErrorKind::FitFailure,
          "plant fit: no convergence after " + std::to_string(best.iterations) +
              " iterations, best rms " + std::to_string(best.rms) + " K");

  PlantFit fit;
  fit.c_v = std::exp(best.params[0]);
  fit.k = std::exp(best.params[1]);
  fit.rms_residual_k = best.rms;
  fit.iterations = best.iterations;
  if (best.covariance_valid) {
    fit.c_v_sigma = fit.c_v * std::sqrt(std::max(best.covariance(0, 0), 0.0));
    fit.k_sigma = fit.k * std::sqrt(std::max(best.covariance(1, 1), 0.0));
  } else {
    fit.c_v_sigma = fit.k_sigma = std::numeric_limits<double>::quiet_NaN();
  }
  return fit;
}

void PidController::validate() const {
  require(std::isfinite(kp) && std::isfinite(ki) && std::isfinite(kd), ErrorKind::InvalidInput,
          "pid: gains must be finite");
  require(output_min <= output_max, ErrorKind::InvalidInput, "pid: output_min > output_max");
}

PidOutput pid_update(const PidController& controller, double setpoint, double measured, double dt) {
  controller.validate();
  require(std::isfinite(dt) && dt > 0.0, ErrorKind::InvalidInput, "pid: dt must be > 0");
  PidController next = controller;
  const double error = setpoint - measured;
  const double derivative =
      controller.primed ? -(measured - controller.previous_measurement) / dt : 0.0;
  const double candidate_integral = controller.integral_state + error * dt;
  const double unclamped = controller.kp * error + controller.ki * candidate_integral +
                           controller.kd * derivative;

  double output = unclamped;
  if (unclamped > controller.output_max || unclamped < controller.output_min) {
    // Saturated: hold the integrator.
    output = controller.kp * error + controller.ki * controller.integral_state +
             controller.kd * derivative;
    output = std::clamp(output, controller.output_min, controller.output_max);
  } else {
    next.integral_state = candidate_integral;
  }
  next.previous_error = error;
  next.previous_measurement = measured;
  next.primed = true;
  return {output, next};
}

std::vector<SetpointChange> alternating_schedule(double base_c, double step_c, double period_s,
                                                 double duration_s) {
  require(period_s > 0.0, ErrorKind::InvalidInput, "schedule: period must be > 0");
  std::vector<SetpointChange> schedule;
  for (int i = 0; i * period_s < duration_s || i == 0; ++i) {
    schedule.push_back({i * period_s, i % 2 == 0 ? base_c : base_c + step_c});
  }
  return schedule;
}

double setpoint_at(std::span<const SetpointChange> schedule, double time_s) {
  require(!schedule.empty(), ErrorKind::InvalidInput, "schedule: empty");
  double value = schedule.front().setpoint_c;
  for (const auto& change : schedule) {
    if (change.time_s <= time_s) value = change.setpoint_c;
    else break;
  }
  return value;
}

ThermalPlant liquid_addition_transient(const ThermalPlant& plant, double added_volume_ul,
                                       double added_temp_c, double sample_volume_ul) {
  require(added_volume_ul > 0.0 && sample_volume_ul > 0.0, ErrorKind::InvalidInput,
          "liquid addition: volumes must be > 0");
  require(std::isfinite(added_temp_c), ErrorKind::InvalidInput,
          "liquid addition: temperature must be finite");
  ThermalPlant next = plant;
  next.temperature = (sample_volume_ul * plant.temperature + added_volume_ul * added_temp_c) /
                     (sample_volume_ul + added_volume_ul);
  return next;
}

ClosedLoopRun run_closed_loop(const ThermalPlant& plant, const PidController& controller,
                              const ClosedLoopConfig& config) {
  plant.validate();
  controller.validate();
  require(!config.schedule.empty(), ErrorKind::InvalidInput, "closed loop: empty setpoint schedule");
  for (std::size_t i = 1; i < config.schedule.size(); ++i) {
    require(config.schedule[i].time_s >= config.schedule[i - 1].time_s, ErrorKind::InvalidInput,
            "closed loop: schedule times must be nondecreasing");
  }
  require(config.dt > 0.0, ErrorKind::InvalidInput, "closed loop: dt must be > 0");
  require(config.duration > 0.0, ErrorKind::InvalidInput, "closed loop: duration must be > 0");
  require(config.sensor_noise_sigma >= 0.0, ErrorKind::InvalidInput,
          "closed loop: sensor noise must be >= 0");

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto steps = static_cast<std::size_t>(std::floor(config.duration / config.dt + 1e-9));

  ClosedLoopRun run;
  run.measured.sample_period = config.dt;
  run.actual.sample_period = config.dt;
  run.measured.samples.reserve(steps + 1);
  run.actual.samples.reserve(steps + 1);
  run.drive_v.reserve(steps + 1);

  auto additions = config.additions;
  std::stable_sort(additions.begin(), additions.end(),
                   [](const auto& a, const auto& b) { return a.time_s < b.time_s; });
  std::size_t next_addition = 0;

  ThermalPlant state = plant;
  PidController pid = controller;
  for (std::size_t i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) * config.dt;
    while (next_addition < additions.size() && additions[next_addition].time_s <= t) {
      const auto& a = additions[next_addition++];
      state = liquid_addition_transient(state, a.added_volume_ul, a.added_temp_c, a.sample_volume_ul);
    }
    const double measured = state.temperature + config.sensor_noise_sigma * noise(rng);
    run.measured.samples.push_back({t, measured});
    run.actual.samples.push_back({t, state.temperature});
    auto [drive, updated] = pid_update(pid, setpoint_at(config.schedule, t), measured, config.dt);
    pid = updated;
    run.drive_v.push_back(drive);
    if (i < steps) state = plant_step(state, drive, config.dt, config.extra_power_w);
  }
  run.final_controller = pid;
  return run;
}

double dbm_to_milliwatts(double dbm) { return std::pow(10.0, dbm / 10.0); }

void MicrowaveHeatingModel::validate() const {
  require(std::isfinite(slope) && slope >= 0.0, ErrorKind::InvalidInput,
          "microwave model: slope must be >= 0");
  require(std::isfinite(t_baseline), ErrorKind::InvalidInput,
          "microwave model: baseline must be finite");
}

double effective_temperature(const MicrowaveHeatingModel& model, double power_dbm) {
  model.validate();
  return model.t_baseline + model.slope * dbm_to_milliwatts(power_dbm);
}

MicrowaveHeatingModel fit_microwave_heating(std::span<const PowerTemperature> points) {
  require(points.size() >= 2, ErrorKind::FitFailure, "microwave fit: need at least two points");
  std::vector<double> mw, temps;
  for (const auto& p : points) {
    mw.push_back(dbm_to_milliwatts(p.power_dbm));
    temps.push_back(p.temperature_c);
  }
  const auto [lo, hi] = std::minmax_element(mw.begin(), mw.end());
  require(*hi > *lo, ErrorKind::FitFailure, "microwave fit: all powers equal");
  const LineFit line = fit_line(mw, temps);
  MicrowaveHeatingModel model;
  model.slope = line.slope;
  model.t_baseline = line.intercept;
  // Negative slopes fall outside the model; report them instead of clamping.
  require(model.slope >= 0.0, ErrorKind::FitFailure,
          "microwave fit: temperature falls with power (slope " + std::to_string(line.slope) + ")");
  return model;
}

double microwave_heating_power(const MicrowaveHeatingModel& model, const ThermalPlant& plant,
                               double power_dbm) {
  model.validate();
  return model.slope * dbm_to_milliwatts(power_dbm) * plant.k;
}

std::vector<PowerTemperature> reference_effective_temperatures() {
  return {{16.7, 25.1}, {17.4, 25.7}, {21.5, 31.3}, {22.3, 33.3}};
}

}  // namespace qbic::thermal
