#pragma once

// Chip thermal plant: RTD thermometry, first-order heater dynamics, PID
// regulation, microwave dielectric heating and liquid-addition transients.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace qbic::thermal {

/// Gold RTD law R(T)/R(T_ref) = eta (T - T_ref) + 1.
struct RtdCalibration {
  double eta = 0.002;     // 1/K
  double r_ref = 100.0;   // ohm
  double t_ref = 20.0;    // degC

  void validate() const;
};

double rtd_temperature_from_resistance(double resistance_ohm, const RtdCalibration& cal);
double rtd_resistance_from_temperature(double temperature_c, const RtdCalibration& cal);

/// Worst-case relative temperature-estimate error when chips whose true eta
/// spans nominal*(1 +/- relative_spread) are all read with the nominal
/// calibration. `chips` calibrations are spaced evenly over the band.
double calibration_spread_error(const RtdCalibration& nominal, double relative_spread, int chips,
                                double delta_t);

enum class Integrator {
  Exact,  // closed-form update of the linear ODE over dt
  Euler,  // explicit; requires dt <= c_v / (10 k)
};

/// Lumped model C_v dT/dt = e V0^2 / R_heater - k (T - T0).
struct ThermalPlant {
  double c_v = 0.26;         // J/K
  double k = 0.0175;         // J/K/s
  double r_heater = 100.0;   // ohm
  double t_ambient = 22.0;   // degC
  double temperature = 22.0; // degC
  double duty_cycle = 1.0;

  void validate() const;
  double time_constant() const { return c_v / k; }
  double heater_power(double v0) const;
  /// Temperature the plant settles to under constant drive.
  double equilibrium(double v0, double extra_power_w = 0.0) const;
};

/// Advances the plant by dt. `extra_power_w` adds a heat source on top of the
/// heater (microwave absorption).
ThermalPlant plant_step(const ThermalPlant& plant, double v0, double dt,
                        double extra_power_w = 0.0, Integrator integrator = Integrator::Exact);

struct TemperatureSample {
  double time_s = 0.0;
  double temperature_c = 0.0;
};

struct TemperatureTrace {
  std::vector<TemperatureSample> samples;
  double sample_period = 1.0;

  /// Strictly increasing times spaced by sample_period within 1e-9 s.
  void validate() const;
  std::vector<double> temperatures() const;
};

/// Samples at t = 0, dt, 2 dt, ... up to and including `duration`.
TemperatureTrace simulate_heating_curve(const ThermalPlant& plant, double v0, double duration,
                                        double sample_period);

/// Analytic heating curve starting from `start_c`.
double heating_curve_value(const ThermalPlant& plant, double v0, double start_c, double t);

/// Drive metadata attached to a recorded heating ramp.
struct DrivenTrace {
  TemperatureTrace trace;
  double v0 = 0.0;
  double duty_cycle = 1.0;
  double r_heater = 100.0;
  double t_ambient = 22.0;
};

struct PlantFit {
  double c_v = 0.0;
  double k = 0.0;
  double rms_residual_k = 0.0;
  double c_v_sigma = 0.0;
  double k_sigma = 0.0;
  int iterations = 0;
};

/// Least-squares (C_v, k) over one or more ramps. Each ramp starts from its
/// first sample; the model is the closed-form solution of the plant ODE.
PlantFit fit_plant_parameters(std::span<const DrivenTrace> traces);

struct PidController {
  double kp = 2.0;   // V/K
  double ki = 0.2;   // V/(K s)
  double kd = 0.0;   // V s/K
  double output_min = 0.0;   // V
  double output_max = 10.0;  // V
  double integral_state = 0.0;  // K s
  double previous_error = 0.0;  // K
  double previous_measurement = 0.0;  // degC
  bool primed = false;  // false until the first update has run

  void validate() const;
};

struct PidOutput {
  double output_v = 0.0;
  PidController controller;
};

/// Positional PID, derivative on measurement, clamped output. The integral is
/// frozen on any update whose unclamped output would saturate.
PidOutput pid_update(const PidController& controller, double setpoint, double measured, double dt);

struct SetpointChange {
  double time_s = 0.0;
  double setpoint_c = 0.0;
};

/// Square-wave schedule: `base` for `period` seconds, then base + step, alternating.
std::vector<SetpointChange> alternating_schedule(double base_c, double step_c, double period_s,
                                                 double duration_s);

struct LiquidAddition {
  double time_s = 0.0;
  double added_volume_ul = 0.0;
  double added_temp_c = 0.0;
  double sample_volume_ul = 0.0;
};

ThermalPlant liquid_addition_transient(const ThermalPlant& plant, double added_volume_ul,
                                       double added_temp_c, double sample_volume_ul);

struct ClosedLoopConfig {
  std::vector<SetpointChange> schedule;
  double sensor_noise_sigma = 0.01;  // K
  double duration = 600.0;           // s
  double dt = 0.1;                   // s
  std::uint64_t seed = 1;
  double extra_power_w = 0.0;
  std::vector<LiquidAddition> additions;
};

struct ClosedLoopRun {
  TemperatureTrace measured;
  TemperatureTrace actual;
  std::vector<double> drive_v;
  PidController final_controller;
};

ClosedLoopRun run_closed_loop(const ThermalPlant& plant, const PidController& controller,
                              const ClosedLoopConfig& config);

double setpoint_at(std::span<const SetpointChange> schedule, double time_s);

double dbm_to_milliwatts(double dbm);

/// Effective temperature = t_baseline + slope * P[mW].
struct MicrowaveHeatingModel {
  double slope = 0.066;      // K/mW
  double t_baseline = 22.0;  // degC

  void validate() const;
};

double effective_temperature(const MicrowaveHeatingModel& model, double power_dbm);

struct PowerTemperature {
  double power_dbm = 0.0;
  double temperature_c = 0.0;
};

MicrowaveHeatingModel fit_microwave_heating(std::span<const PowerTemperature> points);

/// Heat input that makes `plant` settle at the model's microwave-induced rise.
double microwave_heating_power(const MicrowaveHeatingModel& model, const ThermalPlant& plant,
                               double power_dbm);

/// Effective temperatures from the cell-viability and worm-stress measurements.
std::vector<PowerTemperature> reference_effective_temperatures();

}  // namespace qbic::thermal
