#pragma once

// Scenario configuration: true plant, the controller's (erroneous) model,
// environment, radar delay and controller settings, loaded from JSON.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <string>
#include <vector>

#include "atnmpc/controller.hpp"
#include "atnmpc/drive_cycle.hpp"
#include "atnmpc/errors.hpp"
#include "atnmpc/plant.hpp"

namespace atnmpc::harness {

using nlohmann::json;

/// Multiplicative errors applied to the true plant to form the controller's model.
struct ModelErrors {
  double mass = 1.0;
  double drag = 1.0;
  bool omit_rolling = false;  ///< nominal model has no rolling resistance
};

struct ScenarioConfig {
  DriveCycle cycle;
  std::string cycle_path;
  int cycle_repeats = 1;
  control::ControllerConfig controller;
  plant::PlantParams plant;               ///< true values
  plant::PlantParams controller_nominal;  ///< with injected errors
  ModelErrors errors;
  plant::EnvProfile env;
  double radar_delay = 0.0;    // s
  double gap_noise = 0.0;      // m, std of additive radar noise
  double rel_speed_noise = 0.0;  // m/s
  std::uint64_t seed = 1;
  double duration = -1.0;  ///< s; negative means the full (repeated) cycle
  double plant_dt = 0.01;  // s
  double initial_gap_error = 0.0;  // m
  double initial_soc = 0.6;
  std::string output;

  double run_duration() const { return duration >= 0.0 ? duration : cycle.duration(); }

  /// True when the injected delay exceeds the bound the tube was built for.
  bool delay_exceeds_bound() const { return controller.tighten && radar_delay > controller.t_d + 1e-12; }

  void validate() const {
    controller.validate();
    plant.validate();
    controller_nominal.validate();
    env.validate();
    if (cycle.empty()) throw ConfigError("scenario: drive cycle is empty");
    if (!(plant_dt > 0.0)) throw ConfigError("scenario: plant_dt must be > 0");
    const double ratio = controller.ts / plant_dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0)
      throw ConfigError("scenario: controller Ts must be an integer multiple of plant_dt");
    if (!(radar_delay >= 0.0)) throw ConfigError("scenario: radar_delay must be >= 0");
    if (!(gap_noise >= 0.0) || !(rel_speed_noise >= 0.0)) throw ConfigError("scenario: noise levels must be >= 0");
    if (run_duration() > cycle.duration() + 1e-9) throw ConfigError("scenario: drive cycle does not cover duration");
    if (!(initial_soc >= 0.0 && initial_soc <= 1.0)) throw ConfigError("scenario: initial_soc must lie in [0, 1]");
  }
};

/// Applies the model errors to the true plant.
inline plant::PlantParams nominal_from_errors(const plant::PlantParams& truth, const ModelErrors& e) {
  if (!(e.mass > 0.0) || !(e.drag >= 0.0)) throw ConfigError("model_errors: multipliers must be positive");
  plant::PlantParams p = truth;
  p.m *= e.mass;
  p.c_d *= e.drag;
  if (e.omit_rolling) {
    p.mu_r0 = 0.0;
    p.mu_rv = 0.0;
  }
  return p;
}

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline Eigen::VectorXd read_vector(const json& j, const std::string& where) {
  std::vector<double> v;
  try {
    v = j.get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline setalg::IntervalBox read_box(const json& j, const std::string& where, Eigen::Index dim) {
  check_keys(j, {"lower", "upper"}, where);
  if (!j.contains("lower") || !j.contains("upper")) throw ConfigError(where + ": needs 'lower' and 'upper'");
  const Eigen::VectorXd lo = read_vector(j.at("lower"), where + ".lower");
  const Eigen::VectorXd hi = read_vector(j.at("upper"), where + ".upper");
  if (lo.size() != dim || hi.size() != dim)
    throw ConfigError(where + ": expected " + std::to_string(dim) + " entries");
  try {
    return {lo, hi};
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

/// [lo, hi] pair.
inline std::pair<double, double> read_range(const json& j, const std::string& where) {
  const Eigen::VectorXd v = read_vector(j, where);
  if (v.size() != 2 || !(v[0] <= v[1])) throw ConfigError(where + ": expected [lo, hi] with lo <= hi");
  return {v[0], v[1]};
}

template <std::size_t N>
void read_array(const json& j, const char* key, std::array<double, N>& out, const std::string& where) {
  if (!j.contains(key)) return;
  const Eigen::VectorXd v = read_vector(j.at(key), where + "." + key);
  if (static_cast<std::size_t>(v.size()) != N)
    throw ConfigError(where + "." + key + ": expected " + std::to_string(N) + " entries");
  for (std::size_t i = 0; i < N; ++i) out[i] = v[static_cast<Eigen::Index>(i)];
}

inline void read_plant(const json& j, plant::PlantParams& p) {
  const std::string w = "plant";
  check_keys(j,
             {"m", "r_w", "rho_a", "area", "c_d", "mu_r0", "mu_rv", "gear_ratio", "eta_p", "tau_a", "k_a", "v_floor",
              "alpha", "gamma", "fuel_price", "electricity_price", "power_ratio"},
             w);
  read(j, "m", p.m, w);
  read(j, "r_w", p.r_w, w);
  read(j, "rho_a", p.rho_a, w);
  read(j, "area", p.area, w);
  read(j, "c_d", p.c_d, w);
  read(j, "mu_r0", p.mu_r0, w);
  read(j, "mu_rv", p.mu_rv, w);
  read(j, "gear_ratio", p.gear_ratio, w);
  read(j, "eta_p", p.eta_p, w);
  read(j, "tau_a", p.tau_a, w);
  read(j, "k_a", p.k_a, w);
  read(j, "v_floor", p.v_floor, w);
  read_array(j, "alpha", p.alpha, w);
  read_array(j, "gamma", p.gamma, w);
  read(j, "fuel_price", p.fuel_price, w);
  read(j, "electricity_price", p.electricity_price, w);
  if (j.contains("power_ratio")) {
    const auto& pr = j.at("power_ratio");
    const std::string wp = w + ".power_ratio";
    check_keys(pr, {"level_high_soc", "level_low_soc", "soc_threshold", "smoothing_power"}, wp);
    read(pr, "level_high_soc", p.power_ratio.level_high_soc, wp);
    read(pr, "level_low_soc", p.power_ratio.level_low_soc, wp);
    read(pr, "soc_threshold", p.power_ratio.soc_threshold, wp);
    read(pr, "smoothing_power", p.power_ratio.smoothing_power, wp);
    for (double l : {p.power_ratio.level_high_soc, p.power_ratio.level_low_soc})
      if (!(l >= 0.0 && l <= 1.0)) throw ConfigError(wp + ": levels must lie in [0, 1]");
  }
}

inline nmpc::Weights read_weights(const json& j, nmpc::Weights w, const std::string& where) {
  check_keys(j, {"w_ep", "w_ev", "w_u", "w_energy"}, where);
  read(j, "w_ep", w.w_ep, where);
  read(j, "w_ev", w.w_ev, where);
  read(j, "w_u", w.w_u, where);
  read(j, "w_energy", w.w_energy, where);
  if (w.w_ep < 0 || w.w_ev < 0 || w.w_u < 0 || w.w_energy < 0) throw ConfigError(where + ": weights must be >= 0");
  return w;
}

/// Parameter box around the nominal model: multiplicative ranges for m, r_w,
/// C_d and eta_p, absolute ranges for the others.
inline setalg::UncertainParams read_uncertainty(const json& j, const plant::PlantParams& nominal) {
  const std::string w = "controller.uncertainty";
  check_keys(j, {"mass", "wheel_radius", "drag", "rolling_v", "rolling0", "grade", "wind", "efficiency"}, w);
  auto u = setalg::UncertainParams::exact(control::param_vector(nominal));
  auto rel = [&](const char* key, int idx) {
    if (!j.contains(key)) return;
    const auto [lo, hi] = read_range(j.at(key), w + "." + key);
    u.min[idx] = lo * u.nominal[idx];
    u.max[idx] = hi * u.nominal[idx];
  };
  auto abs = [&](const char* key, int idx) {
    if (!j.contains(key)) return;
    const auto [lo, hi] = read_range(j.at(key), w + "." + key);
    u.min[idx] = lo;
    u.max[idx] = hi;
  };
  rel("mass", setalg::kMass);
  rel("wheel_radius", setalg::kWheelRadius);
  rel("drag", setalg::kDrag);
  rel("efficiency", setalg::kEfficiency);
  abs("rolling_v", setalg::kRollingV);
  abs("rolling0", setalg::kRolling0);
  abs("grade", setalg::kGrade);
  abs("wind", setalg::kWind);
  try {
    u.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(w + ": " + e.what() + " (ranges must contain the nominal model)");
  }
  return u;
}

inline void read_controller(const json& j, control::ControllerConfig& c, const plant::PlantParams& nominal) {
  const std::string w = "controller";
  check_keys(j,
             {"mode", "h", "d0", "ts", "np", "lqr", "x_box", "u_box", "t_d", "presets", "sigma", "penalty_weight",
              "max_outer", "max_inner", "a_p_filter_tau", "divergence_limit", "safe_stop_torque", "safe_stop_rate",
              "uncertainty", "preceding_accel", "preceding_accel_error", "v_max", "estimators"},
             w);
  std::string mode = control::mode_name(c.mode);
  read(j, "mode", mode, w);
  read(j, "h", c.h, w);
  read(j, "d0", c.d0, w);
  read(j, "ts", c.ts, w);
  read(j, "np", c.np, w);
  if (j.contains("lqr")) {
    const auto& l = j.at("lqr");
    check_keys(l, {"q", "r"}, w + ".lqr");
    if (l.contains("q")) {
      const Eigen::VectorXd q = read_vector(l.at("q"), w + ".lqr.q");
      if (q.size() != 3 || (q.array() < 0.0).any()) throw ConfigError(w + ".lqr.q: expected 3 non-negative entries");
      c.lqr_q = q.asDiagonal();
    }
    read(l, "r", c.lqr_r, w + ".lqr");
  }
  if (j.contains("x_box")) c.x_box = read_box(j.at("x_box"), w + ".x_box", 4);
  if (j.contains("u_box")) c.u_box = read_box(j.at("u_box"), w + ".u_box", 1);
  read(j, "t_d", c.t_d, w);
  if (j.contains("presets")) {
    const auto& p = j.at("presets");
    check_keys(p, {"tracking", "eco"}, w + ".presets");
    if (p.contains("tracking")) c.presets.tracking = read_weights(p.at("tracking"), c.presets.tracking, w + ".presets.tracking");
    if (p.contains("eco")) c.presets.eco = read_weights(p.at("eco"), c.presets.eco, w + ".presets.eco");
  }
  read(j, "sigma", c.sigma, w);
  read(j, "penalty_weight", c.penalty_weight, w);
  read(j, "max_outer", c.max_outer, w);
  read(j, "max_inner", c.max_inner, w);
  read(j, "a_p_filter_tau", c.a_p_filter_tau, w);
  read(j, "divergence_limit", c.divergence_limit, w);
  read(j, "safe_stop_torque", c.safe_stop_torque, w);
  read(j, "safe_stop_rate", c.safe_stop_rate, w);
  c.disturbance.params = j.contains("uncertainty") ? read_uncertainty(j.at("uncertainty"), nominal)
                                                   : setalg::UncertainParams::exact(control::param_vector(nominal));
  auto range_box = [&](const char* key, setalg::IntervalBox& out) {
    if (!j.contains(key)) return;
    const auto [lo, hi] = read_range(j.at(key), w + "." + key);
    if (!(lo <= 0.0 && hi >= 0.0)) throw ConfigError(w + "." + key + ": range must contain 0");
    out = setalg::IntervalBox{{lo}, {hi}};
  };
  range_box("preceding_accel", c.disturbance.preceding_accel);
  range_box("preceding_accel_error", c.disturbance.preceding_accel_error);
  read(j, "v_max", c.disturbance.v_max, w);
  c.disturbance.constants.rho_a = nominal.rho_a;
  c.disturbance.constants.area = nominal.area;
  c.disturbance.constants.gear_ratio = nominal.gear_ratio;
  if (j.contains("estimators")) {
    const auto& e = j.at("estimators");
    const std::string we = w + ".estimators";
    check_keys(e, {"p0", "lambda", "forgetting"}, we);
    read(e, "p0", c.estimators.p0, we);
    read(e, "lambda", c.estimators.lambda, we);
    if (e.contains("forgetting")) {
      const auto& f = e.at("forgetting");
      check_keys(f, {"beta_0", "beta_f", "time_constant"}, we + ".forgetting");
      read(f, "beta_0", c.estimators.schedule.beta_0, we);
      read(f, "beta_f", c.estimators.schedule.beta_f, we);
      read(f, "time_constant", c.estimators.schedule.time_constant, we);
    }
    if (!(c.estimators.p0 > 0.0) || !(c.estimators.lambda > 0.0))
      throw ConfigError(we + ": p0 and lambda must be > 0");
  }
  c.apply_mode(control::parse_mode(mode));
}

inline plant::PiecewiseLinear read_table(const json& j, const char* x_key, const char* y_key, const std::string& where) {
  check_keys(j, {x_key, y_key}, where);
  if (!j.contains(x_key) || !j.contains(y_key)) throw ConfigError(where + ": needs '" + x_key + "' and '" + y_key + "'");
  const Eigen::VectorXd x = read_vector(j.at(x_key), where), y = read_vector(j.at(y_key), where);
  return plant::PiecewiseLinear(std::vector<double>(x.data(), x.data() + x.size()),
                                std::vector<double>(y.data(), y.data() + y.size()));
}

}  // namespace detail

/// Builds a scenario from parsed JSON; relative paths resolve against base_dir.
inline ScenarioConfig scenario_from_json(const json& j, const std::filesystem::path& base_dir) {
  using detail::read;
  ScenarioConfig s;
  const std::string w = "scenario";
  detail::check_keys(j,
                     {"drive_cycle", "cycle_repeats", "controller", "plant", "model_errors", "env", "radar_delay",
                      "radar_noise", "seed", "duration", "plant_dt", "initial", "output", "description"},
                     w);
  if (!j.contains("drive_cycle")) throw ConfigError("scenario: missing 'drive_cycle'");
  std::string cycle;
  read(j, "drive_cycle", cycle, w);
  std::filesystem::path cp(cycle);
  if (cp.is_relative()) cp = base_dir / cp;
  s.cycle_path = cp.string();
  read(j, "cycle_repeats", s.cycle_repeats, w);
  s.cycle = load_drive_cycle(s.cycle_path).repeated(s.cycle_repeats);

  if (j.contains("plant")) detail::read_plant(j.at("plant"), s.plant);
  if (j.contains("model_errors")) {
    const auto& e = j.at("model_errors");
    detail::check_keys(e, {"mass", "drag", "omit_rolling"}, "model_errors");
    read(e, "mass", s.errors.mass, "model_errors");
    read(e, "drag", s.errors.drag, "model_errors");
    read(e, "omit_rolling", s.errors.omit_rolling, "model_errors");
  }
  s.controller_nominal = nominal_from_errors(s.plant, s.errors);
  if (j.contains("controller")) detail::read_controller(j.at("controller"), s.controller, s.controller_nominal);
  else s.controller.disturbance.params = setalg::UncertainParams::exact(control::param_vector(s.controller_nominal));

  if (j.contains("env")) {
    const auto& e = j.at("env");
    detail::check_keys(e, {"grade", "wind"}, "env");
    if (e.contains("grade")) s.env.grade = detail::read_table(e.at("grade"), "position_m", "rad", "env.grade");
    if (e.contains("wind")) s.env.wind = detail::read_table(e.at("wind"), "time_s", "mps", "env.wind");
  }
  read(j, "radar_delay", s.radar_delay, w);
  if (j.contains("radar_noise")) {
    const auto& n = j.at("radar_noise");
    detail::check_keys(n, {"gap_std", "rel_speed_std"}, "radar_noise");
    read(n, "gap_std", s.gap_noise, "radar_noise");
    read(n, "rel_speed_std", s.rel_speed_noise, "radar_noise");
  }
  read(j, "seed", s.seed, w);
  read(j, "duration", s.duration, w);
  read(j, "plant_dt", s.plant_dt, w);
  if (j.contains("initial")) {
    const auto& i = j.at("initial");
    detail::check_keys(i, {"gap_error", "soc"}, "initial");
    read(i, "gap_error", s.initial_gap_error, "initial");
    read(i, "soc", s.initial_soc, "initial");
  }
  read(j, "output", s.output, w);
  s.validate();
  return s;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return scenario_from_json(j, std::filesystem::path(path).parent_path());
}

}  // namespace atnmpc::harness
