#pragma once

// Mid-fidelity longitudinal PHEV plant: car-following physics with a
// first-order torque lag, road loads from grade and wind, and fuel/electric
// energy accounting.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "atnmpc/errors.hpp"

namespace atnmpc::plant {

inline constexpr double kGravity = 9.81;

/// Piecewise-linear table, held constant beyond the end breakpoints.
class PiecewiseLinear {
 public:
  PiecewiseLinear() : x_{0.0}, y_{0.0} {}
  explicit PiecewiseLinear(double constant) : x_{0.0}, y_{constant} {}
  PiecewiseLinear(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    if (x_.empty() || x_.size() != y_.size())
      throw ConfigError("piecewise-linear table needs matching, non-empty breakpoint/value columns");
    for (std::size_t i = 1; i < x_.size(); ++i)
      if (!(x_[i] > x_[i - 1])) throw ConfigError("piecewise-linear breakpoints must be strictly increasing");
  }

  double operator()(double x) const {
    if (x <= x_.front()) return y_.front();
    if (x >= x_.back()) return y_.back();
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    const std::size_t i = static_cast<std::size_t>(it - x_.begin());
    const double w = (x - x_[i - 1]) / (x_[i] - x_[i - 1]);
    return y_[i - 1] + w * (y_[i] - y_[i - 1]);
  }

  double min_value() const { return *std::min_element(y_.begin(), y_.end()); }
  double max_value() const { return *std::max_element(y_.begin(), y_.end()); }
  const std::vector<double>& breakpoints() const { return x_; }
  const std::vector<double>& values() const { return y_; }

 private:
  std::vector<double> x_;
  std::vector<double> y_;
};

/// Road grade over host position (rad) and head-wind speed over time (m/s).
struct EnvProfile {
  PiecewiseLinear grade;
  PiecewiseLinear wind;

  void validate() const {
    if (std::max(std::abs(grade.min_value()), std::abs(grade.max_value())) >= std::numbers::pi / 2)
      throw ConfigError("grade profile must stay within (-pi/2, pi/2)");
  }
};

/// Engine share of the total power demand as a function of power and SOC.
/// Regenerative (negative) power goes to the electric path; the logistic
/// blend keeps the split differentiable for the optimizer.
struct PowerRatio {
  double level_high_soc = 0.4;
  double level_low_soc = 1.0;
  double soc_threshold = 0.3;
  double smoothing_power = 500.0;  // W

  double level(double soc) const { return soc >= soc_threshold ? level_high_soc : level_low_soc; }
  double blend(double power) const { return 1.0 / (1.0 + std::exp(-power / smoothing_power)); }
  double operator()(double power, double soc) const { return level(soc) * blend(power); }
};

struct PlantParams {
  double m = 1600.0;           // kg
  double r_w = 0.3;            // m
  double rho_a = 1.2;          // kg/m^3
  double area = 2.2;           // m^2
  double c_d = 0.26;
  double mu_r0 = 0.009;
  double mu_rv = 1.5e-4;       // s/m
  double gear_ratio = 1.0;     // R_g
  double eta_p = 1.0;          // powertrain efficiency
  double tau_a = 0.25;         // s, actuation lag
  double k_a = 1.0;            // actuation gain
  // Energy-map coefficients and prices come from the scenario config.
  std::array<double, 4> alpha{};   // fuel map, kg/s
  std::array<double, 3> gamma{};   // SOC map, 1/s
  double fuel_price = 0.0;         // $/kg
  double electricity_price = 0.0;  // $ per unit SOC
  double v_floor = 1.0;        // m/s
  PowerRatio power_ratio;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("plant parameter ") + name + " must be > 0");
    };
    positive(m, "m");
    positive(r_w, "r_w");
    positive(tau_a, "tau_a");
    positive(eta_p, "eta_p");
    positive(v_floor, "v_floor");
    positive(power_ratio.smoothing_power, "power_ratio.smoothing_power");
  }

  /// Torque-to-acceleration gain R_g*eta_p/(m*r_w).
  double torque_gain() const { return gear_ratio * eta_p / (m * r_w); }
};

struct PlantState {
  double s_h = 0.0;          // m
  double v_h = 0.0;          // m/s
  double t_w = 0.0;          // N*m
  double soc = 0.9;
  double fuel_used = 0.0;    // kg
  double energy_cost = 0.0;  // $
};

/// Road load F_r at host speed v (N). Drag uses the signed square so a
/// tail wind faster than the vehicle pushes it forward.
inline double road_load(double v_h, double grade, double wind, const PlantParams& p) {
  const double rel = v_h + wind;
  const double drag = 0.5 * p.rho_a * p.area * p.c_d * rel * std::abs(rel);
  return -drag - (p.mu_r0 + p.mu_rv * v_h) * p.m * kGravity * std::cos(grade) -
         p.m * kGravity * std::sin(grade);
}

inline double road_load(const PlantState& state, const EnvProfile& env, const PlantParams& p, double t) {
  return road_load(state.v_h, env.grade(state.s_h), env.wind(t), p);
}

/// Host acceleration for wheel torque t_w.
inline double longitudinal_accel(double v_h, double t_w, double grade, double wind, const PlantParams& p) {
  return p.torque_gain() * t_w + road_load(v_h, grade, wind, p) / p.m;
}

/// Fuel mass rate, kg/s, clamped at zero.
inline double fuel_rate(double p_engine, double v_h, const PlantParams& p) {
  const auto& a = p.alpha;
  return std::max(0.0, a[0] + a[1] * p_engine + a[2] * p_engine * p_engine + a[3] * v_h);
}

/// SOC rate, 1/s. The quadratic term is the ohmic loss.
inline double soc_rate(double p_motor, const PlantParams& p) {
  const auto& g = p.gamma;
  return g[0] + g[1] * p_motor + g[2] * p_motor * p_motor;
}

struct PowerSplit {
  double engine = 0.0;  // W
  double motor = 0.0;   // W
};

/// Total demand v*u*m split by the power ratio.
inline PowerSplit split_power(double v_h, double accel_demand, double m, double power_ratio) {
  if (!(power_ratio >= 0.0 && power_ratio <= 1.0)) throw std::invalid_argument("split_power: PR outside [0, 1]");
  const double total = v_h * accel_demand * m;
  return {power_ratio * total, (1.0 - power_ratio) * total};
}

/// Distance-normalized energy cost, $/m. Below v_floor the divisor is frozen.
inline double energy_cost_rate(double v_h, const PowerSplit& power, const PlantParams& p) {
  const double v_eff = std::max(v_h, p.v_floor);
  return (p.fuel_price * fuel_rate(power.engine, v_h, p) - p.electricity_price * soc_rate(power.motor, p)) / v_eff;
}

inline double energy_cost_rate(const PlantState& state, const PowerSplit& power, const PlantParams& p) {
  return energy_cost_rate(state.v_h, power, p);
}

/// Power split of the plant at wheel torque t_w.
inline PowerSplit plant_power(double v_h, double t_w, double soc, const PlantParams& p) {
  const double demand = t_w / (p.m * p.r_w);
  const double total = v_h * demand * p.m;
  return split_power(v_h, demand, p.m, p.power_ratio(total, soc));
}

namespace detail {
struct Derivative {
  double ds, dv, dt_w, dfuel, dsoc, dcost;
};

inline Derivative plant_rhs(const PlantState& x, double torque_cmd, const EnvProfile& env, const PlantParams& p,
                            double t) {
  const double grade = env.grade(x.s_h);
  const double wind = env.wind(t);
  const double v = std::max(x.v_h, 0.0);
  const PowerSplit pw = plant_power(v, x.t_w, x.soc, p);
  const double fuel = fuel_rate(pw.engine, v, p);
  const double dsoc = soc_rate(pw.motor, p);
  double accel = longitudinal_accel(v, x.t_w, grade, wind, p);
  // At standstill the brakes and rolling resistance hold the car; it never reverses.
  if (x.v_h <= 0.0 && accel < 0.0) accel = 0.0;
  return {v,
          accel,
          (-x.t_w + p.k_a * torque_cmd) / p.tau_a,
          fuel,
          dsoc,
          p.fuel_price * fuel - p.electricity_price * dsoc};
}

inline PlantState advance(const PlantState& x, const Derivative& d, double h) {
  PlantState y = x;
  y.s_h += h * d.ds;
  y.v_h += h * d.dv;
  y.t_w += h * d.dt_w;
  y.fuel_used += h * d.dfuel;
  y.soc += h * d.dsoc;
  y.energy_cost += h * d.dcost;
  return y;
}
}  // namespace detail

/// One RK4 step of the plant under a held torque command.
inline PlantState step_plant(const PlantState& state, double torque_cmd, const EnvProfile& env,
                             const PlantParams& p, double t, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_plant: dt must be > 0");
  if (!std::isfinite(torque_cmd)) throw DivergenceError("step_plant: non-finite torque command");
  using detail::advance;
  using detail::plant_rhs;
  const auto k1 = plant_rhs(state, torque_cmd, env, p, t);
  const auto k2 = plant_rhs(advance(state, k1, dt / 2), torque_cmd, env, p, t + dt / 2);
  const auto k3 = plant_rhs(advance(state, k2, dt / 2), torque_cmd, env, p, t + dt / 2);
  const auto k4 = plant_rhs(advance(state, k3, dt), torque_cmd, env, p, t + dt);
  const detail::Derivative avg{(k1.ds + 2 * k2.ds + 2 * k3.ds + k4.ds) / 6,
                               (k1.dv + 2 * k2.dv + 2 * k3.dv + k4.dv) / 6,
                               (k1.dt_w + 2 * k2.dt_w + 2 * k3.dt_w + k4.dt_w) / 6,
                               (k1.dfuel + 2 * k2.dfuel + 2 * k3.dfuel + k4.dfuel) / 6,
                               (k1.dsoc + 2 * k2.dsoc + 2 * k3.dsoc + k4.dsoc) / 6,
                               (k1.dcost + 2 * k2.dcost + 2 * k3.dcost + k4.dcost) / 6};
  PlantState next = advance(state, avg, dt);
  next.v_h = std::max(0.0, next.v_h);
  next.soc = std::clamp(next.soc, 0.0, 1.0);
  if (!std::isfinite(next.v_h) || !std::isfinite(next.t_w) || !std::isfinite(next.s_h))
    throw DivergenceError("step_plant: non-finite plant state");
  return next;
}

/// Longitudinal parameter vector theta of the reduced model for given
/// physics and an assumed constant wind.
inline std::array<double, 5> longitudinal_theta(const PlantParams& p, double wind = 0.0) {
  const double k = p.rho_a * p.area * p.c_d / p.m;
  return {p.torque_gain(), 0.5 * k, k * wind + kGravity * p.mu_rv, kGravity,
          0.5 * k * wind * wind + kGravity * p.mu_r0};
}

}  // namespace atnmpc::plant
