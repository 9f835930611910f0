#pragma once

// Closed-loop simulation: kinematic preceding vehicle from the drive cycle,
// RK4 plant at the fine step, controller at Ts, radar channels delayed by a
// ring buffer on the fine grid. Traces are columnar tables of doubles.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "atnmpc/controller.hpp"
#include "atnmpc/drive_cycle.hpp"
#include "atnmpc/errors.hpp"
#include "atnmpc/plant.hpp"
#include "atnmpc/scenario.hpp"

namespace atnmpc::harness {

/// Named columns of doubles; one row per sample.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw std::out_of_range("table has no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }
  std::vector<double> values(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
  friend bool operator==(const Table&, const Table&) = default;
};

inline void write_csv(std::ostream& out, const Table& t) {
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << t.columns[i];
  out << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << detail::format_double(r[i]);
    out << '\n';
  }
}

/// JSON object with one array per column, in column order.
inline nlohmann::ordered_json table_json(const Table& t) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : t.rows) arr.push_back(r[c]);
    j[t.columns[c]] = std::move(arr);
  }
  return j;
}

struct RunMetrics {
  double duration = 0.0;     // s
  double energy_cost = 0.0;  // $
  double fuel_used = 0.0;    // kg
  double soc_delta = 0.0;    // final minus initial
  double ep_rms = 0.0;       // m
  double ev_rms = 0.0;       // m/s
  long constraint_violations = 0;  ///< fine steps with true e_p outside X
  long ev_violations = 0;          ///< fine steps with true e_v outside X
  double max_ep_excursion = 0.0;   ///< max |e_p|, m
  double solve_time_p50 = 0.0;     // s
  double solve_time_p95 = 0.0;
  double solve_time_max = 0.0;
  long control_periods = 0;
  long held_periods = 0;
  long stagnated_periods = 0;
  bool safe_stop = false;
  bool diverged = false;
  bool delay_exceeds_bound = false;
};

inline nlohmann::ordered_json metrics_json(const RunMetrics& m) {
  return {{"duration", m.duration},
          {"energy_cost", m.energy_cost},
          {"fuel_used", m.fuel_used},
          {"soc_delta", m.soc_delta},
          {"ep_rms", m.ep_rms},
          {"ev_rms", m.ev_rms},
          {"constraint_violations", m.constraint_violations},
          {"ev_violations", m.ev_violations},
          {"max_ep_excursion", m.max_ep_excursion},
          {"solve_time_p50", m.solve_time_p50},
          {"solve_time_p95", m.solve_time_p95},
          {"solve_time_max", m.solve_time_max},
          {"control_periods", m.control_periods},
          {"held_periods", m.held_periods},
          {"stagnated_periods", m.stagnated_periods},
          {"safe_stop", m.safe_stop},
          {"diverged", m.diverged},
          {"delay_exceeds_bound", m.delay_exceeds_bound}};
}

struct RunResult {
  control::Mode mode = control::Mode::kAt;
  RunMetrics metrics;
  Table trace;      ///< one row per control period; deterministic
  Table timing;     ///< wall-clock solve times; not deterministic
  Table estimates;  ///< estimator states per control period
  std::optional<std::string> error;  ///< set when the run aborted on divergence
};

inline const std::vector<std::string>& trace_columns() {
  static const std::vector<std::string> c{
      "t",        "v_p",      "gap",       "e_p",        "e_v",       "v_h",       "t_w",
      "soc",      "meas_gap", "meas_rel_speed", "a_p_est", "c0",      "u",         "kkt_residual",
      "inner_iters", "outer_iters", "active_flags", "held", "safe_stop", "fuel_used", "energy_cost",
      "d_cost"};
  return c;
}

namespace detail {

/// Nearest-rank percentile of a sorted sample.
inline double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const auto n = static_cast<double>(sorted.size());
  const auto idx = static_cast<std::size_t>(std::max(0.0, std::ceil(q * n) - 1.0));
  return sorted[std::min(idx, sorted.size() - 1)];
}

/// Fixed-delay buffer on the fine grid: sample j is read back at j + delay.
class RadarBuffer {
 public:
  struct Sample {
    double gap = 0.0;
    double rel_speed = 0.0;
  };
  explicit RadarBuffer(long delay_steps) : delay_(delay_steps), ring_(static_cast<std::size_t>(delay_steps) + 1) {}
  void push(long j, Sample s) { ring_[slot(j)] = s; }
  /// Value seen at step j: the sample from max(j - delay, 0).
  Sample read(long j) const { return ring_[slot(std::max(j - delay_, 0L))]; }
  long delay() const { return delay_; }

 private:
  std::size_t slot(long j) const { return static_cast<std::size_t>(j) % ring_.size(); }
  long delay_;
  std::vector<Sample> ring_;
};

/// Torque holding v constant on the true plant (0 at standstill).
inline double equilibrium_torque(double v, double grade, double wind, const plant::PlantParams& p) {
  if (v <= 0.0) return 0.0;
  return -plant::road_load(v, grade, wind, p) / (p.m * p.torque_gain()) / p.k_a;
}

}  // namespace detail

/// Runs one closed-loop scenario. Divergence aborts the run with a partial
/// trace and `error` set; configuration errors and infeasible tightening throw.
inline RunResult run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  RunResult res;
  res.mode = cfg.controller.mode;
  res.metrics.delay_exceeds_bound = cfg.delay_exceeds_bound();
  res.trace.columns = trace_columns();
  res.timing.columns = {"t", "solve_time", "inner_iters", "outer_iters"};
  res.estimates.columns = {"t",        "theta_1",     "theta_2",     "theta_3",     "theta_4",
                           "theta_5",  "true_theta_1", "true_theta_2", "true_theta_3", "true_theta_4",
                           "true_theta_5", "long_error", "alpha_0",   "alpha_1",     "alpha_2",
                           "alpha_3",  "gamma_0",     "gamma_1",     "gamma_2"};

  control::Controller ctrl(cfg.controller, cfg.controller_nominal);
  const auto& truth = cfg.plant;
  const auto& env = cfg.env;
  const auto& x_box = cfg.controller.x_box;
  const double dt = cfg.plant_dt;
  const double ts = cfg.controller.ts;
  const long n_sub = std::lround(ts / dt);
  const long periods = static_cast<long>(std::floor(cfg.run_duration() / ts + 1e-9));
  const double t0 = cfg.cycle.times().front();
  const double h = cfg.controller.h, d0 = cfg.controller.d0;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  detail::RadarBuffer radar(std::lround(cfg.radar_delay / dt));

  plant::PlantState x;
  x.v_h = cfg.cycle.speed(t0);
  x.soc = cfg.initial_soc;
  x.t_w = detail::equilibrium_torque(x.v_h, env.grade(0.0), env.wind(0.0), truth);
  const double s_p0 = d0 + h * x.v_h + cfg.initial_gap_error;
  const double soc0 = x.soc;
  double cmd = x.t_w;
  double a_h = 0.0;
  double long_err = 0.0;

  auto preceding = [&](double t) { return std::pair{s_p0 + cfg.cycle.distance(t0 + t), cfg.cycle.speed(t0 + t)}; };

  double sum_ep2 = 0.0, sum_ev2 = 0.0;
  long samples = 0;
  std::vector<double> solve_times;
  solve_times.reserve(static_cast<std::size_t>(periods));
  auto& m = res.metrics;

  auto record_truth = [&](const plant::PlantState& s, double t) {
    const auto [s_p, v_p] = preceding(t);
    const double gap = s_p - s.s_h;
    if (!(gap > 0.0)) throw DivergenceError("collision with preceding vehicle at t=" + detail::format_double(t));
    const double e_p = gap - (d0 + h * s.v_h), e_v = v_p - s.v_h;
    sum_ep2 += e_p * e_p;
    sum_ev2 += e_v * e_v;
    ++samples;
    if (e_p < x_box.lower(0) || e_p > x_box.upper(0)) ++m.constraint_violations;
    if (e_v < x_box.lower(1) || e_v > x_box.upper(1)) ++m.ev_violations;
    m.max_ep_excursion = std::max(m.max_ep_excursion, std::abs(e_p));
  };

  long j = 0;
  try {
    {
      const auto [s_p, v_p] = preceding(0.0);
      radar.push(0, {s_p - x.s_h, v_p - x.v_h});
    }
    for (long k = 0; k < periods; ++k) {
      const double t = static_cast<double>(j) * dt;
      const auto [s_p, v_p] = preceding(t);
      const auto seen = radar.read(j);
      control::Measurement meas;
      meas.timestamp = t;
      meas.gap = std::max(seen.gap + cfg.gap_noise * normal(rng), 1e-3);
      meas.rel_speed = seen.rel_speed + cfg.rel_speed_noise * normal(rng);
      meas.v_h = x.v_h;
      meas.a_h = a_h;
      meas.grade = env.grade(x.s_h);
      meas.torque_applied = x.t_w;
      meas.soc = x.soc;

      const auto out = ctrl.control_period(meas);
      const auto& tel = out.telemetry;
      cmd = out.torque_cmd;
      ++m.control_periods;
      if (tel.held) ++m.held_periods;
      if (tel.stagnated) ++m.stagnated_periods;
      m.safe_stop = m.safe_stop || tel.safe_stop;
      solve_times.push_back(tel.solve_time);
      res.timing.rows.push_back({t, tel.solve_time, double(tel.inner_iters), double(tel.outer_iters)});

      const double gap = s_p - x.s_h;
      res.trace.rows.push_back({t,
                                v_p,
                                gap,
                                gap - (d0 + h * x.v_h),
                                v_p - x.v_h,
                                x.v_h,
                                x.t_w,
                                x.soc,
                                meas.gap,
                                meas.rel_speed,
                                tel.a_p,
                                tel.c0,
                                cmd,
                                tel.kkt_residual,
                                double(tel.inner_iters),
                                double(tel.outer_iters),
                                double(tel.active_flags),
                                tel.held ? 1.0 : 0.0,
                                tel.safe_stop ? 1.0 : 0.0,
                                x.fuel_used,
                                x.energy_cost,
                                0.0});
      {
        const auto th = ctrl.longitudinal().theta();
        const auto tr = plant::longitudinal_theta(truth, env.wind(t));
        const auto& a = ctrl.fuel().estimate().theta;
        const auto& g = ctrl.soc().estimate().theta;
        res.estimates.rows.push_back({t, th[0], th[1], th[2], th[3], th[4], tr[0], tr[1], tr[2], tr[3], tr[4],
                                      long_err, a[0], a[1], a[2], a[3], g[0], g[1], g[2]});
      }

      const double cost_start = x.energy_cost;
      auto& row = res.trace.rows.back();
      try {
        for (long i = 0; i < n_sub; ++i) {
          const double tf = static_cast<double>(j) * dt;
          const double grade = env.grade(x.s_h);
          const auto pw = plant::plant_power(std::max(x.v_h, 0.0), x.t_w, x.soc, truth);
          control::EstimatorSample es;
          es.torque = x.t_w;
          es.v_h = x.v_h;
          es.grade = grade;
          es.p_engine = pw.engine;
          es.p_motor = pw.motor;
          es.fuel_rate = plant::fuel_rate(pw.engine, std::max(x.v_h, 0.0), truth);
          es.soc_rate = plant::soc_rate(pw.motor, truth);
          long_err = ctrl.observe(es, dt);

          const double v_prev = x.v_h;
          x = plant::step_plant(x, cmd, env, truth, tf, dt);
          a_h = (x.v_h - v_prev) / dt;
          ++j;
          const double tn = static_cast<double>(j) * dt;
          record_truth(x, tn);
          const auto [sp, vp] = preceding(tn);
          radar.push(j, {sp - x.s_h, vp - x.v_h});
        }
      } catch (...) {
        row.back() = x.energy_cost - cost_start;
        throw;
      }
      row.back() = x.energy_cost - cost_start;
    }
  } catch (const DivergenceError& e) {
    res.error = e.what();
    m.diverged = true;
  }

  m.duration = static_cast<double>(j) * dt;
  m.energy_cost = x.energy_cost;
  m.fuel_used = x.fuel_used;
  m.soc_delta = x.soc - soc0;
  if (samples > 0) {
    m.ep_rms = std::sqrt(sum_ep2 / static_cast<double>(samples));
    m.ev_rms = std::sqrt(sum_ev2 / static_cast<double>(samples));
  }
  std::sort(solve_times.begin(), solve_times.end());
  m.solve_time_p50 = detail::percentile(solve_times, 0.50);
  m.solve_time_p95 = detail::percentile(solve_times, 0.95);
  m.solve_time_max = solve_times.empty() ? 0.0 : solve_times.back();
  return res;
}

/// The scenario with its controller switched to `mode`; everything else shared.
inline ScenarioConfig with_mode(ScenarioConfig cfg, control::Mode mode) {
  cfg.controller.apply_mode(mode);
  return cfg;
}

struct Comparison {
  std::vector<RunResult> runs;
  /// (cost - cost_tracking) / cost_tracking per mode name; empty without a tracking run.
  std::map<std::string, double> relative_cost;
};

/// Runs the scenario once per mode; each run owns its plant and controller,
/// so modes may run on parallel threads.
inline Comparison compare_modes(const ScenarioConfig& base, const std::vector<control::Mode>& modes,
                                bool parallel = true) {
  Comparison c;
  if (parallel) {
    std::vector<std::future<RunResult>> jobs;
    for (auto mode : modes)
      jobs.push_back(std::async(std::launch::async, [&base, mode] { return run_scenario(with_mode(base, mode)); }));
    for (auto& f : jobs) c.runs.push_back(f.get());
  } else {
    for (auto mode : modes) c.runs.push_back(run_scenario(with_mode(base, mode)));
  }
  const auto tracking = std::find_if(c.runs.begin(), c.runs.end(),
                                     [](const RunResult& r) { return r.mode == control::Mode::kTracking; });
  if (tracking != c.runs.end() && tracking->metrics.energy_cost != 0.0)
    for (const auto& r : c.runs)
      c.relative_cost[control::mode_name(r.mode)] =
          (r.metrics.energy_cost - tracking->metrics.energy_cost) / tracking->metrics.energy_cost;
  return c;
}

inline nlohmann::ordered_json comparison_json(const Comparison& c) {
  nlohmann::ordered_json j;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : c.runs) {
    auto row = metrics_json(r.metrics);
    row["mode"] = control::mode_name(r.mode);
    if (const auto it = c.relative_cost.find(control::mode_name(r.mode)); it != c.relative_cost.end())
      row["relative_cost_vs_tracking"] = it->second;
    if (r.error) row["error"] = *r.error;
    rows.push_back(std::move(row));
  }
  j["runs"] = std::move(rows);
  return j;
}

/// Comparison table as CSV: one row per mode.
inline void write_comparison_csv(std::ostream& out, const Comparison& c) {
  out << "mode,energy_cost,relative_cost_vs_tracking,fuel_used,soc_delta,ep_rms,ev_rms,constraint_violations,"
         "max_ep_excursion,solve_time_p50,solve_time_p95,solve_time_max\n";
  for (const auto& r : c.runs) {
    const auto& m = r.metrics;
    const auto it = c.relative_cost.find(control::mode_name(r.mode));
    out << control::mode_name(r.mode) << ',' << detail::format_double(m.energy_cost) << ','
        << (it == c.relative_cost.end() ? std::string() : detail::format_double(it->second)) << ','
        << detail::format_double(m.fuel_used) << ',' << detail::format_double(m.soc_delta) << ','
        << detail::format_double(m.ep_rms) << ',' << detail::format_double(m.ev_rms) << ','
        << m.constraint_violations << ',' << detail::format_double(m.max_ep_excursion) << ','
        << detail::format_double(m.solve_time_p50) << ',' << detail::format_double(m.solve_time_p95) << ','
        << detail::format_double(m.solve_time_max) << '\n';
  }
}

namespace detail {
inline nlohmann::ordered_json box_json(const setalg::IntervalBox& b) {
  if (b.is_empty()) return {{"empty", true}};
  return {{"lower", std::vector<double>(b.lower().data(), b.lower().data() + b.dim())},
          {"upper", std::vector<double>(b.upper().data(), b.upper().data() + b.dim())}};
}
}  // namespace detail

/// Stabilizer, disturbance sets, tube and tightened constraints of a scenario.
inline nlohmann::ordered_json tube_report(const ScenarioConfig& cfg) {
  const auto r = control::build_robust_setup(cfg.controller, cfg.controller_nominal);
  nlohmann::ordered_json j;
  j["mode"] = control::mode_name(cfg.controller.mode);
  j["coordinates"] = {"e_p", "e_v", "t_w"};
  j["k"] = std::vector<double>(r.stabilizer.k.data(), r.stabilizer.k.data() + r.stabilizer.k.size());
  j["closed_loop_spectral_radius"] = r.stabilizer.spectral_radius;
  j["disturbance"] = {{"w_g", detail::box_json(r.w.w_g)},
                      {"w_tau", detail::box_json(r.w.w_tau)},
                      {"w_a", detail::box_json(r.w.w_a)},
                      {"w_h", detail::box_json(r.w.w_h)},
                      {"combined", detail::box_json(r.w.combined)}};
  auto tube = nlohmann::ordered_json::array();
  for (const auto& b : r.tube.boxes) tube.push_back(detail::box_json(b));
  j["tube"] = std::move(tube);
  auto xs = nlohmann::ordered_json::array(), us = nlohmann::ordered_json::array();
  for (const auto& b : r.sets.state) xs.push_back(detail::box_json(b));
  for (const auto& b : r.sets.input) us.push_back(detail::box_json(b));
  j["tightened_state"] = std::move(xs);
  j["tightened_input"] = std::move(us);
  j["delay_exceeds_bound"] = cfg.delay_exceeds_bound();
  return j;
}

}  // namespace atnmpc::harness
