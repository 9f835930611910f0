#pragma once

// Per-period controller: spacing policy, stabilizer and tube setup, online
// estimators, and the NMPC solve that produces the torque command
// u = -K [e_p, e_v, T_w] + c0[0].

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "atnmpc/disturbance.hpp"
#include "atnmpc/errors.hpp"
#include "atnmpc/estimators.hpp"
#include "atnmpc/interval_box.hpp"
#include "atnmpc/model.hpp"
#include "atnmpc/nmpc.hpp"
#include "atnmpc/plant.hpp"
#include "atnmpc/stabilizer.hpp"
#include "atnmpc/tube.hpp"

namespace atnmpc::control {

using setalg::IntervalBox;

enum class Mode { kTracking, kEco, kAt, kNonrobust };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kTracking: return "tracking-nmpc";
    case Mode::kEco: return "eco-nmpc";
    case Mode::kAt: return "at-nmpc";
    case Mode::kNonrobust: return "nonrobust-nmpc";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::kTracking, Mode::kEco, Mode::kAt, Mode::kNonrobust})
    if (s == mode_name(m)) return m;
  throw ConfigError("unknown controller mode '" + s + "'");
}

/// Cost weights for the two weight presets; eco, at and nonrobust share the eco set.
struct WeightPresets {
  nmpc::Weights tracking{10.0, 10.0, 1e-6, 1.0};
  nmpc::Weights eco{10.0, 10.0, 1e-6, 1.0e4};
};

/// Bounds the tube is built for.
struct DisturbanceConfig {
  setalg::UncertainParams params;       ///< true-parameter box around the controller's nominal values
  setalg::LongitudinalConstants constants;
  IntervalBox preceding_accel{{-3.0}, {2.0}};      ///< range of a_p, m/s^2 (enters the delay term)
  IntervalBox preceding_accel_error{{-0.3}, {0.3}};  ///< one-step a_p prediction error, m/s^2
  double v_max = 40.0;                  ///< m/s
  int lipschitz_iterations = 3;
};

/// RLS settings for the three estimators.
struct EstimatorConfig {
  IntervalBox longitudinal_bounds{{1.0e-3, 0.0, -0.05, 5.0, -0.3}, {4.0e-3, 1.0e-3, 0.05, 15.0, 0.5}};
  Eigen::VectorXd longitudinal_scale = (Eigen::VectorXd(5) << 1000.0, 400.0, 20.0, 0.05, 1.0).finished();
  double longitudinal_output_scale = 1.0;
  IntervalBox fuel_bounds{{-1e-2, -1e-5, -1e-10, -1e-4}, {1e-2, 1e-5, 1e-10, 1e-4}};
  Eigen::VectorXd fuel_scale = (Eigen::VectorXd(4) << 1.0, 2e4, 4e8, 20.0).finished();
  double fuel_output_scale = 2e-3;
  IntervalBox soc_bounds{{-1e-3, -1e-6, -1e-11}, {1e-3, 1e-6, 1e-11}};
  Eigen::VectorXd soc_scale = (Eigen::VectorXd(3) << 1.0, 2e4, 4e8).finished();
  double soc_output_scale = 2e-3;
  double p0 = 100.0;
  double lambda = 1.0;  ///< regressor filter pole, 1/s
  est::ForgettingSchedule schedule;
};

struct ControllerConfig {
  Mode mode = Mode::kAt;
  double h = 1.5;   // s
  double d0 = 5.0;  // m
  double ts = 0.1;  // s
  int np = 10;
  Eigen::Matrix3d lqr_q = Eigen::Vector3d(1.0, 1.0, 1e-6).asDiagonal();  ///< on [e_p, e_v, T_w]
  double lqr_r = 0.1;
  IntervalBox x_box{{-5.0, -5.0, 0.0, -1500.0}, {5.0, 5.0, 40.0, 1500.0}};  ///< [e_p, e_v, v_h, T_w]
  IntervalBox u_box{{-1500.0}, {1500.0}};                                  ///< N*m
  double t_d = 0.5;  ///< assumed maximum measurement delay, s
  bool adapt = true;
  bool tighten = true;
  WeightPresets presets;
  double sigma = 0.5;
  double penalty_weight = 1.0e3;
  int max_outer = 5;
  int max_inner = 5;
  double a_p_filter_tau = 0.3;     ///< s
  int divergence_limit = 5;        ///< consecutive failed periods before safe-stop
  double safe_stop_torque = -600;  ///< N*m
  double safe_stop_rate = 1000;    ///< N*m/s
  DisturbanceConfig disturbance;
  EstimatorConfig estimators;

  /// Flags and weights implied by the mode.
  void apply_mode(Mode m) {
    mode = m;
    adapt = m == Mode::kAt || m == Mode::kNonrobust;
    tighten = m == Mode::kAt;
  }

  const nmpc::Weights& weights() const { return mode == Mode::kTracking ? presets.tracking : presets.eco; }

  void validate() const {
    if (!(h > 0.0)) throw ConfigError("controller: headway h must be > 0");
    if (!(d0 >= 0.0)) throw ConfigError("controller: d0 must be >= 0");
    if (!(ts > 0.0) || np < 1) throw ConfigError("controller: Ts must be > 0 and Np >= 1");
    if (x_box.dim() != 4 || x_box.is_empty()) throw ConfigError("controller: X must be a nonempty 4-D box");
    if (u_box.dim() != 1 || u_box.is_empty()) throw ConfigError("controller: U must be a nonempty 1-D box");
    if (!(t_d >= 0.0)) throw ConfigError("controller: T_d must be >= 0");
    if (!(lqr_r > 0.0)) throw ConfigError("controller: LQR input weight must be > 0");
    if (!(a_p_filter_tau > 0.0)) throw ConfigError("controller: a_p filter time constant must be > 0");
  }
};

struct Measurement {
  double timestamp = 0.0;       // s
  double gap = 0.0;             // m
  double rel_speed = 0.0;       // m/s, preceding minus host
  double v_h = 0.0;             // m/s
  double a_h = 0.0;             // m/s^2
  double grade = 0.0;           // rad
  double torque_applied = 0.0;  // N*m
  double soc = 0.9;
};

/// Powertrain signals consumed by the estimators between control periods.
struct EstimatorSample {
  double torque = 0.0;     // N*m, wheel torque
  double v_h = 0.0;        // m/s
  double grade = 0.0;      // rad
  double p_engine = 0.0;   // W
  double p_motor = 0.0;    // W
  double fuel_rate = 0.0;  // kg/s
  double soc_rate = 0.0;   // 1/s
};

struct SpacingErrors {
  double e_p = 0.0;
  double e_v = 0.0;
};

inline SpacingErrors spacing_errors(const Measurement& m, double h, double d0) {
  return {m.gap - (d0 + h * m.v_h), m.rel_speed};
}

/// 3-state error-system coordinates used by the stabilizer and tube.
inline IntervalBox error_box(const IntervalBox& x4) { return x4.project(model::kErrorIndices); }

/// Stabilizer, disturbance sets, tube and tightened constraints.
struct RobustSetup {
  model::LinearModel continuous;  ///< 3-state [e_p, e_v, T_w]
  model::LinearModel discrete;
  StabilizerDesign stabilizer;
  Eigen::MatrixXd a_closed;
  setalg::DisturbanceSpec w;  ///< per control step
  setalg::TubeSequence tube;
  setalg::TightenedSets sets;
};

inline model::ModelConstants model_constants(const ControllerConfig& cfg, const plant::PlantParams& nominal) {
  model::ModelConstants c;
  c.h = cfg.h;
  c.m = nominal.m / (nominal.eta_p * nominal.gear_ratio);
  c.r_w = nominal.r_w;
  c.tau_a = nominal.tau_a;
  c.k_a = nominal.k_a;
  return c;
}

/// Nominal parameter vector [m, r_w, C_d, mu_rv, mu_r0, grade, wind, eta] of a plant.
inline setalg::ParamVector param_vector(const plant::PlantParams& p) {
  setalg::ParamVector v;
  v << p.m, p.r_w, p.c_d, p.mu_rv, p.mu_r0, 0.0, 0.0, p.eta_p;
  return v;
}

inline RobustSetup build_robust_setup(const ControllerConfig& cfg, const plant::PlantParams& nominal) {
  cfg.validate();
  RobustSetup r;
  r.continuous = model::restrict(model::car_following_model(model_constants(cfg, nominal)), model::kErrorIndices);
  r.discrete = model::discretize_euler(r.continuous, cfg.ts);
  r.stabilizer = design_stabilizer(r.discrete.a, r.discrete.b, cfg.lqr_q, Eigen::MatrixXd::Constant(1, 1, cfg.lqr_r));
  r.a_closed = r.discrete.a - r.discrete.b * r.stabilizer.k;
  const IntervalBox x3 = error_box(cfg.x_box);

  if (!cfg.tighten) {
    const IntervalBox z = IntervalBox::zero(3);
    r.w = setalg::DisturbanceSpec::combine(z, z, z, z);
    r.tube = setalg::zero_tube(3, cfg.np);
    r.sets = setalg::tighten_constraints(x3, cfg.u_box, r.stabilizer.k, r.tube);
    return r;
  }

  auto d = cfg.disturbance;
  // An unset box means no parametric uncertainty around the nominal model.
  if (d.params.nominal[setalg::kMass] == 0.0) d.params = setalg::UncertainParams::exact(param_vector(nominal));
  const Eigen::VectorXd bg = r.continuous.b_g.col(0);
  const IntervalBox w_h = setalg::param_uncertainty_disturbance(
      d.params, d.constants, d.v_max, {cfg.u_box.lower(0), cfg.u_box.upper(0)}, bg, cfg.ts);
  const IntervalBox w_a = setalg::scale(cfg.ts, setalg::linear_map(r.continuous.b_p, d.preceding_accel_error));

  // Only the radar channels are delayed, so only their feedback columns matter.
  Eigen::MatrixXd k_delayed = r.stabilizer.k;
  k_delayed(0, 2) = 0.0;

  // W_g depends on the tube through the velocity-error radius; iterate.
  IntervalBox w_g = IntervalBox::zero(3);
  for (int it = 0; it <= d.lipschitz_iterations; ++it) {
    const IntervalBox rates = setalg::minkowski_sum(
        setalg::scale(1.0 / cfg.ts, w_g), setalg::minkowski_sum(setalg::scale(1.0 / cfg.ts, w_a),
                                                                setalg::scale(1.0 / cfg.ts, w_h)));
    const IntervalBox w_tau =
        setalg::scale(cfg.ts, setalg::delay_disturbance(cfg.t_d, k_delayed, x3, cfg.u_box, d.preceding_accel, rates,
                                                        r.continuous.a, r.continuous.b, r.continuous.b_p));
    r.w = setalg::DisturbanceSpec::combine(w_g, w_tau, w_a, w_h);
    r.tube = setalg::reachable_tube(r.a_closed, r.w.combined, cfg.np);
    if (it == d.lipschitz_iterations) break;
    const IntervalBox ev = r.tube.reach.back().project(std::array<int, 1>{1});
    w_g = setalg::scale(cfg.ts, setalg::lipschitz_disturbance(d.params, d.constants, d.v_max, ev, bg));
  }
  r.sets = setalg::tighten_constraints(x3, cfg.u_box, r.stabilizer.k, r.tube);
  return r;
}

struct Telemetry {
  double e_p = 0.0;
  double e_v = 0.0;
  double a_p = 0.0;
  double u = 0.0;
  double c0 = 0.0;
  double kkt_residual = 0.0;
  double solve_time = 0.0;
  int inner_iters = 0;
  int outer_iters = 0;
  unsigned active_flags = 0;  ///< bit 0 e_p, 1 e_v, 2 T_w, 3 input: a face of the plan is active
  std::uint64_t theta_hash = 0;
  bool held = false;          ///< solver failed; previous command held
  bool safe_stop = false;
  bool stagnated = false;
};

struct ControlOutput {
  double torque_cmd = 0.0;
  Telemetry telemetry;
};

namespace detail {

inline std::uint64_t fnv1a(const double* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &data[i], sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace detail

class Controller {
 public:
  /// nominal: the controller's (possibly wrong) plant model; energy maps and
  /// prices come from it as well.
  Controller(ControllerConfig cfg, const plant::PlantParams& nominal)
      : cfg_(std::move(cfg)),
        nominal_(nominal),
        setup_(build_robust_setup(cfg_, nominal_)),
        longitudinal_(make_longitudinal(cfg_, nominal_)),
        fuel_(make_static(cfg_.estimators.fuel_bounds, est::to_vector(nominal_.alpha), cfg_.estimators.fuel_scale,
                          cfg_.estimators.fuel_output_scale, cfg_.estimators)),
        soc_(make_static(cfg_.estimators.soc_bounds, est::to_vector(nominal_.gamma), cfg_.estimators.soc_scale,
                         cfg_.estimators.soc_output_scale, cfg_.estimators)) {
    spec_ = base_spec();
    spec_.validate();
  }

  const ControllerConfig& config() const { return cfg_; }
  const RobustSetup& setup() const { return setup_; }
  const nmpc::OcpSpec& spec() const { return spec_; }
  const est::LongitudinalEstimator& longitudinal() const { return longitudinal_; }
  const est::StaticEstimator& fuel() const { return fuel_; }
  const est::StaticEstimator& soc() const { return soc_; }

  /// Feeds the estimators; a no-op unless adaptation is enabled. Returns the
  /// longitudinal prediction error (0 when disabled).
  double observe(const EstimatorSample& s, double dt) {
    if (!cfg_.adapt) return 0.0;
    const double err = longitudinal_.update(s.torque, s.v_h, s.grade, dt);
    fuel_.update(est::fuel_regressor(s.p_engine, s.v_h), s.fuel_rate, dt);
    soc_.update(est::soc_regressor(s.p_motor), s.soc_rate, dt);
    return err;
  }

  ControlOutput control_period(const Measurement& m) {
    if (!(m.gap > 0.0)) throw ConfigError("measurement: gap must be > 0");
    if (last_timestamp_ && m.timestamp < *last_timestamp_)
      throw ConfigError("measurement: timestamps must be nondecreasing");

    ControlOutput out;
    auto& tel = out.telemetry;
    const SpacingErrors e = spacing_errors(m, cfg_.h, cfg_.d0);
    tel.e_p = e.e_p;
    tel.e_v = e.e_v;
    tel.a_p = update_preceding_accel(m);

    // Snapshot the estimates so one solve sees a consistent model.
    nmpc::OcpSpec spec = spec_;
    if (cfg_.adapt) {
      spec.adapted_theta = longitudinal_.theta();
      spec.energy.fuel = est::to_array<4>(fuel_.estimate().theta);
      spec.energy.soc = est::to_array<3>(soc_.estimate().theta);
    }
    spec.energy.battery_soc = m.soc;
    tel.theta_hash = detail::fnv1a(spec.adapted_theta.data(), 5);
    tel.theta_hash = detail::fnv1a(spec.energy.fuel.data(), 4, tel.theta_hash);
    tel.theta_hash = detail::fnv1a(spec.energy.soc.data(), 3, tel.theta_hash);

    const auto x0 = nmpc::AugmentedState::anchored(0.0, m.v_h, m.torque_applied, m.gap, m.v_h + m.rel_speed, tel.a_p);
    const std::vector<double> preview{m.grade};
    last_timestamp_ = m.timestamp;

    std::optional<nmpc::OcpSolution> sol;
    if (!safe_stop_) {
      try {
        sol = nmpc::solve_step(spec, x0, nmpc::shift(warm_), cfg_.ts, preview);
        if (!sol->c0.allFinite()) sol.reset();
      } catch (const DivergenceError&) {
        sol.reset();
      }
    }

    if (!sol) {
      ++failures_;
      if (failures_ > cfg_.divergence_limit) safe_stop_ = true;
      warm_ = {};
      tel.held = !safe_stop_;
      tel.safe_stop = safe_stop_;
      double cmd = last_cmd_;
      if (safe_stop_) cmd = std::max(cfg_.safe_stop_torque, last_cmd_ - cfg_.safe_stop_rate * cfg_.ts);
      out.torque_cmd = clamp_u(cmd);
      tel.u = out.torque_cmd;
      last_cmd_ = out.torque_cmd;
      return out;
    }

    failures_ = 0;
    warm_ = *sol;
    tel.c0 = sol->c0[0];
    tel.kkt_residual = sol->kkt_residual;
    tel.solve_time = sol->solve_time;
    tel.inner_iters = sol->inner_iters;
    tel.outer_iters = sol->outer_iters;
    tel.stagnated = sol->stagnated;
    tel.active_flags = active_flags(spec, x0, sol->c0, preview);

    out.torque_cmd = clamp_u(nmpc::block_input(spec, x0.x, sol->c0[0], false));
    tel.u = out.torque_cmd;
    last_cmd_ = out.torque_cmd;
    return out;
  }

 private:
  static est::LongitudinalEstimator make_longitudinal(const ControllerConfig& cfg, const plant::PlantParams& p) {
    const auto& ec = cfg.estimators;
    Eigen::VectorXd theta0 = est::to_vector(plant::longitudinal_theta(p));
    theta0 = theta0.cwiseMax(ec.longitudinal_bounds.lower()).cwiseMin(ec.longitudinal_bounds.upper());
    auto e = est::ParamEstimate::make(theta0, ec.longitudinal_bounds, ec.p0, ec.longitudinal_scale,
                                      ec.longitudinal_output_scale);
    e.lambda = ec.lambda;
    return est::LongitudinalEstimator(std::move(e), ec.schedule);
  }

  static est::StaticEstimator make_static(const IntervalBox& bounds, Eigen::VectorXd theta0,
                                          const Eigen::VectorXd& scale, double out_scale,
                                          const EstimatorConfig& ec) {
    theta0 = theta0.cwiseMax(bounds.lower()).cwiseMin(bounds.upper());
    return est::StaticEstimator(est::ParamEstimate::make(theta0, bounds, ec.p0, scale, out_scale), ec.schedule);
  }

  nmpc::OcpSpec base_spec() const {
    nmpc::OcpSpec s;
    s.np = cfg_.np;
    s.ts = cfg_.ts;
    s.weights = cfg_.weights();
    s.nominal_theta = plant::longitudinal_theta(nominal_);
    s.adapted_theta = s.nominal_theta;
    s.energy.fuel = nominal_.alpha;
    s.energy.soc = nominal_.gamma;
    s.energy.fuel_price = nominal_.fuel_price;
    s.energy.electricity_price = nominal_.electricity_price;
    s.energy.v_floor = nominal_.v_floor;
    s.energy.r_w = nominal_.r_w;
    s.energy.power_ratio = nominal_.power_ratio;
    s.h = cfg_.h;
    s.d0 = cfg_.d0;
    for (int i = 0; i < 3; ++i) s.k[static_cast<std::size_t>(i)] = setup_.stabilizer.k(0, i);
    s.k_a = nominal_.k_a;
    s.tau_a = nominal_.tau_a;
    s.sigma = cfg_.sigma;
    s.state_sets = setup_.sets.state;
    s.input_sets = setup_.sets.input;
    s.penalty_weight = cfg_.penalty_weight;
    s.max_outer = cfg_.max_outer;
    s.max_inner = cfg_.max_inner;
    return s;
  }

  double update_preceding_accel(const Measurement& m) {
    const double v_p = m.v_h + m.rel_speed;
    if (prev_vp_ && m.timestamp > prev_time_) {
      const double dt = m.timestamp - prev_time_;
      const double raw = (v_p - *prev_vp_) / dt;
      a_p_ += (1.0 - std::exp(-dt / cfg_.a_p_filter_tau)) * (raw - a_p_);
    }
    prev_vp_ = v_p;
    prev_time_ = m.timestamp;
    return a_p_;
  }

  static unsigned active_flags(const nmpc::OcpSpec& s, const nmpc::AugmentedState& x0, const Eigen::VectorXd& c,
                               const std::vector<double>& preview) {
    const auto viol = nmpc::constraint_violations(s, nmpc::rollout(s, x0, c, preview), c);
    unsigned flags = 0;
    constexpr double kTol = 1e-6;
    for (Eigen::Index i = 0; i < viol.size(); ++i) {
      if (viol[i] < -kTol) continue;
      flags |= i < 6 * s.np ? 1u << ((i % 6) / 2) : 8u;
    }
    return flags;
  }

  double clamp_u(double u) const { return std::clamp(u, cfg_.u_box.lower(0), cfg_.u_box.upper(0)); }

  ControllerConfig cfg_;
  plant::PlantParams nominal_;
  RobustSetup setup_;
  nmpc::OcpSpec spec_;
  est::LongitudinalEstimator longitudinal_;
  est::StaticEstimator fuel_;
  est::StaticEstimator soc_;
  nmpc::OcpSolution warm_;
  std::optional<double> last_timestamp_;
  std::optional<double> prev_vp_;
  double prev_time_ = 0.0;
  double a_p_ = 0.0;
  double last_cmd_ = 0.0;
  int failures_ = 0;
  bool safe_stop_ = false;
};

}  // namespace atnmpc::control
