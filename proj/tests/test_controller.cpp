#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <random>

#include "atnmpc/controller.hpp"

namespace ctl = atnmpc::control;
namespace nm = atnmpc::nmpc;
namespace sa = atnmpc::setalg;
using sa::IntervalBox;

namespace {

atnmpc::plant::PlantParams nominal_plant() {
  atnmpc::plant::PlantParams p;
  p.alpha = {2.0e-4, 6.9e-8, 2.0e-13, 1.0e-6};
  p.gamma = {-1.0e-6, -6.3e-8, -4.7e-13};
  p.fuel_price = 1.35;
  p.electricity_price = 0.53;
  return p;
}

ctl::ControllerConfig config(ctl::Mode mode) {
  ctl::ControllerConfig c;
  c.apply_mode(mode);
  auto& u = c.disturbance.params;
  u = sa::UncertainParams::exact(ctl::param_vector(nominal_plant()));
  u.min[sa::kMass] = 1400;
  u.max[sa::kMass] = 1900;
  u.max[sa::kDrag] = 0.4;
  u.min[sa::kGrade] = -0.02;
  u.max[sa::kGrade] = 0.02;
  return c;
}

ctl::Measurement following(double t, double v, double e_p = 0.0, double rel = 0.0, double torque = 300.0) {
  ctl::Measurement m;
  m.timestamp = t;
  m.v_h = v;
  m.gap = 5.0 + 1.5 * v + e_p;
  m.rel_speed = rel;
  m.torque_applied = torque;
  return m;
}

}  // namespace

TEST(Spacing, Examples) {
  ctl::Measurement m;
  m.v_h = 10.0;
  m.gap = 30.0;
  m.rel_speed = -0.7;
  const auto e = ctl::spacing_errors(m, 2.0, 5.0);
  EXPECT_DOUBLE_EQ(e.e_p, 5.0);
  EXPECT_DOUBLE_EQ(e.e_v, -0.7);
  m.gap = 5.0 + 2.0 * 10.0;
  EXPECT_DOUBLE_EQ(ctl::spacing_errors(m, 2.0, 5.0).e_p, 0.0);
  // raising v_h by dv at fixed gap lowers e_p by h dv
  const double before = ctl::spacing_errors(m, 2.0, 5.0).e_p;
  m.v_h += 3.0;
  EXPECT_NEAR(ctl::spacing_errors(m, 2.0, 5.0).e_p, before - 6.0, 1e-12);
}

TEST(Stabilizer, ZeroInputMatrixWithStableA) {
  Eigen::MatrixXd a(2, 2);
  a << 0.5, 0.1, 0.0, 0.3;
  const auto d = ctl::design_stabilizer(a, Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd::Identity(2, 2),
                                        Eigen::MatrixXd::Identity(1, 1));
  EXPECT_LT(d.k.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(d.spectral_radius, 1.0);
}

TEST(Modes, NestingByConfigDiff) {
  const auto tr = config(ctl::Mode::kTracking), eco = config(ctl::Mode::kEco), at = config(ctl::Mode::kAt),
             nr = config(ctl::Mode::kNonrobust);
  // tracking and eco differ only in weights
  EXPECT_EQ(tr.adapt, eco.adapt);
  EXPECT_EQ(tr.tighten, eco.tighten);
  EXPECT_NE(tr.weights().w_energy, eco.weights().w_energy);
  // at differs from eco only by adapt and tighten
  EXPECT_FALSE(eco.adapt || eco.tighten);
  EXPECT_TRUE(at.adapt && at.tighten);
  EXPECT_EQ(at.weights().w_energy, eco.weights().w_energy);
  EXPECT_EQ(at.weights().w_ep, eco.weights().w_ep);
  // nonrobust is at without tightening
  EXPECT_TRUE(nr.adapt);
  EXPECT_FALSE(nr.tighten);
  for (auto m : {ctl::Mode::kTracking, ctl::Mode::kEco, ctl::Mode::kAt, ctl::Mode::kNonrobust})
    EXPECT_EQ(ctl::parse_mode(ctl::mode_name(m)), m);
  EXPECT_THROW(ctl::parse_mode("robust"), atnmpc::ConfigError);
}

TEST(Config, ValidateRejectsBadValues) {
  auto c = config(ctl::Mode::kAt);
  c.h = 0.0;
  EXPECT_THROW(c.validate(), atnmpc::ConfigError);
  c = config(ctl::Mode::kAt);
  c.d0 = -1.0;
  EXPECT_THROW(c.validate(), atnmpc::ConfigError);
  c = config(ctl::Mode::kAt);
  c.x_box = IntervalBox::empty(4);
  EXPECT_THROW(c.validate(), atnmpc::ConfigError);
}

TEST(RobustSetup, StabilizerIsStable) {
  const auto r = ctl::build_robust_setup(config(ctl::Mode::kAt), nominal_plant());
  EXPECT_LT(r.stabilizer.spectral_radius, 1.0);
  EXPECT_NEAR(Eigen::MatrixXd(r.a_closed).eigenvalues().cwiseAbs().maxCoeff(), r.stabilizer.spectral_radius, 1e-12);
}

TEST(RobustSetup, UntightenedModesUseX) {
  const auto cfg = config(ctl::Mode::kNonrobust);
  const auto r = ctl::build_robust_setup(cfg, nominal_plant());
  for (const auto& s : r.sets.state) EXPECT_EQ(s, ctl::error_box(cfg.x_box));
  for (const auto& s : r.sets.input) EXPECT_EQ(s, cfg.u_box);
}

TEST(RobustSetup, TighteningShrinksMonotonically) {
  const auto cfg = config(ctl::Mode::kAt);
  const auto r = ctl::build_robust_setup(cfg, nominal_plant());
  ASSERT_EQ(static_cast<int>(r.sets.state.size()), cfg.np + 1);
  EXPECT_EQ(r.sets.state[0], ctl::error_box(cfg.x_box));
  for (int j = 1; j <= cfg.np; ++j) {
    EXPECT_TRUE(r.sets.state[j - 1].contains(r.sets.state[j]));
    EXPECT_TRUE(r.sets.input[j - 1].contains(r.sets.input[j]));
    EXPECT_FALSE(r.sets.state[j].is_empty());
  }
  EXPECT_LT(r.sets.state[cfg.np].upper(0), cfg.x_box.upper(0));
}

TEST(RobustSetup, ZeroDisturbanceGivesZeroTube) {
  auto cfg = config(ctl::Mode::kAt);
  cfg.t_d = 0.0;
  cfg.disturbance.params = sa::UncertainParams::exact(ctl::param_vector(nominal_plant()));
  cfg.disturbance.preceding_accel_error = IntervalBox::zero(1);
  const auto r = ctl::build_robust_setup(cfg, nominal_plant());
  EXPECT_EQ(r.w.combined, IntervalBox::zero(3));
  for (const auto& s : r.sets.state) EXPECT_EQ(s, ctl::error_box(cfg.x_box));
}

TEST(RobustSetup, DelayGrowsDisturbance) {
  auto cfg = config(ctl::Mode::kAt);
  cfg.t_d = 0.2;
  const auto a = ctl::build_robust_setup(cfg, nominal_plant());
  cfg.t_d = 0.5;
  const auto b = ctl::build_robust_setup(cfg, nominal_plant());
  EXPECT_TRUE(b.w.w_tau.contains(a.w.w_tau));
  EXPECT_GT(b.w.w_tau.upper(2), a.w.w_tau.upper(2));
  EXPECT_TRUE(a.sets.state.back().contains(b.sets.state.back()));
}

TEST(RobustSetup, OversizedDisturbanceIsInfeasible) {
  auto cfg = config(ctl::Mode::kAt);
  cfg.disturbance.preceding_accel_error = IntervalBox{{-40.0}, {40.0}};
  EXPECT_THROW(ctl::build_robust_setup(cfg, nominal_plant()), atnmpc::InfeasibleTightening);
}

TEST(RobustSetup, MonteCarloStaysInTube) {
  // e[k+1] = A_c e[k] + w with c0 = 0 and w uniform in W stays in the tube.
  const auto cfg = config(ctl::Mode::kAt);
  const auto r = ctl::build_robust_setup(cfg, nominal_plant());
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto& w = r.w.combined;
  for (int trial = 0; trial < 2000; ++trial) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(3);
    for (int k = 1; k <= cfg.np; ++k) {
      Eigen::VectorXd wk(3);
      for (int i = 0; i < 3; ++i) wk[i] = w.lower(i) + (w.upper(i) - w.lower(i)) * (trial % 4 == 0 ? std::round(u(rng)) : u(rng));
      e = r.a_closed * e + wk;
      ASSERT_TRUE(r.tube.boxes[k].contains(e, 1e-9)) << trial << " " << k;
    }
  }
}

TEST(Controller, EquilibriumGivesFeedforward) {
  auto cfg = config(ctl::Mode::kEco);
  cfg.presets.eco = {1.0, 1.0, 0.0, 0.0};
  const auto p = nominal_plant();
  ctl::Controller c(cfg, p);
  const auto th = atnmpc::plant::longitudinal_theta(p);
  const double v = 18.0;
  const double t_eq = (th[1] * v * v + th[2] * v + th[4]) / th[0];
  const auto out = c.control_period(following(0.0, v, 0.0, 0.0, t_eq));
  EXPECT_NEAR(out.torque_cmd, t_eq, 1e-6);
  EXPECT_FALSE(out.telemetry.held);
}

TEST(Controller, CommandAlwaysInU) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> uv(0.0, 35.0), ue(-8.0, 8.0), ur(-4.0, 4.0), ut(-1500.0, 1500.0);
  for (auto mode : {ctl::Mode::kTracking, ctl::Mode::kEco, ctl::Mode::kAt, ctl::Mode::kNonrobust}) {
    ctl::Controller c(config(mode), nominal_plant());
    for (int k = 0; k < 60; ++k) {
      auto m = following(0.1 * k, uv(rng), ue(rng), ur(rng), ut(rng));
      m.gap = std::max(m.gap, 0.5);
      const auto out = c.control_period(m);
      ASSERT_GE(out.torque_cmd, -1500.0);
      ASSERT_LE(out.torque_cmd, 1500.0);
    }
  }
}

TEST(Controller, CommandIsFeedbackPlusDecision) {
  auto cfg = config(ctl::Mode::kEco);
  ctl::Controller c(cfg, nominal_plant());
  const auto m = following(0.0, 15.0, 0.8, -0.3, 250.0);
  const auto out = c.control_period(m);
  const auto& k = c.spec().k;
  const double u = out.telemetry.c0 - k[0] * 0.8 - k[1] * -0.3 - k[2] * 250.0;
  EXPECT_NEAR(out.torque_cmd, std::clamp(u, -1500.0, 1500.0), 1e-9);
}

TEST(Controller, NonrobustMatchesAtWithZeroWidthDisturbance) {
  auto at = config(ctl::Mode::kAt);
  at.t_d = 0.0;
  at.disturbance.params = sa::UncertainParams::exact(ctl::param_vector(nominal_plant()));
  at.disturbance.preceding_accel_error = IntervalBox::zero(1);
  auto nr = at;
  nr.apply_mode(ctl::Mode::kNonrobust);
  ctl::Controller a(at, nominal_plant()), b(nr, nominal_plant());
  for (int k = 0; k < 30; ++k) {
    const auto m = following(0.1 * k, 12.0 + 0.2 * k, 0.5 * std::sin(0.3 * k), 0.2 * std::cos(0.2 * k), 200.0);
    ctl::EstimatorSample s{200.0, m.v_h, 0.0, 5000.0, 3000.0, 5e-4, -2e-4};
    for (int j = 0; j < 10; ++j) {
      a.observe(s, 0.01);
      b.observe(s, 0.01);
    }
    EXPECT_EQ(a.control_period(m).torque_cmd, b.control_period(m).torque_cmd);
  }
}

TEST(Controller, SnapshotFollowsEstimatesOnlyWhenAdapting) {
  for (auto mode : {ctl::Mode::kEco, ctl::Mode::kAt}) {
    ctl::Controller c(config(mode), nominal_plant());
    const auto h0 = c.control_period(following(0.0, 10.0)).telemetry.theta_hash;
    for (int j = 0; j < 200; ++j) {
      const double t = 0.01 * j;
      c.observe({400.0 + 300.0 * std::sin(t), 10.0 + t, 0.01, 8000.0, 2000.0, 8e-4, -3e-4}, 0.01);
    }
    const auto h1 = c.control_period(following(2.0, 12.0)).telemetry.theta_hash;
    if (mode == ctl::Mode::kAt)
      EXPECT_NE(h0, h1);
    else
      EXPECT_EQ(h0, h1);
  }
}

TEST(Controller, RejectsBadMeasurements) {
  ctl::Controller c(config(ctl::Mode::kEco), nominal_plant());
  auto m = following(1.0, 10.0);
  c.control_period(m);
  m.timestamp = 0.5;
  EXPECT_THROW(c.control_period(m), atnmpc::ConfigError);
  m.timestamp = 2.0;
  m.gap = 0.0;
  EXPECT_THROW(c.control_period(m), atnmpc::ConfigError);
}

TEST(Controller, DivergenceHoldsThenRampsToSafeStop) {
  auto cfg = config(ctl::Mode::kEco);
  ctl::Controller c(cfg, nominal_plant());
  const double first = c.control_period(following(0.0, 10.0, 0.0, 0.0, 300.0)).torque_cmd;
  double prev = first;
  for (int k = 1; k <= 12; ++k) {
    auto m = following(0.1 * k, 1e200);  // overflows the predicted drag
    m.gap = 50.0;
    const auto out = c.control_period(m);
    if (k <= cfg.divergence_limit) {
      EXPECT_TRUE(out.telemetry.held) << k;
      EXPECT_EQ(out.torque_cmd, first);
    } else {
      EXPECT_TRUE(out.telemetry.safe_stop) << k;
      EXPECT_LE(out.torque_cmd, prev);
      EXPECT_GE(out.torque_cmd, std::max(cfg.safe_stop_torque, prev - cfg.safe_stop_rate * cfg.ts) - 1e-9);
    }
    prev = out.torque_cmd;
  }
  EXPECT_EQ(prev, cfg.safe_stop_torque);
  // latched even once measurements recover
  EXPECT_TRUE(c.control_period(following(2.0, 10.0)).telemetry.safe_stop);
}

TEST(Controller, PrecedingAccelFromRelativeSpeed) {
  ctl::Controller c(config(ctl::Mode::kEco), nominal_plant());
  double a = 0.0;
  for (int k = 0; k < 40; ++k) a = c.control_period(following(0.1 * k, 10.0, 0.0, 0.05 * k)).telemetry.a_p;
  EXPECT_NEAR(a, 0.5, 1e-3);
}
