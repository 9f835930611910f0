#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "support.hpp"

namespace nm = atnmpc::nmpc;
namespace tst = atnmpc::testing;
using atnmpc::setalg::IntervalBox;

namespace {

// Independent forward-Euler step of the augmented model written out row by row.
nm::Vec9 euler_reference(const nm::OcpSpec& s, const nm::Vec9& x, double c, double grade) {
  nm::Vec9 n;
  for (int block : {0, 6}) {
    const auto& th = block == 0 ? s.nominal_theta : s.adapted_theta;
    const double p = x[block], v = x[block + 1], t = x[block + 2];
    const double ep = x[3] - p - s.d0 - s.h * v, ev = x[4] - v;
    const double u = c - s.k[0] * ep - s.k[1] * ev - s.k[2] * t;
    n[block] = p + s.ts * v;
    n[block + 1] = v + s.ts * (th[0] * t - th[1] * v * v - th[2] * v - th[3] * grade - th[4]);
    n[block + 2] = t + s.ts * (s.k_a * u - t) / s.tau_a;
  }
  n[3] = x[3] + s.ts * x[4];
  n[4] = std::max(0.0, x[4] + s.ts * x[5]);
  n[5] = x[5] * std::exp(-s.sigma * s.ts);
  return n;
}

Eigen::VectorXd random_c(std::mt19937_64& rng, int n, double lo = -300, double hi = 900) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd c(n);
  for (int i = 0; i < n; ++i) c[i] = u(rng);
  return c;
}

}  // namespace

TEST(Rollout, LargeSigmaKillsPrecedingAccel) {
  auto s = tst::wide_spec();
  s.sigma = 1e4;
  auto x0 = nm::AugmentedState::anchored(0, 10, 200, 25, 10, 1.5);
  const auto traj = nm::rollout(s, x0, Eigen::VectorXd::Constant(s.np, 300.0));
  EXPECT_NEAR(traj[1][nm::kAp], 0.0, 1e-12);
  EXPECT_NEAR(traj[5][nm::kVp], traj[1][nm::kVp], 1e-12);
}

TEST(Rollout, IdenticalThetaGivesIdenticalBlocks) {
  auto s = tst::wide_spec();
  std::mt19937_64 rng(1);
  const auto x0 = tst::random_state(rng, s);
  ASSERT_TRUE(x0.anchors_match());
  const auto traj = nm::rollout(s, x0, random_c(rng, s.np), {0.01, 0.02});
  for (const auto& x : traj) {
    EXPECT_EQ(x[nm::kPn], x[nm::kPe]);
    EXPECT_EQ(x[nm::kVn], x[nm::kVe]);
    EXPECT_EQ(x[nm::kTn], x[nm::kTe]);
  }
}

TEST(Rollout, MatchesEulerComposition) {
  auto s = tst::wide_spec();
  s.adapted_theta[1] *= 1.4;
  s.adapted_theta[4] += 0.05;
  std::mt19937_64 rng(2);
  const std::vector<double> grades{0.0, 0.01, 0.02, 0.03, 0.02, 0.0, -0.01, -0.02, -0.02, -0.01};
  for (int trial = 0; trial < 20; ++trial) {
    const auto x0 = tst::random_state(rng, s);
    const auto c = random_c(rng, s.np);
    const auto traj = nm::rollout(s, x0, c, grades);
    nm::Vec9 x = x0.x;
    for (int i = 0; i < s.np; ++i) {
      x = euler_reference(s, x, c[i], grades[i]);
      ASSERT_LT((x - traj[i + 1]).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, x.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(Rollout, WrongLengthThrows) {
  auto s = tst::wide_spec();
  EXPECT_THROW(nm::rollout(s, {}, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST(Cost, PerfectTrackingLeavesEnergyConstant) {
  auto s = tst::wide_spec();
  s.nominal_theta[4] = s.adapted_theta[4] = 0.0;  // no static load: rest is an equilibrium
  const auto x0 = nm::AugmentedState::anchored(0, 0, 0, s.d0, 0, 0);
  const Eigen::VectorXd c = Eigen::VectorXd::Zero(s.np);
  const auto traj = nm::rollout(s, x0, c);
  const double e0 = (s.energy.fuel_price * s.energy.fuel[0] - s.energy.electricity_price * s.energy.soc[0]) /
                    s.energy.v_floor;
  EXPECT_NEAR(nm::cost(s, traj, c), s.np * s.weights.w_energy * e0, 1e-15);
}

TEST(Cost, LinearInTrackingWeight) {
  auto s = tst::wide_spec();
  std::mt19937_64 rng(3);
  const auto x0 = tst::random_state(rng, s);
  const auto c = random_c(rng, s.np);
  auto j = [&](double w1) {
    auto t = s;
    t.weights.w_ep = w1;
    return nm::cost(t, nm::rollout(t, x0, c), c);
  };
  EXPECT_NEAR(j(2.0) - j(1.0), j(1.0) - j(0.0), 1e-9 * std::abs(j(1.0)));
}

TEST(Cost, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    auto s = trial % 2 ? tst::banded_spec() : tst::wide_spec();
    s.adapted_theta[1] *= 1.3;
    s.energy.battery_soc = trial % 3 == 0 ? 0.2 : 0.8;
    const auto x0 = tst::random_state(rng, s);
    const Eigen::VectorXd nu = random_c(rng, s.np, -1500, 1800) / s.u_ref;
    const std::vector<double> grades{0.02, 0.02, 0.01};
    const Eigen::VectorXd g = nm::residual(s, x0, nu, grades);
    for (int i = 0; i < s.np; ++i) {
      const double h = 1e-6;
      Eigen::VectorXd a = nu, b = nu;
      a[i] += h;
      b[i] -= h;
      const double fd = (nm::objective(s, x0, a, grades) - nm::objective(s, x0, b, grades)) / (2 * h);
      ASSERT_NEAR(g[i], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "trial " << trial << " i " << i;
    }
  }
}

TEST(EnergyCost, PartialsMatchFiniteDifferences) {
  const auto m = tst::energy_model(tst::energy_plant());
  for (double v : {0.5, 3.0, 12.0, 30.0}) {
    for (double u : {-900.0, -50.0, 10.0, 400.0, 1400.0}) {
      const auto e = nm::energy_cost(m, v, u);
      const double hv = 1e-6 * std::max(1.0, v), hu = 1e-4;
      const double dv = (nm::energy_cost(m, v + hv, u).value - nm::energy_cost(m, v - hv, u).value) / (2 * hv);
      const double du = (nm::energy_cost(m, v, u + hu).value - nm::energy_cost(m, v, u - hu).value) / (2 * hu);
      EXPECT_NEAR(e.d_v, dv, 1e-6 * std::max(1e-4, std::abs(dv)));
      EXPECT_NEAR(e.d_u, du, 1e-6 * std::max(1e-7, std::abs(du)));
    }
  }
}

TEST(EnergyCost, MatchesPlantAccounting) {
  auto p = tst::energy_plant();
  const auto m = tst::energy_model(p);
  const double v = 14.0, t = 600.0;
  const auto split = atnmpc::plant::plant_power(v, t, m.battery_soc, p);
  EXPECT_NEAR(nm::energy_cost(m, v, t).value, atnmpc::plant::energy_cost_rate(v, split, p), 1e-15);
}

TEST(Constraints, InsideAllNegative) {
  auto s = tst::banded_spec();
  const auto x0 = nm::AugmentedState::anchored(0, 15, 300, s.d0 + s.h * 15, 15, 0);
  const Eigen::VectorXd c = nm::cold_start(s, x0) * s.u_ref;
  const auto v = nm::constraint_violations(s, nm::rollout(s, x0, c), c);
  EXPECT_LT(v.maxCoeff(), 0.0);
}

TEST(Constraints, SingleFaceViolation) {
  auto s = tst::banded_spec(1);
  const auto x0 = nm::AugmentedState::anchored(0, 15, 300, s.d0 + s.h * 15, 15, 0);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(1, 300.0);
  auto traj = nm::rollout(s, x0, c);
  const double delta = 0.37;
  // Move the predicted nominal position so that e_p exceeds its upper face by delta.
  const double ep = nm::spacing(s, traj[1], false)[0];
  traj[1][nm::kPn] -= s.state_sets[1].upper(0) - ep + delta;
  const auto v = nm::constraint_violations(s, traj, c);
  int positive = 0;
  for (int i = 0; i < v.size(); ++i) positive += v[i] > 0;
  EXPECT_EQ(positive, 1);
  EXPECT_NEAR(v[0], delta, 1e-12);
}

TEST(Constraints, MatchMembershipOracle) {
  auto s = tst::banded_spec();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto x0 = tst::random_state(rng, s);
    const auto c = random_c(rng, s.np, -1500, 2500);
    const auto traj = nm::rollout(s, x0, c);
    const auto v = nm::constraint_violations(s, traj, c);
    bool inside = true;
    for (int i = 1; i <= s.np; ++i) {
      const double ep = traj[i][nm::kPp] - traj[i][nm::kPn] - s.d0 - s.h * traj[i][nm::kVn];
      const double ev = traj[i][nm::kVp] - traj[i][nm::kVn];
      inside = inside && s.state_sets[i].contains(Eigen::Vector3d(ep, ev, traj[i][nm::kTn]));
    }
    for (int i = 0; i < s.np; ++i) {
      const auto& x = traj[i];
      const double ep = x[nm::kPp] - x[nm::kPn] - s.d0 - s.h * x[nm::kVn];
      const double u = c[i] - s.k[0] * ep - s.k[1] * (x[nm::kVp] - x[nm::kVn]) - s.k[2] * x[nm::kTn];
      inside = inside && s.input_sets[i].contains(Eigen::VectorXd::Constant(1, u));
    }
    ASSERT_EQ(inside, v.maxCoeff() <= 0.0) << trial;
  }
}

TEST(Constraints, IndependentOfAdaptedModel) {
  auto s = tst::banded_spec();
  std::mt19937_64 rng(6);
  const auto x0 = tst::random_state(rng, s);
  const auto c = random_c(rng, s.np);
  const auto v1 = nm::constraint_violations(s, nm::rollout(s, x0, c), c);
  s.adapted_theta = {0.01, 0.5, 3.0, -2.0, 7.0};
  const auto v2 = nm::constraint_violations(s, nm::rollout(s, x0, c), c);
  EXPECT_EQ(v1, v2);
}

TEST(Residual, DirectionalDerivativeMatchesCentral) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = tst::banded_spec();
    const auto x0 = tst::random_state(rng, s);
    const Eigen::VectorXd nu = random_c(rng, s.np) / s.u_ref;
    Eigen::VectorXd dir(s.np);
    for (int i = 0; i < s.np; ++i) dir[i] = n(rng);
    const Eigen::VectorXd f = nm::residual(s, x0, nu);
    const Eigen::VectorXd fwd = nm::residual_directional(s, x0, nu, f, dir);
    const double h = 1e-5;
    const Eigen::VectorXd central = (nm::residual(s, x0, nu + h * dir) - nm::residual(s, x0, nu - h * dir)) / (2 * h);
    EXPECT_LT((fwd - central).norm(), 1e-3 * std::max(1e-6, central.norm())) << trial;
  }
}

TEST(Gmres, SolvesSmallSystemExactly) {
  Eigen::Matrix4d a;
  a << 4, 1, 0, 0, 1, 3, 1, 0, 0, 1, 2, 0.5, 0, 0, 0.5, 1;
  const Eigen::Vector4d b(1, -2, 0.5, 3);
  const auto r = nm::gmres([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, b, 5, 1e-12);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.iterations, 4);
  EXPECT_LT((a * r.x - b).norm(), 1e-10);
  // capped at fewer iterations the residual still never exceeds ||b||
  const auto r2 = nm::gmres([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return a * v; }, b, 2, 1e-12);
  EXPECT_EQ(r2.iterations, 2);
  EXPECT_LE((a * r2.x - b).norm(), b.norm());
  EXPECT_NEAR((a * r2.x - b).norm(), r2.residual, 1e-12);
}

TEST(Solver, UnconstrainedLqMatchesDenseLeastSquares) {
  // Linear models (no quadratic drag), no energy term, unconstraining sets,
  // 2-step horizon: J(c) is a quadratic whose minimizer is a dense LS solve.
  auto s = tst::wide_spec(2);
  s.nominal_theta[1] = s.adapted_theta[1] = 0.0;
  s.weights = {1.0, 2.0, 1e-6, 0.0};
  s.kkt_tol = 1e-12;
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x0 = tst::random_state(rng, s);
    // Affine map c -> residual vector r = [sqrt(w1) e_p(1..2), sqrt(w2) e_v(1..2), sqrt(w3) u(0..1)]
    auto residual_vector = [&](const Eigen::Vector2d& c) {
      Eigen::VectorXd r(6);
      nm::Vec9 x = x0.x;
      for (int i = 0; i < 2; ++i) {
        const double ep = x[3] - x[6] - s.d0 - s.h * x[7], ev = x[4] - x[7];
        r[4 + i] = std::sqrt(s.weights.w_u) * (c[i] - s.k[0] * ep - s.k[1] * ev - s.k[2] * x[8]);
        x = euler_reference(s, x, c[i], 0.0);
        r[i] = std::sqrt(s.weights.w_ep) * (x[3] - x[6] - s.d0 - s.h * x[7]);
        r[2 + i] = std::sqrt(s.weights.w_ev) * (x[4] - x[7]);
      }
      return r;
    };
    const Eigen::VectorXd r0 = residual_vector(Eigen::Vector2d::Zero());
    Eigen::MatrixXd g(6, 2);
    for (int j = 0; j < 2; ++j) g.col(j) = residual_vector(Eigen::Vector2d::Unit(j) * 1000.0) - r0;
    g /= 1000.0;
    const Eigen::Vector2d c_star = g.colPivHouseholderQr().solve(-r0);

    nm::OcpSolution sol;
    for (int rep = 0; rep < 5; ++rep) sol = nm::solve_step(s, x0, sol, s.ts);
    EXPECT_LT((sol.c0 - c_star).cwiseAbs().maxCoeff(), 1e-6) << sol.c0.transpose() << " vs " << c_star.transpose();
  }
}

TEST(Solver, EquilibriumGivesFeedforward) {
  auto s = tst::wide_spec();
  s.weights = {1.0, 1.0, 0.0, 0.0};
  const double v = 20.0;
  const auto& th = s.nominal_theta;
  const double t_eq = (th[1] * v * v + th[2] * v + th[4]) / th[0];
  const auto x0 = nm::AugmentedState::anchored(0, v, t_eq, s.d0 + s.h * v, v, 0);
  nm::OcpSolution sol;
  for (int rep = 0; rep < 5; ++rep) sol = nm::solve_step(s, x0, sol, s.ts);
  const double c_ff = t_eq / s.k_a + s.k[2] * t_eq;
  EXPECT_LT(sol.kkt_residual, 1e-6);
  EXPECT_NEAR(sol.c0[0], c_ff, 1e-3);
}

TEST(Solver, ResidualNonIncreasingUnderRepeatedSolves) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = tst::banded_spec();
    const auto x0 = tst::random_state(rng, s);
    nm::OcpSolution sol;
    double prev = nm::residual(s, x0, nm::cold_start(s, x0)).norm();
    for (int rep = 0; rep < 20; ++rep) {
      sol = nm::solve_step(s, x0, sol, s.ts);
      ASSERT_LE(sol.kkt_residual, prev) << trial;
      prev = sol.kkt_residual;
      if (prev < 1e-6) break;
    }
    EXPECT_LT(sol.kkt_residual, 1e-4) << trial;
    EXPECT_TRUE(sol.c0.allFinite());
  }
}

TEST(Solver, SaturationKeepsNominalInputInTightenedSet) {
  auto s = tst::banded_spec();
  s.weights.w_ep = 1e4;  // aggressive tracking pushes against the input faces
  const auto x0 = nm::AugmentedState::anchored(0, 10, 0, s.d0 + s.h * 10 + 4.5, 14, 0);
  nm::OcpSolution sol;
  for (int rep = 0; rep < 3; ++rep) sol = nm::solve_step(s, x0, sol, s.ts);
  const auto traj = nm::rollout(s, x0, sol.c0);
  for (int i = 0; i < s.np; ++i) {
    const double u = nm::block_input(s, traj[i], sol.c0[i], false);
    EXPECT_TRUE(s.input_sets[i].contains(Eigen::VectorXd::Constant(1, u), 1e-9)) << i << " " << u;
  }
}

TEST(Solver, Deterministic) {
  auto s = tst::banded_spec();
  std::mt19937_64 rng(10);
  const auto x0 = tst::random_state(rng, s);
  const auto a = nm::solve_step(s, x0, {}, s.ts), b = nm::solve_step(s, x0, {}, s.ts);
  EXPECT_EQ(a.c0, b.c0);
  EXPECT_EQ(a.kkt_residual, b.kkt_residual);
  EXPECT_EQ(a.inner_iters, b.inner_iters);
}

TEST(Solver, NonFiniteWarmStartReinitializes) {
  auto s = tst::banded_spec();
  std::mt19937_64 rng(11);
  const auto x0 = tst::random_state(rng, s);
  nm::OcpSolution warm;
  warm.continuation_state = Eigen::VectorXd::Constant(s.np, std::nan(""));
  const auto sol = nm::solve_step(s, x0, warm, s.ts);
  EXPECT_TRUE(sol.reinitialized);
  EXPECT_TRUE(sol.c0.allFinite());
}

TEST(Solver, WarmStartNeedsNoMoreInnerIterations) {
  // Follow a slowly moving state: warm-started solves should not need more
  // GMRES iterations on average than cold starts.
  auto s = tst::banded_spec();
  auto x0 = nm::AugmentedState::anchored(0, 15, 300, s.d0 + s.h * 15 + 1.0, 15.5, 0.2);
  nm::OcpSolution warm;
  long warm_iters = 0, cold_iters = 0;
  for (int k = 0; k < 100; ++k) {
    warm = nm::solve_step(s, x0, nm::shift(warm), s.ts);
    cold_iters += nm::solve_step(s, x0, {}, s.ts).inner_iters;
    warm_iters += warm.inner_iters;
    nm::Vec9 next = nm::step(s, x0.x, warm.c0[0], 0.0);
    x0 = nm::AugmentedState::anchored(0, next[nm::kVn], next[nm::kTn], next[nm::kPp] - next[nm::kPn], next[nm::kVp],
                                      next[nm::kAp]);
  }
  EXPECT_LE(warm_iters, cold_iters);
}

TEST(Spec, ValidateRejectsBadCaps) {
  auto s = tst::wide_spec();
  s.max_inner = 6;
  EXPECT_THROW(s.validate(), atnmpc::ConfigError);
  s.max_inner = 5;
  EXPECT_NO_THROW(s.validate());
}
