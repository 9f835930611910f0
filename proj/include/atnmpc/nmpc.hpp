#pragma once

// Finite-horizon optimal control problem with a nominal and an adapted host
// model, solved by continuation Newton iterations with matrix-free GMRES.
//
// Augmented state (9): nominal host [p, v, T], preceding [p_p, v_p, a_p],
// adapted host [p, v, T]. Both host blocks share the preceding vehicle and
// the same decision sequence c; the applied input is u = c - K [e_p, e_v, T].

#include <Eigen/Core>

#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "atnmpc/errors.hpp"
#include "atnmpc/interval_box.hpp"
#include "atnmpc/plant.hpp"

namespace atnmpc::nmpc {

using Vec9 = Eigen::Matrix<double, 9, 1>;
using Theta = std::array<double, 5>;

enum AugIndex : int { kPn = 0, kVn, kTn, kPp, kVp, kAp, kPe, kVe, kTe };

struct AugmentedState {
  Vec9 x = Vec9::Zero();

  /// Both host blocks start from the same measured state.
  static AugmentedState anchored(double p_h, double v_h, double t_w, double p_p, double v_p, double a_p) {
    AugmentedState s;
    s.x << p_h, v_h, t_w, p_p, v_p, a_p, p_h, v_h, t_w;
    return s;
  }
  bool anchors_match() const { return x[kPn] == x[kPe] && x[kVn] == x[kVe] && x[kTn] == x[kTe]; }
};

/// Energy model used by the cost: fitted fuel/SOC maps, prices and power split.
struct EnergyModel {
  std::array<double, 4> fuel{};  // A
  std::array<double, 3> soc{};   // Gamma
  double fuel_price = 0.0;
  double electricity_price = 0.0;
  double v_floor = 1.0;
  double r_w = 0.3;
  plant::PowerRatio power_ratio;
  double battery_soc = 0.9;
};

struct Weights {
  double w_ep = 1.0;      // ω1
  double w_ev = 1.0;      // ω2
  double w_u = 0.0;       // ω3
  double w_energy = 0.0;  // ω4
};

struct OcpSpec {
  int np = 10;
  double ts = 0.1;
  Weights weights;
  Theta nominal_theta{};   // fixed physics of the nominal block
  Theta adapted_theta{};   // current estimate for the adapted block
  EnergyModel energy;
  double h = 1.5;
  double d0 = 5.0;
  std::array<double, 3> k{};  // feedback on [e_p, e_v, T_w]
  double k_a = 1.0;
  double tau_a = 0.25;
  double sigma = 0.5;
  /// Per-step boxes on [e_p, e_v, T_w] (size np+1, index 0 unused) and on
  /// the nominal input (size >= np).
  std::vector<setalg::IntervalBox> state_sets;
  std::vector<setalg::IntervalBox> input_sets;
  double penalty_weight = 1.0e3;
  std::array<double, 3> state_scale{1.0, 1.0, 1000.0};
  double u_ref = 1000.0;  // decision scaling, N*m
  int max_outer = 5;
  int max_inner = 5;
  double gmres_tol = 1e-6;
  double kkt_tol = 1e-6;
  double fd_step = 1e-6;
  double zeta = 10.0;  // continuation gain, 1/s
  double max_step = 0.5;  // cap on ||delta nu|| per Newton correction

  void validate() const {
    if (np < 1) throw ConfigError("OcpSpec: horizon must be >= 1");
    if (!(ts > 0.0) || !(tau_a > 0.0) || !(u_ref > 0.0) || !(max_step > 0.0))
      throw ConfigError("OcpSpec: Ts, tau_a, u_ref, max_step must be > 0");
    if (max_outer < 1 || max_outer > 5 || max_inner < 1 || max_inner > 5)
      throw ConfigError("OcpSpec: iteration caps must lie in [1, 5]");
    if (static_cast<int>(state_sets.size()) < np + 1 || static_cast<int>(input_sets.size()) < np)
      throw ConfigError("OcpSpec: tightened sets shorter than the horizon");
  }
};

struct OcpSolution {
  Eigen::VectorXd c0;                   ///< decision sequence after saturation, N*m
  Eigen::VectorXd continuation_state;   ///< unsaturated normalized iterate
  double kkt_residual = 0.0;
  double solve_time = 0.0;  // s
  int inner_iters = 0;
  int outer_iters = 0;
  bool stagnated = false;
  bool reinitialized = false;
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

namespace detail {

struct BlockIdx {
  int p, v, t;
};
inline constexpr BlockIdx kNominal{kPn, kVn, kTn};
inline constexpr BlockIdx kAdapted{kPe, kVe, kTe};

inline double accel(const Theta& th, double torque, double v, double grade) {
  return th[0] * torque - th[1] * v * v - th[2] * v - th[3] * grade - th[4];
}

}  // namespace detail

/// Headway errors of a host block: e_p = p_p - p - d0 - h v, e_v = v_p - v.
inline std::array<double, 2> spacing(const OcpSpec& s, const Vec9& x, bool adapted) {
  const auto b = adapted ? detail::kAdapted : detail::kNominal;
  return {x[kPp] - x[b.p] - s.d0 - s.h * x[b.v], x[kVp] - x[b.v]};
}

/// Applied input u = c - K [e_p, e_v, T] of a host block.
inline double block_input(const OcpSpec& s, const Vec9& x, double c, bool adapted) {
  const auto e = spacing(s, x, adapted);
  const double t = x[adapted ? kTe : kTn];
  return c - s.k[0] * e[0] - s.k[1] * e[1] - s.k[2] * t;
}

/// One forward-Euler step of the augmented model. The preceding vehicle's
/// acceleration decays exactly (a_p e^{-sigma Ts}) and its speed stays >= 0.
inline Vec9 step(const OcpSpec& s, const Vec9& x, double c, double grade) {
  Vec9 n;
  auto host = [&](const detail::BlockIdx& b, const Theta& th, bool adapted) {
    const double u = block_input(s, x, c, adapted);
    n[b.p] = x[b.p] + s.ts * x[b.v];
    n[b.v] = x[b.v] + s.ts * detail::accel(th, x[b.t], x[b.v], grade);
    n[b.t] = x[b.t] + s.ts * (-x[b.t] + s.k_a * u) / s.tau_a;
  };
  host(detail::kNominal, s.nominal_theta, false);
  host(detail::kAdapted, s.adapted_theta, true);
  n[kPp] = x[kPp] + s.ts * x[kVp];
  n[kVp] = std::max(0.0, x[kVp] + s.ts * x[kAp]);
  n[kAp] = x[kAp] * std::exp(-s.sigma * s.ts);
  return n;
}

inline double grade_at(const std::vector<double>& preview, int i) {
  if (preview.empty()) return 0.0;
  return preview[static_cast<std::size_t>(std::min<int>(i, static_cast<int>(preview.size()) - 1))];
}

inline std::vector<Vec9> rollout(const OcpSpec& s, const AugmentedState& x0, const Eigen::VectorXd& c,
                                 const std::vector<double>& grade_preview = {}) {
  if (c.size() != s.np) throw std::invalid_argument("rollout: input sequence length must equal Np");
  std::vector<Vec9> traj;
  traj.reserve(static_cast<std::size_t>(s.np) + 1);
  traj.push_back(x0.x);
  for (int i = 0; i < s.np; ++i) {
    traj.push_back(step(s, traj.back(), c[i], grade_at(grade_preview, i)));
    if (!traj.back().allFinite()) throw DivergenceError("rollout: non-finite predicted state");
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Cost and constraints
// ---------------------------------------------------------------------------

struct EnergyTerms {
  double value = 0.0;  // $/m
  double d_v = 0.0;
  double d_u = 0.0;
};

/// E(v, u) for torque command u: P = v u / r_w, split by PR, costed by the
/// fitted fuel and SOC maps, divided by max(v, v_floor). Returns partials.
inline EnergyTerms energy_cost(const EnergyModel& m, double v, double u) {
  const double power = v * u / m.r_w;
  const double level = m.power_ratio.level(m.battery_soc);
  const double sig = m.power_ratio.blend(power);
  const double pr = level * sig;
  const double dpr = level * sig * (1.0 - sig) / m.power_ratio.smoothing_power;
  const double pe = pr * power;
  const double pm = power - pe;
  const double dpe = pr + power * dpr;
  const double dpm = 1.0 - dpe;

  const auto& a = m.fuel;
  const double fuel_raw = a[0] + a[1] * pe + a[2] * pe * pe + a[3] * v;
  const bool fuel_on = fuel_raw > 0.0;
  const double fuel = fuel_on ? fuel_raw : 0.0;
  const double dfuel_dpe = fuel_on ? a[1] + 2.0 * a[2] * pe : 0.0;
  const double dfuel_dv = fuel_on ? a[3] : 0.0;
  const auto& g = m.soc;
  const double soc = g[0] + g[1] * pm + g[2] * pm * pm;
  const double dsoc_dpm = g[1] + 2.0 * g[2] * pm;

  const double num = m.fuel_price * fuel - m.electricity_price * soc;
  const double dnum_dp = m.fuel_price * dfuel_dpe * dpe - m.electricity_price * dsoc_dpm * dpm;
  const bool floored = v <= m.v_floor;
  const double v_eff = floored ? m.v_floor : v;

  EnergyTerms e;
  e.value = num / v_eff;
  e.d_u = dnum_dp * v / m.r_w / v_eff;
  e.d_v = (dnum_dp * u / m.r_w + m.fuel_price * dfuel_dv) / v_eff - (floored ? 0.0 : num / (v_eff * v_eff));
  return e;
}

/// Signed distances to the faces of the tightened sets: state faces on the
/// nominal [e_p, e_v, T] at steps 1..Np (6 per step), then nominal input
/// faces at steps 0..Np-1 (2 per step). Positive entries are violations.
inline Eigen::VectorXd constraint_violations(const OcpSpec& s, const std::vector<Vec9>& traj,
                                             const Eigen::VectorXd& c) {
  Eigen::VectorXd v(8 * s.np);
  int k = 0;
  for (int i = 1; i <= s.np; ++i) {
    const auto e = spacing(s, traj[i], false);
    const std::array<double, 3> y{e[0], e[1], traj[i][kTn]};
    const auto& box = s.state_sets[i];
    for (int j = 0; j < 3; ++j) {
      v[k++] = y[j] - box.upper(j);
      v[k++] = box.lower(j) - y[j];
    }
  }
  for (int i = 0; i < s.np; ++i) {
    const double u = block_input(s, traj[i], c[i], false);
    v[k++] = u - s.input_sets[i].upper(0);
    v[k++] = s.input_sets[i].lower(0) - u;
  }
  return v;
}

inline double cost(const OcpSpec& s, const std::vector<Vec9>& traj, const Eigen::VectorXd& c) {
  const auto& w = s.weights;
  double j = 0.0;
  for (int i = 1; i <= s.np; ++i) {
    const auto e = spacing(s, traj[i], true);
    j += w.w_ep * e[0] * e[0] + w.w_ev * e[1] * e[1];
  }
  for (int i = 0; i < s.np; ++i) {
    const double u = block_input(s, traj[i], c[i], true);
    j += w.w_u * u * u;
    if (w.w_energy != 0.0) j += w.w_energy * energy_cost(s.energy, traj[i][kVe], u).value;
  }
  const Eigen::VectorXd viol = constraint_violations(s, traj, c);
  for (int i = 0; i < viol.size(); ++i) {
    if (viol[i] <= 0.0) continue;
    const int local = i < 6 * s.np ? (i % 6) / 2 : -1;
    const double scale = local >= 0 ? s.state_scale[local] : s.u_ref;
    j += s.penalty_weight * (viol[i] / scale) * (viol[i] / scale);
  }
  return j;
}

/// Penalized cost as a function of the normalized decision nu = c / u_ref.
inline double objective(const OcpSpec& s, const AugmentedState& x0, const Eigen::VectorXd& nu,
                        const std::vector<double>& grade_preview = {}) {
  const Eigen::VectorXd c = s.u_ref * nu;
  return cost(s, rollout(s, x0, c, grade_preview), c);
}

/// Gradient of the penalized cost with respect to nu, by a backward adjoint
/// sweep over the two host blocks (the preceding vehicle does not depend on c).
inline Eigen::VectorXd residual(const OcpSpec& s, const AugmentedState& x0, const Eigen::VectorXd& nu,
                                const std::vector<double>& grade_preview = {}) {
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  using Mat6 = Eigen::Matrix<double, 6, 6>;
  const Eigen::VectorXd c = s.u_ref * nu;
  const auto traj = rollout(s, x0, c, grade_preview);
  const auto& w = s.weights;
  const double rho = s.penalty_weight;
  const double du_dp = s.k[0], du_dv = s.k[0] * s.h + s.k[1], du_dt = -s.k[2];

  // d(penalty)/d(y) for value y against [lo, hi] with scale sc.
  auto pen = [&](double y, double lo, double hi, double sc) {
    if (y > hi) return 2.0 * rho * (y - hi) / (sc * sc);
    if (y < lo) return -2.0 * rho * (lo - y) / (sc * sc);
    return 0.0;
  };

  // Host-state layout in the adjoint: [p̄, v̄, T̄, p̂, v̂, T̂].
  auto state_grad = [&](int i, Vec6& g) {
    const Vec9& x = traj[static_cast<std::size_t>(i)];
    const auto ea = spacing(s, x, true);
    g[3] += -2.0 * w.w_ep * ea[0];
    g[4] += -2.0 * w.w_ep * s.h * ea[0] - 2.0 * w.w_ev * ea[1];
    const auto en = spacing(s, x, false);
    const auto& box = s.state_sets[static_cast<std::size_t>(i)];
    const double gp = pen(en[0], box.lower(0), box.upper(0), s.state_scale[0]);
    const double gv = pen(en[1], box.lower(1), box.upper(1), s.state_scale[1]);
    const double gt = pen(x[kTn], box.lower(2), box.upper(2), s.state_scale[2]);
    g[0] += -gp;
    g[1] += -s.h * gp - gv;
    g[2] += gt;
  };

  auto transition = [&](int i, Mat6& fz, Vec6& fc) {
    const Vec9& x = traj[static_cast<std::size_t>(i)];
    fz.setZero();
    const double gain = s.ts * s.k_a / s.tau_a;
    auto block = [&](int o, const Theta& th, double v) {
      fz(o + 0, o + 0) = 1.0;
      fz(o + 0, o + 1) = s.ts;
      fz(o + 1, o + 1) = 1.0 + s.ts * (-2.0 * th[1] * v - th[2]);
      fz(o + 1, o + 2) = s.ts * th[0];
      fz(o + 2, o + 0) = gain * du_dp;
      fz(o + 2, o + 1) = gain * du_dv;
      fz(o + 2, o + 2) = 1.0 - s.ts / s.tau_a + gain * du_dt;
      fc[o + 2] = gain;
      fc[o + 0] = fc[o + 1] = 0.0;
    };
    block(0, s.nominal_theta, x[kVn]);
    block(3, s.adapted_theta, x[kVe]);
  };

  Eigen::VectorXd grad(s.np);
  Vec6 lambda = Vec6::Zero();
  state_grad(s.np, lambda);
  Mat6 fz;
  Vec6 fc;
  for (int i = s.np - 1; i >= 0; --i) {
    const Vec9& x = traj[static_cast<std::size_t>(i)];
    Vec6 lz = Vec6::Zero();
    double lc = 0.0;
    // adapted-block input and energy terms
    const double ua = block_input(s, x, c[i], true);
    double dl_du = 2.0 * w.w_u * ua;
    if (w.w_energy != 0.0) {
      const auto e = energy_cost(s.energy, x[kVe], ua);
      dl_du += w.w_energy * e.d_u;
      lz[4] += w.w_energy * e.d_v;
    }
    lc += dl_du;
    lz[3] += dl_du * du_dp;
    lz[4] += dl_du * du_dv;
    lz[5] += dl_du * du_dt;
    // nominal input faces
    const double un = block_input(s, x, c[i], false);
    const auto& ub = s.input_sets[static_cast<std::size_t>(i)];
    const double gu = pen(un, ub.lower(0), ub.upper(0), s.u_ref);
    lc += gu;
    lz[0] += gu * du_dp;
    lz[1] += gu * du_dv;
    lz[2] += gu * du_dt;
    if (i >= 1) state_grad(i, lz);

    transition(i, fz, fc);
    grad[i] = lc + fc.dot(lambda);
    lambda = lz + fz.transpose() * lambda;
  }
  return s.u_ref * grad;
}

/// Forward-difference directional derivative of the residual: F'(nu) v.
inline Eigen::VectorXd residual_directional(const OcpSpec& s, const AugmentedState& x0, const Eigen::VectorXd& nu,
                                            const Eigen::VectorXd& f_nu, const Eigen::VectorXd& v,
                                            const std::vector<double>& grade_preview = {}) {
  const double vn = v.norm();
  if (vn == 0.0) return Eigen::VectorXd::Zero(nu.size());
  const double h = s.fd_step * std::max(1.0, nu.norm()) / vn;
  return (residual(s, x0, nu + h * v, grade_preview) - f_nu) / h;
}

// ---------------------------------------------------------------------------
// GMRES
// ---------------------------------------------------------------------------

struct GmresResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double residual = 0.0;  // ||b - A x||
  bool converged = false;
};

/// Restart-free GMRES from x = 0 with at most max_iter Arnoldi steps;
/// stops when ||b - A x|| <= tol ||b||.
template <typename MatVec>
GmresResult gmres(const MatVec& apply, const Eigen::VectorXd& b, int max_iter, double tol) {
  const Eigen::Index n = b.size();
  GmresResult out;
  out.x = Eigen::VectorXd::Zero(n);
  const double beta = b.norm();
  out.residual = beta;
  if (beta == 0.0) {
    out.converged = true;
    return out;
  }
  const int m = static_cast<int>(std::min<Eigen::Index>(max_iter, n));
  Eigen::MatrixXd v(n, m + 1);
  Eigen::MatrixXd hh = Eigen::MatrixXd::Zero(m + 1, m);
  Eigen::VectorXd cs = Eigen::VectorXd::Zero(m), sn = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m + 1);
  g[0] = beta;
  v.col(0) = b / beta;
  int k = 0;
  for (; k < m; ++k) {
    Eigen::VectorXd wv = apply(Eigen::VectorXd(v.col(k)));
    for (int j = 0; j <= k; ++j) {
      hh(j, k) = wv.dot(v.col(j));
      wv -= hh(j, k) * v.col(j);
    }
    hh(k + 1, k) = wv.norm();
    const bool breakdown = hh(k + 1, k) <= 1e-14 * beta;
    if (!breakdown) v.col(k + 1) = wv / hh(k + 1, k);
    for (int j = 0; j < k; ++j) {
      const double t = cs[j] * hh(j, k) + sn[j] * hh(j + 1, k);
      hh(j + 1, k) = -sn[j] * hh(j, k) + cs[j] * hh(j + 1, k);
      hh(j, k) = t;
    }
    const double r = std::hypot(hh(k, k), hh(k + 1, k));
    cs[k] = r == 0.0 ? 1.0 : hh(k, k) / r;
    sn[k] = r == 0.0 ? 0.0 : hh(k + 1, k) / r;
    hh(k, k) = r;
    hh(k + 1, k) = 0.0;
    g[k + 1] = -sn[k] * g[k];
    g[k] = cs[k] * g[k];
    out.residual = std::abs(g[k + 1]);
    if (out.residual <= tol * beta || breakdown) {
      ++k;
      break;
    }
  }
  out.iterations = k;
  out.converged = out.residual <= tol * beta;
  // back substitution on the k x k upper-triangular system
  Eigen::VectorXd y = Eigen::VectorXd::Zero(k);
  for (int i = k - 1; i >= 0; --i) {
    double acc = g[i];
    for (int j = i + 1; j < k; ++j) acc -= hh(i, j) * y[j];
    y[i] = hh(i, i) != 0.0 ? acc / hh(i, i) : 0.0;
  }
  out.x = v.leftCols(k) * y;
  return out;
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

/// Decision that holds the current torque: nominal input equal to T/K_a at
/// every step given the current spacing errors.
inline Eigen::VectorXd cold_start(const OcpSpec& s, const AugmentedState& x0) {
  const double u_hold = x0.x[kTn] / s.k_a;
  const double c = u_hold + (u_hold - block_input(s, x0.x, u_hold, false));
  return Eigen::VectorXd::Constant(s.np, c / s.u_ref);
}

/// Clamps the decision sequence so the nominal input c_i - K x̄_i lies in the
/// tightened input box at every step (forward pass along the rollout).
inline Eigen::VectorXd saturate(const OcpSpec& s, const AugmentedState& x0, const Eigen::VectorXd& c,
                                const std::vector<double>& grade_preview = {}) {
  Eigen::VectorXd out = c;
  Vec9 x = x0.x;
  for (int i = 0; i < s.np; ++i) {
    const double feedback = c[i] - block_input(s, x, c[i], false);
    const double u = std::clamp(c[i] - feedback, s.input_sets[i].lower(0), s.input_sets[i].upper(0));
    out[i] = u + feedback;
    x = step(s, x, out[i], grade_at(grade_preview, i));
  }
  return out;
}

/**
 * One continuation update. The residual F(nu) = dJ/dnu is driven towards
 * zero by up to max_outer Newton corrections; each solves F' d = -F (the
 * first with the continuation right-hand side -zeta dt F) by GMRES with at
 * most max_inner iterations, using forward-difference products F' v. Steps
 * are accepted only if ||F|| decreases, so the residual never grows within a
 * call. The returned c0 is saturated into the tightened input sets.
 */
inline OcpSolution solve_step(const OcpSpec& s, const AugmentedState& x0, const OcpSolution& warm, double dt,
                              const std::vector<double>& grade_preview = {}) {
  const auto start = std::chrono::steady_clock::now();
  OcpSolution out;
  Eigen::VectorXd nu = warm.continuation_state.size() == s.np ? warm.continuation_state : cold_start(s, x0);
  if (!nu.allFinite()) {
    nu = cold_start(s, x0);
    out.reinitialized = true;
  }
  Eigen::VectorXd f = residual(s, x0, nu, grade_preview);
  if (!f.allFinite()) {
    nu = cold_start(s, x0);
    f = residual(s, x0, nu, grade_preview);
    out.reinitialized = true;
    if (!f.allFinite()) throw DivergenceError("solve_step: non-finite residual after cold start");
  }
  double fnorm = f.norm();
  auto merit = [&](const Eigen::VectorXd& d, double alpha) {
    const Eigen::VectorXd ft = residual(s, x0, nu + alpha * d, grade_preview);
    return ft.allFinite() ? ft.norm() : std::numeric_limits<double>::infinity();
  };
  auto accept = [&](const Eigen::VectorXd& d, double alpha) {
    nu += alpha * d;
    f = residual(s, x0, nu, grade_preview);
    fnorm = f.norm();
  };
  constexpr double kMinAlpha = 1.0 / 1024;
  auto backtrack = [&](const Eigen::VectorXd& d) {
    for (double alpha = 1.0; alpha >= kMinAlpha; alpha *= 0.5) {
      if (merit(d, alpha) < fnorm) {
        accept(d, alpha);
        return true;
      }
    }
    return false;
  };
  // The Hessian is nearly flat along late decisions, so raw Newton steps can
  // jump deep into the penalty region; cap the step before backtracking.
  auto newton_direction = [&](const Eigen::VectorXd& rhs, bool central) {
    auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      if (!central) return residual_directional(s, x0, nu, f, v, grade_preview);
      const double h = 1e-3 * s.fd_step * std::max(1.0, nu.norm()) / std::max(v.norm(), 1e-300);
      return (residual(s, x0, nu + h * v, grade_preview) - residual(s, x0, nu - h * v, grade_preview)) / (2.0 * h);
    };
    const GmresResult g = gmres(apply, rhs, s.max_inner, s.gmres_tol);
    out.inner_iters += g.iterations;
    const double dn = g.x.norm();
    return dn > s.max_step ? Eigen::VectorXd(g.x * (s.max_step / dn)) : g.x;
  };

  for (int outer = 0; outer < s.max_outer && fnorm > s.kkt_tol; ++outer) {
    ++out.outer_iters;
    const double rhs_gain = outer == 0 ? s.zeta * dt : 1.0;
    const Eigen::VectorXd rhs = -rhs_gain * f;
    const Eigen::VectorXd d = newton_direction(rhs, false);
    if (backtrack(d)) continue;
    // Near a penalty face the forward difference straddles the kink and the
    // step fails; retry with short central differences.
    if (backtrack(newton_direction(rhs, true))) continue;
    // A face lies just ahead and both steps overshoot it: walk to the
    // minimizer of ||F|| along the ray, which lands on the face.
    constexpr double kGolden = 0.6180339887498949;
    double lo = 0.0, hi = kMinAlpha;
    double a = hi - kGolden * (hi - lo), b = lo + kGolden * (hi - lo);
    double fa = merit(d, a), fb = merit(d, b);
    for (int it = 0; it < 40; ++it) {
      if (fa <= fb) {
        hi = b;
        b = a;
        fb = fa;
        a = hi - kGolden * (hi - lo);
        fa = merit(d, a);
      } else {
        lo = a;
        a = b;
        fa = fb;
        b = lo + kGolden * (hi - lo);
        fb = merit(d, b);
      }
    }
    if (std::min(fa, fb) < fnorm) {
      accept(d, fa <= fb ? a : b);
      continue;
    }
    out.stagnated = true;
    break;
  }
  out.continuation_state = nu;
  out.kkt_residual = fnorm;
  out.c0 = saturate(s, x0, s.u_ref * nu, grade_preview);
  out.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Warm start for the next period: drop the first decision, repeat the last.
inline OcpSolution shift(const OcpSolution& sol) {
  OcpSolution w = sol;
  const Eigen::Index n = sol.continuation_state.size();
  if (n > 1) {
    w.continuation_state.head(n - 1) = sol.continuation_state.tail(n - 1).eval();
  }
  return w;
}

}  // namespace atnmpc::nmpc
