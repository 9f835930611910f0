#pragma once

// Additive disturbance sets for the car-following error dynamics: the
// drag nonlinearity (Lipschitz bound), measurement delay, preceding-vehicle
// acceleration and parametric model error.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "atnmpc/interval_box.hpp"
#include "atnmpc/plant.hpp"

namespace atnmpc::setalg {

/// Index of each uncertain parameter inside UncertainParams vectors.
enum UncertainIndex : int { kMass = 0, kWheelRadius, kDrag, kRollingV, kRolling0, kGrade, kWind, kEfficiency };
inline constexpr int kNumUncertain = 8;

using ParamVector = Eigen::Matrix<double, kNumUncertain, 1>;

/// Nominal value and admissible range of [m, r_w, C_d, mu_rv, mu_r0, phi_r, v_w, eta_p].
struct UncertainParams {
  ParamVector nominal = ParamVector::Zero();
  ParamVector min = ParamVector::Zero();
  ParamVector max = ParamVector::Zero();

  void validate() const {
    if (!nominal.allFinite() || !min.allFinite() || !max.allFinite())
      throw std::invalid_argument("UncertainParams: non-finite entry");
    if (((min.array() > nominal.array()) || (nominal.array() > max.array())).any())
      throw std::invalid_argument("UncertainParams: requires min <= nominal <= max");
    if (nominal[kMass] <= 0 || min[kMass] <= 0 || min[kWheelRadius] <= 0 || min[kEfficiency] <= 0)
      throw std::invalid_argument("UncertainParams: mass, wheel radius and efficiency must be positive");
  }

  /// Box with every parameter fixed at its nominal value.
  static UncertainParams exact(const ParamVector& nominal) { return {nominal, nominal, nominal}; }
};

/// Parameters of the acceleration model that are treated as known.
struct LongitudinalConstants {
  double rho_a = 1.2;
  double area = 2.2;
  double gear_ratio = 1.0;
  double g = plant::kGravity;
};

/// Host acceleration a_h(params, v_h, T_com), with the speed-dependent
/// rolling term (mu_r0 + mu_rv v_h).
inline double accel_model(const ParamVector& y, double v_h, double torque, const LongitudinalConstants& c) {
  const double rel = v_h + y[kWind];
  return c.gear_ratio * y[kEfficiency] * torque / (y[kWheelRadius] * y[kMass]) -
         0.5 * c.rho_a * c.area * y[kDrag] * rel * rel / y[kMass] -
         c.g * (y[kRolling0] + y[kRollingV] * v_h) * std::cos(y[kGrade]) - c.g * std::sin(y[kGrade]);
}

/// Lipschitz constant of the drag term over v_h in [0, v_max] (1/s).
inline double drag_lipschitz(const UncertainParams& params, const LongitudinalConstants& c, double v_max) {
  const auto& n = params.nominal;
  const double rel_max = v_max + std::max(std::abs(params.max[kWind]), std::abs(params.min[kWind]));
  return c.rho_a * c.area * n[kDrag] * rel_max / n[kMass];
}

/**
 * W_g: box bounding g(x) - g(x̄) for the drag nonlinearity g = B_g * drag(v)/m.
 *
 * error_region is the set of velocity errors the nonlinearity sees; the
 * bound is L * max ||e||_2 over it, spread over the rows where B_g is nonzero
 * (scaled by |B_g|). Result is in rate units (per second).
 */
inline IntervalBox lipschitz_disturbance(const UncertainParams& params, const LongitudinalConstants& c,
                                         double v_max, const IntervalBox& error_region,
                                         const Eigen::VectorXd& b_g) {
  if (!(v_max > 0.0)) throw std::invalid_argument("lipschitz_disturbance: v_max must be > 0");
  if (!params.nominal.allFinite() || !params.max.allFinite() || !params.min.allFinite())
    throw std::invalid_argument("lipschitz_disturbance: non-finite parameters");
  if (error_region.is_empty() || !error_region.contains_origin())
    throw std::invalid_argument("lipschitz_disturbance: error region must contain the origin");
  const double radius = error_region.max_abs().norm();
  const double bound = drag_lipschitz(params, c, v_max) * radius;
  return IntervalBox::symmetric(b_g.cwiseAbs() * bound);
}

/// T_d * ΔX with ΔX = A X ⊕ (B U ⊕ (B_p A_p ⊕ W)): the set of state changes
/// accumulated over a delay of at most T_d.
inline IntervalBox delay_state_mismatch(double t_d, const IntervalBox& x, const IntervalBox& u,
                                        const IntervalBox& a_p, const IntervalBox& w, const Eigen::MatrixXd& a,
                                        const Eigen::MatrixXd& b, const Eigen::MatrixXd& b_p) {
  if (!(t_d >= 0.0)) throw std::invalid_argument("delay_disturbance: T_d must be >= 0");
  if (x.is_empty() || u.is_empty() || a_p.is_empty() || w.is_empty())
    throw std::invalid_argument("delay_disturbance: operand boxes must be nonempty");
  const IntervalBox rates =
      minkowski_sum(linear_map(a, x), minkowski_sum(linear_map(b, u), minkowski_sum(linear_map(b_p, a_p), w)));
  return scale(t_d, rates);
}

/// W_τ = B K_c (T_d ΔX): disturbance injected by feeding back a state that
/// is up to T_d old. K_c should only weight the delayed channels.
inline IntervalBox delay_disturbance(double t_d, const Eigen::MatrixXd& k_c, const IntervalBox& x,
                                     const IntervalBox& u, const IntervalBox& a_p, const IntervalBox& w,
                                     const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                     const Eigen::MatrixXd& b_p) {
  if (k_c.cols() != x.dim() || b.cols() != k_c.rows())
    throw std::invalid_argument("delay_disturbance: K_c / B dimension mismatch");
  const IntervalBox mismatch = delay_state_mismatch(t_d, x, u, a_p, w, a, b, b_p);
  return linear_map(b * k_c, mismatch);
}

/// [e_a,min, e_a,max]: extreme acceleration error between any admissible
/// parameter vector and the nominal one, over speed and commanded torque.
struct AccelErrorBounds {
  double min = 0.0;
  double max = 0.0;
};

/**
 * Extremizes a_h(Υ, v, T) - a_h(Ῡ, v, T) by enumerating all 2^8 corners of
 * the parameter box (a_h is monotone in each parameter for fixed (v, T),
 * except in v_w where the candidate v_w = -v is added) over a (v, T) grid.
 * a_h is affine in T, so only the torque end points are needed; along v the
 * grid is refined by the stationary point of the per-corner quadratic.
 */
inline AccelErrorBounds param_accel_error_bounds(const UncertainParams& params, const LongitudinalConstants& c,
                                                 double v_h_max, std::pair<double, double> torque_range,
                                                 int speed_grid = 50) {
  params.validate();
  if (!(torque_range.first <= torque_range.second))
    throw std::invalid_argument("param_uncertainty_disturbance: T_min > T_max");
  if (!(v_h_max >= 0.0) || speed_grid < 2) throw std::invalid_argument("param_uncertainty_disturbance: bad grid");

  AccelErrorBounds out{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  auto consider = [&](const ParamVector& y, double v, double torque) {
    const double e = accel_model(y, v, torque, c) - accel_model(params.nominal, v, torque, c);
    out.min = std::min(out.min, e);
    out.max = std::max(out.max, e);
  };
  auto visit_corners = [&](double v, double torque) {
    for (int mask = 0; mask < (1 << kNumUncertain); ++mask) {
      ParamVector y;
      for (int i = 0; i < kNumUncertain; ++i) y[i] = (mask >> i) & 1 ? params.max[i] : params.min[i];
      consider(y, v, torque);
      // interior extremum of (v + v_w)^2 in v_w
      const double vw = -v;
      if (vw > params.min[kWind] && vw < params.max[kWind]) {
        y[kWind] = vw;
        consider(y, v, torque);
      }
    }
  };
  const std::array<double, 2> torques{torque_range.first, torque_range.second};
  for (double torque : torques) {
    for (int k = 0; k < speed_grid; ++k) {
      const double v = v_h_max * k / (speed_grid - 1);
      visit_corners(v, torque);
    }
  }
  // Per-corner stationary points in v. With v_w at a corner the error is a
  // quadratic in v: e(v) = q2 v^2 + q1 v + q0.
  for (double torque : torques) {
    for (int mask = 0; mask < (1 << kNumUncertain); ++mask) {
      ParamVector y;
      for (int i = 0; i < kNumUncertain; ++i) y[i] = (mask >> i) & 1 ? params.max[i] : params.min[i];
      const double e0 = accel_model(y, 0.0, torque, c) - accel_model(params.nominal, 0.0, torque, c);
      const double e1 = accel_model(y, 1.0, torque, c) - accel_model(params.nominal, 1.0, torque, c);
      const double em = accel_model(y, -1.0, torque, c) - accel_model(params.nominal, -1.0, torque, c);
      const double q2 = 0.5 * (e1 + em) - e0;
      const double q1 = 0.5 * (e1 - em);
      if (std::abs(q2) > 1e-15) {
        const double v_star = -q1 / (2 * q2);
        if (v_star > 0.0 && v_star < v_h_max) consider(y, v_star, torque);
      }
    }
  }
  return out;
}

/// W_h = B_g E_a dt, the per-step state disturbance from parameter error.
inline IntervalBox param_uncertainty_disturbance(const UncertainParams& params, const LongitudinalConstants& c,
                                                 double v_h_max, std::pair<double, double> torque_range,
                                                 const Eigen::VectorXd& b_g, double dt, int speed_grid = 50) {
  const AccelErrorBounds e = param_accel_error_bounds(params, c, v_h_max, torque_range, speed_grid);
  Eigen::MatrixXd bg = b_g;
  bg.resize(b_g.size(), 1);
  return scale(dt, linear_map(bg, IntervalBox{{e.min}, {e.max}}));
}

/// The four disturbance sources and their Minkowski sum W, all per control step.
struct DisturbanceSpec {
  IntervalBox w_g;
  IntervalBox w_tau;
  IntervalBox w_a;
  IntervalBox w_h;
  IntervalBox combined;

  static DisturbanceSpec combine(IntervalBox w_g, IntervalBox w_tau, IntervalBox w_a, IntervalBox w_h) {
    for (const IntervalBox* b : {&w_g, &w_tau, &w_a, &w_h})
      if (b->is_empty() || !b->contains_origin())
        throw std::invalid_argument("DisturbanceSpec: every source box must contain the origin");
    IntervalBox sum = minkowski_sum(minkowski_sum(w_g, w_tau), minkowski_sum(w_a, w_h));
    return {std::move(w_g), std::move(w_tau), std::move(w_a), std::move(w_h), std::move(sum)};
  }
};

}  // namespace atnmpc::setalg
