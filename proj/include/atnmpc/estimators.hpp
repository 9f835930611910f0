#pragma once

// Continuous-time recursive least squares with forgetting factor,
// normalization, parameter projection and a covariance cap, plus the three
// parametric models it is used on: longitudinal dynamics, fuel rate and SOC
// rate.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "atnmpc/interval_box.hpp"

namespace atnmpc::est {

// ---------------------------------------------------------------------------
// Stable first-order filtering 1/(s + lambda)
// ---------------------------------------------------------------------------

struct FilteredRegressors {
  double lambda = 1.0;
  Eigen::VectorXd state;       ///< one filter state per regressor channel
  Eigen::VectorXd prev_raw;    ///< regressor sample at the start of the step
  double output_state = 0.0;   ///< 1/(s+lambda) applied to the output signal
  double prev_output = 0.0;
  bool primed = false;
  bool output_primed = false;

  FilteredRegressors() = default;
  FilteredRegressors(Eigen::Index channels, double lambda_)
      : lambda(lambda_), state(Eigen::VectorXd::Zero(channels)), prev_raw(Eigen::VectorXd::Zero(channels)) {
    if (!(lambda_ > 0.0)) throw std::invalid_argument("FilteredRegressors: lambda must be > 0");
  }
};

namespace detail {
/// Exact update of x' = -lambda x + r over dt with r moving linearly from r0
/// to r1 (first-order hold).
inline double exp_step(double x, double r0, double r1, double lambda, double dt) {
  const double decay = std::exp(-lambda * dt);
  const double zoh = (1.0 - decay) / lambda;
  const double ramp = (lambda * dt - (1.0 - decay)) / (lambda * lambda * dt);
  return decay * x + zoh * r0 + ramp * (r1 - r0);
}
}  // namespace detail

/// Advances every regressor channel by dt, interpolating linearly from the
/// previous sample to raw, and returns the filtered vector. The first call
/// holds raw constant over the step.
inline Eigen::VectorXd filter_update(FilteredRegressors& f, const Eigen::VectorXd& raw, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("filter_update: dt must be > 0");
  if (raw.size() != f.state.size()) throw std::invalid_argument("filter_update: channel count mismatch");
  if (!raw.allFinite()) throw std::invalid_argument("filter_update: non-finite input");
  if (!f.primed) {
    f.prev_raw = raw;
    f.primed = true;
  }
  for (Eigen::Index i = 0; i < raw.size(); ++i)
    f.state[i] = detail::exp_step(f.state[i], f.prev_raw[i], raw[i], f.lambda, dt);
  f.prev_raw = raw;
  return f.state;
}

/// s/(s+lambda) applied to y, realized as y - lambda * (y filtered by
/// 1/(s+lambda)). The first call primes the filter at steady state so the
/// output starts at zero and equals 1/(s+lambda) applied to dy/dt.
inline double filter_output(FilteredRegressors& f, double y, double dt) {
  if (!std::isfinite(y)) throw std::invalid_argument("filter_output: non-finite input");
  if (!f.output_primed) {
    f.output_state = y / f.lambda;
    f.prev_output = y;
    f.output_primed = true;
    return 0.0;
  }
  f.output_state = detail::exp_step(f.output_state, f.prev_output, y, f.lambda, dt);
  f.prev_output = y;
  return y - f.lambda * f.output_state;
}

// ---------------------------------------------------------------------------
// Recursive least squares
// ---------------------------------------------------------------------------

/**
 * RLS state. theta and theta_bounds are in physical units; P lives in the
 * normalized coordinates theta_n[i] = theta[i] * regressor_scale[i] / output_scale
 * so that badly scaled regressors (torque in N*m next to a unit bias) share
 * one covariance.
 */
struct ParamEstimate {
  Eigen::VectorXd theta;
  Eigen::MatrixXd P;
  setalg::IntervalBox theta_bounds;
  double r0 = 1.0e4;        ///< cap on ||P||_2
  double beta = 0.05;       ///< forgetting factor, 1/s
  double alpha_norm = 1.0;  ///< m_s^2 = 1 + alpha phi'phi
  double lambda = 1.0;      ///< regressor filter pole, 1/s
  Eigen::VectorXd regressor_scale;
  double output_scale = 1.0;
  Eigen::MatrixXd p_init;
  int resets = 0;

  static ParamEstimate make(Eigen::VectorXd theta0, setalg::IntervalBox bounds, double p0,
                            Eigen::VectorXd regressor_scale, double output_scale) {
    const Eigen::Index n = theta0.size();
    if (bounds.dim() != n || regressor_scale.size() != n)
      throw std::invalid_argument("ParamEstimate: dimension mismatch");
    if (!bounds.contains(theta0)) throw std::invalid_argument("ParamEstimate: initial theta outside bounds");
    if (!(p0 > 0.0) || !(output_scale > 0.0) || (regressor_scale.array() <= 0.0).any())
      throw std::invalid_argument("ParamEstimate: p0 and scales must be positive");
    ParamEstimate e;
    e.theta = std::move(theta0);
    e.theta_bounds = std::move(bounds);
    e.P = p0 * Eigen::MatrixXd::Identity(n, n);
    e.p_init = e.P;
    e.regressor_scale = std::move(regressor_scale);
    e.output_scale = output_scale;
    return e;
  }

  Eigen::Index size() const { return theta.size(); }

  Eigen::VectorXd to_normalized(const Eigen::VectorXd& th) const {
    return th.cwiseProduct(regressor_scale) / output_scale;
  }
  Eigen::VectorXd from_normalized(const Eigen::VectorXd& tn) const {
    return tn.cwiseQuotient(regressor_scale) * output_scale;
  }
  double covariance_norm() const { return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(P).eigenvalues().maxCoeff(); }
};

namespace detail {
inline bool on_upper(double th, double ub, double span) { return th >= ub - 1e-12 * std::max(1.0, span); }
inline bool on_lower(double th, double lb, double span) { return th <= lb + 1e-12 * std::max(1.0, span); }
}  // namespace detail

/**
 * Applies the projection law to a candidate update.
 *
 * theta_step is the normalized-coordinate increment P eps phi dt and p_next
 * the covariance after the unprojected update. On an active face g_i with
 * outward motion the step loses P grad(g) (grad(g)' P grad(g))^-1 grad(g)' step
 * (for all active faces jointly) and the covariance is frozen. It is also
 * frozen when ||p_next|| would exceed R0. The result is clamped into the
 * bounds so a discrete step cannot tunnel through a face.
 */
inline ParamEstimate project(const ParamEstimate& est, const Eigen::VectorXd& theta_step,
                             const Eigen::MatrixXd& p_next) {
  const Eigen::Index n = est.size();
  const Eigen::VectorXd tn = est.to_normalized(est.theta);
  const Eigen::VectorXd lo = est.to_normalized(est.theta_bounds.lower());
  const Eigen::VectorXd hi = est.to_normalized(est.theta_bounds.upper());

  Eigen::VectorXd step = theta_step;
  std::vector<int> active;
  std::vector<double> sign;
  bool outward = false;
  // Active-set loop: removing motion through one face may create outward
  // motion through another.
  for (int pass = 0; pass < n; ++pass) {
    bool added = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::find(active.begin(), active.end(), static_cast<int>(i)) != active.end()) continue;
      const double span = hi[i] - lo[i];
      if (detail::on_upper(tn[i], hi[i], span) && step[i] > 0.0) {
        active.push_back(static_cast<int>(i));
        sign.push_back(1.0);
        added = true;
      } else if (detail::on_lower(tn[i], lo[i], span) && step[i] < 0.0) {
        active.push_back(static_cast<int>(i));
        sign.push_back(-1.0);
        added = true;
      }
    }
    if (!added) break;
    outward = true;
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) grad(active[k], static_cast<Eigen::Index>(k)) = sign[k];
    const Eigen::MatrixXd pg = est.P * grad;
    const Eigen::MatrixXd gpg = grad.transpose() * pg;
    step = theta_step - pg * gpg.ldlt().solve(grad.transpose() * theta_step);
  }

  ParamEstimate out = est;
  Eigen::VectorXd tn_next = (tn + step).cwiseMax(lo).cwiseMin(hi);
  out.theta = est.from_normalized(tn_next).cwiseMax(est.theta_bounds.lower()).cwiseMin(est.theta_bounds.upper());

  const double p_next_norm = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(p_next).eigenvalues().maxCoeff();
  if (!outward && p_next_norm <= est.r0) out.P = p_next;
  return out;
}

struct RlsStepResult {
  ParamEstimate estimate;
  double prediction_error = 0.0;  ///< z - theta'phi before the update, physical units
  bool covariance_reset = false;
};

/**
 * One estimator period of
 *   theta' = P eps phi,  P' = beta P - P phi phi' P / m_s^2,
 *   eps = (z - theta'phi) / m_s^2.
 * The parameter update is taken implicitly in eps (unconditionally stable for
 * large P |phi|^2 dt) and the covariance through its inverse, which is exact
 * for phi held over dt and keeps P positive definite.
 */
inline RlsStepResult rls_step(const ParamEstimate& est, const Eigen::VectorXd& phi, double z, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("rls_step: dt must be > 0");
  if (phi.size() != est.size()) throw std::invalid_argument("rls_step: regressor dimension mismatch");
  if (!phi.allFinite() || !std::isfinite(z)) throw std::invalid_argument("rls_step: non-finite data");

  const Eigen::VectorXd phi_n = phi.cwiseQuotient(est.regressor_scale);
  const double z_n = z / est.output_scale;
  const Eigen::VectorXd tn = est.to_normalized(est.theta);
  const double ms2 = 1.0 + est.alpha_norm * phi_n.squaredNorm();
  const double err = z_n - tn.dot(phi_n);

  const Eigen::VectorXd p_phi = est.P * phi_n;
  const double phi_p_phi = phi_n.dot(p_phi);
  const Eigen::VectorXd step = dt * p_phi * err / (ms2 + dt * phi_p_phi);

  // P^-1' = -beta P^-1 + phi phi'/m_s^2
  const double decay = std::exp(-est.beta * dt);
  const double gain = (est.beta > 0.0 ? (1.0 - decay) / est.beta : dt) / ms2;
  const double ratio = gain / decay;
  Eigen::MatrixXd p_next = (est.P - ratio * p_phi * p_phi.transpose() / (1.0 + ratio * phi_p_phi)) / decay;
  p_next = 0.5 * (p_next + p_next.transpose()).eval();

  RlsStepResult result{project(est, step, p_next), err * est.output_scale, false};
  Eigen::MatrixXd& p = result.estimate.P;
  p = 0.5 * (p + p.transpose()).eval();
  const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(p).eigenvalues().minCoeff();
  if (!(min_eig > 1e-12) || !p.allFinite()) {
    p = est.p_init;
    result.estimate.resets += 1;
    result.covariance_reset = true;
  }
  return result;
}

/// beta(t) = beta_f + (beta_0 - beta_f) exp(-t / T_beta): fast forgetting
/// while the initial guess is poor, settling to a slower rate.
struct ForgettingSchedule {
  double beta_0 = 0.5;
  double beta_f = 0.05;
  double time_constant = 30.0;

  double operator()(double t) const { return beta_f + (beta_0 - beta_f) * std::exp(-t / time_constant); }
};

// ---------------------------------------------------------------------------
// Parametric models
// ---------------------------------------------------------------------------

using LongitudinalTheta = std::array<double, 5>;
using FuelCoefficients = std::array<double, 4>;
using SocCoefficients = std::array<double, 3>;

/// â_h = θ1 T - θ2 v² - θ3 v - θ4 φ_r - θ5.
inline double predict_longitudinal(const LongitudinalTheta& th, double torque, double v_h, double grade) {
  return th[0] * torque - th[1] * v_h * v_h - th[2] * v_h - th[3] * grade - th[4];
}

inline double predict_fuel(const FuelCoefficients& a, double p_engine, double v_h) {
  return a[0] + a[1] * p_engine + a[2] * p_engine * p_engine + a[3] * v_h;
}

inline double predict_soc(const SocCoefficients& g, double p_motor) {
  return g[0] + g[1] * p_motor + g[2] * p_motor * p_motor;
}

inline Eigen::VectorXd longitudinal_regressor(double torque, double v_h, double grade) {
  Eigen::VectorXd phi(5);
  phi << torque, -v_h * v_h, -v_h, -grade, -1.0;
  return phi;
}

inline Eigen::VectorXd fuel_regressor(double p_engine, double v_h) {
  Eigen::VectorXd phi(4);
  phi << 1.0, p_engine, p_engine * p_engine, v_h;
  return phi;
}

inline Eigen::VectorXd soc_regressor(double p_motor) {
  Eigen::VectorXd phi(3);
  phi << 1.0, p_motor, p_motor * p_motor;
  return phi;
}

template <std::size_t N>
std::array<double, N> to_array(const Eigen::VectorXd& v) {
  if (static_cast<std::size_t>(v.size()) != N) throw std::invalid_argument("to_array: size mismatch");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = v[static_cast<Eigen::Index>(i)];
  return out;
}

template <std::size_t N>
Eigen::VectorXd to_vector(const std::array<double, N>& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(N));
  for (std::size_t i = 0; i < N; ++i) v[static_cast<Eigen::Index>(i)] = a[i];
  return v;
}

/// Longitudinal estimator on filtered data:
/// s/(s+λ) v_h = θ' [T, -v², -v, -φ, -1]/(s+λ).
class LongitudinalEstimator {
 public:
  LongitudinalEstimator(ParamEstimate est, ForgettingSchedule schedule)
      : est_(std::move(est)), schedule_(schedule), filter_(5, est_.lambda) {}

  /// Feeds one sample (wheel torque, speed, grade); returns the prediction error.
  double update(double torque, double v_h, double grade, double dt) {
    const double z = filter_output(filter_, v_h, dt);
    const Eigen::VectorXd phi = filter_update(filter_, longitudinal_regressor(torque, v_h, grade), dt);
    est_.beta = schedule_(time_);
    time_ += dt;
    auto r = rls_step(est_, phi, z, dt);
    est_ = std::move(r.estimate);
    last_output_ = z;
    return r.prediction_error;
  }

  LongitudinalTheta theta() const { return to_array<5>(est_.theta); }
  const ParamEstimate& estimate() const { return est_; }
  double last_output() const { return last_output_; }

 private:
  ParamEstimate est_;
  ForgettingSchedule schedule_;
  FilteredRegressors filter_;
  double time_ = 0.0;
  double last_output_ = 0.0;
};

/// Algebraic estimator z = θ'φ, used for the fuel and SOC maps.
class StaticEstimator {
 public:
  StaticEstimator(ParamEstimate est, ForgettingSchedule schedule) : est_(std::move(est)), schedule_(schedule) {}

  double update(const Eigen::VectorXd& phi, double z, double dt) {
    est_.beta = schedule_(time_);
    time_ += dt;
    auto r = rls_step(est_, phi, z, dt);
    est_ = std::move(r.estimate);
    return r.prediction_error;
  }

  const ParamEstimate& estimate() const { return est_; }

 private:
  ParamEstimate est_;
  ForgettingSchedule schedule_;
  double time_ = 0.0;
};

}  // namespace atnmpc::est
