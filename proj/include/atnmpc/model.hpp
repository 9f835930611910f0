#pragma once

// Linear part of the car-following model x = [e_p, e_v, v_h, T_w]:
//   x' = A x + B u + B_p a_p + B_g F_r/m
// with e_p = gap - d0 - h v_h and e_v = v_p - v_h.

#include <Eigen/Core>

#include <array>
#include <stdexcept>

namespace atnmpc::model {

inline constexpr int kEp = 0;
inline constexpr int kEv = 1;
inline constexpr int kVh = 2;
inline constexpr int kTw = 3;

/// Coordinates of the error system used for the tube: [e_p, e_v, T_w].
/// v_h is dropped because e_v + v_h = v_p makes it an uncontrollable
/// integrator of the linear part.
inline constexpr std::array<int, 3> kErrorIndices{kEp, kEv, kTw};

struct LinearModel {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
  Eigen::MatrixXd b_p;
  Eigen::MatrixXd b_g;
};

struct ModelConstants {
  double h = 1.5;       // s
  double m = 1600.0;    // kg
  double r_w = 0.3;     // m
  double tau_a = 0.25;  // s
  double k_a = 1.0;
};

inline LinearModel car_following_model(const ModelConstants& c) {
  if (!(c.h > 0.0) || !(c.m > 0.0) || !(c.r_w > 0.0) || !(c.tau_a > 0.0))
    throw std::invalid_argument("car_following_model: h, m, r_w, tau_a must be > 0");
  const double g = 1.0 / (c.m * c.r_w);
  LinearModel lm;
  lm.a = Eigen::MatrixXd::Zero(4, 4);
  lm.a(kEp, kEv) = 1.0;
  lm.a(kEp, kTw) = -c.h * g;
  lm.a(kEv, kTw) = -g;
  lm.a(kVh, kTw) = g;
  lm.a(kTw, kTw) = -1.0 / c.tau_a;
  lm.b = Eigen::MatrixXd::Zero(4, 1);
  lm.b(kTw, 0) = c.k_a / c.tau_a;
  lm.b_p = Eigen::MatrixXd::Zero(4, 1);
  lm.b_p(kEv, 0) = 1.0;
  lm.b_g = Eigen::MatrixXd::Zero(4, 1);
  lm.b_g(kEp, 0) = -c.h;
  lm.b_g(kEv, 0) = -1.0;
  lm.b_g(kVh, 0) = 1.0;
  return lm;
}

/// Rows/columns of a model restricted to the given state coordinates.
template <std::size_t N>
LinearModel restrict(const LinearModel& lm, const std::array<int, N>& idx) {
  const auto n = static_cast<Eigen::Index>(N);
  LinearModel out;
  out.a.resize(n, n);
  out.b.resize(n, lm.b.cols());
  out.b_p.resize(n, lm.b_p.cols());
  out.b_g.resize(n, lm.b_g.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out.a(i, j) = lm.a(idx[i], idx[j]);
    out.b.row(i) = lm.b.row(idx[i]);
    out.b_p.row(i) = lm.b_p.row(idx[i]);
    out.b_g.row(i) = lm.b_g.row(idx[i]);
  }
  return out;
}

/// Forward-Euler discretization: A_d = I + Ts A, inputs scaled by Ts.
inline LinearModel discretize_euler(const LinearModel& lm, double ts) {
  if (!(ts > 0.0)) throw std::invalid_argument("discretize_euler: Ts must be > 0");
  LinearModel d;
  d.a = Eigen::MatrixXd::Identity(lm.a.rows(), lm.a.cols()) + ts * lm.a;
  d.b = ts * lm.b;
  d.b_p = ts * lm.b_p;
  d.b_g = ts * lm.b_g;
  return d;
}

}  // namespace atnmpc::model
