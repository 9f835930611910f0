#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <string>

#include "atnmpc/errors.hpp"

namespace atnmpc::control {

struct StabilizerDesign {
  Eigen::MatrixXd k;                   ///< u = -k x
  Eigen::MatrixXd p;                   ///< Riccati solution
  Eigen::VectorXcd closed_loop_eigs;   ///< eigenvalues of A - B k
  double spectral_radius = 0.0;
  int iterations = 0;
};

/// Discrete LQR gain by fixed-point iteration of the Riccati difference
/// equation P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA.
inline StabilizerDesign design_stabilizer(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                          const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                                          int max_iter = 100000, double tol = 1e-12) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n || r.rows() != b.cols() ||
      r.cols() != b.cols())
    throw ConfigError("design_stabilizer: inconsistent matrix dimensions");
  Eigen::MatrixXd p = q;
  StabilizerDesign out;
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::MatrixXd bp = b.transpose() * p;
    const Eigen::MatrixXd gain = (r + bp * b).ldlt().solve(bp * a);
    Eigen::MatrixXd next = q + a.transpose() * p * a - a.transpose() * p * b * gain;
    next = 0.5 * (next + next.transpose()).eval();
    if (!next.allFinite()) break;
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    if (change <= tol * std::max(1.0, p.cwiseAbs().maxCoeff())) {
      out.iterations = it;
      break;
    }
  }
  if (out.iterations == 0) throw ConfigError("design_stabilizer: Riccati iteration did not converge");
  const Eigen::MatrixXd bp = b.transpose() * p;
  out.k = (r + bp * b).ldlt().solve(bp * a);
  out.p = p;
  out.closed_loop_eigs = (a - b * out.k).eigenvalues();
  out.spectral_radius = out.closed_loop_eigs.cwiseAbs().maxCoeff();
  if (!(out.spectral_radius < 1.0))
    throw ConfigError("design_stabilizer: closed loop not stable (spectral radius " +
                      std::to_string(out.spectral_radius) + ")");
  return out;
}

}  // namespace atnmpc::control
