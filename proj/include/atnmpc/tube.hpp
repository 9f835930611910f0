#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <string>
#include <vector>

#include "atnmpc/errors.hpp"
#include "atnmpc/interval_box.hpp"

namespace atnmpc::setalg {

inline double spectral_radius(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  return a.eigenvalues().cwiseAbs().maxCoeff();
}

/// Φ_0..Φ_n with Φ_k = ⊕_{i=0..k} A_c^i W. Each term is mapped with the
/// matrix power directly, so interval wrapping does not compound.
inline std::vector<IntervalBox> reachable_sets(const Eigen::MatrixXd& a_c, const IntervalBox& w, int n) {
  if (a_c.rows() != a_c.cols() || a_c.cols() != w.dim())
    throw std::invalid_argument("reachable_tube: A_c must be square and match W");
  if (n < 0) throw std::invalid_argument("reachable_tube: negative horizon");
  if (spectral_radius(a_c) >= 1.0)
    throw ConfigError("reachable_tube: closed-loop matrix is not Schur stable (spectral radius " +
                      std::to_string(spectral_radius(a_c)) + ")");
  std::vector<IntervalBox> phi;
  phi.reserve(static_cast<std::size_t>(n) + 1);
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(a_c.rows(), a_c.cols());
  IntervalBox acc = IntervalBox::zero(w.dim());
  for (int i = 0; i <= n; ++i) {
    acc = minkowski_sum(acc, linear_map(power, w));
    phi.push_back(acc);
    power = a_c * power;
  }
  return phi;
}

/// Which reachable set bounds the error at predicted step j >= 1.
enum class TubeIndexing {
  kFirstStepW,    ///< step j uses Φ_{j-1}; step 1 sees W alone
  kConservative,  ///< step j uses Φ_j
};

/**
 * Per-step error bounds over the prediction horizon.
 *
 * boxes[j] bounds x[n+j] - x̄[n+j]; boxes[0] is {0} because the prediction
 * starts at the measured state. reach holds the cumulative sets Φ_0..Φ_Np.
 */
struct TubeSequence {
  std::vector<IntervalBox> boxes;
  std::vector<IntervalBox> reach;

  int horizon() const { return static_cast<int>(boxes.size()) - 1; }
};

inline TubeSequence reachable_tube(const Eigen::MatrixXd& a_c, const IntervalBox& w, int horizon,
                                   TubeIndexing indexing = TubeIndexing::kFirstStepW) {
  if (horizon < 1) throw std::invalid_argument("reachable_tube: horizon must be >= 1");
  TubeSequence tube;
  tube.reach = reachable_sets(a_c, w, horizon);
  tube.boxes.reserve(static_cast<std::size_t>(horizon) + 1);
  tube.boxes.push_back(IntervalBox::zero(w.dim()));
  for (int j = 1; j <= horizon; ++j)
    tube.boxes.push_back(tube.reach[static_cast<std::size_t>(indexing == TubeIndexing::kFirstStepW ? j - 1 : j)]);
  return tube;
}

/// A tube that never leaves {0}; used when tightening is disabled.
inline TubeSequence zero_tube(Eigen::Index dim, int horizon) {
  TubeSequence tube;
  for (int j = 0; j <= horizon; ++j) {
    tube.boxes.push_back(IntervalBox::zero(dim));
    tube.reach.push_back(IntervalBox::zero(dim));
  }
  return tube;
}

struct TightenedSets {
  std::vector<IntervalBox> state;  ///< X ⊖ boxes[j]
  std::vector<IntervalBox> input;  ///< U ⊖ (-K_c boxes[j])
};

/// Tightened constraint sets per prediction step. Any empty set is an error
/// naming the first step at which the disturbance swallows the constraint.
inline TightenedSets tighten_constraints(const IntervalBox& x, const IntervalBox& u, const Eigen::MatrixXd& k_c,
                                         const TubeSequence& tube) {
  if (x.is_empty() || u.is_empty()) throw std::invalid_argument("tighten_constraints: X and U must be nonempty");
  if (tube.boxes.empty()) throw std::invalid_argument("tighten_constraints: empty tube");
  if (k_c.rows() != u.dim() || k_c.cols() != x.dim())
    throw std::invalid_argument("tighten_constraints: K_c dimension mismatch");
  TightenedSets out;
  for (std::size_t j = 0; j < tube.boxes.size(); ++j) {
    const IntervalBox& phi = tube.boxes[j];
    IntervalBox xs = pontryagin_diff(x, phi);
    IntervalBox us = pontryagin_diff(u, linear_map(-k_c, phi));
    if (xs.is_empty())
      throw InfeasibleTightening("state constraint set is empty after tightening at step " + std::to_string(j),
                                 static_cast<int>(j));
    if (us.is_empty())
      throw InfeasibleTightening("input constraint set is empty after tightening at step " + std::to_string(j),
                                 static_cast<int>(j));
    out.state.push_back(std::move(xs));
    out.input.push_back(std::move(us));
  }
  return out;
}

}  // namespace atnmpc::setalg
