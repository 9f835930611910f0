#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace atnmpc::setalg {

/**
 * Axis-aligned box {x : lower <= x <= upper} of fixed dimension.
 *
 * The empty set is a distinct value (is_empty()), produced e.g. by an
 * over-shrinking Pontryagin difference. Bounds of an empty box are NaN.
 */
class IntervalBox {
 public:
  IntervalBox() = default;

  IntervalBox(Eigen::VectorXd lower, Eigen::VectorXd upper)
      : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != upper_.size())
      throw std::invalid_argument("IntervalBox: bound dimensions differ");
    for (Eigen::Index i = 0; i < lower_.size(); ++i) {
      if (!(lower_[i] <= upper_[i]))
        throw std::invalid_argument("IntervalBox: lower > upper in dimension " + std::to_string(i));
    }
  }

  IntervalBox(std::initializer_list<double> lower, std::initializer_list<double> upper)
      : IntervalBox(to_vector(lower), to_vector(upper)) {}

  static IntervalBox empty(Eigen::Index dim) {
    IntervalBox b;
    b.lower_ = Eigen::VectorXd::Constant(dim, std::nan(""));
    b.upper_ = Eigen::VectorXd::Constant(dim, std::nan(""));
    b.empty_ = true;
    return b;
  }

  static IntervalBox zero(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Zero(dim)};
  }

  static IntervalBox point(const Eigen::VectorXd& x) { return {x, x}; }

  static IntervalBox symmetric(const Eigen::VectorXd& radius) {
    if ((radius.array() < 0.0).any()) throw std::invalid_argument("IntervalBox: negative radius");
    return {-radius, radius};
  }

  Eigen::Index dim() const { return lower_.size(); }
  bool is_empty() const { return empty_; }
  const Eigen::VectorXd& lower() const { return lower_; }
  const Eigen::VectorXd& upper() const { return upper_; }
  double lower(Eigen::Index i) const { return lower_[i]; }
  double upper(Eigen::Index i) const { return upper_[i]; }

  Eigen::VectorXd center() const { return 0.5 * (lower_ + upper_); }
  Eigen::VectorXd radius() const { return 0.5 * (upper_ - lower_); }
  Eigen::VectorXd width() const { return upper_ - lower_; }

  /// Largest |x_i| over the box, per dimension.
  Eigen::VectorXd max_abs() const { return lower_.cwiseAbs().cwiseMax(upper_.cwiseAbs()); }

  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const {
    if (empty_ || x.size() != dim()) return false;
    return ((x.array() >= lower_.array() - tol) && (x.array() <= upper_.array() + tol)).all();
  }

  /// Set inclusion; the empty set is contained in everything.
  bool contains(const IntervalBox& other, double tol = 0.0) const {
    if (other.dim() != dim()) return false;
    if (other.empty_) return true;
    if (empty_) return false;
    return ((other.lower_.array() >= lower_.array() - tol) &&
            (other.upper_.array() <= upper_.array() + tol))
        .all();
  }

  bool contains_origin() const { return contains(Eigen::VectorXd::Zero(dim())); }

  /// Box restricted to the listed coordinates.
  IntervalBox project(std::span<const int> indices) const {
    if (empty_) return empty(static_cast<Eigen::Index>(indices.size()));
    Eigen::VectorXd lo(indices.size()), hi(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      lo[k] = lower_[indices[k]];
      hi[k] = upper_[indices[k]];
    }
    return {lo, hi};
  }

  friend bool operator==(const IntervalBox& a, const IntervalBox& b) {
    if (a.dim() != b.dim() || a.empty_ != b.empty_) return false;
    return a.empty_ || (a.lower_ == b.lower_ && a.upper_ == b.upper_);
  }

 private:
  static Eigen::VectorXd to_vector(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    std::copy(v.begin(), v.end(), out.data());
    return out;
  }

  Eigen::VectorXd lower_;
  Eigen::VectorXd upper_;
  bool empty_ = false;
};

namespace detail {
inline void require_same_dim(const IntervalBox& a, const IntervalBox& b, const char* op) {
  if (a.dim() != b.dim())
    throw std::invalid_argument(std::string(op) + ": dimension mismatch (" + std::to_string(a.dim()) +
                                " vs " + std::to_string(b.dim()) + ")");
}
}  // namespace detail

/// a ⊕ b. Summing with the empty set yields the empty set.
inline IntervalBox minkowski_sum(const IntervalBox& a, const IntervalBox& b) {
  detail::require_same_dim(a, b, "minkowski_sum");
  if (a.is_empty() || b.is_empty()) return IntervalBox::empty(a.dim());
  return {a.lower() + b.lower(), a.upper() + b.upper()};
}

/// a ⊖ b = {v : v ⊕ b ⊆ a}; empty as soon as one dimension inverts.
inline IntervalBox pontryagin_diff(const IntervalBox& a, const IntervalBox& b) {
  detail::require_same_dim(a, b, "pontryagin_diff");
  if (a.is_empty()) return IntervalBox::empty(a.dim());
  if (b.is_empty()) throw std::invalid_argument("pontryagin_diff: subtrahend is empty");
  Eigen::VectorXd lo = a.lower() - b.lower();
  Eigen::VectorXd hi = a.upper() - b.upper();
  if (((lo.array() > hi.array()) || !lo.array().isFinite() || !hi.array().isFinite()).any())
    return IntervalBox::empty(a.dim());
  return {lo, hi};
}

/// Interval hull of {M x : x in box}. Exact per row, so it contains the true image.
inline IntervalBox linear_map(const Eigen::MatrixXd& M, const IntervalBox& x) {
  if (M.cols() != x.dim())
    throw std::invalid_argument("linear_map: matrix has " + std::to_string(M.cols()) +
                                " columns, box has dimension " + std::to_string(x.dim()));
  if (x.is_empty()) return IntervalBox::empty(M.rows());
  const Eigen::VectorXd c = x.center();
  const Eigen::VectorXd r = x.radius();
  const Eigen::VectorXd mc = M * c;
  const Eigen::VectorXd mr = M.cwiseAbs() * r;
  return {mc - mr, mc + mr};
}

inline IntervalBox scale(double s, const IntervalBox& x) {
  if (x.is_empty()) return x;
  if (s >= 0.0) return {s * x.lower(), s * x.upper()};
  return {s * x.upper(), s * x.lower()};
}

inline IntervalBox negate(const IntervalBox& x) { return scale(-1.0, x); }

/// Sum of a list of boxes (all of the same dimension).
inline IntervalBox minkowski_sum(std::span<const IntervalBox> boxes) {
  if (boxes.empty()) throw std::invalid_argument("minkowski_sum: no operands");
  IntervalBox acc = boxes.front();
  for (std::size_t i = 1; i < boxes.size(); ++i) acc = minkowski_sum(acc, boxes[i]);
  return acc;
}

}  // namespace atnmpc::setalg
