#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "poddp/types.hpp"

namespace poddp {

/// Probability floor applied before taking logs and after every Bayes update.
inline constexpr double kBeliefFloor = 1e-9;

/// Ordered, duplicate-free set of latent labels. Indices are stable for the
/// lifetime of a problem. At most ten labels, so a history prints as a digit
/// string.
class LatentSet {
 public:
  LatentSet() = default;
  LatentSet(std::initializer_list<std::string> labels)
      : LatentSet(std::vector<std::string>(labels)) {}
  explicit LatentSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw InvalidArgument("LatentSet: at least one label required");
    if (labels_.size() > 10) throw InvalidArgument("LatentSet: at most ten labels supported");
    for (std::size_t i = 0; i < labels_.size(); ++i)
      for (std::size_t j = i + 1; j < labels_.size(); ++j)
        if (labels_[i] == labels_[j])
          throw InvalidArgument("LatentSet: duplicate label '" + labels_[i] + "'");
  }

  int size() const { return static_cast<int>(labels_.size()); }
  const std::string& label(int i) const { return labels_.at(static_cast<std::size_t>(i)); }
  const std::vector<std::string>& labels() const { return labels_; }

  int index_of(const std::string& label) const {
    auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) throw InvalidArgument("LatentSet: unknown label '" + label + "'");
    return static_cast<int>(it - labels_.begin());
  }

 private:
  std::vector<std::string> labels_;
};

/// Probability vector over a LatentSet.
struct Belief {
  Vector probs;

  Belief() = default;
  explicit Belief(Vector p) : probs(std::move(p)) {}

  static Belief uniform(int n) { return Belief(Vector::Constant(n, 1.0 / n)); }

  int size() const { return static_cast<int>(probs.size()); }
  double operator()(int z) const { return probs(z); }

  /// Lowest index wins ties.
  int argmax() const {
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    return static_cast<int>(best);
  }

  bool is_valid(double tol = 1e-12) const {
    if (probs.size() == 0 || !probs.allFinite()) return false;
    if ((probs.array() < 0.0).any()) return false;
    return std::abs(probs.sum() - 1.0) <= tol;
  }
};

/// Unconstrained logit parameterization of a belief.
struct BeliefLogits {
  Vector beta;

  BeliefLogits() = default;
  explicit BeliefLogits(Vector b) : beta(std::move(b)) {}
  int size() const { return static_cast<int>(beta.size()); }
};

/// Observed continuous state paired with latent-belief logits.
struct BeliefState {
  Vector x;
  BeliefLogits beta;
};

/// Numerically stable softmax on a raw vector.
inline Vector softmax(const Vector& beta) {
  const double m = beta.maxCoeff();
  Vector e = (beta.array() - m).exp().matrix();
  return e / e.sum();
}

inline Belief belief_from_logits(const BeliefLogits& logits) {
  if (logits.beta.size() == 0 || !logits.beta.allFinite())
    throw InvalidArgument("belief_from_logits: logits must be finite and non-empty");
  return Belief(softmax(logits.beta));
}

/// Clamps every entry below by `floor` and renormalizes.
inline Vector floor_and_normalize(const Vector& p, double floor = kBeliefFloor) {
  Vector q = p.cwiseMax(floor);
  return q / q.sum();
}

inline BeliefLogits logits_from_belief(const Belief& b, double floor = kBeliefFloor) {
  return BeliefLogits(floor_and_normalize(b.probs, floor).array().log().matrix());
}

/// d softmax / d beta evaluated at probabilities p: diag(p) - p p^T.
inline Matrix softmax_jacobian(const Vector& p) {
  Matrix J = -p * p.transpose();
  J.diagonal() += p;
  return J;
}

/// Hessian of softmax component z with respect to beta, evaluated at p.
inline Matrix softmax_hessian(const Vector& p, int z) {
  const int n = static_cast<int>(p.size());
  Vector e = -p;
  e(z) += 1.0;  // e_i = delta_zi - p_i
  Matrix H = p(z) * (e * e.transpose());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) H(i, j) -= p(z) * p(i) * ((i == j ? 1.0 : 0.0) - p(j));
  return H;
}

/// log(sum(exp(v))) with max subtraction.
inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace poddp
