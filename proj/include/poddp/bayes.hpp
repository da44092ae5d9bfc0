#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include "poddp/belief.hpp"
#include "poddp/model.hpp"

namespace poddp {

/// log N(residual; 0, cov). A zero covariance is an uninformative channel and
/// contributes 0 for every hypothesis.
inline double gaussian_log_density(const Vector& residual, const Matrix& cov) {
  if (cov.isZero(0.0)) return 0.0;
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success)
    throw InvalidArgument("gaussian_log_density: covariance is not positive definite");
  const Matrix L = llt.matrixL();
  const Vector w = L.triangularView<Eigen::Lower>().solve(residual);
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  const double n = static_cast<double>(residual.size());
  return -0.5 * (w.squaredNorm() + log_det + n * std::log(2.0 * std::numbers::pi));
}

namespace detail {

// Posterior probabilities from prior probabilities and per-hypothesis log
// likelihoods, normalized in log space and floored.
inline Vector posterior_from_log_likelihood(const Vector& prior, const Vector& log_lik) {
  const Eigen::Index n = prior.size();
  Vector log_post(n);
  for (Eigen::Index z = 0; z < n; ++z)
    log_post(z) = prior(z) > 0.0 ? std::log(prior(z)) + log_lik(z)
                                 : -std::numeric_limits<double>::infinity();
  const double log_mass = log_sum_exp(log_post);
  if (!(log_mass >= std::log(1e-300)))
    throw DegenerateEvidence("bayes_update: evidence has negligible likelihood under every latent");
  const Vector post = (log_post.array() - log_mass).exp().matrix();
  return floor_and_normalize(post);
}

// Per-hypothesis log likelihood of a transition x -> x_next under u, plus an
// observation at x_next when `obs` is non-null.
inline Vector evidence_log_likelihood(const ProblemModel& model, const Vector& x_next,
                                      const Vector& u, const Vector& x, const Vector* obs) {
  const int nz = model.num_latents();
  Vector log_lik = Vector::Zero(nz);
  for (int z = 0; z < nz; ++z) {
    const Matrix& q = model.dynamics_noise[static_cast<std::size_t>(z)];
    if (!q.isZero(0.0))
      log_lik(z) += gaussian_log_density(x_next - model.dynamics_mean(x, u, z), q);
    if (obs != nullptr)
      log_lik(z) += gaussian_log_density(*obs - model.observation_mean(x_next, z),
                                         model.observation_noise(x_next, z));
  }
  return log_lik;
}

inline void check_update_dims(const ProblemModel& model, const Vector& x_next, const Vector& u,
                              const Vector& x, const Belief& b) {
  if (x_next.size() != model.state_dim || x.size() != model.state_dim ||
      u.size() != model.control_dim || b.size() != model.num_latents())
    throw InvalidArgument("bayes_update: dimension mismatch");
}

}  // namespace detail

/// Recursive Bayesian filter step over the latent value:
/// b'(z) ∝ p(o | x_next, z) p(x_next | x, u, z) b(z), floored at kBeliefFloor.
inline Belief bayes_update(const Vector& o, const Vector& x_next, const Vector& u,
                           const Vector& x, const Belief& b, const ProblemModel& model) {
  detail::check_update_dims(model, x_next, u, x, b);
  if (o.size() != model.obs_dim) throw InvalidArgument("bayes_update: observation dimension");
  return Belief(detail::posterior_from_log_likelihood(
      b.probs, detail::evidence_log_likelihood(model, x_next, u, x, &o)));
}

/// Filter step for a control step with no observation: only the observed
/// state transition is evidence.
inline Belief transition_update(const Vector& x_next, const Vector& u, const Vector& x,
                                const Belief& b, const ProblemModel& model) {
  detail::check_update_dims(model, x_next, u, x, b);
  return Belief(detail::posterior_from_log_likelihood(
      b.probs, detail::evidence_log_likelihood(model, x_next, u, x, nullptr)));
}

}  // namespace poddp
