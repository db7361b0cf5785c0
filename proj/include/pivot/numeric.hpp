#pragma once

/**
 * Scalar-generic numeric kernels shared by every module.
 *
 * All functions accept any dense Eigen expression and evaluate in the
 * expression's scalar type. Probability math is done in log space with
 * log-sum-exp stabilization; 0 * log(0) is taken as 0.
 */

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace pivot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  const auto lse = log_sum_exp(logits);
  return (logits.array() - lse).matrix();
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  return log_softmax(logits).array().exp().matrix();
}

/// Shannon entropy in nats of a probability vector.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& probs) {
  using Scalar = typename Derived::Scalar;
  Scalar h = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const Scalar p = probs(i);
    if (p > 0) h -= p * std::log(p);
  }
  return h < 0 ? Scalar(0) : h;
}

/// Entropy computed from log-probabilities, which avoids log(exp(.)) round trips.
template <typename Derived>
typename Derived::Scalar entropy_from_log_probs(const Eigen::MatrixBase<Derived>& logp) {
  using Scalar = typename Derived::Scalar;
  Scalar h = 0;
  for (Eigen::Index i = 0; i < logp.size(); ++i) {
    const Scalar lp = logp(i);
    if (std::isfinite(lp)) h -= std::exp(lp) * lp;
  }
  return h < 0 ? Scalar(0) : h;
}

/**
 * Population z-scores with a stabilizer in the denominator.
 *
 * Deviations are formed pairwise, d_k = (1/m) * sum_j (x_k - x_j), so for two
 * elements the results are exact negatives of each other and identical inputs
 * give exact zeros.
 */
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> zscores(
    const Eigen::MatrixBase<Derived>& x, typename Derived::Scalar eps) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index m = x.size();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dev(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    Scalar s = 0;
    for (Eigen::Index j = 0; j < m; ++j) s += x(k) - x(j);
    dev(k) = s / static_cast<Scalar>(m);
  }
  const Scalar sigma = std::sqrt(dev.squaredNorm() / static_cast<Scalar>(m));
  return dev / (sigma + eps);
}

/// Numerically stable -log(sigmoid(x)).
inline double neg_log_sigmoid(double x) {
  if (x >= 0) return std::log1p(std::exp(-x));
  return -x + std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Empirical quantile with linear interpolation between order statistics.
double quantile_linear(std::vector<double> values, double q);

}  // namespace pivot
