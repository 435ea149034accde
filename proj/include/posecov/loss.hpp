#pragma once

// Covariance-weighted negative log-likelihood over incremental odometry
// outputs and their compounds over overlapping windows.

#include <Eigen/Cholesky>

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "posecov/belief.hpp"
#include "posecov/errors.hpp"
#include "posecov/lie.hpp"
#include "posecov/parallel.hpp"

namespace posecov {

/// Per-axis log-variances s_i = log(sigma_i^2), the raw uncertainty output
/// of an odometry regressor.
struct LogVarianceVector {
  Vector6 s = Vector6::Zero();
};

struct WindowSpec {
  int max_window = 5;
  int stride = 1;
};

/// Sums for one window length (length 1 = the incremental terms).
struct WindowLengthTerms {
  int length = 0;
  std::size_t count = 0;
  double quadratic = 0.0;
  double logdet = 0.0;
  /// Unweighted ||r||^2, the mean-squared-error baseline.
  double squared_error = 0.0;
};

struct LossBreakdown {
  double incremental_quadratic = 0.0;
  double incremental_logdet = 0.0;
  double composed_quadratic = 0.0;
  double composed_logdet = 0.0;
  double total = 0.0;

  std::size_t n_increments = 0;
  std::size_t n_windows = 0;
  /// Index 0 holds length 1 (incremental), index k holds length k + 1.
  std::vector<WindowLengthTerms> per_length;
};

struct NllTerm {
  double quadratic = 0.0;
  double logdet = 0.0;
};

inline constexpr double kMaxLogVariance = 700.0;

inline CovMatrix variances_from_logvars(const LogVarianceVector& logvars) {
  if (!logvars.s.allFinite()) {
    throw InvalidArgument("log-variances must be finite");
  }
  if ((logvars.s.array() > kMaxLogVariance).any()) {
    throw InvalidArgument("log-variance above 700 overflows");
  }
  return CovMatrix(logvars.s.array().exp().matrix().asDiagonal());
}

/// log|Sigma| of a diagonal covariance given its log-variances.
inline double logdet_diagonal(const LogVarianceVector& logvars) {
  return logvars.s.sum();
}

/// Cholesky factor of `sigma`. On failure retries once with
/// 1e-10 * trace / 6 added to the diagonal, then throws NotPositiveDefinite.
inline Eigen::LLT<CovMatrix> cholesky_with_jitter(const CovMatrix& sigma) {
  if (!sigma.allFinite()) {
    throw NotPositiveDefinite("covariance is not finite");
  }
  Eigen::LLT<CovMatrix> llt(sigma);
  if (llt.info() == Eigen::Success) return llt;
  const double jitter = 1e-10 * sigma.trace() / 6.0;
  if (jitter > 0.0) {
    llt.compute(sigma + jitter * CovMatrix::Identity());
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NotPositiveDefinite("Cholesky factorization failed after jitter");
}

/// log|Sigma| = 2 sum log L_ii.
inline double logdet_cholesky(const CovMatrix& sigma) {
  const auto llt = cholesky_with_jitter(sigma);
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Left-perturbation residual log(estimate * ground_truth^-1).
inline Twist pose_residual(const Pose& estimate, const Pose& ground_truth) {
  return log_map(estimate * ground_truth.inverse());
}

namespace detail {

inline bool is_diagonal(const CovMatrix& c) {
  return (c - CovMatrix(c.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace detail

/// r^T Sigma^-1 r and log|Sigma| for r = pose_residual(estimate.mean, gt).
/// Diagonal covariances take the log-variance route, others Cholesky.
inline NllTerm nll_term(const PoseBelief& estimate, const Pose& ground_truth) {
  const Vector6 r = pose_residual(estimate.mean, ground_truth).vec();
  if (detail::is_diagonal(estimate.cov)) {
    const Vector6 var = estimate.cov.diagonal();
    if (!(var.array() > 0.0).all() || !var.allFinite()) {
      throw NotPositiveDefinite("diagonal covariance has non-positive entries");
    }
    return {(r.array().square() / var.array()).sum(),
            logdet_diagonal({var.array().log().matrix()})};
  }
  const auto llt = cholesky_with_jitter(estimate.cov);
  const Vector6 w = llt.matrixL().solve(r);
  return {w.squaredNorm(),
          2.0 * llt.matrixLLT().diagonal().array().log().sum()};
}

/// Terms of the windows that start at the first increment: entry k uses the
/// compound of increments [0, k] (entry 0 is the incremental term alone).
inline std::vector<WindowLengthTerms> prefix_window_terms(
    std::span<const PoseBelief> increments, std::span<const Pose> gt_increments,
    std::size_t max_length, CompoundOrder order) {
  if (increments.size() != gt_increments.size() || increments.empty()) {
    throw InvalidArgument("prefix_window_terms: mismatched or empty inputs");
  }
  const std::size_t len = std::min(max_length, increments.size());
  const auto chain = compound_chain(increments.first(len), order);
  std::vector<WindowLengthTerms> out;
  Pose gt = Pose::identity();
  for (std::size_t k = 0; k < len; ++k) {
    gt = gt * gt_increments[k];
    const NllTerm t = nll_term(chain[k], gt);
    const double sq = pose_residual(chain[k].mean, gt).vec().squaredNorm();
    out.push_back({static_cast<int>(k + 1), 1, t.quadratic, t.logdet, sq});
  }
  return out;
}

/// Incremental terms over every increment plus composed terms over every
/// window of length 2..max_window starting at every stride offset. Raw sums;
/// per-length counts are reported so callers can normalize.
inline LossBreakdown window_loss(std::span<const PoseBelief> increments,
                                 std::span<const Pose> gt_increments,
                                 const WindowSpec& window, CompoundOrder order) {
  if (increments.size() != gt_increments.size()) {
    throw InvalidArgument("window_loss: estimate and ground-truth lengths differ");
  }
  if (increments.size() < 2) {
    throw InvalidArgument("window_loss: need at least two increments");
  }
  if (window.max_window < 2 || window.stride < 1) {
    throw InvalidArgument("window_loss: max_window must be >= 2, stride >= 1");
  }

  const std::size_t n = increments.size();
  const std::size_t max_len =
      std::min<std::size_t>(static_cast<std::size_t>(window.max_window), n);

  LossBreakdown out;
  out.n_increments = n;
  out.per_length.resize(max_len);
  for (std::size_t k = 0; k < max_len; ++k) {
    out.per_length[k].length = static_cast<int>(k + 1);
  }

  std::vector<double> inc_quad(n), inc_logdet(n), inc_sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const NllTerm t = nll_term(increments[i], gt_increments[i]);
    inc_quad[i] = t.quadratic;
    inc_logdet[i] = t.logdet;
    inc_sq[i] = pose_residual(increments[i].mean, gt_increments[i])
                    .vec()
                    .squaredNorm();
  }

  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + 2 <= n; s += static_cast<std::size_t>(window.stride)) {
    starts.push_back(s);
  }
  std::vector<std::vector<WindowLengthTerms>> per_start(starts.size());
  parallel_for(starts.size(), [&](std::size_t i) {
    const std::size_t s = starts[i];
    const std::size_t len = std::min(max_len, n - s);
    per_start[i] = prefix_window_terms(increments.subspan(s, len),
                                       gt_increments.subspan(s, len), len, order);
  });

  // Fixed-order reductions so totals do not depend on scheduling.
  std::vector<double> comp_quad, comp_logdet;
  for (std::size_t k = 1; k < max_len; ++k) {
    std::vector<double> q, l, sq;
    for (const auto& terms : per_start) {
      if (terms.size() <= k) continue;
      q.push_back(terms[k].quadratic);
      l.push_back(terms[k].logdet);
      sq.push_back(terms[k].squared_error);
    }
    auto& slot = out.per_length[k];
    slot.count = q.size();
    slot.quadratic = pairwise_sum(q, 0.0);
    slot.logdet = pairwise_sum(l, 0.0);
    slot.squared_error = pairwise_sum(sq, 0.0);
    comp_quad.insert(comp_quad.end(), q.begin(), q.end());
    comp_logdet.insert(comp_logdet.end(), l.begin(), l.end());
    out.n_windows += q.size();
  }

  out.incremental_quadratic = pairwise_sum(inc_quad, 0.0);
  out.incremental_logdet = pairwise_sum(inc_logdet, 0.0);
  out.composed_quadratic = pairwise_sum(comp_quad, 0.0);
  out.composed_logdet = pairwise_sum(comp_logdet, 0.0);
  out.per_length[0] = {1, n, out.incremental_quadratic, out.incremental_logdet,
                       pairwise_sum(inc_sq, 0.0)};
  out.total = out.incremental_quadratic + out.incremental_logdet +
              out.composed_quadratic + out.composed_logdet;
  return out;
}

}  // namespace posecov
