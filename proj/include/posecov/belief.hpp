#pragma once

// Gaussian beliefs on SE(3) under left perturbations, their compounding
// along odometry chains, and a Monte-Carlo reference for the compounding.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "posecov/errors.hpp"
#include "posecov/lie.hpp"
#include "posecov/parallel.hpp"
#include "posecov/random.hpp"

namespace posecov {

/// Covariance over a Twist. Blocks: rho-rho in m^2, phi-phi in rad^2.
using CovMatrix = Matrix6;

/// T = exp(xi^) * mean with xi ~ N(0, cov).
struct PoseBelief {
  Pose mean;
  CovMatrix cov = CovMatrix::Zero();
};

enum class CompoundOrder { SecondOrder, FourthOrder };

inline constexpr double kCovSymmetryTol = 1e-10;
inline constexpr double kCovNegativeEigTol = 1e-10;

namespace detail {

inline double cov_scale(const CovMatrix& cov) {
  return std::max(1.0, cov.cwiseAbs().maxCoeff());
}

}  // namespace detail

/// Throws InvalidArgument unless `cov` is finite, symmetric and PSD up to
/// round-off. Tolerances are relative to max(1, largest |entry|).
inline void validate_covariance(const CovMatrix& cov, const char* what) {
  if (!cov.allFinite()) {
    throw InvalidArgument(std::string(what) + ": covariance is not finite");
  }
  const double scale = detail::cov_scale(cov);
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > kCovSymmetryTol * scale) {
    throw InvalidArgument(std::string(what) + ": covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<CovMatrix> eig(cov, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -kCovNegativeEigTol * scale) {
    throw InvalidArgument(std::string(what) +
                          ": covariance is not positive semi-definite");
  }
}

inline void validate_belief(const PoseBelief& b, const char* what) {
  if (b.mean.orthonormality_error() >= kOrthonormalTol) {
    throw InvalidArgument(std::string(what) + ": mean rotation is not in SO(3)");
  }
  validate_covariance(b.cov, what);
}

/// Symmetrizes, clamps round-off negative eigenvalues to zero and rejects
/// anything more negative than that.
inline CovMatrix repair_psd(const CovMatrix& cov) {
  CovMatrix sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<CovMatrix> eig(sym);
  const double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig >= 0.0) return sym;
  if (min_eig < -kCovNegativeEigTol * detail::cov_scale(sym)) {
    throw NotPositiveDefinite("compounded covariance has eigenvalue " +
                              std::to_string(min_eig));
  }
  const Vector6 clamped = eig.eigenvalues().cwiseMax(0.0);
  sym = eig.eigenvectors() * clamped.asDiagonal() *
        eig.eigenvectors().transpose();
  return 0.5 * (sym + sym.transpose());
}

/// log of the perturbation density at `sample`:
/// log(eta) - 0.5 xi^T Sigma^-1 xi with xi = log(sample * mean^-1) and
/// eta = ((2 pi)^6 det Sigma)^(-1/2).
inline double pdf_log_density(const PoseBelief& belief, const Pose& sample) {
  Eigen::LLT<CovMatrix> llt(belief.cov);
  if (llt.info() != Eigen::Success) {
    throw NotInvertible("belief covariance is not invertible");
  }
  const Vector6 xi = log_map(sample * belief.mean.inverse()).vec();
  const Vector6 whitened = llt.matrixL().solve(xi);
  const double logdet =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (6.0 * std::log(2.0 * std::numbers::pi) + logdet) -
         0.5 * whitened.squaredNorm();
}

namespace detail {

// A* = -tr(A) 1 + A
inline Matrix3 star(const Matrix3& a) {
  return -a.trace() * Matrix3::Identity() + a;
}

// (A, B)* = A* B* + (B A)*
inline Matrix3 star(const Matrix3& a, const Matrix3& b) {
  return star(a) * star(b) + star(Matrix3(b * a));
}

// E[xi^curly xi^curly] for xi ~ N(0, cov).
inline Matrix6 curly_square_expectation(const CovMatrix& cov) {
  const Matrix3 pp = cov.bottomRightCorner<3, 3>();
  const Matrix3 rp = cov.topRightCorner<3, 3>();
  Matrix6 a = Matrix6::Zero();
  a.topLeftCorner<3, 3>() = star(pp);
  a.topRightCorner<3, 3>() = star(Matrix3(rp + rp.transpose()));
  a.bottomRightCorner<3, 3>() = star(pp);
  return a;
}

// E[xi1^curly (xi2 xi2^T) xi1^curly^T] for independent xi1 ~ N(0, c1) and
// xi2 ~ N(0, c2).
inline Matrix6 curly_sandwich_expectation(const CovMatrix& c1,
                                          const CovMatrix& c2) {
  const Matrix3 rr1 = c1.topLeftCorner<3, 3>();
  const Matrix3 rp1 = c1.topRightCorner<3, 3>();
  const Matrix3 pp1 = c1.bottomRightCorner<3, 3>();
  const Matrix3 rr2 = c2.topLeftCorner<3, 3>();
  const Matrix3 rp2 = c2.topRightCorner<3, 3>();
  const Matrix3 pp2 = c2.bottomRightCorner<3, 3>();

  const Matrix3 b11 = star(pp1, rr2) + star(Matrix3(rp1.transpose()), rp2) +
                      star(rp1, Matrix3(rp2.transpose())) + star(rr1, pp2);
  const Matrix3 b12 =
      star(pp1, Matrix3(rp2.transpose())) + star(Matrix3(rp1.transpose()), pp2);
  const Matrix3 b22 = star(pp1, pp2);

  Matrix6 b;
  b << b11, b12, b12.transpose(), b22;
  return b;
}

}  // namespace detail

/// Belief of first.mean * second.mean. `first` is the chronologically
/// earlier relative transform; its noise stays on the left while the noise of
/// `second` is transported through Ad(first.mean).
///
/// SecondOrder: Sigma = Sigma1 + Sigma2'.
/// FourthOrder adds 1/12 (A1 Sigma2' + Sigma2' A1^T + A2' Sigma1 + Sigma1
/// A2'^T) + 1/4 B, with A the curly-wedge square expectations and B the
/// cross term. The two inputs are assumed independent.
inline PoseBelief compound(const PoseBelief& first, const PoseBelief& second,
                           CompoundOrder order) {
  validate_belief(first, "compound(first)");
  validate_belief(second, "compound(second)");

  const AdjointMatrix ad = adjoint(first.mean);
  const CovMatrix& c1 = first.cov;
  const CovMatrix c2 = ad * second.cov * ad.transpose();

  CovMatrix cov = c1 + c2;
  if (order == CompoundOrder::FourthOrder) {
    const Matrix6 a1 = detail::curly_square_expectation(c1);
    const Matrix6 a2 = detail::curly_square_expectation(c2);
    cov += (a1 * c2 + c2 * a1.transpose() + a2 * c1 + c1 * a2.transpose()) /
               12.0 +
           detail::curly_sandwich_expectation(c1, c2) / 4.0;
  }
  return PoseBelief{first.mean * second.mean, repair_psd(cov)};
}

/// Running compounds after 1, 2, ..., n beliefs (left fold of `compound`).
inline std::vector<PoseBelief> compound_chain(std::span<const PoseBelief> beliefs,
                                              CompoundOrder order) {
  if (beliefs.empty()) {
    throw InvalidArgument("compound_chain: empty belief list");
  }
  std::vector<PoseBelief> out;
  out.reserve(beliefs.size());
  validate_belief(beliefs.front(), "compound_chain");
  out.push_back(beliefs.front());
  for (std::size_t k = 1; k < beliefs.size(); ++k) {
    PoseBelief next = compound(out.back(), beliefs[k], order);
    if ((k + 1) % kRenormalizeEvery == 0) next.mean = next.mean.renormalized();
    out.push_back(std::move(next));
  }
  return out;
}

/// Draws poses exp((L z)^) * mean. L is a symmetric square root from an
/// eigendecomposition, so PSD-singular covariances are handled and a zero
/// covariance returns the mean exactly.
class BeliefSampler {
 public:
  explicit BeliefSampler(const PoseBelief& belief) : mean_(belief.mean) {
    validate_covariance(belief.cov, "BeliefSampler");
    Eigen::SelfAdjointEigenSolver<CovMatrix> eig(0.5 *
                                                 (belief.cov + belief.cov.transpose()));
    const Vector6 root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    factor_ = eig.eigenvectors() * root.asDiagonal();
    zero_ = root.maxCoeff() == 0.0;
  }

  template <typename Engine>
  Twist draw_twist(Engine& engine) const {
    if (zero_) return Twist::zero();
    std::normal_distribution<double> normal;
    Vector6 z;
    for (int i = 0; i < 6; ++i) z[i] = normal(engine);
    return Twist(Vector6(factor_ * z));
  }

  template <typename Engine>
  Pose draw(Engine& engine) const {
    if (zero_) return mean_;
    return exp_map(draw_twist(engine)) * mean_;
  }

 private:
  Pose mean_;
  Matrix6 factor_;
  bool zero_ = false;
};

inline Pose sample(const PoseBelief& belief, std::uint64_t seed) {
  auto engine = substream(seed, 0);
  return BeliefSampler(belief).draw(engine);
}

struct MonteCarloOptions {
  std::size_t chunk_size = 8192;
  int max_mean_iterations = 20;
  double mean_tolerance = 1e-10;
  unsigned workers = 0;  // 0 = hardware concurrency
};

/// Empirical belief of the product of independent draws from `first` and
/// `second`. The mean is the fixed point of the log-Euclidean mean iteration
/// and the covariance is that of the residual twists about it.
///
/// Deterministic for a given seed regardless of the worker count.
inline PoseBelief monte_carlo_compound(const PoseBelief& first,
                                       const PoseBelief& second,
                                       std::size_t n_samples, std::uint64_t seed,
                                       const MonteCarloOptions& opts = {}) {
  if (n_samples < 10000) {
    throw InvalidArgument("monte_carlo_compound needs at least 1e4 samples");
  }
  const BeliefSampler s1(first);
  const BeliefSampler s2(second);
  const std::size_t chunk = opts.chunk_size;
  const std::size_t n_chunks = (n_samples + chunk - 1) / chunk;

  std::vector<Pose> samples(n_samples);
  parallel_for(
      n_chunks,
      [&](std::size_t c) {
        auto engine = substream(seed, c);
        const std::size_t end = std::min(n_samples, (c + 1) * chunk);
        for (std::size_t k = c * chunk; k < end; ++k) {
          const Pose a = s1.draw(engine);
          samples[k] = a * s2.draw(engine);
        }
      },
      opts.workers);

  struct Moments {
    Vector6 sum = Vector6::Zero();
    Matrix6 outer = Matrix6::Zero();
  };
  std::vector<Moments> partial(n_chunks);
  const double n = static_cast<double>(n_samples);

  Pose mean = first.mean * second.mean;
  for (int iter = 0; iter < opts.max_mean_iterations; ++iter) {
    const Pose mean_inv = mean.inverse();
    parallel_for(
        n_chunks,
        [&](std::size_t c) {
          Moments m;
          const std::size_t end = std::min(n_samples, (c + 1) * chunk);
          for (std::size_t k = c * chunk; k < end; ++k) {
            const Vector6 xi = log_map(samples[k] * mean_inv).vec();
            m.sum += xi;
            m.outer.noalias() += xi * xi.transpose();
          }
          partial[c] = m;
        },
        opts.workers);

    Moments total;
    for (const auto& m : partial) {
      total.sum += m.sum;
      total.outer += m.outer;
    }
    const Vector6 step = total.sum / n;
    if (step.norm() < opts.mean_tolerance) {
      CovMatrix cov = total.outer / n - step * step.transpose();
      return PoseBelief{exp_map(Twist(step)) * mean,
                        0.5 * (cov + cov.transpose())};
    }
    mean = exp_map(Twist(step)) * mean;
  }
  throw OracleFailure("manifold mean did not converge in " +
                      std::to_string(opts.max_mean_iterations) + " iterations");
}

}  // namespace posecov
