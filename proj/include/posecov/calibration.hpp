#pragma once

// Out-of-range percentage (OR%) and mean uncertainty interval (UI) of a
// sequence of pose beliefs against ground truth.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "posecov/belief.hpp"
#include "posecov/errors.hpp"
#include "posecov/loss.hpp"

namespace posecov {

inline constexpr std::array<const char*, 6> kAxisLabels = {
    "rho_x", "rho_y", "rho_z", "phi_x", "phi_y", "phi_z"};

struct AxisCalibration {
  std::string label;
  double or_percent = 0.0;
  /// Mean one-sided half-width k_sigma * sigma_i.
  double mean_ui = 0.0;
};

struct CalibrationReport {
  std::array<AxisCalibration, 6> per_axis;
  double overall_or_percent = 0.0;
  double k_sigma = 3.0;
  std::size_t n_steps = 0;
  /// Extension: 6-DoF Mahalanobis gate at the same two-sided tail mass as
  /// the per-axis k_sigma interval.
  double mahalanobis_or_percent = 0.0;
  double mahalanobis_threshold = 0.0;
};

/// Two-sided standard-normal tail mass outside +-k.
inline double normal_two_sided_tail(double k) {
  return std::erfc(k / std::sqrt(2.0));
}

/// CDF of the chi-square distribution with 6 degrees of freedom.
inline double chi2_6_cdf(double x) {
  if (x <= 0.0) return 0.0;
  const double h = 0.5 * x;
  return 1.0 - std::exp(-h) * (1.0 + h + 0.5 * h * h);
}

/// x with P(chi2_6 > x) = tail, by bisection.
inline double chi2_6_upper_quantile(double tail) {
  double lo = 0.0, hi = 1.0;
  while (1.0 - chi2_6_cdf(hi) > tail) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (1.0 - chi2_6_cdf(mid) > tail ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Axis i of step t is out of range when |xi_i| > k_sigma * sqrt(Sigma_ii),
/// with xi = pose_residual(mean, gt).
inline CalibrationReport calibration_report(std::span<const PoseBelief> beliefs,
                                            std::span<const Pose> ground_truth,
                                            double k_sigma) {
  if (beliefs.size() != ground_truth.size()) {
    throw InvalidArgument("calibration_report: length mismatch");
  }
  if (beliefs.empty()) throw InvalidArgument("calibration_report: no steps");
  if (!(k_sigma > 0.0)) throw InvalidArgument("calibration_report: k_sigma <= 0");

  CalibrationReport report;
  report.k_sigma = k_sigma;
  report.n_steps = beliefs.size();
  report.mahalanobis_threshold =
      chi2_6_upper_quantile(normal_two_sided_tail(k_sigma));

  std::array<std::size_t, 6> outside{};
  std::array<double, 6> ui_sum{};
  std::size_t maha_outside = 0;
  for (std::size_t t = 0; t < beliefs.size(); ++t) {
    const Vector6 r = pose_residual(beliefs[t].mean, ground_truth[t]).vec();
    const Vector6 var = beliefs[t].cov.diagonal();
    for (int i = 0; i < 6; ++i) {
      const double half_width = k_sigma * std::sqrt(std::max(var[i], 0.0));
      if (std::abs(r[i]) > half_width) ++outside[i];
      ui_sum[i] += half_width;
    }
    Eigen::LLT<CovMatrix> llt(beliefs[t].cov);
    if (llt.info() == Eigen::Success) {
      if (Vector6(llt.matrixL().solve(r)).squaredNorm() >
          report.mahalanobis_threshold) {
        ++maha_outside;
      }
    } else if (r.squaredNorm() > 0.0) {
      ++maha_outside;
    }
  }

  const double n = static_cast<double>(beliefs.size());
  for (int i = 0; i < 6; ++i) {
    report.per_axis[i] = {kAxisLabels[i], 100.0 * static_cast<double>(outside[i]) / n,
                          ui_sum[i] / n};
    report.overall_or_percent += report.per_axis[i].or_percent / 6.0;
  }
  report.mahalanobis_or_percent = 100.0 * static_cast<double>(maha_outside) / n;
  return report;
}

/// Per-axis `quantile` of |residual| (linear interpolation between order
/// statistics) -- a homoscedastic interval derived from a validation split.
inline Vector6 fixed_interval_baseline(std::span<const Twist> validation_residuals,
                                       double quantile) {
  if (validation_residuals.size() < 100) {
    throw InvalidArgument("fixed_interval_baseline: need at least 100 residuals");
  }
  if (!(quantile > 0.0 && quantile < 1.0)) {
    throw InvalidArgument("fixed_interval_baseline: quantile must be in (0, 1)");
  }
  Vector6 out;
  std::vector<double> column(validation_residuals.size());
  for (int i = 0; i < 6; ++i) {
    for (std::size_t k = 0; k < validation_residuals.size(); ++k) {
      column[k] = std::abs(validation_residuals[k][i]);
    }
    std::sort(column.begin(), column.end());
    const double pos = quantile * static_cast<double>(column.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, column.size() - 1);
    out[i] = column[lo] + (pos - static_cast<double>(lo)) * (column[hi] - column[lo]);
  }
  return out;
}

/// Beliefs whose k_sigma interval equals the given fixed half-widths.
inline std::vector<PoseBelief> fixed_interval_beliefs(std::span<const Pose> means,
                                                      const Vector6& half_widths,
                                                      double k_sigma) {
  const Vector6 sigma = half_widths / k_sigma;
  const CovMatrix cov = sigma.array().square().matrix().asDiagonal();
  std::vector<PoseBelief> out;
  out.reserve(means.size());
  for (const auto& m : means) out.push_back({m, cov});
  return out;
}

}  // namespace posecov
