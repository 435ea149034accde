#pragma once

// Deterministic synthetic odometry with heteroscedastic, perfectly
// calibrated noise: each step reports exactly the covariance its error was
// drawn from.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "posecov/belief.hpp"
#include "posecov/errors.hpp"
#include "posecov/lie.hpp"
#include "posecov/parallel.hpp"
#include "posecov/pose_graph.hpp"
#include "posecov/random.hpp"
#include "posecov/trajectory.hpp"

namespace posecov {

enum class PathShape { Straight, Square, Circle, RandomWalk };

struct NoiseProfile {
  Vector6 base_sigma = Vector6::Zero();
  double spike_probability = 0.0;
  double spike_multiplier = 1.0;
  /// Systematic per-step error, applied on the left like the noise.
  Twist drift_bias;
};

struct SimulatedRun {
  std::vector<Pose> gt_increments;
  std::vector<PoseBelief> noisy_beliefs;
  std::vector<bool> spikes;
  NoiseProfile profile;
  std::uint64_t seed = 0;
};

inline void validate_profile(const NoiseProfile& p) {
  if (!p.base_sigma.allFinite() || (p.base_sigma.array() < 0.0).any()) {
    throw InvalidArgument("noise profile: base_sigma must be finite and >= 0");
  }
  if (!(p.spike_probability >= 0.0 && p.spike_probability <= 1.0)) {
    throw InvalidArgument("noise profile: spike_probability must be in [0, 1]");
  }
  if (!(p.spike_multiplier >= 1.0) || !std::isfinite(p.spike_multiplier)) {
    throw InvalidArgument("noise profile: spike_multiplier must be >= 1");
  }
  if (!p.drift_bias.is_finite()) {
    throw InvalidArgument("noise profile: drift_bias must be finite");
  }
}

inline Pose yaw_pose(double yaw, const Vector3& t) {
  return Pose::trusted(so3_exp(Vector3(0.0, 0.0, yaw)), t);
}

/// Ground-truth increments, moving forward along body x. Square turns 90
/// degrees after each quarter of the steps (closed when n_steps % 4 == 0);
/// Circle turns 2 pi / n_steps per step and always closes. RandomWalk uses
/// `seed` for its heading changes.
inline std::vector<Pose> generate_path(PathShape shape, int n_steps, double step_m,
                                       std::uint64_t seed = 0) {
  if (n_steps < 2) throw InvalidArgument("generate_path: need at least 2 steps");
  if (!(step_m > 0.0)) throw InvalidArgument("generate_path: step must be positive");
  const Vector3 forward(step_m, 0.0, 0.0);
  std::vector<Pose> out;
  out.reserve(static_cast<std::size_t>(n_steps));
  switch (shape) {
    case PathShape::Straight:
      out.assign(static_cast<std::size_t>(n_steps), Pose::trusted(Matrix3::Identity(), forward));
      break;
    case PathShape::Square: {
      const int side = std::max(1, n_steps / 4);
      int corners = 0;
      for (int k = 0; k < n_steps; ++k) {
        const bool corner = (k + 1) % side == 0 && corners < 4;
        if (corner) ++corners;
        out.push_back(corner ? yaw_pose(std::numbers::pi / 2.0, forward)
                             : Pose::trusted(Matrix3::Identity(), forward));
      }
      break;
    }
    case PathShape::Circle:
      out.assign(static_cast<std::size_t>(n_steps),
                 exp_map(Twist(forward, Vector3(0.0, 0.0,
                                                2.0 * std::numbers::pi / n_steps))));
      break;
    case PathShape::RandomWalk: {
      auto engine = substream(seed, 0);
      std::normal_distribution<double> yaw(0.0, 0.05), tilt(0.0, 0.005);
      for (int k = 0; k < n_steps; ++k) {
        const Vector3 phi(tilt(engine), tilt(engine), yaw(engine));
        out.push_back(Pose::trusted(so3_exp(phi), forward));
      }
      break;
    }
  }
  return out;
}

/// Per step: with probability spike_probability the sigmas are multiplied by
/// spike_multiplier; xi ~ N(0, diag(sigma^2)); mean = exp(xi) exp(bias) gt.
/// Each step draws from its own substream of `seed`.
inline SimulatedRun corrupt(std::span<const Pose> gt, const NoiseProfile& profile,
                            std::uint64_t seed, unsigned workers = 0) {
  validate_profile(profile);
  SimulatedRun run;
  run.gt_increments.assign(gt.begin(), gt.end());
  run.profile = profile;
  run.seed = seed;
  run.noisy_beliefs.resize(gt.size());
  std::vector<char> spikes(gt.size(), 0);

  const Pose bias = exp_map(profile.drift_bias);
  parallel_for(gt.size(), [&](std::size_t k) {
    auto engine = substream(seed, k);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> normal;
    const bool spike = uniform(engine) < profile.spike_probability;
    const Vector6 sigma =
        spike ? Vector6(profile.base_sigma * profile.spike_multiplier)
              : profile.base_sigma;
    Vector6 xi;
    for (int i = 0; i < 6; ++i) xi[i] = sigma[i] * normal(engine);
    run.noisy_beliefs[k] = {exp_map(Twist(xi)) * bias * gt[k],
                            CovMatrix(sigma.array().square().matrix().asDiagonal())};
    spikes[k] = spike ? 1 : 0;
  }, workers);
  run.spikes.assign(spikes.begin(), spikes.end());
  return run;
}

/// Loop-closure edges for the given node pairs: mean = exp(xi) (gt_i^-1
/// gt_j) with xi ~ N(0, loop_cov); the edge reports loop_cov.
inline std::vector<GraphEdge> synthesize_loop_edges(
    const Trajectory& ground_truth, std::span<const std::pair<int, int>> pairs,
    const CovMatrix& loop_cov, std::uint64_t seed) {
  validate_covariance(loop_cov, "synthesize_loop_edges");
  const BeliefSampler noise(PoseBelief{Pose::identity(), loop_cov});
  std::vector<GraphEdge> edges;
  edges.reserve(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    auto engine = substream(seed, k);
    const Pose rel = ground_truth.poses.at(static_cast<std::size_t>(i)).inverse() *
                     ground_truth.poses.at(static_cast<std::size_t>(j));
    edges.push_back({i, j, {noise.draw(engine) * rel, loop_cov},
                     EdgeKind::LoopClosure});
  }
  return edges;
}

}  // namespace posecov
