#pragma once

// Trajectory integration, KITTI pose files, the KITTI segment error metric
// and Umeyama alignment.

#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "posecov/errors.hpp"
#include "posecov/lie.hpp"

namespace posecov {

/// Global poses of frame k w.r.t. frame 0.
struct Trajectory {
  std::vector<Pose> poses;
  std::optional<std::vector<double>> timestamps;

  std::size_t size() const { return poses.size(); }
};

/// Throws InvalidArgument for an empty trajectory or timestamps that are
/// mismatched in count or not strictly increasing.
inline void validate_trajectory(const Trajectory& traj) {
  if (traj.poses.empty()) throw InvalidArgument("trajectory is empty");
  if (!traj.timestamps) return;
  const auto& ts = *traj.timestamps;
  if (ts.size() != traj.poses.size()) {
    throw InvalidArgument("trajectory has " + std::to_string(ts.size()) +
                          " timestamps for " + std::to_string(traj.poses.size()) +
                          " poses");
  }
  for (std::size_t i = 1; i < ts.size(); ++i) {
    if (!(ts[i] > ts[i - 1])) {
      throw InvalidArgument("trajectory timestamps are not strictly increasing");
    }
  }
}

/// poses[0] = I, poses[k] = poses[k-1] * increments[k-1]; n increments give
/// n + 1 poses.
inline Trajectory integrate(std::span<const Pose> increments) {
  if (increments.empty()) throw InvalidArgument("integrate: no increments");
  Trajectory traj;
  traj.poses.reserve(increments.size() + 1);
  traj.poses.push_back(Pose::identity());
  for (std::size_t k = 0; k < increments.size(); ++k) {
    Pose next = traj.poses.back() * increments[k];
    if ((k + 1) % kRenormalizeEvery == 0) next = next.renormalized();
    traj.poses.push_back(next);
  }
  return traj;
}

/// Relative poses poses[k-1]^-1 * poses[k].
inline std::vector<Pose> difference(const Trajectory& traj) {
  std::vector<Pose> out;
  for (std::size_t k = 1; k < traj.poses.size(); ++k) {
    out.push_back(traj.poses[k - 1].inverse() * traj.poses[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// KITTI pose files: one row-major 3x4 [R|t] per line.

inline constexpr double kKittiRotationTol = 1e-3;

/// Formats a double with 17 significant digits (round-trips exactly).
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string kitti_line(const Pose& p) {
  std::string line;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (!line.empty()) line += ' ';
      line += format_double(c < 3 ? p.rotation()(r, c) : p.translation()[r]);
    }
  }
  return line;
}

/// Parses one KITTI line. Rotations off SO(3) by up to kKittiRotationTol
/// (Frobenius) are projected back; anything worse is a DataError.
inline Pose parse_kitti_line(const std::string& line, const std::string& source,
                             std::size_t line_no) {
  std::array<double, 12> v{};
  const char* p = line.data();
  const char* end = line.data() + line.size();
  int count = 0;
  while (true) {
    while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    if (p == end) break;
    if (count == 12) throw ParseError(source, line_no, "more than 12 values");
    if (*p == '+') ++p;
    const auto res = std::from_chars(p, end, v[count]);
    if (res.ec != std::errc() ||
        (res.ptr < end && !std::isspace(static_cast<unsigned char>(*res.ptr)))) {
      throw ParseError(source, line_no, "malformed number");
    }
    p = res.ptr;
    ++count;
  }
  if (count != 12) {
    throw ParseError(source, line_no,
                     "expected 12 values, found " + std::to_string(count));
  }
  Matrix3 r;
  Vector3 t;
  for (int i = 0; i < 3; ++i) {
    r.row(i) << v[4 * i], v[4 * i + 1], v[4 * i + 2];
    t[i] = v[4 * i + 3];
  }
  if (!r.allFinite() || !t.allFinite()) {
    throw ParseError(source, line_no, "non-finite value");
  }
  const double err = (r.transpose() * r - Matrix3::Identity()).norm();
  if (err > kKittiRotationTol || r.determinant() <= 0.0) {
    throw DataError(source + ":" + std::to_string(line_no) +
                    ": rotation is not orthonormal (error " +
                    std::to_string(err) + ")");
  }
  // Already-valid rotations are kept bit-for-bit.
  if (err < 1e-12) return Pose::trusted(r, t);
  return Pose::projected(r, t);
}

inline Trajectory read_kitti_poses(std::istream& in,
                                   const std::string& source = "<stream>") {
  Trajectory traj;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    traj.poses.push_back(parse_kitti_line(line, source, line_no));
  }
  if (traj.poses.empty()) throw DataError(source + ": no poses");
  return traj;
}

inline Trajectory read_kitti_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_kitti_poses(in, path);
}

inline void write_kitti_poses(const Trajectory& traj, std::ostream& out) {
  for (const auto& p : traj.poses) out << kitti_line(p) << '\n';
}

inline void write_kitti_poses(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_kitti_poses(traj, out);
}

// ---------------------------------------------------------------------------
// KITTI odometry benchmark metric.

struct SegmentError {
  std::size_t first_frame = 0;
  double length_m = 0.0;
  double translation_percent = 0.0;
  double rotation_deg_per_m = 0.0;
};

struct LengthSummary {
  double length_m = 0.0;
  std::size_t count = 0;
  double translation_percent = 0.0;
  double rotation_deg_per_m = 0.0;
};

struct RelErrorReport {
  std::vector<SegmentError> per_segment;
  std::vector<LengthSummary> per_length;
  double mean_translation_percent = 0.0;
  double mean_rotation_deg_per_m = 0.0;
  double mean_rotation_deg_per_100m = 0.0;
  /// Set when the ground truth is too short for the shortest segment.
  bool too_short = false;
};

inline constexpr std::array<double, 8> kKittiSegmentLengths = {
    100, 200, 300, 400, 500, 600, 700, 800};
inline constexpr std::size_t kKittiStride = 10;

/// Angle of the error rotation. Same value as the benchmark's clamped
/// arccos((tr R - 1) / 2) but through atan2, which keeps full precision for
/// the tiny angles typical of good estimates.
inline double kitti_rotation_error(const Matrix3& r) { return rotation_angle(r); }

inline std::vector<double> path_distances(const Trajectory& traj) {
  std::vector<double> dist(traj.size(), 0.0);
  for (std::size_t i = 1; i < traj.size(); ++i) {
    dist[i] = dist[i - 1] +
              (traj.poses[i].translation() - traj.poses[i - 1].translation()).norm();
  }
  return dist;
}

/// Segment errors every 10 frames for lengths 100..800 m; a segment ends at
/// the first frame whose ground-truth arc length exceeds the target by more
/// than round-off.
inline RelErrorReport kitti_relative_errors(const Trajectory& estimate,
                                            const Trajectory& ground_truth) {
  if (estimate.size() != ground_truth.size() || estimate.size() < 2) {
    throw InvalidArgument(
        "kitti_relative_errors: trajectories must have equal length >= 2");
  }
  const std::vector<double> dist = path_distances(ground_truth);
  RelErrorReport report;
  report.too_short = dist.back() <= kKittiSegmentLengths.front();

  // Arc lengths that tie a target length (common with uniform steps) must
  // not flip with round-off, or a rigid transform of both trajectories
  // would change the segment layout.
  const double tie = 1e-9 * std::max(1.0, dist.back());
  const std::size_t n = ground_truth.size();
  for (std::size_t first = 0; first < n; first += kKittiStride) {
    for (double len : kKittiSegmentLengths) {
      std::size_t last = first;
      while (last < n && dist[last] - dist[first] <= len + tie) ++last;
      if (last == n) continue;
      const Pose gt_rel =
          ground_truth.poses[first].inverse() * ground_truth.poses[last];
      const Pose est_rel = estimate.poses[first].inverse() * estimate.poses[last];
      const Pose err = gt_rel.inverse() * est_rel;
      report.per_segment.push_back(
          {first, len, 100.0 * err.translation().norm() / len,
           kitti_rotation_error(err.rotation()) * 180.0 / std::numbers::pi / len});
    }
  }

  for (double len : kKittiSegmentLengths) {
    LengthSummary s{len, 0, 0.0, 0.0};
    for (const auto& e : report.per_segment) {
      if (e.length_m != len) continue;
      ++s.count;
      s.translation_percent += e.translation_percent;
      s.rotation_deg_per_m += e.rotation_deg_per_m;
    }
    if (s.count == 0) continue;
    s.translation_percent /= static_cast<double>(s.count);
    s.rotation_deg_per_m /= static_cast<double>(s.count);
    report.per_length.push_back(s);
  }
  if (!report.per_segment.empty()) {
    for (const auto& e : report.per_segment) {
      report.mean_translation_percent += e.translation_percent;
      report.mean_rotation_deg_per_m += e.rotation_deg_per_m;
    }
    const double m = static_cast<double>(report.per_segment.size());
    report.mean_translation_percent /= m;
    report.mean_rotation_deg_per_m /= m;
    report.mean_rotation_deg_per_100m = 100.0 * report.mean_rotation_deg_per_m;
  }
  return report;
}

/// CSV with header `length_m,t_percent,r_deg_per_m`, one row per segment.
inline void write_rel_error_csv(const RelErrorReport& report, std::ostream& out) {
  out << "length_m,t_percent,r_deg_per_m\n";
  for (const auto& e : report.per_segment) {
    out << format_double(e.length_m) << ',' << format_double(e.translation_percent)
        << ',' << format_double(e.rotation_deg_per_m) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Umeyama similarity alignment.

struct Similarity {
  double scale = 1.0;
  Matrix3 rotation = Matrix3::Identity();
  Vector3 translation = Vector3::Zero();
};

struct Alignment {
  Trajectory aligned;
  Similarity transform;
};

/// Similarity (s, R, t) minimizing sum ||dst_k - (s R src_k + t)||^2.
/// Throws RankDeficiency for collinear or coincident point sets.
inline Similarity umeyama(std::span<const Vector3> src, std::span<const Vector3> dst,
                          bool with_scale) {
  if (src.size() != dst.size()) {
    throw InvalidArgument("umeyama: point sets differ in size");
  }
  if (src.size() < 3) throw InvalidArgument("umeyama: need at least 3 points");
  const double n = static_cast<double>(src.size());

  Vector3 mu_src = Vector3::Zero(), mu_dst = Vector3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mu_src += src[i];
    mu_dst += dst[i];
  }
  mu_src /= n;
  mu_dst /= n;

  Matrix3 cov = Matrix3::Zero();
  double var_src = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vector3 a = src[i] - mu_src;
    cov += (dst[i] - mu_dst) * a.transpose();
    var_src += a.squaredNorm();
  }
  cov /= n;
  var_src /= n;

  Eigen::JacobiSVD<Matrix3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector3 sv = svd.singularValues();
  if (sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0]) {
    throw RankDeficiency("umeyama: points are collinear or coincident");
  }
  Matrix3 s = Matrix3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    s(2, 2) = -1.0;
  }

  Similarity out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = with_scale ? (sv.asDiagonal() * s).trace() / var_src : 1.0;
  out.translation = mu_dst - out.scale * out.rotation * mu_src;
  return out;
}

/// Aligns `estimate` onto `ground_truth` positions; rotations are
/// left-composed with the alignment rotation.
inline Alignment umeyama_align(const Trajectory& estimate,
                               const Trajectory& ground_truth, bool with_scale) {
  if (estimate.size() != ground_truth.size()) {
    throw InvalidArgument("umeyama_align: trajectories differ in length");
  }
  std::vector<Vector3> src, dst;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    src.push_back(estimate.poses[i].translation());
    dst.push_back(ground_truth.poses[i].translation());
  }
  Alignment out;
  out.transform = umeyama(src, dst, with_scale);
  const auto& tf = out.transform;
  out.aligned.timestamps = estimate.timestamps;
  for (const auto& p : estimate.poses) {
    out.aligned.poses.push_back(Pose::trusted(
        tf.rotation * p.rotation(),
        tf.scale * tf.rotation * p.translation() + tf.translation));
  }
  return out;
}

/// Root-mean-square position difference.
inline double position_rmse(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size() || a.size() == 0) {
    throw InvalidArgument("position_rmse: trajectories differ in length");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += (a.poses[i].translation() - b.poses[i].translation()).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(a.size()));
}

}  // namespace posecov
