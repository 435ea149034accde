#pragma once

// JSON containers for belief sequences and simulated runs.
//
// A belief is either the 12-number regressor layout [twist(6), log-variances
// (6)] (diagonal covariance; a zero variance is written as null) or, for
// non-diagonal covariances, {"pose": [12 KITTI numbers], "cov": [36
// row-major]}.

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "posecov/belief.hpp"
#include "posecov/errors.hpp"
#include "posecov/loss.hpp"
#include "posecov/simulation.hpp"
#include "posecov/trajectory.hpp"

namespace posecov {

using Json = nlohmann::json;

inline constexpr const char* kBeliefsFormat = "posecov.beliefs/1";
inline constexpr const char* kRunFormat = "posecov.run/1";

inline Json pose_to_json(const Pose& p) {
  Json out = Json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      out.push_back(c < 3 ? p.rotation()(r, c) : p.translation()[r]);
    }
  }
  return out;
}

inline Json belief_to_json(const PoseBelief& b) {
  if (detail::is_diagonal(b.cov)) {
    Json out = Json::array();
    const Twist xi = log_map(b.mean);
    for (int i = 0; i < 6; ++i) out.push_back(xi[i]);
    for (int i = 0; i < 6; ++i) {
      const double v = b.cov(i, i);
      if (v > 0.0) {
        out.push_back(std::log(v));
      } else {
        out.push_back(nullptr);
      }
    }
    return out;
  }
  Json cov = Json::array();
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 6; ++c) cov.push_back(b.cov(r, c));
  }
  return Json{{"pose", pose_to_json(b.mean)}, {"cov", std::move(cov)}};
}

namespace detail {

inline std::vector<double> json_numbers(const Json& arr, std::size_t expected,
                                        const std::string& where, bool allow_null) {
  if (!arr.is_array() || arr.size() != expected) {
    throw DataError(where + ": expected an array of " + std::to_string(expected) +
                    " numbers");
  }
  std::vector<double> out;
  out.reserve(expected);
  for (const auto& v : arr) {
    if (allow_null && v.is_null()) {
      out.push_back(-std::numeric_limits<double>::infinity());
    } else if (v.is_number()) {
      out.push_back(v.get<double>());
    } else {
      throw DataError(where + ": non-numeric entry");
    }
  }
  return out;
}

inline Pose pose_from_numbers(const std::vector<double>& v, const std::string& where) {
  std::ostringstream line;
  for (double x : v) line << format_double(x) << ' ';
  return parse_kitti_line(line.str(), where, 1);
}

}  // namespace detail

inline PoseBelief belief_from_json(const Json& j, const std::string& where) {
  if (j.is_array()) {
    const auto v = detail::json_numbers(j, 12, where, true);
    Vector6 xi, s;
    for (int i = 0; i < 6; ++i) {
      xi[i] = v[i];
      s[i] = v[6 + i];
    }
    if (!xi.allFinite()) throw DataError(where + ": twist must be finite");
    CovMatrix cov = CovMatrix::Zero();
    for (int i = 0; i < 6; ++i) {
      if (s[i] > kMaxLogVariance) throw DataError(where + ": log-variance overflows");
      cov(i, i) = std::isinf(s[i]) ? 0.0 : std::exp(s[i]);
    }
    return {exp_map(Twist(xi)), cov};
  }
  if (j.is_object() && j.contains("pose") && j.contains("cov")) {
    const auto p = detail::json_numbers(j["pose"], 12, where + ".pose", false);
    const auto c = detail::json_numbers(j["cov"], 36, where + ".cov", false);
    CovMatrix cov;
    for (int r = 0; r < 6; ++r) {
      for (int col = 0; col < 6; ++col) cov(r, col) = c[6 * r + col];
    }
    try {
      validate_covariance(cov, where.c_str());
    } catch (const InvalidArgument& e) {
      throw DataError(e.what());
    }
    return {detail::pose_from_numbers(p, where + ".pose"), cov};
  }
  throw DataError(where + ": belief must be a 12-number array or {pose, cov}");
}

inline Json beliefs_to_json(std::span<const PoseBelief> beliefs) {
  Json arr = Json::array();
  for (const auto& b : beliefs) arr.push_back(belief_to_json(b));
  return Json{{"format", kBeliefsFormat}, {"beliefs", std::move(arr)}};
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path, 0, e.what());
  }
}

inline void write_json_file(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

/// Beliefs from either a belief container or a run container.
inline std::vector<PoseBelief> beliefs_from_json(const Json& j,
                                                 const std::string& source) {
  if (!j.is_object() || !j.contains("beliefs") || !j["beliefs"].is_array()) {
    throw DataError(source + ": missing \"beliefs\" array");
  }
  std::vector<PoseBelief> out;
  std::size_t k = 0;
  for (const auto& b : j["beliefs"]) {
    out.push_back(belief_from_json(b, source + ": beliefs[" + std::to_string(k++) + "]"));
  }
  return out;
}

inline Json profile_to_json(const NoiseProfile& p) {
  Json sigma = Json::array(), bias = Json::array();
  for (int i = 0; i < 6; ++i) {
    sigma.push_back(p.base_sigma[i]);
    bias.push_back(p.drift_bias[i]);
  }
  return Json{{"base_sigma", sigma},
              {"spike_probability", p.spike_probability},
              {"spike_multiplier", p.spike_multiplier},
              {"drift_bias", bias}};
}

inline NoiseProfile profile_from_json(const Json& j, const std::string& where) {
  NoiseProfile p;
  try {
    const auto s = detail::json_numbers(j.at("base_sigma"), 6, where + ".base_sigma", false);
    const auto b = detail::json_numbers(j.at("drift_bias"), 6, where + ".drift_bias", false);
    for (int i = 0; i < 6; ++i) p.base_sigma[i] = s[i];
    Vector6 bias;
    for (int i = 0; i < 6; ++i) bias[i] = b[i];
    p.drift_bias = Twist(bias);
    p.spike_probability = j.at("spike_probability").get<double>();
    p.spike_multiplier = j.at("spike_multiplier").get<double>();
  } catch (const Json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  return p;
}

/// Ground truth is stored as global KITTI lines (n + 1 poses for n
/// increments); beliefs as the 12-number layout.
inline Json run_to_json(const SimulatedRun& run) {
  Json gt = Json::array();
  for (const auto& p : integrate(run.gt_increments).poses) gt.push_back(kitti_line(p));
  Json spikes = Json::array();
  for (bool s : run.spikes) spikes.push_back(s);
  Json out = beliefs_to_json(run.noisy_beliefs);
  out["format"] = kRunFormat;
  out["seed"] = run.seed;
  out["profile"] = profile_to_json(run.profile);
  out["ground_truth"] = std::move(gt);
  out["spikes"] = std::move(spikes);
  return out;
}

inline Trajectory ground_truth_from_json(const Json& j, const std::string& source) {
  if (!j.contains("ground_truth") || !j["ground_truth"].is_array()) {
    throw DataError(source + ": missing \"ground_truth\" array");
  }
  Trajectory traj;
  std::size_t line = 0;
  for (const auto& l : j["ground_truth"]) {
    ++line;
    if (!l.is_string()) throw ParseError(source, line, "ground_truth entry is not a string");
    traj.poses.push_back(parse_kitti_line(l.get<std::string>(), source + ":ground_truth", line));
  }
  if (traj.poses.empty()) throw DataError(source + ": empty ground truth");
  return traj;
}

inline SimulatedRun run_from_json(const Json& j, const std::string& source) {
  if (!j.is_object() || j.value("format", std::string()) != kRunFormat) {
    throw DataError(source + ": not a simulated-run container");
  }
  SimulatedRun run;
  run.noisy_beliefs = beliefs_from_json(j, source);
  run.gt_increments = difference(ground_truth_from_json(j, source));
  if (run.gt_increments.size() != run.noisy_beliefs.size()) {
    throw DataError(source + ": ground truth has " +
                    std::to_string(run.gt_increments.size() + 1) + " poses for " +
                    std::to_string(run.noisy_beliefs.size()) + " beliefs");
  }
  run.profile = profile_from_json(j.at("profile"), source + ": profile");
  run.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("spikes")) {
    for (const auto& s : j["spikes"]) run.spikes.push_back(s.get<bool>());
  }
  return run;
}

}  // namespace posecov
