#pragma once

// Covariance-weighted pose graph with odometry and loop-closure edges,
// solved by damped Gauss-Newton on the manifold (left-multiplicative
// updates, node 0 held fixed).

#include <Eigen/Cholesky>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "posecov/belief.hpp"
#include "posecov/errors.hpp"
#include "posecov/lie.hpp"
#include "posecov/loss.hpp"
#include "posecov/trajectory.hpp"

namespace posecov {

enum class EdgeKind { Odometry, LoopClosure };

/// Relative constraint: constraint.mean ~ state_from^-1 * state_to.
struct GraphEdge {
  int from = 0;
  int to = 0;
  PoseBelief constraint;
  EdgeKind kind = EdgeKind::Odometry;
};

struct PoseGraph {
  std::vector<Pose> nodes;  // node id = index; node 0 is the anchor
  std::vector<GraphEdge> edges;
};

struct SolveReport {
  int iterations = 0;
  double initial_chi2 = 0.0;
  double final_chi2 = 0.0;
  bool converged = false;
};

struct SolverOptions {
  int max_iterations = 50;
  /// Stop when the relative chi2 decrease of an accepted step drops below.
  double tolerance = 1e-9;
  /// chi2 is whitened, so this floor is unit-free: below it the residuals
  /// are round-off and relative progress is meaningless.
  double absolute_tolerance = 1e-12;
  double initial_damping = 1e-4;
  int max_rejections = 5;
};

inline void validate_graph(const PoseGraph& graph) {
  const int n = static_cast<int>(graph.nodes.size());
  if (n == 0) throw InvalidArgument("pose graph has no nodes");
  for (const auto& e : graph.edges) {
    if (e.from < 0 || e.to < 0 || e.from >= n || e.to >= n) {
      throw InvalidArgument("edge " + std::to_string(e.from) + "->" +
                            std::to_string(e.to) + " references a missing node");
    }
    if (e.from == e.to) throw InvalidArgument("self-loop edge");
    if (e.kind == EdgeKind::Odometry && e.to != e.from + 1) {
      throw InvalidArgument("odometry edge must connect consecutive nodes");
    }
    Eigen::LLT<CovMatrix> llt(e.constraint.cov);
    if (llt.info() != Eigen::Success) {
      throw InvalidArgument("edge covariance is not positive definite");
    }
  }
}

/// Nodes from integrating the odometry means, one odometry edge per belief,
/// then the loop edges.
inline PoseGraph build_graph(std::span<const PoseBelief> odometry,
                             std::span<const GraphEdge> loops) {
  if (odometry.empty()) throw InvalidArgument("build_graph: no odometry");
  std::vector<Pose> means;
  means.reserve(odometry.size());
  for (const auto& b : odometry) means.push_back(b.mean);

  PoseGraph graph;
  graph.nodes = integrate(means).poses;
  for (std::size_t k = 0; k < odometry.size(); ++k) {
    graph.edges.push_back({static_cast<int>(k), static_cast<int>(k + 1),
                           odometry[k], EdgeKind::Odometry});
  }
  for (const auto& e : loops) graph.edges.push_back(e);
  validate_graph(graph);
  return graph;
}

/// r = log((T_from^-1 T_to) Z^-1).
inline Twist edge_residual(const Pose& from, const Pose& to, const Pose& measured) {
  return log_map(from.inverse() * to * measured.inverse());
}

/// Jacobians of edge_residual w.r.t. left perturbations exp(d) T of the
/// `from` and `to` states: dr/dd_to = J_l(r)^-1 Ad(T_from^-1), dr/dd_from =
/// -dr/dd_to.
inline std::pair<Matrix6, Matrix6> edge_jacobians(const Pose& from, const Pose& to,
                                                  const Pose& measured) {
  const Twist r = edge_residual(from, to, measured);
  const Matrix6 j_to = se3_left_jacobian_inverse(r) * adjoint(from.inverse());
  return {-j_to, j_to};
}

inline double chi2(const PoseGraph& graph) {
  double total = 0.0;
  for (const auto& e : graph.edges) {
    const Vector6 r =
        edge_residual(graph.nodes[e.from], graph.nodes[e.to], e.constraint.mean).vec();
    const auto llt = cholesky_with_jitter(e.constraint.cov);
    total += Vector6(llt.matrixL().solve(r)).squaredNorm();
  }
  return total;
}

inline bool is_connected(const PoseGraph& graph) {
  std::vector<int> parent(graph.nodes.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : graph.edges) parent[find(e.from)] = find(e.to);
  const int root = find(0);
  for (int i = 0; i < static_cast<int>(graph.nodes.size()); ++i) {
    if (find(i) != root) return false;
  }
  return true;
}

/// Damped Gauss-Newton (Levenberg): solves (H + lambda I) d = -b in block-6
/// sparse form, multiplying lambda by 10 on a rejected step and dividing by
/// 10 on an accepted one. Node 0 is fixed.
inline SolveReport optimize(PoseGraph& graph, const SolverOptions& opts = {}) {
  validate_graph(graph);
  if (!is_connected(graph)) {
    throw RankDeficiency("pose graph is disconnected; normal equations are singular");
  }
  const int n_free = static_cast<int>(graph.nodes.size()) - 1;

  std::vector<Matrix6> information;
  information.reserve(graph.edges.size());
  for (const auto& e : graph.edges) {
    const auto llt = cholesky_with_jitter(e.constraint.cov);
    information.push_back(llt.solve(Matrix6::Identity()));
  }
  auto chi2_of = [&](const std::vector<Pose>& nodes) {
    double total = 0.0;
    for (std::size_t k = 0; k < graph.edges.size(); ++k) {
      const auto& e = graph.edges[k];
      const Vector6 r =
          edge_residual(nodes[e.from], nodes[e.to], e.constraint.mean).vec();
      total += r.dot(information[k] * r);
    }
    return total;
  };

  SolveReport report;
  double current = chi2_of(graph.nodes);
  report.initial_chi2 = report.final_chi2 = current;
  if (current <= opts.absolute_tolerance || n_free == 0) {
    report.converged = true;
    return report;
  }

  double lambda = opts.initial_damping;
  int rejections = 0;
  const int dim = 6 * n_free;
  while (report.iterations < opts.max_iterations) {
    ++report.iterations;

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(graph.edges.size() * 4 * 36 + dim);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
    auto add_block = [&](int row_node, int col_node, const Matrix6& block) {
      if (row_node == 0 || col_node == 0) return;
      const int r0 = 6 * (row_node - 1), c0 = 6 * (col_node - 1);
      for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) triplets.emplace_back(r0 + i, c0 + j, block(i, j));
      }
    };
    for (std::size_t k = 0; k < graph.edges.size(); ++k) {
      const auto& e = graph.edges[k];
      const Pose& from = graph.nodes[e.from];
      const Pose& to = graph.nodes[e.to];
      const Vector6 r = edge_residual(from, to, e.constraint.mean).vec();
      const auto [j_from, j_to] = edge_jacobians(from, to, e.constraint.mean);
      const Matrix6 wf = j_from.transpose() * information[k];
      const Matrix6 wt = j_to.transpose() * information[k];
      add_block(e.from, e.from, wf * j_from);
      add_block(e.from, e.to, wf * j_to);
      add_block(e.to, e.from, wt * j_from);
      add_block(e.to, e.to, wt * j_to);
      if (e.from != 0) b.segment<6>(6 * (e.from - 1)) += wf * r;
      if (e.to != 0) b.segment<6>(6 * (e.to - 1)) += wt * r;
    }
    for (int i = 0; i < dim; ++i) triplets.emplace_back(i, i, lambda);
    Eigen::SparseMatrix<double> h(dim, dim);
    h.setFromTriplets(triplets.begin(), triplets.end());

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(h);
    if (solver.info() != Eigen::Success) {
      throw RankDeficiency("normal equations could not be factorized");
    }
    const Eigen::VectorXd delta = solver.solve(-b);
    if (solver.info() != Eigen::Success || !delta.allFinite()) {
      throw RankDeficiency("normal equations could not be solved");
    }

    std::vector<Pose> candidate = graph.nodes;
    for (int i = 1; i <= n_free; ++i) {
      candidate[i] = exp_map(Twist(Vector6(delta.segment<6>(6 * (i - 1))))) *
                     graph.nodes[i];
    }
    const double next = chi2_of(candidate);
    const double rel_change = (current - next) / current;

    if (next < current) {
      graph.nodes = std::move(candidate);
      current = next;
      lambda = std::max(lambda / 10.0, 1e-12);
      rejections = 0;
      if (rel_change < opts.tolerance || current <= opts.absolute_tolerance) {
        report.converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (std::abs(rel_change) < opts.tolerance) {
        report.converged = true;  // at a minimum up to round-off
        break;
      }
      if (++rejections >= opts.max_rejections) break;
    }
  }
  for (int i = 1; i <= n_free; ++i) graph.nodes[i] = graph.nodes[i].renormalized();
  report.final_chi2 = chi2_of(graph.nodes);
  return report;
}

/// Pairs (i, j), j > i + min_separation_frames, whose positions lie within
/// radius_m. Stands in for appearance-based loop detection. A finite
/// max_separation_frames keeps only revisits with j - i <= max_separation.
inline std::vector<std::pair<int, int>> simulated_loop_detection(
    const Trajectory& ground_truth, double radius_m, int min_separation_frames,
    int max_separation_frames = std::numeric_limits<int>::max()) {
  if (!(radius_m > 0.0)) {
    throw InvalidArgument("simulated_loop_detection: radius must be positive");
  }
  std::vector<std::pair<int, int>> pairs;
  const int n = static_cast<int>(ground_truth.size());
  for (int i = 0; i < n; ++i) {
    const int last = static_cast<int>(
        std::min<long long>(n - 1, static_cast<long long>(i) + max_separation_frames));
    for (int j = i + min_separation_frames + 1; j <= last; ++j) {
      if ((ground_truth.poses[i].translation() - ground_truth.poses[j].translation())
              .norm() <= radius_m) {
        pairs.emplace_back(i, j);
      }
    }
  }
  return pairs;
}

/// Copy of `graph` with every edge covariance replaced by `cov`.
inline PoseGraph with_fixed_covariance(const PoseGraph& graph, const CovMatrix& cov) {
  PoseGraph out = graph;
  for (auto& e : out.edges) e.constraint.cov = cov;
  return out;
}

inline PoseGraph without_loops(const PoseGraph& graph) {
  PoseGraph out = graph;
  std::erase_if(out.edges,
                [](const GraphEdge& e) { return e.kind == EdgeKind::LoopClosure; });
  return out;
}

enum class GraphMode { Baseline, Fixed, Weighted };

inline CovMatrix mean_odometry_covariance(const PoseGraph& graph) {
  CovMatrix sum = CovMatrix::Zero();
  int n = 0;
  for (const auto& e : graph.edges) {
    if (e.kind == EdgeKind::Odometry) {
      sum += e.constraint.cov;
      ++n;
    }
  }
  if (n == 0) throw InvalidArgument("graph has no odometry edges");
  return sum / n;
}

/// Baseline drops the loops (integration only); Fixed gives every edge the
/// mean odometry covariance; Weighted keeps the reported covariances.
inline PoseGraph graph_for_mode(const PoseGraph& graph, GraphMode mode) {
  switch (mode) {
    case GraphMode::Baseline:
      return without_loops(graph);
    case GraphMode::Fixed:
      return with_fixed_covariance(graph, mean_odometry_covariance(graph));
    case GraphMode::Weighted:
      break;
  }
  return graph;
}

inline Trajectory node_trajectory(const PoseGraph& graph) {
  return Trajectory{graph.nodes, std::nullopt};
}

}  // namespace posecov
