#pragma once

// g2o-style text interchange: VERTEX_SE3:QUAT and EDGE_SE3:QUAT records.
//
// The 21 information entries are the upper triangle (row-major) of the
// inverse covariance expressed in this library's [rho; phi] left-perturbation
// coordinates. Records keep the parsed doubles verbatim, so parse followed by
// write reproduces every number at 17 significant digits.

#include <Eigen/Geometry>

#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "posecov/belief.hpp"
#include "posecov/errors.hpp"
#include "posecov/lie.hpp"
#include "posecov/pose_graph.hpp"
#include "posecov/trajectory.hpp"

namespace posecov {

/// Quaternion stored as (x, y, z, w), the g2o order.
struct G2oVertex {
  int id = 0;
  std::array<double, 3> t{};
  std::array<double, 4> q{0.0, 0.0, 0.0, 1.0};
};

struct G2oEdge {
  int from = 0;
  int to = 0;
  std::array<double, 3> t{};
  std::array<double, 4> q{0.0, 0.0, 0.0, 1.0};
  std::array<double, 21> info{};
};

struct G2oFile {
  std::vector<G2oVertex> vertices;
  std::vector<G2oEdge> edges;
};

namespace detail {

template <std::size_t N>
void read_numbers(std::istringstream& fields, std::array<double, N>& out,
                  const std::string& source, std::size_t line_no) {
  for (auto& v : out) {
    std::string tok;
    if (!(fields >> tok)) throw ParseError(source, line_no, "too few fields");
    const auto* end = tok.data() + tok.size();
    const auto res = std::from_chars(tok.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end) {
      throw ParseError(source, line_no, "not a number: '" + tok + "'");
    }
  }
}

inline int read_id(std::istringstream& fields, const std::string& source,
                   std::size_t line_no) {
  std::string tok;
  if (!(fields >> tok)) throw ParseError(source, line_no, "missing id");
  int id = 0;
  const auto* end = tok.data() + tok.size();
  const auto res = std::from_chars(tok.data(), end, id);
  if (res.ec != std::errc() || res.ptr != end || id < 0) {
    throw ParseError(source, line_no, "bad id: '" + tok + "'");
  }
  return id;
}

template <std::size_t N>
void write_numbers(std::ostream& out, const std::array<double, N>& values) {
  for (double v : values) out << ' ' << format_double(v);
}

inline Pose pose_from_tq(const std::array<double, 3>& t, const std::array<double, 4>& q) {
  Eigen::Quaterniond quat(q[3], q[0], q[1], q[2]);
  const double n = quat.norm();
  if (!std::isfinite(n) || n < 1e-12) throw DataError("g2o: degenerate quaternion");
  quat.coeffs() /= n;
  return Pose::trusted(quat.toRotationMatrix(), Vector3(t[0], t[1], t[2]));
}

inline void pose_to_tq(const Pose& p, std::array<double, 3>& t, std::array<double, 4>& q) {
  const Eigen::Quaterniond quat(p.rotation());
  for (int i = 0; i < 3; ++i) t[i] = p.translation()[i];
  q = {quat.x(), quat.y(), quat.z(), quat.w()};
}

}  // namespace detail

/// Blank lines and lines starting with '#' are skipped, as are record types
/// other than the two SE3:QUAT ones (FIX, parameters, ...).
inline G2oFile parse_g2o(std::istream& in, const std::string& source) {
  G2oFile file;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string tag;
    if (!(fields >> tag) || tag.front() == '#') continue;
    if (tag == "VERTEX_SE3:QUAT") {
      G2oVertex v;
      v.id = detail::read_id(fields, source, line_no);
      detail::read_numbers(fields, v.t, source, line_no);
      detail::read_numbers(fields, v.q, source, line_no);
      file.vertices.push_back(v);
    } else if (tag == "EDGE_SE3:QUAT") {
      G2oEdge e;
      e.from = detail::read_id(fields, source, line_no);
      e.to = detail::read_id(fields, source, line_no);
      detail::read_numbers(fields, e.t, source, line_no);
      detail::read_numbers(fields, e.q, source, line_no);
      detail::read_numbers(fields, e.info, source, line_no);
      file.edges.push_back(e);
    } else {
      continue;
    }
    std::string extra;
    if (fields >> extra) throw ParseError(source, line_no, "trailing field '" + extra + "'");
  }
  return file;
}

inline G2oFile read_g2o(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return parse_g2o(in, path);
}

inline void write_g2o(std::ostream& out, const G2oFile& file) {
  for (const auto& v : file.vertices) {
    out << "VERTEX_SE3:QUAT " << v.id;
    detail::write_numbers(out, v.t);
    detail::write_numbers(out, v.q);
    out << '\n';
  }
  for (const auto& e : file.edges) {
    out << "EDGE_SE3:QUAT " << e.from << ' ' << e.to;
    detail::write_numbers(out, e.t);
    detail::write_numbers(out, e.q);
    detail::write_numbers(out, e.info);
    out << '\n';
  }
}

inline void write_g2o(const std::string& path, const G2oFile& file) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_g2o(out, file);
}

inline G2oFile to_g2o(const PoseGraph& graph) {
  G2oFile file;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    G2oVertex v;
    v.id = static_cast<int>(i);
    detail::pose_to_tq(graph.nodes[i], v.t, v.q);
    file.vertices.push_back(v);
  }
  for (const auto& e : graph.edges) {
    G2oEdge out;
    out.from = e.from;
    out.to = e.to;
    detail::pose_to_tq(e.constraint.mean, out.t, out.q);
    const Matrix6 info = cholesky_with_jitter(e.constraint.cov).solve(Matrix6::Identity());
    std::size_t k = 0;
    for (int r = 0; r < 6; ++r) {
      for (int c = r; c < 6; ++c) out.info[k++] = 0.5 * (info(r, c) + info(c, r));
    }
    file.edges.push_back(out);
  }
  return file;
}

/// Vertex ids must be exactly 0..n-1 (in any order). An edge with
/// to == from + 1 is odometry; every other edge is a loop closure.
inline PoseGraph from_g2o(const G2oFile& file) {
  PoseGraph graph;
  graph.nodes.assign(file.vertices.size(), Pose::identity());
  std::vector<char> seen(file.vertices.size(), 0);
  for (const auto& v : file.vertices) {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= file.vertices.size() || seen[v.id]) {
      throw DataError("g2o: vertex ids must be unique and contiguous from 0");
    }
    seen[v.id] = 1;
    graph.nodes[v.id] = detail::pose_from_tq(v.t, v.q);
  }
  for (const auto& e : file.edges) {
    Matrix6 info;
    std::size_t k = 0;
    for (int r = 0; r < 6; ++r) {
      for (int c = r; c < 6; ++c) info(r, c) = info(c, r) = e.info[k++];
    }
    Eigen::LLT<Matrix6> llt(info);
    if (llt.info() != Eigen::Success) {
      throw DataError("g2o: edge " + std::to_string(e.from) + "->" + std::to_string(e.to) +
                      " information is not positive definite");
    }
    CovMatrix cov = llt.solve(Matrix6::Identity());
    cov = 0.5 * (cov + cov.transpose()).eval();
    graph.edges.push_back({e.from, e.to, {detail::pose_from_tq(e.t, e.q), cov},
                           e.to == e.from + 1 ? EdgeKind::Odometry : EdgeKind::LoopClosure});
  }
  try {
    validate_graph(graph);
  } catch (const InvalidArgument& err) {
    throw DataError(std::string("g2o: ") + err.what());
  }
  return graph;
}

}  // namespace posecov
