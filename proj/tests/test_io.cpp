#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "posecov/g2o.hpp"
#include "posecov/io.hpp"

using namespace posecov;

namespace {

double pose_distance(const Pose& a, const Pose& b) {
  return (a.matrix() - b.matrix()).norm();
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "posecov_test_io";
  std::filesystem::create_directories(dir);
  return dir / name;
}

PoseGraph small_graph() {
  std::vector<PoseBelief> odo;
  for (int k = 0; k < 6; ++k) {
    CovMatrix cov = CovMatrix::Identity() * 1e-3 * (k + 1);
    cov(0, 5) = cov(5, 0) = 2e-4;
    odo.push_back({exp_map(Twist(Vector3(1, 0.1 * k, 0), Vector3(0, 0.05, 0.3))), cov});
  }
  const std::vector<GraphEdge> loops = {
      {0, 5, {exp_map(Twist(Vector3(-0.2, 0.4, 0.1), Vector3(0.1, 0, -0.2))),
              4e-2 * CovMatrix::Identity()},
       EdgeKind::LoopClosure}};
  return build_graph(odo, loops);
}

}  // namespace

TEST(BeliefJson, DiagonalUsesTheTwelveNumberLayout) {
  Vector6 var;
  var << 1e-2, 2e-2, 3e-2, 1e-4, 2e-4, 0.0;
  const PoseBelief b{exp_map(Twist(Vector3(1, 2, 3), Vector3(0.1, -0.2, 0.3))),
                     var.asDiagonal()};
  const Json j = belief_to_json(b);
  ASSERT_TRUE(j.is_array());
  ASSERT_EQ(j.size(), 12u);
  EXPECT_NEAR(j[0].get<double>(), log_map(b.mean)[0], 0.0);
  EXPECT_DOUBLE_EQ(j[6].get<double>(), std::log(1e-2));
  EXPECT_TRUE(j[11].is_null());

  const PoseBelief back = belief_from_json(j, "test");
  EXPECT_LT(pose_distance(back.mean, b.mean), 1e-14);
  EXPECT_LT((back.cov - b.cov).norm(), 1e-17);
  EXPECT_EQ(back.cov(5, 5), 0.0);
}

TEST(BeliefJson, DenseCovarianceUsesPoseAndCov) {
  CovMatrix cov = CovMatrix::Identity();
  cov(1, 4) = cov(4, 1) = 0.3;
  const PoseBelief b{exp_map(Twist(Vector3(1, 0, 0), Vector3(0, 0, 1))), cov};
  const Json j = belief_to_json(b);
  ASSERT_TRUE(j.is_object());
  const PoseBelief back = belief_from_json(j, "test");
  EXPECT_EQ(back.cov, cov);
  EXPECT_LT(pose_distance(back.mean, b.mean), 1e-15);
}

TEST(BeliefJson, RejectsMalformedBeliefs) {
  EXPECT_THROW(belief_from_json(Json::array({1, 2, 3}), "t"), DataError);
  Json overflow = Json::array();
  for (int i = 0; i < 6; ++i) overflow.push_back(0.0);
  for (int i = 0; i < 6; ++i) overflow.push_back(701.0);
  EXPECT_THROW(belief_from_json(overflow, "t"), DataError);
  Json text = overflow;
  text[0] = "x";
  EXPECT_THROW(belief_from_json(text, "t"), DataError);
  Json bad_cov{{"pose", pose_to_json(Pose::identity())}, {"cov", Json::array()}};
  for (int i = 0; i < 36; ++i) bad_cov["cov"].push_back(i % 7 == 0 ? -1.0 : 0.0);
  EXPECT_THROW(belief_from_json(bad_cov, "t"), DataError);
  EXPECT_THROW(belief_from_json(Json("nope"), "t"), DataError);
}

TEST(BeliefJson, ContainerRoundTripThroughFile) {
  std::vector<PoseBelief> beliefs;
  for (int k = 0; k < 5; ++k) {
    beliefs.push_back({exp_map(Twist(Vector3(k, 0, 0), Vector3(0, 0, 0.1 * k))),
                       (k + 1) * 1e-3 * CovMatrix::Identity()});
  }
  const auto path = temp_path("beliefs.json").string();
  write_json_file(beliefs_to_json(beliefs), path);
  const Json j = read_json_file(path);
  EXPECT_EQ(j["format"], kBeliefsFormat);
  const auto back = beliefs_from_json(j, path);
  ASSERT_EQ(back.size(), beliefs.size());
  for (std::size_t k = 0; k < back.size(); ++k) {
    EXPECT_LT(pose_distance(back[k].mean, beliefs[k].mean), 1e-14);
    EXPECT_NEAR(back[k].cov(3, 3), beliefs[k].cov(3, 3), 1e-15 * beliefs[k].cov(3, 3));
  }
}

TEST(BeliefJson, FileErrors) {
  EXPECT_THROW(read_json_file(temp_path("missing.json").string()), DataError);
  const auto path = temp_path("broken.json").string();
  std::ofstream(path) << "{\"beliefs\": [";
  EXPECT_THROW(read_json_file(path), ParseError);
  EXPECT_THROW(beliefs_from_json(Json::object(), "t"), DataError);
}

TEST(RunJson, RoundTrip) {
  SimulatedRun run = corrupt(generate_path(PathShape::Circle, 20, 1.0), [] {
    NoiseProfile p;
    p.base_sigma = Vector6::Constant(0.01);
    p.spike_probability = 0.2;
    p.spike_multiplier = 4.0;
    p.drift_bias = Twist(Vector3(0.001, 0, 0), Vector3::Zero());
    return p;
  }(), 99);
  const SimulatedRun back = run_from_json(run_to_json(run), "run");
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.spikes, run.spikes);
  EXPECT_EQ(back.profile.base_sigma, run.profile.base_sigma);
  EXPECT_EQ(back.profile.spike_multiplier, 4.0);
  EXPECT_EQ(back.profile.drift_bias.vec(), run.profile.drift_bias.vec());
  ASSERT_EQ(back.gt_increments.size(), run.gt_increments.size());
  for (std::size_t k = 0; k < run.gt_increments.size(); ++k) {
    EXPECT_LT(pose_distance(back.gt_increments[k], run.gt_increments[k]), 1e-12);
    EXPECT_LT(pose_distance(back.noisy_beliefs[k].mean, run.noisy_beliefs[k].mean), 1e-14);
  }
}

TEST(RunJson, RejectsInconsistentContainers) {
  SimulatedRun run = corrupt(generate_path(PathShape::Straight, 4, 1.0), NoiseProfile{}, 1);
  Json j = run_to_json(run);
  Json wrong_format = j;
  wrong_format["format"] = kBeliefsFormat;
  EXPECT_THROW(run_from_json(wrong_format, "r"), DataError);
  Json short_gt = j;
  short_gt["ground_truth"].erase(short_gt["ground_truth"].size() - 1);
  EXPECT_THROW(run_from_json(short_gt, "r"), DataError);
  Json bad_line = j;
  bad_line["ground_truth"][2] = "1 2 3";
  EXPECT_THROW(run_from_json(bad_line, "r"), ParseError);
}

TEST(G2o, ParsesVerticesEdgesAndSkipsOtherRecords) {
  std::istringstream in(
      "# comment\n"
      "\n"
      "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n"
      "VERTEX_SE3:QUAT 1 1 0 0 0 0 0.7071067811865476 0.7071067811865476\n"
      "FIX 0\n"
      "EDGE_SE3:QUAT 0 1 1 0 0 0 0 0.7071067811865476 0.7071067811865476 "
      "1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n");
  const G2oFile f = parse_g2o(in, "mem");
  ASSERT_EQ(f.vertices.size(), 2u);
  ASSERT_EQ(f.edges.size(), 1u);
  const PoseGraph g = from_g2o(f);
  EXPECT_EQ(g.edges[0].kind, EdgeKind::Odometry);
  EXPECT_LT((g.edges[0].constraint.cov - CovMatrix::Identity()).norm(), 1e-15);
  // Quarter turn about z.
  EXPECT_NEAR(g.nodes[1].rotation()(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(g.nodes[1].translation().x(), 1.0, 0.0);
}

TEST(G2o, TextRoundTripIsExact) {
  std::ostringstream first;
  write_g2o(first, to_g2o(small_graph()));
  std::istringstream in(first.str());
  std::ostringstream second;
  write_g2o(second, parse_g2o(in, "mem"));
  EXPECT_EQ(first.str(), second.str());
}

TEST(G2o, GraphRoundTrip) {
  const PoseGraph g = small_graph();
  const auto path = temp_path("graph.g2o").string();
  write_g2o(path, to_g2o(g));
  const PoseGraph back = from_g2o(read_g2o(path));
  ASSERT_EQ(back.nodes.size(), g.nodes.size());
  ASSERT_EQ(back.edges.size(), g.edges.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    EXPECT_LT(pose_distance(back.nodes[i], g.nodes[i]), 1e-14);
  }
  for (std::size_t k = 0; k < g.edges.size(); ++k) {
    EXPECT_EQ(back.edges[k].kind, g.edges[k].kind);
    EXPECT_LT((back.edges[k].constraint.cov - g.edges[k].constraint.cov).norm(),
              1e-12 * g.edges[k].constraint.cov.norm());
  }
  EXPECT_NEAR(chi2(back), chi2(g), 1e-9 * (1.0 + chi2(g)));
}

TEST(G2o, ParseErrorsCarryLineNumbers) {
  std::istringstream trailing("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 0 0 0 0 0 0 1 9\n");
  try {
    parse_g2o(trailing, "f.g2o");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::istringstream short_line("EDGE_SE3:QUAT 0 1 0 0 0\n");
  EXPECT_THROW(parse_g2o(short_line, "f"), ParseError);
  std::istringstream bad_number("VERTEX_SE3:QUAT 0 0 0 zero 0 0 0 1\n");
  EXPECT_THROW(parse_g2o(bad_number, "f"), ParseError);
  std::istringstream bad_id("VERTEX_SE3:QUAT -1 0 0 0 0 0 0 1\n");
  EXPECT_THROW(parse_g2o(bad_id, "f"), ParseError);
}

TEST(G2o, SemanticErrorsAreDataErrors) {
  G2oFile f;
  f.vertices = {{0, {0, 0, 0}, {0, 0, 0, 1}}, {2, {1, 0, 0}, {0, 0, 0, 1}}};
  EXPECT_THROW(from_g2o(f), DataError);
  f.vertices[1].id = 1;
  G2oEdge e;
  e.from = 0;
  e.to = 1;
  EXPECT_THROW(from_g2o(G2oFile{f.vertices, {e}}), DataError);  // zero information
  std::size_t k = 0;
  for (int r = 0; r < 6; ++r) {
    for (int c = r; c < 6; ++c) e.info[k++] = r == c ? 1.0 : 0.0;
  }
  e.to = 5;
  EXPECT_THROW(from_g2o(G2oFile{f.vertices, {e}}), DataError);
  e.to = 1;
  e.q = {0, 0, 0, 0};
  EXPECT_THROW(from_g2o(G2oFile{f.vertices, {e}}), DataError);
}
