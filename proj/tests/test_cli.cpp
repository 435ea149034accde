#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "posecov/g2o.hpp"
#include "posecov/io.hpp"

using namespace posecov;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result posecov_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Rows of a CSV without its header, split on commas.
std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::string csv_header(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "posecov_test_cli" /
           ::testing::UnitTest::GetInstance()->current_test_info()->name();
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write_beliefs(const std::string& name, const std::vector<PoseBelief>& beliefs) {
    write_json_file(beliefs_to_json(beliefs), path(name));
  }
  void write_poses(const std::string& name, const std::vector<Pose>& poses) {
    write_kitti_poses(Trajectory{poses, std::nullopt}, path(name));
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(posecov_cli({}).code, cli::kUsage);
  EXPECT_EQ(posecov_cli({"bogus"}).code, cli::kUsage);
  EXPECT_EQ(posecov_cli({"compound", "--out", path("o")}).code, cli::kUsage);
  EXPECT_EQ(posecov_cli({"compound", "--beliefs", path("missing.json"), "--out", path("o")}).code,
            cli::kUsage);
  EXPECT_EQ(posecov_cli({"simulate", "--order", "3", "--out", path("o")}).code, cli::kUsage);
  EXPECT_EQ(posecov_cli({"calibrate", "--k-sigma", "-1", "--out", path("o")}).code,
            cli::kUsage);
  EXPECT_EQ(posecov_cli({"--help"}).code, cli::kOk);
}

TEST_F(Cli, SimulateWritesRunAndResolvedConfig) {
  const Result r = posecov_cli({"simulate", "--shape", "square", "--steps", "40", "--seed", "3",
                                "--out", path("sim")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const SimulatedRun run = run_from_json(read_json_file(path("sim/run.json")), "run");
  EXPECT_EQ(run.noisy_beliefs.size(), 40u);
  EXPECT_EQ(run.seed, 3u);
  EXPECT_EQ(read_kitti_poses(path("sim/ground_truth.txt")).size(), 41u);
  EXPECT_EQ(csv_header(path("sim/steps.csv")),
            "step,spike,sigma_rho_x_m,sigma_rho_y_m,sigma_rho_z_m,sigma_phi_x_rad,"
            "sigma_phi_y_rad,sigma_phi_z_rad");

  const Json config = read_json_file(path("sim/config.json"));
  EXPECT_EQ(config["command"], "simulate");
  EXPECT_EQ(config["options"]["shape"], "square");
  EXPECT_EQ(config["options"]["steps"], "40");
  EXPECT_EQ(config["options"]["base-sigma"].size(), 6u);
}

TEST_F(Cli, RerunReproducesByteIdenticalOutputs) {
  ASSERT_EQ(posecov_cli({"simulate", "--steps", "60", "--seed", "8", "--out", path("a")}).code,
            cli::kOk);
  ASSERT_EQ(posecov_cli({"rerun", "--config", path("a/config.json"), "--out", path("b")}).code,
            cli::kOk);
  EXPECT_EQ(slurp(path("a/steps.csv")), slurp(path("b/steps.csv")));
  EXPECT_EQ(slurp(path("a/run.json")), slurp(path("b/run.json")));

  ASSERT_EQ(posecov_cli({"loss", "--beliefs", path("a/run.json"), "--window", "5", "--out",
                         path("la")})
                .code,
            cli::kOk);
  ASSERT_EQ(posecov_cli({"rerun", "--config", path("la/config.json"), "--out", path("lb")}).code,
            cli::kOk);
  EXPECT_EQ(slurp(path("la/loss_steps.csv")), slurp(path("lb/loss_steps.csv")));
  EXPECT_EQ(slurp(path("la/loss_by_length.csv")), slurp(path("lb/loss_by_length.csv")));
}

TEST_F(Cli, CompoundOfUnitBeliefsHasInverseDeterminantKToMinusSix) {
  write_beliefs("unit.json",
                std::vector<PoseBelief>(5, PoseBelief{Pose::identity(), CovMatrix::Identity()}));
  const Result r =
      posecov_cli({"compound", "--beliefs", path("unit.json"), "--order", "2", "--out", path("c")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const auto rows = csv_rows(path("c/compound.csv"));
  ASSERT_EQ(rows.size(), 5u);
  for (int k = 1; k <= 5; ++k) {
    EXPECT_NEAR(std::stod(rows[k - 1][6]), std::pow(k, -6.0), 1e-12 * std::pow(k, -6.0));
  }
}

TEST_F(Cli, CompoundOfASingleBeliefEchoesIt) {
  CovMatrix cov = 0.01 * CovMatrix::Identity();
  cov(0, 3) = cov(3, 0) = 0.002;
  const PoseBelief b{exp_map(Twist(Vector3(1, 2, 3), Vector3(0.1, 0.2, 0.3))), cov};
  write_beliefs("one.json", {b});
  ASSERT_EQ(posecov_cli({"compound", "--beliefs", path("one.json"), "--out", path("c")}).code,
            cli::kOk);
  const auto back = beliefs_from_json(read_json_file(path("c/compounds.json")), "c");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].cov, cov);
  EXPECT_LT((back[0].mean.matrix() - b.mean.matrix()).norm(), 1e-15);
}

TEST_F(Cli, CompoundDeterminantDropsAtASpike) {
  std::vector<PoseBelief> beliefs;
  for (int k = 0; k < 12; ++k) {
    beliefs.push_back({Pose::trusted(Matrix3::Identity(), Vector3(1, 0, 0)),
                       1e-4 * CovMatrix::Identity() * (k == 6 ? 100.0 : 1.0)});
  }
  write_beliefs("spike.json", beliefs);
  ASSERT_EQ(posecov_cli({"compound", "--beliefs", path("spike.json"), "--out", path("c")}).code,
            cli::kOk);
  const auto rows = csv_rows(path("c/compound.csv"));
  double largest_other = 0.0, at_spike = 0.0;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const double drop = std::stod(rows[k - 1][6]) / std::stod(rows[k][6]);
    (k == 6 ? at_spike : largest_other) = std::max(k == 6 ? at_spike : largest_other, drop);
  }
  EXPECT_GT(at_spike, 10.0 * largest_other);
}

TEST_F(Cli, LossOfPerfectEstimatesHasZeroQuadratic) {
  std::vector<Pose> inc(8, Pose::trusted(so3_exp(Vector3(0, 0, 0.1)), Vector3(1, 0, 0)));
  std::vector<PoseBelief> beliefs;
  for (const auto& p : inc) beliefs.push_back({p, 0.01 * CovMatrix::Identity()});
  write_beliefs("b.json", beliefs);
  write_poses("gt.txt", integrate(inc).poses);
  const Result r = posecov_cli({"loss", "--beliefs", path("b.json"), "--gt", path("gt.txt"),
                                "--window", "4", "--out", path("l")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(csv_header(path("l/loss_steps.csv")),
            "length_steps,nll_quadratic,nll_logdet,nll_total,mse_m2_rad2,"
            "nll_quadratic_normalized,mse_normalized");
  const auto rows = csv_rows(path("l/loss_steps.csv"));
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& row : rows) {
    EXPECT_LT(std::abs(std::stod(row[1])), 1e-20);
    EXPECT_LT(std::abs(std::stod(row[4])), 1e-20);
  }
  const Json report = read_json_file(path("l/loss.json"));
  // Composed windows of length 2..4 at every start offset.
  EXPECT_EQ(report["n_windows"], 7u + 6u + 5u);
}

TEST_F(Cli, LossNeedsGroundTruth) {
  write_beliefs("b.json", std::vector<PoseBelief>(3, PoseBelief{Pose::identity(),
                                                                CovMatrix::Identity()}));
  EXPECT_EQ(posecov_cli({"loss", "--beliefs", path("b.json"), "--out", path("l")}).code,
            cli::kDataError);
  write_poses("short.txt", {Pose::identity(), Pose::identity()});
  EXPECT_EQ(posecov_cli({"loss", "--beliefs", path("b.json"), "--gt", path("short.txt"), "--out",
                         path("l")})
                .code,
            cli::kDataError);
}

TEST_F(Cli, EvaluateSelfScaledAndAligned) {
  std::vector<Pose> gt, scaled;
  for (int k = 0; k <= 300; ++k) {
    gt.push_back(Pose::trusted(Matrix3::Identity(), Vector3(k, 0, 0)));
    scaled.push_back(Pose::trusted(Matrix3::Identity(), Vector3(1.05 * k, 0, 0)));
  }
  write_poses("gt.txt", gt);
  write_poses("scaled.txt", scaled);

  ASSERT_EQ(posecov_cli({"evaluate", "--estimate", path("gt.txt"), "--gt", path("gt.txt"),
                         "--out", path("self")})
                .code,
            cli::kOk);
  EXPECT_EQ(read_json_file(path("self/evaluate.json"))["unaligned"]["t_percent"], 0.0);

  // Collinear points make the similarity fit rank deficient.
  EXPECT_EQ(posecov_cli({"evaluate", "--estimate", path("scaled.txt"), "--gt", path("gt.txt"),
                         "--align", "sim3", "--out", path("bad")})
                .code,
            cli::kNumericalFailure);

  std::vector<Pose> gt_bent = gt, scaled_bent = scaled;
  gt_bent.push_back(Pose::trusted(Matrix3::Identity(), Vector3(300, 1, 0)));
  scaled_bent.push_back(Pose::trusted(Matrix3::Identity(), Vector3(315, 1.05, 0)));
  write_poses("gt_bent.txt", gt_bent);
  write_poses("scaled_bent.txt", scaled_bent);
  const Result r = posecov_cli({"evaluate", "--estimate", path("scaled_bent.txt"), "--gt",
                                path("gt_bent.txt"), "--align", "sim3", "--out", path("s")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const Json report = read_json_file(path("s/evaluate.json"));
  EXPECT_NEAR(report["unaligned"]["t_percent"].get<double>(), 5.0, 0.1);
  EXPECT_NEAR(report["aligned"]["scale"].get<double>(), 1.0 / 1.05, 1e-9);
  EXPECT_LT(report["aligned"]["t_percent"].get<double>(), 1e-6);
  EXPECT_EQ(csv_header(path("s/rel_errors.csv")), "length_m,t_percent,r_deg_per_m");

  // A rigid alignment leaves the relative errors unchanged.
  ASSERT_EQ(posecov_cli({"evaluate", "--estimate", path("scaled_bent.txt"), "--gt",
                         path("gt_bent.txt"), "--align", "se3", "--out", path("r")})
                .code,
            cli::kOk);
  const Json rigid = read_json_file(path("r/evaluate.json"));
  EXPECT_NEAR(rigid["aligned"]["t_percent"].get<double>(),
              rigid["unaligned"]["t_percent"].get<double>(), 1e-9);
}

TEST_F(Cli, CalibrateWritesTableRows) {
  ASSERT_EQ(posecov_cli({"simulate", "--steps", "2000", "--seed", "4", "--out", path("sim")}).code,
            cli::kOk);
  const Result r = posecov_cli({"calibrate", "--beliefs", path("sim/run.json"), "--k-sigma", "2",
                                "--out", path("cal")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(csv_header(path("cal/calibration.csv")), "axis,ui_unit,or_percent,mean_ui");
  const auto rows = csv_rows(path("cal/calibration.csv"));
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0][0], "rho_x");
  EXPECT_EQ(rows[5][1], "rad");
  // 2000 samples at k = 2: 4.55% expected, binomial sd 0.47%.
  for (const auto& row : rows) EXPECT_NEAR(std::stod(row[2]), 4.55, 2.0);
  const Json report = read_json_file(path("cal/calibration.json"));
  EXPECT_NEAR(report["expected_or_percent"].get<double>(), 4.550026, 1e-5);
}

TEST_F(Cli, GraphBaselineIsIntegrationOnly) {
  ASSERT_EQ(posecov_cli({"simulate", "--steps", "5", "--laps", "20", "--seed", "2", "--out",
                         path("sim")})
                .code,
            cli::kOk);
  const Result r = posecov_cli({"graph", "--beliefs", path("sim/run.json"), "--mode",
                                "baseline", "--loop-max-sep", "6", "--out", path("g")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(slurp(path("g/pre.txt")), slurp(path("g/post.txt")));
  // The run container stores means as twists, so integration matches the
  // simulator's odometry up to round-off.
  const Trajectory post = read_kitti_poses(path("g/post.txt"));
  const Trajectory odo = read_kitti_poses(path("sim/odometry.txt"));
  ASSERT_EQ(post.size(), odo.size());
  for (std::size_t i = 0; i < post.size(); ++i) {
    EXPECT_LT((post.poses[i].matrix() - odo.poses[i].matrix()).norm(), 1e-12) << i;
  }
  const Json report = read_json_file(path("g/graph.json"));
  EXPECT_EQ(report["iterations"], 0);
  EXPECT_GT(report["loop_edges_available"].get<int>(), 0);
  EXPECT_EQ(csv_header(path("g/rel_errors.csv")),
            "trajectory,length_m,segments,t_percent,r_deg_per_m");
}

TEST_F(Cli, GraphModesOrderOnASpikyLoopRun) {
  // 100 laps of a 5-step circle with one-lap loop closures whose true
  // covariance is 100x the mean odometry covariance.
  ASSERT_EQ(posecov_cli({"simulate", "--steps", "5", "--laps", "100", "--seed", "1", "--out",
                         path("sim")})
                .code,
            cli::kOk);
  std::map<std::string, double> rmse;
  for (const std::string mode : {"baseline", "fixed", "weighted"}) {
    const Result r = posecov_cli({"graph", "--beliefs", path("sim/run.json"), "--mode", mode,
                                  "--loop-radius", "0.3", "--loop-min-sep", "2",
                                  "--loop-max-sep", "6", "--loop-cov-scale", "100", "--seed",
                                  "1001", "--out", path(mode)});
    ASSERT_EQ(r.code, cli::kOk) << mode << ": " << r.err;
    rmse[mode] = read_json_file(path(mode + "/graph.json"))["rmse_post_m"].get<double>();
  }
  EXPECT_LT(rmse["weighted"], rmse["fixed"]);
  EXPECT_GT(rmse["fixed"], rmse["baseline"]);
}

TEST_F(Cli, GraphFromExportedG2oMatchesBeliefInput) {
  ASSERT_EQ(posecov_cli({"simulate", "--steps", "5", "--laps", "10", "--seed", "6", "--out",
                         path("sim")})
                .code,
            cli::kOk);
  ASSERT_EQ(posecov_cli({"graph", "--beliefs", path("sim/run.json"), "--loop-max-sep", "6",
                         "--export-g2o", path("graph.g2o"), "--out", path("a")})
                .code,
            cli::kOk);
  ASSERT_EQ(posecov_cli({"graph", "--g2o", path("graph.g2o"), "--gt",
                         path("sim/ground_truth.txt"), "--out", path("b")})
                .code,
            cli::kOk);
  const Json a = read_json_file(path("a/graph.json"));
  const Json b = read_json_file(path("b/graph.json"));
  EXPECT_EQ(a["edges"], b["edges"]);
  EXPECT_NEAR(a["rmse_post_m"].get<double>(), b["rmse_post_m"].get<double>(), 1e-9);
}

TEST_F(Cli, DataAndNumericalErrorsHaveTheirOwnCodes) {
  std::ofstream(path("broken.json")) << "{ not json";
  EXPECT_EQ(posecov_cli({"compound", "--beliefs", path("broken.json"), "--out", path("o")}).code,
            cli::kDataError);

  std::ofstream(path("disconnected.g2o")) << "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n"
                                             "VERTEX_SE3:QUAT 1 1 0 0 0 0 0 1\n"
                                             "VERTEX_SE3:QUAT 2 2 0 0 0 0 0 1\n"
                                             "EDGE_SE3:QUAT 0 1 1 0 0 0 0 0 1 "
                                             "1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n";
  const Result r = posecov_cli({"graph", "--g2o", path("disconnected.g2o"), "--out", path("o")});
  EXPECT_EQ(r.code, cli::kNumericalFailure);
  EXPECT_NE(r.err.find("disconnected"), std::string::npos);

  std::ofstream(path("singular.g2o")) << "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n"
                                         "VERTEX_SE3:QUAT 1 1 0 0 0 0 0 1\n"
                                         "EDGE_SE3:QUAT 0 1 1 0 0 0 0 0 1 "
                                         "0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0 0\n";
  EXPECT_EQ(posecov_cli({"graph", "--g2o", path("singular.g2o"), "--out", path("o")}).code,
            cli::kDataError);

  std::ofstream(path("bad_line.g2o")) << "VERTEX_SE3:QUAT 0 0 0 zero 0 0 0 1\n";
  const Result parse = posecov_cli({"graph", "--g2o", path("bad_line.g2o"), "--out", path("o")});
  EXPECT_EQ(parse.code, cli::kDataError);
  EXPECT_NE(parse.err.find("bad_line.g2o:1"), std::string::npos);
}
