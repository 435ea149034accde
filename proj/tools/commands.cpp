#include "commands.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "posecov/belief.hpp"
#include "posecov/calibration.hpp"
#include "posecov/g2o.hpp"
#include "posecov/io.hpp"
#include "posecov/loss.hpp"
#include "posecov/pose_graph.hpp"
#include "posecov/simulation.hpp"
#include "posecov/trajectory.hpp"

namespace posecov::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kConfigFormat = "posecov.config/1";
constexpr const char* kConfigFile = "config.json";
// Options in this group name input files; the saved config stores them as
// absolute paths so a rerun works from any directory.
constexpr const char* kInputGroup = "Inputs";

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void csv_row(std::ostream& out, std::initializer_list<double> values) {
  bool first = true;
  for (double v : values) {
    if (!first) out << ',';
    out << format_double(v);
    first = false;
  }
  out << '\n';
}

std::string joined(const Vector6& v) {
  std::string s;
  for (int i = 0; i < 6; ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

CompoundOrder order_from(int order) {
  return order == 2 ? CompoundOrder::SecondOrder : CompoundOrder::FourthOrder;
}

// ---------------------------------------------------------------------------
// Inputs shared by several commands.

struct BeliefInput {
  std::vector<PoseBelief> beliefs;
  std::optional<Trajectory> ground_truth;  // present for run containers
};

BeliefInput load_beliefs(const std::string& path) {
  const Json j = read_json_file(path);
  BeliefInput in;
  in.beliefs = beliefs_from_json(j, path);
  if (in.beliefs.empty()) throw DataError(path + ": no beliefs");
  if (j.contains("ground_truth")) in.ground_truth = ground_truth_from_json(j, path);
  return in;
}

Trajectory resolve_ground_truth(const std::string& gt_path, const BeliefInput& in) {
  if (!gt_path.empty()) {
    Trajectory gt = read_kitti_poses(gt_path);
    validate_trajectory(gt);
    return gt;
  }
  if (in.ground_truth) return *in.ground_truth;
  throw DataError("no ground truth: pass --gt or a simulated-run container");
}

std::vector<Pose> increments_matching(const Trajectory& gt, std::size_t n_beliefs) {
  std::vector<Pose> inc = difference(gt);
  if (inc.size() != n_beliefs) {
    throw DataError("ground truth has " + std::to_string(gt.size()) + " poses for " +
                    std::to_string(n_beliefs) + " beliefs (expected n + 1)");
  }
  return inc;
}

Trajectory integrate_means(std::span<const PoseBelief> beliefs) {
  std::vector<Pose> means;
  means.reserve(beliefs.size());
  for (const auto& b : beliefs) means.push_back(b.mean);
  return integrate(means);
}

Json rel_error_summary(const RelErrorReport& r) {
  Json per_length = Json::array();
  for (const auto& l : r.per_length) {
    per_length.push_back({{"length_m", l.length_m},
                          {"segments", l.count},
                          {"t_percent", l.translation_percent},
                          {"r_deg_per_m", l.rotation_deg_per_m}});
  }
  return {{"t_percent", r.mean_translation_percent},
          {"r_deg_per_m", r.mean_rotation_deg_per_m},
          {"r_deg_per_100m", r.mean_rotation_deg_per_100m},
          {"segments", r.per_segment.size()},
          {"too_short", r.too_short},
          {"per_length", per_length}};
}

// ---------------------------------------------------------------------------
// Resolved configuration.

std::vector<std::string> default_values(const CLI::Option& opt) {
  std::string s = opt.get_default_str();
  if (s.empty()) return {};
  if (s.front() != '[') return {s};
  s = s.substr(1, s.size() - 2);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    out.push_back(s.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

Json resolved_config(const CLI::App& sub) {
  Json options = Json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help") continue;
    if (opt->get_type_size() == 0) {
      options[name] = opt->count() > 0;
      continue;
    }
    std::vector<std::string> values = opt->results();
    if (values.empty()) values = default_values(*opt);
    if (values.empty()) continue;
    if (opt->get_group() == kInputGroup) {
      for (auto& v : values) {
        if (!v.empty()) v = fs::absolute(v).lexically_normal().string();
      }
    }
    if (values.size() == 1) {
      options[name] = values.front();
    } else {
      options[name] = values;
    }
  }
  return {{"format", kConfigFormat}, {"command", sub.get_name()}, {"options", options}};
}

std::vector<std::string> args_from_config(const Json& config, const std::string& source,
                                          const std::string& out_override) {
  if (config.value("format", std::string()) != kConfigFormat ||
      !config.contains("command") || !config.contains("options")) {
    throw DataError(source + ": not a posecov config");
  }
  std::vector<std::string> args = {config["command"].get<std::string>()};
  for (const auto& [name, value] : config["options"].items()) {
    if (name == "out" && !out_override.empty()) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back("--" + name);
    } else if (value.is_array()) {
      args.push_back("--" + name);
      for (const auto& v : value) args.push_back(v.get<std::string>());
    } else {
      args.push_back("--" + name);
      args.push_back(value.get<std::string>());
    }
  }
  if (!out_override.empty()) {
    args.push_back("--out");
    args.push_back(out_override);
  }
  return args;
}

// ---------------------------------------------------------------------------
// Commands. Each reads its parsed options, writes into `dir` and prints a
// short summary.

struct SimulateOptions {
  std::string shape = "circle";
  int steps = 500;
  int laps = 1;
  double step_m = 1.0;
  std::vector<double> base_sigma = {0.01, 0.01, 0.01, 0.002, 0.002, 0.002};
  double spike_probability = 0.05;
  double spike_multiplier = 10.0;
  std::vector<double> drift_bias = {0, 0, 0, 0, 0, 0};
  std::uint64_t seed = 0;
  std::uint64_t path_seed = 0;
};

PathShape shape_from(const std::string& s) {
  static const std::map<std::string, PathShape> shapes = {
      {"straight", PathShape::Straight},
      {"square", PathShape::Square},
      {"circle", PathShape::Circle},
      {"random-walk", PathShape::RandomWalk}};
  return shapes.at(s);
}

int cmd_simulate(const SimulateOptions& o, const fs::path& dir, std::ostream& out) {
  NoiseProfile profile;
  profile.base_sigma = Eigen::Map<const Vector6>(o.base_sigma.data());
  profile.spike_probability = o.spike_probability;
  profile.spike_multiplier = o.spike_multiplier;
  profile.drift_bias = Twist(Vector6(Eigen::Map<const Vector6>(o.drift_bias.data())));

  const auto lap = generate_path(shape_from(o.shape), o.steps, o.step_m, o.path_seed);
  std::vector<Pose> gt;
  for (int l = 0; l < o.laps; ++l) gt.insert(gt.end(), lap.begin(), lap.end());
  const SimulatedRun run = corrupt(gt, profile, o.seed);

  write_json_file(run_to_json(run), (dir / "run.json").string());
  write_kitti_poses(integrate(run.gt_increments), (dir / "ground_truth.txt").string());
  write_kitti_poses(integrate_means(run.noisy_beliefs), (dir / "odometry.txt").string());

  auto csv = open_output(dir / "steps.csv");
  csv << "step,spike,sigma_rho_x_m,sigma_rho_y_m,sigma_rho_z_m,"
         "sigma_phi_x_rad,sigma_phi_y_rad,sigma_phi_z_rad\n";
  std::size_t spikes = 0;
  for (std::size_t k = 0; k < run.noisy_beliefs.size(); ++k) {
    const Vector6 s = run.noisy_beliefs[k].cov.diagonal().cwiseSqrt();
    csv << k << ',' << (run.spikes[k] ? 1 : 0) << ',' << joined(s) << '\n';
    spikes += run.spikes[k];
  }
  out << "simulated " << run.noisy_beliefs.size() << " steps (" << spikes
      << " spikes) -> " << (dir / "run.json").string() << '\n';
  return kOk;
}

struct CompoundOptions {
  std::string beliefs;
  int order = 4;
};

int cmd_compound(const CompoundOptions& o, const fs::path& dir, std::ostream& out) {
  const BeliefInput in = load_beliefs(o.beliefs);
  const auto chain = compound_chain(in.beliefs, order_from(o.order));

  auto csv = open_output(dir / "compound.csv");
  csv << "step,x_m,y_m,z_m,trace_cov_m2_rad2,det_cov_m6_rad6,det_inv_cov_m-6_rad-6,"
         "log_det_inv_cov\n";
  for (std::size_t k = 0; k < chain.size(); ++k) {
    const Vector3 t = chain[k].mean.translation();
    const double det = chain[k].cov.determinant();
    const double inf = std::numeric_limits<double>::infinity();
    csv_row(csv, {static_cast<double>(k + 1), t.x(), t.y(), t.z(), chain[k].cov.trace(), det,
                  det > 0.0 ? 1.0 / det : inf, det > 0.0 ? -std::log(det) : inf});
  }
  write_json_file(beliefs_to_json(chain), (dir / "compounds.json").string());
  out << "compounded " << chain.size() << " beliefs (order " << o.order << ") -> "
      << (dir / "compound.csv").string() << '\n';
  return kOk;
}

struct LossOptions {
  std::string beliefs;
  std::string gt;
  int window = 10;
  int stride = 1;
  int order = 4;
  int start = 0;
};

int cmd_loss(const LossOptions& o, const fs::path& dir, std::ostream& out) {
  const BeliefInput in = load_beliefs(o.beliefs);
  const Trajectory gt = resolve_ground_truth(o.gt, in);
  const auto gt_inc = increments_matching(gt, in.beliefs.size());
  const auto order = order_from(o.order);
  if (static_cast<std::size_t>(o.start) >= in.beliefs.size()) {
    throw DataError("--start " + std::to_string(o.start) + " is past the last belief");
  }

  const std::span<const PoseBelief> beliefs(in.beliefs);
  const std::span<const Pose> gts(gt_inc);
  const std::size_t len =
      std::min<std::size_t>(static_cast<std::size_t>(o.window), beliefs.size() - o.start);
  const auto prefix =
      prefix_window_terms(beliefs.subspan(o.start, len), gts.subspan(o.start, len), len, order);

  // Normalized columns divide by the single-step value, the layout of the
  // loss-versus-window plots.
  const double nll0 = prefix.front().quadratic;
  const double mse0 = prefix.front().squared_error;
  auto steps = open_output(dir / "loss_steps.csv");
  steps << "length_steps,nll_quadratic,nll_logdet,nll_total,mse_m2_rad2,"
           "nll_quadratic_normalized,mse_normalized\n";
  for (const auto& t : prefix) {
    csv_row(steps, {static_cast<double>(t.length), t.quadratic, t.logdet,
                    t.quadratic + t.logdet, t.squared_error,
                    nll0 > 0.0 ? t.quadratic / nll0 : t.quadratic,
                    mse0 > 0.0 ? t.squared_error / mse0 : t.squared_error});
  }

  Json report = {{"start", o.start}, {"window", o.window}, {"order", o.order}};
  if (in.beliefs.size() >= 2) {
    const LossBreakdown b =
        window_loss(beliefs, gts, WindowSpec{o.window, o.stride}, order);
    auto by_length = open_output(dir / "loss_by_length.csv");
    by_length << "length_steps,windows,mean_nll_quadratic,mean_nll_logdet,mean_mse_m2_rad2\n";
    Json per_length = Json::array();
    for (const auto& t : b.per_length) {
      const double c = static_cast<double>(std::max<std::size_t>(t.count, 1));
      csv_row(by_length, {static_cast<double>(t.length), static_cast<double>(t.count),
                          t.quadratic / c, t.logdet / c, t.squared_error / c});
    }
    report["incremental_quadratic"] = b.incremental_quadratic;
    report["incremental_logdet"] = b.incremental_logdet;
    report["composed_quadratic"] = b.composed_quadratic;
    report["composed_logdet"] = b.composed_logdet;
    report["total"] = b.total;
    report["n_windows"] = b.n_windows;
    out << "window loss total " << format_double(b.total) << " over " << b.n_windows
        << " windows -> " << (dir / "loss_steps.csv").string() << '\n';
  }
  write_json_file(report, (dir / "loss.json").string());
  return kOk;
}

struct EvaluateOptions {
  std::string estimate;
  std::string gt;
  std::string align = "none";
};

int cmd_evaluate(const EvaluateOptions& o, const fs::path& dir, std::ostream& out) {
  const Trajectory est = read_kitti_poses(o.estimate);
  const Trajectory gt = read_kitti_poses(o.gt);
  if (est.size() != gt.size()) {
    throw DataError("estimate has " + std::to_string(est.size()) +
                    " poses, ground truth " + std::to_string(gt.size()));
  }
  const RelErrorReport raw = kitti_relative_errors(est, gt);
  {
    auto csv = open_output(dir / "rel_errors.csv");
    write_rel_error_csv(raw, csv);
  }
  Json report = {{"estimate", o.estimate},
                 {"ground_truth", o.gt},
                 {"poses", gt.size()},
                 {"unaligned", rel_error_summary(raw)}};
  report["unaligned"]["ate_rmse_m"] = position_rmse(est, gt);
  out << "t_err " << format_double(raw.mean_translation_percent) << " %, r_err "
      << format_double(raw.mean_rotation_deg_per_100m) << " deg/100m\n";

  if (o.align != "none") {
    const Alignment a = umeyama_align(est, gt, o.align == "sim3");
    const RelErrorReport aligned = kitti_relative_errors(a.aligned, gt);
    auto csv = open_output(dir / "rel_errors_aligned.csv");
    write_rel_error_csv(aligned, csv);
    report["aligned"] = rel_error_summary(aligned);
    report["aligned"]["ate_rmse_m"] = position_rmse(a.aligned, gt);
    report["aligned"]["scale"] = a.transform.scale;
    out << "aligned (" << o.align << ", s = " << format_double(a.transform.scale)
        << ") t_err " << format_double(aligned.mean_translation_percent) << " %\n";
  }
  write_json_file(report, (dir / "evaluate.json").string());
  return kOk;
}

struct CalibrateOptions {
  std::string beliefs;
  std::string gt;
  double k_sigma = 3.0;
};

int cmd_calibrate(const CalibrateOptions& o, const fs::path& dir, std::ostream& out) {
  const BeliefInput in = load_beliefs(o.beliefs);
  const Trajectory gt = resolve_ground_truth(o.gt, in);
  const auto gt_inc = increments_matching(gt, in.beliefs.size());
  const CalibrationReport r = calibration_report(in.beliefs, gt_inc, o.k_sigma);

  auto csv = open_output(dir / "calibration.csv");
  csv << "axis,ui_unit,or_percent,mean_ui\n";
  Json axes = Json::array();
  for (int i = 0; i < 6; ++i) {
    const auto& a = r.per_axis[i];
    csv << a.label << ',' << (i < 3 ? "m" : "rad") << ',' << format_double(a.or_percent)
        << ',' << format_double(a.mean_ui) << '\n';
    axes.push_back({{"axis", a.label}, {"or_percent", a.or_percent}, {"mean_ui", a.mean_ui}});
  }
  write_json_file({{"k_sigma", r.k_sigma},
                   {"steps", r.n_steps},
                   {"overall_or_percent", r.overall_or_percent},
                   {"expected_or_percent", 100.0 * normal_two_sided_tail(r.k_sigma)},
                   {"mahalanobis_or_percent", r.mahalanobis_or_percent},
                   {"mahalanobis_threshold", r.mahalanobis_threshold},
                   {"per_axis", axes}},
                  (dir / "calibration.json").string());
  out << "OR " << format_double(r.overall_or_percent) << " % at k = "
      << format_double(o.k_sigma) << " over " << r.n_steps << " steps\n";
  return kOk;
}

struct GraphOptions {
  std::string beliefs;
  std::string gt;
  std::string g2o;
  std::string mode = "weighted";
  double loop_radius = 0.3;
  int loop_min_sep = 2;
  int loop_max_sep = 0;  // 0: unlimited
  double loop_cov_scale = 100.0;
  std::uint64_t seed = 0;
  int max_iterations = 50;
  std::string export_g2o;
};

GraphMode mode_from(const std::string& s) {
  if (s == "baseline") return GraphMode::Baseline;
  if (s == "fixed") return GraphMode::Fixed;
  return GraphMode::Weighted;
}

int cmd_graph(const GraphOptions& o, const fs::path& dir, std::ostream& out) {
  PoseGraph full;
  std::optional<Trajectory> gt;
  if (!o.g2o.empty()) {
    full = from_g2o(read_g2o(o.g2o));
    if (!o.gt.empty()) gt = read_kitti_poses(o.gt);
  } else {
    if (o.beliefs.empty()) throw DataError("graph: pass --beliefs or --g2o");
    const BeliefInput in = load_beliefs(o.beliefs);
    gt = resolve_ground_truth(o.gt, in);
    increments_matching(*gt, in.beliefs.size());
    const int max_sep = o.loop_max_sep > 0 ? o.loop_max_sep : std::numeric_limits<int>::max();
    const auto pairs = simulated_loop_detection(*gt, o.loop_radius, o.loop_min_sep, max_sep);
    full = build_graph(in.beliefs, {});
    const CovMatrix loop_cov = o.loop_cov_scale * mean_odometry_covariance(full);
    const auto loops = synthesize_loop_edges(*gt, pairs, loop_cov, o.seed);
    full.edges.insert(full.edges.end(), loops.begin(), loops.end());
    validate_graph(full);
  }
  if (gt && gt->size() != full.nodes.size()) {
    throw DataError("ground truth has " + std::to_string(gt->size()) + " poses for " +
                    std::to_string(full.nodes.size()) + " graph nodes");
  }
  if (!o.export_g2o.empty()) write_g2o(o.export_g2o, to_g2o(full));

  PoseGraph graph = graph_for_mode(full, mode_from(o.mode));
  const Trajectory pre = node_trajectory(graph);
  SolverOptions solver;
  solver.max_iterations = o.max_iterations;
  const SolveReport rep = optimize(graph, solver);
  const Trajectory post = node_trajectory(graph);
  write_kitti_poses(pre, (dir / "pre.txt").string());
  write_kitti_poses(post, (dir / "post.txt").string());

  std::size_t n_loops = 0;
  for (const auto& e : full.edges) n_loops += e.kind == EdgeKind::LoopClosure;
  Json report = {{"mode", o.mode},
                 {"nodes", graph.nodes.size()},
                 {"edges", graph.edges.size()},
                 {"loop_edges_available", n_loops},
                 {"initial_chi2", rep.initial_chi2},
                 {"final_chi2", rep.final_chi2},
                 {"iterations", rep.iterations},
                 {"converged", rep.converged}};
  if (gt) {
    report["rmse_pre_m"] = position_rmse(pre, *gt);
    report["rmse_post_m"] = position_rmse(post, *gt);
    auto csv = open_output(dir / "rel_errors.csv");
    csv << "trajectory,length_m,segments,t_percent,r_deg_per_m\n";
    for (const auto& [name, traj] : {std::pair{"pre", &pre}, std::pair{"post", &post}}) {
      const RelErrorReport r = kitti_relative_errors(*traj, *gt);
      report[std::string("rel_errors_") + name] = rel_error_summary(r);
      for (const auto& l : r.per_length) {
        csv << name << ',' << format_double(l.length_m) << ',' << l.count << ','
            << format_double(l.translation_percent) << ','
            << format_double(l.rotation_deg_per_m) << '\n';
      }
    }
  }
  write_json_file(report, (dir / "graph.json").string());
  out << o.mode << ": chi2 " << format_double(rep.initial_chi2) << " -> "
      << format_double(rep.final_chi2) << " in " << rep.iterations << " iterations";
  if (gt) out << ", position RMSE " << format_double(report["rmse_post_m"].get<double>()) << " m";
  out << '\n';
  if (!rep.converged) {
    throw RankDeficiency("graph optimization did not converge in " +
                         std::to_string(rep.iterations) + " iterations");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct Command {
  CLI::App* app;
  std::string* out_dir;
  std::function<int(const fs::path&, std::ostream&)> body;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose-uncertainty toolkit: simulation, compounding, losses, evaluation, "
               "calibration and pose-graph experiments.",
               "posecov"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::vector<Command> commands;
  std::vector<std::unique_ptr<std::string>> out_dirs;
  auto add = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    out_dirs.push_back(std::make_unique<std::string>());
    sub->add_option("--out", *out_dirs.back(), "Output directory (created if missing)")
        ->required();
    commands.push_back({sub, out_dirs.back().get(), nullptr});
    return sub;
  };
  auto input = [](CLI::App* sub, const std::string& flag, std::string& target,
                  const std::string& help) {
    return sub->add_option(flag, target, help)->check(CLI::ExistingFile)->group(kInputGroup);
  };

  SimulateOptions sim;
  {
    CLI::App* s = add("simulate", "Generate a ground-truth path and noisy odometry beliefs");
    s->add_option("--shape", sim.shape, "Path shape")
        ->check(CLI::IsMember({"straight", "square", "circle", "random-walk"}));
    s->add_option("--steps", sim.steps, "Increments per lap")->check(CLI::Range(2, 10000000));
    s->add_option("--laps", sim.laps, "Times the path is repeated")->check(CLI::Range(1, 100000));
    s->add_option("--step-m", sim.step_m, "Step length (m)")->check(CLI::PositiveNumber);
    s->add_option("--base-sigma", sim.base_sigma,
                  "Per-axis noise sigma: rho x y z (m), phi x y z (rad)")
        ->expected(6)
        ->check(CLI::NonNegativeNumber);
    s->add_option("--spike-probability", sim.spike_probability, "Probability of a spike step")
        ->check(CLI::Range(0.0, 1.0));
    s->add_option("--spike-multiplier", sim.spike_multiplier, "Sigma multiplier on spikes")
        ->check(CLI::Range(1.0, std::numeric_limits<double>::max()));
    s->add_option("--drift-bias", sim.drift_bias, "Per-step bias twist rho (m), phi (rad)")
        ->expected(6);
    s->add_option("--seed", sim.seed, "Noise seed");
    s->add_option("--path-seed", sim.path_seed, "Heading seed for random-walk paths");
    commands.back().body = [&](const fs::path& d, std::ostream& o) {
      return cmd_simulate(sim, d, o);
    };
  }

  CompoundOptions comp;
  {
    CLI::App* s = add("compound", "Prefix compounds of a belief sequence");
    input(s, "--beliefs", comp.beliefs, "Belief or run JSON")->required();
    s->add_option("--order", comp.order, "Compounding order")->check(CLI::IsMember({2, 4}));
    commands.back().body = [&](const fs::path& d, std::ostream& o) {
      return cmd_compound(comp, d, o);
    };
  }

  LossOptions loss;
  {
    CLI::App* s = add("loss", "Windowed NLL and MSE losses against ground truth");
    input(s, "--beliefs", loss.beliefs, "Belief or run JSON")->required();
    input(s, "--gt", loss.gt, "Ground-truth KITTI poses (n + 1 lines)");
    s->add_option("--window", loss.window, "Longest window (steps)")->check(CLI::Range(2, 100000));
    s->add_option("--stride", loss.stride, "Window start stride")->check(CLI::Range(1, 100000));
    s->add_option("--order", loss.order, "Compounding order")->check(CLI::IsMember({2, 4}));
    s->add_option("--start", loss.start, "First step of the per-step table")
        ->check(CLI::NonNegativeNumber);
    commands.back().body = [&](const fs::path& d, std::ostream& o) {
      return cmd_loss(loss, d, o);
    };
  }

  EvaluateOptions eval;
  {
    CLI::App* s = add("evaluate", "KITTI relative errors with optional Umeyama alignment");
    input(s, "--estimate", eval.estimate, "Estimated KITTI poses")->required();
    input(s, "--gt", eval.gt, "Ground-truth KITTI poses")->required();
    s->add_option("--align", eval.align, "Alignment before the aligned report")
        ->check(CLI::IsMember({"none", "se3", "sim3"}));
    commands.back().body = [&](const fs::path& d, std::ostream& o) {
      return cmd_evaluate(eval, d, o);
    };
  }

  CalibrateOptions cal;
  {
    CLI::App* s = add("calibrate", "Out-of-range percentage and interval width per axis");
    input(s, "--beliefs", cal.beliefs, "Belief or run JSON")->required();
    input(s, "--gt", cal.gt, "Ground-truth KITTI poses (n + 1 lines)");
    s->add_option("--k-sigma", cal.k_sigma, "Interval half-width in sigmas")
        ->check(CLI::PositiveNumber);
    commands.back().body = [&](const fs::path& d, std::ostream& o) {
      return cmd_calibrate(cal, d, o);
    };
  }

  GraphOptions graph;
  {
    CLI::App* s = add("graph", "Build and optimize a pose graph");
    CLI::Option* beliefs = input(s, "--beliefs", graph.beliefs, "Odometry belief or run JSON");
    input(s, "--gt", graph.gt, "Ground-truth KITTI poses");
    input(s, "--g2o", graph.g2o, "Read the graph from a g2o file instead")->excludes(beliefs);
    s->add_option("--mode", graph.mode, "Edge weighting")
        ->check(CLI::IsMember({"baseline", "fixed", "weighted"}));
    s->add_option("--loop-radius", graph.loop_radius, "Loop detection radius (m)")
        ->check(CLI::PositiveNumber);
    s->add_option("--loop-min-sep", graph.loop_min_sep, "Minimum frame gap of a loop")
        ->check(CLI::NonNegativeNumber);
    s->add_option("--loop-max-sep", graph.loop_max_sep, "Maximum frame gap (0: none)")
        ->check(CLI::NonNegativeNumber);
    s->add_option("--loop-cov-scale", graph.loop_cov_scale,
                  "Loop-edge covariance as a multiple of the mean odometry covariance")
        ->check(CLI::PositiveNumber);
    s->add_option("--seed", graph.seed, "Loop-edge noise seed");
    s->add_option("--max-iterations", graph.max_iterations, "Solver iteration cap")
        ->check(CLI::PositiveNumber);
    s->add_option("--export-g2o", graph.export_g2o, "Also write the full graph as g2o");
    commands.back().body = [&](const fs::path& d, std::ostream& o) {
      return cmd_graph(graph, d, o);
    };
  }

  std::string rerun_config, rerun_out;
  CLI::App* rerun = app.add_subcommand("rerun", "Repeat a run from its saved config.json");
  rerun->add_option("--config", rerun_config, "config.json of an earlier run")
      ->required()
      ->check(CLI::ExistingFile);
  rerun->add_option("--out", rerun_out, "Output directory (default: the original one)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (rerun->parsed()) {
      return run(args_from_config(read_json_file(rerun_config), rerun_config, rerun_out), out,
                 err);
    }
    for (const auto& c : commands) {
      if (!c.app->parsed()) continue;
      const fs::path dir(*c.out_dir);
      fs::create_directories(dir);
      write_json_file(resolved_config(*c.app), (dir / kConfigFile).string());
      return c.body(dir, out);
    }
  } catch (const Error& e) {
    err << "posecov: " << e.what() << '\n';
    return e.is_numerical() ? kNumericalFailure : kDataError;
  } catch (const Json::exception& e) {
    err << "posecov: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "posecov: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace posecov::cli
