// dltr: degeneracy-resilient lidar teach-and-repeat harness.
//
// Verbs: teach, repeat, ablation, metrics, simulate-scan.
// Exit codes: 0 success, 2 when any run Failed, 1 on usage errors.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dltr/config.hpp"
#include "dltr/metrics.hpp"
#include "dltr/pipeline.hpp"
#include "dltr/sim.hpp"

namespace {

using namespace dltr;

World resolve_world(const std::string& arg) {
  if (arg.empty() || arg == "airport") return make_airport_world(3);
  if (arg == "feature-rich") return make_feature_rich_world();
  return load_world(arg);
}

PipelineConfig resolve_config(const std::string& arg) {
  if (arg.empty()) return PipelineConfig{};
  return load_pipeline_config(arg);
}

void print_report(const std::string& label, const MetricsReport& m) {
  std::cout << label << ": " << (m.completed ? "Completed" : "Failed")
            << "  rmse_measured=" << m.lateral_rmse_measured
            << "  max_measured=" << m.max_lateral_measured
            << "  rmse_self=" << m.lateral_rmse_self
            << "  max_self=" << m.max_lateral_self << '\n';
}

// Reconstructs the groundtruth frames of a stored run for the metrics verb.
RunRecord load_run_record(const std::string& dir) {
  RunRecord record;
  std::ifstream f(dir + "/gt.csv");
  if (!f) throw std::runtime_error("metrics: cannot open " + dir + "/gt.csv");
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string pass, field;
    std::getline(ss, pass, ',');
    FrameLog fr;
    std::getline(ss, field, ',');
    fr.time = std::stod(field);
    std::getline(ss, field, ',');
    fr.gt_position.x() = std::stod(field);
    std::getline(ss, field, ',');
    fr.gt_position.y() = std::stod(field);
    std::getline(ss, field, ',');
    fr.gt_position.z() = std::stod(field);
    (pass == "teach" ? record.teach_frames : record.repeat_frames)
        .push_back(fr);
  }
  record.graph = load_graph(dir + "/graph");
  record.completed = true;  // outcome class is not part of the stored CSVs
  return record;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"degeneracy-resilient lidar teach-and-repeat"};
  app.require_subcommand(1);

  std::string world_arg = "airport";
  std::string config_arg;
  std::string out_dir = "out";
  std::vector<int> variants;
  int repeats = 3;
  std::uint64_t seed = 1;
  double speed = 1.0;

  auto add_common = [&](CLI::App* cmd, bool with_variant) {
    cmd->add_option("--world", world_arg,
                    "world file or builtin: airport | feature-rich");
    cmd->add_option("--config", config_arg, "JSON pipeline config");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "base RNG seed");
    cmd->add_option("--speed", speed, "drive speed [m/s]");
    if (with_variant) {
      cmd->add_option("--variant", variants, "pipeline variant preset 1..4")
          ->check(CLI::Range(1, 4));
    }
  };

  auto* teach_cmd = app.add_subcommand("teach", "run a teach pass, store map");
  add_common(teach_cmd, true);
  auto* repeat_cmd =
      app.add_subcommand("repeat", "repeat against a stored map");
  add_common(repeat_cmd, true);
  std::string graph_dir;
  repeat_cmd->add_option("--graph", graph_dir, "stored run directory")
      ->required();
  auto* ablation_cmd =
      app.add_subcommand("ablation", "variant ablation study");
  add_common(ablation_cmd, true);
  ablation_cmd->add_option("--repeats", repeats, "runs per variant");
  auto* metrics_cmd =
      app.add_subcommand("metrics", "metrics of a stored run directory");
  std::string run_dir;
  metrics_cmd->add_option("--run", run_dir, "run directory")->required();
  auto* scan_cmd =
      app.add_subcommand("simulate-scan", "write one scan as CSV");
  add_common(scan_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (metrics_cmd->parsed()) {
      const RunRecord record = load_run_record(run_dir);
      print_report(run_dir, compute_metrics(record));
      return 0;
    }

    const World world = resolve_world(world_arg);
    PipelineConfig config = resolve_config(config_arg);
    const TrajectorySpec spec = default_loop(speed);
    if (variants.empty()) {
      variants = teach_cmd->parsed() || repeat_cmd->parsed()
                     ? std::vector<int>{1}
                     : std::vector<int>{1, 2, 3, 4};
    }

    if (scan_cmd->parsed()) {
      const Extrinsics ext = Extrinsics::FromPose(config.T_sr);
      Pose sensor_pose;
      sensor_pose.translation = spec.waypoints.front().position;
      const Cloud scan =
          generate_scan(world, sensor_pose, Vec6::Zero(), config.sensor, ext,
                        config.doppler_bias, 0.0, seed);
      std::filesystem::create_directories(out_dir);
      save_cloud_csv(scan, out_dir + "/scan.csv");
      std::cout << "wrote " << scan.size() << " points to " << out_dir
                << "/scan.csv\n";
      return 0;
    }

    if (teach_cmd->parsed()) {
      config.teach_only = true;
      const VariantSpec variant = VariantSpec::preset(variants.front());
      const RunRecord record =
          run_closed_loop(world, spec, variant, config, seed);
      save_run_record(record, out_dir);
      std::cout << "teach " << (record.completed ? "Completed" : "Failed")
                << ": " << record.graph.teach.size() << " vertices -> "
                << out_dir << '\n';
      return record.completed ? 0 : 2;
    }

    if (repeat_cmd->parsed()) {
      const TrGraph stored = load_graph(graph_dir + "/graph");
      const VariantSpec variant = VariantSpec::preset(variants.front());
      const RunRecord record =
          run_closed_loop(world, spec, variant, config, seed, &stored);
      save_run_record(record, out_dir);
      print_report("repeat", compute_metrics(record));
      return record.completed ? 0 : 2;
    }

    // ablation
    const AblationResult result = run_ablation(world, spec, variants, repeats,
                                               seed, config, out_dir);
    bool any_failed = false;
    for (const auto& row : result.rows) {
      std::cout << "variant " << row.variant << " seed " << row.seed << ": "
                << (row.completed ? "Completed" : "Failed")
                << "  rmse_measured=" << row.rmse_measured
                << "  rmse_self=" << row.rmse_self << '\n';
      any_failed = any_failed || !row.completed;
    }
    std::cout << "wrote " << out_dir << "/ablation.csv\n";
    return any_failed ? 2 : 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
