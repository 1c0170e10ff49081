#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "favor/error.hpp"
#include "favor/harness.hpp"
#include "favor/mapstore.hpp"

namespace fs = std::filesystem;
using namespace favor;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitBudget = 4;

struct BudgetExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
      return kExitConfig;
    case ErrorCode::IoFailure:
    case ErrorCode::BadMagic:
    case ErrorCode::VersionMismatch:
    case ErrorCode::CorruptPayload:
    case ErrorCode::ChannelMismatch:
    case ErrorCode::OutOfBounds:
      return kExitData;
    default:
      return kExitFailure;
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  return out;
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> epochs;
  std::string data, out, map, queries, priors_file, prior_data, loss_dir;
  std::string prior_kind = "nearest";
  double max_failures = 0.1;
  bool sweep = false;
  bool print_config = false;
};

AppConfig resolve_config(const Options& o) {
  AppConfig cfg = o.config_path.empty() ? AppConfig{} : load_config(o.config_path);
  if (o.seed) cfg.scene.seed = cfg.pipeline.seed = cfg.eval.seed = *o.seed;
  if (o.workers) {
    if (*o.workers < 1) throw Error(ErrorCode::InvalidArgument, "--workers must be positive");
    cfg.pipeline.workers = cfg.eval.workers = *o.workers;
  }
  if (o.epochs) cfg.pipeline.train.epochs = *o.epochs;
  cfg.pipeline.train.validate();
  return cfg;
}

std::vector<Pose> poses_of(const std::vector<View>& views) {
  std::vector<Pose> out;
  for (const auto& v : views) out.push_back(v.pose);
  return out;
}

void check_budget(const EvalReport& report, double max_failures) {
  const double n = static_cast<double>(report.queries.size());
  if (n > 0 && report.failed / n > max_failures)
    throw BudgetExceeded(std::to_string(report.failed) + " of " + std::to_string(report.queries.size()) +
                         " queries failed to localize");
}

void print_summary(const EvalReport& r) {
  std::cout << "queries " << r.queries.size() << " localized " << r.localized << " failed " << r.failed
            << " within_threshold " << r.within_threshold << '\n'
            << std::setprecision(6) << "median translation error " << r.median_translation << " m, rotation error "
            << r.median_rotation_deg << " deg\n";
  for (std::size_t k = 0; k < r.mean_inliers.size(); ++k)
    std::cout << "iteration " << k + 1 << " mean inliers " << r.mean_inliers[k] << '\n';
}

int cmd_synth(const Options& o) {
  const AppConfig cfg = resolve_config(o);
  const SceneData sd = gen_scene(cfg.scene);
  const fs::path dir = o.out;
  write_dataset(dir, sd.intrinsics, sd.train);
  write_dataset(dir / "queries", sd.intrinsics, sd.queries);
  auto gt = open_out(dir / "landmarks_gt.txt");
  gt << "# landmark x y z\n" << std::setprecision(17);
  const auto& lms = sd.scene.landmarks();
  for (std::size_t i = 0; i < lms.size(); ++i)
    gt << i << ' ' << lms[i].position.x() << ' ' << lms[i].position.y() << ' ' << lms[i].position.z() << '\n';
  auto c = open_out(dir / "config.json");
  c << dump_config(cfg) << '\n';
  std::cout << "wrote " << sd.train.size() << " training and " << sd.queries.size() << " query views to " << dir
            << '\n';
  return kExitOk;
}

int cmd_track(const Options& o) {
  const AppConfig cfg = resolve_config(o);
  const Dataset ds = read_dataset(o.data);
  const auto tracks = run_tracking(ds.views, cfg.pipeline.tracking);
  auto out = open_out(o.out);
  write_tracks(out, tracks);
  std::cout << tracks.size() << " tracks\n";
  return kExitOk;
}

int cmd_triangulate(const Options& o) {
  const AppConfig cfg = resolve_config(o);
  const Dataset ds = read_dataset(o.data);
  const auto tracks = run_tracking(ds.views, cfg.pipeline.tracking);
  const auto landmarks = run_triangulation(tracks, ds.intrinsics, cfg.pipeline);
  auto out = open_out(o.out);
  write_landmarks(out, landmarks);
  std::cout << landmarks.size() << " landmarks from " << tracks.size() << " tracks\n";
  return kExitOk;
}

int cmd_train(const Options& o) {
  const AppConfig cfg = resolve_config(o);
  const Dataset ds = read_dataset(o.data);
  const BuildResult br = build_map(ds.views, ds.intrinsics, cfg.pipeline);
  const std::size_t bytes = save_map(br.map, o.out);
  if (!o.loss_dir.empty()) {
    for (std::size_t i = 0; i < br.histories.size(); ++i) {
      auto out = open_out(fs::path(o.loss_dir) / ("voxel_" + std::to_string(br.map.voxels[i].track_id) + ".txt"));
      write_loss_history(out, br.histories[i]);
    }
  }
  std::cout << br.map.voxels.size() << " voxels, " << bytes << " bytes written to " << o.out << '\n';
  return kExitOk;
}

int cmd_localize(const Options& o) {
  const AppConfig cfg = resolve_config(o);
  const VoxelMap map = load_map(o.map);
  const Dataset qs = read_dataset(o.queries);
  std::vector<Pose> priors;
  if (!o.priors_file.empty()) {
    std::map<int, Pose> by_index;
    for (const auto& [i, p] : read_poses(o.priors_file)) by_index[i] = p;
    for (const auto& v : qs.views) {
      const auto it = by_index.find(v.index);
      if (it == by_index.end()) throw Error(ErrorCode::CorruptPayload, "no prior for query " + std::to_string(v.index));
      priors.push_back(it->second);
    }
  } else if (!o.prior_data.empty()) {
    const auto train = read_poses(fs::path(o.prior_data) / "poses.txt");
    std::vector<Pose> tp;
    for (const auto& [i, p] : train) tp.push_back(p);
    priors = make_priors(PriorKind::NearestTraining, qs.views, tp, 0.0, cfg.eval.seed);
  } else {
    throw Error(ErrorCode::InvalidArgument, "localize needs --priors or --prior-data");
  }
  const EvalReport report = run_eval(map, qs.views, priors, cfg.localize, cfg.eval);
  std::vector<int> indices;
  std::vector<Pose> estimates;
  for (const auto& q : report.queries) {
    if (!q.localized) continue;
    indices.push_back(q.index);
    estimates.push_back(q.estimate);
  }
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  write_poses(o.out, indices, estimates);
  print_summary(report);
  check_budget(report, o.max_failures);
  return kExitOk;
}

int cmd_eval(const Options& o) {
  const AppConfig cfg = resolve_config(o);
  const VoxelMap map = load_map(o.map);
  const fs::path data = o.data;
  const Dataset train = read_dataset(data);
  const Dataset qs = read_dataset(data / "queries");
  PriorKind kind;
  if (o.prior_kind == "nearest") {
    kind = PriorKind::NearestTraining;
  } else if (o.prior_kind == "gt") {
    kind = PriorKind::GroundTruth;
  } else if (o.prior_kind == "perturbed") {
    kind = PriorKind::Perturbed;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown prior kind " + o.prior_kind);
  }
  const auto priors =
      make_priors(kind, qs.views, poses_of(train.views), cfg.scene.diameter(), cfg.eval.seed, cfg.priors);
  const EvalReport report = run_eval(map, qs.views, priors, cfg.localize, cfg.eval);
  const fs::path out = o.out;
  fs::create_directories(out);
  {
    auto f = open_out(out / "report.json");
    write_report(f, report);
  }
  {
    auto f = open_out(out / "iterations.txt");
    write_iteration_table(f, report);
  }
  if (o.sweep) {
    // The oracle is regenerated from the scene section of the configuration.
    const SyntheticScene scene = make_scene(cfg.scene);
    std::vector<double> angles;
    for (int a = -30; a <= 30; a += 5) angles.push_back(a);
    const auto rendered = rendered_sweep(cfg.scene, scene, map, angles, cfg.localize.render);
    const auto raw = raw_sweep(cfg.scene, scene, angles);
    auto f = open_out(out / "view_sweep.txt");
    write_sweep(f, rendered, raw);
  }
  print_summary(report);
  check_budget(report, o.max_failures);
  return kExitOk;
}

int cmd_inspect(const Options& o) {
  const MapFileHeader h = read_map_header(o.map);
  const VoxelMap map = load_map(o.map);
  const auto on_disk = fs::file_size(o.map);
  const std::size_t analytic = map_file_size(map.voxels.size(), map.resolution, map.channels);
  double side = 0.0;
  for (const auto& v : map.voxels) side += v.side;
  std::cout << "format FVOR v" << h.version << '\n'
            << "voxels " << map.voxels.size() << '\n'
            << "channels " << map.channels << '\n'
            << "resolution " << map.resolution << '\n'
            << "patch_size " << map.patch_size << '\n'
            << "intrinsics " << map.intrinsics.fx << ' ' << map.intrinsics.fy << ' ' << map.intrinsics.cx << ' '
            << map.intrinsics.cy << ' ' << map.intrinsics.width << 'x' << map.intrinsics.height << '\n'
            << "mean_side_m " << (map.voxels.empty() ? 0.0 : side / map.voxels.size()) << '\n'
            << "file_bytes " << on_disk << '\n'
            << "analytic_bytes " << analytic << '\n'
            << "file_mb " << std::setprecision(4) << on_disk / 1e6 << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voxel landmark mapping and relocalization on synthetic descriptor scenes"};
  app.require_subcommand(0, 1);
  Options o;
  app.add_option("-c,--config", o.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "master seed (overrides config)");
  app.add_option("-j,--workers", o.workers, "worker threads (overrides config)");
  app.add_flag("--print-config", o.print_config, "print the resolved configuration and exit");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset directory");
  synth->add_option("-o,--out", o.out, "dataset directory")->required();

  auto* track = app.add_subcommand("track", "build feature tracks");
  track->add_option("-d,--data", o.data, "dataset directory")->required();
  track->add_option("-o,--out", o.out, "tracks text file")->required();

  auto* tri = app.add_subcommand("triangulate", "track and triangulate landmarks");
  tri->add_option("-d,--data", o.data, "dataset directory")->required();
  tri->add_option("-o,--out", o.out, "landmarks text file")->required();

  auto* train = app.add_subcommand("train", "build and train a voxel map");
  train->add_option("-d,--data", o.data, "dataset directory")->required();
  train->add_option("-o,--out", o.out, "map file (FVOR)")->required();
  train->add_option("--loss-dir", o.loss_dir, "directory for per-voxel loss histories");
  train->add_option("--epochs", o.epochs, "epochs per voxel (overrides config)");

  auto* loc = app.add_subcommand("localize", "localize query views against a map");
  loc->add_option("-m,--map", o.map, "map file")->required();
  loc->add_option("-q,--queries", o.queries, "query dataset directory")->required();
  loc->add_option("--priors", o.priors_file, "prior poses file (poses.txt layout)");
  loc->add_option("--prior-data", o.prior_data, "training dataset; nearest training pose as prior");
  loc->add_option("-o,--out", o.out, "estimated poses file")->required();
  loc->add_option("--max-failures", o.max_failures, "tolerated fraction of failed queries");

  auto* ev = app.add_subcommand("eval", "evaluate a map on the query views of a dataset");
  ev->add_option("-m,--map", o.map, "map file")->required();
  ev->add_option("-d,--data", o.data, "dataset directory with a queries/ subdirectory")->required();
  ev->add_option("-o,--out", o.out, "report directory")->required();
  ev->add_option("--prior", o.prior_kind, "nearest | gt | perturbed");
  ev->add_flag("--sweep", o.sweep, "also write the view-angle similarity sweep");
  ev->add_option("--max-failures", o.max_failures, "tolerated fraction of failed queries");

  auto* inspect = app.add_subcommand("inspect", "print map statistics");
  inspect->add_option("-m,--map", o.map, "map file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  if (!o.print_config && app.get_subcommands().empty()) {
    std::cerr << app.help() << "error: a subcommand is required\n";
    return kExitConfig;
  }

  try {
    if (o.print_config) {
      std::cout << dump_config(resolve_config(o)) << '\n';
      return kExitOk;
    }
    if (synth->parsed()) return cmd_synth(o);
    if (track->parsed()) return cmd_track(o);
    if (tri->parsed()) return cmd_triangulate(o);
    if (train->parsed()) return cmd_train(o);
    if (loc->parsed()) return cmd_localize(o);
    if (ev->parsed()) return cmd_eval(o);
    if (inspect->parsed()) return cmd_inspect(o);
  } catch (const BudgetExceeded& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBudget;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
