// anatpose command-line tool: data generation, bounds derivation, training,
// adaptation, and evaluation as reproducible pipelines.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "anatpose/config.hpp"
#include "anatpose/datagen.hpp"
#include "anatpose/eval.hpp"
#include "anatpose/io.hpp"
#include "anatpose/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace anatpose;

namespace {

constexpr const char* kDataRootEnv = "ANATPOSE_DATA_ROOT";

// Dataset paths resolve against ANATPOSE_DATA_ROOT when set and the path is
// relative.
fs::path resolve_data_path(const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kDataRootEnv); root != nullptr && *root != '\0') {
    return fs::path(root) / p;
  }
  return p;
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string relative_to(const fs::path& path, const fs::path& base) {
  std::error_code ec;
  const fs::path rel = fs::relative(path, base, ec);
  return ec ? fs::absolute(path).string() : rel.string();
}

// Run manifest written next to the command output: resolved config, input
// hashes, seed, timestamps. Written before work starts and finalized after.
class RunManifest {
 public:
  RunManifest(std::string command, fs::path out_path)
      : path_(out_path.string() + ".manifest.json") {
    doc_["command"] = std::move(command);
    doc_["version"] = "anatpose 1.0.0";
    doc_["start_time"] = iso_timestamp();
    doc_["end_time"] = nullptr;
  }

  void set_config(const json& config) { doc_["config"] = config; }
  void set_seed(std::uint64_t seed) { doc_["seed"] = seed; }

  void add_input(const std::string& label, const fs::path& file) {
    doc_["inputs"][label] = {{"path", relative_to(file, path_.parent_path())},
                             {"hash", io::content_hash(file)}};
  }

  // Hash a dataset directory through its manifest (which embeds split hashes).
  void add_dataset(const std::string& label, const fs::path& dir) {
    const fs::path manifest = dir / "manifest.json";
    if (fs::exists(manifest)) {
      add_input(label, manifest);
    } else {
      doc_["inputs"][label] = {{"path", relative_to(dir, path_.parent_path())}, {"hash", nullptr}};
    }
  }

  void write() const { io::write_text_file(path_, doc_.dump(2) + "\n"); }

  void finalize() {
    doc_["end_time"] = iso_timestamp();
    write();
  }

 private:
  fs::path path_;
  json doc_;
};

std::ofstream open_log(const std::string& path) {
  std::ofstream log;
  if (!path.empty()) {
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    log.open(path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open log file " + path);
  }
  return log;
}

EpochCallback make_epoch_logger(std::ofstream& log, bool quiet) {
  return [&log, quiet](const EpochStats& stats) {
    const std::string line = format_epoch_line(stats);
    if (log.is_open()) log << line << '\n' << std::flush;
    if (!quiet) std::cout << line << '\n';
  };
}

Dataset to_dataset(io::SplitData&& split) {
  Dataset d;
  d.clouds = std::move(split.clouds);
  d.poses = std::move(split.poses);
  return d;
}

struct TrainCli {
  std::string config_path;
  std::string log_path;
  std::string out_path;
  bool quiet = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lambda1, lambda2, lr;
  std::optional<std::string> filter_mode, mask_mode, penalty;
  std::optional<int> subsample_points;
  std::optional<int> joints;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file (flags override it)");
    cmd->add_option("--out", out_path, "output checkpoint path")->required();
    cmd->add_option("--log", log_path, "append per-epoch log lines to this file");
    cmd->add_flag("--quiet", quiet, "suppress per-epoch stdout lines");
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--epochs", epochs, "number of epochs");
    cmd->add_option("--lambda1", lambda1, "anatomical loss weight");
    cmd->add_option("--lambda2", lambda2, "consistency loss weight");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--filter", filter_mode,
                    "pseudo-label filter: none|sym|length|angle|anat_sum|two_of_three|consistency");
    cmd->add_option("--mask", mask_mode,
                    "parameter subset: all|feature_extractor_only|norm_layers_only|freeze_heads");
    cmd->add_option("--penalty", penalty, "penalty kind: l1|l2");
    cmd->add_option("--subsample-points", subsample_points, "points per augmented cloud");
    cmd->add_option("--joints", joints, "model output joints (must match the skeleton)");
  }

  TrainConfig resolve(const TrainConfig& defaults) const {
    TrainConfig c = defaults;
    if (!config_path.empty()) c = io::load_train_config(config_path, defaults);
    if (seed) c.seed = *seed;
    if (epochs) c.epochs = *epochs;
    if (lambda1) c.lambda1 = *lambda1;
    if (lambda2) c.lambda2 = *lambda2;
    if (lr) c.lr = *lr;
    if (filter_mode) c.filter_mode = parse_filter_mode(*filter_mode);
    if (mask_mode) c.mask_mode = parse_mask_mode(*mask_mode);
    if (penalty) c.penalty = *penalty == "l2" ? PenaltyKind::L2 : PenaltyKind::L1;
    if (subsample_points) c.subsample_points = *subsample_points;
    if (joints) c.model.joints = *joints;
    return c;
  }
};

void check_skeleton_compatible(const SkeletonSpec& spec, const AnatomicalBounds& bounds) {
  if (bounds.length_lo.size() != spec.num_bones() ||
      bounds.angle_lo.size() != spec.num_connected_pairs() ||
      bounds.sym_tol.size() != spec.num_symmetric_pairs()) {
    throw std::invalid_argument("bounds file does not match the skeleton spec");
  }
}

void check_model_matches(const ModelConfig& model, const SkeletonSpec& spec) {
  if (model.joints != spec.num_joints()) {
    throw std::invalid_argument("model joints (" + std::to_string(model.joints) +
                                ") do not match the skeleton (" +
                                std::to_string(spec.num_joints()) + ")");
  }
}

int cmd_gen_data(const std::string& config_path, const std::string& template_path,
                 const std::string& out_dir, std::optional<std::uint64_t> seed, int threads) {
  GenConfig config;
  if (!config_path.empty()) config = io::load_gen_config(config_path);
  if (seed) config.seed = *seed;
  BodyTemplate tmpl =
      template_path.empty() ? default_body_template() : load_body_template(template_path);

  const fs::path out = resolve_data_path(out_dir);
  RunManifest manifest("gen-data", out / "run");
  manifest.set_config(json::parse(io::gen_config_to_json_text(config)));
  manifest.set_seed(config.seed);
  manifest.write();

  generate_dataset(out, tmpl, config, threads);
  manifest.finalize();
  std::cout << "dataset written to " << out.string() << "\nmanifest: "
            << (out / "manifest.json").string() << '\n';
  return 0;
}

int cmd_derive_bounds(const std::string& split_dir, const std::string& skeleton_path,
                      const std::string& out_path, double sym_tol, double margin) {
  const SkeletonSpec spec = io::load_skeleton(skeleton_path);
  require_valid(spec);
  const io::SplitData split = io::load_split(resolve_data_path(split_dir));
  AnatomicalBounds bounds = derive_bounds(split.poses, spec, sym_tol);
  if (margin > 0.0) bounds = widen_bounds(bounds, margin);
  io::save_bounds(out_path, bounds);
  std::cout << "bounds written to " << out_path << " (" << split.poses.size() << " poses)\n";
  return 0;
}

int cmd_train_source(const TrainCli& cli, const std::string& source_dir,
                     const std::string& resume_path) {
  TrainConfig config = cli.resolve(TrainConfig::uda_defaults());
  const Dataset source = to_dataset(io::load_split(resolve_data_path(source_dir)));
  config.model.joints = source.poses.front().num_joints();

  RunManifest manifest("train-source", cli.out_path);
  manifest.set_config(json::parse(io::train_config_to_json_text(config)));
  manifest.set_seed(config.seed);
  manifest.add_dataset("source", resolve_data_path(source_dir));

  std::optional<ModelState> resume;
  if (!resume_path.empty()) {
    resume = io::load_checkpoint(resume_path);
    manifest.add_input("resume", resume_path);
  }
  manifest.write();

  std::ofstream log = open_log(cli.log_path);
  const ModelState state = train_source(source, config, make_epoch_logger(log, cli.quiet),
                                        resume ? &*resume : nullptr);
  io::save_checkpoint(cli.out_path, state);
  manifest.finalize();
  std::cout << "checkpoint written to " << cli.out_path << '\n';
  return 0;
}

int cmd_adapt_uda(const TrainCli& cli, const std::string& source_dir,
                  const std::string& target_dir, const std::string& skeleton_path,
                  const std::string& bounds_path) {
  TrainConfig config = cli.resolve(TrainConfig::uda_defaults());
  const SkeletonSpec spec = io::load_skeleton(skeleton_path);
  require_valid(spec);
  const AnatomicalBounds bounds = io::load_bounds(bounds_path);
  check_skeleton_compatible(spec, bounds);

  const Dataset source = to_dataset(io::load_split(resolve_data_path(source_dir)));
  Dataset target = to_dataset(io::load_split(resolve_data_path(target_dir), false));
  target.poses.clear();  // target labels are never read during adaptation
  config.model.joints = spec.num_joints();
  check_model_matches(config.model, spec);
  if (source.poses.front().num_joints() != spec.num_joints()) {
    throw std::invalid_argument("source dataset joints do not match the skeleton");
  }

  RunManifest manifest("adapt-uda", cli.out_path);
  manifest.set_config(json::parse(io::train_config_to_json_text(config)));
  manifest.set_seed(config.seed);
  manifest.add_dataset("source", resolve_data_path(source_dir));
  manifest.add_dataset("target", resolve_data_path(target_dir));
  manifest.add_input("skeleton", skeleton_path);
  manifest.add_input("bounds", bounds_path);
  manifest.write();

  std::ofstream log = open_log(cli.log_path);
  const ModelState state =
      adapt_uda(source, target, spec, bounds, config, make_epoch_logger(log, cli.quiet));
  io::save_checkpoint(cli.out_path, state);
  manifest.finalize();
  std::cout << "checkpoint written to " << cli.out_path << '\n';
  return 0;
}

int cmd_adapt_sfda(const TrainCli& cli, const std::string& checkpoint_path,
                   const std::string& target_dir, const std::string& skeleton_path,
                   const std::string& bounds_path) {
  TrainConfig config = cli.resolve(TrainConfig::sfda_defaults());
  const SkeletonSpec spec = io::load_skeleton(skeleton_path);
  require_valid(spec);
  const AnatomicalBounds bounds = io::load_bounds(bounds_path);
  check_skeleton_compatible(spec, bounds);

  const ModelState pretrained = io::load_checkpoint(checkpoint_path);
  config.model = pretrained.student.cfg;  // architecture comes from the checkpoint
  check_model_matches(config.model, spec);

  Dataset target = to_dataset(io::load_split(resolve_data_path(target_dir), false));
  target.poses.clear();

  RunManifest manifest("adapt-sfda", cli.out_path);
  manifest.set_config(json::parse(io::train_config_to_json_text(config)));
  manifest.set_seed(config.seed);
  manifest.add_input("checkpoint", checkpoint_path);
  manifest.add_dataset("target", resolve_data_path(target_dir));
  manifest.add_input("skeleton", skeleton_path);
  manifest.add_input("bounds", bounds_path);
  manifest.write();

  std::ofstream log = open_log(cli.log_path);
  const ModelState state =
      adapt_sfda(pretrained, target, spec, bounds, config, make_epoch_logger(log, cli.quiet));
  io::save_checkpoint(cli.out_path, state);
  manifest.finalize();
  std::cout << "checkpoint written to " << cli.out_path << '\n';
  return 0;
}

json report_to_json(const EvalReport& report, const SkeletonSpec& spec) {
  json j;
  json per_joint = json::array();
  for (Eigen::Index i = 0; i < report.errors.per_joint.size(); ++i) {
    per_joint.push_back(report.errors.per_joint[i]);
  }
  j["mpjpe"] = {{"per_joint", per_joint},
                {"mean", report.errors.mean},
                {"groups", report.group_means},
                {"sample_count", report.errors.sample_count},
                {"joint_names", spec.joint_names}};
  if (report.plausibility) {
    const PlausibilityReport& p = *report.plausibility;
    j["plausibility"] = {{"rate_sym", p.rate_sym},       {"rate_length", p.rate_length},
                         {"rate_angle", p.rate_angle},   {"mean_sym", p.mean_sym},
                         {"mean_length", p.mean_length}, {"mean_angle", p.mean_angle},
                         {"mean_anat", p.mean_anat}};
  }
  return j;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& split_dir,
             const std::string& skeleton_path, const std::string& bounds_path,
             const std::string& report_path, const std::string& joints_arg,
             const std::string& which_model, bool correlation, int threads) {
  const ModelState state = io::load_checkpoint(checkpoint_path);
  const SkeletonSpec spec = io::load_skeleton(skeleton_path);
  require_valid(spec);
  check_model_matches(state.student.cfg, spec);
  const ModelParams& params = which_model == "teacher" ? state.teacher : state.student;

  const io::SplitData split = io::load_split(resolve_data_path(split_dir));
  if (split.poses.front().num_joints() != spec.num_joints()) {
    throw std::invalid_argument("split joints do not match the skeleton");
  }

  std::optional<AnatomicalBounds> bounds;
  if (!bounds_path.empty()) {
    bounds = io::load_bounds(bounds_path);
    check_skeleton_compatible(spec, *bounds);
  }

  const std::vector<Pose> preds = run_inference(params, split.clouds, threads);
  const EvalReport report =
      evaluate_poses(preds, split.poses, spec, bounds ? &*bounds : nullptr);
  json out = report_to_json(report, spec);

  if (!joints_arg.empty()) {
    std::vector<int> subset;
    if (spec.joint_groups.count(joints_arg)) {
      subset = spec.joint_groups.at(joints_arg);
    } else {
      std::stringstream ss(joints_arg);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        if (spec.joint_groups.count(tok)) {
          for (int idx : spec.joint_groups.at(tok)) subset.push_back(idx);
        } else {
          subset.push_back(std::stoi(tok));
        }
      }
    }
    out["mpjpe"]["subset"] = {{"joints", subset},
                              {"mean", mpjpe_subset(report.errors, subset)}};
  }

  if (correlation) {
    if (!bounds) throw std::invalid_argument("--correlation requires --bounds");
    const auto rows = correlation_from_poses(preds, split.poses, spec, *bounds);
    json table = json::array();
    for (const auto& row : rows) {
      table.push_back({{"loss", row.loss_name}, {"r", row.r}, {"p", row.p}});
    }
    out["correlation"] = table;
  }

  if (!report_path.empty()) {
    io::write_text_file(report_path, out.dump(2) + "\n");
    RunManifest manifest("eval", report_path);
    manifest.set_seed(state.seed);
    manifest.add_input("checkpoint", checkpoint_path);
    manifest.add_dataset("split", resolve_data_path(split_dir));
    manifest.finalize();
  }
  std::cout << format_report_table(report, spec);
  if (correlation && out.contains("correlation")) {
    std::cout << "loss     R        p\n";
    for (const auto& row : out["correlation"]) {
      std::cout << std::left << std::setw(9) << row["loss"].get<std::string>() << std::setprecision(4)
                << row["r"].get<double>() << "   " << std::scientific << std::setprecision(2)
                << row["p"].get<double>() << std::defaultfloat << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anatomy-guided domain adaptation for point-cloud 3D human pose estimation"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads for generation/inference (default 1)")
      ->check(CLI::PositiveNumber);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic source/target dataset");
  std::string gen_config, gen_template, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "gen config JSON");
  gen->add_option("--template", gen_template, "body template JSON (default: built-in 16-joint)");
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "random seed override");

  // derive-bounds
  auto* der = app.add_subcommand("derive-bounds", "derive anatomical bounds from a labeled split");
  std::string der_split, der_skeleton, der_out;
  double der_sym_tol = 0.0, der_margin = 0.0;
  der->add_option("--split", der_split, "split directory with poses")->required();
  der->add_option("--skeleton", der_skeleton, "skeleton spec JSON")->required();
  der->add_option("--out", der_out, "output bounds JSON")->required();
  der->add_option("--sym-tol", der_sym_tol, "symmetry tolerance (meters, default 0)");
  der->add_option("--margin", der_margin, "relative widening of the derived intervals");

  // train-source
  auto* ts = app.add_subcommand("train-source", "supervised training on a labeled split");
  std::string ts_source, ts_resume;
  TrainCli ts_cli;
  ts->add_option("--source", ts_source, "labeled split directory")->required();
  ts->add_option("--resume", ts_resume, "checkpoint to continue from");
  ts_cli.attach(ts);

  // adapt-uda
  auto* uda = app.add_subcommand("adapt-uda", "joint adaptation with source and target data");
  std::string uda_source, uda_target, uda_skeleton, uda_bounds;
  TrainCli uda_cli;
  uda->add_option("--source", uda_source, "labeled source split")->required();
  uda->add_option("--target", uda_target, "unlabeled target split")->required();
  uda->add_option("--skeleton", uda_skeleton, "skeleton spec JSON")->required();
  uda->add_option("--bounds", uda_bounds, "anatomical bounds JSON")->required();
  uda_cli.attach(uda);

  // adapt-sfda
  auto* sfda = app.add_subcommand("adapt-sfda", "source-free adaptation from a checkpoint");
  std::string sfda_ckpt, sfda_target, sfda_skeleton, sfda_bounds;
  TrainCli sfda_cli;
  sfda->add_option("--checkpoint", sfda_ckpt, "pretrained source checkpoint")->required();
  sfda->add_option("--target", sfda_target, "unlabeled target split")->required();
  sfda->add_option("--skeleton", sfda_skeleton, "skeleton spec JSON")->required();
  sfda->add_option("--bounds", sfda_bounds, "anatomical bounds JSON")->required();
  sfda_cli.attach(sfda);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a labeled split");
  std::string ev_ckpt, ev_split, ev_skeleton, ev_bounds, ev_report, ev_joints;
  std::string ev_model = "student";
  bool ev_corr = false;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint JSON")->required();
  ev->add_option("--split", ev_split, "labeled split directory")->required();
  ev->add_option("--skeleton", ev_skeleton, "skeleton spec JSON")->required();
  ev->add_option("--bounds", ev_bounds, "anatomical bounds JSON (enables plausibility report)");
  ev->add_option("--report", ev_report, "write the report JSON here");
  ev->add_option("--joints", ev_joints, "joint subset: group name(s) or comma-separated indices");
  ev->add_option("--model", ev_model, "student|teacher (default student)");
  ev->add_flag("--correlation", ev_corr, "emit the loss-vs-error correlation table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_config, gen_template, gen_out, gen_seed, threads);
    if (der->parsed()) return cmd_derive_bounds(der_split, der_skeleton, der_out, der_sym_tol, der_margin);
    if (ts->parsed()) return cmd_train_source(ts_cli, ts_source, ts_resume);
    if (uda->parsed()) return cmd_adapt_uda(uda_cli, uda_source, uda_target, uda_skeleton, uda_bounds);
    if (sfda->parsed()) return cmd_adapt_sfda(sfda_cli, sfda_ckpt, sfda_target, sfda_skeleton, sfda_bounds);
    if (ev->parsed()) {
      return cmd_eval(ev_ckpt, ev_split, ev_skeleton, ev_bounds, ev_report, ev_joints, ev_model,
                      ev_corr, threads);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "anatpose: error [E_CONFIG] " << e.what() << '\n';
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "anatpose: error [E_NUMERIC] " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "anatpose: error [E_RUNTIME] " << e.what() << '\n';
    return 1;
  }
  return 0;
}
