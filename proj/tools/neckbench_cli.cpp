// Command-line front end: train / eval / ablate / gradcheck / gen-data.
// Every command resolves its config (file < --seed override), logs the
// resolved form next to its artifacts, and emits nothing non-deterministic.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "neckbench/neckbench.hpp"

namespace {

namespace fs = std::filesystem;
using namespace neckbench;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path,
                  "Path to a key = value config file");
  cmd->add_option("--seed", args.seed,
                  "Overrides both train.seed and data.seed");
  cmd->add_option("--out", args.out_dir, "Output directory");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg =
      args.config_path.empty() ? RunConfig{} : load_config(args.config_path);
  if (args.seed) {
    cfg.train_seed = *args.seed;
    cfg.data.seed = *args.seed;
  }
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
}

void log_resolved(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "resolved_config.txt", cfg.resolved());
}

int cmd_gen_data(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  log_resolved(cfg, args.out_dir);
  const auto dataset = generate_dataset(cfg.data, cfg.data_n_images);
  save_annotations(dataset, args.out_dir);
  std::size_t masses = 0;
  for (const auto& img : dataset) masses += img.gts.size();
  std::cout << "wrote " << dataset.size() << " images (" << masses
            << " masses) to " << args.out_dir << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  log_resolved(cfg, args.out_dir);
  const auto dataset = obtain_dataset(cfg);
  const ExperimentSplit split =
      make_experiment_split(dataset.size(), cfg.data.seed);
  const ReplicaIndices idx = replica_indices(split, 0);

  Detector model(cfg, derive_seed(cfg.train_seed, "init"));
  TrainResult tr = train_detector(model, cfg, dataset, idx.train, idx.val);
  restore_params(model.store(), tr.best_params);
  save_checkpoint(model.store(),
                  (fs::path(args.out_dir) / "checkpoint.nbk").string());
  write_file(fs::path(args.out_dir) / "training_log.csv", tr.log);
  std::cout << "trained " << cfg.train_epochs << " epochs on "
            << idx.train.size() << " images; best epoch " << tr.best_epoch
            << " (val TPR " << detail::fmt_f(tr.val_tpr[tr.best_epoch], 4)
            << "); checkpoint + log in " << args.out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_flag) {
  RunConfig cfg = resolve_config(args);
  if (!checkpoint_flag.empty()) cfg.eval_checkpoint = checkpoint_flag;
  if (cfg.eval_checkpoint.empty())
    throw std::runtime_error(
        "eval: no checkpoint given (set eval.checkpoint or --checkpoint)");
  log_resolved(cfg, args.out_dir);
  const auto dataset = obtain_dataset(cfg);
  const ExperimentSplit split =
      make_experiment_split(dataset.size(), cfg.data.seed);
  const ReplicaIndices idx = replica_indices(split, 0);

  Detector model(cfg, derive_seed(cfg.train_seed, "init"));
  load_checkpoint(model.store(), cfg.eval_checkpoint);
  const EvalArtifacts art = evaluate_model(model, cfg, dataset, idx.test,
                                           to_string(cfg.neck.variant));
  write_file(fs::path(args.out_dir) / "metrics.csv", art.report_csv);
  write_file(fs::path(args.out_dir) / "froc.csv", art.froc_csv);
  std::cout << art.report_csv;
  std::cout << "metrics + FROC written to " << args.out_dir << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  log_resolved(cfg, args.out_dir);
  const AblationResult result = run_ablation(cfg);
  write_file(fs::path(args.out_dir) / "ablation.csv", result.summary_csv);
  write_file(fs::path(args.out_dir) / "ablation_max.csv", result.max_csv);
  write_file(fs::path(args.out_dir) / "ablation_raw.csv", result.raw_csv);
  std::cout << result.summary_csv;
  std::cout << "ablation tables written to " << args.out_dir << "\n";
  return 0;
}

int cmd_gradcheck(const CommonArgs& args) {
  if (!args.config_path.empty()) resolve_config(args);  // validate only
  const GradCheckReport report =
      run_gradcheck(args.seed.value_or(424242));
  std::cout << report.text();
  return report.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-pyramid neck benchmark: synthetic mass detection"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, ablate_args, grad_args;
  std::string eval_checkpoint;

  CLI::App* gen = app.add_subcommand("gen-data",
                                     "Generate a synthetic dataset");
  add_common(gen, gen_args);
  CLI::App* train = app.add_subcommand("train", "Train one detector");
  add_common(train, train_args);
  CLI::App* eval = app.add_subcommand("eval",
                                      "Evaluate a checkpoint on the test split");
  add_common(eval, eval_args);
  eval->add_option("--checkpoint", eval_checkpoint,
                   "Checkpoint path (overrides eval.checkpoint)");
  CLI::App* ablate = app.add_subcommand(
      "ablate", "Train + evaluate all four neck variants over 5 replicates");
  add_common(ablate, ablate_args);
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference verification of all gradients");
  add_common(gradcheck, grad_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args, eval_checkpoint);
    if (ablate->parsed()) return cmd_ablate(ablate_args);
    if (gradcheck->parsed()) return cmd_gradcheck(grad_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
