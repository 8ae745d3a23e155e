#pragma once

#include <CLI11.hpp>

#include "semfeat/cli/commands.hpp"

namespace semfeat::cli {

// Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"semantic multi-task feature pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  std::uint64_t seed_override = 0;
  bool deterministic = false;
  app.add_option("--config", config_path, "JSON experiment config (defaults when omitted)");
  CLI::Option* seed_opt = app.add_option("--seed", seed_override, "override the config seed");
  app.add_flag("--deterministic", deterministic,
               "record determinism intent in run.json (the pipeline is single-threaded and "
               "bit-deterministic either way)");
  app.add_option("--out", out_override, "override the config output directory");

  std::string corpus_arg, checkpoint_arg, resume_arg, est_arg, ref_arg;
  bool no_semantic = false;
  int plots = 4, pair_index = -1;

  CLI::App* gen = app.add_subcommand("generate", "render a synthetic pair corpus");
  gen->fallthrough();

  CLI::App* train = app.add_subcommand("train", "train the network on a corpus");
  train->fallthrough();
  train->add_option("--corpus", corpus_arg, "corpus directory (default <out>/corpus)");
  train->add_option("--resume", resume_arg, "checkpoint to resume from");

  CLI::App* eval = app.add_subcommand("eval", "match held-out pairs and report metrics");
  eval->fallthrough();
  eval->add_option("--corpus", corpus_arg, "corpus directory (default <out>/corpus)");
  eval->add_option("--checkpoint", checkpoint_arg,
                   "trained checkpoint (default <out>/train/best.ckpt)");
  eval->add_flag("--no-semantic-filter", no_semantic,
                 "disable class exclusion and the same-class match constraint");
  eval->add_option("--plots", plots, "pairs to render as match overlays (default 4)");

  CLI::App* exp = app.add_subcommand("export", "write SfM feature/match files and point cloud");
  exp->fallthrough();
  exp->add_option("--corpus", corpus_arg, "corpus directory (default <out>/corpus)");
  exp->add_option("--checkpoint", checkpoint_arg,
                  "trained checkpoint (default <out>/train/best.ckpt)");
  exp->add_flag("--no-semantic-filter", no_semantic,
                "disable class exclusion and the same-class match constraint");

  CLI::App* rmse = app.add_subcommand("rmse", "align two trajectories and report RMSE");
  rmse->fallthrough();
  rmse->add_option("--est", est_arg, "estimated trajectory CSV")->required();
  rmse->add_option("--ref", ref_arg, "reference trajectory CSV")->required();

  CLI::App* plot = app.add_subcommand("plot", "render a match overlay or a trajectory figure");
  plot->fallthrough();
  plot->add_option("--corpus", corpus_arg, "corpus directory (match overlay mode)");
  plot->add_option("--checkpoint", checkpoint_arg, "trained checkpoint (match overlay mode)");
  plot->add_option("--pair", pair_index, "corpus pair index to draw");
  plot->add_option("--est", est_arg, "estimated trajectory CSV (trajectory mode)");
  plot->add_option("--ref", ref_arg, "reference trajectory CSV (trajectory mode)");
  plot->add_flag("--no-semantic-filter", no_semantic,
                 "disable class exclusion and the same-class match constraint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    io::ExperimentConfig cfg;
    if (!config_path.empty()) {
      try {
        cfg = io::load_config(config_path);
      } catch (const IoError& e) {
        throw ConfigError(e.what());
      }
    } else {
      cfg.data.master_seed = cfg.seed;
      cfg.train.seed = cfg.seed;
      cfg.validate();
    }
    if (*seed_opt) {
      cfg.seed = seed_override;
      cfg.data.master_seed = seed_override;
      cfg.train.seed = seed_override;
    }
    if (!out_override.empty()) cfg.out_dir = out_override;

    const fs::path root(cfg.out_dir);
    const fs::path corpus = corpus_arg.empty() ? root / "corpus" : fs::path(corpus_arg);
    const fs::path checkpoint =
        checkpoint_arg.empty() ? root / "train" / "best.ckpt" : fs::path(checkpoint_arg);

    if (gen->parsed()) {
      cmd_generate(cfg, root / "corpus", deterministic);
    } else if (train->parsed()) {
      cmd_train(cfg, corpus, root / "train", fs::path(resume_arg), deterministic);
    } else if (eval->parsed()) {
      cmd_eval(cfg, corpus, checkpoint, root / "eval", !no_semantic, plots, deterministic);
    } else if (exp->parsed()) {
      cmd_export(cfg, corpus, checkpoint, root / "export", !no_semantic, deterministic);
    } else if (rmse->parsed()) {
      cmd_rmse(cfg, fs::path(est_arg), fs::path(ref_arg), root / "rmse", deterministic);
    } else if (plot->parsed()) {
      const bool traj_mode = !est_arg.empty() || !ref_arg.empty();
      const bool match_mode = !corpus_arg.empty() || !checkpoint_arg.empty() || pair_index >= 0;
      if (traj_mode == match_mode)
        throw ConfigError("plot needs either --est/--ref or --corpus/--checkpoint/--pair");
      if (traj_mode) {
        if (est_arg.empty() || ref_arg.empty())
          throw ConfigError("trajectory plot needs both --est and --ref");
        cmd_plot_trajectory(cfg, fs::path(est_arg), fs::path(ref_arg), root / "plots",
                            deterministic);
      } else {
        cmd_plot_matches(cfg, corpus, checkpoint, pair_index < 0 ? 0 : pair_index,
                         root / "plots", !no_semantic, deterministic);
      }
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace semfeat::cli
