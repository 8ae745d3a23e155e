#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semfeat/geo/colmap.hpp"
#include "semfeat/geo/ply.hpp"
#include "semfeat/geo/trajectory.hpp"
#include "semfeat/io/config.hpp"
#include "semfeat/io/hash.hpp"
#include "semfeat/match/matcher.hpp"
#include "semfeat/match/metrics.hpp"
#include "semfeat/match/ransac.hpp"
#include "semfeat/model/checkpoint.hpp"
#include "semfeat/synth/corpus.hpp"
#include "semfeat/train/trainer.hpp"
#include "semfeat/viz/plot.hpp"

namespace semfeat::cli {

namespace fs = std::filesystem;

// Every command drops a run.json into its output directory: the resolved
// config, the seed, and content hashes of whatever it consumed, so a result
// can always be traced back to its inputs.
inline void write_run_json(const fs::path& out_dir, const std::string& command,
                           const io::ExperimentConfig& cfg, bool deterministic,
                           nlohmann::ordered_json inputs,
                           nlohmann::ordered_json outputs = nlohmann::ordered_json::object()) {
  fs::create_directories(out_dir);
  nlohmann::ordered_json run = {{"command", command},
                                {"seed", cfg.seed},
                                {"deterministic", deterministic},
                                {"config", io::config_json(cfg)},
                                {"inputs", std::move(inputs)},
                                {"outputs", std::move(outputs)}};
  run["config_hash"] = io::sha256_hex(run["config"].dump());
  std::ofstream f(out_dir / "run.json");
  if (!f) throw IoError("cannot write " + (out_dir / "run.json").string());
  f << run.dump(2) << "\n";
}

inline void check_corpus_compatible(const synth::CorpusIndex& index,
                                    const model::ModelConfig& m) {
  if (index.cfg.scene.num_classes != m.num_classes)
    throw ConfigError("corpus has " + std::to_string(index.cfg.scene.num_classes) +
                      " classes, model expects " + std::to_string(m.num_classes));
  model::require_divisible(index.cfg.scene.rows, index.cfg.scene.cols, m);
}

inline std::vector<synth::LabeledSample> load_samples(const synth::CorpusIndex& index, int from,
                                                      int to) {
  std::vector<synth::LabeledSample> out;
  for (int i = from; i < to; ++i) out.push_back(synth::load_sample(index, index.pairs[i]));
  return out;
}

inline void cmd_generate(const io::ExperimentConfig& cfg, const fs::path& out_dir,
                         bool deterministic) {
  synth::write_corpus(out_dir, cfg.data);
  const std::string corpus_hash = io::sha256_dir(out_dir);
  write_run_json(out_dir, "generate", cfg, deterministic, {},
                 {{"pair_count", cfg.data.pair_count}, {"corpus_hash", corpus_hash}});
  std::printf("wrote %d pairs to %s (corpus hash %s)\n", cfg.data.pair_count,
              out_dir.string().c_str(), corpus_hash.substr(0, 12).c_str());
}

inline void cmd_train(const io::ExperimentConfig& cfg, const fs::path& corpus_dir,
                      const fs::path& out_dir, const fs::path& resume, bool deterministic) {
  const synth::CorpusIndex index = synth::read_corpus(corpus_dir);
  check_corpus_compatible(index, cfg.model);

  const int n = int(index.pairs.size());
  const int n_val = std::min(cfg.val_pairs, n);
  const auto train_set = load_samples(index, 0, n - n_val);
  const auto val_set = load_samples(index, n - n_val, n);
  if (train_set.empty()) throw ConfigError("corpus has no training pairs after the split");

  nlohmann::ordered_json inputs = {
      {"corpus", corpus_dir.string()},
      {"corpus_manifest_hash", io::sha256_file(corpus_dir / "manifest.json")},
      {"train_pairs", int(train_set.size())},
      {"val_pairs", int(val_set.size())}};

  std::optional<train::Trainer<float>> trainer;
  if (resume.empty()) {
    trainer.emplace(cfg.train, model::Network<float>(cfg.model, Rng(cfg.seed)));
  } else {
    trainer.emplace(cfg.train, resume);
    inputs["resume"] = resume.string();
    inputs["resume_hash"] = io::sha256_file(resume);
  }
  write_run_json(out_dir, "train", cfg, deterministic, inputs);

  const auto result = trainer->run(train_set, val_set, out_dir);
  if (!result.train.empty())
    std::printf("trained %d epochs, final total loss %.6f\n", int(result.train.size()),
                result.train.back().total);
}

// One pair through the full matching pipeline. With the semantic switch off,
// excluded classes stay in and class agreement is not required.
struct PairEval {
  std::vector<match::Keypoint> kps_a, kps_b;  // the sets the matcher saw
  int raw_a = 0, raw_b = 0;
  match::MatchSet verified;
};

inline PairEval evaluate_pair(const model::Network<float>& net, const synth::LabeledSample& s,
                              const io::EvalConfig& ev, bool semantic,
                              std::uint64_t ransac_seed) {
  PairEval pe;
  const auto out_a = net.forward(s.image_a);
  const auto out_b = net.forward(s.image_b);
  pe.kps_a = match::extract_keypoints(out_a, ev.threshold, ev.nms_radius, ev.max_keypoints);
  pe.kps_b = match::extract_keypoints(out_b, ev.threshold, ev.nms_radius, ev.max_keypoints);
  pe.raw_a = int(pe.kps_a.size());
  pe.raw_b = int(pe.kps_b.size());
  if (semantic && !ev.excluded_classes.empty()) {
    pe.kps_a = match::semantic_filter(pe.kps_a, ev.excluded_classes);
    pe.kps_b = match::semantic_filter(pe.kps_b, ev.excluded_classes);
  }

  match::MatchConfig mc;
  mc.ratio = ev.ratio;
  mc.same_class_required = semantic && ev.same_class_required;
  const match::MatchSet ms = match::match(pe.kps_a, pe.kps_b, mc);

  match::RansacConfig rc;
  rc.threshold_px = ev.ransac_threshold_px;
  rc.iterations = ev.ransac_iterations;
  rc.seed = ransac_seed;
  pe.verified = match::verify_homography(ms, pe.kps_a, pe.kps_b, rc);
  return pe;
}

struct EvalSummary {
  int pairs = 0;
  int recall_defined = 0, inlier_defined = 0;
  double recall_sum = 0, inlier_sum = 0, ransac_inlier_sum = 0;
  int ransac_defined = 0;

  std::optional<double> recall_mean() const {
    if (!recall_defined) return std::nullopt;
    return recall_sum / recall_defined;
  }
  std::optional<double> inlier_mean() const {
    if (!inlier_defined) return std::nullopt;
    return inlier_sum / inlier_defined;
  }
  std::optional<double> ransac_inlier_mean() const {
    if (!ransac_defined) return std::nullopt;
    return ransac_inlier_sum / ransac_defined;
  }
};

inline nlohmann::ordered_json opt_json(std::optional<double> v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline EvalSummary run_eval(const model::Network<float>& net, const synth::CorpusIndex& index,
                            const io::ExperimentConfig& cfg, bool semantic,
                            const fs::path& out_dir, int plot_count,
                            std::ostream* jsonl = nullptr) {
  EvalSummary sum;
  for (std::size_t i = 0; i < index.pairs.size(); ++i) {
    const synth::LabeledSample s = synth::load_sample(index, index.pairs[i]);
    const PairEval pe =
        evaluate_pair(net, s, cfg.eval, semantic, Rng(cfg.seed).fork(i).next_u64());
    const match::MatchMetrics m =
        match::compute_metrics(pe.verified, s.h, pe.kps_a, pe.kps_b, cfg.eval.eps_px);

    int ransac_inliers = 0;
    for (bool f : pe.verified.inlier_flags) ransac_inliers += f ? 1 : 0;
    std::optional<double> ransac_ratio;
    if (!pe.verified.matches.empty())
      ransac_ratio = 100.0 * ransac_inliers / double(pe.verified.matches.size());

    sum.pairs += 1;
    if (m.keypoint_recall) {
      sum.recall_sum += *m.keypoint_recall;
      sum.recall_defined += 1;
    }
    if (m.inlier_ratio) {
      sum.inlier_sum += *m.inlier_ratio;
      sum.inlier_defined += 1;
    }
    if (ransac_ratio) {
      sum.ransac_inlier_sum += *ransac_ratio;
      sum.ransac_defined += 1;
    }

    if (jsonl) {
      nlohmann::ordered_json line = {{"name", index.pairs[i].name},
                                     {"keypoints_a", pe.raw_a},
                                     {"keypoints_b", pe.raw_b},
                                     {"kept_a", int(pe.kps_a.size())},
                                     {"kept_b", int(pe.kps_b.size())},
                                     {"matches", int(pe.verified.matches.size())},
                                     {"ransac_inliers", ransac_inliers},
                                     {"keypoint_recall", opt_json(m.keypoint_recall)},
                                     {"inlier_ratio", opt_json(m.inlier_ratio)},
                                     {"inlier_ratio_ransac", opt_json(ransac_ratio)}};
      *jsonl << line.dump() << "\n";
    }
    if (int(i) < plot_count)
      viz::write_match_overlay(out_dir / (index.pairs[i].name + "_matches.png"), s.image_a,
                               s.image_b, pe.kps_a, pe.kps_b, pe.verified);
  }
  return sum;
}

inline void cmd_eval(const io::ExperimentConfig& cfg, const fs::path& corpus_dir,
                     const fs::path& checkpoint, const fs::path& out_dir, bool semantic,
                     int plot_count, bool deterministic) {
  const synth::CorpusIndex index = synth::read_corpus(corpus_dir);
  const model::Network<float> net = model::load_network<float>(checkpoint);
  check_corpus_compatible(index, net.config());

  fs::create_directories(out_dir);
  std::ofstream jsonl(out_dir / "eval.jsonl");
  if (!jsonl) throw IoError("cannot write " + (out_dir / "eval.jsonl").string());

  if (index.pairs.empty())
    std::cerr << "warning: corpus has no pairs, metrics will be null\n";

  const EvalSummary sum = run_eval(net, index, cfg, semantic, out_dir, plot_count, &jsonl);

  std::ofstream csv(out_dir / "summary.csv");
  if (!csv) throw IoError("cannot write " + (out_dir / "summary.csv").string());
  csv << "Method,Keypoint Recall %,Inlier Ratio %\n";
  char row[128];
  if (sum.recall_mean() && sum.inlier_mean())
    std::snprintf(row, sizeof row, "Ours,%.1f,%.1f\n", *sum.recall_mean(), *sum.inlier_mean());
  else
    std::snprintf(row, sizeof row, "Ours,,\n");
  csv << row;

  nlohmann::ordered_json summary = {
      {"pairs", sum.pairs},
      {"keypoint_recall_mean", opt_json(sum.recall_mean())},
      {"inlier_ratio_mean", opt_json(sum.inlier_mean())},
      {"inlier_ratio_ransac_mean", opt_json(sum.ransac_inlier_mean())},
      {"recall_defined_on", sum.recall_defined},
      {"inlier_defined_on", sum.inlier_defined},
      {"semantic_filter", semantic},
      {"excluded_classes", cfg.eval.excluded_classes},
      {"same_class_required", semantic && cfg.eval.same_class_required},
      {"eps_px", cfg.eval.eps_px}};
  std::ofstream sf(out_dir / "summary.json");
  if (!sf) throw IoError("cannot write " + (out_dir / "summary.json").string());
  sf << summary.dump(2) << "\n";

  write_run_json(out_dir, "eval", cfg, deterministic,
                 {{"corpus", corpus_dir.string()},
                  {"corpus_manifest_hash", io::sha256_file(corpus_dir / "manifest.json")},
                  {"checkpoint", checkpoint.string()},
                  {"checkpoint_hash", io::sha256_file(checkpoint)}},
                 {{"summary", summary}});

  if (sum.recall_mean() && sum.inlier_mean())
    std::printf("%d pairs: keypoint recall %.1f%%, inlier ratio %.1f%%\n", sum.pairs,
                *sum.recall_mean(), *sum.inlier_mean());
  else
    std::printf("%d pairs: metrics undefined\n", sum.pairs);
}

inline void cmd_export(const io::ExperimentConfig& cfg, const fs::path& corpus_dir,
                       const fs::path& checkpoint, const fs::path& out_dir, bool semantic,
                       bool deterministic) {
  const synth::CorpusIndex index = synth::read_corpus(corpus_dir);
  const model::Network<float> net = model::load_network<float>(checkpoint);
  check_corpus_compatible(index, net.config());

  fs::create_directories(out_dir / "features");
  std::vector<geo::MatchBlock> blocks;
  std::vector<std::pair<Eigen::Vector3d, int>> cloud_points;
  int feature_files = 0;

  for (std::size_t i = 0; i < index.pairs.size(); ++i) {
    const synth::LabeledSample s = synth::load_sample(index, index.pairs[i]);
    const PairEval pe =
        evaluate_pair(net, s, cfg.eval, semantic, Rng(cfg.seed).fork(i).next_u64());

    const std::string name_a = index.pairs[i].name + "_a.png";
    const std::string name_b = index.pairs[i].name + "_b.png";
    geo::write_colmap_features(out_dir / "features" / (name_a + ".txt"), pe.kps_a);
    geo::write_colmap_features(out_dir / "features" / (name_b + ".txt"), pe.kps_b);
    feature_files += 2;

    geo::MatchBlock block;
    block.image_a = name_a;
    block.image_b = name_b;
    for (const match::Match& m : pe.verified.matches)
      block.pairs.push_back({m.index_a, m.index_b});
    blocks.push_back(std::move(block));

    // planar keypoints stacked one layer per pair, so the cloud stays viewable
    if (cfg.exp.point_cloud)
      for (const match::Keypoint& k : pe.kps_a)
        cloud_points.push_back({{k.x, k.y, double(i)}, k.semantic_class});
  }

  geo::write_colmap_matches(out_dir / "matches.txt", blocks);
  if (cfg.exp.point_cloud) {
    const geo::SemanticPointCloud cloud =
        geo::colorize_cloud(cloud_points, net.config().num_classes);
    geo::write_ply(out_dir / "cloud.ply", cloud);
  }

  int total_matches = 0;
  for (const auto& b : blocks) total_matches += int(b.pairs.size());
  nlohmann::ordered_json manifest = {
      {"feature_files", feature_files},
      {"match_blocks", int(blocks.size())},
      {"matches", total_matches},
      {"point_cloud", cfg.exp.point_cloud ? nlohmann::ordered_json("cloud.ply")
                                          : nlohmann::ordered_json(nullptr)},
      {"cloud_points", int(cloud_points.size())},
      {"descriptor_conversion",
       "unit-float descriptors mapped linearly from [-1,1] to bytes 0..255, padded with zeros "
       "or truncated to 128 dims; matches are imported explicitly, so matching is unaffected"},
      {"geometric_verification",
       "match blocks carry the raw mutual-NN matches; downstream SfM performs its own "
       "verification"}};
  std::ofstream mf(out_dir / "export_manifest.json");
  if (!mf) throw IoError("cannot write " + (out_dir / "export_manifest.json").string());
  mf << manifest.dump(2) << "\n";

  write_run_json(out_dir, "export", cfg, deterministic,
                 {{"corpus", corpus_dir.string()},
                  {"corpus_manifest_hash", io::sha256_file(corpus_dir / "manifest.json")},
                  {"checkpoint", checkpoint.string()},
                  {"checkpoint_hash", io::sha256_file(checkpoint)}},
                 {{"manifest", manifest}});
  std::printf("exported %d feature files, %d match blocks, %d matches\n", feature_files,
              int(blocks.size()), total_matches);
}

inline void cmd_rmse(const io::ExperimentConfig& cfg, const fs::path& est_csv,
                     const fs::path& ref_csv, const fs::path& out_dir, bool deterministic) {
  const geo::Trajectory est = geo::read_trajectory_csv(est_csv);
  const geo::Trajectory ref = geo::read_trajectory_csv(ref_csv);

  const geo::SimilarityTransform sim = geo::align_trajectories(est, ref, false);
  const geo::SimilarityTransform rigid = geo::align_trajectories(est, ref, true);
  const double rmse_sim = geo::trajectory_rmse(est, ref, sim);
  const double rmse_rigid = geo::trajectory_rmse(est, ref, rigid);

  if (sim.degenerate) std::cerr << "warning: near-degenerate geometry, best-effort alignment\n";
  std::printf("similarity alignment: RMSE %.3f m (scale %.6f)\n", rmse_sim, sim.scale);
  std::printf("rigid alignment:      RMSE %.3f m\n", rmse_rigid);

  nlohmann::ordered_json report = {{"n", int(est.positions.size())},
                                   {"similarity_rmse_m", rmse_sim},
                                   {"similarity_scale", sim.scale},
                                   {"rigid_rmse_m", rmse_rigid},
                                   {"degenerate", sim.degenerate}};
  fs::create_directories(out_dir);
  std::ofstream rf(out_dir / "rmse_report.json");
  if (!rf) throw IoError("cannot write " + (out_dir / "rmse_report.json").string());
  rf << report.dump(2) << "\n";

  write_run_json(out_dir, "rmse", cfg, deterministic,
                 {{"estimated", est_csv.string()},
                  {"estimated_hash", io::sha256_file(est_csv)},
                  {"reference", ref_csv.string()},
                  {"reference_hash", io::sha256_file(ref_csv)}},
                 {{"report", report}});
}

inline void cmd_plot_matches(const io::ExperimentConfig& cfg, const fs::path& corpus_dir,
                             const fs::path& checkpoint, int pair_index, const fs::path& out_dir,
                             bool semantic, bool deterministic) {
  const synth::CorpusIndex index = synth::read_corpus(corpus_dir);
  const model::Network<float> net = model::load_network<float>(checkpoint);
  check_corpus_compatible(index, net.config());
  if (pair_index < 0 || pair_index >= int(index.pairs.size()))
    throw ConfigError("pair index " + std::to_string(pair_index) + " outside corpus of " +
                      std::to_string(index.pairs.size()));

  const synth::LabeledSample s = synth::load_sample(index, index.pairs[pair_index]);
  const PairEval pe = evaluate_pair(net, s, cfg.eval, semantic,
                                    Rng(cfg.seed).fork(std::uint64_t(pair_index)).next_u64());
  fs::create_directories(out_dir);
  const fs::path png = out_dir / (index.pairs[pair_index].name + "_matches.png");
  viz::write_match_overlay(png, s.image_a, s.image_b, pe.kps_a, pe.kps_b, pe.verified);

  write_run_json(out_dir, "plot", cfg, deterministic,
                 {{"corpus", corpus_dir.string()},
                  {"checkpoint", checkpoint.string()},
                  {"checkpoint_hash", io::sha256_file(checkpoint)},
                  {"pair_index", pair_index}},
                 {{"image", png.filename().string()}});
  std::printf("wrote %s (%d matches)\n", png.string().c_str(), int(pe.verified.matches.size()));
}

inline void cmd_plot_trajectory(const io::ExperimentConfig& cfg, const fs::path& est_csv,
                                const fs::path& ref_csv, const fs::path& out_dir,
                                bool deterministic) {
  const geo::Trajectory est = geo::read_trajectory_csv(est_csv);
  const geo::Trajectory ref = geo::read_trajectory_csv(ref_csv);
  const geo::SimilarityTransform t = geo::align_trajectories(est, ref, false);
  fs::create_directories(out_dir);
  const fs::path png = out_dir / "trajectory.png";
  viz::write_trajectory_plot(png, est, ref, t);

  write_run_json(out_dir, "plot", cfg, deterministic,
                 {{"estimated", est_csv.string()},
                  {"estimated_hash", io::sha256_file(est_csv)},
                  {"reference", ref_csv.string()},
                  {"reference_hash", io::sha256_file(ref_csv)}},
                 {{"image", png.filename().string()}});
  std::printf("wrote %s\n", png.string().c_str());
}

}  // namespace semfeat::cli
