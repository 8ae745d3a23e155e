#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "semfeat/core/errors.hpp"
#include "semfeat/model/config.hpp"
#include "semfeat/synth/corpus.hpp"
#include "semfeat/train/trainer.hpp"

namespace semfeat::io {

// Keypoint extraction, matching, and verification knobs for evaluation.
struct EvalConfig {
  double threshold = 0.5;
  int nms_radius = 4;
  int max_keypoints = 256;
  double ratio = 0.0;  // 0 disables the ratio test
  bool same_class_required = true;
  std::vector<int> excluded_classes;
  double eps_px = 3.0;
  double ransac_threshold_px = 3.0;
  int ransac_iterations = 2000;

  void validate() const {
    if (nms_radius < 0) throw ConfigError("eval.nms_radius must be >= 0");
    if (max_keypoints < 0) throw ConfigError("eval.max_keypoints must be >= 0");
    if (ratio < 0 || ratio > 1) throw ConfigError("eval.ratio must be in [0, 1]");
    if (eps_px <= 0) throw ConfigError("eval.eps_px must be positive");
    if (ransac_threshold_px <= 0) throw ConfigError("eval.ransac_threshold_px must be positive");
    if (ransac_iterations < 1) throw ConfigError("eval.ransac_iterations must be positive");
  }
};

struct ExportConfig {
  bool point_cloud = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  synth::CorpusConfig data;
  int val_pairs = 0;  // trailing corpus pairs held out for validation
  model::ModelConfig model;
  train::TrainConfig train;
  EvalConfig eval;
  ExportConfig exp;

  void validate() const {
    data.scene.validate();
    model.validate();
    train.validate();
    eval.validate();
    if (val_pairs < 0 || val_pairs > data.pair_count)
      throw ConfigError("val_pairs must be in [0, pair_count]");
    if (model.num_classes != data.scene.num_classes)
      throw ConfigError("model.num_classes (" + std::to_string(model.num_classes) +
                        ") must match data.num_classes (" +
                        std::to_string(data.scene.num_classes) + ")");
    model::require_divisible(data.scene.rows, data.scene.cols, model);
    for (int c : eval.excluded_classes)
      if (c < 0 || c >= model.num_classes)
        throw ConfigError("eval.excluded_classes entry " + std::to_string(c) +
                          " outside 0.." + std::to_string(model.num_classes - 1));
  }
};

namespace detail {

// Pulls known keys out of `j`, then rejects whatever is left so typos fail
// loudly with their full path instead of silently using a default.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config: " + path_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.push_back(key);
    return j_.contains(key);
  }

  const nlohmann::json& sub(const char* key) {
    seen_.push_back(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ConfigError("config: unknown key " + path_ + "." + it.key());
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

inline void load_data(const nlohmann::json& j, synth::CorpusConfig& d, int& val_pairs) {
  Section s(j, "data");
  s.get("pair_count", d.pair_count);
  s.get("rows", d.scene.rows);
  s.get("cols", d.scene.cols);
  s.get("num_classes", d.scene.num_classes);
  s.get("shape_count", d.scene.shape_count);
  s.get("noise", d.scene.noise);
  s.get("rotation_deg", d.ranges.rotation_deg);
  s.get("translation_px", d.ranges.translation_px);
  s.get("scale_lo", d.ranges.scale_lo);
  s.get("scale_hi", d.ranges.scale_hi);
  s.get("perspective_jitter", d.ranges.perspective_jitter);
  s.get("dynamic_class", d.pair_options.dynamic_class);
  s.get("dynamic_shift_px", d.pair_options.dynamic_shift_px);
  s.get("val_pairs", val_pairs);
  s.finish();
}

inline void load_model(const nlohmann::json& j, model::ModelConfig& m) {
  Section s(j, "model");
  s.get("depth", m.depth);
  s.get("base_channels", m.base_channels);
  s.get("d_enc", m.d_enc);
  s.get("d_task", m.d_task);
  s.get("d_attn", m.d_attn);
  s.get("d_desc", m.d_desc);
  s.get("num_classes", m.num_classes);
  s.get("mixer_residual", m.mixer_residual);
  s.finish();
}

inline void load_loss(const nlohmann::json& j, loss::LossConfig& l) {
  Section s(j, "loss");
  s.get("weight_kp", l.weight_kp);
  s.get("weight_desc", l.weight_desc);
  s.get("weight_seg", l.weight_seg);
  s.get("margin_m", l.margin_m);
  s.get("margin_alpha", l.margin_alpha);
  s.get("eps_pos", l.eps_pos);
  s.get("eps_neg", l.eps_neg);
  s.get("pairs_per_image", l.pairs_per_image);
  s.get("pos_weight", l.pos_weight);
  s.get("hard_negatives", l.hard_negatives);
  s.finish();
}

inline void load_train(const nlohmann::json& j, train::TrainConfig& t) {
  Section s(j, "train");
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("warmup_epochs", t.warmup_epochs);
  s.get("frozen_prefix_levels", t.frozen_prefix_levels);
  s.get("warmup_enabled", t.warmup_enabled);
  s.get("checkpoint_every", t.checkpoint_every);
  s.get("eval_every", t.eval_every);
  s.get("learning_rate", t.optim.learning_rate);
  s.get("beta1", t.optim.beta1);
  s.get("beta2", t.optim.beta2);
  s.get("eps", t.optim.eps);
  s.get("weight_decay", t.optim.weight_decay);
  s.finish();
}

inline void load_eval(const nlohmann::json& j, EvalConfig& e) {
  Section s(j, "eval");
  s.get("threshold", e.threshold);
  s.get("nms_radius", e.nms_radius);
  s.get("max_keypoints", e.max_keypoints);
  s.get("ratio", e.ratio);
  s.get("same_class_required", e.same_class_required);
  s.get("excluded_classes", e.excluded_classes);
  s.get("eps_px", e.eps_px);
  s.get("ransac_threshold_px", e.ransac_threshold_px);
  s.get("ransac_iterations", e.ransac_iterations);
  s.finish();
}

inline void load_export(const nlohmann::json& j, ExportConfig& x) {
  Section s(j, "export");
  s.get("point_cloud", x.point_cloud);
  s.finish();
}

}  // namespace detail

// Missing keys keep their defaults; unknown keys are errors.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::Section top(j, "config");
  top.get("seed", cfg.seed);
  top.get("out_dir", cfg.out_dir);
  if (top.has("data")) detail::load_data(top.sub("data"), cfg.data, cfg.val_pairs);
  if (top.has("model")) detail::load_model(top.sub("model"), cfg.model);
  if (top.has("loss")) detail::load_loss(top.sub("loss"), cfg.train.loss);
  if (top.has("train")) detail::load_train(top.sub("train"), cfg.train);
  if (top.has("eval")) detail::load_eval(top.sub("eval"), cfg.eval);
  if (top.has("export")) detail::load_export(top.sub("export"), cfg.exp);
  top.finish();

  cfg.data.master_seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// Full resolved config, suitable both for run records and for re-loading.
inline nlohmann::ordered_json config_json(const ExperimentConfig& c) {
  return {
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"data",
       {{"pair_count", c.data.pair_count},
        {"rows", c.data.scene.rows},
        {"cols", c.data.scene.cols},
        {"num_classes", c.data.scene.num_classes},
        {"shape_count", c.data.scene.shape_count},
        {"noise", c.data.scene.noise},
        {"rotation_deg", c.data.ranges.rotation_deg},
        {"translation_px", c.data.ranges.translation_px},
        {"scale_lo", c.data.ranges.scale_lo},
        {"scale_hi", c.data.ranges.scale_hi},
        {"perspective_jitter", c.data.ranges.perspective_jitter},
        {"dynamic_class", c.data.pair_options.dynamic_class},
        {"dynamic_shift_px", c.data.pair_options.dynamic_shift_px},
        {"val_pairs", c.val_pairs}}},
      {"model",
       {{"depth", c.model.depth},
        {"base_channels", c.model.base_channels},
        {"d_enc", c.model.d_enc},
        {"d_task", c.model.d_task},
        {"d_attn", c.model.d_attn},
        {"d_desc", c.model.d_desc},
        {"num_classes", c.model.num_classes},
        {"mixer_residual", c.model.mixer_residual}}},
      {"loss",
       {{"weight_kp", c.train.loss.weight_kp},
        {"weight_desc", c.train.loss.weight_desc},
        {"weight_seg", c.train.loss.weight_seg},
        {"margin_m", c.train.loss.margin_m},
        {"margin_alpha", c.train.loss.margin_alpha},
        {"eps_pos", c.train.loss.eps_pos},
        {"eps_neg", c.train.loss.eps_neg},
        {"pairs_per_image", c.train.loss.pairs_per_image},
        {"pos_weight", c.train.loss.pos_weight},
        {"hard_negatives", c.train.loss.hard_negatives}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"warmup_epochs", c.train.warmup_epochs},
        {"frozen_prefix_levels", c.train.frozen_prefix_levels},
        {"warmup_enabled", c.train.warmup_enabled},
        {"checkpoint_every", c.train.checkpoint_every},
        {"eval_every", c.train.eval_every},
        {"learning_rate", c.train.optim.learning_rate},
        {"beta1", c.train.optim.beta1},
        {"beta2", c.train.optim.beta2},
        {"eps", c.train.optim.eps},
        {"weight_decay", c.train.optim.weight_decay}}},
      {"eval",
       {{"threshold", c.eval.threshold},
        {"nms_radius", c.eval.nms_radius},
        {"max_keypoints", c.eval.max_keypoints},
        {"ratio", c.eval.ratio},
        {"same_class_required", c.eval.same_class_required},
        {"excluded_classes", c.eval.excluded_classes},
        {"eps_px", c.eval.eps_px},
        {"ransac_threshold_px", c.eval.ransac_threshold_px},
        {"ransac_iterations", c.eval.ransac_iterations}}},
      {"export", {{"point_cloud", c.exp.point_cloud}}}};
}

}  // namespace semfeat::io
