#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "semfeat/core/rng.hpp"
#include "semfeat/loss/losses.hpp"
#include "semfeat/model/checkpoint.hpp"
#include "semfeat/model/network.hpp"
#include "semfeat/synth/scene.hpp"
#include "semfeat/train/optimizer.hpp"

namespace semfeat::train {

struct TrainConfig {
  OptimizerConfig optim;
  loss::LossConfig loss;
  int epochs = 100;
  int batch_size = 16;
  // During the first warmup_epochs the lowest frozen_prefix_levels encoder
  // levels stay untouched; -1 means ceil(depth / 2).
  int warmup_epochs = 20;
  int frozen_prefix_levels = -1;
  bool warmup_enabled = true;
  int checkpoint_every = 10;
  int eval_every = 1;
  std::uint64_t seed = 1;

  int frozen_levels_for(int depth) const {
    return frozen_prefix_levels < 0 ? (depth + 1) / 2 : frozen_prefix_levels;
  }

  void validate() const {
    loss.validate();
    if (epochs < 1) throw ConfigError("train.epochs must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
    if (warmup_epochs < 0) throw ConfigError("train.warmup_epochs must be >= 0");
    if (warmup_epochs > epochs)
      throw ConfigError("train.warmup_epochs cannot exceed train.epochs");
    if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be positive");
    if (eval_every < 1) throw ConfigError("train.eval_every must be positive");
    if (optim.learning_rate < 0) throw ConfigError("train.learning_rate must be >= 0");
  }
};

struct LossBreakdown {
  double kp = 0, desc = 0, seg = 0, total = 0;
};

struct EvalMetrics {
  LossBreakdown loss;
  double pixel_accuracy = 0;
  double keypoint_ap = 0;  // area under the precision-recall curve
};

// Average precision over a scored binary set: mean of precision@k over the
// positives, scores descending. Returns 0 when there are no positives.
inline double average_precision(std::vector<std::pair<double, bool>> scored) {
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::size_t hits = 0;
  double sum = 0;
  for (std::size_t k = 0; k < scored.size(); ++k) {
    if (!scored[k].second) continue;
    ++hits;
    sum += double(hits) / double(k + 1);
  }
  return hits ? sum / double(hits) : 0.0;
}

template <class T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, model::Network<T> net)
      : cfg_(cfg), net_(std::move(net)), opt_(cfg.optim, net_) {
    cfg_.validate();
  }

  // Resumes from a checkpoint written by run(). Training continues with the
  // epoch after the stored one and reproduces the uninterrupted run exactly.
  Trainer(TrainConfig cfg, const std::filesystem::path& checkpoint) : cfg_(cfg) {
    cfg_.validate();
    nlohmann::json meta;
    net_ = model::load_network<T>(checkpoint, &meta);
    opt_ = AdamW<T>(cfg_.optim, net_);
    std::vector<std::pair<std::string, Tensor<T>*>> moments;
    model::Network<T>::visit_params(opt_.first_moments(), net_.config(),
                                    [&](const std::string& name, Tensor<T>& t, int) {
                                      moments.push_back({"adam.m." + name, &t});
                                    });
    model::Network<T>::visit_params(opt_.second_moments(), net_.config(),
                                    [&](const std::string& name, Tensor<T>& t, int) {
                                      moments.push_back({"adam.v." + name, &t});
                                    });
    model::read_archive<T>(checkpoint, moments);
    opt_.step_counts() = meta.at("adam_steps").get<std::vector<std::int64_t>>();
    next_epoch_ = int(meta.at("epoch")) + 1;
  }

  const model::Network<T>& network() const { return net_; }
  model::Network<T>& network() { return net_; }
  AdamW<T>& optimizer() { return opt_; }
  int next_epoch() const { return next_epoch_; }

  bool frozen_at(int epoch, int enc_level) const {
    return cfg_.warmup_enabled && epoch < cfg_.warmup_epochs && enc_level >= 0 &&
           enc_level < cfg_.frozen_levels_for(net_.config().depth);
  }

  // Loss over one two-view sample. Keypoint and segmentation terms average the
  // two views, with view b restricted to pixels the warp kept valid. The
  // descriptor term uses correspondences mined from the pair's homography.
  // With grads non-null, gradients scaled by dout_scale are accumulated.
  LossBreakdown pair_loss(const synth::LabeledSample& s, std::uint64_t mine_seed,
                          model::NetworkParams<T>* grads = nullptr, double dout_scale = 1.0,
                          model::MultiTaskOutput<T>* keep_a = nullptr,
                          model::MultiTaskOutput<T>* keep_b = nullptr) const {
    const int rows = s.image_a.dim(0), cols = s.image_a.dim(1);
    const int num_classes = net_.config().num_classes;
    model::ForwardCache<T> cache_a, cache_b;
    const auto out_a = net_.forward(s.image_a, grads ? &cache_a : nullptr);
    const auto out_b = net_.forward(s.image_b, grads ? &cache_b : nullptr);

    const Tensor<T> kp_target_a = mask_to_real(s.gt_a.keypoint_map);
    const Tensor<T> kp_target_b = mask_to_real(s.gt_b.keypoint_map);
    const Tensor<T> seg_target_a = synth::one_hot<T>(s.gt_a.labels, num_classes);
    const Tensor<T> seg_target_b = synth::one_hot<T>(s.gt_b.labels, num_classes);

    loss::PairSets pairs = loss::mine_pairs(s.h, rows, cols, cfg_.loss, mine_seed);
    if (cfg_.loss.hard_negatives)
      pairs = loss::select_hard_negatives(out_a.descriptors, out_b.descriptors, pairs,
                                          int(pairs.positives.size()));

    LossBreakdown l;
    model::OutputGrads<T> da, db;
    Tensor<T>*const dkp_a = grads ? &da.heatmap : nullptr;
    Tensor<T>*const dkp_b = grads ? &db.heatmap : nullptr;
    Tensor<T>*const dseg_a = grads ? &da.segmentation : nullptr;
    Tensor<T>*const dseg_b = grads ? &db.segmentation : nullptr;
    Tensor<T>*const ddesc_a = grads ? &da.descriptors : nullptr;
    Tensor<T>*const ddesc_b = grads ? &db.descriptors : nullptr;

    l.kp = 0.5 * (double(loss::keypoint_loss(out_a.heatmap, kp_target_a, cfg_.loss, dkp_a)) +
                  double(loss::keypoint_loss(out_b.heatmap, kp_target_b, cfg_.loss, dkp_b,
                                             &s.valid_mask)));
    l.seg = 0.5 * (double(loss::segmentation_loss(out_a.segmentation, seg_target_a, cfg_.loss,
                                                  dseg_a)) +
                   double(loss::segmentation_loss(out_b.segmentation, seg_target_b, cfg_.loss,
                                                  dseg_b, &s.valid_mask)));
    l.desc = double(loss::descriptor_loss(out_a.descriptors, out_b.descriptors, pairs,
                                          cfg_.loss.margin_m, cfg_.loss.margin_alpha,
                                          ddesc_a, ddesc_b));
    l.total = double(loss::total_loss(T(l.kp), T(l.desc), T(l.seg), cfg_.loss));

    if (grads) {
      scale(da.heatmap, T(0.5 * cfg_.loss.weight_kp * dout_scale));
      scale(db.heatmap, T(0.5 * cfg_.loss.weight_kp * dout_scale));
      scale(da.segmentation, T(0.5 * cfg_.loss.weight_seg * dout_scale));
      scale(db.segmentation, T(0.5 * cfg_.loss.weight_seg * dout_scale));
      scale(da.descriptors, T(cfg_.loss.weight_desc * dout_scale));
      scale(db.descriptors, T(cfg_.loss.weight_desc * dout_scale));
      net_.backward(cache_a, da, *grads);
      net_.backward(cache_b, db, *grads);
    }
    if (keep_a) *keep_a = out_a;
    if (keep_b) *keep_b = out_b;
    return l;
  }

  // One pass over the samples in shuffled order, stepping after each batch.
  // Returns mean per-sample losses. The sample order and the pair-mining
  // seeds depend only on (seed, epoch), so a resumed run retraces them.
  LossBreakdown run_epoch(const std::vector<synth::LabeledSample>& samples, int epoch) {
    Rng er = Rng(cfg_.seed).fork(std::uint64_t(epoch));
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    er.shuffle(order);

    const auto frozen = [&](const std::string&, int enc_level) {
      return frozen_at(epoch, enc_level);
    };

    LossBreakdown mean;
    model::NetworkParams<T> grads = net_.zero_grads();
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t n = std::min(std::size_t(cfg_.batch_size), order.size() - done);
      zero(grads);
      for (std::size_t j = 0; j < n; ++j) {
        const synth::LabeledSample& s = samples[order[done + j]];
        const std::uint64_t mine_seed = er.next_u64();
        const LossBreakdown l = pair_loss(s, mine_seed, &grads, 1.0 / double(n));
        if (!std::isfinite(l.total))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                             ", sample " + std::to_string(order[done + j]) + ": kp=" +
                             std::to_string(l.kp) + " desc=" + std::to_string(l.desc) +
                             " seg=" + std::to_string(l.seg));
        mean.kp += l.kp;
        mean.desc += l.desc;
        mean.seg += l.seg;
        mean.total += l.total;
      }
      opt_.step(net_, grads, frozen);
      done += n;
    }
    const double inv = samples.empty() ? 0.0 : 1.0 / double(samples.size());
    mean.kp *= inv;
    mean.desc *= inv;
    mean.seg *= inv;
    mean.total *= inv;
    return mean;
  }

  // Loss and quality metrics without touching the parameters. Mining seeds
  // are fixed per sample index, so repeated evaluation is comparable.
  EvalMetrics evaluate(const std::vector<synth::LabeledSample>& samples) const {
    EvalMetrics m;
    std::vector<std::pair<double, bool>> scored;
    std::size_t correct = 0, counted = 0;
    Rng er = Rng(cfg_.seed).fork(0x9d5full);
    for (const synth::LabeledSample& s : samples) {
      model::MultiTaskOutput<T> out_a, out_b;
      const LossBreakdown l = pair_loss(s, er.next_u64(), nullptr, 1.0, &out_a, &out_b);
      m.loss.kp += l.kp;
      m.loss.desc += l.desc;
      m.loss.seg += l.seg;
      m.loss.total += l.total;
      tally(out_a, s.gt_a, nullptr, scored, correct, counted);
      tally(out_b, s.gt_b, &s.valid_mask, scored, correct, counted);
    }
    const double inv = samples.empty() ? 0.0 : 1.0 / double(samples.size());
    m.loss.kp *= inv;
    m.loss.desc *= inv;
    m.loss.seg *= inv;
    m.loss.total *= inv;
    m.pixel_accuracy = counted ? double(correct) / double(counted) : 0.0;
    m.keypoint_ap = average_precision(std::move(scored));
    return m;
  }

  struct ValPoint {
    int epoch;
    EvalMetrics metrics;
  };

  struct RunResult {
    std::vector<LossBreakdown> train;
    std::vector<ValPoint> val;
    double best_val_total = std::numeric_limits<double>::infinity();
  };

  // Full training loop. Writes metrics.jsonl, periodic checkpoints, and
  // best.ckpt (lowest validation total, train total when val is empty) under
  // out_dir. Resume picks up after the last stored epoch.
  RunResult run(const std::vector<synth::LabeledSample>& train_set,
                const std::vector<synth::LabeledSample>& val_set,
                const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::app);
    if (!metrics) throw IoError("cannot write " + (out_dir / "metrics.jsonl").string());

    RunResult res;
    for (int epoch = next_epoch_; epoch < cfg_.epochs; ++epoch) {
      const LossBreakdown tr = run_epoch(train_set, epoch);
      res.train.push_back(tr);
      const bool do_val = !val_set.empty() &&
                          ((epoch + 1) % cfg_.eval_every == 0 || epoch + 1 == cfg_.epochs);
      EvalMetrics va;
      if (do_val) {
        va = evaluate(val_set);
        res.val.push_back({epoch, va});
      }

      nlohmann::ordered_json line;
      line["epoch"] = epoch;
      line["train_kp"] = tr.kp;
      line["train_desc"] = tr.desc;
      line["train_seg"] = tr.seg;
      line["train_total"] = tr.total;
      if (do_val) {
        line["val_kp"] = va.loss.kp;
        line["val_desc"] = va.loss.desc;
        line["val_seg"] = va.loss.seg;
        line["val_total"] = va.loss.total;
        line["val_pixel_accuracy"] = va.pixel_accuracy;
        line["val_keypoint_ap"] = va.keypoint_ap;
      }
      line["frozen_encoder_levels"] =
          frozen_at(epoch, 0) ? cfg_.frozen_levels_for(net_.config().depth) : 0;
      metrics << line.dump() << "\n";
      metrics.flush();

      const double score = val_set.empty() ? tr.total : (do_val ? va.loss.total : res.best_val_total);
      if (score < res.best_val_total) {
        res.best_val_total = score;
        save_checkpoint(out_dir / "best.ckpt", epoch);
      }
      if ((epoch + 1) % cfg_.checkpoint_every == 0 || epoch + 1 == cfg_.epochs) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "epoch_%04d.ckpt", epoch);
        save_checkpoint(out_dir / buf, epoch);
      }
      next_epoch_ = epoch + 1;
    }
    return res;
  }

  void save_checkpoint(const std::filesystem::path& path, int epoch) const {
    std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
    net_.for_each_param([&](const std::string& name, const Tensor<T>& t, int) {
      tensors.push_back({"param." + name, &t});
    });
    model::Network<T>::visit_params(opt_.first_moments(), net_.config(),
                                    [&](const std::string& name, const Tensor<T>& t, int) {
                                      tensors.push_back({"adam.m." + name, &t});
                                    });
    model::Network<T>::visit_params(opt_.second_moments(), net_.config(),
                                    [&](const std::string& name, const Tensor<T>& t, int) {
                                      tensors.push_back({"adam.v." + name, &t});
                                    });
    nlohmann::ordered_json meta;
    meta["epoch"] = epoch;
    meta["adam_steps"] = opt_.step_counts();
    model::write_archive<T>(path, net_.config(), std::move(meta), tensors);
  }

 private:
  static Tensor<T> mask_to_real(const synth::Mask& m) {
    Tensor<T> out(m.dim(0), m.dim(1));
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] ? T(1) : T(0);
    return out;
  }

  static void scale(Tensor<T>& t, T f) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= f;
  }

  void zero(model::NetworkParams<T>& g) {
    model::Network<T>::visit_params(g, net_.config(),
                                    [](const std::string&, Tensor<T>& t, int) { t.set_zero(); });
  }

  void tally(const model::MultiTaskOutput<T>& out, const synth::GroundTruthMaps& gt,
             const synth::Mask* valid, std::vector<std::pair<double, bool>>& scored,
             std::size_t& correct, std::size_t& counted) const {
    const int rows = out.heatmap.dim(0), cols = out.heatmap.dim(1);
    const int ch = out.segmentation.dim(2);
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x) {
        if (valid && !(*valid)(y, x)) continue;
        scored.push_back({double(out.heatmap(y, x)), gt.keypoint_map(y, x) != 0});
        int arg = 0;
        for (int c = 1; c < ch; ++c)
          if (out.segmentation(y, x, c) > out.segmentation(y, x, arg)) arg = c;
        correct += (arg == gt.labels(y, x)) ? 1 : 0;
        ++counted;
      }
  }

  TrainConfig cfg_;
  model::Network<T> net_;
  AdamW<T> opt_;
  int next_epoch_ = 0;
};

}  // namespace semfeat::train
