#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "semfeat/synth/corpus.hpp"
#include "semfeat/train/trainer.hpp"

using namespace semfeat;

namespace {

model::ModelConfig tiny_model() {
  model::ModelConfig m;
  m.depth = 1;
  m.base_channels = 4;
  m.d_enc = 8;
  m.d_task = 4;
  m.d_attn = 4;
  m.d_desc = 8;
  m.num_classes = 3;
  return m;
}

std::vector<synth::LabeledSample> make_samples(int n, std::uint64_t seed,
                                               int shape_count = 3) {
  synth::SceneConfig sc;
  sc.rows = 32;
  sc.cols = 32;
  sc.num_classes = 3;
  sc.shape_count = shape_count;
  synth::TransformRanges ranges;
  std::vector<synth::LabeledSample> out;
  Rng r(seed);
  for (int i = 0; i < n; ++i) {
    const synth::Scene scene = synth::generate_scene(sc, r.next_u64());
    out.push_back(synth::build_pair(scene, ranges, r.next_u64()));
  }
  return out;
}

template <class T>
std::vector<Tensor<T>> snapshot(const model::Network<T>& net) {
  std::vector<Tensor<T>> out;
  net.for_each_param(
      [&](const std::string&, const Tensor<T>& t, int) { out.push_back(t); });
  return out;
}

template <class T>
std::vector<std::string> param_names(const model::Network<T>& net) {
  std::vector<std::string> out;
  net.for_each_param(
      [&](const std::string& name, const Tensor<T>&, int) { out.push_back(name); });
  return out;
}

template <class T>
std::vector<Tensor<T>> snapshot_params(const model::NetworkParams<T>& p,
                                       const model::ModelConfig& cfg) {
  std::vector<Tensor<T>> out;
  model::Network<T>::visit_params(
      p, cfg, [&](const std::string&, const Tensor<T>& t, int) { out.push_back(t); });
  return out;
}

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

std::filesystem::path fresh_dir(const std::string& leaf) {
  const auto dir = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("train config validation", "[trainer]") {
  train::TrainConfig cfg;
  REQUIRE_NOTHROW(cfg.validate());

  train::TrainConfig bad = cfg;
  bad.warmup_epochs = bad.epochs + 1;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.epochs = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.checkpoint_every = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.eval_every = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);

  CHECK(cfg.frozen_levels_for(3) == 2);
  CHECK(cfg.frozen_levels_for(4) == 2);
  CHECK(cfg.frozen_levels_for(1) == 1);
  cfg.frozen_prefix_levels = 0;
  CHECK(cfg.frozen_levels_for(3) == 0);
}

TEST_CASE("optimizer first step matches the closed form", "[trainer]") {
  model::Network<double> net(tiny_model(), Rng(11));
  train::OptimizerConfig oc;
  oc.learning_rate = 0.01;
  oc.weight_decay = 0.1;
  train::AdamW<double> opt(oc, net);

  const auto before = snapshot(net);
  auto grads = net.zero_grads();
  model::Network<double>::visit_params(
      grads, net.config(), [](const std::string&, Tensor<double>& g, int) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.5;
      });
  opt.step(net, grads);

  // Step 1: bias-corrected moments reduce to g and g^2, so the update is
  // lr * (g / (|g| + eps) + wd * p).
  const double g = 0.5;
  const double upd = g / (std::abs(g) + oc.eps);
  std::size_t idx = 0;
  net.for_each_param([&](const std::string&, const Tensor<double>& t, int) {
    const Tensor<double>& b = before[idx++];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double expect = b[i] - oc.learning_rate * (upd + oc.weight_decay * b[i]);
      REQUIRE(t[i] == Catch::Approx(expect).margin(1e-14));
    }
  });

  model::Network<double>::visit_params(
      opt.first_moments(), net.config(), [&](const std::string&, Tensor<double>& m, int) {
        for (std::size_t i = 0; i < m.size(); ++i)
          REQUIRE(m[i] == Catch::Approx(0.05).margin(1e-15));
      });
  model::Network<double>::visit_params(
      opt.second_moments(), net.config(), [&](const std::string&, Tensor<double>& v, int) {
        for (std::size_t i = 0; i < v.size(); ++i)
          REQUIRE(v[i] == Catch::Approx(0.00025).margin(1e-15));
      });
  for (const auto t : opt.step_counts()) REQUIRE(t == 1);
}

TEST_CASE("optimizer degenerate steps", "[trainer]") {
  SECTION("zero learning rate leaves parameters untouched") {
    model::Network<double> net(tiny_model(), Rng(3));
    train::OptimizerConfig oc;
    oc.learning_rate = 0.0;
    train::AdamW<double> opt(oc, net);
    const auto before = snapshot(net);
    auto grads = net.zero_grads();
    model::Network<double>::visit_params(
        grads, net.config(), [](const std::string&, Tensor<double>& t, int) {
          for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0;
        });
    opt.step(net, grads);
    std::size_t idx = 0;
    net.for_each_param([&](const std::string&, const Tensor<double>& t, int) {
      REQUIRE(bitwise_equal(t, before[idx++]));
    });
  }

  SECTION("zero gradient without decay is a no-op") {
    model::Network<double> net(tiny_model(), Rng(3));
    train::OptimizerConfig oc;
    oc.weight_decay = 0.0;
    train::AdamW<double> opt(oc, net);
    const auto before = snapshot(net);
    const auto grads = net.zero_grads();
    opt.step(net, grads);
    std::size_t idx = 0;
    net.for_each_param([&](const std::string&, const Tensor<double>& t, int) {
      REQUIRE(bitwise_equal(t, before[idx++]));
    });
  }

  SECTION("zero gradient with decay shrinks weights multiplicatively") {
    model::Network<double> net(tiny_model(), Rng(3));
    train::OptimizerConfig oc;
    oc.learning_rate = 0.1;
    oc.weight_decay = 0.5;
    train::AdamW<double> opt(oc, net);
    const auto before = snapshot(net);
    const auto grads = net.zero_grads();
    opt.step(net, grads);
    std::size_t idx = 0;
    net.for_each_param([&](const std::string&, const Tensor<double>& t, int) {
      const Tensor<double>& b = before[idx++];
      for (std::size_t i = 0; i < t.size(); ++i)
        REQUIRE(t[i] == Catch::Approx(b[i] * (1.0 - 0.1 * 0.5)).margin(1e-15));
    });
  }
}

TEST_CASE("frozen parameters are skipped entirely", "[trainer]") {
  model::ModelConfig mc = tiny_model();
  mc.depth = 2;
  model::Network<double> net(mc, Rng(5));
  train::AdamW<double> opt(train::OptimizerConfig{}, net);

  const auto before = snapshot(net);
  const auto names = param_names(net);
  auto grads = net.zero_grads();
  model::Network<double>::visit_params(
      grads, net.config(), [](const std::string&, Tensor<double>& t, int) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.3;
      });
  const auto frozen = [](const std::string&, int enc_level) { return enc_level == 0; };
  for (int k = 0; k < 3; ++k) opt.step(net, grads, frozen);

  std::size_t idx = 0;
  net.for_each_param([&](const std::string& name, const Tensor<double>& t, int enc_level) {
    if (enc_level == 0) {
      INFO(name);
      REQUIRE(bitwise_equal(t, before[idx]));
    } else {
      REQUIRE_FALSE(bitwise_equal(t, before[idx]));
    }
    ++idx;
  });

  // Moments and per-parameter step counts of frozen entries never advanced.
  model::Network<double>::visit_params(
      opt.first_moments(), net.config(),
      [&](const std::string&, Tensor<double>& m, int enc_level) {
        if (enc_level != 0) return;
        for (std::size_t i = 0; i < m.size(); ++i) REQUIRE(m[i] == 0.0);
      });
  std::size_t entry = 0;
  net.for_each_param([&](const std::string&, const Tensor<double>&, int enc_level) {
    REQUIRE(opt.step_counts()[entry] == (enc_level == 0 ? 0 : 3));
    ++entry;
  });
}

TEST_CASE("warm-up keeps the frozen encoder prefix bit-exact", "[trainer]") {
  model::ModelConfig mc = tiny_model();
  mc.depth = 2;

  train::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 2;
  cfg.batch_size = 2;
  cfg.optim.learning_rate = 1e-3;
  const auto samples = make_samples(3, 91);

  train::Trainer<float> trainer(cfg, model::Network<float>(mc, Rng(20)));
  const auto before = snapshot(trainer.network());

  trainer.run_epoch(samples, 0);
  trainer.run_epoch(samples, 1);
  std::size_t idx = 0;
  trainer.network().for_each_param(
      [&](const std::string& name, const Tensor<float>& t, int enc_level) {
        INFO(name);
        if (enc_level == 0)
          REQUIRE(bitwise_equal(t, before[idx]));
        else
          REQUIRE_FALSE(bitwise_equal(t, before[idx]));
        ++idx;
      });

  trainer.run_epoch(samples, 2);
  idx = 0;
  bool level0_moved = false;
  trainer.network().for_each_param(
      [&](const std::string&, const Tensor<float>& t, int enc_level) {
        if (enc_level == 0 && !bitwise_equal(t, before[idx])) level0_moved = true;
        ++idx;
      });
  REQUIRE(level0_moved);

  SECTION("disabling warm-up trains everything from the start") {
    train::TrainConfig open = cfg;
    open.warmup_enabled = false;
    train::Trainer<float> t2(open, model::Network<float>(mc, Rng(20)));
    const auto init = snapshot(t2.network());
    t2.run_epoch(samples, 0);
    std::size_t k = 0;
    bool moved = false;
    t2.network().for_each_param(
        [&](const std::string&, const Tensor<float>& t, int enc_level) {
          if (enc_level == 0 && !bitwise_equal(t, init[k])) moved = true;
          ++k;
        });
    REQUIRE(moved);
  }
}

TEST_CASE("training is deterministic in the seed", "[trainer]") {
  const auto samples = make_samples(3, 17);
  train::TrainConfig cfg;
  cfg.batch_size = 2;

  train::Trainer<float> a(cfg, model::Network<float>(tiny_model(), Rng(8)));
  train::Trainer<float> b(cfg, model::Network<float>(tiny_model(), Rng(8)));
  const auto la = a.run_epoch(samples, 0);
  const auto lb = b.run_epoch(samples, 0);
  REQUIRE(la.total == lb.total);
  REQUIRE(la.kp == lb.kp);
  REQUIRE(la.desc == lb.desc);
  REQUIRE(la.seg == lb.seg);

  const auto pa = snapshot(a.network());
  const auto pb = snapshot(b.network());
  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(bitwise_equal(pa[i], pb[i]));
}

TEST_CASE("identity pair loss composition", "[trainer]") {
  synth::SceneConfig sc;
  sc.rows = 32;
  sc.cols = 32;
  sc.num_classes = 3;
  sc.shape_count = 3;
  const synth::Scene scene = synth::generate_scene(sc, 77);

  synth::LabeledSample s;
  s.image_a = scene.image;
  s.image_b = scene.image;
  s.h = synth::Homography::from_matrix(Eigen::Matrix3d::Identity());
  s.gt_a = {scene.keypoints, scene.labels};
  s.gt_b = s.gt_a;
  s.valid_mask = synth::Mask(sc.rows, sc.cols);
  for (std::size_t i = 0; i < s.valid_mask.size(); ++i) s.valid_mask[i] = 1;

  train::TrainConfig cfg;
  train::Trainer<float> trainer(cfg, model::Network<float>(tiny_model(), Rng(30)));
  const auto l = trainer.pair_loss(s, 123);

  const auto out = trainer.network().forward(scene.image);
  Tensor<float> kp_target(sc.rows, sc.cols);
  for (std::size_t i = 0; i < kp_target.size(); ++i)
    kp_target[i] = scene.keypoints[i] ? 1.0f : 0.0f;
  const auto seg_target = synth::one_hot<float>(scene.labels, 3);

  // Both views are the same image with a full valid mask, so each averaged
  // term collapses to the single-view loss.
  const double kp = double(loss::keypoint_loss(out.heatmap, kp_target, cfg.loss));
  const double seg = double(loss::segmentation_loss(out.segmentation, seg_target, cfg.loss));
  CHECK(l.kp == Catch::Approx(kp).margin(1e-9));
  CHECK(l.seg == Catch::Approx(seg).margin(1e-9));
  CHECK(l.total ==
        Catch::Approx(cfg.loss.weight_kp * float(l.kp) + cfg.loss.weight_desc * float(l.desc) +
                      cfg.loss.weight_seg * float(l.seg))
            .margin(1e-6));
}

TEST_CASE("loss descends when overfitting one pair", "[trainer]") {
  const auto samples = make_samples(1, 55);
  train::TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.warmup_enabled = false;
  cfg.optim.learning_rate = 2e-3;

  train::Trainer<float> trainer(cfg, model::Network<float>(tiny_model(), Rng(40)));
  const auto first = trainer.run_epoch(samples, 0);
  train::LossBreakdown last;
  for (int e = 1; e < 40; ++e) last = trainer.run_epoch(samples, e);
  REQUIRE(std::isfinite(last.total));
  REQUIRE(last.total < 0.8 * first.total);
}

TEST_CASE("checkpoint round-trip restores the exact trainer state", "[trainer]") {
  const auto dir = fresh_dir("semfeat_ckpt_roundtrip");
  const auto samples = make_samples(2, 5);

  train::TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.warmup_enabled = false;
  train::Trainer<float> trainer(cfg, model::Network<float>(tiny_model(), Rng(1)));
  trainer.run_epoch(samples, 0);
  trainer.save_checkpoint(dir / "state.ckpt", 0);

  train::Trainer<float> restored(cfg, dir / "state.ckpt");
  REQUIRE(restored.next_epoch() == 1);
  REQUIRE(restored.optimizer().step_counts() == trainer.optimizer().step_counts());

  const auto pa = snapshot(trainer.network());
  const auto pb = snapshot(restored.network());
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(bitwise_equal(pa[i], pb[i]));

  const auto ma = snapshot_params(trainer.optimizer().first_moments(), trainer.network().config());
  const auto mb = snapshot_params(restored.optimizer().first_moments(), restored.network().config());
  for (std::size_t i = 0; i < ma.size(); ++i) REQUIRE(bitwise_equal(ma[i], mb[i]));

  SECTION("scalar type mismatch is rejected") {
    REQUIRE_THROWS_AS(model::load_network<double>(dir / "state.ckpt"), IoError);
  }

  SECTION("truncated archive is rejected") {
    std::ifstream in(dir / "state.ckpt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(dir / "cut.ckpt", std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() / 2));
    out.close();
    REQUIRE_THROWS_AS((train::Trainer<float>(cfg, dir / "cut.ckpt")), IoError);
  }

  SECTION("missing file is rejected") {
    REQUIRE_THROWS_AS((train::Trainer<float>(cfg, dir / "absent.ckpt")), IoError);
  }
}

TEST_CASE("resume reproduces the uninterrupted run exactly", "[trainer]") {
  const auto dir_a = fresh_dir("semfeat_resume_a");
  const auto dir_b = fresh_dir("semfeat_resume_b");
  const auto train_set = make_samples(4, 21);
  const auto val_set = make_samples(1, 22);

  train::TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 2;
  cfg.warmup_epochs = 2;
  cfg.checkpoint_every = 2;
  cfg.optim.learning_rate = 1e-3;

  train::Trainer<float> full(cfg, model::Network<float>(tiny_model(), Rng(2)));
  const auto res_full = full.run(train_set, val_set, dir_a);
  REQUIRE(res_full.train.size() == 4);
  REQUIRE(std::filesystem::exists(dir_a / "epoch_0001.ckpt"));
  REQUIRE(std::filesystem::exists(dir_a / "epoch_0003.ckpt"));
  REQUIRE(std::filesystem::exists(dir_a / "best.ckpt"));

  train::Trainer<float> resumed(cfg, dir_a / "epoch_0001.ckpt");
  REQUIRE(resumed.next_epoch() == 2);
  const auto res_resumed = resumed.run(train_set, val_set, dir_b);
  REQUIRE(res_resumed.train.size() == 2);

  // Bit-exact: epoch RNG streams depend only on (seed, epoch) and the
  // checkpoint restores parameters, moments, and step counts.
  REQUIRE(res_resumed.train[0].total == res_full.train[2].total);
  REQUIRE(res_resumed.train[1].total == res_full.train[3].total);
  REQUIRE(res_resumed.train[1].kp == res_full.train[3].kp);
  REQUIRE(res_resumed.train[1].desc == res_full.train[3].desc);
  REQUIRE(res_resumed.train[1].seg == res_full.train[3].seg);

  const auto pa = snapshot(full.network());
  const auto pb = snapshot(resumed.network());
  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(bitwise_equal(pa[i], pb[i]));
}

TEST_CASE("metrics log and checkpoint cadence", "[trainer]") {
  const auto dir = fresh_dir("semfeat_metrics");
  const auto train_set = make_samples(2, 31);
  const auto val_set = make_samples(1, 32);

  train::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 2;
  cfg.checkpoint_every = 2;
  cfg.eval_every = 2;
  train::Trainer<float> trainer(cfg, model::Network<float>(tiny_model(), Rng(9)));
  const auto res = trainer.run(train_set, val_set, dir);

  REQUIRE(res.val.size() == 2);
  CHECK(res.val[0].epoch == 1);
  CHECK(res.val[1].epoch == 2);

  std::ifstream f(dir / "metrics.jsonl");
  REQUIRE(f.good());
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    const auto j = nlohmann::json::parse(line);
    REQUIRE(j.at("epoch") == n);
    REQUIRE(j.contains("train_total"));
    REQUIRE(j.contains("frozen_encoder_levels"));
    const bool expect_val = (n + 1) % 2 == 0 || n + 1 == cfg.epochs;
    REQUIRE(j.contains("val_total") == expect_val);
    if (expect_val) {
      REQUIRE(j.contains("val_pixel_accuracy"));
      REQUIRE(j.contains("val_keypoint_ap"));
    }
    ++n;
  }
  REQUIRE(n == 3);
  REQUIRE(std::filesystem::exists(dir / "epoch_0001.ckpt"));
  REQUIRE(std::filesystem::exists(dir / "epoch_0002.ckpt"));
  REQUIRE(std::filesystem::exists(dir / "best.ckpt"));
}

TEST_CASE("non-finite loss aborts with a numeric error", "[trainer]") {
  const auto samples = make_samples(1, 61);
  train::TrainConfig cfg;
  cfg.batch_size = 1;
  train::Trainer<float> trainer(cfg, model::Network<float>(tiny_model(), Rng(12)));
  trainer.network().for_each_param(
      [&](const std::string& name, Tensor<float>& t, int) {
        if (name != "dec.kp.head.b") return;
        for (std::size_t i = 0; i < t.size(); ++i)
          t[i] = std::numeric_limits<float>::quiet_NaN();
      });
  REQUIRE_THROWS_AS(trainer.run_epoch(samples, 0), NumericError);
}

TEST_CASE("average precision closed forms", "[trainer]") {
  using train::average_precision;
  CHECK(average_precision({}) == 0.0);
  CHECK(average_precision({{0.9, false}, {0.1, false}}) == 0.0);
  CHECK(average_precision({{0.9, true}, {0.1, true}}) == 1.0);
  // Ranks: hit at 1 (precision 1) and hit at 3 (precision 2/3).
  CHECK(average_precision({{0.9, true}, {0.8, false}, {0.7, true}}) ==
        Catch::Approx((1.0 + 2.0 / 3.0) / 2.0));
  // Perfect scores in reversed insertion order still sort by score.
  CHECK(average_precision({{0.1, false}, {0.9, true}}) == 1.0);
}

TEST_CASE("evaluation accuracy tracks the segmentation argmax", "[trainer]") {
  // Empty scene: every label is background. Pin the segmentation head to
  // class 0 and accuracy must be exactly 1; pin it elsewhere and it is 0.
  const auto samples = make_samples(1, 71, 0);
  train::TrainConfig cfg;
  train::Trainer<float> trainer(cfg, model::Network<float>(tiny_model(), Rng(13)));

  const auto pin = [&](int cls) {
    trainer.network().for_each_param(
        [&](const std::string& name, Tensor<float>& t, int) {
          if (name == "dec.seg.head.w") t.set_zero();
          if (name == "dec.seg.head.b")
            for (std::size_t i = 0; i < t.size(); ++i)
              t[i] = (int(i) == cls) ? 5.0f : -5.0f;
        });
  };

  pin(0);
  auto m = trainer.evaluate(samples);
  CHECK(m.pixel_accuracy == 1.0);
  CHECK(m.keypoint_ap == 0.0);  // no corners in an empty scene

  pin(1);
  m = trainer.evaluate(samples);
  CHECK(m.pixel_accuracy == 0.0);
}
