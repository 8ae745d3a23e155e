#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "semfeat/io/png.hpp"
#include "semfeat/synth/scene.hpp"

namespace semfeat::synth {

inline constexpr int kGeneratorVersion = 1;

struct CorpusConfig {
  int pair_count = 100;
  SceneConfig scene;
  TransformRanges ranges;
  PairOptions pair_options;
  std::uint64_t master_seed = 1;
};

struct PairRecord {
  std::string name;
  std::uint64_t seed = 0;
  std::array<double, 9> h_row_major{};
};

struct CorpusIndex {
  std::filesystem::path dir;
  CorpusConfig cfg;
  std::vector<PairRecord> pairs;
};

namespace detail {

inline std::string pair_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "pair%05d", index);
  return buf;
}

inline nlohmann::ordered_json ranges_json(const TransformRanges& r) {
  return {{"rotation_deg", r.rotation_deg},
          {"translation_px", r.translation_px},
          {"scale_lo", r.scale_lo},
          {"scale_hi", r.scale_hi},
          {"perspective_jitter", r.perspective_jitter}};
}

inline TransformRanges ranges_from_json(const nlohmann::json& j) {
  TransformRanges r;
  r.rotation_deg = j.at("rotation_deg");
  r.translation_px = j.at("translation_px");
  r.scale_lo = j.at("scale_lo");
  r.scale_hi = j.at("scale_hi");
  r.perspective_jitter = j.at("perspective_jitter");
  return r;
}

}  // namespace detail

// Derives the per-pair scene and warp seeds from the master seed, renders
// every pair, and writes the directory layout:
//   images/*.png  labels/*.png  keypoints/*.png  pairs.jsonl  manifest.json
inline CorpusIndex write_corpus(const std::filesystem::path& dir, const CorpusConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.scene.validate();
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  fs::create_directories(dir / "keypoints");

  CorpusIndex index;
  index.dir = dir;
  index.cfg = cfg;

  std::ofstream jsonl(dir / "pairs.jsonl");
  if (!jsonl) throw IoError("cannot write " + (dir / "pairs.jsonl").string());

  Rng master(cfg.master_seed);
  for (int i = 0; i < cfg.pair_count; ++i) {
    Rng pair_rng = master.fork(std::uint64_t(i));
    const std::uint64_t scene_seed = pair_rng.next_u64();
    const std::uint64_t warp_seed = pair_rng.next_u64();

    const Scene scene = generate_scene(cfg.scene, scene_seed);
    const LabeledSample sample = build_pair(scene, cfg.ranges, warp_seed, cfg.pair_options);

    const std::string name = detail::pair_name(i);
    io::write_png(dir / "images" / (name + "_a.png"), io::to_u8(sample.image_a));
    io::write_png(dir / "images" / (name + "_b.png"), io::to_u8(sample.image_b));
    io::write_png(dir / "labels" / (name + "_a.png"), sample.gt_a.labels);
    io::write_png(dir / "labels" / (name + "_b.png"), sample.gt_b.labels);
    Mask kp_a = sample.gt_a.keypoint_map, kp_b = sample.gt_b.keypoint_map;
    for (std::size_t k = 0; k < kp_a.size(); ++k) kp_a[k] = kp_a[k] ? 255 : 0;
    for (std::size_t k = 0; k < kp_b.size(); ++k) kp_b[k] = kp_b[k] ? 255 : 0;
    io::write_png(dir / "keypoints" / (name + "_a.png"), kp_a);
    io::write_png(dir / "keypoints" / (name + "_b.png"), kp_b);

    PairRecord rec;
    rec.name = name;
    rec.seed = warp_seed;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rec.h_row_major[r * 3 + c] = sample.h.m(r, c);
    index.pairs.push_back(rec);

    nlohmann::ordered_json line = {{"name", name},
                                   {"image_a", "images/" + name + "_a.png"},
                                   {"image_b", "images/" + name + "_b.png"},
                                   {"labels_a", "labels/" + name + "_a.png"},
                                   {"labels_b", "labels/" + name + "_b.png"},
                                   {"keypoints_a", "keypoints/" + name + "_a.png"},
                                   {"keypoints_b", "keypoints/" + name + "_b.png"},
                                   {"h", rec.h_row_major},
                                   {"seed", rec.seed}};
    jsonl << line.dump() << "\n";
  }
  jsonl.close();

  nlohmann::ordered_json manifest = {
      {"generator_version", kGeneratorVersion},
      {"master_seed", cfg.master_seed},
      {"pair_count", cfg.pair_count},
      {"rows", cfg.scene.rows},
      {"cols", cfg.scene.cols},
      {"num_classes", cfg.scene.num_classes},
      {"shape_count", cfg.scene.shape_count},
      {"noise", cfg.scene.noise},
      {"ranges", detail::ranges_json(cfg.ranges)},
      {"dynamic_class", cfg.pair_options.dynamic_class},
      {"dynamic_shift_px", cfg.pair_options.dynamic_shift_px}};
  std::ofstream mf(dir / "manifest.json");
  if (!mf) throw IoError("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << "\n";
  return index;
}

inline CorpusIndex read_corpus(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(mf);

  CorpusIndex index;
  index.dir = dir;
  index.cfg.master_seed = manifest.at("master_seed");
  index.cfg.pair_count = manifest.at("pair_count");
  index.cfg.scene.rows = manifest.at("rows");
  index.cfg.scene.cols = manifest.at("cols");
  index.cfg.scene.num_classes = manifest.at("num_classes");
  index.cfg.scene.shape_count = manifest.at("shape_count");
  index.cfg.scene.noise = manifest.at("noise");
  index.cfg.ranges = detail::ranges_from_json(manifest.at("ranges"));
  index.cfg.pair_options.dynamic_class = manifest.at("dynamic_class");
  index.cfg.pair_options.dynamic_shift_px = manifest.at("dynamic_shift_px");

  std::ifstream jsonl(dir / "pairs.jsonl");
  if (!jsonl) throw IoError("cannot read " + (dir / "pairs.jsonl").string());
  std::string line;
  while (std::getline(jsonl, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    PairRecord rec;
    rec.name = j.at("name");
    rec.seed = j.at("seed");
    for (int k = 0; k < 9; ++k) rec.h_row_major[k] = j.at("h")[k];
    index.pairs.push_back(std::move(rec));
  }
  if (int(index.pairs.size()) != index.cfg.pair_count)
    throw IoError("corpus lists " + std::to_string(index.pairs.size()) + " pairs, manifest says " +
                  std::to_string(index.cfg.pair_count));
  return index;
}

// Loads one pair back as a float sample; the valid mask is recomputed from
// the stored homography.
inline LabeledSample load_sample(const CorpusIndex& index, const PairRecord& rec) {
  LabeledSample s;
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = rec.h_row_major[r * 3 + c];
  s.h = Homography::from_matrix(m);

  s.image_a = io::to_float<float>(io::read_png(index.dir / "images" / (rec.name + "_a.png")));
  s.image_b = io::to_float<float>(io::read_png(index.dir / "images" / (rec.name + "_b.png")));
  s.gt_a.labels = io::read_png(index.dir / "labels" / (rec.name + "_a.png"));
  s.gt_b.labels = io::read_png(index.dir / "labels" / (rec.name + "_b.png"));
  s.gt_a.keypoint_map = io::read_png(index.dir / "keypoints" / (rec.name + "_a.png"));
  s.gt_b.keypoint_map = io::read_png(index.dir / "keypoints" / (rec.name + "_b.png"));
  for (std::size_t k = 0; k < s.gt_a.keypoint_map.size(); ++k)
    s.gt_a.keypoint_map[k] = s.gt_a.keypoint_map[k] ? 1 : 0;
  for (std::size_t k = 0; k < s.gt_b.keypoint_map.size(); ++k)
    s.gt_b.keypoint_map[k] = s.gt_b.keypoint_map[k] ? 1 : 0;

  Tensor<float> ones(s.image_a.dim(0), s.image_a.dim(1), 1);
  ones.fill(1.0f);
  s.valid_mask = warp_image(ones, s.h).second;
  return s;
}

}  // namespace semfeat::synth
