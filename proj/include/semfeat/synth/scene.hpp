#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "semfeat/core/errors.hpp"
#include "semfeat/core/rng.hpp"
#include "semfeat/core/tensor.hpp"
#include "semfeat/synth/warp.hpp"

namespace semfeat::synth {

struct SceneConfig {
  int rows = 64;
  int cols = 64;
  int shape_count = 6;
  int num_classes = 6;  // class 0 is background
  double noise = 0.01;  // per-pixel texture amplitude

  void validate() const {
    if (rows < 8 || cols < 8) throw ConfigError("scene dimensions must be at least 8x8");
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (shape_count < 0) throw ConfigError("shape_count must be non-negative");
    if (noise < 0) throw ConfigError("noise must be non-negative");
  }
};

// A scene element: one or more convex parts sharing a class and intensity.
// Part corners double as ground-truth keypoints.
struct Shape {
  int class_id = 1;
  double intensity = 0.5;
  std::vector<std::vector<Eigen::Vector2d>> parts;

  void translate(double dx, double dy) {
    for (auto& part : parts)
      for (auto& v : part) v += Eigen::Vector2d(dx, dy);
  }
};

struct Scene {
  Tensor<float> image;          // H x W x 3, values in [0,1]
  Tensor<std::uint8_t> labels;  // H x W class indices
  Mask keypoints;               // H x W binary corner map
  std::vector<Shape> shapes;
  SceneConfig cfg;
  std::uint64_t texture_seed = 0;
};

namespace detail {

inline bool inside_convex(const std::vector<Eigen::Vector2d>& poly, double x, double y) {
  const int n = int(poly.size());
  int sign = 0;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d& a = poly[i];
    const Eigen::Vector2d& b = poly[(i + 1) % n];
    const double cross = (b.x() - a.x()) * (y - a.y()) - (b.y() - a.y()) * (x - a.x());
    if (std::abs(cross) < 1e-12) continue;  // on the edge counts as inside
    const int s = cross > 0 ? 1 : -1;
    if (sign == 0)
      sign = s;
    else if (s != sign)
      return false;
  }
  return true;
}

// Low-saturation tint so class identity shows in both hue and intensity.
inline void class_tint(int class_id, double intensity, float rgb[3]) {
  if (class_id == 0) {
    for (int c = 0; c < 3; ++c) rgb[c] = float(intensity);
    return;
  }
  const double hue = std::fmod(0.618033988749895 * class_id, 1.0) * 6.0;
  const int sector = int(hue) % 6;
  const double f = hue - std::floor(hue);
  const double sat = 0.25;
  const double p = 1.0 - sat, q = 1.0 - sat * f, t = 1.0 - sat * (1.0 - f);
  double r = 1, g = 1, b = 1;
  switch (sector) {
    case 0: g = t; b = p; break;
    case 1: r = q; b = p; break;
    case 2: r = p; b = t; break;
    case 3: r = p; g = q; break;
    case 4: r = t; g = p; break;
    default: g = p; b = q; break;
  }
  rgb[0] = float(intensity * r);
  rgb[1] = float(intensity * g);
  rgb[2] = float(intensity * b);
}

inline double class_intensity(int class_id, int num_classes, Rng& rng) {
  const int fg = num_classes - 1;
  const double band = 0.6 / fg;
  const double center = 0.3 + (class_id - 0.5) * band;
  return center + rng.uniform(-0.2, 0.2) * band;
}

}  // namespace detail

// Rectangles, regular polygons, stripe bands, and checkerboards, each mapped
// to a class in 1..num_classes-1 by primitive type.
inline std::vector<Shape> sample_shapes(const SceneConfig& cfg, Rng& rng) {
  std::vector<Shape> shapes;
  const int fg_classes = cfg.num_classes - 1;
  for (int i = 0; i < cfg.shape_count; ++i) {
    const int type = rng.uniform_int(std::min(4, fg_classes));
    Shape s;
    s.class_id = 1 + type % fg_classes;
    s.intensity = detail::class_intensity(s.class_id, cfg.num_classes, rng);
    const double cx = rng.uniform(0.15, 0.85) * cfg.cols;
    const double cy = rng.uniform(0.15, 0.85) * cfg.rows;
    const double side = std::min(cfg.rows, cfg.cols);

    if (type == 0) {  // axis-aligned rectangle
      const double hw = rng.uniform(0.06, 0.18) * side;
      const double hh = rng.uniform(0.06, 0.18) * side;
      s.parts.push_back({{cx - hw, cy - hh}, {cx + hw, cy - hh}, {cx + hw, cy + hh},
                         {cx - hw, cy + hh}});
    } else if (type == 1) {  // regular polygon
      const int k = 3 + rng.uniform_int(4);
      const double r = rng.uniform(0.08, 0.2) * side;
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      std::vector<Eigen::Vector2d> poly;
      for (int j = 0; j < k; ++j) {
        const double a = phase + 2.0 * M_PI * j / k;
        poly.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
      }
      s.parts.push_back(std::move(poly));
    } else if (type == 2) {  // stripe band
      const int stripes = 3 + rng.uniform_int(3);
      const double len = rng.uniform(0.2, 0.4) * side;
      const double width = rng.uniform(0.02, 0.04) * side + 1.0;
      const double gap = width * rng.uniform(1.5, 2.5);
      const double angle = rng.uniform(0.0, M_PI);
      const Eigen::Vector2d dir(std::cos(angle), std::sin(angle));
      const Eigen::Vector2d perp(-dir.y(), dir.x());
      for (int j = 0; j < stripes; ++j) {
        const Eigen::Vector2d base =
            Eigen::Vector2d(cx, cy) + perp * (j - (stripes - 1) / 2.0) * gap;
        s.parts.push_back({base - dir * len / 2 - perp * width / 2,
                           base + dir * len / 2 - perp * width / 2,
                           base + dir * len / 2 + perp * width / 2,
                           base - dir * len / 2 + perp * width / 2});
      }
    } else {  // checkerboard patch
      const double cell = rng.uniform(0.08, 0.14) * side;
      const int nx = 3 + rng.uniform_int(2);
      const int ny = 3 + rng.uniform_int(2);
      const double x0 = cx - nx * cell / 2, y0 = cy - ny * cell / 2;
      for (int gy = 0; gy < ny; ++gy)
        for (int gx = 0; gx < nx; ++gx) {
          if ((gx + gy) % 2) continue;
          const double px = x0 + gx * cell, py = y0 + gy * cell;
          s.parts.push_back({{px, py}, {px + cell, py}, {px + cell, py + cell},
                             {px, py + cell}});
        }
    }
    shapes.push_back(std::move(s));
  }
  return shapes;
}

inline Scene render_scene(std::vector<Shape> shapes, const SceneConfig& cfg,
                          std::uint64_t texture_seed) {
  cfg.validate();
  Scene scene;
  scene.cfg = cfg;
  scene.texture_seed = texture_seed;
  scene.image = Tensor<float>(cfg.rows, cfg.cols, 3);
  scene.labels = Tensor<std::uint8_t>(cfg.rows, cfg.cols);
  scene.keypoints = Mask(cfg.rows, cfg.cols);

  Rng tex(texture_seed);
  const double bg = tex.uniform(0.08, 0.2);
  Tensor<float> noise(cfg.rows, cfg.cols);
  for (std::size_t i = 0; i < noise.size(); ++i)
    noise[i] = float(tex.uniform(-cfg.noise, cfg.noise));

  for (int y = 0; y < cfg.rows; ++y)
    for (int x = 0; x < cfg.cols; ++x)
      for (int c = 0; c < 3; ++c) scene.image(y, x, c) = float(bg) + noise(y, x);

  for (const auto& s : shapes) {
    float rgb[3];
    detail::class_tint(s.class_id, s.intensity, rgb);
    for (const auto& part : s.parts) {
      double minx = 1e30, miny = 1e30, maxx = -1e30, maxy = -1e30;
      for (const auto& v : part) {
        minx = std::min(minx, v.x());
        maxx = std::max(maxx, v.x());
        miny = std::min(miny, v.y());
        maxy = std::max(maxy, v.y());
      }
      const int x0 = std::max(0, int(std::floor(minx)));
      const int x1 = std::min(cfg.cols - 1, int(std::ceil(maxx)));
      const int y0 = std::max(0, int(std::floor(miny)));
      const int y1 = std::min(cfg.rows - 1, int(std::ceil(maxy)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (!detail::inside_convex(part, x, y)) continue;
          scene.labels(y, x) = std::uint8_t(s.class_id);
          scene.keypoints(y, x) = 0;
          for (int c = 0; c < 3; ++c)
            scene.image(y, x, c) = std::clamp(rgb[c] + noise(y, x), 0.0f, 1.0f);
        }
    }
    // corners marked after painting; shapes painted later clear any they cover
    for (const auto& part : s.parts)
      for (const auto& v : part) {
        const int x = int(std::lround(v.x())), y = int(std::lround(v.y()));
        if (x < 0 || x >= cfg.cols || y < 0 || y >= cfg.rows) continue;
        scene.keypoints(y, x) = 1;
      }
  }
  scene.shapes = std::move(shapes);
  return scene;
}

inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  auto shapes = sample_shapes(cfg, rng);
  return render_scene(std::move(shapes), cfg, rng.next_u64());
}

struct KeypointDetectConfig {
  double edge_threshold = 0.08;    // Sobel magnitude floor
  double corner_rel = 0.01;        // Harris response floor, relative to max
  double harris_k = 0.06;
};

// Sobel gradients -> Harris corner response -> threshold by edge strength and
// relative response -> 3x3 local-maximum thinning. For ingesting images that
// carry no constructed ground truth.
template <class T>
Mask derive_keypoints_from_image(const Tensor<T>& image,
                                 const KeypointDetectConfig& cfg = {}) {
  const int rows = image.dim(0), cols = image.dim(1);
  Tensor<double> gray(rows, cols);
  if (image.rank() == 3) {
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x)
        gray(y, x) = (double(image(y, x, 0)) + image(y, x, 1) + image(y, x, 2)) / 3.0;
  } else {
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = double(image[i]);
  }

  Tensor<double> gx(rows, cols), gy(rows, cols);
  auto at = [&](int y, int x) {
    return gray(std::clamp(y, 0, rows - 1), std::clamp(x, 0, cols - 1));
  };
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      gx(y, x) = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                 (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      gy(y, x) = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                 (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
    }

  // Harris response over a 3x3 window
  Tensor<double> response(rows, cols);
  double max_r = 0.0;
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      double sxx = 0, syy = 0, sxy = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = std::clamp(y + dy, 0, rows - 1);
          const int xx = std::clamp(x + dx, 0, cols - 1);
          sxx += gx(yy, xx) * gx(yy, xx);
          syy += gy(yy, xx) * gy(yy, xx);
          sxy += gx(yy, xx) * gy(yy, xx);
        }
      response(y, x) = sxx * syy - sxy * sxy - cfg.harris_k * (sxx + syy) * (sxx + syy);
      max_r = std::max(max_r, response(y, x));
    }

  Mask out(rows, cols);
  if (max_r <= 0.0) return out;
  const double floor_r = cfg.corner_rel * max_r;
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      if (response(y, x) < floor_r) continue;
      if (std::hypot(gx(y, x), gy(y, x)) < cfg.edge_threshold * 8.0) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int yy = std::clamp(y + dy, 0, rows - 1);
          const int xx = std::clamp(x + dx, 0, cols - 1);
          if (response(yy, xx) > response(y, x)) {
            is_max = false;
            break;
          }
        }
      if (is_max) out(y, x) = 1;
    }
  return out;
}

struct PairOptions {
  int dynamic_class = -1;        // class whose shapes move between views; -1 disables
  double dynamic_shift_px = 6.0;
};

struct GroundTruthMaps {
  Mask keypoint_map;
  Tensor<std::uint8_t> labels;
};

struct LabeledSample {
  Tensor<float> image_a, image_b;
  Homography h;  // maps view-a pixel coordinates to view b
  GroundTruthMaps gt_a, gt_b;
  Mask valid_mask;
  TransformSpec spec;
};

template <class T>
Tensor<T> one_hot(const Tensor<std::uint8_t>& labels, int num_classes) {
  Tensor<T> out(labels.dim(0), labels.dim(1), num_classes);
  for (int y = 0; y < labels.dim(0); ++y)
    for (int x = 0; x < labels.dim(1); ++x) {
      if (labels(y, x) >= num_classes)
        throw ConfigError("one_hot: label " + std::to_string(int(labels(y, x))) +
                          " outside " + std::to_string(num_classes) + " classes");
      out(y, x, labels(y, x)) = T(1);
    }
  return out;
}

// Warps a scene into a two-view training sample. With a dynamic class set,
// its shapes additionally move between the views, so they violate the pair's
// homography on purpose.
inline LabeledSample build_pair(const Scene& scene, const TransformRanges& ranges,
                                std::uint64_t seed, const PairOptions& opts = {}) {
  Rng rng(seed);
  const auto sampled =
      sample_transform(ranges, scene.cfg.cols, scene.cfg.rows, rng.next_u64());

  const Scene* source_b = &scene;
  Scene displaced;
  if (opts.dynamic_class >= 0) {
    std::vector<Shape> moved = scene.shapes;
    for (auto& s : moved) {
      if (s.class_id != opts.dynamic_class) continue;
      const double mag = rng.uniform(0.5, 1.0) * opts.dynamic_shift_px;
      const double ang = rng.uniform(0.0, 2.0 * M_PI);
      s.translate(mag * std::cos(ang), mag * std::sin(ang));
    }
    displaced = render_scene(std::move(moved), scene.cfg, scene.texture_seed);
    source_b = &displaced;
  }

  LabeledSample out;
  out.spec = sampled.spec;
  out.h = sampled.h;
  out.image_a = scene.image;
  out.gt_a = {scene.keypoints, scene.labels};
  auto [img_b, mask] = warp_image(source_b->image, sampled.h);
  out.image_b = std::move(img_b);
  out.valid_mask = std::move(mask);
  out.gt_b.labels = warp_labels(source_b->labels, sampled.h).first;
  out.gt_b.keypoint_map = warp_keypoint_map(source_b->keypoints, sampled.h);
  return out;
}

}  // namespace semfeat::synth
