#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "semfeat/core/errors.hpp"
#include "semfeat/core/tensor.hpp"
#include "semfeat/model/network.hpp"

namespace semfeat::match {

struct Keypoint {
  double x = 0, y = 0;
  double score = 0;
  int semantic_class = 0;
  std::vector<double> descriptor;
};

// Bilinear descriptor lookup at a sub-pixel position, renormalized to unit
// length. Falls back to e1 when the interpolated vector vanishes, matching
// the network's own convention.
template <class T>
std::vector<double> sample_descriptor(const Tensor<T>& desc, double x, double y) {
  const int rows = desc.dim(0), cols = desc.dim(1), d = desc.dim(2);
  x = std::clamp(x, 0.0, double(cols - 1));
  y = std::clamp(y, 0.0, double(rows - 1));
  const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  const int x1 = std::min(x0 + 1, cols - 1), y1 = std::min(y0 + 1, rows - 1);
  const double fx = x - x0, fy = y - y0;

  std::vector<double> out(static_cast<std::size_t>(d));
  double norm2 = 0;
  for (int c = 0; c < d; ++c) {
    const double v = (1 - fy) * ((1 - fx) * double(desc(y0, x0, c)) + fx * double(desc(y0, x1, c))) +
                     fy * ((1 - fx) * double(desc(y1, x0, c)) + fx * double(desc(y1, x1, c)));
    out[std::size_t(c)] = v;
    norm2 += v * v;
  }
  if (norm2 < 1e-24) {
    std::fill(out.begin(), out.end(), 0.0);
    out[0] = 1.0;
    return out;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& v : out) v *= inv;
  return out;
}

template <class T>
int class_at(const Tensor<T>& seg, double x, double y) {
  const int rows = seg.dim(0), cols = seg.dim(1), ch = seg.dim(2);
  const int xi = std::clamp(int(std::lround(x)), 0, cols - 1);
  const int yi = std::clamp(int(std::lround(y)), 0, rows - 1);
  int arg = 0;
  for (int c = 1; c < ch; ++c)
    if (seg(yi, xi, c) > seg(yi, xi, arg)) arg = c;
  return arg;
}

// Greedy non-maximum suppression over the heatmap: strongest pixels above
// threshold win, anything within nms_radius of a winner is dropped. Output
// is score-descending; ties break on row-major pixel order.
template <class T>
std::vector<Keypoint> extract_keypoints(const model::MultiTaskOutput<T>& out, double threshold,
                                        int nms_radius, int max_count) {
  if (nms_radius < 0) throw ConfigError("extract_keypoints: nms_radius must be >= 0");
  if (max_count < 0) throw ConfigError("extract_keypoints: max_count must be >= 0");
  const int rows = out.heatmap.dim(0), cols = out.heatmap.dim(1);

  std::vector<std::pair<double, int>> candidates;  // (-score, linear index)
  for (int i = 0; i < rows * cols; ++i)
    if (double(out.heatmap[std::size_t(i)]) > threshold)
      candidates.push_back({-double(out.heatmap[std::size_t(i)]), i});
  std::sort(candidates.begin(), candidates.end());

  const double r2 = double(nms_radius) * double(nms_radius);
  std::vector<Keypoint> kept;
  for (const auto& [neg_score, idx] : candidates) {
    if (int(kept.size()) >= max_count) break;
    const double x = idx % cols, y = idx / cols;
    bool suppressed = false;
    for (const Keypoint& k : kept) {
      const double dx = k.x - x, dy = k.y - y;
      if (dx * dx + dy * dy <= r2) {
        suppressed = true;
        break;
      }
    }
    if (suppressed) continue;
    Keypoint k;
    k.x = x;
    k.y = y;
    k.score = -neg_score;
    k.semantic_class = class_at(out.segmentation, x, y);
    k.descriptor = sample_descriptor(out.descriptors, x, y);
    kept.push_back(std::move(k));
  }
  return kept;
}

inline std::vector<Keypoint> semantic_filter(const std::vector<Keypoint>& kps,
                                             const std::vector<int>& excluded_classes) {
  std::vector<Keypoint> kept;
  kept.reserve(kps.size());
  for (const Keypoint& k : kps)
    if (std::find(excluded_classes.begin(), excluded_classes.end(), k.semantic_class) ==
        excluded_classes.end())
      kept.push_back(k);
  return kept;
}

}  // namespace semfeat::match
