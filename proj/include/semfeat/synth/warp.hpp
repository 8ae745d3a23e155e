#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "semfeat/core/tensor.hpp"
#include "semfeat/synth/homography.hpp"

namespace semfeat::synth {

using Mask = Tensor<std::uint8_t>;

// Inverse warp with bilinear sampling. Out-of-bounds pixels are zeroed and
// cleared in the mask.
template <class T>
std::pair<Tensor<T>, Mask> warp_image(const Tensor<T>& img, const Homography& h) {
  const int rows = img.dim(0), cols = img.dim(1), ch = img.dim(2);
  Tensor<T> out(rows, cols, ch);
  Mask valid(rows, cols);
  const Homography inv = h.inverse();
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const Eigen::Vector2d p = inv.apply(x, y);
      if (p.x() < 0.0 || p.x() > cols - 1 || p.y() < 0.0 || p.y() > rows - 1) continue;
      const int x0 = static_cast<int>(std::floor(p.x()));
      const int y0 = static_cast<int>(std::floor(p.y()));
      const int x1 = std::min(x0 + 1, cols - 1);
      const int y1 = std::min(y0 + 1, rows - 1);
      const double fx = p.x() - x0, fy = p.y() - y0;
      for (int c = 0; c < ch; ++c) {
        const double v00 = img(y0, x0, c), v01 = img(y0, x1, c);
        const double v10 = img(y1, x0, c), v11 = img(y1, x1, c);
        out(y, x, c) = static_cast<T>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                      fy * ((1 - fx) * v10 + fx * v11));
      }
      valid(y, x) = 1;
    }
  }
  return {std::move(out), std::move(valid)};
}

// Nearest-neighbor label warp; labels stay exact class indices. Out-of-bounds
// pixels get `fill` (background) and are cleared in the mask.
template <class L>
std::pair<Tensor<L>, Mask> warp_labels(const Tensor<L>& labels, const Homography& h,
                                       L fill = L(0)) {
  const int rows = labels.dim(0), cols = labels.dim(1);
  Tensor<L> out(rows, cols);
  out.fill(fill);
  Mask valid(rows, cols);
  const Homography inv = h.inverse();
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const Eigen::Vector2d p = inv.apply(x, y);
      const int sx = static_cast<int>(std::lround(p.x()));
      const int sy = static_cast<int>(std::lround(p.y()));
      if (sx < 0 || sx >= cols || sy < 0 || sy >= rows) continue;
      out(y, x) = labels(sy, sx);
      valid(y, x) = 1;
    }
  }
  return {std::move(out), std::move(valid)};
}

// Forward warp of a binary keypoint map with nearest-pixel snapping;
// collisions resolve by logical OR.
inline Mask warp_keypoint_map(const Mask& kp, const Homography& h) {
  const int rows = kp.dim(0), cols = kp.dim(1);
  Mask out(rows, cols);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      if (!kp(y, x)) continue;
      const Eigen::Vector2d p = h.apply(x, y);
      const int tx = static_cast<int>(std::lround(p.x()));
      const int ty = static_cast<int>(std::lround(p.y()));
      if (tx < 0 || tx >= cols || ty < 0 || ty >= rows) continue;
      out(ty, tx) = 1;
    }
  }
  return out;
}

}  // namespace semfeat::synth
