#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semfeat/core/errors.hpp"
#include "semfeat/core/tensor.hpp"
#include "semfeat/loss/pairs.hpp"

namespace semfeat::loss {

template <class T>
inline constexpr T kProbEps = T(1e-7);

// std::clamp keeps NaN, so a blown-up prediction still surfaces as a
// non-finite loss instead of silently snapping to the boundary.
template <class T>
T clamp_prob(T p) {
  return std::clamp(p, kProbEps<T>, T(1) - kProbEps<T>);
}

// Binary cross-entropy over the keypoint heatmap. pos_weight scales the
// positive-pixel term; 1.0 keeps the plain form. mean divides by the counted
// pixels. A mask restricts the loss to pixels with defined ground truth.
template <class T>
T keypoint_loss(const Tensor<T>& heatmap, const Tensor<T>& g, const LossConfig& cfg,
                Tensor<T>* dheatmap = nullptr, const Tensor<std::uint8_t>* valid = nullptr) {
  require_shape(heatmap, g, "keypoint_loss");
  if (dheatmap) {
    *dheatmap = Tensor<T>(heatmap);
    dheatmap->set_zero();
  }
  std::size_t counted = heatmap.size();
  if (valid) {
    counted = 0;
    for (std::size_t i = 0; i < valid->size(); ++i) counted += (*valid)[i] ? 1 : 0;
    if (counted == 0) return T(0);
  }
  const T scale = cfg.reduction == Reduction::mean ? T(1) / T(counted) : T(1);
  T total = T(0);
  for (std::size_t i = 0; i < heatmap.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    const T p = clamp_prob(heatmap[i]);
    const T gv = g[i];
    const T w = gv > T(0.5) ? T(cfg.pos_weight) : T(1);
    total -= scale * (w * gv * std::log(p) + (T(1) - gv) * std::log(T(1) - p));
    if (dheatmap && heatmap[i] == p)
      (*dheatmap)[i] = scale * (-w * gv / p + (T(1) - gv) / (T(1) - p));
  }
  return total;
}

// Multi-class cross-entropy against one-hot targets, gradient w.r.t. the
// probability tensor.
template <class T>
T segmentation_loss(const Tensor<T>& probs, const Tensor<T>& y, const LossConfig& cfg,
                    Tensor<T>* dprobs = nullptr, const Tensor<std::uint8_t>* valid = nullptr) {
  require_shape(probs, y, "segmentation_loss");
  const int rows = probs.dim(0), cols = probs.dim(1), ch = probs.dim(2);
  if (dprobs) {
    *dprobs = Tensor<T>(probs);
    dprobs->set_zero();
  }
  std::size_t counted = std::size_t(rows) * cols;
  if (valid) {
    counted = 0;
    for (std::size_t i = 0; i < valid->size(); ++i) counted += (*valid)[i] ? 1 : 0;
    if (counted == 0) return T(0);
  }
  const T scale = cfg.reduction == Reduction::mean ? T(1) / T(counted) : T(1);
  T total = T(0);
  for (int u = 0; u < rows; ++u)
    for (int v = 0; v < cols; ++v) {
      if (valid && !(*valid)(u, v)) continue;
      T hot = T(0);
      for (int c = 0; c < ch; ++c) {
        const T yv = y(u, v, c);
        if (yv == T(0)) continue;
        hot += yv;
        const T p = clamp_prob(probs(u, v, c));
        total -= scale * yv * std::log(p);
        if (dprobs && probs(u, v, c) == p) (*dprobs)(u, v, c) = -scale * yv / p;
      }
      if (std::abs(hot - T(1)) > T(1e-6))
        throw ConfigError("segmentation_loss: target is not one-hot at pixel (" +
                          std::to_string(u) + ", " + std::to_string(v) + ")");
    }
  return total;
}

namespace detail {

template <class T>
T pair_sim(const Tensor<T>& a, const Tensor<T>& b, const PixelPair& p) {
  const int d = a.dim(2);
  T s = T(0);
  for (int c = 0; c < d; ++c) s += a(p.ya, p.xa, c) * b(p.yb, p.xb, c);
  return s;
}

template <class T>
void check_pair(const Tensor<T>& a, const Tensor<T>& b, const PixelPair& p) {
  if (p.ya < 0 || p.ya >= a.dim(0) || p.xa < 0 || p.xa >= a.dim(1) || p.yb < 0 ||
      p.yb >= b.dim(0) || p.xb < 0 || p.xb >= b.dim(1))
    throw ShapeError("descriptor_loss: pair index out of bounds");
}

}  // namespace detail

// Two-hinge contrastive loss over sampled correspondences: positives are
// pulled above margin m in cosine similarity, negatives pushed below
// margin_alpha. Pure sum, matching the pair budget rather than the image area.
template <class T>
T descriptor_loss(const Tensor<T>& desc_a, const Tensor<T>& desc_b, const PairSets& pairs,
                  double m, double margin_alpha, Tensor<T>* ddesc_a = nullptr,
                  Tensor<T>* ddesc_b = nullptr) {
  if (desc_a.rank() != 3 || desc_b.rank() != 3 || desc_a.dim(2) != desc_b.dim(2))
    throw ShapeError("descriptor_loss: expected HxWxd descriptor maps, got " +
                     desc_a.shape_str() + " and " + desc_b.shape_str());
  if (ddesc_a) {
    *ddesc_a = Tensor<T>(desc_a);
    ddesc_a->set_zero();
  }
  if (ddesc_b) {
    *ddesc_b = Tensor<T>(desc_b);
    ddesc_b->set_zero();
  }
  const int d = desc_a.dim(2);
  T total = T(0);
  const auto accumulate = [&](const PixelPair& p, T sign) {
    if (ddesc_a)
      for (int c = 0; c < d; ++c) (*ddesc_a)(p.ya, p.xa, c) += sign * desc_b(p.yb, p.xb, c);
    if (ddesc_b)
      for (int c = 0; c < d; ++c) (*ddesc_b)(p.yb, p.xb, c) += sign * desc_a(p.ya, p.xa, c);
  };
  for (const auto& p : pairs.positives) {
    detail::check_pair(desc_a, desc_b, p);
    const T hinge = T(m) - detail::pair_sim(desc_a, desc_b, p);
    if (hinge > T(0)) {
      total += hinge;
      accumulate(p, T(-1));
    }
  }
  for (const auto& p : pairs.negatives) {
    detail::check_pair(desc_a, desc_b, p);
    const T hinge = detail::pair_sim(desc_a, desc_b, p) - T(margin_alpha);
    if (hinge > T(0)) {
      total += hinge;
      accumulate(p, T(1));
    }
  }
  return total;
}

// Keeps the `count` negatives with the highest current similarity; positives
// pass through untouched.
template <class T>
PairSets select_hard_negatives(const Tensor<T>& desc_a, const Tensor<T>& desc_b,
                               const PairSets& pairs, int count) {
  PairSets out;
  out.positives = pairs.positives;
  std::vector<std::pair<T, std::size_t>> ranked;
  ranked.reserve(pairs.negatives.size());
  for (std::size_t i = 0; i < pairs.negatives.size(); ++i) {
    detail::check_pair(desc_a, desc_b, pairs.negatives[i]);
    ranked.push_back({detail::pair_sim(desc_a, desc_b, pairs.negatives[i]), i});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& l, const auto& r) { return l.first > r.first; });
  const std::size_t keep = std::min<std::size_t>(count, ranked.size());
  for (std::size_t i = 0; i < keep; ++i) out.negatives.push_back(pairs.negatives[ranked[i].second]);
  return out;
}

template <class T>
T total_loss(T l_kp, T l_desc, T l_seg, const LossConfig& cfg) {
  return T(cfg.weight_kp) * l_kp + T(cfg.weight_desc) * l_desc + T(cfg.weight_seg) * l_seg;
}

}  // namespace semfeat::loss
