#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "semfeat/core/errors.hpp"
#include "semfeat/core/rng.hpp"
#include "semfeat/synth/homography.hpp"

namespace semfeat::loss {

// A correspondence between a pixel in image A and a pixel in image B.
struct PixelPair {
  int ya = 0, xa = 0;
  int yb = 0, xb = 0;
};

struct PairSets {
  std::vector<PixelPair> positives;
  std::vector<PixelPair> negatives;
};

enum class Reduction { mean, sum };

struct LossConfig {
  double weight_kp = 1.0;    // alpha_w
  double weight_desc = 1.0;  // beta
  double weight_seg = 1.0;   // gamma
  double margin_m = 0.9;     // positive-pair margin m
  double margin_alpha = 0.2; // negative-pair margin alpha_m
  double eps_pos = 2.0;
  double eps_neg = 8.0;
  int pairs_per_image = 512;
  double pos_weight = 1.0;
  Reduction reduction = Reduction::mean;
  bool hard_negatives = false;

  void validate() const {
    if (weight_kp < 0 || weight_desc < 0 || weight_seg < 0)
      throw ConfigError("loss weights must be non-negative");
    if (!(margin_m > 0.0 && margin_m <= 1.0))
      throw ConfigError("margin_m must lie in (0, 1]");
    if (!(margin_alpha >= -1.0 && margin_alpha < 1.0))
      throw ConfigError("margin_alpha must lie in [-1, 1)");
    if (!(eps_pos < eps_neg)) throw ConfigError("eps_pos must be smaller than eps_neg");
    if (pairs_per_image <= 0) throw ConfigError("pairs_per_image must be positive");
    if (pos_weight < 0) throw ConfigError("pos_weight must be non-negative");
  }
};

// Samples positive correspondences (x, Hx) from uniformly drawn in-bounds
// anchors whose warp also lands in-bounds, and negatives (x, n) with n drawn
// uniformly among locations farther than eps_neg from the true warp. Both
// lists are capped at pairs_per_image and fully determined by the seed.
inline PairSets mine_pairs(const synth::Homography& h, int rows, int cols,
                           const LossConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PairSets out;
  Rng rng(seed);
  const int budget = cfg.pairs_per_image;
  const int max_draws = budget * 16;

  for (int draw = 0; draw < max_draws && int(out.positives.size()) < budget; ++draw) {
    const int xa = rng.uniform_int(cols);
    const int ya = rng.uniform_int(rows);
    const Eigen::Vector2d warped = h.apply(double(xa), double(ya));
    const int xbi = int(std::lround(warped.x()));
    const int ybi = int(std::lround(warped.y()));
    if (xbi < 0 || xbi >= cols || ybi < 0 || ybi >= rows) continue;
    out.positives.push_back({ya, xa, ybi, xbi});

    // negative anchored at the same location: random spot far from the warp
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int xn = rng.uniform_int(cols);
      const int yn = rng.uniform_int(rows);
      if (std::hypot(xn - warped.x(), yn - warped.y()) > cfg.eps_neg) {
        out.negatives.push_back({ya, xa, yn, xn});
        break;
      }
    }
  }
  if (int(out.negatives.size()) > budget) out.negatives.resize(budget);
  return out;
}

}  // namespace semfeat::loss
