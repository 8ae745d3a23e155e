#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "semfeat/match/keypoints.hpp"
#include "semfeat/synth/homography.hpp"

namespace semfeat::match {

struct Match {
  int index_a = -1, index_b = -1;
  double similarity = 0;
};

struct MatchSet {
  std::vector<Match> matches;
  std::vector<bool> inlier_flags;  // parallel to matches, set by verification
  synth::Homography model = synth::Homography::from_matrix(Eigen::Matrix3d::Identity());
  bool has_model = false;
};

struct MatchConfig {
  double ratio = 0.0;  // Lowe ratio on descriptor distance; <= 0 disables
  bool same_class_required = true;
};

namespace detail {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Distance between unit vectors expressed through similarity.
inline double sim_to_dist(double s) { return std::sqrt(std::max(0.0, 2.0 - 2.0 * s)); }

struct Best {
  int index = -1;
  double sim = 0;
  double second_sim = -2.0;  // runner-up from a different index
};

inline Best best_neighbor(const Keypoint& query, const std::vector<Keypoint>& cands,
                          bool same_class) {
  Best b;
  double best = -2.0;
  for (std::size_t j = 0; j < cands.size(); ++j) {
    if (same_class && cands[j].semantic_class != query.semantic_class) continue;
    const double s = cosine(query.descriptor, cands[j].descriptor);
    if (s > best) {
      b.second_sim = best;
      best = s;
      b.index = int(j);
      b.sim = s;
    } else if (s > b.second_sim) {
      b.second_sim = s;
    }
  }
  return b;
}

inline bool passes_ratio(const Best& b, double ratio) {
  if (ratio <= 0) return true;
  if (b.second_sim <= -2.0) return true;  // no runner-up to compare against
  return sim_to_dist(b.sim) <= ratio * sim_to_dist(b.second_sim);
}

}  // namespace detail

// Mutual nearest neighbors under cosine similarity. The class constraint
// restricts the candidate pool on both sides, and the ratio test (when on)
// must hold in both directions so match(a, b) mirrors match(b, a).
inline MatchSet match(const std::vector<Keypoint>& kps_a, const std::vector<Keypoint>& kps_b,
                      const MatchConfig& cfg = {}) {
  MatchSet out;
  if (kps_a.empty() || kps_b.empty()) return out;

  std::vector<detail::Best> fwd(kps_a.size()), bwd(kps_b.size());
  for (std::size_t i = 0; i < kps_a.size(); ++i)
    fwd[i] = detail::best_neighbor(kps_a[i], kps_b, cfg.same_class_required);
  for (std::size_t j = 0; j < kps_b.size(); ++j)
    bwd[j] = detail::best_neighbor(kps_b[j], kps_a, cfg.same_class_required);

  for (std::size_t i = 0; i < kps_a.size(); ++i) {
    const detail::Best& f = fwd[i];
    if (f.index < 0) continue;
    if (bwd[std::size_t(f.index)].index != int(i)) continue;
    if (!detail::passes_ratio(f, cfg.ratio)) continue;
    if (!detail::passes_ratio(bwd[std::size_t(f.index)], cfg.ratio)) continue;
    out.matches.push_back({int(i), f.index, f.sim});
  }
  out.inlier_flags.assign(out.matches.size(), false);
  return out;
}

}  // namespace semfeat::match
