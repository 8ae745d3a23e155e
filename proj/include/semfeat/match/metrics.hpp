#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "semfeat/match/matcher.hpp"

namespace semfeat::match {

struct MatchMetrics {
  std::optional<double> keypoint_recall;  // percent, empty when no pair is co-visible
  std::optional<double> inlier_ratio;     // percent, empty when nothing was matched
  int gt_covisible = 0;
  int recovered = 0;
  int predicted = 0;
  int inliers = 0;
};

// Scores a match set against the known homography. A keypoint in a is
// co-visible when its warp lands within eps_px of some keypoint in b; a
// match is correct when its own pair satisfies the same bound. Undefined
// ratios stay empty instead of collapsing to 0/0.
inline MatchMetrics compute_metrics(const MatchSet& ms, const synth::Homography& gt,
                                    const std::vector<Keypoint>& kps_a,
                                    const std::vector<Keypoint>& kps_b, double eps_px = 3.0) {
  MatchMetrics m;
  for (const Keypoint& a : kps_a) {
    const Eigen::Vector2d w = gt.apply(a.x, a.y);
    for (const Keypoint& b : kps_b) {
      const double dx = w.x() - b.x, dy = w.y() - b.y;
      if (std::sqrt(dx * dx + dy * dy) <= eps_px) {
        ++m.gt_covisible;
        break;
      }
    }
  }
  m.predicted = int(ms.matches.size());
  for (const Match& match : ms.matches) {
    const Keypoint& a = kps_a[std::size_t(match.index_a)];
    const Keypoint& b = kps_b[std::size_t(match.index_b)];
    const Eigen::Vector2d w = gt.apply(a.x, a.y);
    const double dx = w.x() - b.x, dy = w.y() - b.y;
    if (std::sqrt(dx * dx + dy * dy) <= eps_px) {
      ++m.recovered;
      ++m.inliers;
    }
  }
  if (m.gt_covisible > 0)
    m.keypoint_recall = 100.0 * double(m.recovered) / double(m.gt_covisible);
  if (m.predicted > 0) m.inlier_ratio = 100.0 * double(m.inliers) / double(m.predicted);
  return m;
}

}  // namespace semfeat::match
