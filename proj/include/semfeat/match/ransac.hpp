#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "semfeat/core/rng.hpp"
#include "semfeat/match/matcher.hpp"

namespace semfeat::match {

struct RansacConfig {
  double threshold_px = 3.0;
  int iterations = 2000;
  std::uint64_t seed = 0;
};

namespace detail {

struct PointPair {
  Eigen::Vector2d a, b;
};

// Normalized direct linear transform. Each side is translated to its
// centroid and scaled to mean distance sqrt(2) before building the 2n x 9
// system; the conditioning matters even for exact inputs.
inline std::optional<synth::Homography> estimate_dlt(const std::vector<PointPair>& pts) {
  const int n = int(pts.size());
  if (n < 4) return std::nullopt;

  const auto normalizer = [&](bool side_b) {
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& p : pts) c += side_b ? p.b : p.a;
    c /= double(n);
    double mean_dist = 0;
    for (const auto& p : pts) mean_dist += ((side_b ? p.b : p.a) - c).norm();
    mean_dist /= double(n);
    const double s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 0) = s;
    t(1, 1) = s;
    t(0, 2) = -s * c.x();
    t(1, 2) = -s * c.y();
    return t;
  };
  const Eigen::Matrix3d ta = normalizer(false), tb = normalizer(true);

  Eigen::MatrixXd m(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d pa = ta * pts[std::size_t(i)].a.homogeneous();
    const Eigen::Vector3d pb = tb * pts[std::size_t(i)].b.homogeneous();
    const double x = pa.x(), y = pa.y(), u = pb.x(), v = pb.y();
    m.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    m.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d raw = tb.inverse() * hn * ta;
  try {
    const synth::Homography out = synth::Homography::from_matrix(raw);
    // a model whose inverse cannot be normalized is useless for symmetric
    // transfer checks, so degenerate samples get rejected here
    out.inverse();
    return out;
  } catch (const NumericError&) {
    return std::nullopt;
  }
}

// Worst direction of the symmetric transfer: an inlier has to reproject
// within the threshold both forward and backward.
inline double symmetric_error(const synth::Homography& h, const synth::Homography& hinv,
                              const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const double fwd = (h.apply(a.x(), a.y()) - b).norm();
  const double bwd = (hinv.apply(b.x(), b.y()) - a).norm();
  return std::max(fwd, bwd);
}

inline int flag_inliers(const synth::Homography& h, const std::vector<PointPair>& pts,
                        double threshold, std::vector<bool>& flags) {
  const synth::Homography hinv = h.inverse();
  int count = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    flags[i] = symmetric_error(h, hinv, pts[i].a, pts[i].b) <= threshold;
    count += flags[i] ? 1 : 0;
  }
  return count;
}

}  // namespace detail

// RANSAC over 4-point DLT hypotheses, deterministic per seed. The winning
// model is refit on its inliers with all points, then flags are recomputed
// once under the refit model. Fewer than 4 matches: no model, all false.
inline MatchSet verify_homography(const MatchSet& in, const std::vector<Keypoint>& kps_a,
                                  const std::vector<Keypoint>& kps_b,
                                  const RansacConfig& cfg = {}) {
  MatchSet out = in;
  out.inlier_flags.assign(out.matches.size(), false);
  out.has_model = false;
  const int n = int(out.matches.size());
  if (n < 4) return out;
  if (cfg.iterations < 1) throw ConfigError("ransac.iterations must be positive");
  if (cfg.threshold_px <= 0) throw ConfigError("ransac.threshold_px must be positive");

  std::vector<detail::PointPair> pts(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Keypoint& a = kps_a[std::size_t(out.matches[std::size_t(i)].index_a)];
    const Keypoint& b = kps_b[std::size_t(out.matches[std::size_t(i)].index_b)];
    pts[std::size_t(i)] = {{a.x, a.y}, {b.x, b.y}};
  }

  Rng rng(cfg.seed);
  std::vector<bool> flags(std::size_t(n), false), best_flags;
  int best_count = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    int pick[4];
    for (int k = 0; k < 4;) {
      pick[k] = rng.uniform_int(n);
      bool dup = false;
      for (int j = 0; j < k; ++j) dup |= pick[j] == pick[k];
      if (!dup) ++k;
    }
    const std::vector<detail::PointPair> sample = {pts[std::size_t(pick[0])],
                                                   pts[std::size_t(pick[1])],
                                                   pts[std::size_t(pick[2])],
                                                   pts[std::size_t(pick[3])]};
    const auto h = detail::estimate_dlt(sample);
    if (!h) continue;
    const int count = detail::flag_inliers(*h, pts, cfg.threshold_px, flags);
    if (count > best_count) {
      best_count = count;
      best_flags = flags;
      out.model = *h;
      out.has_model = true;
    }
  }
  if (!out.has_model || best_count < 4) {
    out.has_model = false;
    return out;
  }

  std::vector<detail::PointPair> inlier_pts;
  for (int i = 0; i < n; ++i)
    if (best_flags[std::size_t(i)]) inlier_pts.push_back(pts[std::size_t(i)]);
  if (const auto refit = detail::estimate_dlt(inlier_pts)) {
    out.model = *refit;
    detail::flag_inliers(out.model, pts, cfg.threshold_px, flags);
    best_flags = flags;
  }
  out.inlier_flags.assign(best_flags.begin(), best_flags.end());
  return out;
}

}  // namespace semfeat::match
