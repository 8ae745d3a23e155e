#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>
#include <vector>

#include "semfeat/core/errors.hpp"
#include "semfeat/core/rng.hpp"

namespace semfeat::synth {

// 3x3 projective transform in pixel coordinates, normalized so m(2,2) = 1.
struct Homography {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();

  static Homography identity() { return {}; }

  static Homography from_matrix(const Eigen::Matrix3d& raw) {
    if (std::abs(raw(2, 2)) < 1e-12)
      throw NumericError("homography normalization failed: m(2,2) ~ 0");
    Homography h;
    h.m = raw / raw(2, 2);
    if (std::abs(h.m.determinant()) < 1e-10)
      throw NumericError("singular homography");
    return h;
  }

  Eigen::Vector2d apply(double x, double y) const {
    const double w = m(2, 0) * x + m(2, 1) * y + m(2, 2);
    if (std::abs(w) < 1e-12) return {1e30, 1e30};
    return {(m(0, 0) * x + m(0, 1) * y + m(0, 2)) / w,
            (m(1, 0) * x + m(1, 1) * y + m(1, 2)) / w};
  }

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return apply(p.x(), p.y()); }

  Homography inverse() const { return from_matrix(m.inverse()); }
};

// compose(a, b).apply(p) == a.apply(b.apply(p))
inline Homography compose(const Homography& a, const Homography& b) {
  return Homography::from_matrix(a.m * b.m);
}

struct TransformSpec {
  double rotation_deg = 0.0;
  double translation_x = 0.0;
  double translation_y = 0.0;
  double scale = 1.0;
  double perspective_jitter = 0.0;  // corner displacement as a fraction of image side
};

struct TransformRanges {
  double rotation_deg = 30.0;      // +- range
  double translation_px = 15.0;    // +- range, per axis
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double perspective_jitter = 0.10;
};

// Direct linear transform from point correspondences (n >= 4). When
// `normalize` is set, applies Hartley normalization before solving.
inline Eigen::Matrix3d dlt_homography(
    const std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>>& corr,
    bool normalize = true) {
  const int n = static_cast<int>(corr.size());
  if (n < 4) throw NumericError("dlt_homography: need >= 4 correspondences");

  auto normalizer = [](const std::vector<Eigen::Vector2d>& pts) {
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& p : pts) c += p;
    c /= pts.size();
    double mean_dist = 0.0;
    for (const auto& p : pts) mean_dist += (p - c).norm();
    mean_dist /= pts.size();
    const double s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 0) = s;
    t(1, 1) = s;
    t(0, 2) = -s * c.x();
    t(1, 2) = -s * c.y();
    return t;
  };

  std::vector<Eigen::Vector2d> src(n), dst(n);
  for (int i = 0; i < n; ++i) {
    src[i] = corr[i].first;
    dst[i] = corr[i].second;
  }
  Eigen::Matrix3d ts = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d td = Eigen::Matrix3d::Identity();
  if (normalize) {
    ts = normalizer(src);
    td = normalizer(dst);
  }

  Eigen::MatrixXd a(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d p = ts * src[i].homogeneous();
    const Eigen::Vector3d q = td * dst[i].homogeneous();
    const double x = p.x() / p.z(), y = p.y() / p.z();
    const double u = q.x() / q.z(), v = q.y() / q.z();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d raw;
  raw << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return td.inverse() * raw * ts;
}

namespace detail {

inline bool convex_quad(const Eigen::Vector2d q[4]) {
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d a = q[(i + 1) % 4] - q[i];
    const Eigen::Vector2d b = q[(i + 2) % 4] - q[(i + 1) % 4];
    const double cross = a.x() * b.y() - a.y() * b.x();
    if (std::abs(cross) < 1e-9) return false;  // collinear corner triple
    const int s = cross > 0 ? 1 : -1;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

}  // namespace detail

// Scale * rotation about the image center, then translation, then optional
// four-corner perspective jitter folded in via DLT. Center is ((w-1)/2, (h-1)/2).
inline Homography homography_from_spec(const TransformSpec& spec, int width, int height,
                                       Rng* jitter_rng = nullptr) {
  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  const double th = spec.rotation_deg * M_PI / 180.0;
  const double s = spec.scale;

  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  rot(0, 0) = s * std::cos(th);
  rot(0, 1) = -s * std::sin(th);
  rot(1, 0) = s * std::sin(th);
  rot(1, 1) = s * std::cos(th);

  Eigen::Matrix3d to_center = Eigen::Matrix3d::Identity();
  to_center(0, 2) = -cx;
  to_center(1, 2) = -cy;
  Eigen::Matrix3d from_center = Eigen::Matrix3d::Identity();
  from_center(0, 2) = cx + spec.translation_x;
  from_center(1, 2) = cy + spec.translation_y;

  Eigen::Matrix3d base = from_center * rot * to_center;
  if (spec.perspective_jitter <= 0.0 || jitter_rng == nullptr)
    return Homography::from_matrix(base);

  const double side = std::max(width, height);
  const double amp = spec.perspective_jitter * side;
  const Eigen::Vector2d corners[4] = {{0.0, 0.0},
                                      {double(width - 1), 0.0},
                                      {double(width - 1), double(height - 1)},
                                      {0.0, double(height - 1)}};
  for (int attempt = 0; attempt < 32; ++attempt) {
    Eigen::Vector2d target[4];
    for (int i = 0; i < 4; ++i) {
      const Eigen::Vector3d p = base * corners[i].homogeneous();
      target[i] = p.hnormalized();
      target[i].x() += jitter_rng->uniform(-amp, amp);
      target[i].y() += jitter_rng->uniform(-amp, amp);
    }
    if (!detail::convex_quad(target)) continue;
    std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> corr;
    for (int i = 0; i < 4; ++i) corr.emplace_back(corners[i], target[i]);
    const Eigen::Matrix3d raw = dlt_homography(corr, true);
    if (std::abs(raw(2, 2)) < 1e-12 || std::abs(raw.determinant()) < 1e-10) continue;
    return Homography::from_matrix(raw);
  }
  throw NumericError("homography_from_spec: degenerate corner jitter, retries exhausted");
}

inline TransformSpec sample_spec(const TransformRanges& r, Rng& rng) {
  TransformSpec spec;
  spec.rotation_deg = rng.uniform(-r.rotation_deg, r.rotation_deg);
  spec.translation_x = rng.uniform(-r.translation_px, r.translation_px);
  spec.translation_y = rng.uniform(-r.translation_px, r.translation_px);
  spec.scale = rng.uniform(r.scale_lo, r.scale_hi);
  spec.perspective_jitter = r.perspective_jitter;
  return spec;
}

struct SampledTransform {
  TransformSpec spec;
  Homography h;
};

inline SampledTransform sample_transform(const TransformRanges& ranges, int width,
                                         int height, std::uint64_t seed) {
  Rng rng(seed);
  const TransformSpec spec = sample_spec(ranges, rng);
  return {spec, homography_from_spec(spec, width, height, &rng)};
}

}  // namespace semfeat::synth
