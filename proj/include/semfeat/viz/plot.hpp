#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "semfeat/core/tensor.hpp"
#include "semfeat/geo/trajectory.hpp"
#include "semfeat/io/png.hpp"
#include "semfeat/match/keypoints.hpp"
#include "semfeat/match/matcher.hpp"

namespace semfeat::viz {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr Color kInlier{40, 200, 40};
inline constexpr Color kOutlier{220, 50, 50};
inline constexpr Color kReference{70, 110, 230};
inline constexpr Color kEstimated{230, 150, 40};

inline void put_pixel(Tensor<std::uint8_t>& img, int x, int y, Color c) {
  if (y < 0 || y >= img.dim(0) || x < 0 || x >= img.dim(1)) return;
  img(y, x, 0) = c.r;
  img(y, x, 1) = c.g;
  img(y, x, 2) = c.b;
}

inline void draw_line(Tensor<std::uint8_t>& img, double x0, double y0, double x1, double y1,
                      Color c) {
  const double dx = x1 - x0, dy = y1 - y0;
  const int steps = std::max(1, int(std::ceil(std::max(std::abs(dx), std::abs(dy)))));
  for (int i = 0; i <= steps; ++i) {
    const double t = double(i) / steps;
    put_pixel(img, int(std::lround(x0 + t * dx)), int(std::lround(y0 + t * dy)), c);
  }
}

inline void draw_marker(Tensor<std::uint8_t>& img, double x, double y, Color c) {
  const int xi = int(std::lround(x)), yi = int(std::lround(y));
  put_pixel(img, xi, yi, c);
  put_pixel(img, xi + 1, yi, c);
  put_pixel(img, xi - 1, yi, c);
  put_pixel(img, xi, yi + 1, c);
  put_pixel(img, xi, yi - 1, c);
}

inline Tensor<std::uint8_t> to_rgb(const Tensor<std::uint8_t>& gray) {
  Tensor<std::uint8_t> rgb(gray.dim(0), gray.dim(1), 3);
  for (int y = 0; y < gray.dim(0); ++y)
    for (int x = 0; x < gray.dim(1); ++x)
      for (int ch = 0; ch < 3; ++ch) rgb(y, x, ch) = gray(y, x);
  return rgb;
}

// Side-by-side pair with one segment per match, green for inliers and red
// for the rest. The sidecar JSON lists every drawn segment so tests check
// the drawing contract without decoding pixels.
template <class T>
void write_match_overlay(const std::filesystem::path& png_path, const Tensor<T>& image_a,
                         const Tensor<T>& image_b, const std::vector<match::Keypoint>& kps_a,
                         const std::vector<match::Keypoint>& kps_b, const match::MatchSet& ms) {
  const Tensor<std::uint8_t> a = io::to_u8(image_a), b = io::to_u8(image_b);
  if (a.dim(0) != b.dim(0)) throw ShapeError("match overlay needs equal image heights");
  const int rows = a.dim(0), cols_a = a.dim(1), cols_b = b.dim(1);

  Tensor<std::uint8_t> canvas(rows, cols_a + cols_b, 3);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols_a; ++x)
      for (int ch = 0; ch < 3; ++ch) canvas(y, x, ch) = a(y, x);
    for (int x = 0; x < cols_b; ++x)
      for (int ch = 0; ch < 3; ++ch) canvas(y, cols_a + x, ch) = b(y, x);
  }

  nlohmann::ordered_json segments = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ms.matches.size(); ++i) {
    const match::Keypoint& ka = kps_a[std::size_t(ms.matches[i].index_a)];
    const match::Keypoint& kb = kps_b[std::size_t(ms.matches[i].index_b)];
    const bool inlier = i < ms.inlier_flags.size() && ms.inlier_flags[i];
    const Color c = inlier ? kInlier : kOutlier;
    draw_line(canvas, ka.x, ka.y, kb.x + cols_a, kb.y, c);
    draw_marker(canvas, ka.x, ka.y, c);
    draw_marker(canvas, kb.x + cols_a, kb.y, c);
    segments.push_back({{"x0", ka.x},
                        {"y0", ka.y},
                        {"x1", kb.x + cols_a},
                        {"y1", kb.y},
                        {"inlier", inlier}});
  }

  io::write_png(png_path, canvas);
  nlohmann::ordered_json sidecar = {{"image", png_path.filename().string()},
                                    {"width", cols_a + cols_b},
                                    {"height", rows},
                                    {"segments", segments}};
  std::ofstream f(png_path.string() + ".json");
  if (!f) throw IoError("cannot write " + png_path.string() + ".json");
  f << sidecar.dump(2) << "\n";
}

// Top-down (x, y) view of the reference and the aligned estimate.
inline void write_trajectory_plot(const std::filesystem::path& png_path,
                                  const geo::Trajectory& estimated,
                                  const geo::Trajectory& reference,
                                  const geo::SimilarityTransform& transform, int size = 512) {
  std::vector<Eigen::Vector3d> aligned;
  for (const auto& p : estimated.positions) aligned.push_back(transform.apply(p));

  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  auto expand = [&](const Eigen::Vector3d& p) {
    lo_x = std::min(lo_x, p.x());
    hi_x = std::max(hi_x, p.x());
    lo_y = std::min(lo_y, p.y());
    hi_y = std::max(hi_y, p.y());
  };
  for (const auto& p : aligned) expand(p);
  for (const auto& p : reference.positions) expand(p);
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const int margin = 16;
  auto px = [&](const Eigen::Vector3d& p) {
    const double sx = (p.x() - lo_x) / span, sy = (p.y() - lo_y) / span;
    return std::pair<double, double>(margin + sx * (size - 2 * margin),
                                     size - margin - sy * (size - 2 * margin));
  };

  Tensor<std::uint8_t> canvas(size, size, 3);
  canvas.fill(255);
  auto polyline = [&](const std::vector<Eigen::Vector3d>& pts, Color c) {
    for (std::size_t i = 1; i < pts.size(); ++i) {
      const auto [x0, y0] = px(pts[i - 1]);
      const auto [x1, y1] = px(pts[i]);
      draw_line(canvas, x0, y0, x1, y1, c);
    }
    for (const auto& p : pts) {
      const auto [x, y] = px(p);
      draw_marker(canvas, x, y, c);
    }
  };
  polyline(reference.positions, kReference);
  polyline(aligned, kEstimated);
  io::write_png(png_path, canvas);

  auto points_json = [](const std::vector<Eigen::Vector3d>& pts) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& p : pts) arr.push_back({p.x(), p.y(), p.z()});
    return arr;
  };
  nlohmann::ordered_json sidecar = {{"image", png_path.filename().string()},
                                    {"size", size},
                                    {"reference", points_json(reference.positions)},
                                    {"estimated_aligned", points_json(aligned)}};
  std::ofstream f(png_path.string() + ".json");
  if (!f) throw IoError("cannot write " + png_path.string() + ".json");
  f << sidecar.dump(2) << "\n";
}

}  // namespace semfeat::viz
