#include <catch2/catch_amalgamated.hpp>

#include "semfeat/core/rng.hpp"
#include "semfeat/synth/warp.hpp"

using namespace semfeat;
using namespace semfeat::synth;

static Tensor<double> smooth_image(int rows, int cols, std::uint64_t seed) {
  // Band-limited content so bilinear resampling round-trips tightly.
  Tensor<double> img(rows, cols, 3);
  Rng rng(seed);
  const double fx = rng.uniform(0.02, 0.08), fy = rng.uniform(0.02, 0.08);
  const double px = rng.uniform(0, 6), py = rng.uniform(0, 6);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x)
      for (int c = 0; c < 3; ++c)
        img(y, x, c) = 0.5 + 0.45 * std::sin(fx * x * (c + 1) + px) *
                                 std::cos(fy * y * (c + 1) + py);
  return img;
}

TEST_CASE("identity warp returns the input with a full mask", "[synth][warp]") {
  const auto img = smooth_image(32, 32, 1);
  const auto [out, valid] = warp_image(img, Homography::identity());
  for (std::size_t i = 0; i < img.size(); ++i)
    REQUIRE(out[i] == Catch::Approx(img[i]).margin(1e-12));
  for (std::size_t i = 0; i < valid.size(); ++i) REQUIRE(valid[i] == 1);
}

TEST_CASE("warp then inverse warp round-trips within bilinear tolerance", "[synth][warp]") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto img = smooth_image(64, 64, rng.next_u64());
    const auto t = sample_transform(TransformRanges{}, 64, 64, rng.next_u64());
    const auto [warped, valid_fwd] = warp_image(img, t.h);
    const auto [back, valid_bwd] = warp_image(warped, t.h.inverse());
    double max_err = 0.0;
    int checked = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (!valid_bwd(y, x)) continue;
        // Every bilinear tap in the intermediate image must itself be valid,
        // otherwise the sample mixes in zeroed out-of-bounds pixels.
        const Eigen::Vector2d p = t.h.apply(x, y);
        const int px0 = static_cast<int>(std::floor(p.x()));
        const int py0 = static_cast<int>(std::floor(p.y()));
        if (px0 < 0 || px0 + 1 > 63 || py0 < 0 || py0 + 1 > 63) continue;
        if (!valid_fwd(py0, px0) || !valid_fwd(py0, px0 + 1) ||
            !valid_fwd(py0 + 1, px0) || !valid_fwd(py0 + 1, px0 + 1))
          continue;
        for (int c = 0; c < 3; ++c)
          max_err = std::max(max_err, std::abs(back(y, x, c) - img(y, x, c)));
        ++checked;
      }
    REQUIRE(checked > 500);
    REQUIRE(max_err <= 0.05);
  }
}

TEST_CASE("fully out-of-bounds translation empties the mask", "[synth][warp]") {
  const auto img = smooth_image(64, 64, 9);
  TransformSpec spec;
  spec.translation_x = 100.0;
  const Homography h = homography_from_spec(spec, 64, 64);
  const auto [out, valid] = warp_image(img, h);
  for (std::size_t i = 0; i < valid.size(); ++i) REQUIRE(valid[i] == 0);
  for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(out[i] == 0.0);
}

TEST_CASE("label warp keeps exact class indices", "[synth][warp]") {
  Tensor<int> labels(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) labels(y, x) = (x / 8 + y / 8) % 4;
  TransformSpec spec;
  spec.rotation_deg = 17.0;
  const Homography h = homography_from_spec(spec, 32, 32);
  const auto [warped, valid] = warp_labels(labels, h);
  const Homography inv = h.inverse();
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      if (!valid(y, x)) {
        REQUIRE(warped(y, x) == 0);
        continue;
      }
      const Eigen::Vector2d p = inv.apply(x, y);
      const int sx = static_cast<int>(std::lround(p.x()));
      const int sy = static_cast<int>(std::lround(p.y()));
      REQUIRE(warped(y, x) == labels(sy, sx));
    }
}

TEST_CASE("keypoint map forward warp snaps and ORs", "[synth][warp]") {
  Mask kp(16, 16);
  kp(4, 4) = 1;
  kp(8, 12) = 1;
  TransformSpec spec;
  spec.translation_x = 2.0;
  spec.translation_y = 1.0;
  const Homography h = homography_from_spec(spec, 16, 16);
  const Mask warped = warp_keypoint_map(kp, h);
  REQUIRE(warped(5, 6) == 1);
  REQUIRE(warped(9, 14) == 1);
  int count = 0;
  for (std::size_t i = 0; i < warped.size(); ++i) count += warped[i];
  REQUIRE(count == 2);
}
