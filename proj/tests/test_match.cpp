#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "semfeat/match/keypoints.hpp"
#include "semfeat/match/matcher.hpp"
#include "semfeat/match/metrics.hpp"
#include "semfeat/match/ransac.hpp"
#include "semfeat/synth/homography.hpp"

using namespace semfeat;
using match::Keypoint;

namespace {

std::vector<double> unit_vec(Rng& rng, int d) {
  std::vector<double> v(static_cast<std::size_t>(d));
  double n2 = 0;
  for (double& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

Keypoint make_kp(double x, double y, std::vector<double> desc, int cls = 0, double score = 1.0) {
  Keypoint k;
  k.x = x;
  k.y = y;
  k.score = score;
  k.semantic_class = cls;
  k.descriptor = std::move(desc);
  return k;
}

model::MultiTaskOutput<float> flat_output(int rows, int cols, int d, int classes) {
  model::MultiTaskOutput<float> out;
  out.heatmap = Tensor<float>(rows, cols);
  out.descriptors = Tensor<float>(rows, cols, d);
  out.segmentation = Tensor<float>(rows, cols, classes);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      out.descriptors(y, x, 0) = 1.0f;
      out.segmentation(y, x, 0) = 1.0f;
    }
  return out;
}

// O(n^2) similarity-matrix reference: mutual argmax, optional class gating,
// two-sided ratio on the top-2 entries.
std::vector<std::pair<int, int>> brute_force_mutual(const std::vector<Keypoint>& a,
                                                    const std::vector<Keypoint>& b,
                                                    bool same_class, double ratio) {
  const int na = int(a.size()), nb = int(b.size());
  Eigen::MatrixXd sim(na, nb);
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < a[std::size_t(i)].descriptor.size(); ++k)
        s += a[std::size_t(i)].descriptor[k] * b[std::size_t(j)].descriptor[k];
      const bool allowed =
          !same_class || a[std::size_t(i)].semantic_class == b[std::size_t(j)].semantic_class;
      sim(i, j) = allowed ? s : -4.0;
    }

  const auto top2 = [](const Eigen::VectorXd& v) {
    int arg = -1;
    double best = -3.0, second = -3.0;
    for (int k = 0; k < v.size(); ++k) {
      if (v(k) > best) {
        second = best;
        best = v(k);
        arg = k;
      } else if (v(k) > second) {
        second = v(k);
      }
    }
    return std::tuple<int, double, double>(arg, best, second);
  };
  const auto dist = [](double s) { return std::sqrt(std::max(0.0, 2.0 - 2.0 * s)); };

  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < na; ++i) {
    const auto [j, s1, s2] = top2(sim.row(i));
    if (j < 0 || sim(i, j) <= -3.0) continue;
    const auto [i2, t1, t2] = top2(sim.col(j));
    if (i2 != i) continue;
    if (ratio > 0) {
      if (s2 > -3.0 && dist(s1) > ratio * dist(s2)) continue;
      if (t2 > -3.0 && dist(t1) > ratio * dist(t2)) continue;
    }
    out.push_back({i, j});
  }
  return out;
}

}  // namespace

TEST_CASE("keypoint extraction basics", "[match]") {
  auto out = flat_output(32, 32, 4, 3);

  SECTION("uniform heatmap below threshold yields nothing") {
    for (std::size_t i = 0; i < out.heatmap.size(); ++i) out.heatmap[i] = 0.4f;
    REQUIRE(match::extract_keypoints(out, 0.5, 4, 100).empty());
  }

  SECTION("single spike is found with its descriptor and class") {
    for (std::size_t i = 0; i < out.heatmap.size(); ++i) out.heatmap[i] = 0.1f;
    out.heatmap(10, 10) = 0.9f;
    out.segmentation(10, 10, 0) = 0.1f;
    out.segmentation(10, 10, 2) = 0.8f;
    for (int c = 0; c < 4; ++c) out.descriptors(10, 10, c) = c == 3 ? 1.0f : 0.0f;

    const auto kps = match::extract_keypoints(out, 0.5, 4, 100);
    REQUIRE(kps.size() == 1);
    CHECK(kps[0].x == 10.0);
    CHECK(kps[0].y == 10.0);
    CHECK(kps[0].score == Catch::Approx(0.9));
    CHECK(kps[0].semantic_class == 2);
    CHECK(kps[0].descriptor[3] == Catch::Approx(1.0));
  }

  SECTION("the stronger of two close spikes survives suppression") {
    out.heatmap(10, 10) = 0.9f;
    out.heatmap(10, 13) = 0.8f;
    const auto kps = match::extract_keypoints(out, 0.5, 4, 100);
    REQUIRE(kps.size() == 1);
    CHECK(kps[0].x == 10.0);

    // radius smaller than the gap keeps both, strongest first
    const auto both = match::extract_keypoints(out, 0.5, 2, 100);
    REQUIRE(both.size() == 2);
    CHECK(both[0].score >= both[1].score);
  }

  SECTION("max_count caps the strongest") {
    out.heatmap(2, 2) = 0.9f;
    out.heatmap(20, 20) = 0.8f;
    out.heatmap(28, 5) = 0.7f;
    const auto kps = match::extract_keypoints(out, 0.5, 3, 2);
    REQUIRE(kps.size() == 2);
    CHECK(kps[0].score == Catch::Approx(0.9));
    CHECK(kps[1].score == Catch::Approx(0.8));
  }
}

TEST_CASE("suppression holds over random heatmaps", "[match]") {
  Rng rng(404);
  for (int round = 0; round < 20; ++round) {
    auto out = flat_output(48, 48, 4, 3);
    for (std::size_t i = 0; i < out.heatmap.size(); ++i)
      out.heatmap[i] = float(rng.uniform());
    const int radius = 2 + round % 4;
    const auto kps = match::extract_keypoints(out, 0.3, radius, 60);

    REQUIRE(kps.size() <= 60);
    for (std::size_t i = 0; i < kps.size(); ++i) {
      REQUIRE(kps[i].score > 0.3);
      if (i) REQUIRE(kps[i - 1].score >= kps[i].score);
      for (std::size_t j = i + 1; j < kps.size(); ++j) {
        const double dx = kps[i].x - kps[j].x, dy = kps[i].y - kps[j].y;
        REQUIRE(dx * dx + dy * dy > double(radius) * double(radius));
      }
    }
  }
}

TEST_CASE("bilinear descriptor sampling", "[match]") {
  Tensor<float> desc(4, 12, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 12; ++x) {
      desc(y, x, 0) = 1.0f - float(x) / 10.0f;
      desc(y, x, 1) = float(x) / 10.0f;
    }

  // channel values interpolate linearly, then the vector is renormalized
  const auto v = match::sample_descriptor(desc, 2.5, 1.0);
  const double raw0 = 0.75, raw1 = 0.25;
  const double norm = std::sqrt(raw0 * raw0 + raw1 * raw1);
  CHECK(v[0] == Catch::Approx(raw0 / norm).epsilon(1e-6));
  CHECK(v[1] == Catch::Approx(raw1 / norm).epsilon(1e-6));
  CHECK(v[0] * v[0] + v[1] * v[1] == Catch::Approx(1.0));

  // integer coordinates reduce to a plain lookup
  const auto w = match::sample_descriptor(desc, 10.0, 2.0);
  CHECK(w[0] == Catch::Approx(0.0).margin(1e-12));
  CHECK(w[1] == Catch::Approx(1.0));

  // zero vector falls back to e1
  Tensor<float> dead(2, 2, 3);
  const auto z = match::sample_descriptor(dead, 0.5, 0.5);
  CHECK(z[0] == 1.0);
  CHECK(z[1] == 0.0);
}

TEST_CASE("semantic filter set arithmetic", "[match]") {
  std::vector<Keypoint> kps;
  for (int i = 0; i < 9; ++i) kps.push_back(make_kp(i, 0, {1.0}, i % 3));

  CHECK(match::semantic_filter(kps, {}).size() == 9);
  CHECK(match::semantic_filter(kps, {0, 1, 2}).empty());
  const auto kept = match::semantic_filter(kps, {1});
  REQUIRE(kept.size() == 6);
  for (const auto& k : kept) CHECK(k.semantic_class != 1);
}

TEST_CASE("matching identity and degenerate descriptor sets", "[match]") {
  Rng rng(7);
  std::vector<Keypoint> a;
  for (int i = 0; i < 12; ++i) a.push_back(make_kp(i, i, unit_vec(rng, 8)));

  SECTION("a copy matches itself with similarity 1") {
    const auto ms = match::match(a, a);
    REQUIRE(ms.matches.size() == a.size());
    for (const auto& m : ms.matches) {
      CHECK(m.index_a == m.index_b);
      CHECK(m.similarity == Catch::Approx(1.0));
    }
  }

  SECTION("orthogonal sides tie everywhere; the ratio test empties the result") {
    std::vector<Keypoint> left, right;
    left.push_back(make_kp(0, 0, {1, 0, 0, 0}));
    left.push_back(make_kp(1, 0, {0, 1, 0, 0}));
    right.push_back(make_kp(0, 1, {0, 0, 1, 0}));
    right.push_back(make_kp(1, 1, {0, 0, 0, 1}));

    const auto plain = match::match(left, right);
    REQUIRE(plain.matches.size() == 1);  // all sims 0, first indices win both ways
    CHECK(plain.matches[0].similarity == Catch::Approx(0.0).margin(1e-12));

    match::MatchConfig ratio_cfg;
    ratio_cfg.ratio = 0.8;
    CHECK(match::match(left, right, ratio_cfg).matches.empty());
  }

  SECTION("empty sides") {
    CHECK(match::match({}, a).matches.empty());
    CHECK(match::match(a, {}).matches.empty());
  }
}

TEST_CASE("matcher equals the brute-force oracle", "[match]") {
  Rng rng(99);
  for (int round = 0; round < 8; ++round) {
    std::vector<Keypoint> a, b;
    for (int i = 0; i < 50; ++i)
      a.push_back(make_kp(i, 0, unit_vec(rng, 8), rng.uniform_int(2)));
    for (int j = 0; j < 50; ++j)
      b.push_back(make_kp(j, 1, unit_vec(rng, 8), rng.uniform_int(2)));
    // correlate some pairs so matches are not pure chance
    for (int k = 0; k < 20; ++k) {
      b[std::size_t(k)].descriptor = a[std::size_t(k)].descriptor;
      b[std::size_t(k)].semantic_class = a[std::size_t(k)].semantic_class;
    }

    for (const bool same_class : {false, true})
      for (const double ratio : {0.0, 0.8}) {
        match::MatchConfig cfg;
        cfg.same_class_required = same_class;
        cfg.ratio = ratio;
        const auto ms = match::match(a, b, cfg);
        const auto oracle = brute_force_mutual(a, b, same_class, ratio);

        REQUIRE(ms.matches.size() == oracle.size());
        for (std::size_t k = 0; k < oracle.size(); ++k) {
          CHECK(ms.matches[k].index_a == oracle[k].first);
          CHECK(ms.matches[k].index_b == oracle[k].second);
        }
      }
  }
}

TEST_CASE("matching is symmetric as an unordered pair set", "[match]") {
  Rng rng(123);
  for (const double ratio : {0.0, 0.8}) {
    std::vector<Keypoint> a, b;
    for (int i = 0; i < 40; ++i) a.push_back(make_kp(i, 0, unit_vec(rng, 6), i % 2));
    for (int j = 0; j < 35; ++j) b.push_back(make_kp(j, 1, unit_vec(rng, 6), j % 2));
    for (int k = 0; k < 15; ++k) b[std::size_t(k)].descriptor = a[std::size_t(k)].descriptor;

    match::MatchConfig cfg;
    cfg.ratio = ratio;
    const auto ab = match::match(a, b, cfg);
    const auto ba = match::match(b, a, cfg);

    std::set<std::pair<int, int>> fwd, rev;
    for (const auto& m : ab.matches) fwd.insert({m.index_a, m.index_b});
    for (const auto& m : ba.matches) rev.insert({m.index_b, m.index_a});
    REQUIRE(fwd == rev);
  }
}

TEST_CASE("homography from exact correspondences", "[match][ransac]") {
  const auto planted = synth::sample_transform(synth::TransformRanges{}, 64, 64, 5).h;
  Rng rng(6);
  std::vector<Keypoint> a, b;
  std::vector<match::Match> raw;
  for (int i = 0; i < 8; ++i) {
    const double x = rng.uniform(5, 59), y = rng.uniform(5, 59);
    const Eigen::Vector2d w = planted.apply(x, y);
    a.push_back(make_kp(x, y, {1.0}));
    b.push_back(make_kp(w.x(), w.y(), {1.0}));
    raw.push_back({i, i, 1.0});
  }
  match::MatchSet ms;
  ms.matches = raw;

  const auto verified = match::verify_homography(ms, a, b, {3.0, 200, 1});
  REQUIRE(verified.has_model);
  const synth::Homography inv = verified.model.inverse();
  for (int i = 0; i < 8; ++i) {
    const double err = match::detail::symmetric_error(
        verified.model, inv, {a[std::size_t(i)].x, a[std::size_t(i)].y},
        {b[std::size_t(i)].x, b[std::size_t(i)].y});
    REQUIRE(err <= 1e-6);
    REQUIRE(verified.inlier_flags[std::size_t(i)]);
  }
}

TEST_CASE("ransac under 30 percent outliers", "[match][ransac]") {
  const auto planted = synth::sample_transform(synth::TransformRanges{}, 64, 64, 11).h;
  Rng rng(21);
  std::vector<Keypoint> a, b;
  std::vector<match::Match> raw;
  const int n_in = 70, n_out = 30;
  for (int i = 0; i < n_in; ++i) {
    const double x = rng.uniform(4, 60), y = rng.uniform(4, 60);
    const Eigen::Vector2d w = planted.apply(x, y);
    a.push_back(make_kp(x, y, {1.0}));
    b.push_back(make_kp(w.x(), w.y(), {1.0}));
  }
  for (int i = 0; i < n_out; ++i) {
    const double x = rng.uniform(4, 60), y = rng.uniform(4, 60);
    const Eigen::Vector2d w = planted.apply(x, y);
    double bx = 0, by = 0;
    do {
      bx = rng.uniform(0, 63);
      by = rng.uniform(0, 63);
    } while (std::hypot(bx - w.x(), by - w.y()) < 8.0);
    a.push_back(make_kp(x, y, {1.0}));
    b.push_back(make_kp(bx, by, {1.0}));
  }
  for (int i = 0; i < n_in + n_out; ++i) raw.push_back({i, i, 1.0});
  match::MatchSet ms;
  ms.matches = raw;

  const auto verified = match::verify_homography(ms, a, b, {3.0, 1000, 3});
  REQUIRE(verified.has_model);

  int planted_kept = 0, outliers_kept = 0;
  for (int i = 0; i < n_in; ++i) planted_kept += verified.inlier_flags[std::size_t(i)] ? 1 : 0;
  for (int i = n_in; i < n_in + n_out; ++i)
    outliers_kept += verified.inlier_flags[std::size_t(i)] ? 1 : 0;
  CHECK(planted_kept == n_in);
  CHECK(outliers_kept <= n_out / 20);  // at least 95 percent rejected

  for (const double cx : {0.0, 63.0})
    for (const double cy : {0.0, 63.0}) {
      const Eigen::Vector2d truth = planted.apply(cx, cy);
      const Eigen::Vector2d got = verified.model.apply(cx, cy);
      REQUIRE((truth - got).norm() <= 1.0);
    }

  SECTION("deterministic per seed") {
    const auto again = match::verify_homography(ms, a, b, {3.0, 1000, 3});
    REQUIRE(again.inlier_flags == verified.inlier_flags);
    REQUIRE((again.model.m - verified.model.m).norm() == 0.0);
  }
}

TEST_CASE("ransac needs four matches", "[match][ransac]") {
  std::vector<Keypoint> a = {make_kp(0, 0, {1.0}), make_kp(10, 0, {1.0}),
                             make_kp(0, 10, {1.0})};
  match::MatchSet ms;
  for (int i = 0; i < 3; ++i) ms.matches.push_back({i, i, 1.0});
  const auto verified = match::verify_homography(ms, a, a, {});
  REQUIRE_FALSE(verified.has_model);
  REQUIRE(verified.inlier_flags == std::vector<bool>(3, false));
}

TEST_CASE("match metrics arithmetic", "[match]") {
  const auto identity = synth::Homography::from_matrix(Eigen::Matrix3d::Identity());

  std::vector<Keypoint> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back(make_kp(6.0 * i, 10, {1.0}));
    b.push_back(make_kp(6.0 * i, 10, {1.0}));
  }
  match::MatchSet ms;
  for (int i = 0; i < 8; ++i) ms.matches.push_back({i, i, 1.0});
  ms.matches.push_back({8, 9, 1.0});  // wrong partners, 6 px apart
  ms.matches.push_back({9, 8, 1.0});

  const auto m = match::compute_metrics(ms, identity, a, b, 3.0);
  CHECK(m.gt_covisible == 10);
  CHECK(m.recovered == 8);
  CHECK(m.predicted == 10);
  CHECK(m.inliers == 8);
  REQUIRE(m.keypoint_recall.has_value());
  REQUIRE(m.inlier_ratio.has_value());
  CHECK(*m.keypoint_recall == Catch::Approx(80.0));
  CHECK(*m.inlier_ratio == Catch::Approx(80.0));

  SECTION("perfect identity matching scores 100/100") {
    match::MatchSet all;
    for (int i = 0; i < 10; ++i) all.matches.push_back({i, i, 1.0});
    const auto p = match::compute_metrics(all, identity, a, b, 3.0);
    CHECK(*p.keypoint_recall == Catch::Approx(100.0));
    CHECK(*p.inlier_ratio == Catch::Approx(100.0));
  }

  SECTION("zero denominators stay undefined") {
    const auto none = match::compute_metrics(match::MatchSet{}, identity, {}, {}, 3.0);
    CHECK_FALSE(none.keypoint_recall.has_value());
    CHECK_FALSE(none.inlier_ratio.has_value());
    CHECK(none.gt_covisible == 0);
    CHECK(none.predicted == 0);

    // keypoints exist but nothing is co-visible
    std::vector<Keypoint> far = {make_kp(0, 0, {1.0})};
    std::vector<Keypoint> away = {make_kp(50, 50, {1.0})};
    const auto sep = match::compute_metrics(match::MatchSet{}, identity, far, away, 3.0);
    CHECK_FALSE(sep.keypoint_recall.has_value());
  }
}

TEST_CASE("filtering a planted dynamic class raises the inlier ratio", "[match]") {
  Rng rng(314);
  const auto identity = synth::Homography::from_matrix(Eigen::Matrix3d::Identity());
  std::vector<Keypoint> a, b;
  for (int i = 0; i < 12; ++i) {
    const auto d = unit_vec(rng, 16);
    const double x = rng.uniform(5, 59), y = rng.uniform(5, 59);
    a.push_back(make_kp(x, y, d, 0));
    b.push_back(make_kp(x, y, d, 0));
  }
  for (int i = 0; i < 6; ++i) {
    const auto d = unit_vec(rng, 16);
    const double x = rng.uniform(5, 40), y = rng.uniform(5, 40);
    a.push_back(make_kp(x, y, d, 1));
    b.push_back(make_kp(x + 20, y + 20, d, 1));  // moved between views
  }

  const auto raw = match::compute_metrics(match::match(a, b), identity, a, b, 3.0);
  const auto fa = match::semantic_filter(a, {1});
  const auto fb = match::semantic_filter(b, {1});
  const auto filtered = match::compute_metrics(match::match(fa, fb), identity, fa, fb, 3.0);

  REQUIRE(raw.inlier_ratio.has_value());
  REQUIRE(filtered.inlier_ratio.has_value());
  CHECK(*filtered.inlier_ratio > *raw.inlier_ratio);
  CHECK(*filtered.inlier_ratio == Catch::Approx(100.0));
}

TEST_CASE("ransac survives junk correspondences", "[match]") {
  // random garbage can produce hypotheses whose inverse is unnormalizable;
  // those must be discarded, not escape as exceptions
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(900 + seed);
    std::vector<Keypoint> a, b;
    match::MatchSet ms;
    const int n = 4 + rng.uniform_int(30);
    for (int i = 0; i < n; ++i) {
      a.push_back(make_kp(rng.uniform(0, 48), rng.uniform(0, 48), unit_vec(rng, 4)));
      b.push_back(make_kp(rng.uniform(0, 48), rng.uniform(0, 48), unit_vec(rng, 4)));
      ms.matches.push_back({i, i, 0.0});
    }
    ms.inlier_flags.assign(std::size_t(n), false);
    match::RansacConfig rc;
    rc.iterations = 300;
    rc.seed = seed;
    REQUIRE_NOTHROW(match::verify_homography(ms, a, b, rc));
  }
}
