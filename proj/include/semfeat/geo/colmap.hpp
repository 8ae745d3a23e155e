#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "semfeat/core/errors.hpp"
#include "semfeat/match/keypoints.hpp"

namespace semfeat::geo {

inline constexpr int kColmapDescriptorDim = 128;

// Unit-float descriptor entry to the text import's unsigned byte range.
inline std::uint8_t descriptor_to_byte(double v) {
  const long b = std::lround(255.0 * (v + 1.0) / 2.0);
  return std::uint8_t(std::clamp(b, 0l, 255l));
}

inline double byte_to_descriptor(std::uint8_t b) { return 2.0 * double(b) / 255.0 - 1.0; }

// COLMAP text feature import: header "N 128", then per keypoint a row of
// "x y scale orientation" followed by 128 byte values. Descriptors shorter
// than 128 pad with the zero image (byte 128), longer ones truncate.
inline void write_colmap_features(const std::filesystem::path& path,
                                  const std::vector<match::Keypoint>& kps) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << kps.size() << " " << kColmapDescriptorDim << "\n";
  char buf[96];
  for (const match::Keypoint& k : kps) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g 1 0", k.x, k.y);
    f << buf;
    for (int d = 0; d < kColmapDescriptorDim; ++d) {
      const double v = d < int(k.descriptor.size()) ? k.descriptor[std::size_t(d)] : 0.0;
      f << " " << int(descriptor_to_byte(v));
    }
    f << "\n";
  }
  if (!f) throw IoError("short write to " + path.string());
}

// Reads the text format back; scores and classes are not part of the format
// and come back zeroed, descriptor bytes map back to [-1, 1].
inline std::vector<match::Keypoint> read_colmap_features(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::size_t n = 0;
  int dim = 0;
  if (!(f >> n >> dim) || dim != kColmapDescriptorDim)
    throw IoError(path.string() + ": bad feature header");
  std::vector<match::Keypoint> kps(n);
  for (std::size_t i = 0; i < n; ++i) {
    double scale = 0, orientation = 0;
    if (!(f >> kps[i].x >> kps[i].y >> scale >> orientation))
      throw IoError(path.string() + ": truncated keypoint row " + std::to_string(i));
    kps[i].descriptor.resize(std::size_t(dim));
    for (int d = 0; d < dim; ++d) {
      int b = 0;
      if (!(f >> b) || b < 0 || b > 255)
        throw IoError(path.string() + ": bad descriptor byte in row " + std::to_string(i));
      kps[i].descriptor[std::size_t(d)] = byte_to_descriptor(std::uint8_t(b));
    }
  }
  return kps;
}

struct MatchBlock {
  std::string image_a, image_b;
  std::vector<std::pair<int, int>> pairs;  // zero-based keypoint indices
};

// Match import file: per block a line with the two image names, one index
// pair per line, blocks separated by a blank line.
inline void write_colmap_matches(const std::filesystem::path& path,
                                 const std::vector<MatchBlock>& blocks) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) f << "\n";
    f << blocks[i].image_a << " " << blocks[i].image_b << "\n";
    for (const auto& [ia, ib] : blocks[i].pairs) f << ia << " " << ib << "\n";
  }
  if (!f) throw IoError("short write to " + path.string());
}

inline std::vector<MatchBlock> read_colmap_matches(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<MatchBlock> blocks;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream head(line);
    MatchBlock block;
    if (!(head >> block.image_a >> block.image_b))
      throw IoError(path.string() + ": malformed pair header '" + line + "'");
    while (std::getline(f, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) break;
      std::istringstream row(line);
      int ia = 0, ib = 0;
      if (!(row >> ia >> ib) || ia < 0 || ib < 0)
        throw IoError(path.string() + ": malformed match row '" + line + "'");
      block.pairs.push_back({ia, ib});
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

}  // namespace semfeat::geo
