#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "semfeat/core/errors.hpp"

namespace semfeat::geo {

struct SemanticPoint {
  float x = 0, y = 0, z = 0;
  std::uint8_t r = 0, g = 0, b = 0;
  std::uint8_t class_id = 0;
};

struct SemanticPointCloud {
  std::vector<SemanticPoint> points;
};

// Fixed injective class palette: golden-angle hue walk at full saturation.
inline std::array<std::uint8_t, 3> class_palette(int class_id) {
  if (class_id < 0 || class_id > 255) throw ConfigError("class_palette: class out of range");
  const double h = std::fmod(0.61803398874989485 * class_id, 1.0) * 6.0;
  const double s = 0.75, v = 0.95;
  const int sector = int(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double rgb[3];
  switch (sector) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
  // class 0 is background: keep it grey so semantic classes stand out
  if (class_id == 0) return {128, 128, 128};
  return {std::uint8_t(std::lround(rgb[0] * 255)), std::uint8_t(std::lround(rgb[1] * 255)),
          std::uint8_t(std::lround(rgb[2] * 255))};
}

inline SemanticPointCloud colorize_cloud(const std::vector<std::pair<Eigen::Vector3d, int>>& pts,
                                         int num_classes) {
  SemanticPointCloud cloud;
  cloud.points.reserve(pts.size());
  for (const auto& [p, cls] : pts) {
    if (cls < 0 || cls >= num_classes)
      throw ConfigError("colorize_cloud: class " + std::to_string(cls) + " outside " +
                        std::to_string(num_classes) + " classes");
    const auto rgb = class_palette(cls);
    cloud.points.push_back({float(p.x()), float(p.y()), float(p.z()), rgb[0], rgb[1], rgb[2],
                            std::uint8_t(cls)});
  }
  return cloud;
}

// Binary little-endian PLY: x/y/z float32, red/green/blue/class_id uchar.
inline void write_ply(const std::filesystem::path& path, const SemanticPointCloud& cloud) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "ply\nformat binary_little_endian 1.0\n"
    << "element vertex " << cloud.points.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n"
    << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
    << "property uchar class_id\nend_header\n";
  for (const SemanticPoint& p : cloud.points) {
    f.write(reinterpret_cast<const char*>(&p.x), 4);
    f.write(reinterpret_cast<const char*>(&p.y), 4);
    f.write(reinterpret_cast<const char*>(&p.z), 4);
    f.put(char(p.r));
    f.put(char(p.g));
    f.put(char(p.b));
    f.put(char(p.class_id));
  }
  if (!f) throw IoError("short write to " + path.string());
}

inline SemanticPointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::string line;
  const auto next = [&]() {
    if (!std::getline(f, line)) throw IoError(path.string() + ": truncated header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  if (next() != "ply") throw IoError(path.string() + ": not a PLY file");
  if (next() != "format binary_little_endian 1.0")
    throw IoError(path.string() + ": unsupported PLY format '" + line + "'");

  std::size_t count = 0;
  bool have_count = false;
  static const char* expected_props[] = {
      "property float x",    "property float y",     "property float z",
      "property uchar red",  "property uchar green", "property uchar blue",
      "property uchar class_id"};
  std::size_t prop = 0;
  while (next() != "end_header") {
    if (line.rfind("element vertex ", 0) == 0) {
      count = std::stoull(line.substr(15));
      have_count = true;
    } else if (line.rfind("property ", 0) == 0) {
      if (prop >= 7 || line != expected_props[prop])
        throw IoError(path.string() + ": unexpected property '" + line + "'");
      ++prop;
    } else if (line.rfind("comment", 0) != 0) {
      throw IoError(path.string() + ": unexpected header line '" + line + "'");
    }
  }
  if (!have_count || prop != 7)
    throw IoError(path.string() + ": incomplete PLY header");

  SemanticPointCloud cloud;
  cloud.points.resize(count);
  for (SemanticPoint& p : cloud.points) {
    char buf[16];
    f.read(buf, 16);
    if (!f) throw IoError(path.string() + ": truncated PLY payload");
    std::memcpy(&p.x, buf, 4);
    std::memcpy(&p.y, buf + 4, 4);
    std::memcpy(&p.z, buf + 8, 4);
    p.r = std::uint8_t(buf[12]);
    p.g = std::uint8_t(buf[13]);
    p.b = std::uint8_t(buf[14]);
    p.class_id = std::uint8_t(buf[15]);
  }
  return cloud;
}

}  // namespace semfeat::geo
