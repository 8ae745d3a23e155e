#pragma once

#include <string>

#include "semfeat/core/errors.hpp"

namespace semfeat::model {

struct ModelConfig {
  int depth = 3;           // encoder levels; spatial dims halve per level
  int base_channels = 32;  // level-0 width, doubling per level
  int d_enc = 128;         // bottleneck channels
  int d_task = 64;         // task embedding dimension
  int d_attn = 64;         // mixer attention dimension
  int d_desc = 128;        // descriptor dimension
  int num_classes = 6;
  bool mixer_residual = false;

  int channels_at(int level) const { return base_channels << level; }
  int pool_factor() const { return 1 << depth; }

  void validate() const {
    if (depth < 1 || depth > 6) throw ConfigError("model.depth must be in 1..6");
    if (base_channels < 1) throw ConfigError("model.base_channels must be >= 1");
    if (d_enc < 1 || d_task < 1 || d_attn < 1 || d_desc < 1)
      throw ConfigError("model dimensions must be >= 1");
    if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void require_divisible(int rows, int cols, const ModelConfig& cfg) {
  const int f = cfg.pool_factor();
  if (rows % f != 0 || cols % f != 0)
    throw ShapeError("image dims " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " not divisible by 2^depth = " + std::to_string(f));
}

}  // namespace semfeat::model
