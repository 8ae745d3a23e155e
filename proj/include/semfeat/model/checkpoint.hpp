#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semfeat/core/errors.hpp"
#include "semfeat/model/network.hpp"

namespace semfeat::model {

inline constexpr char kCheckpointMagic[4] = {'S', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ArchiveInfo {
  ModelConfig model;
  nlohmann::json meta;
  nlohmann::json tensors;
  std::uint64_t payload_base = 0;
};

namespace detail {

template <class T>
const char* scalar_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  if constexpr (std::is_same_v<T, double>) return "f64";
  return "unknown";
}

template <class T>
ArchiveInfo parse_header(std::ifstream& f, const std::filesystem::path& path) {
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError(path.string() + " is not a checkpoint archive");
  std::uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion)
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  std::uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), sizeof mlen);
  std::string mbytes(mlen, '\0');
  f.read(mbytes.data(), std::streamsize(mlen));
  if (!f) throw IoError("truncated checkpoint " + path.string());
  nlohmann::json manifest = nlohmann::json::parse(mbytes);
  if (manifest.at("scalar") != scalar_name<T>())
    throw IoError(path.string() + ": checkpoint scalar is " +
                  manifest.at("scalar").get<std::string>() + ", expected " + scalar_name<T>());

  ArchiveInfo info;
  const auto& m = manifest.at("model");
  info.model.depth = m.at("depth");
  info.model.base_channels = m.at("base_channels");
  info.model.d_enc = m.at("d_enc");
  info.model.d_task = m.at("d_task");
  info.model.d_attn = m.at("d_attn");
  info.model.d_desc = m.at("d_desc");
  info.model.num_classes = m.at("num_classes");
  info.model.mixer_residual = m.at("mixer_residual");
  info.meta = manifest.at("meta");
  info.tensors = manifest.at("tensors");
  info.payload_base = 4 + sizeof(std::uint32_t) + sizeof(std::uint64_t) + mlen;
  return info;
}

}  // namespace detail

// Archive layout: magic, u32 version, u64 manifest length, JSON manifest,
// then the raw little-endian tensor payload. The manifest records the model
// configuration, scalar type, per-tensor shapes and byte offsets, and a
// free-form meta object.
template <class T>
void write_archive(const std::filesystem::path& path, const ModelConfig& cfg,
                   nlohmann::ordered_json meta,
                   const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
  nlohmann::ordered_json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["scalar"] = detail::scalar_name<T>();
  manifest["model"] = {{"depth", cfg.depth},
                       {"base_channels", cfg.base_channels},
                       {"d_enc", cfg.d_enc},
                       {"d_task", cfg.d_task},
                       {"d_attn", cfg.d_attn},
                       {"d_desc", cfg.d_desc},
                       {"num_classes", cfg.num_classes},
                       {"mixer_residual", cfg.mixer_residual}};
  manifest["meta"] = std::move(meta);

  std::uint64_t offset = 0;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& [name, t] : tensors) {
    nlohmann::ordered_json e;
    e["name"] = name;
    std::vector<int> dims;
    for (int d = 0; d < t->rank(); ++d) dims.push_back(t->dim(d));
    e["dims"] = dims;
    e["offset"] = offset;
    e["count"] = t->size();
    entries.push_back(std::move(e));
    offset += t->size() * sizeof(T);
  }
  manifest["tensors"] = std::move(entries);

  const std::string mbytes = manifest.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(kCheckpointMagic, 4);
  const std::uint32_t version = kCheckpointVersion;
  f.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint64_t mlen = mbytes.size();
  f.write(reinterpret_cast<const char*>(&mlen), sizeof mlen);
  f.write(mbytes.data(), std::streamsize(mbytes.size()));
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t->data()), std::streamsize(t->size() * sizeof(T)));
  if (!f) throw IoError("short write to " + path.string());
}

// Reads the named tensors (shapes must already match the archive) and returns
// the parsed header. Tensors present in the archive but not requested are
// left untouched.
template <class T>
ArchiveInfo read_archive(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, Tensor<T>*>>& tensors) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  const ArchiveInfo info = detail::parse_header<T>(f, path);

  for (const auto& [name, dst] : tensors) {
    const nlohmann::json* entry = nullptr;
    for (const auto& e : info.tensors)
      if (e.at("name") == name) {
        entry = &e;
        break;
      }
    if (!entry) throw IoError(path.string() + ": archive has no tensor named " + name);
    if (entry->at("count").get<std::uint64_t>() != dst->size())
      throw IoError(path.string() + ": tensor " + name + " holds " +
                    std::to_string(entry->at("count").get<std::uint64_t>()) +
                    " values, expected " + std::to_string(dst->size()));
    f.seekg(std::streamoff(info.payload_base + entry->at("offset").get<std::uint64_t>()));
    f.read(reinterpret_cast<char*>(dst->data()), std::streamsize(dst->size() * sizeof(T)));
    if (!f) throw IoError("truncated checkpoint payload in " + path.string());
  }
  return info;
}

template <class T>
ArchiveInfo read_archive_header(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  return detail::parse_header<T>(f, path);
}

// Convenience wrappers for a bare network snapshot.
template <class T>
void save_network(const std::filesystem::path& path, const Network<T>& net,
                  nlohmann::ordered_json meta = nlohmann::ordered_json::object()) {
  std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
  net.for_each_param([&](const std::string& name, const Tensor<T>& t, int) {
    tensors.push_back({"param." + name, &t});
  });
  write_archive(path, net.config(), std::move(meta), tensors);
}

template <class T>
Network<T> load_network(const std::filesystem::path& path, nlohmann::json* meta_out = nullptr) {
  const ArchiveInfo header = read_archive_header<T>(path);
  Network<T> net(header.model);
  std::vector<std::pair<std::string, Tensor<T>*>> tensors;
  net.for_each_param([&](const std::string& name, Tensor<T>& t, int) {
    tensors.push_back({"param." + name, &t});
  });
  const ArchiveInfo info = read_archive<T>(path, tensors);
  if (meta_out) *meta_out = info.meta;
  return net;
}

}  // namespace semfeat::model
