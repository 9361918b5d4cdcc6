#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "caer/model.hpp"

namespace caer {

// Checkpoint layout (little-endian): magic "CAER", format version u32,
// variant u8, K u32, tensor count u32, training step u64, then per tensor
// {name length u32, UTF-8 name, rank u32, extents u32 each, raw f32 data}.

namespace detail {

constexpr char kCheckpointMagic[4] = {'C', 'A', 'E', 'R'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename V>
void write_pod(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw CheckpointError("checkpoint: truncated file");
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  os.write(detail::kCheckpointMagic, 4);
  detail::write_pod<std::uint32_t>(os, detail::kCheckpointVersion);
  detail::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(params.cfg.variant));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.cfg.K));
  std::uint32_t count = 0;
  for_each_param(params, [&](const std::string&, const auto&, bool) { ++count; });
  detail::write_pod<std::uint32_t>(os, count);
  detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(params.step));
  for_each_param(params, [&](const std::string& name, const Tensor<T>& t, bool) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (int ax = 0; ax < t.rank(); ++ax)
      detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.extent(ax)));
    for (std::int64_t i = 0; i < t.numel(); ++i)
      detail::write_pod<float>(os, static_cast<float>(t[i]));
  });
  if (!os) throw CheckpointError("checkpoint: write to " + path.string() + " failed");
}

/// Loads a checkpoint and validates every tensor against the architecture
/// implied by `cfg`; the first mismatching tensor is named in the error.
template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != detail::kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  detail::read_pod<std::uint8_t>(is);  // stored variant; shapes are authoritative
  const auto k = detail::read_pod<std::uint32_t>(is);
  if (static_cast<std::int64_t>(k) != cfg.K)
    throw CheckpointError("checkpoint: file has K=" + std::to_string(k) + ", expected K=" +
                          std::to_string(cfg.K));
  const auto count = detail::read_pod<std::uint32_t>(is);
  if (count > 100000) throw CheckpointError("checkpoint: implausible tensor count");
  const auto step = detail::read_pod<std::uint64_t>(is);

  struct Stored {
    Shape shape;
    std::vector<float> data;
    bool used = false;
  };
  std::map<std::string, Stored> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(is);
    if (name_len > 4096) throw CheckpointError("checkpoint: implausible tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw CheckpointError("checkpoint: truncated file");
    const auto rank = detail::read_pod<std::uint32_t>(is);
    if (rank < 1 || rank > 5)
      throw CheckpointError("checkpoint: tensor '" + name + "' has invalid rank");
    std::vector<std::int64_t> ext;
    for (std::uint32_t ax = 0; ax < rank; ++ax)
      ext.push_back(static_cast<std::int64_t>(detail::read_pod<std::uint32_t>(is)));
    Stored s;
    s.shape = Shape(ext);
    s.data.resize(static_cast<std::size_t>(s.shape.numel()));
    is.read(reinterpret_cast<char*>(s.data.data()),
            static_cast<std::streamsize>(s.data.size() * sizeof(float)));
    if (!is) throw CheckpointError("checkpoint: truncated file");
    if (stored.count(name)) throw CheckpointError("checkpoint: duplicate tensor '" + name + "'");
    stored.emplace(std::move(name), std::move(s));
  }

  ModelParams<T> params = make_params<T>(cfg);
  params.step = static_cast<std::int64_t>(step);
  for_each_param(params, [&](const std::string& name, Tensor<T>& t, bool) {
    auto it = stored.find(name);
    if (it == stored.end())
      throw CheckpointError("checkpoint: missing tensor '" + name + "'");
    if (it->second.shape != t.shape())
      throw CheckpointError("checkpoint: tensor '" + name + "' has shape " +
                            it->second.shape.str() + ", architecture expects " + t.shape().str());
    for (std::int64_t i = 0; i < t.numel(); ++i)
      t[i] = static_cast<T>(it->second.data[static_cast<std::size_t>(i)]);
    it->second.used = true;
  });
  for (const auto& [name, s] : stored)
    if (!s.used)
      throw CheckpointError("checkpoint: unexpected tensor '" + name + "'");
  return params;
}

/// Loads a checkpoint using the variant and K recorded in its header,
/// assuming the production architecture.
template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  detail::read_pod<std::uint32_t>(is);
  const auto variant = detail::read_pod<std::uint8_t>(is);
  const auto k = detail::read_pod<std::uint32_t>(is);
  is.close();
  if (variant > 1) throw CheckpointError("checkpoint: unknown variant byte");
  return load_checkpoint<T>(
      path, ModelConfig::production(static_cast<Variant>(variant), static_cast<std::int64_t>(k)));
}

}  // namespace caer
