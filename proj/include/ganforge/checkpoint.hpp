#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ganforge/tensor.hpp"

namespace ganforge {

// Layout: "GFCKPT1\n", u64 LE manifest length, manifest JSON, then float32 LE
// tensor payloads in manifest order. Offsets in the manifest are relative to
// the first payload byte.
inline constexpr char kCheckpointMagic[8] = {'G', 'F', 'C', 'K', 'P', 'T', '1', '\n'};

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct CheckpointData {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const Tensor<float>& tensor(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return t.value;
    }
    throw Error("checkpoint has no tensor " + name);
  }
  bool has(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return true;
    }
    return false;
  }
};

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) { return std::endian::native == std::endian::little ? v : __builtin_bswap32(v); }
inline std::uint64_t to_le(std::uint64_t v) { return std::endian::native == std::endian::little ? v : __builtin_bswap64(v); }

}  // namespace detail

/// Writes atomically: the archive goes to `<path>.tmp` and is renamed over
/// `path` only once complete, so an interrupted write leaves the previous
/// checkpoint intact.
inline void write_checkpoint(const std::filesystem::path& path, nlohmann::json meta,
                             const std::vector<NamedTensor>& tensors) {
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    entries.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"dtype", "float32"}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value.size()) * 4;
  }
  meta["tensors"] = std::move(entries);
  const std::string manifest = meta.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint64_t len = detail::to_le(static_cast<std::uint64_t>(manifest.size()));
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    std::vector<std::uint32_t> buf;
    for (const auto& t : tensors) {
      buf.resize(static_cast<std::size_t>(t.value.size()));
      for (std::size_t i = 0; i < buf.size(); ++i) {
        buf[i] = detail::to_le(std::bit_cast<std::uint32_t>(t.value[static_cast<std::int64_t>(i)]));
      }
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    }
    out.flush();
    if (!out) throw Error("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw Error(path.string() + " is not a ganforge checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  len = detail::to_le(len);
  if (!in || len > (1ull << 32)) throw Error("corrupt checkpoint header in " + path.string());
  std::string manifest(static_cast<std::size_t>(len), '\0');
  in.read(manifest.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("truncated checkpoint manifest in " + path.string());

  CheckpointData ck;
  try {
    ck.meta = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt checkpoint manifest in " + path.string() + ": " + e.what());
  }
  const std::streamoff base = in.tellg();
  for (const auto& e : ck.meta.at("tensors")) {
    if (e.at("dtype") != "float32") throw Error("checkpoint " + path.string() + ": unsupported dtype");
    Shape shape = e.at("shape").get<Shape>();
    Tensor<float> t(shape);
    std::vector<std::uint32_t> buf(static_cast<std::size_t>(t.size()));
    in.seekg(base + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!in) throw Error("truncated payload for " + e.at("name").get<std::string>() + " in " + path.string());
    for (std::size_t i = 0; i < buf.size(); ++i) t[static_cast<std::int64_t>(i)] = std::bit_cast<float>(detail::to_le(buf[i]));
    ck.tensors.push_back({e.at("name").get<std::string>(), std::move(t)});
  }
  return ck;
}

}  // namespace ganforge
