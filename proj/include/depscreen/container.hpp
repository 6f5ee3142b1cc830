#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "depscreen/common.hpp"
#include "depscreen/tensor.hpp"

// Self-describing binary tensor container:
//   8-byte magic, u32 format version, u64 header length, JSON header,
//   then raw little-endian f64 tensor data in header order.
// The JSON header carries "kind" (checkpoint / weights / detector), a
// tensor manifest (name + shape) and kind-specific metadata.

namespace depscreen {

constexpr char kContainerMagic[8] = {'D', 'S', 'C', 'N', 'T', 'N', 'R', '1'};
constexpr std::uint32_t kContainerVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "container format assumes a little-endian host");

struct Container {
  nlohmann::json header;
  std::map<std::string, Tensor> tensors;
};

inline void write_container(const std::filesystem::path& path, nlohmann::json header,
                            const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    manifest.push_back({{"name", name}, {"shape", t->shape}});
  }
  header["tensors"] = std::move(manifest);
  header["format_version"] = kContainerVersion;
  const std::string header_bytes = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kContainerMagic, sizeof(kContainerMagic));
  const std::uint32_t version = kContainerVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t len = header_bytes.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t->ptr()),
              static_cast<std::streamsize>(t->numel() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open container: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kContainerMagic, 8)) {
    throw CheckpointError("bad container magic in " + path.string());
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kContainerVersion) {
    throw CheckpointError("unsupported container version " + std::to_string(version) +
                          " in " + path.string());
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len == 0 || len > (1ull << 30)) {
    throw CheckpointError("corrupt container header in " + path.string());
  }
  std::string header_bytes(len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated container header in " + path.string());

  Container c;
  try {
    c.header = nlohmann::json::parse(header_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt container header in " + path.string() + ": " + e.what());
  }
  if (!c.header.contains("tensors") || !c.header["tensors"].is_array()) {
    throw CheckpointError("container missing tensor manifest: " + path.string());
  }
  for (const auto& entry : c.header["tensors"]) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<std::int64_t> shape = entry.at("shape").get<std::vector<std::int64_t>>();
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.ptr()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw CheckpointError("truncated tensor data in " + path.string());
    c.tensors.emplace(name, std::move(t));
  }
  return c;
}

}  // namespace depscreen
