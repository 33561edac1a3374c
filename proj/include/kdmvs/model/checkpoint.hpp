#pragma once

#include <cstdint>
#include <filesystem>

#include "kdmvs/tensor/params.hpp"
#include "kdmvs/util/binary_io.hpp"

namespace kdmvs::model {

// Checkpoint layout (all integers and floats little-endian):
//   8 bytes  magic "KDMVSCKP"
//   u32      format version (1)
//   u64      initialization seed
//   u64      config hash
//   u32      parameter count
//   per parameter, in name order:
//     u32 name length, name bytes
//     i32 height, i32 width, i32 channels
//     f64 x (height * width * channels), row-major, channels innermost
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  ParamStore params;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;

  bool operator==(const Checkpoint&) const = default;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_raw("KDMVSCKP");
  w.put(Checkpoint::kVersion);
  w.put(ckpt.seed);
  w.put(ckpt.config_hash);
  w.put(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, g] : ckpt.params) {
    w.put_string(name);
    w.put(static_cast<std::int32_t>(g.height()));
    w.put(static_cast<std::int32_t>(g.width()));
    w.put(static_cast<std::int32_t>(g.channels()));
    for (double v : g.data()) w.put(v);
  }
  w.save(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  ByteReader r = ByteReader::load(path);
  r.expect_magic("KDMVSCKP");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) throw IoError(r.origin() + ": unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.seed = r.get<std::uint64_t>();
  ckpt.config_hash = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const int h = r.get<std::int32_t>(), wd = r.get<std::int32_t>(), c = r.get<std::int32_t>();
    if (h < 0 || wd < 0 || c < 0) throw IoError(r.origin() + ": negative shape for " + name);
    Grid g(h, wd, c);
    for (double& v : g.data()) v = r.get<double>();
    ckpt.params.emplace(std::move(name), std::move(g));
  }
  r.expect_end();
  return ckpt;
}

}  // namespace kdmvs::model
