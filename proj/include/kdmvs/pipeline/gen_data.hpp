#pragma once

#include <spdlog/spdlog.h>

#include <filesystem>
#include <string>

#include "kdmvs/pipeline/config.hpp"
#include "kdmvs/synth/dataset.hpp"

namespace kdmvs::pipeline {

inline std::string scene_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%03d", index);
  return buf;
}

// Renders `count` scenes into root, cycling through the geometry kinds.
// A spec the renderer rejects is redrawn from the next seed of its stream.
inline void generate_split(const RunConfig& cfg, const std::filesystem::path& root, int count, std::uint64_t stream) {
  static constexpr synth::GeometryKind kKinds[] = {synth::GeometryKind::kTiltedPlanes, synth::GeometryKind::kSphereOnPlane,
                                                   synth::GeometryKind::kBoxRelief};
  for (int i = 0; i < count; ++i) {
    synth::SceneSpec spec;
    spec.kind = kKinds[i % 3];
    spec.views = cfg.dataset.views;
    spec.height = cfg.dataset.height;
    spec.width = cfg.dataset.width;
    spec.lighting_perturbation = cfg.data_gen.lighting_perturbation;
    spec.gain_spread = cfg.data_gen.gain_spread;
    spec.bias_spread = cfg.data_gen.bias_spread;
    for (int attempt = 0;; ++attempt) {
      spec.seed = derive_seed(derive_seed(cfg.data_gen.seed, stream), static_cast<std::uint64_t>(i) * 1000 + attempt);
      try {
        dataset::write_scene(synth::render_scene(spec), root / scene_name(i));
        break;
      } catch (const Error& e) {
        if (attempt >= 20) throw;
        spdlog::debug("scene {} attempt {} rejected: {}", i, attempt, e.what());
      }
    }
  }
}

// Writes the training split to the first train root and the validation
// split to the first validation root.
inline void generate_dataset(const RunConfig& cfg) {
  generate_split(cfg, cfg.dataset.train_roots.at(0), cfg.data_gen.train_scenes, 0);
  if (!cfg.dataset.val_roots.empty()) generate_split(cfg, cfg.dataset.val_roots.at(0), cfg.data_gen.val_scenes, 1);
}

}  // namespace kdmvs::pipeline
