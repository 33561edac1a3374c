#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kdmvs/pipeline/config.hpp"
#include "kdmvs/synth/dataset.hpp"

namespace kdmvs::pipeline {

// One training/inference sample: a reference view of a scene.
struct Sample {
  int scene = 0;
  int ref = 0;
};

// Inputs of all scenes under the given roots. Built from load_inputs only,
// so nothing under gt/ is ever read here.
struct SceneSet {
  std::vector<std::filesystem::path> dirs;
  std::vector<dataset::SceneInputs> scenes;

  std::vector<Sample> samples() const {
    std::vector<Sample> out;
    for (int s = 0; s < static_cast<int>(scenes.size()); ++s)
      for (int v = 0; v < scenes[s].views(); ++v) out.push_back({s, v});
    return out;
  }
};

inline SceneSet load_scene_set(const std::vector<std::string>& roots, const DatasetConfig& cfg) {
  SceneSet set;
  for (const std::string& root : roots)
    for (const auto& dir : dataset::list_scenes(root)) {
      dataset::SceneInputs s = dataset::load_inputs(dir);
      for (const Grid& img : s.images)
        if (img.height() != cfg.height || img.width() != cfg.width)
          throw ConfigError("scene " + dir.string() + ": image size " + std::to_string(img.width()) + "x" +
                            std::to_string(img.height()) + " does not match the configured " +
                            std::to_string(cfg.width) + "x" + std::to_string(cfg.height));
      for (int v = 0; v < s.views(); ++v)
        if (static_cast<int>(s.pairs[v].size()) < cfg.views - 1)
          throw ConfigError("scene " + dir.string() + ": view " + std::to_string(v) + " lists fewer than " +
                            std::to_string(cfg.views - 1) + " source views");
      set.dirs.push_back(dir);
      set.scenes.push_back(std::move(s));
    }
  if (set.scenes.empty()) throw IoError("no scenes found under the configured dataset roots");
  return set;
}

// Reference first, then the first views-1 listed sources.
inline std::vector<int> view_ids(const dataset::SceneInputs& scene, int ref, int views) {
  std::vector<int> ids{ref};
  for (int i = 0; i < views - 1; ++i) ids.push_back(scene.pairs[ref][i]);
  return ids;
}

struct ViewBundle {
  std::vector<Grid> images;
  std::vector<CameraModel> cameras;
};

inline ViewBundle gather(const dataset::SceneInputs& scene, const std::vector<int>& ids) {
  ViewBundle b;
  for (int id : ids) {
    b.images.push_back(scene.images[id]);
    b.cameras.push_back(scene.cameras[id]);
  }
  return b;
}

}  // namespace kdmvs::pipeline
