#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kdmvs/geometry/camera_io.hpp"
#include "kdmvs/synth/image_io.hpp"
#include "kdmvs/synth/scene.hpp"

// On-disk scene layout:
//   scene/images/%03d.ppm      8-bit RGB
//   scene/cams/%03d_cam.txt    camera text file
//   scene/gt/%03d.pfm          analytic z-depth
//   scene/gt/%03d_covis.pfm    number of other views that see each pixel
//   scene/pair.txt             view count, then "ref count src..." per line
namespace kdmvs::dataset {

namespace fs = std::filesystem;

inline std::string view_name(int v, const char* suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03d%s", v, suffix);
  return buf;
}

// What a training run may see: images, cameras and view pairing.
struct SceneInputs {
  std::string name;
  std::vector<Grid> images;
  std::vector<CameraModel> cameras;
  std::vector<std::vector<int>> pairs;

  int views() const { return static_cast<int>(images.size()); }
};

// Evaluation-only data, stored under gt/.
struct SceneTruth {
  std::vector<Grid> depths;
  std::vector<Grid> covis_count;

  // Pixels seen by at least one source view.
  Grid eval_mask(int view) const {
    Grid m(covis_count[view].shape());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = covis_count[view][i] >= 1.0 ? 1.0 : 0.0;
    return m;
  }
};

inline std::string format_pairs(const std::vector<std::vector<int>>& pairs) {
  std::ostringstream os;
  os << pairs.size() << '\n';
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    os << r << ' ' << pairs[r].size();
    for (int s : pairs[r]) os << ' ' << s;
    os << '\n';
  }
  return os.str();
}

inline std::vector<std::vector<int>> parse_pairs(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  int n = 0;
  if (!(in >> n) || n < 1) throw IoError(origin + ": bad view count");
  std::vector<std::vector<int>> pairs(n);
  std::vector<bool> seen(n, false);
  for (int line = 0; line < n; ++line) {
    int ref = -1, count = -1;
    if (!(in >> ref >> count) || ref < 0 || ref >= n || count < 0 || seen[ref])
      throw IoError(origin + ": malformed pair line " + std::to_string(line + 2));
    seen[ref] = true;
    for (int i = 0; i < count; ++i) {
      int s = -1;
      if (!(in >> s) || s < 0 || s >= n || s == ref) throw IoError(origin + ": bad source id for view " + std::to_string(ref));
      pairs[ref].push_back(s);
    }
  }
  return pairs;
}

inline void write_scene(const synth::RenderedScene& scene, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "cams");
  fs::create_directories(dir / "gt");
  const int n = static_cast<int>(scene.images.size());
  for (int v = 0; v < n; ++v) {
    write_ppm(scene.images[v], dir / "images" / view_name(v, ".ppm"));
    CameraModel cam = scene.cameras[v];
    write_camera(cam, dir / "cams" / view_name(v, "_cam.txt"));
    write_pfm(scene.depths[v], dir / "gt" / view_name(v, ".pfm"));
    write_pfm(scene.covis_count[v], dir / "gt" / view_name(v, "_covis.pfm"));
  }
  std::ofstream pair(dir / "pair.txt");
  if (!pair) throw IoError("cannot write " + (dir / "pair.txt").string());
  pair << format_pairs(scene.pairs);
}

// Loads images, cameras and pairs. Never opens anything under gt/.
inline SceneInputs load_inputs(const fs::path& dir) {
  SceneInputs s;
  s.name = dir.filename().string();
  std::ifstream pair(dir / "pair.txt");
  if (!pair) throw IoError("missing " + (dir / "pair.txt").string());
  std::stringstream ss;
  ss << pair.rdbuf();
  s.pairs = parse_pairs(ss.str(), (dir / "pair.txt").string());
  for (int v = 0; v < static_cast<int>(s.pairs.size()); ++v) {
    s.images.push_back(read_ppm(dir / "images" / view_name(v, ".ppm")));
    s.cameras.push_back(read_camera(dir / "cams" / view_name(v, "_cam.txt")));
  }
  return s;
}

inline SceneTruth load_truth(const fs::path& dir, int views) {
  SceneTruth t;
  for (int v = 0; v < views; ++v) {
    t.depths.push_back(read_pfm(dir / "gt" / view_name(v, ".pfm")));
    t.covis_count.push_back(read_pfm(dir / "gt" / view_name(v, "_covis.pfm")));
  }
  return t;
}

// Scene directories (those holding a pair.txt) directly under root, sorted.
inline std::vector<fs::path> list_scenes(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "pair.txt")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace kdmvs::dataset
