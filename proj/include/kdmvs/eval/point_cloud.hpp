#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kdmvs/geometry/camera.hpp"
#include "kdmvs/tensor/grid.hpp"
#include "kdmvs/util/binary_io.hpp"

namespace kdmvs::eval {

struct PointCloud {
  std::vector<Vector3d> points;
  std::vector<std::array<std::uint8_t, 3>> colors;  // empty or one per point

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_colors() const { return !colors.empty(); }
};

namespace detail {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

inline CellKey cell_of(const Vector3d& p, double cell) {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell)), static_cast<std::int64_t>(std::floor(p.y() / cell)),
          static_cast<std::int64_t>(std::floor(p.z() / cell))};
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

struct FuseView {
  const Grid* depth;
  const Grid* mask;
  const CameraModel* camera;
  const Grid* image = nullptr;  // optional RGB for point colors
};

// Lifts every masked pixel of every view to world space. With a positive
// voxel size only the first point landing in each voxel is kept.
inline PointCloud fuse(const std::vector<FuseView>& views, double voxel = 0.0) {
  PointCloud cloud;
  const bool colored = !views.empty() && std::all_of(views.begin(), views.end(), [](const FuseView& v) { return v.image; });
  std::unordered_map<detail::CellKey, char, detail::CellHash> seen;
  for (const FuseView& v : views) {
    require_same_shape(*v.depth, *v.mask, "fuse");
    for (int y = 0; y < v.depth->height(); ++y)
      for (int x = 0; x < v.depth->width(); ++x) {
        if ((*v.mask)(y, x) == 0.0) continue;
        const double d = (*v.depth)(y, x);
        if (!(d > 0.0)) continue;
        const Vector3d p = v.camera->backproject(Vector2d(x, y), d);
        if (voxel > 0.0 && !seen.emplace(detail::cell_of(p, voxel), 1).second) continue;
        cloud.points.push_back(p);
        if (colored)
          cloud.colors.push_back({detail::to_byte((*v.image)(y, x, 0)), detail::to_byte((*v.image)(y, x, 1)),
                                  detail::to_byte((*v.image)(y, x, 2))});
      }
  }
  return cloud;
}

// Exact nearest-neighbor distances, capped at `cap`, through a uniform hash
// grid with cell size = cap: any point closer than the cap lies in one of
// the 27 cells around the query.
class NearestIndex {
 public:
  NearestIndex(const PointCloud& cloud, double cap) : cloud_(cloud), cap_(cap) {
    if (!(cap > 0.0)) throw Error("NearestIndex: cap must be positive");
    for (std::size_t i = 0; i < cloud.size(); ++i) cells_[detail::cell_of(cloud.points[i], cap)].push_back(i);
  }

  double capped_distance(const Vector3d& q) const {
    const detail::CellKey c = detail::cell_of(q, cap_);
    double best = cap_ * cap_;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second) best = std::min(best, (cloud_.points[i] - q).squaredNorm());
        }
    return std::sqrt(best);
  }

 private:
  const PointCloud& cloud_;
  double cap_;
  std::unordered_map<detail::CellKey, std::vector<std::size_t>, detail::CellHash> cells_;
};

struct CloudMetrics {
  double accuracy = 0.0;
  double completeness = 0.0;
  double overall = 0.0;
};

inline CloudMetrics acc_comp(const PointCloud& pred, const PointCloud& gt, double cap) {
  if (pred.empty()) throw Error("acc_comp: predicted cloud is empty");
  if (gt.empty()) throw Error("acc_comp: ground-truth cloud is empty");
  auto mean_distance = [cap](const PointCloud& from, const PointCloud& to) {
    const NearestIndex index(to, cap);
    double s = 0.0;
    for (const Vector3d& p : from.points) s += index.capped_distance(p);
    return s / static_cast<double>(from.size());
  };
  CloudMetrics m;
  m.accuracy = mean_distance(pred, gt);
  m.completeness = mean_distance(gt, pred);
  m.overall = 0.5 * (m.accuracy + m.completeness);
  return m;
}

// Binary little-endian PLY with float x, y, z and optional uchar RGB.
inline void write_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size()
         << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (cloud.has_colors()) header << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  header << "end_header\n";
  ByteWriter w;
  w.put_raw(header.str());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) w.put(static_cast<float>(cloud.points[i][a]));
    if (cloud.has_colors())
      for (int a = 0; a < 3; ++a) w.put(cloud.colors[i][a]);
  }
  w.save(path);
}

inline PointCloud read_ply(const std::filesystem::path& path) {
  ByteReader r = ByteReader::load(path);
  std::string line;
  auto next_line = [&r]() {
    std::string s;
    for (char c = r.get<char>(); c != '\n'; c = r.get<char>()) s += c;
    return s;
  };
  if (next_line() != "ply") throw IoError(path.string() + ": not a PLY file");
  if (next_line() != "format binary_little_endian 1.0") throw IoError(path.string() + ": unsupported PLY format");
  std::size_t count = 0;
  std::vector<std::string> props;
  while ((line = next_line()) != "end_header") {
    std::istringstream is(line);
    std::string kw;
    is >> kw;
    if (kw == "element") {
      std::string name;
      is >> name >> count;
      if (name != "vertex" || !is) throw IoError(path.string() + ": unsupported element '" + line + "'");
    } else if (kw == "property") {
      std::string type, name;
      is >> type >> name;
      props.push_back(type + " " + name);
    } else if (kw != "comment") {
      throw IoError(path.string() + ": unexpected header line '" + line + "'");
    }
  }
  const std::vector<std::string> xyz = {"float x", "float y", "float z"};
  const std::vector<std::string> rgb = {"uchar red", "uchar green", "uchar blue"};
  std::vector<std::string> with_rgb = xyz;
  with_rgb.insert(with_rgb.end(), rgb.begin(), rgb.end());
  const bool colored = props == with_rgb;
  if (!colored && props != xyz) throw IoError(path.string() + ": unsupported vertex properties");
  PointCloud cloud;
  for (std::size_t i = 0; i < count; ++i) {
    Vector3d p;
    for (int a = 0; a < 3; ++a) p[a] = r.get<float>();
    cloud.points.push_back(p);
    if (colored) cloud.colors.push_back({r.get<std::uint8_t>(), r.get<std::uint8_t>(), r.get<std::uint8_t>()});
  }
  r.expect_end();
  return cloud;
}

}  // namespace kdmvs::eval
