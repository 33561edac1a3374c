#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "kdmvs/geometry/camera.hpp"
#include "kdmvs/synth/image_io.hpp"
#include "kdmvs/util/binary_io.hpp"

namespace kdmvs::check {

struct CheckThresholds {
  double confidence = 0.15;
  double reprojection = 1.0;  // pixels
  double geometric = 0.01;    // relative depth error

  void validate() const {
    if (!(confidence > 0.0 && reprojection > 0.0 && geometric > 0.0))
      throw ConfigError("check thresholds must be positive");
  }
};

struct Reprojection {
  Vector2d source_pixel;  // p_i, continuous
  Vector2d pixel;         // p^_{0,i} in the reference image
  double depth = 0.0;     // reference-frame depth of the lifted source point
};

// Casts reference pixel p0 at depth d0 into the source view, reads the source
// depth at the nearest pixel, lifts that point and projects it back into the
// reference. Empty when the source pixel is out of bounds, the sampled depth
// is not positive, or a point falls behind a camera.
inline std::optional<Reprojection> reproject(const Vector2d& p0, double d0, const Grid& src_depth,
                                             const CameraModel& ref, const CameraModel& src) {
  if (!(d0 > 0.0)) return std::nullopt;
  const auto fwd = project(src, ref.backproject(p0, d0));
  if (!fwd) return std::nullopt;
  const double u = fwd->pixel.x(), v = fwd->pixel.y();
  const double xi = std::round(u), yi = std::round(v);
  if (!(xi >= 0 && yi >= 0 && xi <= src_depth.width() - 1 && yi <= src_depth.height() - 1)) return std::nullopt;
  const double di = src_depth(static_cast<int>(yi), static_cast<int>(xi));
  if (!(di > 0.0)) return std::nullopt;
  const auto back = project(ref, src.backproject(fwd->pixel, di));
  if (!back) return std::nullopt;
  return Reprojection{fwd->pixel, back->pixel, back->depth};
}

struct ViewErrors {
  double reprojection = 0.0;
  double geometric = 0.0;
};

inline ViewErrors per_view_errors(const Vector2d& p0, double d0, const Reprojection& r) {
  return {(p0 - r.pixel).norm(), std::abs(d0 - r.depth) / d0};
}

// Pixels of the reference view that pass the check against every source,
// with the reference-frame depths of all N views (index 0 = reference).
struct ValidatedDepthSet {
  int height = 0;
  int width = 0;
  int views = 0;                 // N = 1 + number of sources
  std::vector<int> pixels;       // row-major pixel indices, increasing
  std::vector<double> depths;    // pixels.size() x views

  std::size_t size() const { return pixels.size(); }
  double depth(std::size_t i, int view) const { return depths[i * views + view]; }
  double ratio() const { return height * width == 0 ? 0.0 : static_cast<double>(size()) / (height * width); }

  Grid mask() const {
    Grid m(height, width, 1);
    for (int p : pixels) m[p] = 1.0;
    return m;
  }

  bool operator==(const ValidatedDepthSet&) const = default;
};

// depths[0] / cams[0] belong to the reference view, the rest to its sources.
inline ValidatedDepthSet validate(const std::vector<Grid>& depths, const Grid& confidence,
                                  const std::vector<CameraModel>& cams, const CheckThresholds& tau) {
  if (depths.size() < 2) throw Error("validate: need at least 2 views");
  if (depths.size() != cams.size()) throw Error("validate: depths/cameras count mismatch");
  const Grid& d0 = depths[0];
  require_same_shape(d0, confidence, "validate");
  ValidatedDepthSet out{d0.height(), d0.width(), static_cast<int>(depths.size()), {}, {}};
  std::vector<double> row(out.views);
  for (int y = 0; y < d0.height(); ++y)
    for (int x = 0; x < d0.width(); ++x) {
      if (!(confidence(y, x) > tau.confidence)) continue;
      const double d = d0(y, x);
      if (!(d > 0.0)) continue;
      const Vector2d p0(x, y);
      row[0] = d;
      bool ok = true;
      for (int v = 1; v < out.views && ok; ++v) {
        const auto r = reproject(p0, d, depths[v], cams[0], cams[v]);
        if (!r) {
          ok = false;
          break;
        }
        const ViewErrors e = per_view_errors(p0, d, *r);
        ok = e.reprojection < tau.reprojection && e.geometric < tau.geometric;
        row[v] = r->depth;
      }
      if (!ok) continue;
      out.pixels.push_back(y * d0.width() + x);
      out.depths.insert(out.depths.end(), row.begin(), row.end());
    }
  return out;
}

// Sidecar layout (little-endian):
//   8 bytes magic "KDMVSVAL", u32 version (1), i32 height, i32 width,
//   i32 views, u32 count, then per validated pixel: u32 pixel index
//   followed by `views` f64 depths.
inline void write_validated(const ValidatedDepthSet& set, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_raw("KDMVSVAL");
  w.put(std::uint32_t{1});
  w.put(static_cast<std::int32_t>(set.height));
  w.put(static_cast<std::int32_t>(set.width));
  w.put(static_cast<std::int32_t>(set.views));
  w.put(static_cast<std::uint32_t>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    w.put(static_cast<std::uint32_t>(set.pixels[i]));
    for (int v = 0; v < set.views; ++v) w.put(set.depth(i, v));
  }
  w.save(path);
}

inline ValidatedDepthSet read_validated(const std::filesystem::path& path) {
  ByteReader r = ByteReader::load(path);
  r.expect_magic("KDMVSVAL");
  if (r.get<std::uint32_t>() != 1) throw IoError(r.origin() + ": unsupported version");
  ValidatedDepthSet set;
  set.height = r.get<std::int32_t>();
  set.width = r.get<std::int32_t>();
  set.views = r.get<std::int32_t>();
  if (set.height < 0 || set.width < 0 || set.views < 1) throw IoError(r.origin() + ": bad dimensions");
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto p = r.get<std::uint32_t>();
    if (p >= static_cast<std::uint32_t>(set.height * set.width)) throw IoError(r.origin() + ": pixel index out of range");
    set.pixels.push_back(static_cast<int>(p));
    for (int v = 0; v < set.views; ++v) set.depths.push_back(r.get<double>());
  }
  r.expect_end();
  return set;
}

inline void write_mask(const Grid& mask, const std::filesystem::path& path) { write_pfm(mask, path); }

}  // namespace kdmvs::check
