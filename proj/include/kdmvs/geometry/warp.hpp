#pragma once

#include <utility>

#include "kdmvs/geometry/camera.hpp"
#include "kdmvs/tensor/ops.hpp"

namespace kdmvs {

// Maps reference pixels at a given depth into a source view:
//   p_src ~ K_src [R_rel (K_ref^-1 p d) + t_rel]
// Factored as X(d) = a(p) * d + b with a(p) = K_src R_rel K_ref^-1 p~ and
// b = K_src t_rel.
class PixelWarper {
 public:
  PixelWarper(const CameraModel& ref, const CameraModel& src) {
    const RelativePose rel = relative_pose(ref, src);
    A_ = src.K * rel.R * ref.K.inverse();
    b_ = src.K * rel.t;
  }

  Vector3d direction(double x, double y) const { return A_ * Vector3d(x, y, 1.0); }
  const Vector3d& offset() const { return b_; }

  // Homogeneous source point for pixel (x, y) at reference depth d.
  Vector3d homogeneous(double x, double y, double d) const { return direction(x, y) * d + b_; }

 private:
  Matrix3d A_;
  Vector3d b_;
};

struct PixelWarp {
  Vector2d pixel;
  double depth = 0.0;  // z in the source camera
  bool valid = false;  // false when the point is behind the source camera
};

inline PixelWarp warp_pixel(const Vector2d& p, double d, const CameraModel& ref, const CameraModel& src) {
  const Vector3d x = PixelWarper(ref, src).homogeneous(p.x(), p.y(), d);
  PixelWarp out;
  out.depth = x.z();
  out.valid = x.z() > 1e-9;
  if (out.valid) out.pixel = Vector2d(x.x() / x.z(), x.y() / x.z());
  return out;
}

// Far outside any image; bilinear sampling masks these out.
inline constexpr double kInvalidCoord = -1e6;

struct WarpedCoords {
  Var coords;  // H x W x 2 source pixel coordinates (x, y)
  Grid mask;   // 1 where the point lies in front of the source camera
};

// Differentiable per-pixel source coordinates for a reference depth map.
inline WarpedCoords warp_coords(const Var& depth, const CameraModel& ref, const CameraModel& src) {
  const Grid& dv = depth.value();
  if (dv.channels() != 1) throw ShapeError("warp_coords: depth must have 1 channel, got " + to_string(dv.shape()));
  const PixelWarper warper(ref, src);
  const int h = dv.height(), w = dv.width();
  Grid coords(h, w, 2);
  Grid mask(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Vector3d X = warper.homogeneous(x, y, dv(y, x));
      if (X.z() > 1e-9) {
        coords(y, x, 0) = X.x() / X.z();
        coords(y, x, 1) = X.y() / X.z();
        mask(y, x) = 1.0;
      } else {
        coords(y, x, 0) = kInvalidCoord;
        coords(y, x, 1) = kInvalidCoord;
      }
    }
  Var out = depth.tape()->record(std::move(coords), {depth},
                                 [depth, warper, mask, w](const Grid&, const Grid& g, std::span<Grid* const> pg) {
                                   const Grid& dv = depth.value();
                                   for (std::size_t p = 0; p < mask.size(); ++p) {
                                     if (mask[p] == 0.0) continue;
                                     const int y = static_cast<int>(p) / w, x = static_cast<int>(p) % w;
                                     const Vector3d a = warper.direction(x, y);
                                     const Vector3d X = a * dv[p] + warper.offset();
                                     const double iz2 = 1.0 / (X.z() * X.z());
                                     const double du = (a.x() * X.z() - X.x() * a.z()) * iz2;
                                     const double dvv = (a.y() * X.z() - X.y() * a.z()) * iz2;
                                     (*pg[0])[p] += g[2 * p] * du + g[2 * p + 1] * dvv;
                                   }
                                 });
  return {out, std::move(mask)};
}

struct Warped {
  Var value;  // source grid resampled onto the reference pixel lattice
  Grid mask;  // 1 where the warp is in front of the camera and in bounds
};

// Reconstructs the reference view from a source grid using the reference
// depth map. Differentiable w.r.t. the source grid and the depth.
inline Warped warp_grid(const Var& src_grid, const Var& depth, const CameraModel& ref, const CameraModel& src) {
  WarpedCoords wc = warp_coords(depth, ref, src);
  ops::Sampled s = ops::bilinear_sample(src_grid, wc.coords);
  return {s.value, multiply(s.mask, wc.mask)};
}

}  // namespace kdmvs
