#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>
#include <cmath>
#include <optional>
#include <string>

#include "kdmvs/util/error.hpp"

namespace kdmvs {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

// Pinhole camera with world-to-camera extrinsics: x_cam = R * x_world + t.
// Pixel centers sit at integer coordinates, (0, 0) being the center of the
// top-left pixel; x grows to the right and y downwards.
struct CameraModel {
  Matrix3d K = Matrix3d::Identity();
  Matrix3d R = Matrix3d::Identity();
  Vector3d t = Vector3d::Zero();
  double depth_min = 0.0;
  double depth_max = 0.0;
  // Informational spacing stored in camera files; hypothesis sampling
  // derives its own spacing from the range and hypothesis count.
  double depth_interval = 0.0;

  void validate() const {
    const Matrix3d should_be_identity = R.transpose() * R;
    if ((should_be_identity - Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9)
      throw Error("camera: rotation is not orthonormal");
    if (std::abs(R.determinant() - 1.0) > 1e-9) throw Error("camera: rotation determinant is not +1");
    if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(2, 2) != 1.0)
      throw Error("camera: intrinsics must be upper-triangular with K(2,2) = 1");
    if (!(K(0, 0) > 0.0 && K(1, 1) > 0.0)) throw Error("camera: focal lengths must be positive");
    if (!(depth_min > 0.0 && depth_min < depth_max)) throw Error("camera: need 0 < depth_min < depth_max");
    if (!K.allFinite() || !R.allFinite() || !t.allFinite()) throw Error("camera: non-finite entries");
  }

  Vector3d center() const { return -R.transpose() * t; }
  Vector3d to_camera(const Vector3d& world) const { return R * world + t; }
  Vector3d to_world(const Vector3d& cam) const { return R.transpose() * (cam - t); }

  // World point on the ray through `pixel` at camera-frame depth z.
  Vector3d backproject(const Vector2d& pixel, double depth) const {
    const Vector3d ray = K.inverse() * Vector3d(pixel.x(), pixel.y(), 1.0);
    return to_world(ray * depth);
  }

  // Same camera for an image downscaled by `factor` (pixel-center
  // convention: u' = (u + 0.5) / factor - 0.5).
  CameraModel scaled(int factor) const {
    if (factor == 1) return *this;
    CameraModel c = *this;
    const double s = 1.0 / factor;
    c.K(0, 0) *= s;
    c.K(0, 1) *= s;
    c.K(1, 1) *= s;
    c.K(0, 2) = (K(0, 2) + 0.5) * s - 0.5;
    c.K(1, 2) = (K(1, 2) + 0.5) * s - 0.5;
    return c;
  }
};

struct Projection {
  Vector2d pixel;
  double depth;  // camera-frame z
};

// Projection of a world point; nullopt when the point is not in front of
// the camera (z <= 1e-9).
inline std::optional<Projection> project(const CameraModel& cam, const Vector3d& world) {
  const Vector3d x = cam.K * cam.to_camera(world);
  if (!(x.z() > 1e-9)) return std::nullopt;
  return Projection{Vector2d(x.x() / x.z(), x.y() / x.z()), x.z()};
}

// Pose of `src` relative to `ref`: x_src = R * x_ref + t.
struct RelativePose {
  Matrix3d R;
  Vector3d t;
};

inline RelativePose relative_pose(const CameraModel& ref, const CameraModel& src) {
  RelativePose rel;
  rel.R = src.R * ref.R.transpose();
  rel.t = src.t - rel.R * ref.t;
  return rel;
}

}  // namespace kdmvs
