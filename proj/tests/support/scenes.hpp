#pragma once

#include <cmath>

#include "kdmvs/geometry/camera.hpp"
#include "kdmvs/synth/scene.hpp"

namespace kdmvs::testing {

inline Matrix3d intrinsics(double f, double cx, double cy) {
  Matrix3d K;
  K << f, 0, cx, 0, f, cy, 0, 0, 1;
  return K;
}

inline CameraModel simple_camera(double f, double cx, double cy, const Vector3d& t = Vector3d::Zero(),
                                 const Matrix3d& R = Matrix3d::Identity(), double dmin = 1.0, double dmax = 10.0) {
  CameraModel c;
  c.K = intrinsics(f, cx, cy);
  c.R = R;
  c.t = t;
  c.depth_min = dmin;
  c.depth_max = dmax;
  c.depth_interval = (dmax - dmin) / 31.0;
  return c;
}

inline Matrix3d small_rotation(double ax, double ay, double az) {
  return (Eigen::AngleAxisd(az, Vector3d::UnitZ()) * Eigen::AngleAxisd(ay, Vector3d::UnitY()) *
          Eigen::AngleAxisd(ax, Vector3d::UnitX()))
      .toRotationMatrix();
}

inline synth::SceneSpec small_spec(std::uint64_t seed, synth::GeometryKind kind = synth::GeometryKind::kTiltedPlanes) {
  synth::SceneSpec s;
  s.seed = seed;
  s.kind = kind;
  return s;
}

}  // namespace kdmvs::testing
