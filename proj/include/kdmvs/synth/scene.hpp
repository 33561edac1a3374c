#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "kdmvs/geometry/camera.hpp"
#include "kdmvs/synth/texture.hpp"
#include "kdmvs/tensor/grid.hpp"
#include "kdmvs/util/parallel.hpp"
#include "kdmvs/util/rng.hpp"

namespace kdmvs::synth {

enum class GeometryKind { kTiltedPlanes, kSphereOnPlane, kBoxRelief };

inline std::string to_string(GeometryKind k) {
  switch (k) {
    case GeometryKind::kTiltedPlanes: return "tilted_planes";
    case GeometryKind::kSphereOnPlane: return "sphere_on_plane";
    case GeometryKind::kBoxRelief: return "box_relief";
  }
  return "?";
}

struct SceneSpec {
  GeometryKind kind = GeometryKind::kTiltedPlanes;
  std::uint64_t seed = 0;
  int views = 5;
  int height = 64;
  int width = 80;
  double focal = 80.0;
  double baseline = 0.7;        // offset of the outer cameras from the center one
  double target_depth = 6.0;    // cameras converge on (0, 0, target_depth)
  double depth_min = 4.0;
  double depth_max = 8.0;
  bool lighting_perturbation = false;  // per-view gain/bias on intensities
  double gain_spread = 0.2;            // gain drawn from [1 - spread, 1 + spread]
  double bias_spread = 0.06;           // bias drawn from [-spread, spread]
  bool fronto_parallel = false;        // single plane at target_depth, identity rotations
  TextureParams texture{};
  double min_covisible_ratio = 0.6;    // share of pixels seen by >= 2 source views
};

// Ray-traceable primitives. Surface ids are indices into Scene::primitives
// (boxes use one id per face).
struct Primitive {
  enum class Type { kPlane, kQuad, kSphere, kBox } type = Type::kPlane;
  Vector3d center = Vector3d::Zero();
  Vector3d normal = Vector3d::UnitZ();  // plane / quad
  Vector3d axis_u = Vector3d::UnitX();  // quad half-axes
  Vector3d axis_v = Vector3d::UnitY();
  Vector3d half = Vector3d::Ones();     // box half extents (axis aligned)
  double radius = 1.0;
  int first_id = 0;
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();  // camera z-depth when the ray has unit camera z
  int surface = -1;
};

struct Scene {
  SceneSpec spec;
  std::vector<Primitive> primitives;
  std::vector<CameraModel> cameras;
  std::vector<double> gains, biases;
};

inline void intersect(const Primitive& prim, const Vector3d& o, const Vector3d& d, Hit& best) {
  auto consider = [&best](double t, int id) {
    if (t > 1e-9 && t < best.t) {
      best.t = t;
      best.surface = id;
    }
  };
  switch (prim.type) {
    case Primitive::Type::kPlane: {
      const double den = prim.normal.dot(d);
      if (std::abs(den) > 1e-15) consider(prim.normal.dot(prim.center - o) / den, prim.first_id);
      break;
    }
    case Primitive::Type::kQuad: {
      const double den = prim.normal.dot(d);
      if (std::abs(den) < 1e-15) break;
      const double t = prim.normal.dot(prim.center - o) / den;
      const Vector3d q = o + t * d - prim.center;
      const double a = q.dot(prim.axis_u) / prim.axis_u.squaredNorm();
      const double b = q.dot(prim.axis_v) / prim.axis_v.squaredNorm();
      if (std::abs(a) <= 1.0 && std::abs(b) <= 1.0) consider(t, prim.first_id);
      break;
    }
    case Primitive::Type::kSphere: {
      const Vector3d oc = o - prim.center;
      const double A = d.squaredNorm(), B = 2.0 * oc.dot(d), C = oc.squaredNorm() - prim.radius * prim.radius;
      const double disc = B * B - 4 * A * C;
      if (disc < 0) break;
      const double sq = std::sqrt(disc);
      const double t0 = (-B - sq) / (2 * A);
      consider(t0 > 1e-9 ? t0 : (-B + sq) / (2 * A), prim.first_id);
      break;
    }
    case Primitive::Type::kBox: {
      double tmin = -std::numeric_limits<double>::infinity(), tmax = std::numeric_limits<double>::infinity();
      int axis = -1;
      double sign = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double lo = prim.center[i] - prim.half[i], hi = prim.center[i] + prim.half[i];
        if (std::abs(d[i]) < 1e-15) {
          if (o[i] < lo || o[i] > hi) return;
          continue;
        }
        double t1 = (lo - o[i]) / d[i], t2 = (hi - o[i]) / d[i];
        double s = -1.0;
        if (t1 > t2) {
          std::swap(t1, t2);
          s = 1.0;
        }
        if (t1 > tmin) {
          tmin = t1;
          axis = i;
          sign = s;
        }
        tmax = std::min(tmax, t2);
      }
      if (tmin <= tmax && axis >= 0) consider(tmin, prim.first_id + axis * 2 + (sign > 0 ? 1 : 0));
      break;
    }
  }
}

inline Hit trace(const Scene& scene, const Vector3d& origin, const Vector3d& dir) {
  Hit best;
  for (const Primitive& p : scene.primitives) intersect(p, origin, dir, best);
  return best;
}

// Ray through a (sub)pixel of camera `cam`, scaled so that its camera-frame
// z component is 1; the hit parameter is then the z-depth.
inline Hit trace_pixel(const Scene& scene, const CameraModel& cam, double x, double y) {
  const Vector3d ray_cam = cam.K.inverse() * Vector3d(x, y, 1.0);
  return trace(scene, cam.center(), cam.R.transpose() * ray_cam);
}

inline CameraModel look_at(const Vector3d& center, const Vector3d& target, const Matrix3d& K, double dmin, double dmax) {
  const Vector3d z = (target - center).normalized();
  const Vector3d x = Vector3d::UnitY().cross(z).normalized();
  const Vector3d y = z.cross(x);
  CameraModel cam;
  cam.K = K;
  cam.R.row(0) = x.transpose();
  cam.R.row(1) = y.transpose();
  cam.R.row(2) = z.transpose();
  cam.t = -cam.R * center;
  cam.depth_min = dmin;
  cam.depth_max = dmax;
  return cam;
}

inline Vector3d tilted_normal(double ax, double ay) {
  return Vector3d(std::sin(ay), std::sin(ax), -std::cos(ax) * std::cos(ay)).normalized();
}

// Builds primitives and the camera rig for a spec (no rendering).
inline Scene build_scene(const SceneSpec& spec) {
  Scene scene;
  scene.spec = spec;
  Rng rng(derive_seed(spec.seed, 17));
  Matrix3d K = Matrix3d::Identity();
  K(0, 0) = K(1, 1) = spec.focal;
  K(0, 2) = 0.5 * (spec.width - 1);
  K(1, 2) = 0.5 * (spec.height - 1);

  const Vector3d target(0, 0, spec.target_depth);
  const std::vector<Vector2d> offsets = {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {1, 1}, {-1, 1}, {1, -1}};
  for (int v = 0; v < spec.views; ++v) {
    const Vector2d off = offsets[v % offsets.size()] * spec.baseline * (1 + v / static_cast<int>(offsets.size()));
    const Vector3d c(off.x() + (v ? rng.uniform(-0.05, 0.05) : 0.0), off.y() + (v ? rng.uniform(-0.05, 0.05) : 0.0), 0.0);
    if (spec.fronto_parallel) {
      CameraModel cam;
      cam.K = K;
      cam.t = -c;
      cam.depth_min = spec.depth_min;
      cam.depth_max = spec.depth_max;
      scene.cameras.push_back(cam);
    } else {
      const Vector3d jitter(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0.0);
      scene.cameras.push_back(look_at(c, target + (v ? jitter : Vector3d::Zero()), K, spec.depth_min, spec.depth_max));
    }
    scene.gains.push_back(spec.lighting_perturbation ? rng.uniform(1.0 - spec.gain_spread, 1.0 + spec.gain_spread) : 1.0);
    scene.biases.push_back(spec.lighting_perturbation ? rng.uniform(-spec.bias_spread, spec.bias_spread) : 0.0);
  }

  int next_id = 0;
  auto add = [&](Primitive p, int ids) {
    p.first_id = next_id;
    next_id += ids;
    scene.primitives.push_back(p);
  };
  const double back = spec.target_depth + 0.6;

  if (spec.fronto_parallel) {
    Primitive plane;
    plane.center = Vector3d(0, 0, spec.target_depth);
    plane.normal = Vector3d(0, 0, -1);
    add(plane, 1);
    return scene;
  }

  Primitive plane;
  plane.center = Vector3d(0, 0, back + rng.uniform(-0.15, 0.15));
  plane.normal = tilted_normal(rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15));
  add(plane, 1);

  switch (spec.kind) {
    case GeometryKind::kTiltedPlanes: {
      const int quads = 1 + static_cast<int>(rng.index(2));
      for (int q = 0; q < quads; ++q) {
        Primitive quad;
        quad.type = Primitive::Type::kQuad;
        quad.center = Vector3d(rng.uniform(-0.7, 0.7), rng.uniform(-0.5, 0.5), spec.target_depth - 0.6 - 0.4 * q);
        const double ax = rng.uniform(-0.45, 0.45), ay = rng.uniform(-0.45, 0.45);
        quad.normal = tilted_normal(ax, ay);
        quad.axis_u = Vector3d::UnitY().cross(quad.normal).normalized() * rng.uniform(0.6, 0.9);
        quad.axis_v = quad.normal.cross(quad.axis_u).normalized() * rng.uniform(0.5, 0.8);
        add(quad, 1);
      }
      break;
    }
    case GeometryKind::kSphereOnPlane: {
      Primitive sphere;
      sphere.type = Primitive::Type::kSphere;
      sphere.radius = rng.uniform(0.8, 1.1);
      sphere.center = Vector3d(rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), spec.target_depth - 0.2);
      add(sphere, 1);
      break;
    }
    case GeometryKind::kBoxRelief: {
      Primitive box;
      box.type = Primitive::Type::kBox;
      box.half = Vector3d(rng.uniform(0.6, 0.9), rng.uniform(0.5, 0.8), rng.uniform(0.3, 0.5));
      box.center = Vector3d(rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), spec.target_depth - 0.3);
      add(box, 6);
      Primitive step = box;
      step.half = box.half.cwiseProduct(Vector3d(0.5, 0.5, 0.6));
      step.center = box.center + Vector3d(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), -box.half.z() - step.half.z());
      add(step, 6);
      break;
    }
  }
  return scene;
}

struct RenderedScene {
  std::vector<CameraModel> cameras;
  std::vector<Grid> images;       // H x W x 3, intensities in [0, 1]
  std::vector<Grid> depths;       // H x W x 1, analytic z-depth
  std::vector<Grid> surfaces;     // H x W x 1, surface id (-1 = background miss)
  std::vector<Grid> covis_count;  // H x W x 1, number of views (other than the reference) that see the pixel
  // covis[r][s]: pixels of view r co-visible in view s (s != r).
  std::vector<std::vector<Grid>> covis;
  std::vector<std::vector<int>> pairs;  // source views per reference, nearest first

  double covisible_ratio(int view, int min_sources) const {
    int n = 0;
    for (double c : covis_count[view].data()) n += c >= min_sources;
    return static_cast<double>(n) / static_cast<double>(covis_count[view].size());
  }
};

// True when pixel (x, y) of view `ref` at its GT depth is visible from view
// `src` with every bilinear corner lying on the same surface.
inline bool covisible(const Scene& scene, const RenderedScene& out, int ref, int src, int x, int y) {
  const int h = scene.spec.height, w = scene.spec.width;
  const double d = out.depths[ref](y, x);
  const int surface = static_cast<int>(out.surfaces[ref](y, x));
  if (surface < 0) return false;
  const Vector3d X = out.cameras[ref].backproject(Vector2d(x, y), d);
  const auto proj = project(out.cameras[src], X);
  if (!proj) return false;
  const double u = proj->pixel.x(), v = proj->pixel.y();
  if (!(u >= 0 && v >= 0 && u <= w - 1 && v <= h - 1)) return false;
  const Hit hit = trace_pixel(scene, out.cameras[src], u, v);
  if (hit.surface != surface || std::abs(hit.t - proj->depth) > 1e-6 * proj->depth) return false;
  const int x0 = std::min(static_cast<int>(std::floor(u)), w - 2), y0 = std::min(static_cast<int>(std::floor(v)), h - 2);
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx)
      if (static_cast<int>(out.surfaces[src](y0 + dy, x0 + dx)) != surface) return false;
  return true;
}

// Renders every view of the scene. Output is a pure function of the spec.
// Throws when a GT depth leaves the depth range or too few pixels are
// co-visible.
inline RenderedScene render_scene(const SceneSpec& spec) {
  if (spec.views < 2) throw Error("render_scene: need at least 2 views");
  if (spec.height < 4 || spec.width < 4) throw Error("render_scene: image too small");
  const Scene scene = build_scene(spec);
  RenderedScene out;
  out.cameras = scene.cameras;
  const int h = spec.height, w = spec.width, n = spec.views;
  for (const auto& cam : out.cameras) cam.validate();

  for (int v = 0; v < n; ++v) {
    Grid img(h, w, 3), depth(h, w, 1), surf(h, w, 1);
    const CameraModel& cam = out.cameras[v];
    parallel_for(h, [&](int y) {
      for (int x = 0; x < w; ++x) {
        const Hit hit = trace_pixel(scene, cam, x, y);
        surf(y, x) = hit.surface;
        if (hit.surface < 0) continue;
        depth(y, x) = hit.t;
        const Vector3d X = cam.backproject(Vector2d(x, y), hit.t);
        const Vector3d rgb = surface_color(X, hit.surface, spec.seed, spec.texture);
        for (int c = 0; c < 3; ++c) img(y, x, c) = std::clamp(scene.gains[v] * rgb[c] + scene.biases[v], 0.0, 1.0);
      }
    });
    out.images.push_back(std::move(img));
    out.depths.push_back(std::move(depth));
    out.surfaces.push_back(std::move(surf));
  }

  std::ostringstream problems;
  for (int v = 0; v < n; ++v) {
    for (int p = 0; p < h * w; ++p) {
      const double d = out.depths[v][p];
      if (out.surfaces[v][p] < 0 || d < spec.depth_min || d > spec.depth_max) {
        problems << "view " << v << " pixel " << p << " depth " << d << " outside [" << spec.depth_min << ", "
                 << spec.depth_max << "]; ";
        break;
      }
    }
  }

  out.covis.assign(n, std::vector<Grid>(n));
  out.covis_count.assign(n, Grid(h, w, 1));
  for (int r = 0; r < n; ++r)
    for (int s = 0; s < n; ++s) {
      if (r == s) continue;
      Grid m(h, w, 1);
      parallel_for(h, [&](int y) {
        for (int x = 0; x < w; ++x) m(y, x) = covisible(scene, out, r, s, x, y) ? 1.0 : 0.0;
      });
      for (std::size_t i = 0; i < m.size(); ++i) out.covis_count[r][i] += m[i];
      out.covis[r][s] = std::move(m);
    }

  out.pairs.resize(n);
  for (int r = 0; r < n; ++r) {
    std::vector<int> srcs;
    for (int s = 0; s < n; ++s)
      if (s != r) srcs.push_back(s);
    std::stable_sort(srcs.begin(), srcs.end(), [&](int a, int b) {
      return (out.cameras[a].center() - out.cameras[r].center()).norm() <
             (out.cameras[b].center() - out.cameras[r].center()).norm();
    });
    out.pairs[r] = srcs;
  }

  for (int v = 0; v < n; ++v) {
    const double ratio = out.covisible_ratio(v, std::min(2, n - 1));
    if (ratio < spec.min_covisible_ratio)
      problems << "view " << v << " co-visible ratio " << ratio << " < " << spec.min_covisible_ratio << "; ";
  }
  const std::string msg = problems.str();
  if (!msg.empty()) throw Error("render_scene (seed " + std::to_string(spec.seed) + "): " + msg);
  return out;
}

}  // namespace kdmvs::synth
