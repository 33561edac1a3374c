#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace kdmvs::synth {

inline std::uint64_t hash64(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

inline double lattice_value(std::int64_t ix, std::int64_t iy, std::int64_t iz, std::uint64_t seed) {
  std::uint64_t h = hash64(seed);
  h = hash64(h ^ static_cast<std::uint64_t>(ix) * 0x9E3779B97F4A7C15ULL);
  h = hash64(h ^ static_cast<std::uint64_t>(iy) * 0xC2B2AE3D27D4EB4FULL);
  h = hash64(h ^ static_cast<std::uint64_t>(iz) * 0x165667B19E3779F9ULL);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Quintic fade: C2-continuous, so the noise has bounded curvature.
inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

// Solid value noise in [0, 1] with unit lattice spacing.
inline double value_noise(const Eigen::Vector3d& p, std::uint64_t seed) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy), iz = static_cast<std::int64_t>(fz);
  const double u = fade(p.x() - fx), v = fade(p.y() - fy), w = fade(p.z() - fz);
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wt = (dx ? u : 1 - u) * (dy ? v : 1 - v) * (dz ? w : 1 - w);
        acc += wt * lattice_value(ix + dx, iy + dy, iz + dz, seed);
      }
  return acc;
}

struct TextureParams {
  double cell = 1.1;          // lattice spacing of the coarsest octave (world units)
  int octaves = 2;
  double amplitude = 0.45;    // luminance amplitude of the coarsest octave
  double persistence = 0.3;   // amplitude ratio between octaves
  double tint = 0.12;         // per-channel color variation
  double gradient = 0.3;      // strength of the slow color gradient
  double gradient_frequency = 1.8;  // radians per world unit
};

// Deterministic multi-octave value noise plus a slow color gradient,
// evaluated in world space so every view sees the same surface colors.
inline Eigen::Vector3d surface_color(const Eigen::Vector3d& world, int surface, std::uint64_t seed,
                                     const TextureParams& tp) {
  const std::uint64_t base = hash64(seed * 131 + static_cast<std::uint64_t>(surface) * 7);
  double lum = 0.0, amp = tp.amplitude, scale = 1.0 / tp.cell;
  for (int o = 0; o < tp.octaves; ++o) {
    lum += amp * (value_noise(world * scale, base + o) - 0.5);
    amp *= tp.persistence;
    scale *= 2.0;
  }
  Eigen::Vector3d rgb;
  for (int ch = 0; ch < 3; ++ch) {
    const double tint = tp.tint * (value_noise(world / tp.cell, base + 101 + ch) - 0.5);
    const double grad = tp.gradient * std::sin(tp.gradient_frequency * (0.8 * world.x() + 0.6 * world.y()) + 0.5 * ch + surface);
    rgb[ch] = 0.45 + lum + tint + grad;
  }
  return rgb;
}

}  // namespace kdmvs::synth
