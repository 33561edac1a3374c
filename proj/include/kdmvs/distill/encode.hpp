#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "kdmvs/check/crossview.hpp"
#include "kdmvs/geometry/hypotheses.hpp"
#include "kdmvs/synth/image_io.hpp"
#include "kdmvs/util/binary_io.hpp"

namespace kdmvs::distill {

// Per-pixel Gaussian pseudo depth distribution. mean and variance are only
// meaningful where mask is set.
struct PseudoLabel {
  Grid mean;      // H x W x 1
  Grid variance;  // H x W x 1
  Grid mask;      // H x W x 1
  double floor = 0.0;

  int count() const { return count_nonzero(mask); }
  bool operator==(const PseudoLabel&) const = default;
};

// Variance floor: (0.05 x the finest stage's hypothesis interval)^2.
inline double default_variance_floor(const CascadeSettings& cfg, double depth_min, double depth_max) {
  const double base = (depth_max - depth_min) / (cfg.hypotheses[0] - 1);
  const double finest = base * cfg.interval_decay[2];
  return (0.05 * finest) * (0.05 * finest);
}

// Maximum-likelihood Gaussian over each validated pixel's N depths: sample
// mean and biased (1/N) variance, the latter floored at `floor`. The mean is
// clamped to the depth range.
inline PseudoLabel encode(const check::ValidatedDepthSet& set, double floor, double depth_min, double depth_max) {
  if (!(floor > 0.0)) throw ConfigError("encode: variance floor must be positive");
  PseudoLabel label{Grid(set.height, set.width, 1), Grid(set.height, set.width, 1), Grid(set.height, set.width, 1),
                    floor};
  const int n = set.views;
  for (std::size_t i = 0; i < set.size(); ++i) {
    double mu = 0.0;
    for (int v = 0; v < n; ++v) mu += set.depth(i, v);
    mu /= n;
    double var = 0.0;
    for (int v = 0; v < n; ++v) {
      const double e = set.depth(i, v) - mu;
      var += e * e;
    }
    var /= n;
    const int p = set.pixels[i];
    label.mean[p] = std::clamp(mu, depth_min, depth_max);
    label.variance[p] = std::max(floor, var);
    label.mask[p] = 1.0;
  }
  return label;
}

// Label at 1/factor resolution. A block is kept when at least half of its
// pixels are labelled; its Gaussian is the moment match of the labelled
// pixels' Gaussians (mean of means; mean of variances plus the spread of
// the means).
inline PseudoLabel pool(const PseudoLabel& label, int factor) {
  if (factor == 1) return label;
  const int h = label.mask.height() / factor, w = label.mask.width() / factor;
  if (h * factor != label.mask.height() || w * factor != label.mask.width())
    throw ShapeError("pool: label " + to_string(label.mask.shape()) + " not divisible by " + std::to_string(factor));
  PseudoLabel out{Grid(h, w, 1), Grid(h, w, 1), Grid(h, w, 1), label.floor};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int n = 0;
      double m = 0.0, v = 0.0, m2 = 0.0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          const int yy = y * factor + dy, xx = x * factor + dx;
          if (label.mask(yy, xx) == 0.0) continue;
          ++n;
          m += label.mean(yy, xx);
          m2 += label.mean(yy, xx) * label.mean(yy, xx);
          v += label.variance(yy, xx);
        }
      if (2 * n < factor * factor) continue;
      m /= n;
      out.mean(y, x) = m;
      out.variance(y, x) = std::max(label.floor, v / n + std::max(0.0, m2 / n - m * m));
      out.mask(y, x) = 1.0;
    }
  return out;
}

// Pseudo-label file layout (little-endian):
//   8 bytes magic "KDMVSPSL", u32 version (1), i32 height, i32 width,
//   f64 variance floor, u32 count, then per labelled pixel: u32 pixel
//   index, f64 mean, f64 variance.
// The mask is written next to it as a 1-channel PFM.
inline void write_pseudo(const PseudoLabel& label, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_raw("KDMVSPSL");
  w.put(std::uint32_t{1});
  w.put(static_cast<std::int32_t>(label.mask.height()));
  w.put(static_cast<std::int32_t>(label.mask.width()));
  w.put(label.floor);
  w.put(static_cast<std::uint32_t>(label.count()));
  for (int p = 0; p < label.mask.pixels(); ++p) {
    if (label.mask[p] == 0.0) continue;
    w.put(static_cast<std::uint32_t>(p));
    w.put(label.mean[p]);
    w.put(label.variance[p]);
  }
  w.save(path);
}

inline PseudoLabel read_pseudo(const std::filesystem::path& path) {
  ByteReader r = ByteReader::load(path);
  r.expect_magic("KDMVSPSL");
  if (r.get<std::uint32_t>() != 1) throw IoError(r.origin() + ": unsupported version");
  const int h = r.get<std::int32_t>(), w = r.get<std::int32_t>();
  if (h < 0 || w < 0) throw IoError(r.origin() + ": bad dimensions");
  PseudoLabel label{Grid(h, w, 1), Grid(h, w, 1), Grid(h, w, 1), r.get<double>()};
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto p = r.get<std::uint32_t>();
    if (p >= static_cast<std::uint32_t>(h * w)) throw IoError(r.origin() + ": pixel index out of range");
    label.mean[p] = r.get<double>();
    label.variance[p] = r.get<double>();
    label.mask[p] = 1.0;
  }
  r.expect_end();
  return label;
}

}  // namespace kdmvs::distill
