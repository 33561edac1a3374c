#pragma once

#include <array>
#include <optional>
#include <string>

#include "kdmvs/tensor/grid.hpp"

namespace kdmvs {

// Per-pixel depth samples d_0 < d_1 < ... < d_{D-1}, stored as H x W x D.
struct HypothesisSet {
  Grid depths;
  double interval = 0.0;

  int count() const { return depths.channels(); }
  double min_at(int y, int x) const { return depths(y, x, 0); }
  double max_at(int y, int x) const { return depths(y, x, count() - 1); }

  void validate() const {
    if (count() < 2) throw Error("hypotheses: need at least 2 samples");
    if (!(interval > 0.0)) throw Error("hypotheses: interval must be positive");
    for (int p = 0; p < depths.pixels(); ++p) {
      const std::size_t base = static_cast<std::size_t>(p) * count();
      for (int k = 1; k < count(); ++k)
        if (!(depths[base + k] > depths[base + k - 1])) throw Error("hypotheses: samples not strictly increasing");
    }
  }
};

// Cascade layout: stage 0 works at 1/4 resolution, stage 1 at 1/2, stage 2
// at full resolution. Stage intervals are the stage-0 spacing times the
// decay factor.
struct CascadeSettings {
  std::array<int, 3> hypotheses = {32, 16, 8};
  std::array<double, 3> interval_decay = {1.0, 0.5, 0.25};
  static constexpr std::array<int, 3> kDownscale = {4, 2, 1};
};

inline HypothesisSet uniform_hypotheses(int height, int width, double depth_min, double depth_max, int count) {
  if (count < 2) throw Error("hypotheses: need at least 2 samples");
  if (!(depth_min < depth_max)) throw Error("hypotheses: empty depth range");
  HypothesisSet h;
  h.interval = (depth_max - depth_min) / (count - 1);
  h.depths = Grid(height, width, count);
  for (int p = 0; p < height * width; ++p)
    for (int k = 0; k < count; ++k)
      h.depths[static_cast<std::size_t>(p) * count + k] = k == count - 1 ? depth_max : depth_min + k * h.interval;
  return h;
}

// Samples centered on `center` (H x W x 1): d_k = c + (k - (D-1)/2) * interval.
// A window that leaves [depth_min, depth_max] is shifted back inside, which
// keeps the spacing and strict ordering; it is only truncated when it is
// wider than the range itself.
inline HypothesisSet centered_hypotheses(const Grid& center, double interval, int count, double depth_min,
                                         double depth_max) {
  if (count < 2) throw Error("hypotheses: need at least 2 samples");
  if (!(interval > 0.0)) throw Error("hypotheses: interval must be positive");
  HypothesisSet h;
  h.interval = interval;
  h.depths = Grid(center.height(), center.width(), count);
  const double half = 0.5 * (count - 1) * interval;
  const double span = 2.0 * half;
  const double step = span > depth_max - depth_min ? (depth_max - depth_min) / (count - 1) : interval;
  for (int p = 0; p < center.pixels(); ++p) {
    double lo = center[p] - 0.5 * (count - 1) * step;
    if (lo < depth_min) lo = depth_min;
    if (lo + (count - 1) * step > depth_max) lo = depth_max - (count - 1) * step;
    for (int k = 0; k < count; ++k) h.depths[static_cast<std::size_t>(p) * count + k] = lo + k * step;
  }
  return h;
}

// Hypotheses for cascade stage `stage` of a reference view whose full
// resolution is height x width. Refinement stages center on the previous
// stage's depth, upsampled by nearest neighbor.
inline HypothesisSet sample_hypotheses(int stage, const std::optional<Grid>& prev_depth, const CascadeSettings& cfg,
                                       int height, int width, double depth_min, double depth_max) {
  if (stage < 0 || stage > 2) throw Error("hypotheses: stage must be 0, 1 or 2");
  const int factor = CascadeSettings::kDownscale[stage];
  const int h = height / factor, w = width / factor;
  const double base = (depth_max - depth_min) / (cfg.hypotheses[0] - 1);
  if (stage == 0) return uniform_hypotheses(h, w, depth_min, depth_max, cfg.hypotheses[0]);
  if (!prev_depth) throw Error("hypotheses: refinement stage " + std::to_string(stage) + " needs the previous depth");
  Grid center = prev_depth->height() == h ? *prev_depth : upsample_nearest(*prev_depth, h / prev_depth->height());
  if (center.height() != h || center.width() != w)
    throw ShapeError("hypotheses: previous depth " + to_string(prev_depth->shape()) + " does not upsample to stage size");
  return centered_hypotheses(center, base * cfg.interval_decay[stage], cfg.hypotheses[stage], depth_min, depth_max);
}

}  // namespace kdmvs
