#pragma once

#include <cmath>

#include "kdmvs/tensor/grid.hpp"

namespace kdmvs::eval {

struct DepthMetrics {
  double epe = 0.0;  // mean normalized absolute error
  double e1 = 0.0;   // % of pixels with normalized error > 1
  double e3 = 0.0;   // % of pixels with normalized error > 3
  int pixels = 0;
};

// Errors in units of (depth_max - depth_min) / scale_units over mask.
inline DepthMetrics depth_metrics(const Grid& pred, const Grid& gt, const Grid& mask, double depth_min, double depth_max,
                                  double scale_units = 128.0) {
  if (!(depth_max > depth_min)) throw Error("depth_metrics: degenerate depth range");
  require_same_shape(pred, gt, "depth_metrics");
  require_same_shape(pred, mask, "depth_metrics");
  const double s = scale_units / (depth_max - depth_min);
  DepthMetrics m;
  double sum = 0.0;
  int over1 = 0, over3 = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double e = std::abs(s * (pred[i] - gt[i]));
    sum += e;
    over1 += e > 1.0;
    over3 += e > 3.0;
    ++m.pixels;
  }
  if (m.pixels == 0) throw Error("depth_metrics: empty mask");
  m.epe = sum / m.pixels;
  m.e1 = 100.0 * over1 / m.pixels;
  m.e3 = 100.0 * over3 / m.pixels;
  return m;
}

}  // namespace kdmvs::eval
