#pragma once

#include "kdmvs/model/params.hpp"
#include "kdmvs/tensor/ops.hpp"

namespace kdmvs::model {

inline constexpr double kCostNormEps = 1e-12;

// Cost volume (H x W x D) to a probability volume over the D hypotheses.
// Costs are first divided by their per-pixel mean over hypotheses, which
// makes the distribution independent of the feature scale. Two 3x3x3
// convolutions over space x hypothesis form a residual branch on top of the
// normalized costs; the result is scaled by a learned negative inverse
// temperature and normalized per pixel.
inline Var regularize_to_probability(const BoundParams& p, const Var& cost, int stage) {
  const std::string r = regularizer_prefix(stage);
  const int d = cost.value().channels();
  Var normalized = ops::normalize_by_channel_mean(cost, kCostNormEps);
  Var h = ops::tanh(ops::conv_volume(normalized, p[r + ".conv1.w"], p[r + ".conv1.b"], d, 3));
  Var residual = ops::conv_volume(h, p[r + ".conv2.w"], p[r + ".conv2.b"], d, 3);
  Var refined = ops::add(normalized, residual);
  Var sharpness = ops::scale(ops::exp(p[r + ".log_sharpness"]), -1.0);
  return ops::softmax_channels(ops::mul_scalar(refined, sharpness));
}

}  // namespace kdmvs::model
