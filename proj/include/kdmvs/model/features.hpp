#pragma once

#include <array>

#include "kdmvs/model/params.hpp"
#include "kdmvs/tensor/ops.hpp"

namespace kdmvs::model {

// Feature grids at 1/4, 1/2 and full resolution (index = cascade level).
using FeaturePyramid = std::array<Var, 3>;

// Two 3x3 convolutions with tanh activations; features lie in (-1, 1).
inline Var extract_level(const BoundParams& p, const Var& image, int level) {
  const std::string f = feature_prefix(level);
  Var h = ops::tanh(ops::conv2d(image, p[f + ".conv1.w"], p[f + ".conv1.b"]));
  return ops::tanh(ops::conv2d(h, p[f + ".conv2.w"], p[f + ".conv2.b"]));
}

inline void require_divisible(const Grid& image) {
  if (image.height() % 4 != 0 || image.width() % 4 != 0)
    throw ShapeError("image " + to_string(image.shape()) + " must have height and width divisible by 4");
}

inline constexpr double kStandardizeEps = 1e-6;

// Per-level extractor applied to an area-downsampled copy of the image. The
// image is first standardized per channel, which removes a global gain and
// bias from the features.
inline FeaturePyramid extract_features(const BoundParams& p, const Var& image) {
  require_divisible(image.value());
  const Var normalized = ops::standardize_channels(image, kStandardizeEps);
  FeaturePyramid out;
  for (int level = 0; level < 3; ++level)
    out[level] = extract_level(p, ops::area_downsample(normalized, CascadeSettings::kDownscale[level]), level);
  return out;
}

inline FeaturePyramid extract_features(Tape& tape, const BoundParams& p, const Grid& image) {
  return extract_features(p, tape.constant(image));
}

}  // namespace kdmvs::model
