#pragma once

#include <array>
#include <vector>

#include "kdmvs/geometry/camera.hpp"
#include "kdmvs/geometry/warp.hpp"
#include "kdmvs/model/cascade.hpp"
#include "kdmvs/tensor/ops.hpp"

namespace kdmvs::loss {

struct LossWeights {
  double featuremetric = 4.0;
  double photometric = 1.0;
};

struct TeacherLossOptions {
  LossWeights weights{};
  std::array<double, 3> stage_weights = {1.0, 1.0, 1.0};
  // Squared feature differences instead of absolute ones.
  bool feature_l2 = false;
};

// Per-pixel consistency residual between the reference and one warped
// source view, before averaging over the valid set.
struct ViewResidual {
  Var per_pixel;  // H x W x 1, meaningful where mask is set
  Grid mask;      // warp validity
  bool empty() const { return count_nonzero(mask) == 0; }
  Var mean() const { return ops::masked_mean(per_pixel, mask); }
};

// Mean over channels of |I_src(warp(p, depth)) - I_ref(p)|. The images are
// constants; the gradient reaches the depth only.
inline ViewResidual photometric_loss(Tape& tape, const Grid& ref_img, const Grid& src_img, const Var& depth,
                                     const CameraModel& ref, const CameraModel& src) {
  Warped w = warp_grid(tape.constant(src_img), depth, ref, src);
  require_same_shape(w.value.value(), ref_img, "photometric_loss");
  Var residual = ops::channel_mean(ops::abs_diff(w.value, tape.constant(ref_img)));
  return {residual, std::move(w.mask)};
}

// Same as photometric_loss on learned feature maps. Gradients reach the
// depth and both feature maps.
inline ViewResidual featuremetric_loss(const Var& ref_feat, const Var& src_feat, const Var& depth,
                                       const CameraModel& ref, const CameraModel& src, bool l2 = false) {
  if (ref_feat.value().channels() != src_feat.value().channels())
    throw ShapeError("featuremetric_loss: channel mismatch " + to_string(ref_feat.shape()) + " vs " +
                     to_string(src_feat.shape()));
  Warped w = warp_grid(src_feat, depth, ref, src);
  Var diff = l2 ? ops::square(ops::sub(w.value, ref_feat)) : ops::abs_diff(w.value, ref_feat);
  Var residual = ops::channel_mean(diff);
  return {residual, std::move(w.mask)};
}

struct TeacherLoss {
  Var total;
  // Unweighted components, summed over views and stages.
  double photometric = 0.0;
  double featuremetric = 0.0;
  int empty_views = 0;  // (stage, view) pairs with no valid pixel
};

// Self-supervised objective summed over stages and source views:
//   sum_s w_s sum_i [ l_fea * mean_V(fea_i) + l_photo * mean_V(photo_i) ]
// with V the warp-valid pixels of (stage, view). Images are area-averaged
// to each stage's resolution.
inline TeacherLoss total_teacher_loss(Tape& tape, const model::CascadeOutput& out, const std::vector<Grid>& images,
                                      const std::vector<CameraModel>& cams, const TeacherLossOptions& opt = {}) {
  if (images.size() != out.features.size() || images.size() != cams.size())
    throw Error("total_teacher_loss: views/features/cameras count mismatch");
  std::vector<Var> terms;
  std::vector<double> coeffs;
  TeacherLoss result;
  for (int s = 0; s < 3; ++s) {
    const int factor = CascadeSettings::kDownscale[s];
    const Var& depth = out.stages[s].depth;
    const CameraModel ref = cams[0].scaled(factor);
    const Grid ref_img = area_downsample(images[0], factor);
    for (std::size_t v = 1; v < images.size(); ++v) {
      const CameraModel src = cams[v].scaled(factor);
      ViewResidual photo = photometric_loss(tape, ref_img, area_downsample(images[v], factor), depth, ref, src);
      ViewResidual fea = featuremetric_loss(out.features[0][s], out.features[v][s], depth, ref, src, opt.feature_l2);
      if (photo.empty()) {
        ++result.empty_views;
        continue;
      }
      Var p = photo.mean(), f = fea.mean();
      result.photometric += p.value().item();
      result.featuremetric += f.value().item();
      terms.push_back(p);
      coeffs.push_back(opt.stage_weights[s] * opt.weights.photometric);
      terms.push_back(f);
      coeffs.push_back(opt.stage_weights[s] * opt.weights.featuremetric);
    }
  }
  result.total = terms.empty() ? tape.constant(Grid::scalar(0.0)) : ops::weighted_sum(terms, coeffs);
  return result;
}

}  // namespace kdmvs::loss
