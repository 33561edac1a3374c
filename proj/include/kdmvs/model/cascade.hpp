#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <vector>

#include "kdmvs/geometry/camera.hpp"
#include "kdmvs/geometry/hypotheses.hpp"
#include "kdmvs/model/cost_volume.hpp"
#include "kdmvs/model/features.hpp"
#include "kdmvs/model/regularizer.hpp"

namespace kdmvs::model {

// Per-pixel expectation of the hypothesis depths under prob.
inline Var soft_argmin_depth(const Var& prob, const HypothesisSet& hyps) { return ops::expectation(prob, hyps.depths); }

// Probability mass of the 4 hypotheses closest to the regressed depth (all
// of them when D < 4). The window grows from the nearest hypothesis toward
// whichever neighbor is closer.
inline Grid confidence(const Grid& prob, const Grid& depth, const HypothesisSet& hyps) {
  require_same_shape(prob, hyps.depths, "confidence");
  const int nd = prob.channels();
  const int width = std::min(4, nd);
  Grid out(prob.height(), prob.width(), 1);
  for (int p = 0; p < prob.pixels(); ++p) {
    const double* dk = &hyps.depths[static_cast<std::size_t>(p) * nd];
    const double* pk = &prob[static_cast<std::size_t>(p) * nd];
    const double d = depth[p];
    int lo = 0;
    for (int k = 1; k < nd; ++k)
      if (std::abs(dk[k] - d) < std::abs(dk[lo] - d)) lo = k;
    int hi = lo;
    while (hi - lo + 1 < width) {
      if (lo == 0)
        ++hi;
      else if (hi == nd - 1)
        --lo;
      else if (std::abs(dk[lo - 1] - d) <= std::abs(dk[hi + 1] - d))
        --lo;
      else
        ++hi;
    }
    double mass = 0.0;
    for (int k = lo; k <= hi; ++k) mass += pk[k];
    out[p] = std::clamp(mass, 0.0, 1.0);
  }
  return out;
}

struct StageOutput {
  Var depth;         // H_s x W_s x 1
  Var prob;          // H_s x W_s x D_s
  Grid confidence;   // H_s x W_s x 1
  HypothesisSet hyps;
  Grid flags;        // pixels with some hypothesis seen by fewer than 2 views
};

struct CascadeOutput {
  std::array<StageOutput, 3> stages;
  std::vector<FeaturePyramid> features;  // per view, reference first
  Grid final_confidence;                 // full resolution, product over stages
};

// Fixed hypotheses per stage, replacing the ones derived from the previous
// stage's depth. Used to check gradients with the sampling held constant.
using HypothesisOverride = std::array<std::optional<HypothesisSet>, 3>;

// Coarse-to-fine depth inference for the first view from all given views.
// Hypothesis placement depends on the previous stage's depth value only;
// no gradient flows through it.
inline CascadeOutput forward_cascade(Tape& tape, const BoundParams& p, const std::vector<Grid>& images,
                                     const std::vector<CameraModel>& cams, const ModelConfig& cfg,
                                     const HypothesisOverride* override_hyps = nullptr) {
  if (images.size() < 2) throw Error("forward_cascade: need a reference and at least one source view");
  if (images.size() != cams.size()) throw Error("forward_cascade: images/cameras count mismatch");
  const int height = images[0].height(), width = images[0].width();
  for (const Grid& img : images)
    if (img.shape() != images[0].shape()) throw ShapeError("forward_cascade: views differ in shape");
  const CameraModel& ref = cams[0];

  CascadeOutput out;
  for (const Grid& img : images) out.features.push_back(extract_features(tape, p, img));

  std::optional<Grid> prev;
  for (int s = 0; s < 3; ++s) {
    const int factor = CascadeSettings::kDownscale[s];
    HypothesisSet hyps = override_hyps && (*override_hyps)[s]
                             ? *(*override_hyps)[s]
                             : sample_hypotheses(s, prev, cfg.cascade, height, width, ref.depth_min, ref.depth_max);
    const CameraModel ref_s = ref.scaled(factor);
    std::vector<Var> src_feats;
    std::vector<CameraModel> src_cams;
    for (std::size_t v = 1; v < images.size(); ++v) {
      src_feats.push_back(out.features[v][s]);
      src_cams.push_back(cams[v].scaled(factor));
    }
    CostVolume cv = build_cost_volume(out.features[0][s], src_feats, ref_s, src_cams, hyps);
    StageOutput& so = out.stages[s];
    so.prob = regularize_to_probability(p, cv.cost, s);
    so.depth = soft_argmin_depth(so.prob, hyps);
    so.confidence = confidence(so.prob.value(), so.depth.value(), hyps);
    so.flags = std::move(cv.flags);
    so.hyps = std::move(hyps);
    prev = so.depth.value();
  }

  out.final_confidence = Grid(height, width, 1, 1.0);
  for (int s = 0; s < 3; ++s) {
    const Grid up = upsample_nearest(out.stages[s].confidence, CascadeSettings::kDownscale[s]);
    out.final_confidence = multiply(out.final_confidence, up);
  }
  return out;
}

}  // namespace kdmvs::model
