#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "kdmvs/eval/csv.hpp"
#include "kdmvs/eval/depth_metrics.hpp"
#include "kdmvs/eval/point_cloud.hpp"
#include "kdmvs/pipeline/pseudo.hpp"

// Evaluation is the only place that reads gt/. Training and pseudo-label
// generation take a SceneSet, which carries inputs only.
namespace kdmvs::pipeline {

inline std::vector<dataset::SceneTruth> load_truths(const SceneSet& data) {
  std::vector<dataset::SceneTruth> out;
  for (std::size_t s = 0; s < data.scenes.size(); ++s) out.push_back(dataset::load_truth(data.dirs[s], data.scenes[s].views()));
  return out;
}

struct ModelEvaluation {
  eval::DepthMetrics depth;  // pooled over all validation pixels
  std::optional<eval::CloudMetrics> cloud;
  std::size_t cloud_points = 0;
  eval::PointCloud predicted_cloud;
};

// Depth metrics per view pooled by pixel count, plus accuracy and
// completeness of the fused cross-view-checked predictions against the fused
// ground-truth depths.
inline ModelEvaluation evaluate_predictions(const PredictionSet& preds, const SceneSet& data,
                                            const std::vector<dataset::SceneTruth>& truths, const RunConfig& cfg) {
  ModelEvaluation result;
  double epe = 0.0, e1 = 0.0, e3 = 0.0;
  double cloud_weight = 0.0;
  eval::CloudMetrics cloud_sum;
  for (std::size_t sc = 0; sc < data.scenes.size(); ++sc) {
    const auto& scene = data.scenes[sc];
    std::vector<Grid> masks, gt_masks;
    for (int v = 0; v < scene.views(); ++v) {
      const Grid mask = truths[sc].eval_mask(v);
      const CameraModel& cam = scene.cameras[v];
      const eval::DepthMetrics m =
          eval::depth_metrics(preds[sc][v].depth, truths[sc].depths[v], mask, cam.depth_min, cam.depth_max, cfg.eval.scale_units);
      epe += m.epe * m.pixels;
      e1 += m.e1 * m.pixels;
      e3 += m.e3 * m.pixels;
      result.depth.pixels += m.pixels;
      masks.push_back(check_view(preds, data, static_cast<int>(sc), v, cfg).mask());
      gt_masks.push_back(mask);
    }
    std::vector<eval::FuseView> pv, gv;
    for (int v = 0; v < scene.views(); ++v) {
      pv.push_back({&preds[sc][v].depth, &masks[v], &scene.cameras[v], &scene.images[v]});
      gv.push_back({&truths[sc].depths[v], &gt_masks[v], &scene.cameras[v], nullptr});
    }
    eval::PointCloud pred_cloud = eval::fuse(pv, cfg.eval.voxel);
    const eval::PointCloud gt_cloud = eval::fuse(gv, cfg.eval.voxel);
    if (!pred_cloud.empty()) {
      const eval::CloudMetrics m = eval::acc_comp(pred_cloud, gt_cloud, cfg.eval.cloud_cap);
      cloud_sum.accuracy += m.accuracy;
      cloud_sum.completeness += m.completeness;
      cloud_sum.overall += m.overall;
      cloud_weight += 1.0;
    }
    result.cloud_points += pred_cloud.size();
    result.predicted_cloud.points.insert(result.predicted_cloud.points.end(), pred_cloud.points.begin(),
                                         pred_cloud.points.end());
    result.predicted_cloud.colors.insert(result.predicted_cloud.colors.end(), pred_cloud.colors.begin(),
                                         pred_cloud.colors.end());
  }
  const double n = result.depth.pixels;
  result.depth.epe = epe / n;
  result.depth.e1 = e1 / n;
  result.depth.e3 = e3 / n;
  if (cloud_weight > 0.0)
    result.cloud = eval::CloudMetrics{cloud_sum.accuracy / cloud_weight, cloud_sum.completeness / cloud_weight,
                                      cloud_sum.overall / cloud_weight};
  return result;
}

inline std::vector<eval::MetricRow> model_rows(const ModelEvaluation& e, const std::string& run, const std::string& stage) {
  std::vector<eval::MetricRow> rows{{run, stage, "epe", e.depth.epe},
                                    {run, stage, "e1", e.depth.e1},
                                    {run, stage, "e3", e.depth.e3},
                                    {run, stage, "cloud_points", static_cast<double>(e.cloud_points)}};
  if (e.cloud) {
    rows.push_back({run, stage, "accuracy", e.cloud->accuracy});
    rows.push_back({run, stage, "completeness", e.cloud->completeness});
    rows.push_back({run, stage, "overall", e.cloud->overall});
  }
  return rows;
}

// Quality of pseudo labels against ground truth on co-visible pixels.
struct PseudoQuality {
  double coverage = 0.0;          // validated / all reference pixels
  double validated_e1 = 0.0;      // % of validated pixels with normalized |mu - gt| > 1
  double validated_epe = 0.0;     // mean normalized |mu - gt|
  double median_validated = 0.0;  // median normalized |teacher depth - gt|, validated pixels
  double median_rejected = 0.0;   // same over co-visible pixels that failed the check
  long validated = 0;
  long rejected = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<long>(mid)));
}

inline PseudoQuality pseudo_quality(const PseudoArtifacts& a, const PredictionSet& preds, const SceneSet& data,
                                    const std::vector<dataset::SceneTruth>& truths, const RunConfig& cfg) {
  PseudoQuality q;
  q.coverage = a.coverage();
  std::vector<double> good, bad;
  double sum = 0.0;
  long over1 = 0;
  for (std::size_t sc = 0; sc < data.scenes.size(); ++sc)
    for (int v = 0; v < data.scenes[sc].views(); ++v) {
      const CameraModel& cam = data.scenes[sc].cameras[v];
      const double s = cfg.eval.scale_units / (cam.depth_max - cam.depth_min);
      const auto& label = a.labels[sc][v];
      const Grid& gt = truths[sc].depths[v];
      const Grid covis = truths[sc].eval_mask(v);
      for (std::size_t i = 0; i < gt.size(); ++i) {
        if (covis[i] == 0.0) continue;
        const double err = std::abs(s * (preds[sc][v].depth[i] - gt[i]));
        if (label.mask[i] != 0.0) {
          const double e = std::abs(s * (label.mean[i] - gt[i]));
          sum += e;
          over1 += e > 1.0;
          good.push_back(err);
        } else {
          bad.push_back(err);
        }
      }
    }
  q.validated = static_cast<long>(good.size());
  q.rejected = static_cast<long>(bad.size());
  if (q.validated > 0) {
    q.validated_epe = sum / q.validated;
    q.validated_e1 = 100.0 * over1 / q.validated;
  }
  q.median_validated = median(good);
  q.median_rejected = median(bad);
  return q;
}

inline std::vector<eval::MetricRow> pseudo_rows(const PseudoQuality& q, const std::string& run, const std::string& stage) {
  return {{run, stage, "coverage", q.coverage},
          {run, stage, "validated_e1", q.validated_e1},
          {run, stage, "validated_epe", q.validated_epe},
          {run, stage, "median_err_validated", q.median_validated},
          {run, stage, "median_err_rejected", q.median_rejected},
          {run, stage, "validated_pixels", static_cast<double>(q.validated)},
          {run, stage, "rejected_covisible_pixels", static_cast<double>(q.rejected)}};
}

}  // namespace kdmvs::pipeline
