#pragma once

#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "kdmvs/check/crossview.hpp"
#include "kdmvs/distill/encode.hpp"
#include "kdmvs/pipeline/train.hpp"

namespace kdmvs::pipeline {

// Full-resolution prediction for one reference view.
struct Prediction {
  Grid depth;
  Grid confidence;
};

inline Prediction infer_view(const ParamStore& params, const dataset::SceneInputs& scene, int ref, const RunConfig& cfg) {
  Tape tape;
  BoundParams bound(tape, params, false);
  const ViewBundle b = gather(scene, view_ids(scene, ref, cfg.dataset.views));
  model::CascadeOutput out = model::forward_cascade(tape, bound, b.images, b.cameras, cfg.model);
  return {out.stages[2].depth.value(), std::move(out.final_confidence)};
}

// Predictions for every view of every scene, indexed [scene][view].
using PredictionSet = std::vector<std::vector<Prediction>>;

inline PredictionSet infer_all(const ParamStore& params, const SceneSet& data, const RunConfig& cfg) {
  const std::vector<Sample> samples = data.samples();
  std::vector<Prediction> flat(samples.size());
  parallel_for(static_cast<int>(samples.size()), [&](int i) {
    flat[i] = infer_view(params, data.scenes[samples[i].scene], samples[i].ref, cfg);
  });
  PredictionSet out(data.scenes.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out[samples[i].scene].push_back(std::move(flat[i]));
  return out;
}

// Writes predicted depth and confidence maps as dir/<scene>/<view>_depth.pfm
// and <view>_conf.pfm.
inline void write_predictions(const PredictionSet& preds, const SceneSet& data, const std::filesystem::path& dir) {
  for (std::size_t sc = 0; sc < data.scenes.size(); ++sc) {
    const auto sdir = dir / data.scenes[sc].name;
    std::filesystem::create_directories(sdir);
    for (std::size_t v = 0; v < preds[sc].size(); ++v) {
      write_pfm(preds[sc][v].depth, sdir / dataset::view_name(static_cast<int>(v), "_depth.pfm"));
      write_pfm(preds[sc][v].confidence, sdir / dataset::view_name(static_cast<int>(v), "_conf.pfm"));
    }
  }
}

inline PredictionSet read_predictions(const SceneSet& data, const std::filesystem::path& dir) {
  PredictionSet out;
  for (const auto& s : data.scenes) {
    out.emplace_back();
    for (int v = 0; v < s.views(); ++v)
      out.back().push_back({read_pfm(dir / s.name / dataset::view_name(v, "_depth.pfm")),
                            read_pfm(dir / s.name / dataset::view_name(v, "_conf.pfm"))});
  }
  return out;
}

inline double variance_floor(const RunConfig& cfg, const CameraModel& ref) {
  return cfg.distill.variance_floor > 0.0
             ? cfg.distill.variance_floor
             : distill::default_variance_floor(cfg.model.cascade, ref.depth_min, ref.depth_max);
}

// Cross-view check of one reference view against its configured sources.
inline check::ValidatedDepthSet check_view(const PredictionSet& preds, const SceneSet& data, int scene, int ref,
                                           const RunConfig& cfg) {
  const auto& s = data.scenes[scene];
  const std::vector<int> ids = view_ids(s, ref, cfg.dataset.views);
  std::vector<Grid> depths;
  std::vector<CameraModel> cams;
  for (int id : ids) {
    depths.push_back(preds[scene][id].depth);
    cams.push_back(s.cameras[id]);
  }
  return check::validate(depths, preds[scene][ref].confidence, cams, cfg.check);
}

struct PseudoArtifacts {
  std::vector<std::vector<check::ValidatedDepthSet>> validated;  // [scene][view]
  std::vector<std::vector<distill::PseudoLabel>> labels;         // [scene][view]

  LabelSet stage_labels() const {
    LabelSet out(labels.size());
    for (std::size_t s = 0; s < labels.size(); ++s)
      for (const auto& l : labels[s]) out[s].push_back(pool_stages(l));
    return out;
  }

  double coverage() const {
    double covered = 0.0, total = 0.0;
    for (const auto& scene : labels)
      for (const auto& l : scene) {
        covered += l.count();
        total += l.mask.size();
      }
    return total > 0.0 ? covered / total : 0.0;
  }
};

using ValidatedSets = std::vector<std::vector<check::ValidatedDepthSet>>;  // [scene][view]

// Cross-view check of every reference view. Throws EmptyPseudoLabelError
// when no view keeps a single pixel.
inline ValidatedSets check_all(const PredictionSet& preds, const SceneSet& data, const RunConfig& cfg) {
  ValidatedSets out(data.scenes.size());
  std::size_t kept = 0;
  for (int sc = 0; sc < static_cast<int>(data.scenes.size()); ++sc) {
    out[sc].resize(data.scenes[sc].views());
    parallel_for(data.scenes[sc].views(), [&](int v) { out[sc][v] = check_view(preds, data, sc, v, cfg); });
    for (const auto& set : out[sc]) kept += set.size();
  }
  if (kept == 0) {
    std::ostringstream diag;
    for (int sc = 0; sc < static_cast<int>(data.scenes.size()); ++sc) {
      double conf_max = 0.0;
      for (const auto& p : preds[sc])
        for (double c : p.confidence.data()) conf_max = std::max(conf_max, c);
      diag << "\n  " << data.scenes[sc].name << ": max final confidence " << conf_max;
    }
    throw EmptyPseudoLabelError(
        "cross-view check left no validated pixel in any view (thresholds conf=" + eval::format_number(cfg.check.confidence) +
        " reproj=" + eval::format_number(cfg.check.reprojection) + " geo=" + eval::format_number(cfg.check.geometric) +
        " may be inappropriate)" + diag.str());
  }
  return out;
}

inline PseudoArtifacts encode_all(ValidatedSets validated, const SceneSet& data, const RunConfig& cfg) {
  PseudoArtifacts out;
  out.labels.resize(validated.size());
  for (std::size_t sc = 0; sc < validated.size(); ++sc)
    for (std::size_t v = 0; v < validated[sc].size(); ++v) {
      const CameraModel& cam = data.scenes[sc].cameras[v];
      out.labels[sc].push_back(distill::encode(validated[sc][v], variance_floor(cfg, cam), cam.depth_min, cam.depth_max));
    }
  out.validated = std::move(validated);
  return out;
}

inline PseudoArtifacts build_pseudo(const PredictionSet& preds, const SceneSet& data, const RunConfig& cfg) {
  return encode_all(check_all(preds, data, cfg), data, cfg);
}

inline PseudoArtifacts generate_pseudo(const ParamStore& params, const SceneSet& data, const RunConfig& cfg) {
  return build_pseudo(infer_all(params, data, cfg), data, cfg);
}

// Layout: dir/<scene>/<view>.val and <view>_mask.pfm.
inline void write_validated_sets(const ValidatedSets& sets, const SceneSet& data, const std::filesystem::path& dir) {
  for (std::size_t sc = 0; sc < sets.size(); ++sc) {
    const auto sdir = dir / data.scenes[sc].name;
    std::filesystem::create_directories(sdir);
    for (std::size_t v = 0; v < sets[sc].size(); ++v) {
      check::write_validated(sets[sc][v], sdir / dataset::view_name(static_cast<int>(v), ".val"));
      check::write_mask(sets[sc][v].mask(), sdir / dataset::view_name(static_cast<int>(v), "_mask.pfm"));
    }
  }
}

inline ValidatedSets read_validated_sets(const SceneSet& data, const std::filesystem::path& dir) {
  ValidatedSets out;
  for (const auto& s : data.scenes) {
    out.emplace_back();
    for (int v = 0; v < s.views(); ++v) out.back().push_back(check::read_validated(dir / s.name / dataset::view_name(v, ".val")));
  }
  return out;
}

// Layout: dir/<scene>/<view>.psl plus dir/coverage.csv.
inline void write_labels(const PseudoArtifacts& a, const SceneSet& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream cov(dir / "coverage.csv");
  if (!cov) throw IoError("cannot write " + (dir / "coverage.csv").string());
  cov << "scene,view,validated,pixels,ratio\n";
  for (std::size_t sc = 0; sc < a.labels.size(); ++sc) {
    const auto sdir = dir / data.scenes[sc].name;
    std::filesystem::create_directories(sdir);
    for (std::size_t v = 0; v < a.labels[sc].size(); ++v) {
      const auto& l = a.labels[sc][v];
      distill::write_pseudo(l, sdir / dataset::view_name(static_cast<int>(v), ".psl"));
      cov << data.scenes[sc].name << ',' << v << ',' << l.count() << ',' << l.mask.size() << ','
          << eval::format_number(static_cast<double>(l.count()) / l.mask.size()) << '\n';
    }
  }
}

inline void write_pseudo_artifacts(const PseudoArtifacts& a, const SceneSet& data, const std::filesystem::path& dir) {
  write_validated_sets(a.validated, data, dir);
  write_labels(a, data, dir);
}

inline PseudoArtifacts read_pseudo_artifacts(const SceneSet& data, const std::filesystem::path& dir) {
  PseudoArtifacts a;
  for (const auto& s : data.scenes) {
    const auto sdir = dir / s.name;
    a.labels.emplace_back();
    a.validated.emplace_back();
    for (int v = 0; v < s.views(); ++v) {
      a.labels.back().push_back(distill::read_pseudo(sdir / dataset::view_name(v, ".psl")));
      a.validated.back().push_back(check::read_validated(sdir / dataset::view_name(v, ".val")));
    }
  }
  return a;
}

}  // namespace kdmvs::pipeline
