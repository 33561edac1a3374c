#pragma once

#include <spdlog/spdlog.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kdmvs/distill/discretize.hpp"
#include "kdmvs/distill/encode.hpp"
#include "kdmvs/distill/loss.hpp"
#include "kdmvs/eval/csv.hpp"
#include "kdmvs/loss/selfsup.hpp"
#include "kdmvs/model/cascade.hpp"
#include "kdmvs/pipeline/data.hpp"
#include "kdmvs/util/parallel.hpp"

namespace kdmvs::pipeline {

// Seed streams. Teacher and student initializations never share a stream.
namespace streams {
inline constexpr std::uint64_t kTeacherInit = 1;
inline constexpr std::uint64_t kTeacherOrder = 2;
inline std::uint64_t student_init(int round) { return 100 + static_cast<std::uint64_t>(round); }
inline std::uint64_t student_order(int round) { return 200 + static_cast<std::uint64_t>(round); }
}  // namespace streams

// Scalar loss of one sample plus named components for logging. An empty
// `loss` marks a sample that contributes nothing.
struct SampleLoss {
  std::optional<Var> loss;
  std::vector<std::pair<std::string, double>> parts;
};

using SampleLossFn = std::function<SampleLoss(Tape&, const BoundParams&, const Sample&)>;

struct EpochLog {
  int epoch = 0;
  long steps = 0;
  int samples = 0;
  int skipped = 0;
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> parts;
};

struct TrainOptions {
  int epochs = 0;
  int batch = 1;
  double lr = 1e-3;
  std::uint64_t order_seed = 0;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochLog> epochs;
  std::vector<double> step_losses;
};

// Minibatch Adam over `samples`, reshuffled each epoch. Per-sample
// gradients are computed independently and summed in sample order, so the
// result does not depend on the worker count.
inline TrainResult train(ParamStore params, const std::vector<Sample>& samples, const TrainOptions& opt,
                         const SampleLossFn& fn) {
  TrainResult result;
  Adam adam({opt.lr});
  std::vector<Sample> order = samples;
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    Rng rng(derive_seed(opt.order_seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    EpochLog log;
    log.epoch = epoch;
    std::map<std::string, double> part_sums;
    std::vector<std::string> part_names;
    for (std::size_t start = 0; start < order.size(); start += opt.batch) {
      const int n = static_cast<int>(std::min<std::size_t>(opt.batch, order.size() - start));
      std::vector<std::optional<GradStore>> grads(n);
      std::vector<SampleLoss> losses(n);
      std::vector<double> values(n, 0.0);
      parallel_for(n, [&](int i) {
        Tape tape;
        BoundParams bound(tape, params, true);
        losses[i] = fn(tape, bound, order[start + i]);
        if (!losses[i].loss) return;
        values[i] = losses[i].loss->value()[0];
        tape.backward(*losses[i].loss);
        grads[i] = bound.gradients(tape);
        losses[i].loss.reset();
      });
      const long step = adam.steps() + 1;
      GradStore total;
      int used = 0;
      double batch_loss = 0.0;
      for (int i = 0; i < n; ++i) {
        if (!grads[i]) {
          ++log.skipped;
          continue;
        }
        if (!std::isfinite(values[i]))
          throw NumericError("non-finite loss at step " + std::to_string(step), step);
        if (!all_finite(*grads[i])) throw NumericError("non-finite gradient at step " + std::to_string(step), step);
        ++used;
        batch_loss += values[i];
        log.loss += values[i];
        for (const auto& [name, v] : losses[i].parts) {
          if (!part_sums.count(name)) part_names.push_back(name);
          part_sums[name] += v;
        }
        accumulate(total, *grads[i]);
      }
      if (used == 0) continue;
      for (auto& [name, g] : total)
        for (double& v : g.data()) v /= used;
      adam.step(params, total);
      result.step_losses.push_back(batch_loss / used);
      log.samples += used;
      ++log.steps;
    }
    if (log.samples > 0) {
      log.loss /= log.samples;
      for (const auto& name : part_names) log.parts.emplace_back(name, part_sums[name] / log.samples);
    }
    spdlog::info("epoch {}: {} steps, mean loss {:.6g}, skipped {}", epoch, log.steps, log.loss, log.skipped);
    result.epochs.push_back(std::move(log));
  }
  result.params = std::move(params);
  return result;
}

inline void write_epoch_csv(const std::vector<EpochLog>& epochs, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "epoch,steps,samples,skipped,loss";
  if (!epochs.empty())
    for (const auto& [name, v] : epochs.front().parts) out << ',' << name;
  out << '\n';
  for (const EpochLog& e : epochs) {
    out << e.epoch << ',' << e.steps << ',' << e.samples << ',' << e.skipped << ',' << eval::format_number(e.loss);
    for (const auto& [name, v] : e.parts) out << ',' << eval::format_number(v);
    out << '\n';
  }
}

// Teacher objective on one sample.
inline SampleLoss teacher_sample_loss(Tape& tape, const BoundParams& p, const SceneSet& data, const Sample& s,
                                      const RunConfig& cfg) {
  const auto& scene = data.scenes[s.scene];
  const ViewBundle b = gather(scene, view_ids(scene, s.ref, cfg.dataset.views));
  const model::CascadeOutput out = model::forward_cascade(tape, p, b.images, b.cameras, cfg.model);
  loss::TeacherLoss l = loss::total_teacher_loss(tape, out, b.images, b.cameras, cfg.loss);
  return {l.total, {{"photometric", l.photometric}, {"featuremetric", l.featuremetric}}};
}

// Mean teacher loss over all samples with fixed parameters.
inline double mean_teacher_loss(const ParamStore& params, const SceneSet& data, const RunConfig& cfg) {
  const std::vector<Sample> samples = data.samples();
  std::vector<double> values(samples.size());
  parallel_for(static_cast<int>(samples.size()), [&](int i) {
    Tape tape;
    BoundParams bound(tape, params, false);
    values[i] = teacher_sample_loss(tape, bound, data, samples[i], cfg).loss->value()[0];
  });
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

inline TrainResult train_teacher(const RunConfig& cfg, const SceneSet& data) {
  ParamStore init = model::init_params(cfg.model, derive_seed(cfg.seed, streams::kTeacherInit));
  TrainOptions opt{cfg.optim.teacher_epochs, cfg.optim.batch, cfg.optim.lr, derive_seed(cfg.seed, streams::kTeacherOrder)};
  return train(std::move(init), data.samples(), opt, [&](Tape& tape, const BoundParams& p, const Sample& s) {
    return teacher_sample_loss(tape, p, data, s, cfg);
  });
}

// Pseudo labels for every reference view, indexed [scene][view], each
// pooled to the three stage resolutions.
struct StageLabels {
  std::array<distill::PseudoLabel, 3> stages;
};
using LabelSet = std::vector<std::vector<StageLabels>>;

inline StageLabels pool_stages(const distill::PseudoLabel& full) {
  StageLabels out;
  for (int s = 0; s < 3; ++s) out.stages[s] = distill::pool(full, CascadeSettings::kDownscale[s]);
  return out;
}

// Distillation objective on one sample; views without labels are skipped.
inline SampleLoss student_sample_loss(Tape& tape, const BoundParams& p, const SceneSet& data, const Sample& s,
                                      const LabelSet& labels, const RunConfig& cfg) {
  const StageLabels& label = labels[s.scene][s.ref];
  if (label.stages[2].count() == 0) return {};
  const auto& scene = data.scenes[s.scene];
  const ViewBundle b = gather(scene, view_ids(scene, s.ref, cfg.dataset.views));
  const model::CascadeOutput out = model::forward_cascade(tape, p, b.images, b.cameras, cfg.model);
  std::vector<Var> terms;
  std::vector<double> coeffs;
  SampleLoss result;
  int dropped = 0;
  for (int st = 0; st < 3; ++st) {
    const distill::DiscreteLabel d = distill::discretize(label.stages[st], out.stages[st].hyps, cfg.distill.mode);
    dropped += d.dropped;
    distill::DistillLoss l = distill::distill_loss(d.prob, out.stages[st].prob, d.mask, cfg.distill.divergence);
    result.parts.emplace_back("stage" + std::to_string(st), l.value.value()[0]);
    if (l.pixels == 0) continue;
    terms.push_back(l.value);
    coeffs.push_back(cfg.loss.stage_weights[st]);
  }
  result.parts.emplace_back("dropped", dropped);
  if (terms.empty()) return {};
  result.loss = ops::weighted_sum(terms, coeffs);
  return result;
}

inline TrainResult train_student(const RunConfig& cfg, const SceneSet& data, const LabelSet& labels, int round) {
  for (std::size_t sc = 0; sc < labels.size(); ++sc)
    for (std::size_t v = 0; v < labels[sc].size(); ++v)
      if (labels[sc][v].stages[2].count() == 0)
        spdlog::warn("scene {} view {}: no validated pixels, skipped in distillation", data.scenes[sc].name, v);
  ParamStore init = model::init_params(cfg.model, derive_seed(cfg.seed, streams::student_init(round)));
  TrainOptions opt{cfg.optim.student_epochs, cfg.optim.batch, cfg.optim.lr,
                   derive_seed(cfg.seed, streams::student_order(round))};
  return train(std::move(init), data.samples(), opt, [&](Tape& tape, const BoundParams& p, const Sample& s) {
    return student_sample_loss(tape, p, data, s, labels, cfg);
  });
}

}  // namespace kdmvs::pipeline
