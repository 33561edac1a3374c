#pragma once

#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kdmvs/model/checkpoint.hpp"
#include "kdmvs/pipeline/evaluate.hpp"

// Output layout under cfg.output:
//   config.yaml              resolved configuration
//   manifest.yaml            append-only event log
//   metrics.csv              run,stage,metric,value rows of every evaluation
//   <model>/model.ckpt       teacher, student_1, student_2, ...
//   <model>/epochs.csv       per-epoch training losses
//   <model>/cloud.ply        fused validation cloud
//   <model>/predictions/     depth and confidence on the training views
//   <model>/pseudo/          cross-view check and pseudo labels from <model>
namespace kdmvs::pipeline {

namespace fs = std::filesystem;

inline std::string model_name(int round) { return round == 0 ? "teacher" : "student_" + std::to_string(round); }

// Round r distills from the model of round r - 1.
inline std::string teacher_of_round(int round) { return model_name(round - 1); }

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// YAML sequence of events. Each append writes one complete item at the end
// of the file; nothing is ever rewritten.
class Manifest {
 public:
  using Fields = std::vector<std::pair<std::string, std::string>>;

  explicit Manifest(fs::path path) : path_(std::move(path)) {}

  void append(const std::string& event, const Fields& fields = {}) const {
    YAML::Emitter e;
    e << YAML::BeginSeq << YAML::BeginMap;
    e << YAML::Key << "event" << YAML::Value << event;
    e << YAML::Key << "time" << YAML::Value << utc_timestamp();
    for (const auto& [k, v] : fields) e << YAML::Key << k << YAML::Value << v;
    e << YAML::EndMap << YAML::EndSeq;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError("cannot append to " + path_.string());
    out << e.c_str() << '\n';
  }

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline YAML::Node read_manifest(const fs::path& path) {
  try {
    return YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline fs::path model_dir(const RunConfig& cfg, const std::string& name) { return fs::path(cfg.output) / name; }

inline void save_model(const ParamStore& params, std::uint64_t seed, const RunConfig& cfg, const std::string& name) {
  fs::create_directories(model_dir(cfg, name));
  model::save_checkpoint({params, seed, config_hash(cfg)}, model_dir(cfg, name) / "model.ckpt");
}

inline ParamStore load_model(const RunConfig& cfg, const std::string& name) {
  const fs::path path = model_dir(cfg, name) / "model.ckpt";
  if (!fs::exists(path)) throw IoError("missing checkpoint " + path.string());
  const model::Checkpoint ckpt = model::load_checkpoint(path);
  if (ckpt.config_hash != config_hash(cfg))
    spdlog::warn("{} was written under config {}, current config is {}", path.string(), hex(ckpt.config_hash),
                 hex(config_hash(cfg)));
  return ckpt.params;
}

inline std::string run_id(const RunConfig& cfg) { return hex(config_hash(cfg)); }

inline std::vector<eval::MetricRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "run,stage,metric,value") throw IoError(path.string() + ": unexpected header");
  std::vector<eval::MetricRow> rows;
  while (std::getline(in, line)) {
    std::istringstream is(line);
    eval::MetricRow r;
    std::string value;
    if (!std::getline(is, r.run, ',') || !std::getline(is, r.stage, ',') || !std::getline(is, r.metric, ',') ||
        !std::getline(is, value))
      throw IoError(path.string() + ": malformed row '" + line + "'");
    r.value = std::stod(value);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Everything one model contributes to the metrics: validation depth and
// cloud metrics, with the fused cloud written next to the checkpoint.
inline std::vector<eval::MetricRow> evaluate_model(const ParamStore& params, const std::string& name, const SceneSet& val,
                                                   const std::vector<dataset::SceneTruth>& truths, const RunConfig& cfg) {
  const ModelEvaluation e = evaluate_predictions(infer_all(params, val, cfg), val, truths, cfg);
  fs::create_directories(model_dir(cfg, name));
  eval::write_ply(e.predicted_cloud, model_dir(cfg, name) / "cloud.ply");
  spdlog::info("{}: validation EPE {:.4f}, e1 {:.2f}%, e3 {:.2f}%", name, e.depth.epe, e.depth.e1, e.depth.e3);
  return model_rows(e, run_id(cfg), name);
}

struct RoundsResult {
  std::vector<eval::MetricRow> rows;
  fs::path metrics_path;
};

// Looks up a metric value by stage and name.
inline std::optional<double> find_metric(const std::vector<eval::MetricRow>& rows, const std::string& stage,
                                         const std::string& metric) {
  for (const auto& r : rows)
    if (r.stage == stage && r.metric == metric) return r.value;
  return std::nullopt;
}

// Teacher self-training, then `cfg.rounds` rounds of pseudo-label
// generation and student distillation, each round distilling from the
// previous round's model. Every model is evaluated on the validation
// scenes. Metrics are flushed after every stage, so an aborted run keeps
// what it finished.
inline RoundsResult run_rounds(const RunConfig& cfg) {
  const fs::path out = cfg.output;
  fs::create_directories(out);
  {
    std::ofstream c(out / "config.yaml");
    c << config_to_string(cfg);
  }
  const Manifest manifest(out / "manifest.yaml");
  RoundsResult result;
  result.metrics_path = out / "metrics.csv";
  auto flush = [&] { eval::write_metrics_csv(result.rows, result.metrics_path); };
  auto add_rows = [&](const std::vector<eval::MetricRow>& rows) {
    result.rows.insert(result.rows.end(), rows.begin(), rows.end());
    flush();
  };
  manifest.append("run_started", {{"config_hash", run_id(cfg)},
                                  {"seed", std::to_string(cfg.seed)},
                                  {"rounds", std::to_string(cfg.rounds)},
                                  {"config", (out / "config.yaml").string()}});
  try {
    const SceneSet train_set = load_scene_set(cfg.dataset.train_roots, cfg.dataset);
    const SceneSet val_set = load_scene_set(cfg.dataset.val_roots, cfg.dataset);
    const std::string id = run_id(cfg);

    const std::uint64_t teacher_seed = derive_seed(cfg.seed, streams::kTeacherInit);
    const double initial = mean_teacher_loss(model::init_params(cfg.model, teacher_seed), train_set, cfg);
    TrainResult teacher = train_teacher(cfg, train_set);
    const double final_loss = mean_teacher_loss(teacher.params, train_set, cfg);
    save_model(teacher.params, teacher_seed, cfg, "teacher");
    write_epoch_csv(teacher.epochs, model_dir(cfg, "teacher") / "epochs.csv");
    spdlog::info("teacher: mean L_S {:.6g} at initialization, {:.6g} after training", initial, final_loss);
    add_rows({{id, "teacher", "loss_initial", initial}, {id, "teacher", "loss_final", final_loss}});
    manifest.append("teacher_trained", {{"checkpoint", (model_dir(cfg, "teacher") / "model.ckpt").string()},
                                        {"epochs_csv", (model_dir(cfg, "teacher") / "epochs.csv").string()},
                                        {"loss_initial", eval::format_number(initial)},
                                        {"loss_final", eval::format_number(final_loss)}});

    // Ground truth is read only here, for evaluation.
    const auto val_truths = load_truths(val_set);
    const auto train_truths = load_truths(train_set);
    add_rows(evaluate_model(teacher.params, "teacher", val_set, val_truths, cfg));
    manifest.append("evaluated", {{"model", "teacher"}, {"cloud", (model_dir(cfg, "teacher") / "cloud.ply").string()},
                                  {"epe", eval::format_number(*find_metric(result.rows, "teacher", "epe"))}});

    ParamStore current = std::move(teacher.params);
    for (int round = 1; round <= cfg.rounds; ++round) {
      const std::string source = teacher_of_round(round), name = model_name(round);
      const PredictionSet preds = infer_all(current, train_set, cfg);
      write_predictions(preds, train_set, model_dir(cfg, source) / "predictions");
      const PseudoArtifacts pseudo = build_pseudo(preds, train_set, cfg);
      write_pseudo_artifacts(pseudo, train_set, model_dir(cfg, source) / "pseudo");
      const PseudoQuality q = pseudo_quality(pseudo, preds, train_set, train_truths, cfg);
      spdlog::info("round {}: pseudo-label coverage {:.3f}, validated e1 {:.2f}%", round, q.coverage, q.validated_e1);
      add_rows(pseudo_rows(q, id, "pseudo_" + std::to_string(round)));
      manifest.append("pseudo_labels", {{"round", std::to_string(round)},
                                        {"from", source},
                                        {"dir", (model_dir(cfg, source) / "pseudo").string()},
                                        {"coverage", eval::format_number(q.coverage)}});

      TrainResult student = train_student(cfg, train_set, pseudo.stage_labels(), round);
      save_model(student.params, derive_seed(cfg.seed, streams::student_init(round)), cfg, name);
      write_epoch_csv(student.epochs, model_dir(cfg, name) / "epochs.csv");
      manifest.append("student_trained", {{"round", std::to_string(round)},
                                          {"checkpoint", (model_dir(cfg, name) / "model.ckpt").string()},
                                          {"epochs_csv", (model_dir(cfg, name) / "epochs.csv").string()}});
      add_rows(evaluate_model(student.params, name, val_set, val_truths, cfg));
      manifest.append("evaluated", {{"model", name}, {"cloud", (model_dir(cfg, name) / "cloud.ply").string()},
                                    {"epe", eval::format_number(*find_metric(result.rows, name, "epe"))}});
      current = std::move(student.params);
    }
    manifest.append("run_finished", {{"metrics", result.metrics_path.string()}});
  } catch (const std::exception& e) {
    manifest.append("run_aborted", {{"error", e.what()}});
    throw;
  }
  return result;
}

// Single stages, each reading its inputs from the artifacts of earlier
// stages under cfg.output.

inline void stage_train_teacher(const RunConfig& cfg) {
  const SceneSet train_set = load_scene_set(cfg.dataset.train_roots, cfg.dataset);
  TrainResult t = train_teacher(cfg, train_set);
  save_model(t.params, derive_seed(cfg.seed, streams::kTeacherInit), cfg, "teacher");
  write_epoch_csv(t.epochs, model_dir(cfg, "teacher") / "epochs.csv");
  Manifest(fs::path(cfg.output) / "manifest.yaml")
      .append("teacher_trained", {{"config_hash", run_id(cfg)},
                                  {"checkpoint", (model_dir(cfg, "teacher") / "model.ckpt").string()}});
}

inline void stage_infer(const RunConfig& cfg, const std::string& name) {
  const SceneSet train_set = load_scene_set(cfg.dataset.train_roots, cfg.dataset);
  write_predictions(infer_all(load_model(cfg, name), train_set, cfg), train_set, model_dir(cfg, name) / "predictions");
  Manifest(fs::path(cfg.output) / "manifest.yaml")
      .append("inferred", {{"model", name}, {"dir", (model_dir(cfg, name) / "predictions").string()}});
}

inline void stage_check(const RunConfig& cfg, const std::string& name) {
  const SceneSet train_set = load_scene_set(cfg.dataset.train_roots, cfg.dataset);
  const PredictionSet preds = read_predictions(train_set, model_dir(cfg, name) / "predictions");
  write_validated_sets(check_all(preds, train_set, cfg), train_set, model_dir(cfg, name) / "pseudo");
  Manifest(fs::path(cfg.output) / "manifest.yaml")
      .append("checked", {{"model", name}, {"dir", (model_dir(cfg, name) / "pseudo").string()}});
}

inline void stage_encode(const RunConfig& cfg, const std::string& name) {
  const SceneSet train_set = load_scene_set(cfg.dataset.train_roots, cfg.dataset);
  const fs::path dir = model_dir(cfg, name) / "pseudo";
  const PseudoArtifacts a = encode_all(read_validated_sets(train_set, dir), train_set, cfg);
  write_labels(a, train_set, dir);
  Manifest(fs::path(cfg.output) / "manifest.yaml")
      .append("encoded", {{"model", name}, {"dir", dir.string()}, {"coverage", eval::format_number(a.coverage())}});
}

inline void stage_train_student(const RunConfig& cfg, int round) {
  if (round < 1) throw ConfigError("student round must be >= 1");
  const SceneSet train_set = load_scene_set(cfg.dataset.train_roots, cfg.dataset);
  const PseudoArtifacts a = read_pseudo_artifacts(train_set, model_dir(cfg, teacher_of_round(round)) / "pseudo");
  if (a.coverage() == 0.0) throw EmptyPseudoLabelError("pseudo labels of " + teacher_of_round(round) + " are empty");
  const std::string name = model_name(round);
  TrainResult s = train_student(cfg, train_set, a.stage_labels(), round);
  save_model(s.params, derive_seed(cfg.seed, streams::student_init(round)), cfg, name);
  write_epoch_csv(s.epochs, model_dir(cfg, name) / "epochs.csv");
  Manifest(fs::path(cfg.output) / "manifest.yaml")
      .append("student_trained", {{"round", std::to_string(round)},
                                  {"checkpoint", (model_dir(cfg, name) / "model.ckpt").string()}});
}

inline std::vector<eval::MetricRow> stage_evaluate(const RunConfig& cfg, const std::string& name) {
  const SceneSet val_set = load_scene_set(cfg.dataset.val_roots, cfg.dataset);
  const auto rows = evaluate_model(load_model(cfg, name), name, val_set, load_truths(val_set), cfg);
  eval::write_metrics_csv(rows, model_dir(cfg, name) / "metrics.csv");
  Manifest(fs::path(cfg.output) / "manifest.yaml")
      .append("evaluated", {{"model", name}, {"metrics", (model_dir(cfg, name) / "metrics.csv").string()}});
  return rows;
}

// Parses "teacher" or "student_<round>" into a round number.
inline int parse_model_name(const std::string& name) {
  if (name == "teacher") return 0;
  const std::string prefix = "student_";
  if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size()) {
    try {
      std::size_t used = 0;
      const int r = std::stoi(name.substr(prefix.size()), &used);
      if (used == name.size() - prefix.size() && r >= 1) return r;
    } catch (const std::logic_error&) {
    }
  }
  throw ConfigError("unknown model '" + name + "' (expected teacher or student_<round>)");
}

}  // namespace kdmvs::pipeline
