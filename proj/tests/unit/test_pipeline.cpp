#include <gtest/gtest.h>

#include <spdlog/spdlog.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "kdmvs/pipeline/gen_data.hpp"
#include "kdmvs/pipeline/run.hpp"

namespace kdmvs {
namespace {

using namespace pipeline;
namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Fresh scratch directory per test.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& name) : path_(fs::temp_directory_path() / ("kdmvs_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

TEST(Config, DefaultsMatchCheckedInFile) {
  const fs::path file = fs::path(KDMVS_SOURCE_DIR) / "configs" / "desk.yaml";
  const RunConfig c = load_config(file);
  EXPECT_EQ(config_to_string(c), config_to_string(RunConfig{}));
  EXPECT_EQ(c.loss.weights.featuremetric, 4.0);
  EXPECT_EQ(c.loss.weights.photometric, 1.0);
  EXPECT_EQ(c.optim.lr, 1e-3);
  EXPECT_EQ(c.optim.teacher_epochs, 5);
  EXPECT_EQ(c.rounds, 2);
  EXPECT_EQ(c.model.cascade.interval_decay[1], 0.5);
  EXPECT_EQ(c.model.cascade.interval_decay[2], 0.25);
}

TEST(Config, UnknownKeysAreRejectedAtEveryLevel) {
  EXPECT_THROW(parse_config("bogus: 1\n"), ConfigError);
  EXPECT_THROW(parse_config("loss:\n  lambda_feature: 4\n"), ConfigError);
  EXPECT_THROW(parse_config("check:\n  conf: 0.1\n  extra: 2\n"), ConfigError);
  try {
    parse_config("optim:\n  learning_rate: 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("optim.learning_rate"), std::string::npos);
  }
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_THROW(parse_config("optim:\n  lr: fast\n"), ConfigError);
  EXPECT_THROW(parse_config("optim:\n  lr: -1\n"), ConfigError);
  EXPECT_THROW(parse_config("model:\n  hypotheses: [32, 16]\n"), ConfigError);
  EXPECT_THROW(parse_config("distill:\n  mode: max\n"), ConfigError);
  EXPECT_THROW(parse_config("distill:\n  divergence: js\n"), ConfigError);
  EXPECT_THROW(parse_config("loss:\n  feature_norm: l3\n"), ConfigError);
  EXPECT_THROW(parse_config("dataset:\n  height: 30\n"), ConfigError);
  EXPECT_THROW(parse_config("rounds: -1\n"), ConfigError);
  EXPECT_THROW(parse_config("check:\n  geo: 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2"), ConfigError);
}

TEST(Config, CommentsAndOverridesParse) {
  const RunConfig c = parse_config("# comment\nrounds: 3  # trailing\ndistill:\n  mode: sum\n  divergence: kl_forward\n");
  EXPECT_EQ(c.rounds, 3);
  EXPECT_EQ(c.distill.mode, distill::NormalizeMode::kSum);
  EXPECT_EQ(c.distill.divergence, distill::Divergence::kForward);
}

TEST(Config, SerializationRoundTripsAndHashIgnoresOutput) {
  RunConfig c;
  c.check.geometric = 0.0123456789012345;
  c.dataset.train_roots = {"a", "b"};
  const RunConfig back = parse_config(config_to_string(c));
  EXPECT_EQ(config_to_string(back), config_to_string(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  RunConfig moved = c;
  moved.output = "elsewhere";
  EXPECT_EQ(config_hash(moved), config_hash(c));
  RunConfig reseeded = c;
  reseeded.seed = 2;
  EXPECT_NE(config_hash(reseeded), config_hash(c));
}

TEST(Manifest, AppendsCompleteItems) {
  ScratchDir dir("manifest");
  const Manifest m(dir.path() / "manifest.yaml");
  m.append("first", {{"a", "1"}});
  const std::string before = slurp(m.path());
  m.append("second", {{"path", "x: y"}});
  const std::string after = slurp(m.path());
  EXPECT_EQ(after.substr(0, before.size()), before);
  const YAML::Node n = read_manifest(m.path());
  ASSERT_TRUE(n.IsSequence());
  ASSERT_EQ(n.size(), 2u);
  EXPECT_EQ(n[0]["event"].as<std::string>(), "first");
  EXPECT_EQ(n[1]["path"].as<std::string>(), "x: y");
  EXPECT_TRUE(n[1]["time"]);
}

TEST(ModelNames, ParseAndFormat) {
  EXPECT_EQ(parse_model_name("teacher"), 0);
  EXPECT_EQ(parse_model_name("student_2"), 2);
  EXPECT_EQ(model_name(3), "student_3");
  EXPECT_EQ(teacher_of_round(1), "teacher");
  EXPECT_EQ(teacher_of_round(2), "student_1");
  EXPECT_THROW(parse_model_name("student_0"), ConfigError);
  EXPECT_THROW(parse_model_name("student_x"), ConfigError);
  EXPECT_THROW(parse_model_name("pupil"), ConfigError);
}

TEST(Train, NonFiniteLossAbortsWithStep) {
  ParamStore p{{"w", Grid::scalar(1.0)}};
  const std::vector<Sample> samples = {{0, 0}, {0, 1}, {0, 2}};
  int calls = 0;
  try {
    train(p, samples, {1, 1, 1e-3, 5}, [&](Tape&, const BoundParams& b, const Sample&) -> SampleLoss {
      const double k = ++calls == 2 ? std::numeric_limits<double>::quiet_NaN() : 1.0;
      return {ops::scale(b["w"], k), {}};
    });
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.step(), 2);
  }
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  const ParamStore init = model::init_params(model::ModelConfig{}, 9);
  const TrainResult r = train(init, {{0, 0}}, {0, 1, 1e-3, 1}, [](Tape&, const BoundParams&, const Sample&) {
    ADD_FAILURE();
    return SampleLoss{};
  });
  EXPECT_EQ(r.params, init);
  EXPECT_TRUE(r.epochs.empty());
}

TEST(Train, SkippedSamplesAreCounted) {
  ParamStore p{{"w", Grid::scalar(1.0)}};
  const TrainResult r = train(p, {{0, 0}, {0, 1}, {0, 2}}, {1, 1, 1e-3, 5},
                              [](Tape&, const BoundParams& b, const Sample& s) -> SampleLoss {
                                if (s.ref == 1) return {};
                                return {ops::scale(b["w"], 2.0), {{"part", 2.0}}};
                              });
  ASSERT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.epochs[0].skipped, 1);
  EXPECT_EQ(r.epochs[0].samples, 2);
  EXPECT_EQ(r.epochs[0].steps, 2);
  // The second sample sees w after one Adam step of size lr.
  EXPECT_NEAR(r.epochs[0].loss, (2.0 + 2.0 * (1.0 - 1e-3)) / 2.0, 1e-9);
}

// A small dataset: 2 training scenes and 1 validation scene of 32 x 40
// pixels with 3 views, one epoch per model.
RunConfig tiny_config(const fs::path& root) {
  RunConfig c;
  c.data_gen.train_scenes = 2;
  c.data_gen.val_scenes = 1;
  c.dataset.train_roots = {(root / "data" / "train").string()};
  c.dataset.val_roots = {(root / "data" / "val").string()};
  c.dataset.views = 3;
  c.dataset.height = 32;
  c.dataset.width = 40;
  c.optim.teacher_epochs = 1;
  c.optim.student_epochs = 1;
  c.rounds = 1;
  c.output = (root / "run").string();
  return c;
}

class TinyPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    spdlog::set_level(spdlog::level::warn);
    dir_ = new ScratchDir("tiny_pipeline");
    cfg_ = tiny_config(dir_->path());
    generate_dataset(cfg_);
  }
  static void TearDownTestSuite() {
    delete dir_;
    spdlog::set_level(spdlog::level::info);
  }
  static inline ScratchDir* dir_ = nullptr;
  static inline RunConfig cfg_;
};

TEST_F(TinyPipeline, GroundTruthInjectionCoversCovisiblePixels) {
  const SceneSet data = load_scene_set(cfg_.dataset.train_roots, cfg_.dataset);
  const auto truths = load_truths(data);
  PredictionSet oracle(data.scenes.size());
  double covisible = 0.0, seen = 0.0, total = 0.0;
  for (std::size_t s = 0; s < data.scenes.size(); ++s)
    for (int v = 0; v < data.scenes[s].views(); ++v) {
      oracle[s].push_back({truths[s].depths[v], Grid(cfg_.dataset.height, cfg_.dataset.width, 1, 1.0)});
      for (double c : truths[s].covis_count[v].data()) {
        covisible += c >= cfg_.dataset.views - 1;
        seen += c >= 1;
      }
      total += truths[s].covis_count[v].size();
    }
  const PseudoArtifacts a = build_pseudo(oracle, data, cfg_);
  // Co-visibility also excludes pixels whose bilinear footprint crosses a
  // surface boundary, which exact depths still validate, so it is a lower
  // bound up to lookup round-off.
  EXPECT_GT(a.coverage(), covisible / total - 0.02);
  EXPECT_LE(a.coverage(), seen / total);
  for (std::size_t s = 0; s < data.scenes.size(); ++s)
    for (int v = 0; v < data.scenes[s].views(); ++v) {
      const auto& l = a.labels[s][v];
      for (int p = 0; p < l.mask.pixels(); ++p)
        if (l.mask[p] != 0.0) {
          EXPECT_NEAR(l.mean[p], truths[s].depths[v][p], 0.02 * truths[s].depths[v][p]);
        }
    }
}

TEST_F(TinyPipeline, ImpossibleConfidenceThresholdAborts) {
  const SceneSet data = load_scene_set(cfg_.dataset.train_roots, cfg_.dataset);
  const auto truths = load_truths(data);
  PredictionSet oracle(data.scenes.size());
  for (std::size_t s = 0; s < data.scenes.size(); ++s)
    for (int v = 0; v < data.scenes[s].views(); ++v)
      oracle[s].push_back({truths[s].depths[v], Grid(cfg_.dataset.height, cfg_.dataset.width, 1, 1.0)});
  RunConfig c = cfg_;
  c.check.confidence = 1.01;
  try {
    build_pseudo(oracle, data, c);
    FAIL();
  } catch (const EmptyPseudoLabelError& e) {
    EXPECT_NE(std::string(e.what()).find("max final confidence"), std::string::npos);
  }
}

TEST_F(TinyPipeline, StageArtifactsRoundTrip) {
  RunConfig c = cfg_;
  c.output = (dir_->path() / "stages").string();
  const SceneSet data = load_scene_set(c.dataset.train_roots, c.dataset);
  const ParamStore params = model::init_params(c.model, 3);
  save_model(params, 3, c, "teacher");
  EXPECT_EQ(load_model(c, "teacher"), params);
  const PredictionSet preds = infer_all(params, data, c);
  write_predictions(preds, data, model_dir(c, "teacher") / "predictions");
  const PredictionSet back = read_predictions(data, model_dir(c, "teacher") / "predictions");
  ASSERT_EQ(back.size(), preds.size());
  EXPECT_NEAR(back[0][0].depth(5, 7), preds[0][0].depth(5, 7), 1e-5);
  c.check.confidence = 1e-9;
  c.check.reprojection = 50.0;
  c.check.geometric = 0.5;
  stage_check(c, "teacher");
  stage_encode(c, "teacher");
  const PseudoArtifacts a = read_pseudo_artifacts(data, model_dir(c, "teacher") / "pseudo");
  EXPECT_EQ(a.validated, check_all(back, data, c));
  EXPECT_GT(a.coverage(), 0.0);
  EXPECT_TRUE(fs::exists(model_dir(c, "teacher") / "pseudo" / "coverage.csv"));
  EXPECT_EQ(read_manifest(fs::path(c.output) / "manifest.yaml").size(), 2u);
}

std::map<std::string, std::string> training_outputs(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const char* f : {"teacher/model.ckpt", "teacher/epochs.csv", "student_1/model.ckpt", "student_1/epochs.csv"})
    out[f] = slurp(fs::path(cfg.output) / f);
  for (const auto& e : fs::recursive_directory_iterator(fs::path(cfg.output) / "teacher"))
    if (e.is_regular_file()) out[fs::relative(e.path(), cfg.output).string()] = slurp(e.path());
  return out;
}

void train_without_evaluation(const RunConfig& cfg) {
  stage_train_teacher(cfg);
  stage_infer(cfg, "teacher");
  stage_check(cfg, "teacher");
  stage_encode(cfg, "teacher");
  stage_train_student(cfg, 1);
}

// Training, checking and distillation never read gt/: destroying every gt
// file leaves all of their outputs byte-identical.
TEST_F(TinyPipeline, TrainingOutputsDoNotDependOnGroundTruth) {
  ScratchDir copy("tiny_pipeline_audit");
  fs::copy(dir_->path() / "data", copy.path() / "data", fs::copy_options::recursive);
  RunConfig c = tiny_config(copy.path());
  c.check.confidence = 1e-9;
  c.check.reprojection = 50.0;
  c.check.geometric = 0.5;
  train_without_evaluation(c);
  const auto clean = training_outputs(c);

  for (const auto& e : fs::recursive_directory_iterator(copy.path() / "data"))
    if (e.is_regular_file() && e.path().parent_path().filename() == "gt") {
      std::ofstream(e.path(), std::ios::binary | std::ios::trunc) << "corrupted";
    }
  fs::remove_all(c.output);
  train_without_evaluation(c);
  EXPECT_EQ(training_outputs(c), clean);
  EXPECT_THROW(load_truths(load_scene_set(c.dataset.val_roots, c.dataset)), IoError);
}

TEST_F(TinyPipeline, ZeroRoundsStillEvaluatesTheTeacher) {
  RunConfig c = cfg_;
  c.rounds = 0;
  c.optim.teacher_epochs = 0;
  c.output = (dir_->path() / "zero_rounds").string();
  const RoundsResult r = run_rounds(c);
  EXPECT_TRUE(find_metric(r.rows, "teacher", "epe"));
  EXPECT_TRUE(find_metric(r.rows, "teacher", "loss_initial"));
  EXPECT_EQ(*find_metric(r.rows, "teacher", "loss_initial"), *find_metric(r.rows, "teacher", "loss_final"));
  for (const auto& row : r.rows) EXPECT_EQ(row.stage, "teacher");
  EXPECT_EQ(read_metrics_csv(r.metrics_path).size(), r.rows.size());
  const YAML::Node m = read_manifest(fs::path(c.output) / "manifest.yaml");
  EXPECT_EQ(m[0]["event"].as<std::string>(), "run_started");
  EXPECT_EQ(m[m.size() - 1]["event"].as<std::string>(), "run_finished");
  EXPECT_TRUE(fs::exists(fs::path(c.output) / "teacher" / "cloud.ply"));
}

TEST_F(TinyPipeline, AbortedRunKeepsPartialManifest) {
  RunConfig c = cfg_;
  c.optim.teacher_epochs = 0;
  c.check.confidence = 1.01;
  c.output = (dir_->path() / "aborted").string();
  EXPECT_THROW(run_rounds(c), EmptyPseudoLabelError);
  const YAML::Node m = read_manifest(fs::path(c.output) / "manifest.yaml");
  EXPECT_EQ(m[m.size() - 1]["event"].as<std::string>(), "run_aborted");
  EXPECT_TRUE(find_metric(read_metrics_csv(fs::path(c.output) / "metrics.csv"), "teacher", "epe"));
}

TEST_F(TinyPipeline, ViewWithoutLabelsIsSkipped) {
  const SceneSet data = load_scene_set(cfg_.dataset.train_roots, cfg_.dataset);
  const auto truths = load_truths(data);
  PredictionSet oracle(data.scenes.size());
  for (std::size_t s = 0; s < data.scenes.size(); ++s)
    for (int v = 0; v < data.scenes[s].views(); ++v)
      oracle[s].push_back({truths[s].depths[v], Grid(cfg_.dataset.height, cfg_.dataset.width, 1, 1.0)});
  PseudoArtifacts a = build_pseudo(oracle, data, cfg_);
  a.labels[0][1].mask = Grid(cfg_.dataset.height, cfg_.dataset.width, 1);
  const TrainResult r = train_student(cfg_, data, a.stage_labels(), 1);
  ASSERT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.epochs[0].skipped, 1);
  EXPECT_EQ(r.epochs[0].samples, static_cast<int>(data.samples().size()) - 1);
}

}  // namespace
}  // namespace kdmvs
