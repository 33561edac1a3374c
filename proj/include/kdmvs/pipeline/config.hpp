#pragma once

#include <yaml-cpp/yaml.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kdmvs/check/crossview.hpp"
#include "kdmvs/distill/discretize.hpp"
#include "kdmvs/distill/loss.hpp"
#include "kdmvs/loss/selfsup.hpp"
#include "kdmvs/model/params.hpp"

namespace kdmvs::pipeline {

struct DataGenConfig {
  int train_scenes = 8;
  int val_scenes = 2;
  bool lighting_perturbation = true;
  double gain_spread = 0.1;
  double bias_spread = 0.03;
  std::uint64_t seed = 2024;
};

struct DatasetConfig {
  std::vector<std::string> train_roots = {"data/desk/train"};
  std::vector<std::string> val_roots = {"data/desk/val"};
  int views = 5;
  int height = 64;
  int width = 80;
};

struct OptimConfig {
  double lr = 1e-3;
  int teacher_epochs = 5;
  int student_epochs = 5;
  int batch = 1;
};

struct DistillConfig {
  distill::NormalizeMode mode = distill::NormalizeMode::kSum;
  distill::Divergence divergence = distill::Divergence::kSymmetric;
  double variance_floor = 0.0;  // 0 = derived from the finest stage interval
};

struct EvalConfig {
  double scale_units = 128.0;
  double cloud_cap = 0.2;  // world units
  double voxel = 0.0;      // 0 disables voxel de-duplication
};

struct RunConfig {
  DataGenConfig data_gen{};
  DatasetConfig dataset{};
  model::ModelConfig model{};
  loss::TeacherLossOptions loss{};
  check::CheckThresholds check{};
  DistillConfig distill{};
  OptimConfig optim{};
  EvalConfig eval{};
  int rounds = 2;
  std::uint64_t seed = 1;
  std::string output = "runs/desk";

  void validate() const;
};

namespace detail {

inline void reject_unknown(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError("config: '" + where + "' must be a mapping");
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  if (!node || !node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception& e) {
    throw ConfigError("config: bad value for '" + where + "." + key + "': " + e.what());
  }
}

template <typename T, std::size_t N>
void read_array(const YAML::Node& node, const char* key, std::array<T, N>& out, const std::string& where) {
  std::vector<T> v;
  if (!node || !node[key]) return;
  read(node, key, v, where);
  if (v.size() != N) throw ConfigError("config: '" + where + "." + key + "' needs " + std::to_string(N) + " entries");
  std::copy(v.begin(), v.end(), out.begin());
}

}  // namespace detail

inline std::string to_string(distill::Divergence d) { return d == distill::Divergence::kSymmetric ? "symmetric" : "kl_forward"; }

inline distill::Divergence parse_divergence(const std::string& s) {
  if (s == "symmetric") return distill::Divergence::kSymmetric;
  if (s == "kl_forward") return distill::Divergence::kForward;
  throw ConfigError("unknown divergence '" + s + "' (expected symmetric or kl_forward)");
}

inline RunConfig config_from_yaml(const YAML::Node& root) {
  using detail::read;
  using detail::read_array;
  using detail::reject_unknown;
  RunConfig c;
  if (!root || root.IsNull()) return c;
  reject_unknown(root, "", {"data_gen", "dataset", "model", "loss", "check", "distill", "optim", "eval", "rounds", "seed",
                            "output"});
  const YAML::Node g = root["data_gen"];
  reject_unknown(g, "data_gen", {"train_scenes", "val_scenes", "lighting_perturbation", "gain_spread", "bias_spread", "seed"});
  read(g, "train_scenes", c.data_gen.train_scenes, "data_gen");
  read(g, "val_scenes", c.data_gen.val_scenes, "data_gen");
  read(g, "lighting_perturbation", c.data_gen.lighting_perturbation, "data_gen");
  read(g, "gain_spread", c.data_gen.gain_spread, "data_gen");
  read(g, "bias_spread", c.data_gen.bias_spread, "data_gen");
  read(g, "seed", c.data_gen.seed, "data_gen");

  const YAML::Node d = root["dataset"];
  reject_unknown(d, "dataset", {"train_roots", "val_roots", "views", "height", "width"});
  read(d, "train_roots", c.dataset.train_roots, "dataset");
  read(d, "val_roots", c.dataset.val_roots, "dataset");
  read(d, "views", c.dataset.views, "dataset");
  read(d, "height", c.dataset.height, "dataset");
  read(d, "width", c.dataset.width, "dataset");

  const YAML::Node m = root["model"];
  reject_unknown(m, "model", {"feature_channels", "regularizer_channels", "hypotheses", "interval_decay",
                              "initial_sharpness", "regularizer_init_scale"});
  read(m, "feature_channels", c.model.feature_channels, "model");
  read(m, "regularizer_channels", c.model.regularizer_channels, "model");
  read_array(m, "hypotheses", c.model.cascade.hypotheses, "model");
  read_array(m, "interval_decay", c.model.cascade.interval_decay, "model");
  read(m, "initial_sharpness", c.model.initial_sharpness, "model");
  read(m, "regularizer_init_scale", c.model.regularizer_init_scale, "model");

  const YAML::Node l = root["loss"];
  reject_unknown(l, "loss", {"lambda_fea", "lambda_photo", "stage_weights", "feature_norm"});
  read(l, "lambda_fea", c.loss.weights.featuremetric, "loss");
  read(l, "lambda_photo", c.loss.weights.photometric, "loss");
  read_array(l, "stage_weights", c.loss.stage_weights, "loss");
  std::string norm = "l1";
  read(l, "feature_norm", norm, "loss");
  if (norm != "l1" && norm != "l2") throw ConfigError("config: loss.feature_norm must be l1 or l2");
  c.loss.feature_l2 = norm == "l2";

  const YAML::Node k = root["check"];
  reject_unknown(k, "check", {"conf", "reproj", "geo"});
  read(k, "conf", c.check.confidence, "check");
  read(k, "reproj", c.check.reprojection, "check");
  read(k, "geo", c.check.geometric, "check");

  const YAML::Node s = root["distill"];
  reject_unknown(s, "distill", {"mode", "divergence", "variance_floor"});
  std::string mode = distill::to_string(c.distill.mode), div = to_string(c.distill.divergence);
  read(s, "mode", mode, "distill");
  read(s, "divergence", div, "distill");
  read(s, "variance_floor", c.distill.variance_floor, "distill");
  c.distill.mode = distill::parse_mode(mode);
  c.distill.divergence = parse_divergence(div);

  const YAML::Node o = root["optim"];
  reject_unknown(o, "optim", {"lr", "teacher_epochs", "student_epochs", "batch"});
  read(o, "lr", c.optim.lr, "optim");
  read(o, "teacher_epochs", c.optim.teacher_epochs, "optim");
  read(o, "student_epochs", c.optim.student_epochs, "optim");
  read(o, "batch", c.optim.batch, "optim");

  const YAML::Node e = root["eval"];
  reject_unknown(e, "eval", {"scale_units", "cloud_cap", "voxel"});
  read(e, "scale_units", c.eval.scale_units, "eval");
  read(e, "cloud_cap", c.eval.cloud_cap, "eval");
  read(e, "voxel", c.eval.voxel, "eval");

  try {
    if (root["rounds"]) c.rounds = root["rounds"].as<int>();
    if (root["seed"]) c.seed = root["seed"].as<std::uint64_t>();
    if (root["output"]) c.output = root["output"].as<std::string>();
  } catch (const YAML::Exception& ex) {
    throw ConfigError(std::string("config: bad top-level value: ") + ex.what());
  }
  c.validate();
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  try {
    return config_from_yaml(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  require(data_gen.gain_spread >= 0.0 && data_gen.gain_spread < 1.0 && data_gen.bias_spread >= 0.0,
          "data_gen lighting spreads out of range");
  require(data_gen.train_scenes >= 1 && data_gen.val_scenes >= 1, "data_gen needs at least one train and one val scene");
  require(!dataset.train_roots.empty(), "dataset.train_roots is empty");
  require(dataset.views >= 2, "dataset.views must be >= 2");
  require(dataset.height > 0 && dataset.width > 0 && dataset.height % 4 == 0 && dataset.width % 4 == 0,
          "dataset height/width must be positive multiples of 4");
  require(model.feature_channels > 0 && model.regularizer_channels > 0, "model channel counts must be positive");
  for (int h : model.cascade.hypotheses) require(h >= 2, "model.hypotheses entries must be >= 2");
  for (double d : model.cascade.interval_decay) require(d > 0.0, "model.interval_decay entries must be positive");
  require(model.initial_sharpness > 0.0, "model.initial_sharpness must be positive");
  require(loss.weights.featuremetric >= 0.0 && loss.weights.photometric >= 0.0, "loss weights must be nonnegative");
  for (double w : loss.stage_weights) require(w >= 0.0, "loss.stage_weights must be nonnegative");
  check.validate();
  require(distill.variance_floor >= 0.0, "distill.variance_floor must be >= 0");
  require(optim.lr > 0.0, "optim.lr must be positive");
  require(optim.teacher_epochs >= 0 && optim.student_epochs >= 0, "optim epochs must be >= 0");
  require(optim.batch >= 1, "optim.batch must be >= 1");
  require(eval.scale_units > 0.0 && eval.cloud_cap > 0.0 && eval.voxel >= 0.0, "eval settings must be positive");
  require(rounds >= 0, "rounds must be >= 0");
}

inline YAML::Node config_to_yaml(const RunConfig& c) {
  YAML::Node n;
  n["data_gen"]["train_scenes"] = c.data_gen.train_scenes;
  n["data_gen"]["val_scenes"] = c.data_gen.val_scenes;
  n["data_gen"]["lighting_perturbation"] = c.data_gen.lighting_perturbation;
  n["data_gen"]["gain_spread"] = c.data_gen.gain_spread;
  n["data_gen"]["bias_spread"] = c.data_gen.bias_spread;
  n["data_gen"]["seed"] = c.data_gen.seed;
  n["dataset"]["train_roots"] = c.dataset.train_roots;
  n["dataset"]["val_roots"] = c.dataset.val_roots;
  n["dataset"]["views"] = c.dataset.views;
  n["dataset"]["height"] = c.dataset.height;
  n["dataset"]["width"] = c.dataset.width;
  n["model"]["feature_channels"] = c.model.feature_channels;
  n["model"]["regularizer_channels"] = c.model.regularizer_channels;
  n["model"]["hypotheses"] = std::vector<int>(c.model.cascade.hypotheses.begin(), c.model.cascade.hypotheses.end());
  n["model"]["interval_decay"] =
      std::vector<double>(c.model.cascade.interval_decay.begin(), c.model.cascade.interval_decay.end());
  n["model"]["initial_sharpness"] = c.model.initial_sharpness;
  n["model"]["regularizer_init_scale"] = c.model.regularizer_init_scale;
  n["loss"]["lambda_fea"] = c.loss.weights.featuremetric;
  n["loss"]["lambda_photo"] = c.loss.weights.photometric;
  n["loss"]["stage_weights"] = std::vector<double>(c.loss.stage_weights.begin(), c.loss.stage_weights.end());
  n["loss"]["feature_norm"] = c.loss.feature_l2 ? "l2" : "l1";
  n["check"]["conf"] = c.check.confidence;
  n["check"]["reproj"] = c.check.reprojection;
  n["check"]["geo"] = c.check.geometric;
  n["distill"]["mode"] = distill::to_string(c.distill.mode);
  n["distill"]["divergence"] = to_string(c.distill.divergence);
  n["distill"]["variance_floor"] = c.distill.variance_floor;
  n["optim"]["lr"] = c.optim.lr;
  n["optim"]["teacher_epochs"] = c.optim.teacher_epochs;
  n["optim"]["student_epochs"] = c.optim.student_epochs;
  n["optim"]["batch"] = c.optim.batch;
  n["eval"]["scale_units"] = c.eval.scale_units;
  n["eval"]["cloud_cap"] = c.eval.cloud_cap;
  n["eval"]["voxel"] = c.eval.voxel;
  n["rounds"] = c.rounds;
  n["seed"] = c.seed;
  n["output"] = c.output;
  return n;
}

inline std::string config_to_string(const RunConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << config_to_yaml(c);
  return std::string(out.c_str()) + "\n";
}

// FNV-1a over the canonical serialization. The output directory is left
// out, so the same experiment hashes identically wherever it is written.
inline std::uint64_t config_hash(const RunConfig& c) {
  RunConfig k = c;
  k.output.clear();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : config_to_string(k)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace kdmvs::pipeline
