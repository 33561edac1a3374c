// Command-line front end of the desk-scale pipeline.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "kdmvs/pipeline/gen_data.hpp"
#include "kdmvs/pipeline/run.hpp"

namespace {

using namespace kdmvs;
using namespace kdmvs::pipeline;

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kNumericError = 3, kEmptyPseudo = 4 };

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> rounds;
  std::string stage;
  bool verbose = false;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output = *o.out;
  if (o.rounds) cfg.rounds = *o.rounds;
  cfg.validate();
  return cfg;
}

void print_report(const RunConfig& cfg) {
  const fs::path combined = fs::path(cfg.output) / "metrics.csv";
  std::vector<eval::MetricRow> rows;
  if (fs::exists(combined)) {
    rows = read_metrics_csv(combined);
  } else {
    for (int r = 0;; ++r) {
      const fs::path p = model_dir(cfg, model_name(r)) / "metrics.csv";
      if (!fs::exists(p)) break;
      const auto more = read_metrics_csv(p);
      rows.insert(rows.end(), more.begin(), more.end());
    }
  }
  if (rows.empty()) throw IoError("no metrics found under " + cfg.output);
  std::vector<std::string> stages;
  std::map<std::string, std::vector<const eval::MetricRow*>> by_stage;
  for (const auto& r : rows) {
    if (!by_stage.count(r.stage)) stages.push_back(r.stage);
    by_stage[r.stage].push_back(&r);
  }
  for (const auto& s : stages) {
    std::printf("%s\n", s.c_str());
    for (const auto* r : by_stage[s]) std::printf("  %-28s %.6g\n", r->metric.c_str(), r->value);
  }
  const auto teacher = find_metric(rows, "teacher", "epe");
  if (!teacher) return;
  std::printf("\nvalidation EPE      model / teacher\n");
  for (int r = 0;; ++r) {
    const auto epe = find_metric(rows, model_name(r), "epe");
    if (!epe) break;
    std::printf("  %-12s %8.4f  %6.3f\n", model_name(r).c_str(), *epe, *epe / *teacher);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale self-supervised multi-view stereo with pseudo-label distillation"};
  app.require_subcommand(1);
  Options opt;
  auto common = [&opt](CLI::App* sub, bool needs_stage) {
    sub->add_option("--config", opt.config, "YAML configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Run seed (overrides the config)");
    sub->add_option("--out", opt.out, "Output directory (overrides the config)");
    sub->add_option("--rounds", opt.rounds, "Distillation rounds (overrides the config)")->check(CLI::NonNegativeNumber);
    auto* stage = sub->add_option("--stage", opt.stage, "Model to operate on: teacher or student_<round>");
    if (needs_stage) stage->required();
    sub->add_flag("-v,--verbose", opt.verbose, "Debug logging");
  };
  common(app.add_subcommand("gen-data", "Render the synthetic train and validation scenes"), false);
  common(app.add_subcommand("train-teacher", "Self-supervised teacher training"), false);
  common(app.add_subcommand("infer", "Depth and confidence of a model on the training views"), true);
  common(app.add_subcommand("check", "Cross-view check of inferred depths"), true);
  common(app.add_subcommand("encode", "Gaussian pseudo labels from checked depths"), true);
  common(app.add_subcommand("train-student", "Distill a student from the previous model's pseudo labels"), true);
  common(app.add_subcommand("run", "Teacher, then all distillation rounds, with evaluation"), false);
  common(app.add_subcommand("evaluate", "Validation metrics and fused cloud of a model"), true);
  common(app.add_subcommand("report", "Print the metrics of a run"), false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  spdlog::set_level(opt.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    const RunConfig cfg = resolve(opt);
    if (cmd == "gen-data") {
      generate_dataset(cfg);
    } else if (cmd == "train-teacher") {
      stage_train_teacher(cfg);
    } else if (cmd == "infer") {
      parse_model_name(opt.stage);
      stage_infer(cfg, opt.stage);
    } else if (cmd == "check") {
      parse_model_name(opt.stage);
      stage_check(cfg, opt.stage);
    } else if (cmd == "encode") {
      parse_model_name(opt.stage);
      stage_encode(cfg, opt.stage);
    } else if (cmd == "train-student") {
      const int round = parse_model_name(opt.stage);
      if (round == 0) throw ConfigError("train-student needs --stage student_<round>");
      stage_train_student(cfg, round);
    } else if (cmd == "run") {
      run_rounds(cfg);
      print_report(cfg);
    } else if (cmd == "evaluate") {
      parse_model_name(opt.stage);
      stage_evaluate(cfg, opt.stage);
    } else if (cmd == "report") {
      print_report(cfg);
    }
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kConfigError;
  } catch (const NumericError& e) {
    spdlog::error("{} (step {})", e.what(), e.step());
    return kNumericError;
  } catch (const EmptyPseudoLabelError& e) {
    spdlog::error("{}", e.what());
    return kEmptyPseudo;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kOk;
}
