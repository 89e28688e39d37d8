#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "omlab/detector.hpp"
#include "omlab/evalkit.hpp"
#include "omlab/synthgen.hpp"
#include "omlab/training.hpp"

namespace omlab {

struct DataConfig {
  std::uint64_t seed = 2024;
  std::size_t train_scenes = 800;
  std::size_t test_scenes = 200;  // drawn right after the training scenes
};

/// Everything one experiment needs; written next to every output.
struct ExperimentConfig {
  DataConfig data;
  GenConfig gen;
  DetectorConfig detector;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string output_dir = "runs/default";

  void validate() const;
  /// Fully resolved config (defaults filled in), keys sorted.
  nlohmann::json to_json() const;
  /// Rejects unknown keys at every level.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  /// sha256 of the canonical dump of to_json() without output_dir.
  std::string hash() const;
};

/// Writes config.json and config.sha256 into dir (created if missing).
void write_resolved_config(const ExperimentConfig& config, const std::string& dir);

Dataset make_train_split(const ExperimentConfig& config);
Dataset make_test_split(const ExperimentConfig& config);

struct RunSummary {
  HeadKind head = HeadKind::kOm;
  std::uint64_t seed = 0;
  double map = 0.0;
  double inter_cos = 0.0;  // NaN when undefined
  double family_confusion = 0.0;
  std::vector<EpochLog> log;
  EvalReport report;
};

/// Metadata recorded in metrics.json.
nlohmann::json run_metadata(const ExperimentConfig& config, const DetectorConfig& detector,
                            const Dataset& test);

/// Trains one model (config.detector with head/seed overridden) and evaluates
/// it. When out_dir is non-empty writes model.bin, train_log.jsonl,
/// metrics.json, confusion.csv and the resolved config there.
RunSummary run_single(const ExperimentConfig& config, HeadKind head, std::uint64_t seed, const Dataset& train_set,
                      const Dataset& test_set, const std::string& out_dir,
                      const std::function<void(const EpochLog&)>& on_epoch = {});

/// Evaluates a trained model and writes metrics.json + confusion.csv into out_dir.
EvalReport run_eval(const ExperimentConfig& config, const Detector& model, const Dataset& test_set,
                    const std::string& out_dir);

struct StudyRecord {
  std::uint64_t seed = 0;
  double map_om = 0.0, map_linear = 0.0;
  double inter_cos_om = 0.0, inter_cos_linear = 0.0;
  double family_confusion_om = 0.0, family_confusion_linear = 0.0;

  nlohmann::json to_json() const;
};

struct StudySummary {
  std::vector<StudyRecord> records;
  nlohmann::json to_json() const;
};

/// om vs linear per seed on shared train/test sets; writes per-run
/// directories and summary.json under out_dir when it is non-empty.
StudySummary ab_study(const ExperimentConfig& config, std::span<const std::uint64_t> seeds, const Dataset& train_set,
                      const Dataset& test_set, const std::string& out_dir,
                      const std::function<void(const std::string&)>& progress = {});

}  // namespace omlab
