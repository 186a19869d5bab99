#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "gbg/datagen.hpp"
#include "gbg/trainer.hpp"

namespace gbg {

enum class Baseline { none, ce, resample, reweight };

/// Everything a run needs, read from a JSON document with the sections
/// dataset / model / train / grouping / sampler / report. Unknown keys and
/// ill-typed values are rejected with ConfigError.
struct ExperimentConfig {
  DatasetSpec dataset;
  /// Optional CSV inputs; when train_csv is set the synthetic settings are ignored.
  std::string train_csv;
  std::string test_csv;
  TrainConfig train;
  Baseline baseline = Baseline::none;
  std::string output_dir;

  /// Throws ConfigError describing the first invalid field.
  void validate() const;
  /// The TrainConfig actually run: baseline presets applied, model shape
  /// taken from the dataset section.
  TrainConfig effective_train_config() const;
};

ExperimentConfig parse_experiment_config(std::string_view json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Complete, canonical JSON for `cfg` (every field written).
std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// FNV-1a 64-bit over the raw bytes, as 16 hex digits.
std::string config_hash(std::string_view bytes);

void apply_baseline(TrainConfig& cfg, Baseline baseline);
Baseline parse_baseline(std::string_view name);
std::string_view to_string(Baseline b);

std::string_view to_string(GroupingStrategy s);
GroupingStrategy parse_grouping_strategy(std::string_view name);
std::string_view to_string(SamplerMode m);
SamplerMode parse_sampler_mode(std::string_view name);

/// Synthetic data from the dataset settings, or the configured CSV files.
Dataset materialize_dataset(const ExperimentConfig& cfg);

/// $GBG_OUTPUT_ROOT if set and nonempty, otherwise "runs".
std::filesystem::path default_output_root();

enum class RunStatus { ok, diverged };

struct BundleInfo {
  RunStatus status = RunStatus::ok;
  std::string message;
  /// Hash of the config file as given on the command line, if any.
  std::optional<std::string> input_config_hash;
  /// Omit the wall-clock timestamp (for byte-comparable summaries).
  bool timestamp = true;
};

/// Writes metrics.csv, eval.csv, partition.json, similarity.csv (when
/// available), config.json and summary.json into `dir`. The summary's
/// config_hash is the hash of the config.json bytes.
void write_bundle(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                  const TrainResult& result, const BundleInfo& info = {});

void write_metrics_csv(const std::vector<TrainRecord>& records, std::size_t num_groups,
                       const std::filesystem::path& path);
void write_eval_csv(const std::vector<EvalMetrics>& evals, const std::filesystem::path& path);
void write_diagnosis_csv(const std::vector<DiagnosisRow>& rows, const std::filesystem::path& path);

}  // namespace gbg
