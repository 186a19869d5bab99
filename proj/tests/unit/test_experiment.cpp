#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gbg/error.hpp"
#include "gbg/experiment.hpp"

using namespace gbg;

TEST_CASE("config hash") {
  CHECK(config_hash("hello") == "a430d84680aabd0b");
  CHECK(config_hash("") == "cbf29ce484222325");
}

TEST_CASE("empty config takes defaults") {
  const ExperimentConfig c = parse_experiment_config("{}");
  CHECK(c.dataset.num_classes == 10);
  CHECK(c.train.num_groups == 4);
  CHECK(c.baseline == Baseline::none);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("canonical JSON round trip") {
  ExperimentConfig c = parse_experiment_config(R"({
    "dataset": {"classes": 6, "dim": 5, "n_max": 80, "imbalance_factor": 8},
    "model": {"kind": "hidden", "hidden_dim": 12, "activation": "tanh"},
    "train": {"epochs_stage1": 3, "learning_rate": 0.05, "moo_normalization": "l2"},
    "grouping": {"strategy": "instance-count", "groups": 3, "scope": "last_layer"},
    "sampler": {"mode": "class-balanced", "fill_fraction": 0.2}
  })");
  const std::string text = experiment_config_to_json(c);
  const ExperimentConfig back = parse_experiment_config(text);
  CHECK(experiment_config_to_json(back) == text);
  const TrainConfig t = back.effective_train_config();
  CHECK(t.model.num_classes == 6);
  CHECK(t.model.feature_dim == 5);
  CHECK(t.model.kind == ModelKind::one_hidden_layer);
  CHECK(t.grouping_strategy == GroupingStrategy::instance_count);
  CHECK(t.sampler_mode == SamplerMode::class_balanced);
  CHECK(t.moo_normalization == MooNormalization::l2);
  CHECK(t.grouping_scope == GradientScope::last_layer);
}

TEST_CASE("invalid configs are rejected") {
  CHECK_THROWS_AS(parse_experiment_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[]"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"extra": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"train": {"lr": 0.1}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"train": {"epochs_stage1": -1}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"sampler": {"mode": "fancy"}})"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"grouping": {"groups": 11}})").validate(), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"dataset": {"train_csv": "a.csv"}})").validate(), ConfigError);
}

TEST_CASE("baseline presets") {
  TrainConfig t;
  apply_baseline(t, Baseline::ce);
  CHECK(t.plain_cross_entropy());
  CHECK(t.sampler_mode == SamplerMode::uniform);
  CHECK_FALSE(t.reweight);
  apply_baseline(t, Baseline::resample);
  CHECK(t.sampler_mode == SamplerMode::class_balanced);
  TrainConfig w;
  apply_baseline(w, Baseline::reweight);
  CHECK(w.reweight);
  CHECK(w.sampler_mode == SamplerMode::uniform);
  CHECK(parse_baseline("resample") == Baseline::resample);
  CHECK(to_string(Baseline::reweight) == "reweight");
  CHECK_THROWS_AS(parse_baseline("focal"), ConfigError);
}

TEST_CASE("bundle files") {
  ExperimentConfig c = parse_experiment_config(R"({
    "dataset": {"classes": 4, "dim": 3, "n_max": 40, "imbalance_factor": 4, "test_per_class": 5},
    "train": {"epochs_stage1": 1, "epochs_stage2": 1, "batch_size": 8},
    "grouping": {"groups": 2}
  })");
  const Dataset d = materialize_dataset(c);
  const TrainResult r = train(c.effective_train_config(), d);
  const auto dir = std::filesystem::temp_directory_path() / "gbg_unit_bundle";
  std::filesystem::remove_all(dir);
  BundleInfo info;
  info.timestamp = false;
  write_bundle(dir, c, r, info);
  for (const char* f : {"config.json", "summary.json", "metrics.csv", "eval.csv", "partition.json", "similarity.csv", "model.ckpt"})
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
  std::ifstream cfg(dir / "config.json");
  std::stringstream bytes;
  bytes << cfg.rdbuf();
  std::ifstream sum(dir / "summary.json");
  std::stringstream summary;
  summary << sum.rdbuf();
  CHECK(summary.str().find(config_hash(bytes.str())) != std::string::npos);
  CHECK(summary.str().find("timestamp") == std::string::npos);
  std::filesystem::remove_all(dir);
}
