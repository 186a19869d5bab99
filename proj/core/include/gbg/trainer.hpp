#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "gbg/datagen.hpp"
#include "gbg/grouping.hpp"
#include "gbg/model.hpp"
#include "gbg/moo.hpp"
#include "gbg/sampler.hpp"

namespace gbg {

enum class GroupingStrategy { gbg, random, instance_count };

/// Scaling applied to group gradients before the min-norm solve: divide by
/// the gradient norm (`l2`) or by the group loss (`loss`). Any positive
/// rescaling keeps the min-norm point a descent direction for every group.
/// Not applied when only one group is present in the batch.
enum class MooNormalization { none, l2, loss };

/// Many / Medium / Few split by training-set class size.
struct SubsetThresholds {
  std::size_t many_above = 100;  // N > many_above
  std::size_t few_below = 20;    // N < few_below
};

struct TrainConfig {
  std::size_t epochs_stage1 = 12;
  std::size_t epochs_stage2 = 28;
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::size_t num_groups = 4;
  SamplerMode sampler_mode = SamplerMode::gac;
  GacConfig gac;
  ModelConfig model;
  GroupingStrategy grouping_strategy = GroupingStrategy::gbg;
  GradientScope grouping_scope = GradientScope::all_parameters;
  std::uint64_t seed = 0;
  /// Evaluate every this many epochs (0: only at the end).
  std::size_t eval_every = 0;
  bool moo_enabled = true;
  MooNormalization moo_normalization = MooNormalization::loss;
  bool grouping_enabled = true;
  /// Class-balanced loss weights for the plain cross-entropy update.
  bool reweight = false;
  double momentum = 0.0;
  double critical_tolerance = 1e-10;
  double divergence_threshold = 1e6;
  SubsetThresholds subsets;
  std::size_t tail_classes = 3;

  void validate() const;
  /// No grouping and no MOO: the stage-2 update is the plain batch gradient.
  bool plain_cross_entropy() const noexcept { return !moo_enabled && !grouping_enabled; }
};

struct TrainRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  int stage = 2;
  double batch_loss = 0.0;
  /// Loss of each group in the batch; meaningful where group_present is set.
  std::vector<double> per_group_losses;
  std::vector<bool> group_present;
  SimplexWeights alphas;
  double dstar_sq = 0.0;
  bool pareto_critical = false;
  bool iteration_cap = false;
  std::size_t completions = 0;
  /// Cosine of each class gradient with the update direction (NaN if the
  /// class is absent from the batch).
  std::vector<double> per_class_sim;
  /// Norm of each class's mean gradient in the batch (NaN if absent).
  std::vector<double> per_class_grad_norm;
};

struct EvalMetrics {
  std::size_t epoch = 0;
  std::vector<double> per_class_accuracy;
  double balanced_accuracy = 0.0;
  double many_accuracy = 0.0;    // NaN when no class falls in the subset
  double medium_accuracy = 0.0;
  double few_accuracy = 0.0;
  double tail_accuracy = 0.0;
};

/// Training stopped on a non-finite or exploding loss.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, ParamVector last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const ParamVector& last_good() const noexcept { return last_good_; }

 private:
  ParamVector last_good_;
};

struct StepResult {
  ParamVector params;
  TrainRecord record;
  Vector direction;
};

using RecordSink = std::function<void(const TrainRecord&)>;

/// Plain cross-entropy SGD with uniform batches for epochs_stage1 epochs.
ParamVector stage1_warmup(const TrainConfig& config, const Dataset& data,
                          const RecordSink& sink = {});

struct GroupingResult {
  Partition partition;
  std::optional<SimilarityMatrix> similarity;
};

GroupingResult run_grouping(const ParamVector& params, const TrainConfig& config, const Dataset& data);

/// Group losses on a batch: each group's loss is the mean over its present
/// classes of the class-mean loss. NaN for absent groups.
std::vector<double> group_losses(const ParamVector& params, const ModelConfig& model,
                                 const Partition& partition, const Dataset& data,
                                 std::span<const std::size_t> rows);

/// One stage-2 update on `rows`. Computes class-mean gradients, averages
/// them per group, combines the present groups by the min-norm solver (or a
/// plain average with MOO disabled), and steps against the combined
/// direction unless it is Pareto-critical.
StepResult moo_step(const ParamVector& params, const TrainConfig& config, const Partition& partition,
                    const Dataset& data, std::span<const std::size_t> rows);

EvalMetrics evaluate(const ParamVector& params, const TrainConfig& config, const Dataset& data,
                     std::size_t epoch = 0);

struct TrainResult {
  ParamVector params;
  std::vector<TrainRecord> records;
  Partition partition;
  std::optional<SimilarityMatrix> similarity;
  std::vector<EvalMetrics> evals;
  std::size_t critical_steps = 0;
};

/// Stage 1 warm-up, grouping, then epochs_stage2 epochs of moo_step.
TrainResult train(const TrainConfig& config, const Dataset& data);

/// Class weights (1 - b) / (1 - b^N_k) with b = 0.9999, scaled to sum to K.
std::vector<double> class_balanced_weights(std::span<const std::size_t> counts, double beta = 0.9999);

struct DiagnosisRow {
  std::size_t epoch = 0;
  std::size_t class_id = 0;
  std::size_t train_count = 0;
  std::size_t batches_present = 0;
  double mean_similarity = 0.0;
  /// Mean class-gradient norm over the epoch divided by the largest such mean.
  double normalized_grad_norm = 0.0;
};

/// Per-epoch, per-class mean cosine between class gradients and the update
/// direction. Without `with_gbg`, trains plain cross-entropy from
/// initialization with `mode` batches for the total epoch count; with it,
/// runs the full two-stage pipeline.
std::vector<DiagnosisRow> diagnose_gradient_imbalance(const TrainConfig& config, const Dataset& data,
                                                      SamplerMode mode, bool with_gbg = false);

/// Aggregates records into per-epoch, per-class rows.
std::vector<DiagnosisRow> summarize_similarity(const std::vector<TrainRecord>& records,
                                               const Dataset& data);

}  // namespace gbg
