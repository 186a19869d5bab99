#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gbg/datagen.hpp"
#include "gbg/grouping.hpp"
#include "gbg/rng.hpp"

namespace gbg {

struct GacConfig {
  double mu = 0.9999;
  double lambda = 1e-7;
  /// Completion draws per missing group, as a fraction of the batch size.
  double fill_fraction = 0.1;
  bool enabled = true;

  void validate() const;
};

/// Group-level class probabilities for completion draws:
/// beta_j = mu - lambda * N_j / N_min, p_j = (1 - beta_j) / (1 - beta_j^N_j),
/// normalized over the group. Throws ConfigError when some beta_j leaves (0, 1).
std::vector<double> gac_probabilities(std::span<const std::size_t> counts_in_group,
                                      const GacConfig& cfg, bool normalize = true);

enum class SamplerMode { uniform, class_balanced, gac };

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<bool> group_presence;
  /// Completion samples added per group (GAC only).
  std::vector<std::size_t> completions;
  std::size_t replaced = 0;
};

/// Mini-batch stream over the training split. Owns its RNG; single consumer.
///
/// Uniform mode reads consecutive slices of an endless sequence of
/// per-epoch permutations, so every batch is full and every N consecutive
/// draws cover each training row once. GAC starts from the uniform batch
/// and, for each absent group, draws ceil(fill_fraction * batch_size)
/// samples (class by gac_probabilities, then a uniform instance), replacing
/// randomly chosen rows of the most-represented groups.
class Sampler {
 public:
  Sampler(const Dataset& data, Partition partition, std::size_t batch_size, SamplerMode mode,
          GacConfig gac, std::uint64_t seed);

  Batch next_batch();

  /// One completion draw from `group`: a dataset row index.
  std::size_t draw_completion(std::size_t group);

  std::size_t batch_size() const noexcept { return batch_size_; }
  std::size_t batches_per_epoch() const noexcept;
  const std::vector<double>& group_class_probabilities(std::size_t group) const {
    return group_probs_.at(group);
  }
  const Partition& partition() const noexcept { return partition_; }

 private:
  std::size_t next_uniform();
  std::size_t completion_count(std::size_t missing) const;

  const Dataset& data_;
  Partition partition_;
  std::size_t batch_size_;
  SamplerMode mode_;
  GacConfig gac_;
  Rng rng_;

  std::vector<std::size_t> train_rows_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;

  std::vector<std::vector<std::size_t>> members_;      // per class
  std::vector<std::size_t> nonempty_classes_;
  std::vector<std::vector<std::size_t>> group_classes_;  // per group
  std::vector<std::vector<double>> group_probs_;          // per group, aligned with group_classes_
};

}  // namespace gbg
