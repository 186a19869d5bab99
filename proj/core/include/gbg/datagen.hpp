#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "gbg/numkit.hpp"

namespace gbg {

enum class Split : std::uint8_t { train, test };

struct DatasetSpec {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 16;
  std::size_t n_max = 500;
  double imbalance_factor = 100.0;
  double class_separation = 3.0;
  double noise_sigma = 1.0;
  std::size_t test_per_class = 200;
  std::uint64_t seed = 0;

  /// round(n_max / imbalance_factor)
  std::size_t n_min() const;
  /// Throws ValidationError naming the first violated constraint.
  void validate() const;
};

/// Per-class training-set sizes N_k = round(n_max * beta^(-k/(K-1))).
std::vector<std::size_t> longtailed_counts(const DatasetSpec& spec);

/// Labeled feature rows, each tagged train or test. `class_counts` counts
/// training rows only.
struct Dataset {
  std::size_t num_classes = 0;
  DenseMatrix features;
  std::vector<int> labels;
  std::vector<Split> split;
  std::vector<std::size_t> class_counts;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }
  std::vector<std::size_t> indices(Split which) const;
  /// Training row indices of each class, in row order.
  std::vector<std::vector<std::size_t>> class_members() const;
  /// Test-split counts per class.
  std::vector<std::size_t> test_counts() const;

  /// Checks counts against labels and label range. Throws ValidationError.
  void validate() const;
};

Dataset generate_longtailed(const DatasetSpec& spec);

/// Reads `label,d=<int>` headed CSV; every row becomes a record of `split`.
/// `num_classes == 0` infers K as max label + 1.
Dataset load_csv(const std::filesystem::path& path, Split split = Split::train,
                 std::size_t num_classes = 0);

/// Writes the rows of `which` split in the format read by load_csv.
void write_csv(const Dataset& data, Split which, const std::filesystem::path& path);

/// Combines a training file and a test file into one dataset.
Dataset merge_splits(const Dataset& train, const Dataset& test);

}  // namespace gbg
