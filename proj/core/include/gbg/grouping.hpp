#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gbg/datagen.hpp"
#include "gbg/model.hpp"
#include "gbg/numkit.hpp"

namespace gbg {

/// Pairwise cosine similarity of class gradients (K x K).
struct SimilarityMatrix {
  DenseMatrix values;
  std::size_t size() const noexcept { return values.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return values(i, j); }
};

/// Assignment of K classes to G nonempty, disjoint groups.
class Partition {
 public:
  Partition() = default;
  /// Throws ValidationError unless every id lies in [0, num_groups) and
  /// every group is nonempty.
  Partition(std::size_t num_groups, std::vector<std::size_t> assignment);

  static Partition single_group(std::size_t num_classes);
  static Partition singletons(std::size_t num_classes);

  std::size_t num_groups() const noexcept { return num_groups_; }
  std::size_t num_classes() const noexcept { return assignment_.size(); }
  std::size_t group_of(std::size_t cls) const { return assignment_.at(cls); }
  const std::vector<std::size_t>& assignment() const noexcept { return assignment_; }
  /// Class ids of each group, ascending.
  std::vector<std::vector<std::size_t>> groups() const;

  friend bool operator==(const Partition&, const Partition&) = default;

 private:
  std::size_t num_groups_ = 0;
  std::vector<std::size_t> assignment_;
};

/// Relabels groups in order of first appearance, so equal partitions compare equal.
Partition canonical(const Partition& p);

/// Gradient of each class's mean loss over all its training rows, summed in
/// chunks of `chunk_rows`. Throws ValidationError for a class with no rows.
std::vector<ClassGradient> class_mean_gradients(const ParamVector& params,
                                                const ModelConfig& config, const Dataset& data,
                                                GradientScope scope = GradientScope::all_parameters,
                                                std::size_t chunk_rows = 256);

SimilarityMatrix similarity_matrix(const std::vector<ClassGradient>& grads);
SimilarityMatrix similarity_matrix(const std::vector<Vector>& grads);

enum class CutWeights { raw, shifted };

/// sum over groups V' of a(V', V) - a(V', V'): the total affinity crossing
/// group boundaries. `shifted` evaluates on W = (A + 1) / 2.
double cut_objective(const SimilarityMatrix& a, const Partition& p,
                     CutWeights weights = CutWeights::shifted);

/// Normalized-cut spectral clustering of the shifted similarity graph.
Partition spectral_partition(const SimilarityMatrix& a, std::size_t num_groups, std::uint64_t seed);

/// Normalized Laplacian I - D^{-1/2} W D^{-1/2} of the shifted graph.
DenseMatrix normalized_laplacian(const SimilarityMatrix& a);

/// Number of partitions of n items into k nonempty blocks, saturating at
/// `cap + 1`.
std::uint64_t stirling2(std::size_t n, std::size_t k, std::uint64_t cap = UINT64_MAX - 1);

inline constexpr std::uint64_t kBruteForceLimit = 1'000'000;

/// Exact minimizer of the shifted cut objective by enumeration; ties go to
/// the lexicographically smallest assignment. Refuses (ValidationError) when
/// more than kBruteForceLimit partitions exist.
Partition brute_force_partition(const SimilarityMatrix& a, std::size_t num_groups);

enum class BaselineStrategy { random, instance_count };

Partition baseline_partition(const std::vector<std::size_t>& class_counts, std::size_t num_groups,
                             BaselineStrategy strategy, std::uint64_t seed);

/// FNV-1a over the little-endian bytes of the matrix entries, 16 hex digits.
std::string similarity_checksum(const SimilarityMatrix& a);

std::string partition_to_json(const Partition& p, const std::string& similarity_checksum);
Partition partition_from_json(const std::string& text);
void write_similarity_csv(const SimilarityMatrix& a, const std::filesystem::path& path);

}  // namespace gbg
