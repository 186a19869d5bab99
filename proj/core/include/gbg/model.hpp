#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gbg/datagen.hpp"
#include "gbg/numkit.hpp"

namespace gbg {

enum class ModelKind { linear_softmax, one_hidden_layer };
enum class Activation { relu, tanh };

/// Which parameters a class gradient is flattened over.
enum class GradientScope { all_parameters, last_layer };

struct ModelConfig {
  ModelKind kind = ModelKind::linear_softmax;
  std::size_t feature_dim = 16;
  std::size_t num_classes = 10;
  std::size_t hidden_dim = 32;
  Activation activation = Activation::relu;
  /// Weight init half-width; 0 selects 1/sqrt(fan_in) per layer.
  double init_scale = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ParamBlock {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

/// Flat parameter vector with the shapes of the blocks it holds.
struct ParamVector {
  Vector values;
  std::vector<ParamBlock> layout;

  std::size_t size() const noexcept { return values.size(); }
  const ParamBlock& block(std::string_view name) const;
};

std::vector<ParamBlock> param_layout(const ModelConfig& config);
/// Zero biases, weights uniform in [-s, s].
ParamVector init_params(const ModelConfig& config);
ParamVector zero_params(const ModelConfig& config);

/// Half-open offset range of the parameters a GradientScope covers.
struct ParamRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};
ParamRange scope_range(const ModelConfig& config, GradientScope scope);

/// Selected rows of a feature matrix together with their labels.
struct BatchRef {
  const DenseMatrix& features;
  std::span<const int> labels;         // indexed by row, like features
  std::span<const std::size_t> rows;   // rows taking part
};

BatchRef make_batch(const Dataset& data, std::span<const std::size_t> rows);

DenseMatrix forward(const ParamVector& params, const ModelConfig& config,
                    const DenseMatrix& features);

/// Mean of -log softmax(z)[y] over rows, max-subtracted log-sum-exp.
double ce_loss(const DenseMatrix& logits, std::span<const int> labels);

struct ClassGradient {
  std::size_t class_id = 0;
  Vector grad;
  std::size_t sample_count = 0;
  double loss = 0.0;
};

/// Per-class mean loss gradients for classes present in the batch, ascending
/// class id.
std::vector<ClassGradient> per_class_gradients(const ParamVector& params,
                                               const ModelConfig& config, const BatchRef& batch);

/// Gradient of the mean batch cross-entropy.
Vector batch_gradient(const ParamVector& params, const ModelConfig& config,
                      const BatchRef& batch);

/// Gradient of (1/N) sum_i w[y_i] * loss_i. Returns the weighted loss in `loss_out`.
Vector weighted_batch_gradient(const ParamVector& params, const ModelConfig& config,
                               const BatchRef& batch, std::span<const double> class_weights,
                               double* loss_out = nullptr);

double batch_loss(const ParamVector& params, const ModelConfig& config, const BatchRef& batch);

/// Per-class mean loss for classes present in the batch (size K, NaN if absent).
std::vector<double> per_class_losses(const ParamVector& params, const ModelConfig& config,
                                     const BatchRef& batch);

/// argmax of logits per row.
std::vector<int> predict(const ParamVector& params, const ModelConfig& config,
                         const DenseMatrix& features);

/// Sums of per-sample gradients and losses, grouped by class. The building
/// block for the class-mean and batch gradients.
struct ClassSums {
  std::vector<Vector> grad_sums;          // K vectors of the params' length
  std::vector<double> loss_sums;          // K
  std::vector<std::size_t> counts;        // K
};
void accumulate_class_sums(const ParamVector& params, const ModelConfig& config,
                           const BatchRef& batch, ClassSums& sums);
ClassSums make_class_sums(const ParamVector& params, const ModelConfig& config);

/// Checkpoint: a JSON header line describing the layout, then the raw
/// little-endian float64 values.
void save_checkpoint(const ParamVector& params, const ModelConfig& config,
                     const std::filesystem::path& path);
ParamVector load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace gbg
