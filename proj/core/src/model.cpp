#include "gbg/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "gbg/error.hpp"
#include "gbg/rng.hpp"
#include "json.hpp"

namespace gbg {

void ModelConfig::validate() const {
  if (feature_dim == 0 || num_classes == 0) throw ValidationError("model: dimensions must be positive");
  if (kind == ModelKind::one_hidden_layer && hidden_dim == 0)
    throw ValidationError("model: hidden_dim must be positive");
  if (init_scale < 0.0 || !std::isfinite(init_scale))
    throw ValidationError("model: init_scale must be positive (or 0 for 1/sqrt(fan_in))");
}

const ParamBlock& ParamVector::block(std::string_view name) const {
  for (const auto& b : layout)
    if (b.name == name) return b;
  throw ValidationError("no parameter block named " + std::string(name));
}

std::vector<ParamBlock> param_layout(const ModelConfig& config) {
  std::vector<ParamBlock> layout;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    layout.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
  };
  const std::size_t k = config.num_classes;
  const std::size_t d = config.feature_dim;
  if (config.kind == ModelKind::linear_softmax) {
    add("W", k, d);
    add("b", k, 1);
  } else {
    const std::size_t h = config.hidden_dim;
    add("W1", h, d);
    add("b1", h, 1);
    add("W2", k, h);
    add("b2", k, 1);
  }
  return layout;
}

ParamVector zero_params(const ModelConfig& config) {
  config.validate();
  ParamVector p;
  p.layout = param_layout(config);
  const auto& last = p.layout.back();
  p.values.assign(last.offset + last.size(), 0.0);
  return p;
}

ParamVector init_params(const ModelConfig& config) {
  ParamVector p = zero_params(config);
  Rng rng(config.seed);
  for (const auto& b : p.layout) {
    if (b.cols == 1 && b.name.front() == 'b') continue;
    const double s = config.init_scale > 0.0 ? config.init_scale
                                             : 1.0 / std::sqrt(static_cast<double>(b.cols));
    for (std::size_t i = 0; i < b.size(); ++i) p.values[b.offset + i] = rng.uniform(-s, s);
  }
  return p;
}

ParamRange scope_range(const ModelConfig& config, GradientScope scope) {
  const auto layout = param_layout(config);
  const std::size_t total = layout.back().offset + layout.back().size();
  if (scope == GradientScope::all_parameters || config.kind == ModelKind::linear_softmax)
    return {0, total};
  return {layout[2].offset, total};
}

BatchRef make_batch(const Dataset& data, std::span<const std::size_t> rows) {
  return BatchRef{data.features, data.labels, rows};
}

namespace {

void check_params(const ParamVector& params, const ModelConfig& config) {
  const auto layout = param_layout(config);
  const std::size_t total = layout.back().offset + layout.back().size();
  if (params.values.size() != total)
    throw DimensionError("params: length " + std::to_string(params.values.size()) +
                         " does not match model size " + std::to_string(total));
}

void check_features(const DenseMatrix& features, const ModelConfig& config) {
  if (features.cols() != config.feature_dim)
    throw ValidationError("features: dimension " + std::to_string(features.cols()) +
                          " does not match model feature_dim " +
                          std::to_string(config.feature_dim));
}

double activate(Activation a, double v) { return a == Activation::relu ? std::max(v, 0.0) : std::tanh(v); }

double activate_grad(Activation a, double pre, double post) {
  return a == Activation::relu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0 - post * post;
}

// y = W x + b for a row-major W of shape (out, in).
void affine(std::span<const double> w, std::span<const double> b, std::span<const double> x,
            std::span<double> y) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < y.size(); ++o) {
    double s = b[o];
    const double* row = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
    y[o] = s;
  }
}

// Forward and backward for one sample. Scratch buffers live across calls.
class SampleEvaluator {
 public:
  SampleEvaluator(const ParamVector& params, const ModelConfig& config)
      : params_(params), config_(config), logits_(config.num_classes), probs_(config.num_classes) {
    if (config.kind == ModelKind::one_hidden_layer) {
      pre_.resize(config.hidden_dim);
      hidden_.resize(config.hidden_dim);
      dhidden_.resize(config.hidden_dim);
    }
  }

  std::span<const double> logits(std::span<const double> x) {
    const auto& v = params_.values;
    const std::size_t k = config_.num_classes;
    const std::size_t d = config_.feature_dim;
    if (config_.kind == ModelKind::linear_softmax) {
      affine({v.data(), k * d}, {v.data() + k * d, k}, x, logits_);
    } else {
      const std::size_t h = config_.hidden_dim;
      const double* w1 = v.data();
      const double* b1 = w1 + h * d;
      const double* w2 = b1 + h;
      const double* b2 = w2 + k * h;
      affine({w1, h * d}, {b1, h}, x, pre_);
      for (std::size_t i = 0; i < h; ++i) hidden_[i] = activate(config_.activation, pre_[i]);
      affine({w2, k * h}, {b2, k}, hidden_, logits_);
    }
    return logits_;
  }

  // Adds weight * d(loss)/d(theta) into grad and returns the sample loss.
  double backward(std::span<const double> x, int label, double weight, std::span<double> grad) {
    logits(x);
    const std::size_t k = config_.num_classes;
    const std::size_t d = config_.feature_dim;
    const auto y = static_cast<std::size_t>(label);

    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits_[j] > logits_[arg]) arg = j;
    const double m = logits_[arg];
    double rest = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      probs_[j] = std::exp(logits_[j] - m);
      if (j != arg) rest += probs_[j];
    }
    const double total = 1.0 + rest;
    for (double& p : probs_) p /= total;
    const double loss = (m - logits_[y]) + std::log1p(rest);

    probs_[y] -= 1.0;  // dloss/dlogits
    const auto& v = params_.values;
    if (config_.kind == ModelKind::linear_softmax) {
      for (std::size_t o = 0; o < k; ++o) {
        const double g = weight * probs_[o];
        double* row = grad.data() + o * d;
        for (std::size_t i = 0; i < d; ++i) row[i] += g * x[i];
        grad[k * d + o] += g;
      }
    } else {
      const std::size_t h = config_.hidden_dim;
      const std::size_t off_b1 = h * d;
      const std::size_t off_w2 = off_b1 + h;
      const std::size_t off_b2 = off_w2 + k * h;
      std::fill(dhidden_.begin(), dhidden_.end(), 0.0);
      for (std::size_t o = 0; o < k; ++o) {
        const double g = probs_[o];
        const double* w2row = v.data() + off_w2 + o * h;
        double* grow = grad.data() + off_w2 + o * h;
        for (std::size_t i = 0; i < h; ++i) {
          grow[i] += weight * g * hidden_[i];
          dhidden_[i] += g * w2row[i];
        }
        grad[off_b2 + o] += weight * g;
      }
      for (std::size_t i = 0; i < h; ++i) {
        const double dpre = weight * dhidden_[i] * activate_grad(config_.activation, pre_[i], hidden_[i]);
        if (dpre == 0.0) continue;
        double* grow = grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) grow[j] += dpre * x[j];
        grad[off_b1 + i] += dpre;
      }
    }
    return loss;
  }

 private:
  const ParamVector& params_;
  const ModelConfig& config_;
  Vector logits_;
  Vector probs_;
  Vector pre_;
  Vector hidden_;
  Vector dhidden_;
};

void check_batch(const ParamVector& params, const ModelConfig& config, const BatchRef& batch) {
  check_params(params, config);
  check_features(batch.features, config);
  for (std::size_t r : batch.rows) {
    if (r >= batch.features.rows()) throw ValidationError("batch: row index out of range");
    const int y = batch.labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= config.num_classes)
      throw ValidationError("batch: label out of range");
  }
}

}  // namespace

DenseMatrix forward(const ParamVector& params, const ModelConfig& config,
                    const DenseMatrix& features) {
  check_params(params, config);
  check_features(features, config);
  SampleEvaluator eval(params, config);
  DenseMatrix out(features.rows(), config.num_classes);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    const auto z = eval.logits(features.row(r));
    std::copy(z.begin(), z.end(), out.row(r).begin());
  }
  return out;
}

double ce_loss(const DenseMatrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) throw DimensionError("ce_loss: label count differs from rows");
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto z = logits.row(r);
    const auto y = static_cast<std::size_t>(labels[r]);
    if (labels[r] < 0 || y >= z.size()) throw ValidationError("ce_loss: label out of range");
    const auto arg = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    const double m = z[arg];
    double rest = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j)
      if (j != arg) rest += std::exp(z[j] - m);
    total += (m - z[y]) + std::log1p(rest);
  }
  return total / static_cast<double>(logits.rows());
}

ClassSums make_class_sums(const ParamVector& params, const ModelConfig& config) {
  ClassSums sums;
  sums.grad_sums.assign(config.num_classes, Vector(params.values.size(), 0.0));
  sums.loss_sums.assign(config.num_classes, 0.0);
  sums.counts.assign(config.num_classes, 0);
  return sums;
}

void accumulate_class_sums(const ParamVector& params, const ModelConfig& config,
                           const BatchRef& batch, ClassSums& sums) {
  check_batch(params, config, batch);
  SampleEvaluator eval(params, config);
  for (std::size_t r : batch.rows) {
    const auto y = static_cast<std::size_t>(batch.labels[r]);
    sums.loss_sums[y] += eval.backward(batch.features.row(r), batch.labels[r], 1.0, sums.grad_sums[y]);
    ++sums.counts[y];
  }
}

std::vector<ClassGradient> per_class_gradients(const ParamVector& params,
                                               const ModelConfig& config, const BatchRef& batch) {
  ClassSums sums = make_class_sums(params, config);
  accumulate_class_sums(params, config, batch, sums);
  std::vector<ClassGradient> out;
  for (std::size_t k = 0; k < config.num_classes; ++k) {
    if (sums.counts[k] == 0) continue;
    const double inv = 1.0 / static_cast<double>(sums.counts[k]);
    ClassGradient cg;
    cg.class_id = k;
    cg.grad = std::move(sums.grad_sums[k]);
    scale(cg.grad, inv);
    cg.sample_count = sums.counts[k];
    cg.loss = sums.loss_sums[k] * inv;
    out.push_back(std::move(cg));
  }
  return out;
}

Vector weighted_batch_gradient(const ParamVector& params, const ModelConfig& config,
                               const BatchRef& batch, std::span<const double> class_weights,
                               double* loss_out) {
  check_batch(params, config, batch);
  if (!class_weights.empty() && class_weights.size() != config.num_classes)
    throw DimensionError("class_weights: expected one weight per class");
  Vector grad(params.values.size(), 0.0);
  if (batch.rows.empty()) {
    if (loss_out) *loss_out = 0.0;
    return grad;
  }
  SampleEvaluator eval(params, config);
  double loss = 0.0;
  for (std::size_t r : batch.rows) {
    const int y = batch.labels[r];
    const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
    loss += w * eval.backward(batch.features.row(r), y, w, grad);
  }
  const double inv = 1.0 / static_cast<double>(batch.rows.size());
  scale(grad, inv);
  if (loss_out) *loss_out = loss * inv;
  return grad;
}

Vector batch_gradient(const ParamVector& params, const ModelConfig& config, const BatchRef& batch) {
  return weighted_batch_gradient(params, config, batch, {});
}

double batch_loss(const ParamVector& params, const ModelConfig& config, const BatchRef& batch) {
  check_batch(params, config, batch);
  if (batch.rows.empty()) return 0.0;
  SampleEvaluator eval(params, config);
  DenseMatrix z(batch.rows.size(), config.num_classes);
  std::vector<int> labels;
  labels.reserve(batch.rows.size());
  for (std::size_t i = 0; i < batch.rows.size(); ++i) {
    const auto l = eval.logits(batch.features.row(batch.rows[i]));
    std::copy(l.begin(), l.end(), z.row(i).begin());
    labels.push_back(batch.labels[batch.rows[i]]);
  }
  return ce_loss(z, labels);
}

std::vector<double> per_class_losses(const ParamVector& params, const ModelConfig& config,
                                     const BatchRef& batch) {
  check_batch(params, config, batch);
  SampleEvaluator eval(params, config);
  std::vector<double> sums(config.num_classes, 0.0);
  std::vector<std::size_t> counts(config.num_classes, 0);
  DenseMatrix one(1, config.num_classes);
  for (std::size_t r : batch.rows) {
    const auto l = eval.logits(batch.features.row(r));
    std::copy(l.begin(), l.end(), one.row(0).begin());
    const int y = batch.labels[r];
    sums[static_cast<std::size_t>(y)] += ce_loss(one, std::span<const int>(&y, 1));
    ++counts[static_cast<std::size_t>(y)];
  }
  std::vector<double> out(config.num_classes, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < config.num_classes; ++k)
    if (counts[k] > 0) out[k] = sums[k] / static_cast<double>(counts[k]);
  return out;
}

std::vector<int> predict(const ParamVector& params, const ModelConfig& config,
                         const DenseMatrix& features) {
  const DenseMatrix z = forward(params, config, features);
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto row = z.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

const char* kind_name(ModelKind k) {
  return k == ModelKind::linear_softmax ? "linear-softmax" : "one-hidden-layer";
}

}  // namespace

void save_checkpoint(const ParamVector& params, const ModelConfig& config,
                     const std::filesystem::path& path) {
  check_params(params, config);
  nlohmann::json header;
  header["format"] = "gbg-params";
  header["version"] = 1;
  header["kind"] = kind_name(config.kind);
  header["count"] = params.values.size();
  for (const auto& b : params.layout)
    header["layout"].push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}, {"offset", b.offset}});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
  out.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(params.values.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

ParamVector load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (header.value("format", "") != "gbg-params")
    throw ParseError(path.string() + ": not a gbg checkpoint");
  if (header.value("kind", "") != kind_name(config.kind))
    throw SchemaError(path.string() + ": checkpoint model kind differs from config");

  ParamVector p = zero_params(config);
  const auto count = header.value("count", std::size_t{0});
  if (count != p.values.size() || header["layout"].size() != p.layout.size())
    throw SchemaError(path.string() + ": checkpoint layout differs from config");
  for (std::size_t i = 0; i < p.layout.size(); ++i) {
    const auto& b = header["layout"][i];
    if (b.at("rows").get<std::size_t>() != p.layout[i].rows ||
        b.at("cols").get<std::size_t>() != p.layout[i].cols)
      throw SchemaError(path.string() + ": block " + p.layout[i].name + " has a different shape");
  }
  in.read(reinterpret_cast<char*>(p.values.data()),
          static_cast<std::streamsize>(p.values.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(p.values.size() * sizeof(double)))
    throw ParseError(path.string() + ": truncated checkpoint");
  if (!all_finite(p.values)) throw ParseError(path.string() + ": non-finite parameter");
  return p;
}

}  // namespace gbg
