#include "gbg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gbg/error.hpp"

namespace gbg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kStage1Sampler = 1, kGrouping = 2, kStage2Sampler = 3 };

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return dot(a, b) / (na * nb);
}

struct ClassMeans {
  std::vector<Vector> grads;       // K; empty vector when absent
  std::vector<double> losses;      // K; NaN when absent
  std::vector<std::size_t> counts; // K
};

ClassMeans class_means(const ClassSums& sums) {
  const std::size_t k = sums.counts.size();
  ClassMeans out;
  out.grads.resize(k);
  out.losses.assign(k, kNaN);
  out.counts = sums.counts;
  for (std::size_t c = 0; c < k; ++c) {
    if (sums.counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(sums.counts[c]);
    out.grads[c] = sums.grad_sums[c];
    scale(out.grads[c], inv);
    out.losses[c] = sums.loss_sums[c] * inv;
  }
  return out;
}

struct GroupObjectives {
  std::vector<Vector> grads;     // per group (empty when absent)
  std::vector<double> losses;    // per group (NaN when absent)
  std::vector<bool> present;
};

GroupObjectives group_objectives(const ClassMeans& means, const Partition& partition,
                                 bool with_grads) {
  const std::size_t g_count = partition.num_groups();
  GroupObjectives out;
  out.grads.resize(g_count);
  out.losses.assign(g_count, kNaN);
  out.present.assign(g_count, false);
  const auto groups = partition.groups();
  for (std::size_t g = 0; g < g_count; ++g) {
    std::size_t n = 0;
    double loss = 0.0;
    for (std::size_t c : groups[g]) {
      if (means.counts[c] == 0) continue;
      if (with_grads) {
        if (out.grads[g].empty()) out.grads[g].assign(means.grads[c].size(), 0.0);
        axpy(1.0, means.grads[c], out.grads[g]);
      }
      loss += means.losses[c];
      ++n;
    }
    if (n == 0) continue;
    out.present[g] = true;
    out.losses[g] = loss / static_cast<double>(n);
    if (with_grads) scale(out.grads[g], 1.0 / static_cast<double>(n));
  }
  return out;
}

void fill_class_diagnostics(const ClassMeans& means, std::span<const double> direction,
                            TrainRecord& rec) {
  const std::size_t k = means.counts.size();
  rec.per_class_sim.assign(k, kNaN);
  rec.per_class_grad_norm.assign(k, kNaN);
  for (std::size_t c = 0; c < k; ++c) {
    if (means.counts[c] == 0) continue;
    rec.per_class_sim[c] = cosine(means.grads[c], direction);
    rec.per_class_grad_norm[c] = norm(means.grads[c]);
  }
}

// Batch gradient (optionally class-weighted) assembled from class sums.
Vector plain_direction(const ClassSums& sums, std::span<const double> weights, double& loss) {
  const std::size_t dim = sums.grad_sums.front().size();
  Vector d(dim, 0.0);
  std::size_t n = 0;
  loss = 0.0;
  for (std::size_t c = 0; c < sums.counts.size(); ++c) {
    if (sums.counts[c] == 0) continue;
    const double w = weights.empty() ? 1.0 : weights[c];
    axpy(w, sums.grad_sums[c], d);
    loss += w * sums.loss_sums[c];
    n += sums.counts[c];
  }
  scale(d, 1.0 / static_cast<double>(n));
  loss /= static_cast<double>(n);
  return d;
}

void check_divergence(const TrainConfig& config, const TrainRecord& rec, const ParamVector& last_good) {
  auto bad = [&](double v) { return !std::isfinite(v) || v > config.divergence_threshold; };
  bool diverged = bad(rec.batch_loss);
  for (std::size_t g = 0; g < rec.per_group_losses.size(); ++g)
    if (rec.group_present[g] && bad(rec.per_group_losses[g])) diverged = true;
  if (diverged) {
    std::ostringstream msg;
    msg << "training diverged at iteration " << rec.iteration << " (epoch " << rec.epoch
        << "): loss " << rec.batch_loss;
    throw TrainingError(msg.str(), last_good);
  }
}

void apply_update(ParamVector& params, std::span<const double> direction, const TrainConfig& config,
                  Vector& velocity) {
  if (config.momentum > 0.0) {
    if (velocity.empty()) velocity.assign(direction.size(), 0.0);
    for (std::size_t i = 0; i < direction.size(); ++i)
      velocity[i] = config.momentum * velocity[i] + direction[i];
    axpy(-config.learning_rate, velocity, params.values);
  } else {
    axpy(-config.learning_rate, direction, params.values);
  }
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ValidationError("train: learning_rate must be positive");
  if (batch_size == 0) throw ValidationError("train: batch_size must be at least 1");
  if (num_groups == 0) throw ValidationError("train: num_groups must be at least 1");
  if (num_groups > model.num_classes)
    throw ValidationError("train: num_groups exceeds the number of classes");
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("train: momentum must lie in [0, 1)");
  if (!(critical_tolerance >= 0.0)) throw ValidationError("train: critical_tolerance must be >= 0");
  if (!(divergence_threshold > 0.0)) throw ValidationError("train: divergence_threshold must be > 0");
  if (subsets.few_below > subsets.many_above + 1)
    throw ValidationError("train: few threshold must not exceed the many threshold");
  gac.validate();
  if (sampler_mode == SamplerMode::gac && batch_size < (grouping_enabled ? num_groups : model.num_classes))
    throw ValidationError("train: GAC sampling needs batch_size >= number of groups");
}

std::vector<double> class_balanced_weights(std::span<const std::size_t> counts, double beta) {
  std::vector<double> w(counts.size(), 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) continue;
    w[k] = (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(counts[k])));
    total += w[k];
  }
  for (double& v : w) v *= static_cast<double>(counts.size()) / total;
  return w;
}

std::vector<double> group_losses(const ParamVector& params, const ModelConfig& model,
                                 const Partition& partition, const Dataset& data,
                                 std::span<const std::size_t> rows) {
  const std::vector<double> per_class = per_class_losses(params, model, make_batch(data, rows));
  std::vector<double> out(partition.num_groups(), kNaN);
  const auto groups = partition.groups();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t c : groups[g]) {
      if (std::isnan(per_class[c])) continue;
      s += per_class[c];
      ++n;
    }
    if (n > 0) out[g] = s / static_cast<double>(n);
  }
  return out;
}

StepResult moo_step(const ParamVector& params, const TrainConfig& config, const Partition& partition,
                    const Dataset& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ValidationError("moo_step: empty batch");
  if (partition.num_classes() != config.model.num_classes)
    throw ValidationError("moo_step: partition does not match the model's classes");

  ClassSums sums = make_class_sums(params, config.model);
  accumulate_class_sums(params, config.model, make_batch(data, rows), sums);
  const ClassMeans means = class_means(sums);

  StepResult out;
  TrainRecord& rec = out.record;
  rec.stage = 2;
  const bool plain = config.plain_cross_entropy();
  GroupObjectives objectives = group_objectives(means, partition, !plain);
  rec.per_group_losses = objectives.losses;
  rec.group_present = objectives.present;

  if (plain) {
    const std::vector<double> weights =
        config.reweight ? class_balanced_weights(data.class_counts) : std::vector<double>{};
    out.direction = plain_direction(sums, weights, rec.batch_loss);
  } else {
    std::vector<Vector> present_grads;
    std::vector<std::size_t> present_ids;
    for (std::size_t g = 0; g < partition.num_groups(); ++g) {
      if (!objectives.present[g]) continue;
      present_grads.push_back(std::move(objectives.grads[g]));
      present_ids.push_back(g);
    }
    rec.alphas.alphas.assign(partition.num_groups(), 0.0);
    if (config.moo_enabled) {
      const bool rescale = present_grads.size() > 1;
      for (std::size_t i = 0; rescale && i < present_grads.size(); ++i) {
        double scale_by = 1.0;
        if (config.moo_normalization == MooNormalization::l2) {
          scale_by = norm(present_grads[i]);
        } else if (config.moo_normalization == MooNormalization::loss) {
          scale_by = objectives.losses[present_ids[i]];
        }
        if (scale_by > 1e-12) scale(present_grads[i], 1.0 / scale_by);
      }
      MinNormOptions opts;
      opts.critical_tolerance = config.critical_tolerance;
      CombinedDirection combined = min_norm_point(present_grads, opts);
      for (std::size_t i = 0; i < present_ids.size(); ++i)
        rec.alphas.alphas[present_ids[i]] = combined.weights.alphas[i];
      rec.pareto_critical = combined.is_pareto_critical;
      rec.iteration_cap = combined.hit_iteration_cap;
      out.direction = std::move(combined.direction);
    } else {
      const double w = 1.0 / static_cast<double>(present_grads.size());
      out.direction.assign(params.values.size(), 0.0);
      for (std::size_t i = 0; i < present_ids.size(); ++i) {
        rec.alphas.alphas[present_ids[i]] = w;
        axpy(w, present_grads[i], out.direction);
      }
    }
    double loss_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < sums.counts.size(); ++c) {
      loss_sum += sums.loss_sums[c];
      n += sums.counts[c];
    }
    rec.batch_loss = loss_sum / static_cast<double>(n);
  }
  rec.dstar_sq = dot(out.direction, out.direction);
  fill_class_diagnostics(means, out.direction, rec);

  out.params = params;
  if (!rec.pareto_critical) axpy(-config.learning_rate, out.direction, out.params.values);
  return out;
}

ParamVector stage1_warmup(const TrainConfig& config, const Dataset& data, const RecordSink& sink) {
  config.validate();
  ParamVector params = init_params(config.model);
  if (config.epochs_stage1 == 0) return params;

  Sampler sampler(data, Partition::single_group(data.num_classes), config.batch_size,
                  SamplerMode::uniform, config.gac, derive_seed(config.seed, kStage1Sampler));
  Vector velocity;
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < config.epochs_stage1; ++epoch) {
    for (std::size_t b = 0; b < sampler.batches_per_epoch(); ++b) {
      const Batch batch = sampler.next_batch();
      ClassSums sums = make_class_sums(params, config.model);
      accumulate_class_sums(params, config.model, make_batch(data, batch.indices), sums);
      TrainRecord rec;
      rec.stage = 1;
      rec.iteration = iteration++;
      rec.epoch = epoch;
      const Vector direction = plain_direction(sums, {}, rec.batch_loss);
      rec.dstar_sq = dot(direction, direction);
      fill_class_diagnostics(class_means(sums), direction, rec);
      check_divergence(config, rec, params);
      apply_update(params, direction, config, velocity);
      if (sink) sink(rec);
    }
  }
  return params;
}

GroupingResult run_grouping(const ParamVector& params, const TrainConfig& config, const Dataset& data) {
  const std::size_t k = config.model.num_classes;
  if (!config.grouping_enabled) return {Partition::singletons(k), std::nullopt};

  const auto grads = class_mean_gradients(params, config.model, data, config.grouping_scope);
  SimilarityMatrix sim = similarity_matrix(grads);
  const std::uint64_t seed = derive_seed(config.seed, kGrouping);
  if (config.num_groups == 1) return {Partition::single_group(k), std::move(sim)};
  switch (config.grouping_strategy) {
    case GroupingStrategy::gbg: {
      Partition p = spectral_partition(sim, config.num_groups, seed);
      return {std::move(p), std::move(sim)};
    }
    case GroupingStrategy::random:
      return {baseline_partition(data.class_counts, config.num_groups, BaselineStrategy::random, seed),
              std::move(sim)};
    case GroupingStrategy::instance_count:
      return {baseline_partition(data.class_counts, config.num_groups,
                                 BaselineStrategy::instance_count, seed),
              std::move(sim)};
  }
  throw ValidationError("run_grouping: unknown strategy");
}

EvalMetrics evaluate(const ParamVector& params, const TrainConfig& config, const Dataset& data,
                     std::size_t epoch) {
  const std::size_t k = config.model.num_classes;
  const std::vector<std::size_t> rows = data.indices(Split::test);
  EvalMetrics m;
  m.epoch = epoch;
  m.per_class_accuracy.assign(k, kNaN);
  if (rows.empty()) return m;

  DenseMatrix x(rows.size(), data.feature_dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = data.features.row(rows[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  const std::vector<int> pred = predict(params, config.model, x);
  std::vector<std::size_t> hits(k, 0), totals(k, 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto y = static_cast<std::size_t>(data.labels[rows[i]]);
    ++totals[y];
    if (pred[i] == data.labels[rows[i]]) ++hits[y];
  }
  for (std::size_t c = 0; c < k; ++c)
    if (totals[c] > 0) m.per_class_accuracy[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);

  auto mean_over = [&](auto&& include) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (std::isnan(m.per_class_accuracy[c]) || !include(c)) continue;
      s += m.per_class_accuracy[c];
      ++n;
    }
    return n ? s / static_cast<double>(n) : kNaN;
  };
  const auto& counts = data.class_counts;
  m.balanced_accuracy = mean_over([](std::size_t) { return true; });
  m.many_accuracy = mean_over([&](std::size_t c) { return counts[c] > config.subsets.many_above; });
  m.few_accuracy = mean_over([&](std::size_t c) { return counts[c] < config.subsets.few_below; });
  m.medium_accuracy = mean_over([&](std::size_t c) {
    return counts[c] >= config.subsets.few_below && counts[c] <= config.subsets.many_above;
  });

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return counts[a] < counts[b] || (counts[a] == counts[b] && a > b);
  });
  const std::size_t tail = std::min(config.tail_classes, k);
  const std::vector<std::size_t> tail_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(tail));
  m.tail_accuracy = mean_over([&](std::size_t c) {
    return std::find(tail_ids.begin(), tail_ids.end(), c) != tail_ids.end();
  });
  return m;
}

TrainResult train(const TrainConfig& config, const Dataset& data) {
  config.validate();
  if (data.num_classes != config.model.num_classes)
    throw ValidationError("train: dataset has " + std::to_string(data.num_classes) +
                          " classes but the model expects " + std::to_string(config.model.num_classes));
  if (data.feature_dim() != config.model.feature_dim)
    throw ValidationError("train: dataset feature dimension differs from the model's");

  TrainResult result;
  const std::size_t total_epochs = config.epochs_stage1 + config.epochs_stage2;
  auto maybe_eval = [&](const ParamVector& p, std::size_t finished_epochs) {
    if (config.eval_every > 0 && finished_epochs % config.eval_every == 0)
      result.evals.push_back(evaluate(p, config, data, finished_epochs));
  };

  std::size_t iteration = 0;
  ParamVector params = stage1_warmup(config, data, [&](const TrainRecord& r) {
    result.records.push_back(r);
    ++iteration;
  });
  if (config.epochs_stage1 > 0) maybe_eval(params, config.epochs_stage1);

  GroupingResult grouping = run_grouping(params, config, data);
  result.partition = grouping.partition;
  result.similarity = std::move(grouping.similarity);

  if (config.epochs_stage2 > 0) {
    Sampler sampler(data, result.partition, config.batch_size, config.sampler_mode, config.gac,
                    derive_seed(config.seed, kStage2Sampler));
    Vector velocity;
    for (std::size_t epoch = config.epochs_stage1; epoch < total_epochs; ++epoch) {
      for (std::size_t b = 0; b < sampler.batches_per_epoch(); ++b) {
        const Batch batch = sampler.next_batch();
        StepResult step = moo_step(params, config, result.partition, data, batch.indices);
        step.record.iteration = iteration++;
        step.record.epoch = epoch;
        step.record.completions = batch.replaced;
        check_divergence(config, step.record, params);
        if (step.record.pareto_critical) {
          ++result.critical_steps;
        } else if (config.momentum > 0.0) {
          apply_update(params, step.direction, config, velocity);
        } else {
          params = std::move(step.params);
        }
        result.records.push_back(std::move(step.record));
      }
      maybe_eval(params, epoch + 1);
    }
  }
  if (result.evals.empty() || result.evals.back().epoch != total_epochs)
    result.evals.push_back(evaluate(params, config, data, total_epochs));
  result.params = std::move(params);
  return result;
}

std::vector<DiagnosisRow> summarize_similarity(const std::vector<TrainRecord>& records,
                                               const Dataset& data) {
  std::vector<DiagnosisRow> rows;
  if (records.empty()) return rows;
  const std::size_t k = data.num_classes;
  std::size_t first = records.front().epoch;
  std::size_t last = first;
  for (const auto& r : records) last = std::max(last, r.epoch);

  for (std::size_t epoch = first; epoch <= last; ++epoch) {
    std::vector<double> sim_sum(k, 0.0), norm_sum(k, 0.0);
    std::vector<std::size_t> present(k, 0);
    for (const auto& r : records) {
      if (r.epoch != epoch) continue;
      for (std::size_t c = 0; c < k && c < r.per_class_sim.size(); ++c) {
        if (std::isnan(r.per_class_sim[c])) continue;
        sim_sum[c] += r.per_class_sim[c];
        norm_sum[c] += r.per_class_grad_norm[c];
        ++present[c];
      }
    }
    double max_norm = 0.0;
    std::vector<double> mean_norm(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      if (present[c] == 0) continue;
      mean_norm[c] = norm_sum[c] / static_cast<double>(present[c]);
      max_norm = std::max(max_norm, mean_norm[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      DiagnosisRow row;
      row.epoch = epoch;
      row.class_id = c;
      row.train_count = data.class_counts[c];
      row.batches_present = present[c];
      row.mean_similarity = present[c] ? sim_sum[c] / static_cast<double>(present[c]) : kNaN;
      row.normalized_grad_norm = present[c] && max_norm > 0.0 ? mean_norm[c] / max_norm : kNaN;
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<DiagnosisRow> diagnose_gradient_imbalance(const TrainConfig& config, const Dataset& data,
                                                      SamplerMode mode, bool with_gbg) {
  TrainConfig cfg = config;
  if (!with_gbg) {
    cfg.epochs_stage2 = config.epochs_stage1 + config.epochs_stage2;
    cfg.epochs_stage1 = 0;
    cfg.moo_enabled = false;
    cfg.grouping_enabled = false;
    cfg.reweight = false;
    cfg.sampler_mode = mode;
  }
  cfg.eval_every = 0;
  const TrainResult result = train(cfg, data);
  return summarize_similarity(result.records, data);
}

}  // namespace gbg
