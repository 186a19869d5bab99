#include "gbg/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gbg/error.hpp"

namespace gbg {

void GacConfig::validate() const {
  if (!(mu > 0.0 && mu <= 1.0)) throw ConfigError("gac: mu must lie in (0, 1]");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("gac: lambda must be >= 0");
  if (!(fill_fraction > 0.0 && fill_fraction <= 1.0))
    throw ConfigError("gac: fill_fraction must lie in (0, 1]");
}

std::vector<double> gac_probabilities(std::span<const std::size_t> counts_in_group,
                                      const GacConfig& cfg, bool normalize) {
  cfg.validate();
  if (counts_in_group.empty()) throw ValidationError("gac_probabilities: empty group");
  const std::size_t n_min = *std::min_element(counts_in_group.begin(), counts_in_group.end());
  if (n_min == 0) throw ValidationError("gac_probabilities: every class needs at least one sample");

  std::vector<double> p(counts_in_group.size());
  double total = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const auto n = static_cast<double>(counts_in_group[j]);
    const double beta = cfg.mu - cfg.lambda * n / static_cast<double>(n_min);
    if (!(beta > 0.0 && beta < 1.0)) {
      std::ostringstream msg;
      msg << "gac: beta_j = mu - lambda * N_j / N_min = " << beta << " leaves (0, 1) for mu="
          << cfg.mu << ", lambda=" << cfg.lambda << ", N_j=" << counts_in_group[j];
      throw ConfigError(msg.str());
    }
    p[j] = (1.0 - beta) / (1.0 - std::pow(beta, n));
    total += p[j];
  }
  if (normalize)
    for (double& v : p) v /= total;
  return p;
}

Sampler::Sampler(const Dataset& data, Partition partition, std::size_t batch_size, SamplerMode mode,
                 GacConfig gac, std::uint64_t seed)
    : data_(data),
      partition_(std::move(partition)),
      batch_size_(batch_size),
      mode_(mode),
      gac_(gac),
      rng_(seed),
      train_rows_(data.indices(Split::train)) {
  if (batch_size_ == 0) throw ValidationError("sampler: batch_size must be positive");
  if (train_rows_.empty()) throw ValidationError("sampler: dataset has no training rows");
  if (partition_.num_classes() != data.num_classes)
    throw ValidationError("sampler: partition does not cover the dataset's classes");

  members_ = data.class_members();
  for (std::size_t k = 0; k < members_.size(); ++k)
    if (!members_[k].empty()) nonempty_classes_.push_back(k);

  group_classes_.resize(partition_.num_groups());
  group_probs_.resize(partition_.num_groups());
  for (std::size_t g = 0; g < partition_.num_groups(); ++g) {
    std::vector<std::size_t> counts;
    for (std::size_t k = 0; k < members_.size(); ++k) {
      if (partition_.group_of(k) != g || members_[k].empty()) continue;
      group_classes_[g].push_back(k);
      counts.push_back(members_[k].size());
    }
    if (group_classes_[g].empty())
      throw ValidationError("sampler: group " + std::to_string(g) + " has no training samples");
    if (mode_ == SamplerMode::gac) group_probs_[g] = gac_probabilities(counts, gac_);
  }
  if (mode_ == SamplerMode::gac) {
    gac_.validate();
    if (batch_size_ < partition_.num_groups())
      throw ValidationError("sampler: GAC needs batch_size >= number of groups");
  }
  order_ = train_rows_;
  cursor_ = order_.size();
}

std::size_t Sampler::batches_per_epoch() const noexcept {
  return (train_rows_.size() + batch_size_ - 1) / batch_size_;
}

std::size_t Sampler::next_uniform() {
  if (cursor_ == order_.size()) {
    order_ = train_rows_;
    rng_.shuffle(order_.begin(), order_.end());
    cursor_ = 0;
  }
  return order_[cursor_++];
}

std::size_t Sampler::draw_completion(std::size_t group) {
  const auto& probs = group_probs_.at(group);
  const auto& classes = group_classes_[group];
  std::size_t pick = classes.size() - 1;
  if (!probs.empty()) {
    double u = rng_.uniform();
    for (std::size_t j = 0; j < probs.size(); ++j) {
      if (u < probs[j]) {
        pick = j;
        break;
      }
      u -= probs[j];
    }
  } else {
    pick = rng_.index(classes.size());
  }
  const auto& rows = members_[classes[pick]];
  return rows[rng_.index(rows.size())];
}

std::size_t Sampler::completion_count(std::size_t missing) const {
  const std::size_t wanted = static_cast<std::size_t>(
      std::ceil(gac_.fill_fraction * static_cast<double>(batch_size_) - 1e-9));
  const std::size_t budget = batch_size_ - (partition_.num_groups() - missing);
  return std::max<std::size_t>(1, std::min(wanted, budget / missing));
}

Batch Sampler::next_batch() {
  const std::size_t groups = partition_.num_groups();
  Batch batch;
  batch.indices.reserve(batch_size_);
  if (mode_ == SamplerMode::class_balanced) {
    for (std::size_t i = 0; i < batch_size_; ++i) {
      const std::size_t k = nonempty_classes_[rng_.index(nonempty_classes_.size())];
      batch.indices.push_back(members_[k][rng_.index(members_[k].size())]);
    }
  } else {
    for (std::size_t i = 0; i < batch_size_; ++i) batch.indices.push_back(next_uniform());
  }

  std::vector<std::size_t> group_count(groups, 0);
  std::vector<std::size_t> slot_group(batch_size_);
  for (std::size_t i = 0; i < batch_size_; ++i) {
    slot_group[i] = partition_.group_of(static_cast<std::size_t>(data_.labels[batch.indices[i]]));
    ++group_count[slot_group[i]];
  }
  batch.completions.assign(groups, 0);

  if (mode_ == SamplerMode::gac && gac_.enabled) {
    std::vector<std::size_t> missing;
    for (std::size_t g = 0; g < groups; ++g)
      if (group_count[g] == 0) missing.push_back(g);
    if (!missing.empty()) {
      const std::size_t per_group = completion_count(missing.size());
      std::vector<bool> is_completion(batch_size_, false);
      std::vector<std::size_t> original = group_count;
      for (std::size_t g : missing) {
        for (std::size_t c = 0; c < per_group; ++c) {
          // Replace a random original row of the most-represented group.
          std::size_t donor = 0;
          for (std::size_t h = 1; h < groups; ++h)
            if (original[h] > original[donor]) donor = h;
          std::vector<std::size_t> slots;
          for (std::size_t i = 0; i < batch_size_; ++i)
            if (!is_completion[i] && slot_group[i] == donor) slots.push_back(i);
          const std::size_t slot = slots[rng_.index(slots.size())];
          --group_count[donor];
          --original[donor];
          batch.indices[slot] = draw_completion(g);
          slot_group[slot] = g;
          is_completion[slot] = true;
          ++group_count[g];
        }
        batch.completions[g] = per_group;
        batch.replaced += per_group;
      }
    }
  }

  batch.group_presence.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) batch.group_presence[g] = group_count[g] > 0;
  return batch;
}

}  // namespace gbg
