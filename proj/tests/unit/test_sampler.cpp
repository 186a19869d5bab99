#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gbg/error.hpp"
#include "gbg/sampler.hpp"
#include "gbg/trainer.hpp"

using namespace gbg;

namespace {

Dataset tail_dataset() {
  DatasetSpec s;
  s.num_classes = 4;
  s.feature_dim = 2;
  s.n_max = 400;
  s.imbalance_factor = 400;
  s.test_per_class = 1;
  return generate_longtailed(s);
}

}  // namespace

TEST_CASE("GAC probabilities") {
  // Reference values from 40-digit arithmetic.
  const GacConfig cfg;
  const std::vector<std::size_t> two{100, 10};
  const auto raw = gac_probabilities(two, cfg, false);
  CHECK(raw[0] == doctest::Approx(0.01005008000398073071).epsilon(1e-12));
  CHECK(raw[1] == doctest::Approx(0.1000450532669218769).epsilon(1e-12));
  const auto p = gac_probabilities(two, cfg);
  CHECK(p[0] == doctest::Approx(0.091285415670929554791).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.90871458432907044521).epsilon(1e-12));
  const std::vector<std::size_t> three{500, 300, 5};
  const auto q = gac_probabilities(three, cfg);
  CHECK(q[0] == doctest::Approx(0.01000280029306519001).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(0.016480468466416237874).epsilon(1e-12));
  CHECK(q[2] == doctest::Approx(0.97351673124051857212).epsilon(1e-12));
  const std::vector<std::size_t> one{1};
  CHECK(gac_probabilities(one, cfg) == std::vector<double>{1.0});
}

TEST_CASE("GAC configuration errors") {
  GacConfig bad;
  bad.mu = 1e-9;
  bad.lambda = 1.0;
  const std::vector<std::size_t> c{10, 1};
  CHECK_THROWS_AS(gac_probabilities(c, bad), ConfigError);
  GacConfig fill;
  fill.fill_fraction = 0.0;
  CHECK_THROWS_AS(fill.validate(), ConfigError);
  const std::vector<std::size_t> zero{3, 0};
  CHECK_THROWS_AS(gac_probabilities(zero, GacConfig{}), ValidationError);
}

TEST_CASE("uniform sampler covers each row once per pass") {
  const Dataset d = tail_dataset();
  const auto train = d.indices(Split::train);
  Sampler s(d, Partition::single_group(4), 7, SamplerMode::uniform, {}, 3);
  std::vector<std::size_t> seen(d.size(), 0);
  const std::size_t batches = train.size() / 7 + 1;
  std::size_t drawn = 0;
  for (std::size_t b = 0; b < batches; ++b) {
    const Batch batch = s.next_batch();
    CHECK(batch.indices.size() == 7);
    for (std::size_t i : batch.indices) {
      if (drawn++ < train.size()) ++seen[i];
      CHECK(d.split[i] == Split::train);
    }
  }
  for (std::size_t i : train) CHECK(seen[i] == 1);
}

TEST_CASE("GAC completes every group in every batch") {
  const Dataset d = tail_dataset();
  const Partition p(2, {0, 0, 0, 1});
  GacConfig gac;
  Sampler s(d, p, 20, SamplerMode::gac, gac, 5);
  bool completed = false;
  for (int b = 0; b < 200; ++b) {
    const Batch batch = s.next_batch();
    CHECK(batch.indices.size() == 20);
    std::vector<bool> present(2, false);
    for (std::size_t i : batch.indices) present[p.group_of(static_cast<std::size_t>(d.labels[i]))] = true;
    CHECK(present[0]);
    CHECK(present[1]);
    if (batch.completions[1] > 0) {
      completed = true;
      CHECK(batch.completions[1] == 2);  // ceil(0.1 * 20)
    }
  }
  CHECK(completed);
}

TEST_CASE("completion draws stay inside the group") {
  const Dataset d = tail_dataset();
  const Partition p(2, {0, 1, 0, 1});
  Sampler s(d, p, 8, SamplerMode::gac, {}, 1);
  for (int i = 0; i < 100; ++i) CHECK(p.group_of(static_cast<std::size_t>(d.labels[s.draw_completion(1)])) == 1);
}

TEST_CASE("class-balanced sampling equalizes classes") {
  const Dataset d = tail_dataset();
  Sampler s(d, Partition::single_group(4), 40, SamplerMode::class_balanced, {}, 2);
  std::vector<double> hits(4, 0.0);
  for (int b = 0; b < 200; ++b)
    for (std::size_t i : s.next_batch().indices) hits[static_cast<std::size_t>(d.labels[i])] += 1.0;
  for (double h : hits) CHECK(h / 8000.0 == doctest::Approx(0.25).epsilon(0.1));
}

TEST_CASE("sampler is deterministic for a seed") {
  const Dataset d = tail_dataset();
  const Partition p(2, {0, 0, 1, 1});
  Sampler a(d, p, 10, SamplerMode::gac, {}, 9), b(d, p, 10, SamplerMode::gac, {}, 9);
  for (int i = 0; i < 20; ++i) CHECK(a.next_batch().indices == b.next_batch().indices);
}

TEST_CASE("class-balanced loss weights") {
  const std::vector<std::size_t> counts{100, 10, 1};
  const auto w = class_balanced_weights(counts);
  CHECK(w[0] == doctest::Approx(0.027158721622260391041).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.27036887399316642881).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(2.7024724043845731801).epsilon(1e-12));
  CHECK(w[0] + w[1] + w[2] == doctest::Approx(3.0));
}
