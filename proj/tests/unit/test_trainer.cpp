#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gbg/error.hpp"
#include "gbg/trainer.hpp"
#include "support/oracles.hpp"

using namespace gbg;

namespace {

Dataset small_data(std::uint64_t seed = 0) {
  DatasetSpec s;
  s.num_classes = 5;
  s.feature_dim = 3;
  s.n_max = 60;
  s.imbalance_factor = 10;
  s.test_per_class = 10;
  s.seed = seed;
  return generate_longtailed(s);
}

TrainConfig small_config() {
  TrainConfig c;
  c.model.num_classes = 5;
  c.model.feature_dim = 3;
  c.epochs_stage1 = 2;
  c.epochs_stage2 = 3;
  c.batch_size = 16;
  c.num_groups = 2;
  c.eval_every = 1;
  return c;
}

std::vector<std::size_t> first_rows(const Dataset& d, std::size_t n) {
  auto rows = d.indices(Split::train);
  rows.resize(n);
  return rows;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.num_groups = 6;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("disabling grouping and MOO gives the cross-entropy step") {
  const Dataset d = small_data();
  TrainConfig c = small_config();
  c.moo_enabled = false;
  c.grouping_enabled = false;
  Rng rng(41);
  const ParamVector p = oracle::random_params(c.model, rng);
  const auto rows = first_rows(d, 40);
  const StepResult r = moo_step(p, c, Partition::single_group(5), d, rows);
  const Vector g = batch_gradient(p, c.model, make_batch(d, rows));
  CHECK(oracle::relative_error(r.direction, g) < 1e-12);
  for (std::size_t i = 0; i < p.size(); ++i)
    CHECK(r.params.values[i] == doctest::Approx(p.values[i] - c.learning_rate * g[i]).epsilon(1e-12));
}

TEST_CASE("a single group makes the min-norm step the group gradient") {
  const Dataset d = small_data();
  const TrainConfig c = small_config();
  Rng rng(42);
  const ParamVector p = oracle::random_params(c.model, rng);
  const auto rows = first_rows(d, 40);
  const StepResult r = moo_step(p, c, Partition::single_group(5), d, rows);
  CHECK(r.record.alphas.alphas == std::vector<double>{1.0});
  const auto per = per_class_gradients(p, c.model, make_batch(d, rows));
  Vector mean(p.size(), 0.0);
  for (const auto& cg : per) axpy(1.0 / static_cast<double>(per.size()), cg.grad, mean);
  CHECK(oracle::relative_error(r.direction, mean) < 1e-12);
}

TEST_CASE("the MOO step does not increase any present group's loss for a small step") {
  const Dataset d = small_data();
  TrainConfig c = small_config();
  c.learning_rate = 1e-4;
  Rng rng(43);
  const ParamVector p = oracle::random_params(c.model, rng);
  const Partition part(2, {0, 0, 1, 1, 1});
  const auto rows = first_rows(d, 60);
  const auto before = group_losses(p, c.model, part, d, rows);
  const StepResult r = moo_step(p, c, part, d, rows);
  const auto after = group_losses(r.params, c.model, part, d, rows);
  for (std::size_t g = 0; g < 2; ++g)
    if (r.record.group_present[g]) CHECK(after[g] <= before[g] + 1e-12);
  CHECK(r.record.alphas.on_simplex());
}

TEST_CASE("training is deterministic") {
  const Dataset d = small_data();
  const TrainConfig c = small_config();
  const TrainResult a = train(c, d);
  const TrainResult b = train(c, d);
  CHECK(a.params.values == b.params.values);
  CHECK(a.partition == b.partition);
  REQUIRE(a.evals.size() == 1 + c.epochs_stage2);  // end of warm-up, then every stage-2 epoch
  CHECK(a.evals.back().balanced_accuracy == b.evals.back().balanced_accuracy);
  CHECK(a.records.size() == b.records.size());
}

TEST_CASE("evaluation metrics") {
  const Dataset d = small_data();
  const TrainConfig c = small_config();
  const EvalMetrics m = evaluate(init_params(c.model), c, d);
  REQUIRE(m.per_class_accuracy.size() == 5);
  const double mean = std::accumulate(m.per_class_accuracy.begin(), m.per_class_accuracy.end(), 0.0) / 5.0;
  CHECK(m.balanced_accuracy == doctest::Approx(mean));
  for (double a : m.per_class_accuracy) {
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("divergence raises with the last good parameters") {
  const Dataset d = small_data();
  TrainConfig c = small_config();
  c.learning_rate = 1e8;
  c.divergence_threshold = 50.0;
  try {
    train(c, d);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(all_finite(e.last_good().values));
  }
}

TEST_CASE("grouping strategies") {
  const Dataset d = small_data();
  TrainConfig c = small_config();
  const ParamVector p = stage1_warmup(c, d);
  const GroupingResult gbg = run_grouping(p, c, d);
  CHECK(gbg.partition.num_groups() == 2);
  REQUIRE(gbg.similarity.has_value());
  CHECK(gbg.similarity->size() == 5);
  c.grouping_strategy = GroupingStrategy::instance_count;
  const GroupingResult ic = run_grouping(p, c, d);
  CHECK(ic.partition.assignment() == std::vector<std::size_t>{0, 0, 0, 1, 1});
}

TEST_CASE("diagnosis rows cover every class and epoch") {
  const Dataset d = small_data();
  const TrainConfig c = small_config();
  const auto rows = diagnose_gradient_imbalance(c, d, SamplerMode::uniform);
  CHECK(rows.size() == 5 * (c.epochs_stage1 + c.epochs_stage2));
  for (const auto& r : rows) {
    CHECK(r.normalized_grad_norm <= 1.0 + 1e-12);
    if (r.batches_present > 0) CHECK(std::abs(r.mean_similarity) <= 1.0 + 1e-12);
  }
}
