#include <benchmark/benchmark.h>

#include <numeric>

#include "gbg/grouping.hpp"
#include "gbg/model.hpp"
#include "gbg/moo.hpp"
#include "gbg/numkit.hpp"
#include "gbg/rng.hpp"

namespace {

void BM_MinNormPoint(benchmark::State& state) {
  const auto groups = static_cast<std::size_t>(state.range(0));
  gbg::Rng rng(1);
  std::vector<gbg::Vector> grads(groups, gbg::Vector(1000));
  for (auto& g : grads)
    for (double& v : g) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(gbg::min_norm_point(grads));
}
BENCHMARK(BM_MinNormPoint)->Arg(2)->Arg(4)->Arg(8)->Arg(16);

void BM_SymmetricEigen(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  gbg::Rng rng(2);
  gbg::DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) m(i, j) = m(j, i) = rng.uniform(-1.0, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(gbg::symmetric_eigen(m));
}
BENCHMARK(BM_SymmetricEigen)->Arg(10)->Arg(32)->Arg(64);

void BM_PerClassGradients(benchmark::State& state) {
  gbg::DatasetSpec spec;
  spec.num_classes = 10;
  spec.feature_dim = 32;
  spec.n_max = 500;
  const gbg::Dataset data = gbg::generate_longtailed(spec);
  gbg::ModelConfig cfg;
  cfg.num_classes = 10;
  cfg.feature_dim = 32;
  cfg.kind = state.range(0) == 0 ? gbg::ModelKind::linear_softmax : gbg::ModelKind::one_hidden_layer;
  cfg.hidden_dim = 64;
  const gbg::ParamVector params = gbg::init_params(cfg);
  std::vector<std::size_t> rows(128);
  std::iota(rows.begin(), rows.end(), 0);
  const gbg::BatchRef batch = gbg::make_batch(data, rows);
  for (auto _ : state) benchmark::DoNotOptimize(gbg::per_class_gradients(params, cfg, batch));
}
BENCHMARK(BM_PerClassGradients)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
