#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "gbg/error.hpp"
#include "gbg/model.hpp"
#include "support/oracles.hpp"

using namespace gbg;
namespace fs = std::filesystem;

namespace {

ModelConfig linear(std::size_t k, std::size_t d) {
  ModelConfig c;
  c.num_classes = k;
  c.feature_dim = d;
  return c;
}

ModelConfig hidden(std::size_t k, std::size_t d, std::size_t h, Activation a) {
  ModelConfig c = linear(k, d);
  c.kind = ModelKind::one_hidden_layer;
  c.hidden_dim = h;
  c.activation = a;
  return c;
}

std::vector<std::size_t> all_rows(const Dataset& d) {
  std::vector<std::size_t> r(d.size());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

TEST_CASE("cross-entropy values") {
  // Reference values from 40-digit arithmetic.
  CHECK(ce_loss(DenseMatrix(1, 3, {1, 2, -0.5}), std::vector<int>{0}) ==
        doctest::Approx(1.3715390318526828931).epsilon(1e-14));
  CHECK(ce_loss(DenseMatrix(1, 3, {1000, 0, -1000}), std::vector<int>{1}) ==
        doctest::Approx(1000.0).epsilon(1e-14));
  CHECK(ce_loss(DenseMatrix(1, 4, 0.0), std::vector<int>{2}) == doctest::Approx(std::log(4.0)));
  CHECK(std::isfinite(ce_loss(DenseMatrix(1, 2, {1e300, -1e300}), std::vector<int>{1})));
  CHECK_THROWS_AS(ce_loss(DenseMatrix(1, 2), std::vector<int>{2}), ValidationError);
}

TEST_CASE("layout and scope") {
  const auto lin = linear(3, 4);
  CHECK(init_params(lin).size() == 15);
  CHECK(scope_range(lin, GradientScope::last_layer).begin == 0);
  const auto hid = hidden(3, 4, 5, Activation::relu);
  CHECK(init_params(hid).size() == 5 * 4 + 5 + 3 * 5 + 3);
  const auto r = scope_range(hid, GradientScope::last_layer);
  CHECK(r.begin == 25);
  CHECK(r.end == 43);
  const auto p = init_params(hid);
  for (std::size_t i = 0; i < 5; ++i) CHECK(p.values[p.block("b1").offset + i] == 0.0);
  CHECK(init_params(hid).values == p.values);
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(11);
  const Dataset d = oracle::random_dataset(4, 3, 12, rng);
  const auto rows = all_rows(d);
  const BatchRef batch = make_batch(d, rows);
  for (const ModelConfig& cfg : {linear(4, 3), hidden(4, 3, 6, Activation::tanh), hidden(4, 3, 6, Activation::relu)}) {
    const ParamVector p = oracle::random_params(cfg, rng);
    CHECK(oracle::relative_error(batch_gradient(p, cfg, batch), oracle::numeric_gradient(p, cfg, batch)) < 1e-6);
  }
}

TEST_CASE("per-class gradients recombine into the batch gradient") {
  Rng rng(12);
  const Dataset d = oracle::random_dataset(5, 3, 20, rng);
  const auto cfg = hidden(5, 3, 4, Activation::tanh);
  const ParamVector p = oracle::random_params(cfg, rng);
  std::vector<std::size_t> rows{0, 1, 2, 5, 7, 9, 11, 13};
  const BatchRef batch = make_batch(d, rows);
  const auto per = per_class_gradients(p, cfg, batch);
  Vector sum(p.size(), 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < per.size(); ++i) {
    if (i > 0) CHECK(per[i - 1].class_id < per[i].class_id);
    axpy(static_cast<double>(per[i].sample_count), per[i].grad, sum);
    n += per[i].sample_count;
  }
  CHECK(n == rows.size());
  scale(sum, 1.0 / static_cast<double>(n));
  CHECK(oracle::relative_error(sum, batch_gradient(p, cfg, batch)) < 1e-12);
}

TEST_CASE("weighted gradient with unit weights equals the plain gradient") {
  Rng rng(13);
  const Dataset d = oracle::random_dataset(3, 2, 9, rng);
  const auto cfg = linear(3, 2);
  const ParamVector p = oracle::random_params(cfg, rng);
  const auto rows = all_rows(d);
  const BatchRef batch = make_batch(d, rows);
  double loss = 0.0;
  const Vector w(3, 1.0);
  const Vector g = weighted_batch_gradient(p, cfg, batch, w, &loss);
  CHECK(oracle::relative_error(g, batch_gradient(p, cfg, batch)) < 1e-14);
  CHECK(loss == doctest::Approx(batch_loss(p, cfg, batch)));
}

TEST_CASE("checkpoint round trip and rejection") {
  const auto cfg = hidden(3, 2, 4, Activation::relu);
  const ParamVector p = init_params(cfg);
  const fs::path path = fs::temp_directory_path() / "gbg_unit.ckpt";
  save_checkpoint(p, cfg, path);
  CHECK(load_checkpoint(path, cfg).values == p.values);
  CHECK_THROWS_AS(load_checkpoint(path, hidden(3, 2, 5, Activation::relu)), SchemaError);
  CHECK_THROWS_AS(load_checkpoint(path, linear(3, 2)), SchemaError);
  fs::resize_file(path, fs::file_size(path) - 8);
  CHECK_THROWS_AS(load_checkpoint(path, cfg), ParseError);
  std::ofstream(path) << "not a checkpoint\n";
  CHECK_THROWS_AS(load_checkpoint(path, cfg), ParseError);
  fs::remove(path);
}
