#include <cmath>

#include "doctest.h"
#include "gbg/error.hpp"
#include "gbg/grouping.hpp"
#include "support/oracles.hpp"

using namespace gbg;

namespace {

SimilarityMatrix three_by_three() {
  return SimilarityMatrix{DenseMatrix(3, 3, {1, .5, -.2, .5, 1, .3, -.2, .3, 1})};
}

SimilarityMatrix random_similarity(std::size_t k, Rng& rng) {
  std::vector<Vector> g(k, Vector(6));
  for (auto& v : g)
    for (double& x : v) x = rng.normal();
  return similarity_matrix(g);
}

}  // namespace

TEST_CASE("partition validation") {
  CHECK_THROWS_AS(Partition(2, {0, 0, 0}), ValidationError);
  CHECK_THROWS_AS(Partition(2, {0, 2, 1}), ValidationError);
  CHECK_THROWS_AS(Partition(0, {}), ValidationError);
  const Partition p(2, {1, 0, 1});
  CHECK(p.groups() == std::vector<std::vector<std::size_t>>{{1}, {0, 2}});
  CHECK(canonical(p).assignment() == std::vector<std::size_t>{0, 1, 0});
  CHECK(Partition::singletons(3).num_groups() == 3);
  CHECK(Partition::single_group(3).groups().size() == 1);
}

TEST_CASE("cosine similarity") {
  const auto a = similarity_matrix(std::vector<Vector>{{1, 0}, {0, 1}, {-2, 0}, {0, 0}});
  CHECK(a(0, 1) == doctest::Approx(0.0));
  CHECK(a(0, 2) == doctest::Approx(-1.0));
  CHECK(a(0, 3) == 0.0);
  CHECK(a(3, 3) == 1.0);
  CHECK(is_symmetric(a.values, 0.0));
  CHECK_THROWS_AS(similarity_matrix(std::vector<Vector>{{1, 0}, {1}}), DimensionError);
}

TEST_CASE("cut objective") {
  const auto a = three_by_three();
  const Partition p(2, {0, 0, 1});
  CHECK(cut_objective(a, p, CutWeights::raw) == doctest::Approx(0.2));
  CHECK(cut_objective(a, p, CutWeights::shifted) == doctest::Approx(2.1));
  CHECK(cut_objective(a, Partition::single_group(3)) == 0.0);
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    const auto s = random_similarity(6, rng);
    std::vector<std::size_t> lab(6);
    for (auto& l : lab) l = rng.index(3);
    lab[0] = 0;
    lab[1] = 1;
    lab[2] = 2;
    CHECK(cut_objective(s, Partition(3, lab)) == doctest::Approx(oracle::cut_value(s, lab)));
  }
}

TEST_CASE("Stirling numbers of the second kind") {
  CHECK(stirling2(8, 3) == 966);
  CHECK(stirling2(10, 4) == 34105);
  CHECK(stirling2(5, 5) == 1);
  CHECK(stirling2(5, 1) == 1);
  CHECK(stirling2(3, 4) == 0);
  CHECK(stirling2(200, 50, 1000) == 1001);
}

TEST_CASE("brute force agrees with an independent enumerator") {
  Rng rng(32);
  for (int t = 0; t < 10; ++t) {
    const auto s = random_similarity(7, rng);
    for (std::size_t g : {2u, 3u}) {
      const auto expected = oracle::enumerate_min_cut(s, g);
      const Partition p = brute_force_partition(s, g);
      CHECK(cut_objective(s, p) == doctest::Approx(expected.value).epsilon(1e-12));
      CHECK(canonical(p).assignment() == expected.assignment);
    }
  }
  CHECK_THROWS_AS(brute_force_partition(random_similarity(30, rng), 4), ValidationError);
}

TEST_CASE("spectral partition") {
  SUBCASE("recovers planted blocks") {
    Rng rng(33);
    for (int t = 0; t < 20; ++t) {
      std::vector<std::size_t> truth;
      const auto s = oracle::planted_two_block(10, 0.8, -0.6, 0.1, rng, truth);
      CHECK(oracle::same_partition(spectral_partition(s, 2, 0).assignment(), truth));
    }
  }
  SUBCASE("edge cases") {
    const auto s = three_by_three();
    CHECK(spectral_partition(s, 1, 0) == Partition::single_group(3));
    CHECK(spectral_partition(s, 3, 0).num_groups() == 3);
    CHECK_THROWS_AS(spectral_partition(s, 4, 0), ValidationError);
    CHECK_THROWS_AS(spectral_partition(s, 0, 0), ValidationError);
  }
  SUBCASE("deterministic") {
    Rng rng(34);
    const auto s = random_similarity(12, rng);
    CHECK(spectral_partition(s, 4, 7) == spectral_partition(s, 4, 7));
  }
}

TEST_CASE("normalized Laplacian") {
  const DenseMatrix l = normalized_laplacian(three_by_three());
  CHECK(is_symmetric(l, 1e-15));
  const auto e = symmetric_eigen(l);
  CHECK(std::abs(e.eigenvalues.front()) < 1e-12);
  CHECK(e.eigenvalues.back() <= 2.0 + 1e-12);
}

TEST_CASE("baseline partitions") {
  const std::vector<std::size_t> counts{50, 500, 5, 100, 20};
  const Partition ic = baseline_partition(counts, 2, BaselineStrategy::instance_count, 0);
  CHECK(ic.assignment() == std::vector<std::size_t>{0, 0, 1, 0, 1});
  const std::vector<std::size_t> ten{900, 800, 700, 600, 500, 400, 300, 200, 100, 50};
  CHECK(baseline_partition(ten, 4, BaselineStrategy::instance_count, 0).groups() ==
        std::vector<std::vector<std::size_t>>{{0, 1, 2}, {3, 4, 5}, {6, 7}, {8, 9}});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Partition r = baseline_partition(counts, 4, BaselineStrategy::random, seed);
    CHECK(r.num_groups() == 4);
  }
  CHECK(baseline_partition(counts, 3, BaselineStrategy::random, 5) ==
        baseline_partition(counts, 3, BaselineStrategy::random, 5));
}

TEST_CASE("partition JSON round trip") {
  const Partition p(3, {2, 0, 1, 0});
  const auto sum = similarity_checksum(three_by_three());
  CHECK(sum.size() == 16);
  const Partition q = partition_from_json(partition_to_json(p, sum));
  CHECK(q == p);
  CHECK_THROWS_AS(partition_from_json("{not json"), ParseError);
}

TEST_CASE("class mean gradients cover every class") {
  Rng rng(35);
  const Dataset d = oracle::random_dataset(3, 2, 30, rng);
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.feature_dim = 2;
  const ParamVector p = oracle::random_params(cfg, rng);
  const auto whole = class_mean_gradients(p, cfg, d, GradientScope::all_parameters, 1000);
  const auto chunked = class_mean_gradients(p, cfg, d, GradientScope::all_parameters, 4);
  REQUIRE(whole.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(oracle::relative_error(whole[k].grad, chunked[k].grad) < 1e-13);
  Dataset missing = d;
  missing.num_classes = 4;
  missing.class_counts.push_back(0);
  cfg.num_classes = 4;
  CHECK_THROWS_AS(class_mean_gradients(init_params(cfg), cfg, missing), ValidationError);
}
