#include <cmath>

#include "doctest.h"
#include "gbg/error.hpp"
#include "gbg/numkit.hpp"
#include "gbg/rng.hpp"

using namespace gbg;

namespace {

DenseMatrix random_symmetric(std::size_t n, Rng& rng) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) m(i, j) = m(j, i) = rng.uniform(-1.0, 1.0);
  return m;
}

}  // namespace

TEST_CASE("dot products and norms") {
  CHECK(dot(Vector{1, 0}, Vector{0, 1}) == 0.0);
  CHECK(dot(Vector{1, 2}, Vector{3, 4}) == 11.0);
  const Vector a{3, -4, 12};
  CHECK(dot(a, a) == doctest::Approx(169.0));
  CHECK(norm(a) == doctest::Approx(13.0));
  CHECK_THROWS_AS(dot(Vector{1, 2}, Vector{1}), DimensionError);
}

TEST_CASE("axpy and scale") {
  Vector y{1, 1};
  axpy(2.0, Vector{1, -1}, y);
  CHECK(y == Vector{3, -1});
  scale(y, 0.5);
  CHECK(y == Vector{1.5, -0.5});
  CHECK_THROWS_AS(axpy(1.0, Vector{1}, y), DimensionError);
}

TEST_CASE("matmul and transpose") {
  const DenseMatrix a(2, 3, {1, 2, 3, 4, 5, 6});
  const DenseMatrix p = matmul(a, a.transpose());
  CHECK(p(0, 0) == 14.0);
  CHECK(p(0, 1) == 32.0);
  CHECK(p(1, 1) == 77.0);
  CHECK(is_symmetric(p, 0.0));
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("symmetric_eigen on small matrices") {
  SUBCASE("identity") {
    const auto e = symmetric_eigen(DenseMatrix::identity(3));
    for (double v : e.eigenvalues) CHECK(v == doctest::Approx(1.0));
  }
  SUBCASE("diagonal is sorted ascending") {
    DenseMatrix d(3, 3);
    d(0, 0) = 3;
    d(1, 1) = 1;
    d(2, 2) = 2;
    const auto e = symmetric_eigen(d);
    CHECK(e.eigenvalues == Vector{1, 2, 3});
  }
  SUBCASE("2x2") {
    const auto e = symmetric_eigen(DenseMatrix(2, 2, {2, 1, 1, 2}));
    CHECK(e.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(e.eigenvalues[1] == doctest::Approx(3.0).epsilon(1e-14));
  }
  SUBCASE("4x4 against high-precision reference") {
    // Reference eigenvalues from a 40-digit symmetric eigensolver.
    const DenseMatrix m(4, 4, {4, 1, -2, 2, 1, 2, 0, 1, -2, 0, 3, -2, 2, 1, -2, -1});
    const auto e = symmetric_eigen(m);
    const double ref[] = {-2.1975169774394248133, 1.0843644637732169887, 2.2685314064312420364,
                          6.8446211072349657881};
    for (int i = 0; i < 4; ++i) CHECK(std::abs(e.eigenvalues[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("symmetric_eigen reconstruction and orthonormality up to 64x64") {
  for (std::size_t n : {1u, 2u, 5u, 17u, 64u}) {
    Rng rng(n);
    const DenseMatrix a = random_symmetric(n, rng);
    const auto e = symmetric_eigen(a);
    const DenseMatrix& v = e.eigenvectors;
    double recon = 0.0, ortho = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0, o = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
          s += v(i, t) * e.eigenvalues[t] * v(j, t);
          o += v(t, i) * v(t, j);
        }
        recon = std::max(recon, std::abs(s - a(i, j)));
        ortho = std::max(ortho, std::abs(o - (i == j ? 1.0 : 0.0)));
      }
    CHECK(recon <= 1e-8 * (1.0 + a.max_abs()));
    CHECK(ortho <= 1e-8);
    for (std::size_t i = 1; i < n; ++i) CHECK(e.eigenvalues[i - 1] <= e.eigenvalues[i]);
  }
}

TEST_CASE("symmetric_eigen rejects bad input") {
  CHECK_THROWS_AS(symmetric_eigen(DenseMatrix(2, 2, {1, 2, 0, 1})), ValidationError);
  CHECK_THROWS_AS(symmetric_eigen(DenseMatrix(2, 3)), ValidationError);
  Rng rng(3);
  const DenseMatrix a = random_symmetric(8, rng);
  try {
    symmetric_eigen(a, 1e-300, 1);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual() > 0.0);
  }
}

TEST_CASE("kmeans") {
  SUBCASE("well separated clusters") {
    const DenseMatrix p(4, 2, {0, 0, 0, 0.1, 10, 10, 10, 10.1});
    const auto r = kmeans(p, 2, 0);
    CHECK(r.labels[0] == r.labels[1]);
    CHECK(r.labels[2] == r.labels[3]);
    CHECK(r.labels[0] != r.labels[2]);
  }
  SUBCASE("k equals rows") {
    const DenseMatrix p(3, 1, {0, 5, 9});
    const auto r = kmeans(p, 3, 1);
    CHECK(r.labels[0] != r.labels[1]);
    CHECK(r.labels[1] != r.labels[2]);
    CHECK(r.labels[0] != r.labels[2]);
    CHECK(r.objective == 0.0);
  }
  SUBCASE("identical rows still fill every cluster") {
    const DenseMatrix p(4, 2, 1.0);
    const auto r = kmeans(p, 2, 0);
    std::size_t ones = 0;
    for (auto l : r.labels) ones += l;
    CHECK(ones >= 1);
    CHECK(ones <= 3);
  }
  SUBCASE("objective never increases across Lloyd iterations") {
    Rng rng(5);
    DenseMatrix p(60, 3);
    for (double& v : p.values()) v = rng.normal();
    const auto r = kmeans(p, 4, 9);
    for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1] + 1e-12);
  }
  SUBCASE("deterministic for a fixed seed") {
    Rng rng(6);
    DenseMatrix p(30, 2);
    for (double& v : p.values()) v = rng.normal();
    CHECK(kmeans(p, 3, 4).labels == kmeans(p, 3, 4).labels);
  }
  CHECK_THROWS_AS(kmeans(DenseMatrix(2, 2), 3, 0), ValidationError);
}

TEST_CASE("rng is deterministic and in range") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.index(7) < 7u);
  }
}
