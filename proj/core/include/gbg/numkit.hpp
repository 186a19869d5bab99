#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gbg {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }

  DenseMatrix transpose() const;
  bool all_finite() const;
  double max_abs() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(std::span<double> x, double alpha);
bool all_finite(std::span<const double> x);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
bool is_symmetric(const DenseMatrix& m, double tol);

struct EigenDecomposition {
  Vector eigenvalues;        // ascending
  DenseMatrix eigenvectors;  // column j pairs with eigenvalues[j]
  int sweeps = 0;
};

/// Cyclic-by-row Jacobi rotations until the largest off-diagonal magnitude
/// is at most `tol`. Throws ValidationError on non-square or non-symmetric
/// input and ConvergenceError after `max_sweeps` sweeps.
EigenDecomposition symmetric_eigen(const DenseMatrix& m, double tol = 1e-12,
                                   int max_sweeps = 100);

struct KMeansResult {
  std::vector<std::size_t> labels;
  double objective = 0.0;
  /// Objective after each centroid update of the winning restart.
  std::vector<double> history;
};

/// Lloyd's k-means over the rows of `points` with farthest-first seeding.
/// Runs `restarts` seeds (seed, seed+1, ...) and keeps the lowest objective.
KMeansResult kmeans(const DenseMatrix& points, std::size_t k, std::uint64_t seed,
                    int restarts = 10, int max_iterations = 300);

}  // namespace gbg
