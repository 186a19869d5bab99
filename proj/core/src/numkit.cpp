#include "gbg/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gbg/error.hpp"
#include "gbg/rng.hpp"

namespace gbg {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw DimensionError("DenseMatrix: element count does not match rows*cols");
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool DenseMatrix::all_finite() const { return gbg::all_finite(values_); }

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length mismatch (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(std::span<double> x, double alpha) {
  for (double& v : x) v *= alpha;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

bool is_symmetric(const DenseMatrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > tol) return false;
  return true;
}

namespace {

double max_off_diagonal(const DenseMatrix& a) {
  double off = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) off = std::max(off, std::abs(a(i, j)));
  return off;
}

void rotate(DenseMatrix& a, DenseMatrix& v, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  double t;
  if (std::abs(theta) > 1e150) {
    t = 0.5 / theta;
  } else {
    t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  }
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;
  const std::size_t n = a.rows();
  for (std::size_t k = 0; k < n; ++k) {
    const double akp = a(k, p);
    const double akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double apk = a(p, k);
    const double aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
  a(p, q) = 0.0;
  a(q, p) = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double vkp = v(k, p);
    const double vkq = v(k, q);
    v(k, p) = c * vkp - s * vkq;
    v(k, q) = s * vkp + c * vkq;
  }
}

}  // namespace

EigenDecomposition symmetric_eigen(const DenseMatrix& m, double tol, int max_sweeps) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw ValidationError("symmetric_eigen: matrix must be square and nonempty");
  }
  if (!(tol > 0.0)) throw ValidationError("symmetric_eigen: tol must be positive");
  if (!m.all_finite()) throw ValidationError("symmetric_eigen: non-finite entry");
  if (!is_symmetric(m, 1e-12)) throw ValidationError("symmetric_eigen: matrix is not symmetric");

  const std::size_t n = m.rows();
  DenseMatrix a = m;
  // Symmetrize exactly so rotations keep a(i,j) == a(j,i).
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
  DenseMatrix v = DenseMatrix::identity(n);

  int sweep = 0;
  double off = max_off_diagonal(a);
  while (off > tol) {
    if (sweep == max_sweeps) {
      std::ostringstream msg;
      msg << "symmetric_eigen: no convergence after " << max_sweeps
          << " sweeps, max off-diagonal " << off;
      throw ConvergenceError(msg.str(), off);
    }
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q)
        if (a(p, q) != 0.0) rotate(a, v, p, q);
    ++sweep;
    off = max_off_diagonal(a);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

  EigenDecomposition out;
  out.sweeps = sweep;
  out.eigenvalues.resize(n);
  out.eigenvectors = DenseMatrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.eigenvalues[j] = a(order[j], order[j]);
    for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, j) = v(k, order[j]);
  }
  return out;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct LloydRun {
  std::vector<std::size_t> labels;
  double objective;
  std::vector<double> history;
};

void update_centroids(const DenseMatrix& points, const std::vector<std::size_t>& labels,
                      DenseMatrix& centroids) {
  const std::size_t k = centroids.rows();
  std::vector<std::size_t> counts(k, 0);
  std::fill(centroids.values().begin(), centroids.values().end(), 0.0);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    axpy(1.0, points.row(i), centroids.row(labels[i]));
    ++counts[labels[i]];
  }
  for (std::size_t c = 0; c < k; ++c)
    if (counts[c] > 0) scale(centroids.row(c), 1.0 / static_cast<double>(counts[c]));
}

double objective_of(const DenseMatrix& points, const std::vector<std::size_t>& labels,
                    const DenseMatrix& centroids) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i)
    s += squared_distance(points.row(i), centroids.row(labels[i]));
  return s;
}

// Moves the point farthest from its centroid into each empty cluster, taking
// only from clusters that keep at least one member.
void repair_empty(const DenseMatrix& points, std::vector<std::size_t>& labels,
                  DenseMatrix& centroids) {
  const std::size_t k = centroids.rows();
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t l : labels) ++counts[l];
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) continue;
    std::size_t best = points.rows();
    double best_dist = -1.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      if (counts[labels[i]] < 2) continue;
      const double d = squared_distance(points.row(i), centroids.row(labels[i]));
      if (d > best_dist) {
        best_dist = d;
        best = i;
      }
    }
    --counts[labels[best]];
    labels[best] = c;
    counts[c] = 1;
    std::copy(points.row(best).begin(), points.row(best).end(), centroids.row(c).begin());
  }
}

LloydRun lloyd(const DenseMatrix& points, std::size_t k, std::uint64_t seed, int max_iterations) {
  const std::size_t n = points.rows();
  Rng rng(seed);
  DenseMatrix centroids(k, points.cols());

  // Farthest-first traversal from a seeded random row.
  std::vector<std::size_t> chosen{rng.index(n)};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (chosen.size() < k) {
    const std::size_t last = chosen.back();
    std::size_t next = n;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points.row(i), points.row(last)));
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      if (nearest[i] > far) {
        far = nearest[i];
        next = i;
      }
    }
    chosen.push_back(next);
  }
  for (std::size_t c = 0; c < k; ++c) {
    std::copy(points.row(chosen[c]).begin(), points.row(chosen[c]).end(),
              centroids.row(c).begin());
  }

  std::vector<std::size_t> labels(n, k);
  LloydRun run;
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_dist = squared_distance(points.row(i), centroids.row(0));
      for (std::size_t c = 1; c < k; ++c) {
        const double d = squared_distance(points.row(i), centroids.row(c));
        if (d < best_dist) {
          best_dist = d;
          best = c;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    const std::vector<std::size_t> before_repair = labels;
    repair_empty(points, labels, centroids);
    update_centroids(points, labels, centroids);
    run.history.push_back(objective_of(points, labels, centroids));
    if (!changed && labels == before_repair) break;
  }
  run.labels = std::move(labels);
  run.objective = run.history.back();
  return run;
}

}  // namespace

KMeansResult kmeans(const DenseMatrix& points, std::size_t k, std::uint64_t seed, int restarts,
                    int max_iterations) {
  if (k == 0) throw ValidationError("kmeans: k must be positive");
  if (k > points.rows()) {
    throw ValidationError("kmeans: k=" + std::to_string(k) + " exceeds the number of points (" +
                          std::to_string(points.rows()) + ")");
  }
  if (!points.all_finite()) throw ValidationError("kmeans: non-finite coordinate");

  KMeansResult best;
  best.objective = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(restarts, 1); ++r) {
    LloydRun run = lloyd(points, k, seed + static_cast<std::uint64_t>(r), max_iterations);
    if (run.objective < best.objective) {
      best.labels = std::move(run.labels);
      best.objective = run.objective;
      best.history = std::move(run.history);
    }
  }
  return best;
}

}  // namespace gbg
