#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gbg/numkit.hpp"

namespace gbg {

/// Convex-combination weights: nonnegative, summing to one.
struct SimplexWeights {
  std::vector<double> alphas;
  std::size_t size() const noexcept { return alphas.size(); }
  bool on_simplex(double tol = 1e-9) const;
};

struct CombinedDirection {
  Vector direction;
  SimplexWeights weights;
  double squared_norm = 0.0;
  bool is_pareto_critical = false;
  /// Frank-Wolfe stopped at its iteration cap before the gap tolerance.
  bool hit_iteration_cap = false;
  int iterations = 0;
};

struct MinNormOptions {
  /// Use Frank-Wolfe even for two gradients.
  bool force_frank_wolfe = false;
  int max_iterations = 500;
  double gap_tolerance = 1e-9;
  double critical_tolerance = 1e-10;
};

/// Min-norm point of the convex hull of `grads`: argmin over the simplex of
/// ||sum_i alpha_i g_i||^2. Closed form for one or two gradients, Frank-Wolfe
/// with away steps and exact line search on the Gram matrix otherwise.
CombinedDirection min_norm_point(const std::vector<Vector>& grads, const MinNormOptions& options = {});

/// Two-gradient closed form: alpha_1 = clamp(((g2 - g1) . g2) / ||g1 - g2||^2, 0, 1).
double min_norm_two(double g11, double g12, double g22);

/// True iff g_i . d >= ||d||^2 - tol for every gradient.
bool pareto_descent_check(std::span<const double> direction, const std::vector<Vector>& grads,
                          double tol);

/// Pareto dominance of loss vectors: a <= b everywhere and a < b somewhere.
bool dominates(std::span<const double> losses_a, std::span<const double> losses_b);

}  // namespace gbg
