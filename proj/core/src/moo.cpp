#include "gbg/moo.hpp"

#include <algorithm>
#include <cmath>

#include "gbg/error.hpp"

namespace gbg {

bool SimplexWeights::on_simplex(double tol) const {
  double sum = 0.0;
  for (double a : alphas) {
    if (!(a >= 0.0)) return false;
    sum += a;
  }
  return std::abs(sum - 1.0) <= tol;
}

double min_norm_two(double g11, double g12, double g22) {
  const double denom = g11 - 2.0 * g12 + g22;  // ||g1 - g2||^2
  if (denom <= 1e-300 * std::max({1.0, g11, g22})) return 0.5;
  return std::clamp((g22 - g12) / denom, 0.0, 1.0);
}

CombinedDirection min_norm_point(const std::vector<Vector>& grads, const MinNormOptions& options) {
  if (grads.empty()) throw ValidationError("min_norm_point: need at least one gradient");
  const std::size_t dim = grads.front().size();
  for (const auto& g : grads) {
    if (g.size() != dim) throw DimensionError("min_norm_point: gradient lengths differ");
    if (!all_finite(g)) throw ValidationError("min_norm_point: non-finite gradient entry");
  }
  const std::size_t n = grads.size();

  DenseMatrix gram(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) gram(i, j) = gram(j, i) = dot(grads[i], grads[j]);

  CombinedDirection out;
  std::vector<double>& alpha = out.weights.alphas;
  alpha.assign(n, 0.0);

  if (n == 1) {
    alpha[0] = 1.0;
  } else if (n == 2 && !options.force_frank_wolfe) {
    const double gamma = min_norm_two(gram(0, 0), gram(0, 1), gram(1, 1));
    alpha = {gamma, 1.0 - gamma};
  } else {
    std::fill(alpha.begin(), alpha.end(), 1.0 / static_cast<double>(n));
    std::vector<double> m_alpha(n);
    int it = 0;
    for (;; ++it) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += gram(i, j) * alpha[j];
        m_alpha[i] = s;
      }
      double quad = 0.0;
      for (std::size_t i = 0; i < n; ++i) quad += alpha[i] * m_alpha[i];
      const auto t = static_cast<std::size_t>(std::min_element(m_alpha.begin(), m_alpha.end()) -
                                              m_alpha.begin());
      const double gap = 2.0 * (quad - m_alpha[t]);
      if (gap <= options.gap_tolerance) break;
      if (it == options.max_iterations) {
        out.hit_iteration_cap = true;
        break;
      }
      // Away vertex: the active coordinate with the largest (M alpha)_i.
      std::size_t s = t;
      for (std::size_t i = 0; i < n; ++i)
        if (alpha[i] > 0.0 && (s == t || m_alpha[i] > m_alpha[s])) s = i;
      const double away_gap = 2.0 * (m_alpha[s] - quad);
      // Exact line search along d: gamma = -d.M alpha / d.M d, clipped.
      if (gap >= away_gap || alpha[s] >= 1.0) {
        const double curv = gram(t, t) - 2.0 * m_alpha[t] + quad;
        const double gamma = curv > 0.0 ? std::clamp((quad - m_alpha[t]) / curv, 0.0, 1.0) : 1.0;
        for (double& a : alpha) a *= 1.0 - gamma;
        alpha[t] += gamma;
      } else {
        const double max_step = alpha[s] / (1.0 - alpha[s]);
        const double curv = quad - 2.0 * m_alpha[s] + gram(s, s);
        const double gamma = curv > 0.0 ? std::clamp((m_alpha[s] - quad) / curv, 0.0, max_step) : max_step;
        for (double& a : alpha) a *= 1.0 + gamma;
        alpha[s] -= gamma;
        if (gamma == max_step || alpha[s] < 0.0) alpha[s] = 0.0;
      }
    }
    out.iterations = it;
  }

  out.direction.assign(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (alpha[i] != 0.0) axpy(alpha[i], grads[i], out.direction);
  out.squared_norm = dot(out.direction, out.direction);
  out.is_pareto_critical = out.squared_norm <= options.critical_tolerance;
  return out;
}

bool pareto_descent_check(std::span<const double> direction, const std::vector<Vector>& grads,
                          double tol) {
  const double sq = dot(direction, direction);
  return std::all_of(grads.begin(), grads.end(),
                     [&](const Vector& g) { return dot(g, direction) >= sq - tol; });
}

bool dominates(std::span<const double> losses_a, std::span<const double> losses_b) {
  if (losses_a.size() != losses_b.size()) throw ValidationError("dominates: loss vectors differ in length");
  bool strict = false;
  for (std::size_t i = 0; i < losses_a.size(); ++i) {
    if (losses_a[i] > losses_b[i]) return false;
    if (losses_a[i] < losses_b[i]) strict = true;
  }
  return strict;
}

}  // namespace gbg
