#include "gbg/grouping.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "gbg/error.hpp"
#include "gbg/rng.hpp"
#include "json.hpp"

namespace gbg {

Partition::Partition(std::size_t num_groups, std::vector<std::size_t> assignment)
    : num_groups_(num_groups), assignment_(std::move(assignment)) {
  if (num_groups_ == 0) throw ValidationError("partition: num_groups must be positive");
  std::vector<std::size_t> sizes(num_groups_, 0);
  for (std::size_t g : assignment_) {
    if (g >= num_groups_) throw ValidationError("partition: group id out of range");
    ++sizes[g];
  }
  for (std::size_t g = 0; g < num_groups_; ++g)
    if (sizes[g] == 0) throw ValidationError("partition: group " + std::to_string(g) + " is empty");
}

Partition Partition::single_group(std::size_t num_classes) {
  return Partition(1, std::vector<std::size_t>(num_classes, 0));
}

Partition Partition::singletons(std::size_t num_classes) {
  std::vector<std::size_t> a(num_classes);
  std::iota(a.begin(), a.end(), 0);
  return Partition(num_classes, std::move(a));
}

std::vector<std::vector<std::size_t>> Partition::groups() const {
  std::vector<std::vector<std::size_t>> out(num_groups_);
  for (std::size_t c = 0; c < assignment_.size(); ++c) out[assignment_[c]].push_back(c);
  return out;
}

Partition canonical(const Partition& p) {
  std::vector<std::size_t> relabel(p.num_groups(), p.num_groups());
  std::size_t next = 0;
  std::vector<std::size_t> a(p.num_classes());
  for (std::size_t c = 0; c < p.num_classes(); ++c) {
    std::size_t& r = relabel[p.group_of(c)];
    if (r == p.num_groups()) r = next++;
    a[c] = r;
  }
  return Partition(p.num_groups(), std::move(a));
}

std::vector<ClassGradient> class_mean_gradients(const ParamVector& params, const ModelConfig& config,
                                                const Dataset& data, GradientScope scope,
                                                std::size_t chunk_rows) {
  if (chunk_rows == 0) throw ValidationError("class_mean_gradients: chunk_rows must be positive");
  for (std::size_t k = 0; k < config.num_classes; ++k) {
    if (k >= data.class_counts.size() || data.class_counts[k] == 0)
      throw ValidationError("class_mean_gradients: class " + std::to_string(k) +
                            " has no training samples");
  }
  const std::vector<std::size_t> rows = data.indices(Split::train);

  // Each chunk is reduced on its own, then chunks are added in order.
  ClassSums total = make_class_sums(params, config);
  for (std::size_t start = 0; start < rows.size(); start += chunk_rows) {
    const std::size_t len = std::min(chunk_rows, rows.size() - start);
    ClassSums part = make_class_sums(params, config);
    accumulate_class_sums(params, config,
                          make_batch(data, std::span<const std::size_t>(rows).subspan(start, len)), part);
    for (std::size_t k = 0; k < config.num_classes; ++k) {
      axpy(1.0, part.grad_sums[k], total.grad_sums[k]);
      total.loss_sums[k] += part.loss_sums[k];
      total.counts[k] += part.counts[k];
    }
  }

  const ParamRange range = scope_range(config, scope);
  std::vector<ClassGradient> out(config.num_classes);
  for (std::size_t k = 0; k < config.num_classes; ++k) {
    const double inv = 1.0 / static_cast<double>(total.counts[k]);
    out[k].class_id = k;
    out[k].sample_count = total.counts[k];
    out[k].loss = total.loss_sums[k] * inv;
    out[k].grad.assign(total.grad_sums[k].begin() + static_cast<std::ptrdiff_t>(range.begin),
                       total.grad_sums[k].begin() + static_cast<std::ptrdiff_t>(range.end));
    scale(out[k].grad, inv);
  }
  return out;
}

SimilarityMatrix similarity_matrix(const std::vector<Vector>& grads) {
  const std::size_t k = grads.size();
  for (const auto& g : grads)
    if (g.size() != grads.front().size()) throw DimensionError("similarity_matrix: gradient lengths differ");
  std::vector<double> norms(k);
  for (std::size_t i = 0; i < k; ++i) norms[i] = norm(grads[i]);

  SimilarityMatrix a{DenseMatrix(k, k)};
  for (std::size_t i = 0; i < k; ++i) {
    a.values(i, i) = 1.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      double v = 0.0;
      if (norms[i] >= 1e-12 && norms[j] >= 1e-12)
        v = std::clamp(dot(grads[i], grads[j]) / (norms[i] * norms[j]), -1.0, 1.0);
      a.values(i, j) = v;
      a.values(j, i) = v;
    }
  }
  return a;
}

SimilarityMatrix similarity_matrix(const std::vector<ClassGradient>& grads) {
  std::vector<Vector> g;
  g.reserve(grads.size());
  for (const auto& cg : grads) g.push_back(cg.grad);
  return similarity_matrix(g);
}

namespace {

double edge_weight(const SimilarityMatrix& a, std::size_t i, std::size_t j, CutWeights w) {
  return w == CutWeights::raw ? a(i, j) : 0.5 * (a(i, j) + 1.0);
}

void check_partition_fits(const SimilarityMatrix& a, const Partition& p) {
  if (p.num_classes() != a.size())
    throw ValidationError("partition covers " + std::to_string(p.num_classes()) +
                          " classes but the similarity matrix has " + std::to_string(a.size()));
}

}  // namespace

double cut_objective(const SimilarityMatrix& a, const Partition& p, CutWeights weights) {
  check_partition_fits(a, p);
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if (p.group_of(i) != p.group_of(j)) total += edge_weight(a, i, j, weights);
  return total;
}

DenseMatrix normalized_laplacian(const SimilarityMatrix& a) {
  const std::size_t k = a.size();
  std::vector<double> inv_sqrt_deg(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < k; ++j) d += edge_weight(a, i, j, CutWeights::shifted);
    inv_sqrt_deg[i] = d > 1e-12 ? 1.0 / std::sqrt(d) : 0.0;
  }
  DenseMatrix lap(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      lap(i, j) = (i == j ? 1.0 : 0.0) -
                  inv_sqrt_deg[i] * edge_weight(a, i, j, CutWeights::shifted) * inv_sqrt_deg[j];
  // Exact symmetry for the eigensolver.
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) lap(j, i) = lap(i, j);
  return lap;
}

Partition spectral_partition(const SimilarityMatrix& a, std::size_t num_groups, std::uint64_t seed) {
  const std::size_t k = a.size();
  if (num_groups == 0 || num_groups > k)
    throw ValidationError("spectral_partition: need 1 <= groups <= " + std::to_string(k) +
                          ", got " + std::to_string(num_groups));
  if (!a.values.all_finite() || !is_symmetric(a.values, 1e-12))
    throw ValidationError("spectral_partition: similarity matrix must be finite and symmetric");
  if (num_groups == 1) return Partition::single_group(k);
  if (num_groups == k) return Partition::singletons(k);

  std::vector<std::size_t> assignment(k, num_groups);
  std::vector<std::size_t> active;
  std::size_t next_group = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < k; ++j) d += edge_weight(a, i, j, CutWeights::shifted);
    if (d <= 1e-12) {
      assignment[i] = std::min(next_group, num_groups - 1);
      ++next_group;
    } else {
      active.push_back(i);
    }
  }
  const std::size_t remaining_groups = num_groups > next_group ? num_groups - next_group : 0;
  if (remaining_groups == 0 || active.empty()) {
    for (std::size_t i : active) assignment[i] = num_groups - 1;
    return canonical(Partition(num_groups, assignment));
  }

  SimilarityMatrix sub{DenseMatrix(active.size(), active.size())};
  for (std::size_t i = 0; i < active.size(); ++i)
    for (std::size_t j = 0; j < active.size(); ++j) sub.values(i, j) = a(active[i], active[j]);

  std::vector<std::size_t> labels;
  if (remaining_groups >= active.size()) {
    labels.resize(active.size());
    std::iota(labels.begin(), labels.end(), 0);
  } else {
    const EigenDecomposition eig = symmetric_eigen(normalized_laplacian(sub), 1e-12);
    DenseMatrix embedding(active.size(), remaining_groups);
    for (std::size_t i = 0; i < active.size(); ++i) {
      for (std::size_t c = 0; c < remaining_groups; ++c) embedding(i, c) = eig.eigenvectors(i, c);
      const double len = norm(embedding.row(i));
      if (len > 1e-15) scale(embedding.row(i), 1.0 / len);
    }
    labels = kmeans(embedding, remaining_groups, seed).labels;
  }
  for (std::size_t i = 0; i < active.size(); ++i) assignment[active[i]] = next_group + labels[i];
  return canonical(Partition(num_groups, assignment));
}

std::uint64_t stirling2(std::size_t n, std::size_t k, std::uint64_t cap) {
  // S(n, k) = k S(n-1, k) + S(n-1, k-1), saturated above cap.
  const std::uint64_t sat = cap + 1;
  std::vector<std::uint64_t> row(k + 1, 0);
  row[0] = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = std::min(i, k); j >= 1; --j) {
      // Both terms are at most sat, so j * row[j] + row[j - 1] > sat is
      // tested without overflow.
      const bool saturates = row[j - 1] >= sat || row[j] > (sat - row[j - 1]) / j;
      row[j] = saturates ? sat : j * row[j] + row[j - 1];
    }
    row[0] = 0;
  }
  return row[k];
}

namespace {

struct CutSearch {
  const SimilarityMatrix& a;
  std::size_t k;
  std::size_t groups;
  std::vector<std::size_t> current;
  std::vector<std::size_t> best;
  double best_value = std::numeric_limits<double>::infinity();

  // Restricted-growth strings in lexicographic order; `used` blocks so far.
  void visit(std::size_t pos, std::size_t used, double value) {
    if (pos == k) {
      if (used == groups && (best.empty() || value < best_value - 1e-12 * std::max(1.0, std::abs(best_value)))) {
        best_value = value;
        best = current;
      }
      return;
    }
    if (groups - used > k - pos) return;
    const std::size_t top = std::min(used + 1, groups);
    for (std::size_t g = 0; g < top; ++g) {
      double added = 0.0;
      for (std::size_t j = 0; j < pos; ++j)
        if (current[j] != g) added += 2.0 * edge_weight(a, pos, j, CutWeights::shifted);
      current[pos] = g;
      visit(pos + 1, std::max(used, g + 1), value + added);
    }
  }
};

}  // namespace

Partition brute_force_partition(const SimilarityMatrix& a, std::size_t num_groups) {
  const std::size_t k = a.size();
  if (num_groups == 0 || num_groups > k)
    throw ValidationError("brute_force_partition: need 1 <= groups <= " + std::to_string(k));
  const std::uint64_t count = stirling2(k, num_groups, kBruteForceLimit);
  if (count > kBruteForceLimit) {
    throw ValidationError("brute_force_partition: more than " + std::to_string(kBruteForceLimit) +
                          " partitions of " + std::to_string(k) + " classes into " +
                          std::to_string(num_groups) + " groups; refusing to enumerate");
  }
  CutSearch search{a, k, num_groups, std::vector<std::size_t>(k, 0), {}};
  search.visit(0, 0, 0.0);
  return Partition(num_groups, search.best);
}

Partition baseline_partition(const std::vector<std::size_t>& class_counts, std::size_t num_groups,
                             BaselineStrategy strategy, std::uint64_t seed) {
  const std::size_t k = class_counts.size();
  if (num_groups == 0 || num_groups > k)
    throw ValidationError("baseline_partition: need 1 <= groups <= " + std::to_string(k));
  std::vector<std::size_t> assignment(k, 0);

  if (strategy == BaselineStrategy::instance_count) {
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return class_counts[x] > class_counts[y]; });
    // Chunk sizes: the first k % g chunks take the ceiling.
    const std::size_t base = k / num_groups;
    const std::size_t extra = k % num_groups;
    std::size_t pos = 0;
    for (std::size_t g = 0; g < num_groups; ++g) {
      const std::size_t len = base + (g < extra ? 1 : 0);
      for (std::size_t i = 0; i < len; ++i) assignment[order[pos++]] = g;
    }
    return Partition(num_groups, std::move(assignment));
  }

  Rng rng(seed);
  std::vector<std::size_t> sizes(num_groups, 0);
  for (std::size_t c = 0; c < k; ++c) {
    assignment[c] = rng.index(num_groups);
    ++sizes[assignment[c]];
  }
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (sizes[g] > 0) continue;
    const auto donor = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    std::vector<std::size_t> members;
    for (std::size_t c = 0; c < k; ++c)
      if (assignment[c] == donor) members.push_back(c);
    const std::size_t moved = members[rng.index(members.size())];
    assignment[moved] = g;
    --sizes[donor];
    ++sizes[g];
  }
  return Partition(num_groups, std::move(assignment));
}

std::string similarity_checksum(const SimilarityMatrix& a) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : a.values.values()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string partition_to_json(const Partition& p, const std::string& checksum) {
  nlohmann::ordered_json j;
  j["num_groups"] = p.num_groups();
  j["assignment"] = p.assignment();
  j["similarity_checksum"] = checksum;
  return j.dump(2) + "\n";
}

Partition partition_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    return Partition(j.at("num_groups").get<std::size_t>(),
                     j.at("assignment").get<std::vector<std::size_t>>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("partition JSON: ") + e.what());
  }
}

void write_similarity_csv(const SimilarityMatrix& a, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "class";
  for (std::size_t j = 0; j < a.size(); ++j) out << ",c" << j;
  out << '\n';
  for (std::size_t i = 0; i < a.size(); ++i) {
    out << i;
    for (std::size_t j = 0; j < a.size(); ++j) out << ',' << a(i, j);
    out << '\n';
  }
}

}  // namespace gbg
