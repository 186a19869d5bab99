#include "gbg/datagen.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>

#include "gbg/error.hpp"
#include "gbg/rng.hpp"

namespace gbg {

std::size_t DatasetSpec::n_min() const {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n_max) / imbalance_factor));
}

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ValidationError("dataset: num_classes must be at least 2");
  if (feature_dim == 0) throw ValidationError("dataset: feature_dim must be positive");
  if (n_max == 0) throw ValidationError("dataset: n_max must be positive");
  if (!(imbalance_factor >= 1.0) || !std::isfinite(imbalance_factor))
    throw ValidationError("dataset: imbalance_factor must be a finite value >= 1");
  if (!(class_separation > 0.0)) throw ValidationError("dataset: class_separation must be > 0");
  if (!(noise_sigma > 0.0)) throw ValidationError("dataset: noise_sigma must be > 0");
  if (n_min() < 1) {
    throw ValidationError("dataset: n_min = round(n_max / imbalance_factor) is 0");
  }
}

std::vector<std::size_t> longtailed_counts(const DatasetSpec& spec) {
  std::vector<std::size_t> counts(spec.num_classes);
  const double denom = static_cast<double>(spec.num_classes - 1);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const double n = static_cast<double>(spec.n_max) *
                     std::pow(spec.imbalance_factor, -static_cast<double>(k) / denom);
    const long long rounded = std::llround(n);
    if (rounded < 1) {
      throw ValidationError("dataset: class " + std::to_string(k) +
                            " rounds to zero training samples");
    }
    counts[k] = static_cast<std::size_t>(rounded);
  }
  return counts;
}

std::vector<std::size_t> Dataset::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == which) out.push_back(i);
  return out;
}

std::vector<std::vector<std::size_t>> Dataset::class_members() const {
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (split[i] == Split::train) members[static_cast<std::size_t>(labels[i])].push_back(i);
  return members;
}

std::vector<std::size_t> Dataset::test_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (split[i] == Split::test) ++counts[static_cast<std::size_t>(labels[i])];
  return counts;
}

void Dataset::validate() const {
  if (features.rows() != labels.size() || split.size() != labels.size())
    throw ValidationError("dataset: features, labels and split differ in length");
  if (class_counts.size() != num_classes)
    throw ValidationError("dataset: class_counts length differs from num_classes");
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw ValidationError("dataset: label out of range at row " + std::to_string(i));
    if (split[i] == Split::train) ++counts[static_cast<std::size_t>(labels[i])];
  }
  if (counts != class_counts) throw ValidationError("dataset: class_counts inconsistent with labels");
  if (!features.all_finite()) throw ValidationError("dataset: non-finite feature");
}

Dataset generate_longtailed(const DatasetSpec& spec) {
  spec.validate();
  const std::vector<std::size_t> counts = longtailed_counts(spec);
  const std::size_t k_classes = spec.num_classes;
  const std::size_t dim = spec.feature_dim;

  Rng rng(spec.seed);
  DenseMatrix means(k_classes, dim);
  for (std::size_t k = 0; k < k_classes; ++k) {
    auto row = means.row(k);
    double len = 0.0;
    while (len < 1e-12) {
      for (double& v : row) v = rng.normal();
      len = norm(row);
    }
    scale(row, spec.class_separation / len);
  }

  std::size_t n_train = 0;
  for (std::size_t c : counts) n_train += c;
  const std::size_t n_total = n_train + spec.test_per_class * k_classes;

  Dataset data;
  data.num_classes = k_classes;
  data.class_counts = counts;
  data.features = DenseMatrix(n_total, dim);
  data.labels.reserve(n_total);
  data.split.reserve(n_total);

  std::size_t row = 0;
  auto emit = [&](std::size_t k, Split s) {
    auto out = data.features.row(row++);
    for (std::size_t j = 0; j < dim; ++j) out[j] = means(k, j) + spec.noise_sigma * rng.normal();
    data.labels.push_back(static_cast<int>(k));
    data.split.push_back(s);
  };
  for (std::size_t k = 0; k < k_classes; ++k)
    for (std::size_t i = 0; i < counts[k]; ++i) emit(k, Split::train);
  for (std::size_t k = 0; k < k_classes; ++k)
    for (std::size_t i = 0; i < spec.test_per_class; ++i) emit(k, Split::test);
  return data;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& why) {
  throw ParseError(path.string() + ":" + std::to_string(line) + ": " + why);
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, Split split, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());

  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != 2 || cells[0] != "label" || cells[1].rfind("d=", 0) != 0)
      fail(path, line_no, "expected header 'label,d=<int>'");
    const std::string d = cells[1].substr(2);
    const auto [p, ec] = std::from_chars(d.data(), d.data() + d.size(), dim);
    if (ec != std::errc() || p != d.data() + d.size() || dim == 0)
      fail(path, line_no, "header dimension must be a positive integer");
    have_header = true;
    break;
  }
  if (!have_header) throw ParseError(path.string() + ": empty file");

  std::vector<int> labels;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != dim + 1) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(dim + 1) + " fields, found " +
                        std::to_string(cells.size()));
    }
    int label = 0;
    {
      const auto& c = cells[0];
      const auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), label);
      if (ec != std::errc() || p != c.data() + c.size() || label < 0)
        fail(path, line_no, "label must be a nonnegative integer");
    }
    for (std::size_t j = 1; j <= dim; ++j) {
      const auto& c = cells[j];
      double v = 0.0;
      const auto [p, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || p != c.data() + c.size())
        fail(path, line_no, "malformed feature '" + c + "'");
      if (!std::isfinite(v)) fail(path, line_no, "non-finite feature '" + c + "'");
      values.push_back(v);
    }
    labels.push_back(label);
  }
  if (labels.empty()) throw ParseError(path.string() + ": no data rows");

  std::size_t k = num_classes;
  if (k == 0) {
    for (int l : labels) k = std::max(k, static_cast<std::size_t>(l) + 1);
  }
  Dataset data;
  data.num_classes = k;
  data.features = DenseMatrix(labels.size(), dim, std::move(values));
  data.split.assign(labels.size(), split);
  data.class_counts.assign(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (static_cast<std::size_t>(labels[i]) >= k)
      throw ValidationError(path.string() + ": label " + std::to_string(labels[i]) +
                            " out of range for " + std::to_string(k) + " classes");
    if (split == Split::train) ++data.class_counts[static_cast<std::size_t>(labels[i])];
  }
  data.labels = std::move(labels);
  return data;
}

void write_csv(const Dataset& data, Split which, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "label,d=" << data.feature_dim() << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.split[i] != which) continue;
    out << data.labels[i];
    for (double v : data.features.row(i)) out << ',' << v;
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset merge_splits(const Dataset& train, const Dataset& test) {
  if (train.feature_dim() != test.feature_dim())
    throw DimensionError("merge_splits: feature dimensions differ");
  Dataset out;
  out.num_classes = std::max(train.num_classes, test.num_classes);
  std::vector<double> values = train.features.values();
  values.insert(values.end(), test.features.values().begin(), test.features.values().end());
  out.features = DenseMatrix(train.size() + test.size(), train.feature_dim(), std::move(values));
  out.labels = train.labels;
  out.labels.insert(out.labels.end(), test.labels.begin(), test.labels.end());
  out.split.assign(train.size(), Split::train);
  out.split.insert(out.split.end(), test.size(), Split::test);
  out.class_counts.assign(out.num_classes, 0);
  for (std::size_t i = 0; i < train.size(); ++i)
    ++out.class_counts[static_cast<std::size_t>(train.labels[i])];
  return out;
}

}  // namespace gbg
