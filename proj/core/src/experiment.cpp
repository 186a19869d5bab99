#include "gbg/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "gbg/error.hpp"
#include "json.hpp"

namespace gbg {
namespace {

using json = nlohmann::ordered_json;
using Setter = std::function<void(const json&, const std::string&)>;

std::size_t as_size(const json& v, const std::string& key) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
    throw ConfigError(key + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key + ": expected a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError(key + ": expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (v.is_null()) return {};
  if (!v.is_string()) throw ConfigError(key + ": expected a string");
  return v.get<std::string>();
}

void apply_section(const json& doc, const std::string& section, const std::map<std::string, Setter>& fields) {
  if (!doc.contains(section)) return;
  const json& obj = doc.at(section);
  if (!obj.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown key '" + section + "." + key + "'");
    it->second(value, section + "." + key);
  }
}

template <typename Enum>
Enum lookup(const std::map<std::string, Enum, std::less<>>& table, std::string_view name, const char* what) {
  const auto it = table.find(name);
  if (it == table.end()) {
    std::string options;
    for (const auto& [k, v] : table) options += (options.empty() ? "" : ", ") + k;
    throw ConfigError(std::string(what) + ": unknown value '" + std::string(name) + "' (expected " + options + ")");
  }
  return it->second;
}

template <typename Enum>
std::string_view name_of(const std::map<std::string, Enum, std::less<>>& table, Enum value) {
  for (const auto& [k, v] : table)
    if (v == value) return k;
  return "?";
}

const std::map<std::string, ModelKind, std::less<>> kModelKinds = {
    {"linear", ModelKind::linear_softmax}, {"hidden", ModelKind::one_hidden_layer}};
const std::map<std::string, Activation, std::less<>> kActivations = {
    {"relu", Activation::relu}, {"tanh", Activation::tanh}};
const std::map<std::string, GradientScope, std::less<>> kScopes = {
    {"all", GradientScope::all_parameters}, {"last_layer", GradientScope::last_layer}};
const std::map<std::string, MooNormalization, std::less<>> kNormalizations = {
    {"none", MooNormalization::none}, {"l2", MooNormalization::l2}, {"loss", MooNormalization::loss}};
const std::map<std::string, GroupingStrategy, std::less<>> kStrategies = {
    {"gbg", GroupingStrategy::gbg},
    {"random", GroupingStrategy::random},
    {"instance-count", GroupingStrategy::instance_count}};
const std::map<std::string, SamplerMode, std::less<>> kSamplers = {
    {"uniform", SamplerMode::uniform},
    {"class-balanced", SamplerMode::class_balanced},
    {"gac", SamplerMode::gac}};
const std::map<std::string, Baseline, std::less<>> kBaselines = {
    {"none", Baseline::none}, {"ce", Baseline::ce}, {"resample", Baseline::resample}, {"reweight", Baseline::reweight}};

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string_view to_string(Baseline b) { return name_of(kBaselines, b); }
Baseline parse_baseline(std::string_view name) { return lookup(kBaselines, name, "baseline"); }
std::string_view to_string(GroupingStrategy s) { return name_of(kStrategies, s); }
GroupingStrategy parse_grouping_strategy(std::string_view name) { return lookup(kStrategies, name, "strategy"); }
std::string_view to_string(SamplerMode m) { return name_of(kSamplers, m); }
SamplerMode parse_sampler_mode(std::string_view name) { return lookup(kSamplers, name, "sampler"); }

void apply_baseline(TrainConfig& cfg, Baseline baseline) {
  if (baseline == Baseline::none) return;
  cfg.moo_enabled = false;
  cfg.grouping_enabled = false;
  cfg.reweight = baseline == Baseline::reweight;
  cfg.sampler_mode = baseline == Baseline::resample ? SamplerMode::class_balanced : SamplerMode::uniform;
}

TrainConfig ExperimentConfig::effective_train_config() const {
  TrainConfig t = train;
  t.model.feature_dim = dataset.feature_dim;
  t.model.num_classes = dataset.num_classes;
  apply_baseline(t, baseline);
  return t;
}

void ExperimentConfig::validate() const {
  try {
    if (train_csv.empty()) {
      dataset.validate();
      if (!test_csv.empty()) throw ConfigError("dataset.test_csv requires dataset.train_csv");
    } else if (test_csv.empty()) {
      throw ConfigError("dataset.train_csv requires dataset.test_csv for evaluation");
    }
    effective_train_config().validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig parse_experiment_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    (void)value;
    if (key != "dataset" && key != "model" && key != "train" && key != "grouping" && key != "sampler" &&
        key != "report")
      throw ConfigError("unknown section '" + key + "'");
  }

  ExperimentConfig c;
  DatasetSpec& d = c.dataset;
  TrainConfig& t = c.train;
  apply_section(doc, "dataset",
                {{"classes", [&](const json& v, const std::string& k) { d.num_classes = as_size(v, k); }},
                 {"dim", [&](const json& v, const std::string& k) { d.feature_dim = as_size(v, k); }},
                 {"n_max", [&](const json& v, const std::string& k) { d.n_max = as_size(v, k); }},
                 {"imbalance_factor", [&](const json& v, const std::string& k) { d.imbalance_factor = as_double(v, k); }},
                 {"separation", [&](const json& v, const std::string& k) { d.class_separation = as_double(v, k); }},
                 {"noise", [&](const json& v, const std::string& k) { d.noise_sigma = as_double(v, k); }},
                 {"test_per_class", [&](const json& v, const std::string& k) { d.test_per_class = as_size(v, k); }},
                 {"seed", [&](const json& v, const std::string& k) { d.seed = as_size(v, k); }},
                 {"train_csv", [&](const json& v, const std::string& k) { c.train_csv = as_string(v, k); }},
                 {"test_csv", [&](const json& v, const std::string& k) { c.test_csv = as_string(v, k); }}});
  apply_section(doc, "model",
                {{"kind", [&](const json& v, const std::string& k) { t.model.kind = lookup(kModelKinds, as_string(v, k), k.c_str()); }},
                 {"hidden_dim", [&](const json& v, const std::string& k) { t.model.hidden_dim = as_size(v, k); }},
                 {"activation", [&](const json& v, const std::string& k) { t.model.activation = lookup(kActivations, as_string(v, k), k.c_str()); }},
                 {"init_scale", [&](const json& v, const std::string& k) { t.model.init_scale = as_double(v, k); }},
                 {"seed", [&](const json& v, const std::string& k) { t.model.seed = as_size(v, k); }}});
  apply_section(doc, "train",
                {{"epochs_stage1", [&](const json& v, const std::string& k) { t.epochs_stage1 = as_size(v, k); }},
                 {"epochs_stage2", [&](const json& v, const std::string& k) { t.epochs_stage2 = as_size(v, k); }},
                 {"learning_rate", [&](const json& v, const std::string& k) { t.learning_rate = as_double(v, k); }},
                 {"batch_size", [&](const json& v, const std::string& k) { t.batch_size = as_size(v, k); }},
                 {"seed", [&](const json& v, const std::string& k) { t.seed = as_size(v, k); }},
                 {"eval_every", [&](const json& v, const std::string& k) { t.eval_every = as_size(v, k); }},
                 {"momentum", [&](const json& v, const std::string& k) { t.momentum = as_double(v, k); }},
                 {"moo", [&](const json& v, const std::string& k) { t.moo_enabled = as_bool(v, k); }},
                 {"moo_normalization", [&](const json& v, const std::string& k) { t.moo_normalization = lookup(kNormalizations, as_string(v, k), k.c_str()); }},
                 {"critical_tolerance", [&](const json& v, const std::string& k) { t.critical_tolerance = as_double(v, k); }},
                 {"divergence_threshold", [&](const json& v, const std::string& k) { t.divergence_threshold = as_double(v, k); }},
                 {"reweight", [&](const json& v, const std::string& k) { t.reweight = as_bool(v, k); }},
                 {"baseline", [&](const json& v, const std::string& k) { c.baseline = lookup(kBaselines, as_string(v, k), k.c_str()); }}});
  apply_section(doc, "grouping",
                {{"enabled", [&](const json& v, const std::string& k) { t.grouping_enabled = as_bool(v, k); }},
                 {"strategy", [&](const json& v, const std::string& k) { t.grouping_strategy = lookup(kStrategies, as_string(v, k), k.c_str()); }},
                 {"groups", [&](const json& v, const std::string& k) { t.num_groups = as_size(v, k); }},
                 {"scope", [&](const json& v, const std::string& k) { t.grouping_scope = lookup(kScopes, as_string(v, k), k.c_str()); }}});
  apply_section(doc, "sampler",
                {{"mode", [&](const json& v, const std::string& k) { t.sampler_mode = lookup(kSamplers, as_string(v, k), k.c_str()); }},
                 {"completion", [&](const json& v, const std::string& k) { t.gac.enabled = as_bool(v, k); }},
                 {"mu", [&](const json& v, const std::string& k) { t.gac.mu = as_double(v, k); }},
                 {"lambda", [&](const json& v, const std::string& k) { t.gac.lambda = as_double(v, k); }},
                 {"fill_fraction", [&](const json& v, const std::string& k) { t.gac.fill_fraction = as_double(v, k); }}});
  apply_section(doc, "report",
                {{"output_dir", [&](const json& v, const std::string& k) { c.output_dir = as_string(v, k); }},
                 {"many_above", [&](const json& v, const std::string& k) { t.subsets.many_above = as_size(v, k); }},
                 {"few_below", [&](const json& v, const std::string& k) { t.subsets.few_below = as_size(v, k); }},
                 {"tail_classes", [&](const json& v, const std::string& k) { t.tail_classes = as_size(v, k); }}});
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  const DatasetSpec& d = c.dataset;
  const TrainConfig& t = c.train;
  json doc;
  doc["dataset"] = {{"classes", d.num_classes},
                    {"dim", d.feature_dim},
                    {"n_max", d.n_max},
                    {"imbalance_factor", d.imbalance_factor},
                    {"separation", d.class_separation},
                    {"noise", d.noise_sigma},
                    {"test_per_class", d.test_per_class},
                    {"seed", d.seed},
                    {"train_csv", c.train_csv},
                    {"test_csv", c.test_csv}};
  doc["model"] = {{"kind", name_of(kModelKinds, t.model.kind)},
                  {"hidden_dim", t.model.hidden_dim},
                  {"activation", name_of(kActivations, t.model.activation)},
                  {"init_scale", t.model.init_scale},
                  {"seed", t.model.seed}};
  doc["train"] = {{"epochs_stage1", t.epochs_stage1},
                  {"epochs_stage2", t.epochs_stage2},
                  {"learning_rate", t.learning_rate},
                  {"batch_size", t.batch_size},
                  {"seed", t.seed},
                  {"eval_every", t.eval_every},
                  {"momentum", t.momentum},
                  {"moo", t.moo_enabled},
                  {"moo_normalization", name_of(kNormalizations, t.moo_normalization)},
                  {"critical_tolerance", t.critical_tolerance},
                  {"divergence_threshold", t.divergence_threshold},
                  {"reweight", t.reweight},
                  {"baseline", to_string(c.baseline)}};
  doc["grouping"] = {{"enabled", t.grouping_enabled},
                     {"strategy", to_string(t.grouping_strategy)},
                     {"groups", t.num_groups},
                     {"scope", name_of(kScopes, t.grouping_scope)}};
  doc["sampler"] = {{"mode", to_string(t.sampler_mode)},
                    {"completion", t.gac.enabled},
                    {"mu", t.gac.mu},
                    {"lambda", t.gac.lambda},
                    {"fill_fraction", t.gac.fill_fraction}};
  doc["report"] = {{"output_dir", c.output_dir},
                   {"many_above", t.subsets.many_above},
                   {"few_below", t.subsets.few_below},
                   {"tail_classes", t.tail_classes}};
  return doc.dump(2) + "\n";
}

std::string config_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Dataset materialize_dataset(const ExperimentConfig& cfg) {
  if (cfg.train_csv.empty()) return generate_longtailed(cfg.dataset);
  const Dataset train = load_csv(cfg.train_csv, Split::train, cfg.dataset.num_classes);
  const Dataset test = load_csv(cfg.test_csv, Split::test, cfg.dataset.num_classes);
  if (train.feature_dim() != cfg.dataset.feature_dim || test.feature_dim() != cfg.dataset.feature_dim)
    throw ValidationError("dataset files have dimension " + std::to_string(train.feature_dim()) +
                          " but dataset.dim is " + std::to_string(cfg.dataset.feature_dim));
  return merge_splits(train, test);
}

std::filesystem::path default_output_root() {
  const char* env = std::getenv("GBG_OUTPUT_ROOT");
  if (env != nullptr && *env != '\0') return env;
  return "runs";
}

void write_metrics_csv(const std::vector<TrainRecord>& records, std::size_t num_groups,
                       const std::filesystem::path& path) {
  std::ostringstream os;
  os << "iter,epoch,stage,batch_loss";
  for (std::size_t g = 0; g < num_groups; ++g) os << ",loss_" << g;
  for (std::size_t g = 0; g < num_groups; ++g) os << ",alpha_" << g;
  os << ",dstar_sq,critical,cap_hit,completions\n";
  for (const TrainRecord& r : records) {
    os << r.iteration << ',' << r.epoch << ',' << r.stage << ',' << format_double(r.batch_loss);
    for (std::size_t g = 0; g < num_groups; ++g) {
      const bool have = g < r.per_group_losses.size() && g < r.group_present.size() && r.group_present[g];
      os << ',' << (have ? format_double(r.per_group_losses[g]) : "");
    }
    for (std::size_t g = 0; g < num_groups; ++g)
      os << ',' << (g < r.alphas.alphas.size() ? format_double(r.alphas.alphas[g]) : "");
    os << ',' << format_double(r.dstar_sq) << ',' << int(r.pareto_critical) << ',' << int(r.iteration_cap) << ','
       << r.completions << '\n';
  }
  write_text(path, os.str());
}

void write_eval_csv(const std::vector<EvalMetrics>& evals, const std::filesystem::path& path) {
  std::ostringstream os;
  const std::size_t k = evals.empty() ? 0 : evals.front().per_class_accuracy.size();
  os << "epoch,balanced_acc,many_acc,medium_acc,few_acc,tail_acc";
  for (std::size_t c = 0; c < k; ++c) os << ",class_" << c;
  os << '\n';
  for (const EvalMetrics& m : evals) {
    os << m.epoch << ',' << format_double(m.balanced_accuracy) << ',' << format_double(m.many_accuracy) << ','
       << format_double(m.medium_accuracy) << ',' << format_double(m.few_accuracy) << ','
       << format_double(m.tail_accuracy);
    for (double a : m.per_class_accuracy) os << ',' << format_double(a);
    os << '\n';
  }
  write_text(path, os.str());
}

void write_diagnosis_csv(const std::vector<DiagnosisRow>& rows, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "epoch,class,train_count,batches_present,mean_similarity,normalized_grad_norm\n";
  for (const DiagnosisRow& r : rows)
    os << r.epoch << ',' << r.class_id << ',' << r.train_count << ',' << r.batches_present << ','
       << format_double(r.mean_similarity) << ',' << format_double(r.normalized_grad_norm) << '\n';
  write_text(path, os.str());
}

void write_bundle(const std::filesystem::path& dir, const ExperimentConfig& cfg, const TrainResult& result,
                  const BundleInfo& info) {
  std::filesystem::create_directories(dir);
  const std::string config_text = experiment_config_to_json(cfg);
  write_text(dir / "config.json", config_text);
  const TrainConfig t = cfg.effective_train_config();

  std::string checksum;
  if (result.similarity) {
    checksum = similarity_checksum(*result.similarity);
    write_similarity_csv(*result.similarity, dir / "similarity.csv");
  }
  if (result.partition.num_classes() > 0) {
    write_text(dir / "partition.json", partition_to_json(result.partition, checksum) + "\n");
    write_metrics_csv(result.records, result.partition.num_groups(), dir / "metrics.csv");
  }
  write_eval_csv(result.evals, dir / "eval.csv");
  if (!result.params.values.empty()) save_checkpoint(result.params, t.model, dir / "model.ckpt");

  json summary;
  summary["status"] = info.status == RunStatus::ok ? "ok" : "diverged";
  if (!info.message.empty()) summary["message"] = info.message;
  summary["seed"] = t.seed;
  summary["config_hash"] = config_hash(config_text);
  if (info.input_config_hash) summary["input_config_hash"] = *info.input_config_hash;
  if (info.timestamp) summary["timestamp"] = utc_timestamp();
  summary["iterations"] = result.records.size();
  summary["critical_steps"] = result.critical_steps;
  summary["num_groups"] = result.partition.num_groups();
  if (!result.evals.empty()) {
    const EvalMetrics& m = result.evals.back();
    summary["final"] = {{"epoch", m.epoch},
                        {"balanced_accuracy", nan_to_null(m.balanced_accuracy)},
                        {"many_accuracy", nan_to_null(m.many_accuracy)},
                        {"medium_accuracy", nan_to_null(m.medium_accuracy)},
                        {"few_accuracy", nan_to_null(m.few_accuracy)},
                        {"tail_accuracy", nan_to_null(m.tail_accuracy)}};
    json per_class = json::array();
    for (double a : m.per_class_accuracy) per_class.push_back(nan_to_null(a));
    summary["final"]["per_class_accuracy"] = per_class;
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace gbg
