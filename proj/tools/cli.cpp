#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "gbg/error.hpp"
#include "gbg/experiment.hpp"

namespace gbg::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Raised for bad flag combinations discovered after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flags shared by the commands that build an ExperimentConfig. Only flags
/// actually given override the config file.
struct ConfigFlags {
  std::string config;
  std::optional<std::size_t> classes, dim, n_max;
  std::optional<double> imbalance;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<std::string> data, test_data;
  std::optional<std::size_t> epochs1, epochs2, batch_size, groups, hidden;
  std::optional<double> lr;
  std::optional<std::string> strategy, sampler, model_kind, scope, normalization;

  void add_to(CLI::App& app) {
    app.add_option("--config", config, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--classes", classes, "Number of classes");
    app.add_option("--dim", dim, "Feature dimension");
    app.add_option("--n-max", n_max, "Largest class size");
    app.add_option("--if", imbalance, "Imbalance factor n_max / n_min");
    app.add_option("--data-seed", data_seed, "Synthetic dataset seed");
    app.add_option("--data", data, "Training CSV (instead of synthetic data)");
    app.add_option("--test-data", test_data, "Test CSV paired with --data");
    app.add_option("--seed", seed, "Training and initialization seed");
    app.add_option("--epochs1", epochs1, "Stage-1 warm-up epochs");
    app.add_option("--epochs2", epochs2, "Stage-2 epochs");
    app.add_option("--batch-size", batch_size, "Mini-batch size");
    app.add_option("--lr", lr, "Learning rate");
    app.add_option("--groups", groups, "Number of groups G");
    app.add_option("--strategy", strategy, "Grouping: gbg, random, instance-count");
    app.add_option("--sampler", sampler, "Batches: uniform, class-balanced, gac");
    app.add_option("--model", model_kind, "Model: linear, hidden");
    app.add_option("--hidden", hidden, "Hidden width of the hidden model");
    app.add_option("--scope", scope, "Grouping gradient scope: all, last_layer");
    app.add_option("--moo-normalization", normalization, "Group gradient scaling: none, l2, loss");
  }

  ExperimentConfig build() const {
    ExperimentConfig c;
    if (!config.empty()) c = load_experiment_config(config);
    // Enum-valued flags go through the config parser so the names and
    // error messages stay identical to the file format.
    json patch = json::object();
    if (strategy) patch["grouping"]["strategy"] = *strategy;
    if (scope) patch["grouping"]["scope"] = *scope;
    if (sampler) patch["sampler"]["mode"] = *sampler;
    if (model_kind) patch["model"]["kind"] = *model_kind;
    if (normalization) patch["train"]["moo_normalization"] = *normalization;
    if (!patch.empty()) {
      json merged = json::parse(experiment_config_to_json(c));
      merged.merge_patch(patch);
      c = parse_experiment_config(merged.dump());
    }
    if (classes) c.dataset.num_classes = *classes;
    if (dim) c.dataset.feature_dim = *dim;
    if (n_max) c.dataset.n_max = *n_max;
    if (imbalance) c.dataset.imbalance_factor = *imbalance;
    if (data_seed) c.dataset.seed = *data_seed;
    if (data) c.train_csv = *data;
    if (test_data) c.test_csv = *test_data;
    if (seed) {
      c.train.seed = *seed;
      c.train.model.seed = *seed;
    }
    if (epochs1) c.train.epochs_stage1 = *epochs1;
    if (epochs2) c.train.epochs_stage2 = *epochs2;
    if (batch_size) c.train.batch_size = *batch_size;
    if (lr) c.train.learning_rate = *lr;
    if (groups) c.train.num_groups = *groups;
    if (hidden) c.train.model.hidden_dim = *hidden;
    return c;
  }
};

std::vector<std::size_t> parse_list(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size()) throw UsageError(std::string(what) + ": '" + item + "' is not a non-negative integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError(std::string(what) + ": empty list");
  return out;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

fs::path output_dir_for(const std::optional<std::string>& flag, const ExperimentConfig& cfg, const std::string& name) {
  if (flag) return *flag;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return default_output_root() / name;
}

// gen-data ------------------------------------------------------------------

struct GenDataArgs {
  DatasetSpec spec;
  std::string out;
  std::optional<std::string> test_out;
};

void add_gen_data(CLI::App& app, GenDataArgs& a) {
  app.add_option("--classes", a.spec.num_classes, "Number of classes")->capture_default_str();
  app.add_option("--dim", a.spec.feature_dim, "Feature dimension")->capture_default_str();
  app.add_option("--n-max", a.spec.n_max, "Largest class size")->capture_default_str();
  app.add_option("--if", a.spec.imbalance_factor, "Imbalance factor")->capture_default_str();
  app.add_option("--seed", a.spec.seed, "Dataset seed")->capture_default_str();
  app.add_option("--separation", a.spec.class_separation, "Distance of class means from the origin")
      ->capture_default_str();
  app.add_option("--noise", a.spec.noise_sigma, "Per-feature noise sigma")->capture_default_str();
  app.add_option("--test-per-class", a.spec.test_per_class, "Balanced test rows per class")->capture_default_str();
  app.add_option("--out", a.out, "Training CSV path")->required();
  app.add_option("--test-out", a.test_out, "Test CSV path (default: <out stem>.test.csv)");
}

int run_gen_data(const GenDataArgs& a, std::ostream& out) {
  try {
    a.spec.validate();
    longtailed_counts(a.spec);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  fs::path train_path = a.out;
  fs::path test_path = a.test_out ? fs::path(*a.test_out)
                                  : train_path.parent_path() / (train_path.stem().string() + ".test.csv");
  const Dataset data = generate_longtailed(a.spec);
  if (train_path.has_parent_path()) fs::create_directories(train_path.parent_path());
  if (test_path.has_parent_path()) fs::create_directories(test_path.parent_path());
  write_csv(data, Split::train, train_path);
  write_csv(data, Split::test, test_path);
  out << "wrote " << train_path.string() << " (" << data.indices(Split::train).size() << " rows; counts";
  for (std::size_t n : data.class_counts) out << ' ' << n;
  out << ") and " << test_path.string() << '\n';
  return kExitOk;
}

// group ---------------------------------------------------------------------

struct GroupArgs {
  ConfigFlags flags;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> warmup_epochs;
  std::optional<std::string> out_dir;
};

Dataset load_training_only(const ExperimentConfig& cfg) {
  if (cfg.train_csv.empty()) return generate_longtailed(cfg.dataset);
  return load_csv(cfg.train_csv, Split::train, cfg.dataset.num_classes);
}

int run_group(const GroupArgs& a, std::ostream& out) {
  ExperimentConfig cfg = a.flags.build();
  if (a.warmup_epochs) cfg.train.epochs_stage1 = *a.warmup_epochs;
  if (a.checkpoint && a.warmup_epochs) throw UsageError("--checkpoint and --warmup-epochs are exclusive");
  // Grouping reads only training rows; a test file is not required here.
  ExperimentConfig check = cfg;
  if (!check.train_csv.empty() && check.test_csv.empty()) check.test_csv = check.train_csv;
  check.validate();

  Dataset data = load_training_only(cfg);
  if (data.feature_dim() != cfg.dataset.feature_dim) cfg.dataset.feature_dim = data.feature_dim();
  if (cfg.dataset.num_classes != data.num_classes) cfg.dataset.num_classes = data.num_classes;
  const TrainConfig t = cfg.effective_train_config();
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }

  const ParamVector params = a.checkpoint ? load_checkpoint(*a.checkpoint, t.model) : stage1_warmup(t, data);
  const GroupingResult g = run_grouping(params, t, data);

  const fs::path dir = output_dir_for(a.out_dir, cfg, "group");
  fs::create_directories(dir);
  std::string checksum;
  if (g.similarity) {
    checksum = similarity_checksum(*g.similarity);
    write_similarity_csv(*g.similarity, dir / "similarity.csv");
  }
  {
    std::ofstream f(dir / "partition.json");
    f << partition_to_json(g.partition, checksum) << '\n';
  }
  out << "groups:";
  for (std::size_t id : g.partition.assignment()) out << ' ' << id;
  out << "\nwrote " << (dir / "partition.json").string() << '\n';
  return kExitOk;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  ConfigFlags flags;
  bool no_moo = false;
  bool no_grouping = false;
  std::optional<std::string> baseline;
  std::optional<std::string> out_dir;
  bool no_timestamp = false;
};

std::optional<std::string> file_hash(const std::string& path) {
  if (path.empty()) return std::nullopt;
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_hash(ss.str());
}

int run_train(const TrainArgs& a, std::ostream& out) {
  ExperimentConfig cfg = a.flags.build();
  if (a.no_moo) cfg.train.moo_enabled = false;
  if (a.no_grouping) cfg.train.grouping_enabled = false;
  if (a.baseline) cfg.baseline = parse_baseline(*a.baseline);
  cfg.validate();

  const fs::path dir = output_dir_for(a.out_dir, cfg, "train");
  BundleInfo info;
  info.input_config_hash = file_hash(a.flags.config);
  info.timestamp = !a.no_timestamp;

  const Dataset data = materialize_dataset(cfg);
  TrainResult result;
  try {
    result = train(cfg.effective_train_config(), data);
  } catch (const TrainingError& e) {
    TrainResult partial;
    partial.params = e.last_good();
    info.status = RunStatus::diverged;
    info.message = e.what();
    write_bundle(dir, cfg, partial, info);
    throw;
  }
  write_bundle(dir, cfg, result, info);
  const EvalMetrics& m = result.evals.back();
  out << "balanced_acc=" << fmt(m.balanced_accuracy) << " tail_acc=" << fmt(m.tail_accuracy)
      << " many=" << fmt(m.many_accuracy) << " medium=" << fmt(m.medium_accuracy) << " few=" << fmt(m.few_accuracy)
      << "\nbundle: " << dir.string() << '\n';
  return kExitOk;
}

// sweep-groups --------------------------------------------------------------

struct SweepArgs {
  ConfigFlags flags;
  std::string group_list = "1,2,4,8";
  std::string seed_list = "0,1,2,3,4";
  std::string out;
  std::size_t jobs = 0;
};

struct SweepRow {
  std::size_t groups = 0;
  std::size_t seed = 0;
  double balanced = std::nan("");
  double tail = std::nan("");
  std::string status = "ok";
};

int run_sweep(const SweepArgs& a, std::ostream& out) {
  const ExperimentConfig base = a.flags.build();
  const std::vector<std::size_t> groups = parse_list(a.group_list, "--groups-list");
  const std::vector<std::size_t> seeds = parse_list(a.seed_list, "--seeds");
  std::vector<SweepRow> rows;
  for (std::size_t g : groups) {
    for (std::size_t s : seeds) {
      ExperimentConfig c = base;
      c.train.num_groups = g;
      c.train.seed = s;
      c.train.model.seed = s;
      c.validate();
      rows.push_back({g, s});
    }
  }
  const Dataset data = materialize_dataset(base);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) {
      SweepRow& row = rows[i];
      ExperimentConfig c = base;
      c.train.num_groups = row.groups;
      c.train.seed = row.seed;
      c.train.model.seed = row.seed;
      try {
        const TrainResult r = train(c.effective_train_config(), data);
        row.balanced = r.evals.back().balanced_accuracy;
        row.tail = r.evals.back().tail_accuracy;
      } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
      }
    }
  };
  std::size_t jobs = a.jobs ? a.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, rows.size());
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  const fs::path path = a.out.empty() ? default_output_root() / "sweep_groups.csv" : fs::path(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << "groups,seed,balanced_acc,tail_acc,status\n";
  std::size_t failed = 0;
  for (const SweepRow& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    f << r.groups << ',' << r.seed << ',' << fmt(r.balanced) << ',' << fmt(r.tail) << ',' << status << '\n';
    if (r.status != "ok") ++failed;
  }
  out << "wrote " << rows.size() << " rows to " << path.string();
  if (failed) out << " (" << failed << " failed)";
  out << '\n';
  return kExitOk;
}

// diagnose ------------------------------------------------------------------

struct DiagnoseArgs {
  ConfigFlags flags;
  bool with_gbg = false;
  std::string out;
};

int run_diagnose(const DiagnoseArgs& a, std::ostream& out) {
  ExperimentConfig cfg = a.flags.build();
  cfg.validate();
  const SamplerMode mode = cfg.train.sampler_mode == SamplerMode::gac && !a.with_gbg ? SamplerMode::uniform
                                                                                     : cfg.train.sampler_mode;
  const Dataset data = materialize_dataset(cfg);
  const std::vector<DiagnosisRow> rows =
      diagnose_gradient_imbalance(cfg.effective_train_config(), data, mode, a.with_gbg);
  const fs::path path = a.out.empty() ? default_output_root() / "diagnose.csv" : fs::path(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_diagnosis_csv(rows, path);
  out << "wrote " << rows.size() << " rows to " << path.string() << '\n';
  return kExitOk;
}

// compare -------------------------------------------------------------------

struct CompareArgs {
  std::optional<std::string> a, b, sweep;
  std::string out;
};

json read_summary(const fs::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw std::runtime_error("no summary.json in " + dir.string());
  return json::parse(in);
}

double metric(const json& summary, const char* key) {
  if (!summary.contains("final")) return std::nan("");
  const json& v = summary["final"][key];
  return v.is_number() ? v.get<double>() : std::nan("");
}

int run_compare(const CompareArgs& a, std::ostream& out) {
  if (a.sweep) {
    if (a.a || a.b) throw UsageError("--sweep cannot be combined with --a/--b");
    std::ifstream in(*a.sweep);
    if (!in) throw std::runtime_error("cannot open " + *a.sweep);
    std::string line;
    std::getline(in, line);
    if (line.rfind("groups,seed,balanced_acc,tail_acc", 0) != 0)
      throw ParseError(*a.sweep + ": not a sweep-groups CSV");
    std::map<std::size_t, std::vector<std::pair<double, double>>> by_g;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string g, s, bal, tail, status;
      std::getline(ss, g, ',');
      std::getline(ss, s, ',');
      std::getline(ss, bal, ',');
      std::getline(ss, tail, ',');
      std::getline(ss, status);
      if (status != "ok") continue;
      try {
        by_g[std::stoul(g)].emplace_back(std::stod(bal), std::stod(tail));
      } catch (const std::exception&) {
        throw ParseError(*a.sweep + ": bad row at line " + std::to_string(lineno));
      }
    }
    std::ostringstream os;
    os << "groups,runs,balanced_mean,balanced_se,tail_mean,tail_se\n";
    for (const auto& [g, v] : by_g) {
      auto stats = [&](auto pick) {
        double m = 0.0;
        for (const auto& p : v) m += pick(p);
        m /= static_cast<double>(v.size());
        double var = 0.0;
        for (const auto& p : v) var += (pick(p) - m) * (pick(p) - m);
        const double se = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
        return std::pair{m, se};
      };
      const auto [bm, bs] = stats([](const auto& p) { return p.first; });
      const auto [tm, ts] = stats([](const auto& p) { return p.second; });
      os << g << ',' << v.size() << ',' << fmt(bm) << ',' << fmt(bs) << ',' << fmt(tm) << ',' << fmt(ts) << '\n';
    }
    if (a.out.empty()) {
      out << os.str();
    } else {
      std::ofstream(a.out) << os.str();
      out << "wrote " << a.out << '\n';
    }
    return kExitOk;
  }

  if (!a.a || !a.b) throw UsageError("compare needs --a and --b bundle directories, or --sweep");
  const json sa = read_summary(*a.a);
  const json sb = read_summary(*a.b);
  std::ostringstream os;
  os << "metric,a,b,delta\n";
  for (const char* key : {"balanced_accuracy", "tail_accuracy", "many_accuracy", "medium_accuracy", "few_accuracy"}) {
    const double va = metric(sa, key);
    const double vb = metric(sb, key);
    os << key << ',' << fmt(va) << ',' << fmt(vb) << ',' << fmt(vb - va) << '\n';
  }
  if (a.out.empty()) {
    out << os.str();
  } else {
    std::ofstream(a.out) << os.str();
    out << "wrote " << a.out << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gradient-balancing grouping for long-tailed classification", "gbg"};
  app.require_subcommand(1);

  GenDataArgs gen;
  add_gen_data(*app.add_subcommand("gen-data", "Generate a synthetic long-tailed dataset"), gen);

  GroupArgs group;
  CLI::App* group_cmd = app.add_subcommand("group", "Group classes and write partition/similarity artifacts");
  group.flags.add_to(*group_cmd);
  group_cmd->add_option("--checkpoint", group.checkpoint, "Model checkpoint to group with");
  group_cmd->add_option("--warmup-epochs", group.warmup_epochs, "Train a warm-up model for this many epochs");
  group_cmd->add_option("--out-dir", group.out_dir, "Output directory");

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train and write a report bundle");
  tr.flags.add_to(*train_cmd);
  train_cmd->add_flag("--no-moo", tr.no_moo, "Average group gradients instead of the min-norm combination");
  train_cmd->add_flag("--no-grouping", tr.no_grouping, "Every class is its own objective");
  train_cmd->add_option("--baseline", tr.baseline, "Baseline instead of GBG: ce, resample, reweight");
  train_cmd->add_option("--out-dir", tr.out_dir, "Bundle directory");
  train_cmd->add_flag("--no-timestamp", tr.no_timestamp, "Leave the timestamp out of summary.json");

  SweepArgs sw;
  CLI::App* sweep_cmd = app.add_subcommand("sweep-groups", "Train once per group count and seed");
  sw.flags.add_to(*sweep_cmd);
  sweep_cmd->add_option("--groups-list", sw.group_list, "Comma-separated group counts")->capture_default_str();
  sweep_cmd->add_option("--seeds", sw.seed_list, "Comma-separated seeds")->capture_default_str();
  sweep_cmd->add_option("--out", sw.out, "Sweep CSV path");
  sweep_cmd->add_option("--jobs", sw.jobs, "Worker threads (0: hardware concurrency)");

  DiagnoseArgs dg;
  CLI::App* diag_cmd = app.add_subcommand("diagnose", "Per-class gradient similarity per epoch");
  dg.flags.add_to(*diag_cmd);
  diag_cmd->add_flag("--with-gbg", dg.with_gbg, "Diagnose the full two-stage method");
  diag_cmd->add_option("--out", dg.out, "Diagnosis CSV path");

  CompareArgs cmp;
  CLI::App* cmp_cmd = app.add_subcommand("compare", "Compare two bundles, or summarize a sweep CSV");
  cmp_cmd->add_option("--a", cmp.a, "Reference bundle directory");
  cmp_cmd->add_option("--b", cmp.b, "Candidate bundle directory");
  cmp_cmd->add_option("--sweep", cmp.sweep, "sweep-groups CSV to aggregate into plot data");
  cmp_cmd->add_option("--out", cmp.out, "Output CSV (default: stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (app.got_subcommand("gen-data")) return run_gen_data(gen, out);
    if (app.got_subcommand("group")) return run_group(group, out);
    if (app.got_subcommand("train")) return run_train(tr, out);
    if (app.got_subcommand("sweep-groups")) return run_sweep(sw, out);
    if (app.got_subcommand("diagnose")) return run_diagnose(dg, out);
    if (app.got_subcommand("compare")) return run_compare(cmp, out);
  } catch (const ConfigError& e) {
    err << "gbg: config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "gbg: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "gbg: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace gbg::cli
