#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using gbg::cli::run_cli;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gbg_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const std::vector<std::string> kTiny{"--classes", "4", "--dim", "3", "--n-max", "40", "--if", "4",
                                     "--epochs1", "1", "--epochs2", "1", "--groups", "2"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"bogus"}).code == 2);
  CHECK(cli({"gen-data"}).code == 2);
  CHECK(cli({"train", "--groups", "notanumber"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("gen-data writes both splits") {
  const fs::path dir = fresh_dir("gen");
  const Run r = cli({"gen-data", "--classes", "3", "--dim", "2", "--n-max", "20", "--if", "4", "--out",
                     (dir / "d.csv").string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "d.csv"));
  CHECK(fs::exists(dir / "d.test.csv"));
  fs::remove_all(dir);
}

TEST_CASE("invalid config leaves no output") {
  const fs::path dir = fresh_dir("invalid");
  std::ofstream(dir / "bad.json") << R"({"train": {"unknown_key": 1}})";
  const Run r = cli({"train", "--config", (dir / "bad.json").string(), "--out-dir", (dir / "out").string()});
  CHECK(r.code == 2);
  CHECK_FALSE(fs::exists(dir / "out"));
  const Run g = cli({"gen-data", "--classes", "1", "--out", (dir / "x.csv").string()});
  CHECK(g.code == 2);
  CHECK_FALSE(fs::exists(dir / "x.csv"));
  fs::remove_all(dir);
}

TEST_CASE("train, group and compare") {
  const fs::path dir = fresh_dir("train");
  CHECK(cli(with({"train"}, with(kTiny, {"--out-dir", (dir / "a").string(), "--no-timestamp"}))).code == 0);
  CHECK(cli(with({"train"}, with(kTiny, {"--out-dir", (dir / "b").string(), "--no-timestamp"}))).code == 0);
  CHECK(fs::exists(dir / "a" / "summary.json"));
  const Run cmp = cli({"compare", "--a", (dir / "a").string(), "--b", (dir / "b").string()});
  CHECK(cmp.code == 0);
  CHECK(cmp.out.rfind("metric,a,b,delta", 0) == 0);
  CHECK(cli(with({"group"}, with(kTiny, {"--warmup-epochs", "1", "--out-dir", (dir / "g").string()}))).code == 0);
  CHECK(fs::exists(dir / "g" / "partition.json"));
  CHECK(cli(with({"group"}, with(kTiny, {"--warmup-epochs", "1", "--checkpoint", "x", "--out-dir", (dir / "h").string()})))
            .code == 2);
  fs::remove_all(dir);
}

TEST_CASE("sweep and diagnose") {
  const fs::path dir = fresh_dir("sweep");
  const fs::path sweep = dir / "sweep.csv";
  CHECK(cli(with({"sweep-groups"}, with(kTiny, {"--groups-list", "1,2", "--seeds", "0,1", "--jobs", "2", "--out",
                                               sweep.string()})))
            .code == 0);
  std::ifstream in(sweep);
  std::string header;
  std::getline(in, header);
  CHECK(header == "groups,seed,balanced_acc,tail_acc,status");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 4);
  const Run agg = cli({"compare", "--sweep", sweep.string()});
  CHECK(agg.code == 0);
  CHECK(agg.out.rfind("groups,runs,balanced_mean", 0) == 0);
  CHECK(cli(with({"diagnose"}, with(kTiny, {"--sampler", "uniform", "--out", (dir / "diag.csv").string()}))).code == 0);
  CHECK(fs::exists(dir / "diag.csv"));
  fs::remove_all(dir);
}
