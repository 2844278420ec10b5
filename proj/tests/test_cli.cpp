#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfal/cli.hpp"
#include "sfal/io.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run(std::initializer_list<std::string> args) {
  std::vector<std::string> store;
  store.emplace_back("sfal");
  store.insert(store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(store.size());
  for (const std::string& s : store) argv.push_back(s.c_str());
  return sfal::run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path fresh_dir(const std::string& leaf) {
  const fs::path dir = fs::temp_directory_path() / "sfal-cli-test" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("usage and version exit codes") {
  CHECK(run({}) == 1);
  CHECK(run({"bogus-subcommand"}) == 1);
  CHECK(run({"simulate"}) == 1);  // --model is required
  CHECK(run({"simulate", "--model", "ou-lin", "--frobnicate", "2"}) == 1);
  CHECK(run({"--version"}) == 0);
  CHECK(run({"--help"}) == 0);
  CHECK(run({"simulate", "--help"}) == 0);
}

TEST_CASE("simulate writes data plus manifest and reruns byte-identically") {
  const fs::path root = fresh_dir("simulate");
  const std::string out1 = (root / "a").string();
  const std::string out2 = (root / "b").string();
  CHECK(run({"simulate", "--model", "ou-lin", "--eps", "0.25", "--T", "0.1", "--n-paths", "2",
             "--out", out1}) == 0);
  REQUIRE(fs::exists(fs::path(out1) / "paths.csv"));
  REQUIRE(fs::exists(fs::path(out1) / "manifest.json"));

  const json manifest = json::parse(sfal::io::read_file((fs::path(out1) / "manifest.json").string()));
  CHECK(manifest["tool"] == "sfal");
  CHECK(manifest["subcommand"] == "simulate");
  CHECK(manifest["version"] == std::string(sfal::kSfalVersion));
  CHECK(manifest["outputs"] == json::array({"paths.csv"}));
  CHECK(manifest["config"]["eps"] == 0.25);
  CHECK(manifest["config"]["n_paths"] == 2);
  // thread count is an execution detail, never part of the recorded config
  CHECK(!manifest["config"].contains("threads"));

  const std::string mpath = (fs::path(out1) / "manifest.json").string();
  CHECK(run({"simulate", "--model", "ou-lin", "--config", mpath, "--out", out2, "--threads",
             "3"}) == 0);
  CHECK(sfal::io::read_file((fs::path(out1) / "paths.csv").string()) ==
        sfal::io::read_file((fs::path(out2) / "paths.csv").string()));
}

TEST_CASE("strict config parsing rejects unknown keys") {
  const fs::path root = fresh_dir("strict");
  const fs::path cfg = root / "bad.json";
  write_text(cfg, "{\"model\": \"ou-lin\", \"badkey\": 3}\n");
  CHECK(run({"simulate", "--model", "ou-lin", "--config", cfg.string()}) == 1);

  // a key valid for one subcommand is still rejected for another
  const fs::path cfg2 = root / "wrongsub.json";
  write_text(cfg2, "{\"eps\": 0.25}\n");
  CHECK(run({"couple", "--model", "ou-lin", "--config", cfg2.string()}) == 1);

  const fs::path cfg3 = root / "notjson.json";
  write_text(cfg3, "not json at all\n");
  CHECK(run({"simulate", "--model", "ou-lin", "--config", cfg3.string()}) == 1);

  CHECK(run({"simulate", "--model", "ou-lin", "--config", (root / "missing.json").string()}) == 1);
}

TEST_CASE("flags take precedence over config file entries") {
  const fs::path root = fresh_dir("precedence");
  const fs::path cfg = root / "cfg.json";
  write_text(cfg, "{\"seed\": 5, \"n_paths\": 3, \"T\": 0.1}\n");
  const std::string oa = (root / "a").string();
  const std::string ob = (root / "b").string();
  const std::string oc = (root / "c").string();
  CHECK(run({"simulate", "--model", "ou-lin", "--config", cfg.string(), "--seed", "7", "--out",
             oa}) == 0);
  CHECK(run({"simulate", "--model", "ou-lin", "--seed", "7", "--n-paths", "3", "--T", "0.1",
             "--out", ob}) == 0);
  CHECK(run({"simulate", "--model", "ou-lin", "--config", cfg.string(), "--out", oc}) == 0);
  const auto read = [](const std::string& dir) {
    return sfal::io::read_file((fs::path(dir) / "paths.csv").string());
  };
  CHECK(read(oa) == read(ob));   // flag seed won
  CHECK(read(oa) != read(oc));   // config seed differs
}

TEST_CASE("manifest of one subcommand cannot drive another") {
  const fs::path root = fresh_dir("crosssub");
  const std::string out1 = (root / "a").string();
  CHECK(run({"simulate", "--model", "ou-lin", "--T", "0.1", "--n-paths", "1", "--out", out1}) ==
        0);
  const std::string mpath = (fs::path(out1) / "manifest.json").string();
  CHECK(run({"couple", "--model", "ou-lin", "--config", mpath}) == 1);
}

TEST_CASE("model parameter files override the base model") {
  const fs::path root = fresh_dir("modelfile");
  const fs::path good = root / "shifted.json";
  write_text(good, "{\"base\": \"ou-lin\", \"x0\": [2.0], \"y0\": [0.0]}\n");
  const std::string oa = (root / "a").string();
  const std::string ob = (root / "b").string();
  CHECK(run({"simulate", "--model", good.string(), "--T", "0.1", "--n-paths", "1", "--out",
             oa}) == 0);
  CHECK(run({"simulate", "--model", "ou-lin", "--T", "0.1", "--n-paths", "1", "--x", "2",
             "--y", "0", "--out", ob}) == 0);
  const std::string pa = sfal::io::read_file((fs::path(oa) / "paths.csv").string());
  const std::string pb = sfal::io::read_file((fs::path(ob) / "paths.csv").string());
  CHECK(pa == pb);

  const fs::path wrong_dim = root / "wrongdim.json";
  write_text(wrong_dim, "{\"base\": \"ou-lin\", \"x0\": [1.0, 2.0]}\n");
  CHECK(run({"simulate", "--model", wrong_dim.string()}) == 1);

  const fs::path stray = root / "stray.json";
  write_text(stray, "{\"base\": \"ou-lin\", \"colour\": 3}\n");
  CHECK(run({"simulate", "--model", stray.string()}) == 1);

  CHECK(run({"simulate", "--model", "no-such-model"}) == 1);
}

TEST_CASE("validation failures exit 1 and blowups exit 2") {
  const fs::path root = fresh_dir("codes");
  // dt above the fast-resolution cap
  CHECK(run({"simulate", "--model", "ou-lin", "--dt", "0.1", "--eps", "0.25"}) == 1);

  const fs::path blow = root / "blow.json";
  write_text(blow, "{\"base\": \"double-well\", \"y0\": [1000000.0]}\n");
  const std::string ob = (root / "b").string();
  CHECK(run({"simulate", "--model", blow.string(), "--eps", "0.01", "--T", "0.2", "--out",
             ob}) == 2);

  // an honest model passes the probe sweep
  const std::string ov = (root / "v").string();
  CHECK(run({"validate-model", "--model", "ou-lin", "--n-pairs", "2000", "--out", ov}) == 0);
  const json rep = json::parse(sfal::io::read_file((fs::path(ov) / "validation.json").string()));
  CHECK(rep["passed"] == true);
  CHECK(rep["violations_contraction"] == 0);

  // an inflated growth constant claim fails the sweep and exits 1
  const fs::path bogus = root / "bogus.json";
  write_text(bogus,
             "{\"base\": \"ou-lin\", \"dissipativity\": {\"C_star\": 0.01}}\n");
  const std::string of = (root / "f").string();
  CHECK(run({"validate-model", "--model", bogus.string(), "--n-pairs", "2000", "--out", of}) ==
        1);
  const json rep2 = json::parse(sfal::io::read_file((fs::path(of) / "validation.json").string()));
  CHECK(rep2["passed"] == false);
}

TEST_CASE("every manifest-driven subcommand reproduces its outputs") {
  const fs::path root = fresh_dir("families");
  struct Case {
    std::string name;
    std::vector<std::string> args;
    std::string data_file;
  };
  const std::vector<Case> cases = {
      {"couple",
       {"couple", "--model", "ou-lin", "--T", "0.5", "--n-paths", "4", "--delta", "0.05"},
       "coupling.csv"},
      {"ergodic",
       {"ergodic", "--model", "ou-lin", "--t-grid", "0.5,1", "--n-samples", "60"},
       "decay.csv"},
      {"invariant", {"invariant", "--model", "ou-lin", "--n-samples", "80"}, "measure.csv"},
      {"average",
       {"average", "--model", "ou-lin", "--x-lo", "-1", "--x-hi", "1", "--nodes", "3",
        "--n-samples", "100"},
       "table.csv"},
      {"khasminskii",
       {"khasminskii", "--model", "ou-lin", "--eps", "0.125", "--T", "0.25", "--n-paths", "4"},
       "khasminskii.csv"},
      {"increments",
       {"increments", "--model", "ou-lin", "--n-paths", "40", "--h-grid", "0.04,0.02"},
       "report.csv"},
      {"residual",
       {"residual", "--model", "ou-lin", "--n-paths", "60", "--T", "0.5", "--tab-samples",
        "200", "--nodes", "5"},
       "residual.csv"},
  };
  for (const Case& c : cases) {
    CAPTURE(c.name);
    const std::string oa = (root / (c.name + "-a")).string();
    const std::string ob = (root / (c.name + "-b")).string();
    std::vector<std::string> first = c.args;
    first.insert(first.end(), {"--out", oa});
    std::vector<std::string> argv1;
    argv1.emplace_back("sfal");
    argv1.insert(argv1.end(), first.begin(), first.end());
    std::vector<const char*> cargv1;
    for (const std::string& s : argv1) cargv1.push_back(s.c_str());
    REQUIRE(sfal::run_cli(static_cast<int>(cargv1.size()), cargv1.data()) == 0);

    const std::string mpath = (fs::path(oa) / "manifest.json").string();
    std::vector<std::string> argv2 = {"sfal", c.args[0], "--model", "ou-lin", "--config",
                                      mpath,  "--out",   ob,       "--threads", "2"};
    if (c.name == "residual" || c.name == "average") {
      // fresh cache directory so the rerun recomputes the table from scratch
      argv2.push_back("--cache-dir");
      argv2.push_back((root / (c.name + "-b-cache")).string());
    }
    std::vector<const char*> cargv2;
    for (const std::string& s : argv2) cargv2.push_back(s.c_str());
    REQUIRE(sfal::run_cli(static_cast<int>(cargv2.size()), cargv2.data()) == 0);

    const std::string da = sfal::io::read_file((fs::path(oa) / c.data_file).string());
    const std::string db = sfal::io::read_file((fs::path(ob) / c.data_file).string());
    CHECK(da == db);
  }
}
