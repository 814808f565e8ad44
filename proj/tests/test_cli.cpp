#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "pdarts/text_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() : dir(fs::temp_directory_path() / ("pdarts_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
};

struct Run {
  int code;
  std::string out;
  std::string err;
};

// Runs the CLI inside `cwd` with relative paths.
Run cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" PDARTS_CLI "' " + args + " >stdout.txt 2>stderr.txt";
  const int status = std::system(cmd.c_str());
  Run r{WIFEXITED(status) ? WEXITSTATUS(status) : -1, pdarts::read_text(cwd / "stdout.txt"),
        pdarts::read_text(cwd / "stderr.txt")};
  fs::remove(cwd / "stdout.txt");
  fs::remove(cwd / "stderr.txt");
  return r;
}

std::set<std::string> entries(const fs::path& dir) {
  std::set<std::string> s;
  for (const auto& e : fs::directory_iterator(dir)) s.insert(e.path().filename().string());
  return s;
}

const char* kTiny = R"({"data": {"train_size": 64, "test_size": 32, "classes": 4},
 "search": {"batch_size": 16, "stages": [{"epochs": 2, "warmup_epochs": 1}, {"epochs": 2, "warmup_epochs": 1},
                                         {"epochs": 2, "warmup_epochs": 1, "dropout": 0}]},
 "eval": {"layers": 3, "channels": 8, "epochs": 2, "batch_size": 16}})";

const char* kFlat = R"({"normal": [[{"op": "sep_conv_3x3", "from": 0}, {"op": "skip_connect", "from": 1}],
  [{"op": "max_pool_3x3", "from": 1}, {"op": "skip_connect", "from": 0}]],
 "reduce": [[{"op": "max_pool_3x3", "from": 0}, {"op": "max_pool_3x3", "from": 1}],
  [{"op": "dil_conv_3x3", "from": 0}, {"op": "avg_pool_3x3", "from": 1}]],
 "concat": [2, 3]})";

}  // namespace

TEST_CASE("gradcheck exits 0") {
  Scratch s;
  const auto r = cli(s.dir, "gradcheck");
  CHECK(r.code == 0);
  CHECK(r.out.find("gradcheck passed") != std::string::npos);
  CHECK(entries(s.dir).empty());
}

TEST_CASE("search is deterministic and stays inside --out") {
  Scratch s;
  pdarts::write_text(s.dir / "tiny.json", kTiny);
  const auto a = cli(s.dir, "search --config tiny.json --seed 7 --out run_a");
  const auto b = cli(s.dir, "search --config tiny.json --seed 7 --out run_b");
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(entries(s.dir) == std::set<std::string>{"tiny.json", "run_a", "run_b"});
  for (const char* f : {"genotype.json", "genotype_derived.json", "config.json", "stage1/metrics.csv",
                        "stage2/metrics.csv", "stage3/metrics.csv", "stage3/alphas.json"}) {
    CAPTURE(f);
    CHECK(pdarts::read_text(s.dir / "run_a" / f) == pdarts::read_text(s.dir / "run_b" / f));
  }
  CHECK(pdarts::read_text(s.dir / "run_a/config.json").find("\"seed\": 7") != std::string::npos);

  const auto derived = cli(s.dir, "derive --alphas run_a/stage3/alphas.json --out d");
  CHECK(derived.code == 0);
  CHECK(pdarts::read_text(s.dir / "d/genotype.json") == pdarts::read_text(s.dir / "run_a/genotype_derived.json"));

  const auto refined = cli(s.dir, "refine --run run_a --max-skips 0 --out r");
  CHECK(refined.code == 0);
  CHECK(refined.err.find("warning: the final search stage ran without skip-connect dropout") != std::string::npos);
  CHECK(pdarts::read_text(s.dir / "r/genotype.json").find("skip_connect") == std::string::npos);

  const auto ev = cli(s.dir, "eval --genotype run_a/genotype.json --config tiny.json --out e");
  CHECK(ev.code == 0);
  CHECK(entries(s.dir / "e") == std::set<std::string>{"config.json", "metrics.csv", "model.ckpt", "result.json"});
}

TEST_CASE("stats on a flat genotype") {
  Scratch s;
  pdarts::write_text(s.dir / "flat.json", kFlat);
  const auto r = cli(s.dir, "stats --genotype flat.json --out st");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("normal skips=2 levels=1:4\n") != std::string::npos);
  CHECK(r.out.find("reduce skips=0 levels=1:4\n") != std::string::npos);
  CHECK(r.out.find("param_count=") != std::string::npos);
  CHECK(pdarts::read_text(s.dir / "st/histogram_normal.csv") == "level,count\n1,4\n");
}

TEST_CASE("failures print a machine-readable line") {
  Scratch s;
  pdarts::write_text(s.dir / "bad.json", R"({"search": {"stages": [{}, {"layers": 2}, {}]}})");
  auto r = cli(s.dir, "search --config bad.json --out x");
  CHECK(r.code == 2);
  CHECK(r.err.find("error kind=config field=search.stages[1].layers ") != std::string::npos);
  CHECK_FALSE(fs::exists(s.dir / "x"));

  r = cli(s.dir, "search --out x --stage-override eval.nope=1");
  CHECK(r.code == 2);
  CHECK(r.err.find("field=eval.nope") != std::string::npos);

  r = cli(s.dir, "search --out x --bogus");
  CHECK(r.code == 2);
  CHECK(r.err.find("Usage:") != std::string::npos);
  CHECK(r.err.find("error kind=usage") != std::string::npos);

  pdarts::write_text(s.dir / "broken.json", "{\"normal\": [");
  r = cli(s.dir, "stats --genotype broken.json");
  CHECK(r.code == 1);
  CHECK(r.err.find("error kind=format") != std::string::npos);

  r = cli(s.dir, "refine --max-skips 1");
  CHECK(r.code == 2);
  CHECK(entries(s.dir) == std::set<std::string>{"bad.json", "broken.json"});
}
