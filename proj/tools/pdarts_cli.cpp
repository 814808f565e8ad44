// pdarts: progressive architecture search from the command line.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdarts/config.hpp"
#include "pdarts/gradcheck_suite.hpp"
#include "pdarts/text_io.hpp"

namespace fs = std::filesystem;
using namespace pdarts;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Flags shared by the subcommands that resolve a RunConfig.
struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::vector<std::string> overrides;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "run configuration (JSON); desk defaults when omitted")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "run seed, overrides the file");
    cmd->add_option("--precision", precision, "f32 or f64, overrides the file")->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_option("--stage-override", overrides, "K=V override of a config path, repeatable")->allow_extra_args(false);
  }

  RunConfig resolve() const {
    auto cfg = parse_run_config(config.empty() ? std::string("{}") : read_text(config), overrides);
    if (seed) cfg.seed = *seed;
    if (precision) cfg.precision = parse_precision(*precision);
    return cfg;
  }
};

void print_error(const std::string& kind, const std::string& field, const std::string& message) {
  std::cerr << "error kind=" << kind;
  if (!field.empty()) std::cerr << " field=" << field;
  std::cerr << " message=" << message << "\n";
}

std::string genotype_text(const fs::path& path) { return read_text(path); }

void write_genotype(const std::optional<fs::path>& out, const Genotype& g) {
  const auto text = genotype_serialize(g);
  std::cout << text;
  if (out) {
    fs::create_directories(*out);
    write_text(*out / "genotype.json", text);
  }
}

std::string counts_line(const std::map<int, int>& hist) {
  std::string s;
  for (const auto& [level, count] : hist) s += (s.empty() ? "" : ",") + std::to_string(level) + ":" + std::to_string(count);
  return s;
}

template <typename T>
void run_search(const RunConfig& cfg, const fs::path& out, bool resume) {
  const auto [train, test] = load_run_data(cfg.data);
  const auto result = run_progressive_search<T>(cfg.search, train, cfg.seed, {out, resume, &std::cerr});
  std::cout << "derived " << (out / "genotype_derived.json").string() << "\n"
            << "refined " << (out / "genotype.json").string() << "\n";
  (void)result;
  (void)test;
}

template <typename T>
void run_eval(const RunConfig& cfg, const Genotype& g, const fs::path& out) {
  const auto [train, test] = load_run_data(cfg.data);
  EvalNet<T> net(g, cfg.eval, train.channels, train.height, train.num_classes, derive_seed(cfg.seed, "eval-init"));
  const auto result = train_eval(net, train, test, cfg.eval, cfg.seed, {out, &std::cerr});
  nlohmann::json j;
  j["final_test_acc"] = result.final_test_acc;
  j["epochs"] = result.epochs.size();
  j["param_count"] = net.params().parameter_count();
  write_text(out / "result.json", j.dump(2) + "\n");
  std::cout << "final_test_acc=" << result.final_test_acc << "\n";
}

// The last stageK/ directory of a search output.
fs::path last_stage_dir(const fs::path& run) {
  fs::path best;
  for (int k = 1; fs::exists(run / ("stage" + std::to_string(k))); ++k) best = run / ("stage" + std::to_string(k));
  if (best.empty()) throw InvalidArgument("no stage directories under " + run.string());
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive differentiable architecture search"};
  app.require_subcommand(1);

  RunFlags search_flags;
  std::string search_out;
  bool resume = false;
  auto* search = app.add_subcommand("search", "run the staged search and write genotypes");
  search_flags.add_to(search);
  search->add_option("--out", search_out, "output directory")->required();
  search->add_flag("--resume", resume, "continue from stage checkpoints in --out");

  std::string derive_alphas, derive_out;
  auto* derive = app.add_subcommand("derive", "derive a genotype from an alpha snapshot");
  derive->add_option("--alphas", derive_alphas, "alphas.json")->required()->check(CLI::ExistingFile);
  derive->add_option("--out", derive_out, "directory for genotype.json");

  std::string refine_alphas, refine_run, refine_out;
  int max_skips = 2;
  std::optional<int> max_skips_reduce;
  auto* refine = app.add_subcommand("refine", "limit skip-connects and re-derive");
  auto* alphas_opt = refine->add_option("--alphas", refine_alphas, "alphas.json")->check(CLI::ExistingFile);
  auto* run_opt = refine->add_option("--run", refine_run, "search output directory")->check(CLI::ExistingDirectory);
  alphas_opt->excludes(run_opt);
  refine->add_option("--max-skips", max_skips, "skip-connects kept in the normal cell")->check(CLI::NonNegativeNumber);
  refine->add_option("--max-skips-reduce", max_skips_reduce, "skip-connects kept in the reduction cell")
      ->check(CLI::NonNegativeNumber);
  refine->add_option("--out", refine_out, "directory for genotype.json");

  std::string stats_genotype, stats_out;
  RunFlags stats_flags;
  auto* stats = app.add_subcommand("stats", "connection levels, skip counts and parameter count");
  stats->add_option("--genotype", stats_genotype, "genotype.json")->required()->check(CLI::ExistingFile);
  stats_flags.add_to(stats);
  stats->add_option("--out", stats_out, "directory for histogram CSVs and stats.json");

  RunFlags eval_flags;
  std::string eval_genotype, eval_out;
  auto* eval = app.add_subcommand("eval", "train the evaluation network of a genotype");
  eval->add_option("--genotype", eval_genotype, "genotype.json")->required()->check(CLI::ExistingFile);
  eval_flags.add_to(eval);
  eval->add_option("--out", eval_out, "output directory")->required();

  int gc_seeds = 20;
  double gc_tol = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite in double precision");
  gradcheck->add_option("--seeds", gc_seeds, "random draws per entry")->check(CLI::PositiveNumber);
  gradcheck->add_option("--tolerance", gc_tol, "max relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto* cmd = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << cmd->help();
    print_error("usage", "", e.what());
    return kExitUsage;
  }

  try {
    if (*search) {
      const auto cfg = search_flags.resolve();
      const fs::path out = search_out;
      fs::create_directories(out);
      write_text(out / "config.json", run_config_to_json(cfg));
      if (cfg.precision == Precision::f64) {
        run_search<double>(cfg, out, resume);
      } else {
        run_search<float>(cfg, out, resume);
      }
    } else if (*derive) {
      const auto arch = arch_from_json(read_text(derive_alphas));
      write_genotype(derive_out.empty() ? std::nullopt : std::optional<fs::path>(derive_out), derive_genotype(arch));
    } else if (*refine) {
      if (refine_alphas.empty() && refine_run.empty()) {
        std::cerr << refine->help();
        print_error("usage", "", "refine needs --alphas or --run");
        return kExitUsage;
      }
      fs::path alphas = refine_alphas;
      if (!refine_run.empty()) {
        alphas = last_stage_dir(refine_run) / "alphas.json";
        const auto cfg = parse_run_config(read_text(fs::path(refine_run) / "config.json"));
        if (cfg.search.schedule.stages.back().dropout == 0.0) {
          std::cerr << "warning: the final search stage ran without skip-connect dropout\n";
        }
      }
      const auto arch = arch_from_json(read_text(alphas));
      const auto before = derive_genotype(arch);
      const auto after = refine_skips(arch, SkipLimits{max_skips, max_skips_reduce});
      std::cerr << "normal skips " << count_skips(before.normal) << " -> " << count_skips(after.normal)
                << ", reduce skips " << count_skips(before.reduce) << " -> " << count_skips(after.reduce) << "\n";
      write_genotype(refine_out.empty() ? std::nullopt : std::optional<fs::path>(refine_out), after);
    } else if (*stats) {
      const auto g = genotype_parse(genotype_text(stats_genotype));
      const auto cfg = stats_flags.resolve();
      const auto count = eval_param_count(g, cfg.eval, 3, cfg.data.classes);
      nlohmann::json j;
      j["nodes"] = g.nodes();
      j["param_count"] = count;
      std::cout << "nodes=" << g.nodes() << "\n";
      for (auto t : {CellType::normal, CellType::reduce}) {
        const auto hist = connection_levels(g.of(t));
        const std::string name(cell_type_name(t));
        const int skips = count_skips(g.of(t));
        std::cout << name << " skips=" << skips << " levels=" << counts_line(hist) << "\n";
        j[name]["skip_count"] = skips;
        for (const auto& [level, n] : hist) j[name]["levels"][std::to_string(level)] = n;
        if (!stats_out.empty()) {
          fs::create_directories(stats_out);
          write_text(fs::path(stats_out) / ("histogram_" + name + ".csv"), histogram_csv(hist));
        }
      }
      std::cout << "param_count=" << count << "\n";
      if (!stats_out.empty()) write_text(fs::path(stats_out) / "stats.json", j.dump(2) + "\n");
    } else if (*eval) {
      const auto cfg = eval_flags.resolve();
      const auto g = genotype_parse(genotype_text(eval_genotype));
      const fs::path out = eval_out;
      fs::create_directories(out);
      write_text(out / "config.json", run_config_to_json(cfg));
      if (cfg.precision == Precision::f64) {
        run_eval<double>(cfg, g, out);
      } else {
        run_eval<float>(cfg, g, out);
      }
    } else if (*gradcheck) {
      const auto report = run_gradcheck_suite(gc_seeds, gc_tol, &std::cout);
      std::cout << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (" << report.entries.size()
                << " entries, " << gc_seeds << " seeds, tolerance " << gc_tol << ")\n";
      return report.passed() ? 0 : kExitFailure;
    }
  } catch (const ConfigError& e) {
    print_error(e.kind(), e.field(), e.what());
    return kExitUsage;
  } catch (const Error& e) {
    print_error(e.kind(), "", e.what());
    return kExitFailure;
  } catch (const fs::filesystem_error& e) {
    print_error("io", "", e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    print_error("internal", "", e.what());
    return kExitFailure;
  }
  return 0;
}
