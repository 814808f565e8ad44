#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "pdarts/search.hpp"
#include "test_util.hpp"

using namespace pdarts;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("pdarts-search-" + tag)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SearchConfig tiny_config(int epochs, int warmup) {
  SearchConfig cfg;
  cfg.schedule = StageSchedule::desk(epochs, warmup);
  cfg.nodes = 2;
  cfg.batch_size = 16;
  return cfg;
}

template <typename T>
std::vector<T> flat(const ParamStore<T>& store) {
  std::vector<T> v;
  for (const auto& [name, t] : store.params()) v.insert(v.end(), t.data().begin(), t.data().end());
  return v;
}

}  // namespace

TEST_CASE("dropout decay") {
  const auto p = DropoutPolicy::decaying(0.7, 25);
  CHECK(p.rate(0) == 0.7);
  const auto none = DropoutPolicy::decaying(0.0, 25);
  for (int e = 0; e <= 25; ++e) CHECK(none.rate(e) == 0.0);
  const DropoutPolicy q{0.4, 25, 0.02};
  CHECK(q.rate(25) == doctest::Approx(0.02).epsilon(1e-12));
  const double gamma = std::exp(std::log(0.02 / 0.4) / 25);
  for (int e = 0; e < 25; ++e) {
    CHECK(q.rate(e) == doctest::Approx(0.4 * std::pow(gamma, e)).epsilon(1e-12));
    CHECK(q.rate(e + 1) <= q.rate(e));
  }
  CHECK(DropoutPolicy::decaying(0.4, 25).floor == doctest::Approx(0.02));
  CHECK_THROWS_AS(q.rate(26), InvalidArgument);
}

TEST_CASE("schedule validation") {
  CHECK_NOTHROW(StageSchedule::cifar10().validate());
  CHECK_NOTHROW(StageSchedule::desk().validate());
  const auto full = StageSchedule::cifar10();
  CHECK(full.stages[1].layers == 11);
  CHECK(full.stages[2].candidates == 3);
  CHECK(full.stages[2].dropout == 0.7);
  auto field = [](auto mutate) {
    auto s = StageSchedule::cifar10();
    mutate(s);
    try {
      s.validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("accepted");
  };
  CHECK(field([](StageSchedule& s) { s.stages[1].layers = 5; }) == "stages[1].layers");
  CHECK(field([](StageSchedule& s) { s.stages[2].candidates = 5; }) == "stages[2].candidates");
  CHECK(field([](StageSchedule& s) { s.stages[0].candidates = 7; }) == "stages[0].candidates");
  CHECK(field([](StageSchedule& s) { s.stages[2].candidates = 1; }) == "stages[2].candidates");
  CHECK(field([](StageSchedule& s) { s.stages[1].dropout = 1.0; }) == "stages[1].dropout");
  CHECK(field([](StageSchedule& s) { s.stages[0].warmup_epochs = 30; }) == "stages[0].warmup_epochs");
  CHECK(field([](StageSchedule& s) { s.stages.clear(); }) == "stages");
}

TEST_CASE("prune_operations") {
  SUBCASE("keeps the heaviest candidates") {
    const std::vector<OpKind> ops{OpKind::zero, OpKind::skip_connect, OpKind::max_pool_3x3, OpKind::sep_conv_3x3};
    CellArch arch{CellSchema::uniform(1, ops), {}};
    for (int e = 0; e < 2; ++e) arch.alpha.push_back({std::log(0.1), std::log(0.4), std::log(0.2), std::log(0.3)});
    const auto pruned = prune_cell(arch, 2);
    for (const auto& c : pruned.candidates) CHECK(c == std::vector<OpKind>{OpKind::skip_connect, OpKind::sep_conv_3x3});
    CHECK_THROWS_AS(prune_cell(arch, 4), InvalidArgument);
    CHECK_THROWS_AS(prune_cell(arch, 0), InvalidArgument);
  }
  SUBCASE("ties go to the lower operation index") {
    CellArch arch{CellSchema::full(1), {std::vector<double>(8, 0.5), std::vector<double>(8, 0.5)}};
    arch.alpha[1][6] = 1.0;
    const auto pruned = prune_cell(arch, 3);
    CHECK(pruned.candidates[0] == std::vector<OpKind>{OpKind::zero, OpKind::skip_connect, OpKind::max_pool_3x3});
    CHECK(pruned.candidates[1] == std::vector<OpKind>{OpKind::zero, OpKind::skip_connect, OpKind::dil_conv_3x3});
  }
  SUBCASE("two rounds agree with a brute-force ranking") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      const auto arch = oracle::random_arch(CellSchema::full(4), rng, 1.0);
      const auto five = prune_cell(arch, 5);
      CellArch mid{five, {}};
      for (std::size_t e = 0; e < five.candidates.size(); ++e) {
        std::vector<double> row;
        for (auto k : five.candidates[e]) row.push_back(arch.alpha[e][static_cast<std::size_t>(op_index(k))]);
        mid.alpha.push_back(row);
      }
      const auto three = prune_cell(mid, 3);
      for (std::size_t e = 0; e < arch.alpha.size(); ++e) {
        REQUIRE(five.candidates[e].size() == 5);
        REQUIRE(three.candidates[e].size() == 3);
        // Brute force: an op survives iff fewer than k ops on the edge have a strictly larger alpha.
        std::vector<OpKind> expect;
        for (int i = 0; i < kNumOps; ++i) {
          int larger = 0;
          for (int j = 0; j < kNumOps; ++j) larger += arch.alpha[e][static_cast<std::size_t>(j)] > arch.alpha[e][static_cast<std::size_t>(i)];
          if (larger < 3) expect.push_back(kAllOps[static_cast<std::size_t>(i)]);
        }
        CHECK(three.candidates[e] == expect);
      }
      // Per-edge top-1 is invariant under adding a constant to the edge's alphas.
      auto shifted = arch;
      for (auto& row : shifted.alpha) {
        const double c = rng.normal(0.0, 10.0);
        for (auto& v : row) v += c;
      }
      CHECK(prune_cell(shifted, 1).candidates == prune_cell(arch, 1).candidates);
    }
  }
}

TEST_CASE("weight and alpha steps") {
  const auto data = synth_dataset(SynthPreset::easy_fit, 3, 64, 4, 8);
  auto cfg = tiny_config(3, 1);
  const auto schema = SearchSchema{CellSchema::full(2), CellSchema::full(2)};
  auto state = init_stage<double>(cfg, 0, schema, data, 5);
  std::vector<std::int64_t> idx(16);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
  const auto batch = make_batch<double>(data, idx);

  SUBCASE("weight step leaves alphas without gradients") {
    const auto before = flat(state.alphas.store);
    weight_step(state, cfg, batch, {}, 0.025);
    for (const auto& [name, t] : state.alphas.store.params()) CHECK_FALSE(t.has_grad());
    CHECK(test_util::bit_equal(flat(state.alphas.store), before));
  }
  SUBCASE("zero learning rate leaves the weights unchanged") {
    const auto before = flat(state.net.params());
    weight_step(state, cfg, batch, {}, 0.0);
    CHECK(test_util::bit_equal(flat(state.net.params()), before));
  }
  SUBCASE("alpha steps keep the weights and the simplex") {
    const auto before = flat(state.net.params());
    double worst = 0;
    for (int step = 0; step < 200; ++step) {
      alpha_step(state, cfg, batch, {});
      for (auto t : {CellType::normal, CellType::reduce}) {
        for (const auto& a : state.alphas.of(t)) {
          const auto w = softmax(a);
          double s = 0;
          for (double v : w.data()) s += v;
          worst = std::max(worst, std::abs(s - 1.0));
        }
      }
    }
    CHECK(worst <= 1e-6);
    CHECK(test_util::bit_equal(flat(state.net.params()), before));
    for (const auto& [name, t] : state.net.params().params()) CHECK_FALSE(t.has_grad());
  }
  SUBCASE("training loss falls over 100 steps") {
    auto s = init_stage<float>(cfg, 0, schema, data, 5);
    std::vector<double> losses;
    for (int step = 0; step < 100; ++step) {
      const auto order = shuffled_batches(data.size(), 16, static_cast<std::uint64_t>(step));
      losses.push_back(weight_step(s, cfg, make_batch<float>(data, order[0]), {}, 0.025));
    }
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
      first += losses[static_cast<std::size_t>(i)];
      last += losses[static_cast<std::size_t>(90 + i)];
    }
    MESSAGE("mean loss " << first / 10 << " -> " << last / 10);
    CHECK(last < first);
  }
}

TEST_CASE("a dominating candidate wins the alpha race") {
  // Two layers make both cells reductions, and the last one feeds the
  // classifier without a BN in between, so scaling the sep_conv branch up
  // against zero lowers the loss on every reduce edge. Normal alphas are unused.
  const auto data = synth_dataset(SynthPreset::easy_fit, 4, 64, 4, 8);
  auto cfg = tiny_config(3, 1);
  const auto cell = CellSchema::uniform(2, {OpKind::zero, OpKind::sep_conv_3x3});
  auto state = init_stage<float>(cfg, 0, SearchSchema{cell, cell}, data, 6);
  REQUIRE(state.net.config().layers == 2);
  const auto normal_before = state.alphas.snapshot().normal.alpha;
  for (int step = 0; step < 200; ++step) {
    const auto order = shuffled_batches(data.size(), 16, static_cast<std::uint64_t>(step));
    weight_step(state, cfg, make_batch<float>(data, order[0]), {}, 0.025);
    alpha_step(state, cfg, make_batch<float>(data, order[1]), {});
  }
  for (const auto& a : state.alphas.of(CellType::reduce)) CHECK(a.data()[1] > a.data()[0]);
  CHECK(state.alphas.snapshot().normal.alpha == normal_before);
}

TEST_CASE("run_stage") {
  const auto data = synth_dataset(SynthPreset::easy_fit, 7, 64, 4, 8);
  const auto [train, val] = split_half(data, 7);
  const auto schema = SearchSchema{CellSchema::full(2), CellSchema::full(2)};
  SUBCASE("no alpha updates when every epoch is warmup") {
    auto cfg = tiny_config(2, 2);
    auto state = init_stage<float>(cfg, 0, schema, data, 8);
    const auto before = flat(state.alphas.store);
    run_stage(state, cfg, train, val, 8);
    CHECK(test_util::bit_equal(flat(state.alphas.store), before));
    CHECK(state.metrics.size() == 2);
  }
  SUBCASE("entropy falls once alphas train") {
    auto cfg = tiny_config(4, 1);
    cfg.alpha_optimizer.lr.lr_max = 6e-3;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto state = init_stage<float>(cfg, 0, schema, data, seed);
      run_stage(state, cfg, train, val, seed);
      REQUIRE(state.metrics.size() == 4);
      CHECK(state.metrics.back().mean_edge_entropy < state.metrics[0].mean_edge_entropy);
    }
  }
  SUBCASE("resuming reproduces an uninterrupted run") {
    TempDir dir("resume");
    auto cfg = tiny_config(3, 1);
    auto full = init_stage<float>(cfg, 1, SearchSchema{CellSchema::uniform(2, {OpKind::skip_connect, OpKind::sep_conv_3x3, OpKind::max_pool_3x3, OpKind::dil_conv_3x3, OpKind::zero}), CellSchema::full(2)}, data, 9);
    const auto schema1 = full.alphas.schema;
    run_stage(full, cfg, train, val, 9);

    auto part = init_stage<float>(cfg, 1, schema1, data, 9);
    run_stage(part, cfg, train, val, 9, {dir.path, false, 2, nullptr});
    CHECK(part.metrics.size() == 2);
    auto resumed = init_stage<float>(cfg, 1, schema1, data, 9);
    run_stage(resumed, cfg, train, val, 9, {dir.path, true, std::nullopt, nullptr});
    CHECK(metrics_csv(resumed.metrics) == metrics_csv(full.metrics));
    CHECK(test_util::bit_equal(flat(resumed.alphas.store), flat(full.alphas.store)));
    CHECK(test_util::bit_equal(flat(resumed.net.params()), flat(full.net.params())));
  }
  SUBCASE("non-finite losses name the stage and epoch") {
    auto cfg = tiny_config(2, 1);
    auto state = init_stage<float>(cfg, 0, schema, data, 8);
    auto w = state.net.params().get("classifier/weight");
    w.mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(run_stage(state, cfg, train, val, 8), doctest::Contains("stage 1 epoch 0"), NumericError);
  }
}

TEST_CASE("progressive search") {
  const auto data = synth_dataset(SynthPreset::easy_fit, 11, 64, 4, 8);
  auto cfg = tiny_config(2, 1);
  TempDir a("run-a"), b("run-b");
  std::ostringstream log;
  const auto result = run_progressive_search<float>(cfg, data, 21, {a.path, false, &log});
  REQUIRE(result.stages.size() == 3);
  const std::vector<std::size_t> counts{8, 5, 3};
  for (std::size_t k = 0; k < 3; ++k) {
    for (auto t : {CellType::normal, CellType::reduce}) {
      for (const auto& c : result.stages[k].schema.of(t).candidates) CHECK(c.size() == counts[k]);
    }
    const fs::path dir = a.path / ("stage" + std::to_string(k + 1));
    for (const char* f : {"schema.json", "alphas.json", "metrics.csv", "weights.ckpt"}) CHECK(fs::exists(dir / f));
    CHECK(schema_from_json(slurp(dir / "schema.json")) == result.stages[k].schema);
  }
  CHECK(fs::exists(a.path / "stage2" / "pruned_schema.json"));
  CHECK(genotype_parse(slurp(a.path / "genotype.json")) == result.refined);
  CHECK(genotype_parse(slurp(a.path / "genotype_derived.json")) == result.derived);
  CHECK(count_skips(result.refined.normal) <= 2);
  CHECK(result.derived == derive_genotype(result.stages.back().arch));

  run_progressive_search<float>(cfg, data, 21, {b.path, false, nullptr});
  CHECK(slurp(a.path / "genotype.json") == slurp(b.path / "genotype.json"));
  for (int k = 1; k <= 3; ++k) {
    const auto m = "stage" + std::to_string(k) + "/metrics.csv";
    CHECK(slurp(a.path / m) == slurp(b.path / m));
  }

  SUBCASE("refinement without dropout warns") {
    auto no_drop = cfg;
    for (auto& s : no_drop.schedule.stages) s.dropout = 0.0;
    std::ostringstream warn;
    run_progressive_search<float>(no_drop, data, 21, {{}, false, &warn});
    CHECK(warn.str().find("warning") != std::string::npos);
  }
}
