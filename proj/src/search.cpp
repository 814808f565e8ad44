#include "pdarts/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "pdarts/checkpoint.hpp"
#include "pdarts/text_io.hpp"

namespace pdarts {

namespace fs = std::filesystem;

void StageSchedule::validate() const {
  if (stages.empty()) throw ConfigError("stages", "at least one stage is required");
  for (std::size_t k = 0; k < stages.size(); ++k) {
    const auto& s = stages[k];
    const std::string at = "stages[" + std::to_string(k) + "].";
    if (s.layers < 2) throw ConfigError(at + "layers", "must be at least 2, got " + std::to_string(s.layers));
    if (s.candidates < 1 || s.candidates > kNumOps) {
      throw ConfigError(at + "candidates", "must be in [1, 8], got " + std::to_string(s.candidates));
    }
    if (s.channels < 2 || s.channels % 2 != 0) {
      throw ConfigError(at + "channels", "must be a positive even number, got " + std::to_string(s.channels));
    }
    if (!(s.dropout >= 0.0 && s.dropout < 1.0)) {
      throw ConfigError(at + "dropout", "must be in [0, 1), got " + std::to_string(s.dropout));
    }
    if (s.epochs < 1) throw ConfigError(at + "epochs", "must be positive, got " + std::to_string(s.epochs));
    if (s.warmup_epochs < 0 || s.warmup_epochs > s.epochs) {
      throw ConfigError(at + "warmup_epochs", "must be in [0, epochs], got " + std::to_string(s.warmup_epochs));
    }
    if (k > 0 && s.layers <= stages[k - 1].layers) {
      throw ConfigError(at + "layers", "must increase from stage to stage");
    }
    if (k > 0 && s.candidates >= stages[k - 1].candidates) {
      throw ConfigError(at + "candidates", "must decrease from stage to stage");
    }
  }
  if (stages.front().candidates != kNumOps) {
    throw ConfigError("stages[0].candidates", "the first stage searches the full space of 8 operations");
  }
  if (stages.back().candidates < 2) {
    throw ConfigError("stages[" + std::to_string(stages.size() - 1) + "].candidates",
                      "the final stage needs at least 2 candidates");
  }
}

StageSchedule StageSchedule::cifar10() {
  return {{{5, 8, 16, 0.0, 25, 10}, {11, 5, 16, 0.4, 25, 10}, {17, 3, 16, 0.7, 25, 10}}};
}

StageSchedule StageSchedule::desk(int epochs, int warmup) {
  return {{{2, 8, 8, 0.0, epochs, warmup}, {3, 5, 8, 0.4, epochs, warmup}, {4, 3, 8, 0.7, epochs, warmup}}};
}

DropoutPolicy DropoutPolicy::decaying(double p0, int epochs, double floor_fraction) {
  return {p0, epochs, p0 * floor_fraction};
}

double DropoutPolicy::rate(int epoch) const {
  if (initial <= 0.0) return 0.0;
  if (epoch < 0 || epoch > epochs) {
    throw InvalidArgument("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(epochs) + "]");
  }
  if (epoch == epochs) return floor;
  const double gamma = std::pow(floor / initial, 1.0 / epochs);
  return initial * std::pow(gamma, epoch);
}

OptimizerConfig SearchConfig::default_weight_optimizer() {
  auto o = OptimizerConfig::sgd(0.025, 0.001, 25, 0.9, 3e-4);
  o.grad_clip = 5.0;
  return o;
}

void SearchConfig::validate() const {
  schedule.validate();
  if (nodes < 1) throw ConfigError("nodes", "must be at least 1, got " + std::to_string(nodes));
  if (batch_size < 2) throw ConfigError("batch_size", "must be at least 2, got " + std::to_string(batch_size));
  try {
    weight_optimizer.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("weight_optimizer", e.what());
  }
  try {
    alpha_optimizer.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("alpha_optimizer", e.what());
  }
  if (!(dropout_floor_fraction > 0.0 && dropout_floor_fraction <= 1.0)) {
    throw ConfigError("dropout_floor_fraction", "must be in (0, 1]");
  }
  if (!(alpha_init_scale > 0.0)) throw ConfigError("alpha_init_scale", "must be positive");
  if (skip_limits.normal && *skip_limits.normal < 0) throw ConfigError("skip_limits.normal", "must be non-negative");
  if (skip_limits.reduce && *skip_limits.reduce < 0) throw ConfigError("skip_limits.reduce", "must be non-negative");
}

SearchNetConfig SearchConfig::net_config(const StageConfig& stage, const Dataset& data) const {
  if (data.height != data.width) throw InvalidArgument("images must be square");
  SearchNetConfig n{stage.layers, stage.channels, nodes, data.num_classes, data.height, data.channels};
  n.validate();
  return n;
}

CellSchema prune_cell(const CellArch& arch, int keep) {
  arch.validate();
  if (keep < 1) throw InvalidArgument("keep must be at least 1, got " + std::to_string(keep));
  CellSchema out{arch.schema.spec, {}};
  for (std::size_t e = 0; e < arch.schema.candidates.size(); ++e) {
    const auto& cands = arch.schema.candidates[e];
    if (keep >= static_cast<int>(cands.size())) {
      throw InvalidArgument("keep " + std::to_string(keep) + " is not below the " + std::to_string(cands.size()) +
                            " candidates of edge " + std::to_string(e));
    }
    std::vector<std::size_t> order(cands.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return arch.alpha[e][a] > arch.alpha[e][b]; });
    std::vector<OpKind> kept;
    for (int i = 0; i < keep; ++i) kept.push_back(cands[order[static_cast<std::size_t>(i)]]);
    std::sort(kept.begin(), kept.end());
    out.candidates.push_back(std::move(kept));
  }
  return out;
}

SearchSchema prune_operations(const ArchSnapshot& arch, int keep) {
  return {prune_cell(arch.normal, keep), prune_cell(arch.reduce, keep)};
}

double mean_edge_entropy(const ArchSnapshot& arch) {
  double total = 0;
  int edges = 0;
  for (const auto* cell : {&arch.normal, &arch.reduce}) {
    for (std::size_t e = 0; e < cell->alpha.size(); ++e) {
      double h = 0;
      for (double w : softmax(cell->alpha[e])) {
        if (w > 0) h -= w * std::log(w);
      }
      total += h;
      ++edges;
    }
  }
  return edges ? total / edges : 0.0;
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::string out = "epoch,train_loss,val_loss,lr,dropout_rate,mean_edge_entropy\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss, r.lr,
                  r.dropout_rate, r.mean_edge_entropy);
    out += line;
  }
  return out;
}

namespace {

// Turns off gradient recording for a store while in scope.
template <typename T>
class Frozen {
 public:
  explicit Frozen(ParamStore<T>& store) : store_(store) { store_.set_requires_grad(false); }
  ~Frozen() { store_.set_requires_grad(true); }
  Frozen(const Frozen&) = delete;
  Frozen& operator=(const Frozen&) = delete;

 private:
  ParamStore<T>& store_;
};

template <typename T>
double loss_step(SuperNet<T>& net, const AlphaTable<T>& alphas, ParamStore<T>& trained, const OptimizerConfig& opt,
                 const Batch<T>& batch, const SkipDropout& drop, double lr) {
  trained.zero_grad();
  Tensor<T> loss = cross_entropy(net.forward(batch.images, alphas, drop, true), std::span<const int>(batch.labels));
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("non-finite loss");
  loss.backward();
  optimizer_step_lr(trained, opt, lr);
  trained.zero_grad();
  return value;
}

nlohmann::json metrics_json(const std::vector<EpochMetrics>& rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({r.epoch, r.train_loss, r.val_loss, r.lr, r.dropout_rate, r.mean_edge_entropy});
  }
  return arr;
}

std::vector<EpochMetrics> metrics_from_json(const nlohmann::json& arr) {
  std::vector<EpochMetrics> rows;
  for (const auto& r : arr) {
    rows.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>(),
                    r.at(4).get<double>(), r.at(5).get<double>()});
  }
  return rows;
}

}  // namespace

template <typename T>
SearchState<T> init_stage(const SearchConfig& cfg, int stage, const SearchSchema& schema, const Dataset& data,
                          std::uint64_t seed) {
  const auto& sc = cfg.schedule.stages.at(static_cast<std::size_t>(stage));
  SuperNet<T> net(cfg.net_config(sc, data), schema, derive_seed(seed, "weights", stage));
  auto alphas = init_alphas<T>(schema, derive_seed(seed, "alphas", stage), cfg.alpha_init_scale);
  return SearchState<T>{stage, 0, std::move(net), std::move(alphas), {}};
}

template <typename T>
double weight_step(SearchState<T>& state, const SearchConfig& cfg, const Batch<T>& batch, const SkipDropout& drop,
                   double lr) {
  Frozen<T> frozen(state.alphas.store);
  return loss_step(state.net, state.alphas, state.net.params(), cfg.weight_optimizer, batch, drop, lr);
}

template <typename T>
double alpha_step(SearchState<T>& state, const SearchConfig& cfg, const Batch<T>& batch, const SkipDropout& drop) {
  Frozen<T> frozen(state.net.params());
  return loss_step(state.net, state.alphas, state.alphas.store, cfg.alpha_optimizer, batch, drop,
                   cfg.alpha_optimizer.lr.at(0));
}

template <typename T>
void run_stage(SearchState<T>& state, const SearchConfig& cfg, const Dataset& train_half, const Dataset& val_half,
               std::uint64_t seed, const StageRunOptions& options) {
  const auto& sc = cfg.schedule.stages.at(static_cast<std::size_t>(state.stage));
  const int stage = state.stage;
  const fs::path ckpt = options.checkpoint_dir;
  if (options.resume && !ckpt.empty() && fs::exists(ckpt / "state.json")) {
    const auto j = nlohmann::json::parse(read_text(ckpt / "state.json"));
    if (j.at("stage").get<int>() != stage) throw InvalidArgument("checkpoint belongs to another stage");
    load_checkpoint(state.net.params(), ckpt / "weights.ckpt");
    load_checkpoint(state.alphas.store, ckpt / "alphas.ckpt");
    state.epoch = j.at("epoch").get<int>();
    state.metrics = metrics_from_json(j.at("metrics"));
    if (options.log) *options.log << "stage " << stage + 1 << ": resuming after epoch " << state.epoch << "\n";
  }
  const auto dropout = DropoutPolicy::decaying(sc.dropout, sc.epochs, cfg.dropout_floor_fraction);
  for (; state.epoch < sc.epochs; ++state.epoch) {
    if (options.stop_after && state.epoch >= *options.stop_after) return;
    const int epoch = state.epoch;
    const double lr = cosine_lr(epoch, sc.epochs, cfg.weight_optimizer.lr.lr_max, cfg.weight_optimizer.lr.lr_min);
    const double rate = dropout.rate(epoch);
    Rng drop_rng(derive_seed(seed, "dropout", stage, epoch));
    const SkipDropout drop{rate, &drop_rng};
    const auto train_batches = shuffled_batches(train_half.size(), cfg.batch_size, derive_seed(seed, "train-order", stage, epoch));
    const auto val_batches = shuffled_batches(val_half.size(), cfg.batch_size, derive_seed(seed, "val-order", stage, epoch));
    const bool search_alpha = epoch >= sc.warmup_epochs;
    double train_loss = 0, val_loss = 0;
    int val_count = 0;
    try {
      for (std::size_t i = 0; i < train_batches.size(); ++i) {
        train_loss += weight_step(state, cfg, make_batch<T>(train_half, train_batches[i]), drop, lr);
        if (search_alpha && i < val_batches.size()) {
          val_loss += alpha_step(state, cfg, make_batch<T>(val_half, val_batches[i]), drop);
          ++val_count;
        }
      }
      if (!search_alpha) {
        NoGradGuard no_grad;
        for (const auto& b : val_batches) {
          const auto batch = make_batch<T>(val_half, b);
          val_loss += cross_entropy(state.net.forward(batch.images, state.alphas, {}, true),
                                    std::span<const int>(batch.labels)).item();
          ++val_count;
        }
        if (!std::isfinite(val_loss)) throw NumericError("non-finite validation loss");
      }
    } catch (const NumericError& e) {
      throw NumericError("stage " + std::to_string(stage + 1) + " epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const auto snap = state.alphas.snapshot();
    state.metrics.push_back({epoch, train_loss / static_cast<double>(train_batches.size()),
                             val_count ? val_loss / val_count : 0.0, lr, rate, mean_edge_entropy(snap)});
    if (options.log) {
      const auto& m = state.metrics.back();
      *options.log << "stage " << stage + 1 << " epoch " << epoch << " train_loss " << m.train_loss << " val_loss "
                   << m.val_loss << " entropy " << m.mean_edge_entropy << "\n";
    }
    if (!ckpt.empty()) {
      fs::create_directories(ckpt);
      save_checkpoint(state.net.params(), ckpt / "weights.ckpt");
      save_checkpoint(state.alphas.store, ckpt / "alphas.ckpt");
      nlohmann::json j{{"stage", stage}, {"epoch", epoch + 1}, {"metrics", metrics_json(state.metrics)}};
      write_text(ckpt / "state.json", j.dump() + "\n");
    }
  }
}

template <typename T>
SearchResult run_progressive_search(const SearchConfig& cfg, const Dataset& data, std::uint64_t seed,
                                    const SearchRunOptions& options) {
  cfg.validate();
  data.validate();
  const auto [train_half, val_half] = split_half(data, seed);
  const fs::path out = options.out_dir;
  if (!out.empty()) fs::create_directories(out);
  SearchResult result;
  const auto full = CellSchema::full(cfg.nodes);
  SearchSchema schema{full, full};
  const auto& stages = cfg.schedule.stages;
  for (int k = 0; k < static_cast<int>(stages.size()); ++k) {
    const fs::path dir = out.empty() ? fs::path() : out / ("stage" + std::to_string(k + 1));
    auto state = init_stage<T>(cfg, k, schema, data, seed);
    StageRunOptions stage_options;
    if (!dir.empty()) stage_options.checkpoint_dir = dir / "checkpoint";
    stage_options.resume = options.resume;
    stage_options.log = options.log;
    run_stage(state, cfg, train_half, val_half, seed, stage_options);
    StageOutcome outcome{schema, state.alphas.snapshot(), state.metrics};
    if (!dir.empty()) {
      write_text(dir / "schema.json", schema_to_json(schema));
      write_text(dir / "alphas.json", arch_to_json(outcome.arch));
      write_text(dir / "metrics.csv", metrics_csv(outcome.metrics));
      save_checkpoint(state.net.params(), dir / "weights.ckpt");
    }
    if (k + 1 < static_cast<int>(stages.size())) {
      schema = prune_operations(outcome.arch, stages[static_cast<std::size_t>(k) + 1].candidates);
      if (!dir.empty()) write_text(dir / "pruned_schema.json", schema_to_json(schema));
    }
    result.stages.push_back(std::move(outcome));
  }
  const auto& final_arch = result.stages.back().arch;
  result.derived = derive_genotype(final_arch);
  const bool any_dropout = std::any_of(stages.begin(), stages.end(), [](const auto& s) { return s.dropout > 0; });
  if ((cfg.skip_limits.normal || cfg.skip_limits.reduce) && !any_dropout && options.log) {
    *options.log << "warning: skip-connect refinement applied to a search without skip-connect dropout\n";
  }
  result.refined = refine_skips(final_arch, cfg.skip_limits);
  if (!out.empty()) {
    write_text(out / "genotype_derived.json", genotype_serialize(result.derived));
    write_text(out / "genotype.json", genotype_serialize(result.refined));
  }
  return result;
}

#define PDARTS_INSTANTIATE_SEARCH(T)                                                                              \
  template SearchState<T> init_stage<T>(const SearchConfig&, int, const SearchSchema&, const Dataset&,            \
                                        std::uint64_t);                                                           \
  template double weight_step<T>(SearchState<T>&, const SearchConfig&, const Batch<T>&, const SkipDropout&,       \
                                 double);                                                                         \
  template double alpha_step<T>(SearchState<T>&, const SearchConfig&, const Batch<T>&, const SkipDropout&);       \
  template void run_stage<T>(SearchState<T>&, const SearchConfig&, const Dataset&, const Dataset&, std::uint64_t, \
                             const StageRunOptions&);                                                             \
  template SearchResult run_progressive_search<T>(const SearchConfig&, const Dataset&, std::uint64_t,             \
                                                  const SearchRunOptions&);

PDARTS_INSTANTIATE_SEARCH(float)
PDARTS_INSTANTIATE_SEARCH(double)

}  // namespace pdarts
