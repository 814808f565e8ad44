#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pdarts/data.hpp"
#include "pdarts/genotype.hpp"
#include "pdarts/optim.hpp"
#include "pdarts/supernet.hpp"

namespace pdarts {

struct StageConfig {
  int layers = 5;
  /// Candidates kept per edge at the start of the stage.
  int candidates = 8;
  std::int64_t channels = 16;
  /// Initial skip-connect dropout rate.
  double dropout = 0.0;
  int epochs = 25;
  int warmup_epochs = 10;
};

struct StageSchedule {
  std::vector<StageConfig> stages;

  /// Throws ConfigError naming the field ("stages[1].layers", ...).
  void validate() const;
  /// L 5/11/17, O 8/5/3, p 0.0/0.4/0.7, C 16, 25 epochs with 10 warmup.
  static StageSchedule cifar10();
  /// L 2/3/4, O 8/5/3, p 0.0/0.4/0.7, C 8 with `epochs` / `warmup` per stage.
  static StageSchedule desk(int epochs = 10, int warmup = 4);
};

/// p(e) = p0 * gamma^e with gamma = (floor / p0)^(1 / epochs); zero when p0 is 0.
struct DropoutPolicy {
  double initial = 0.0;
  int epochs = 25;
  double floor = 0.0;

  /// floor = floor_fraction * p0.
  static DropoutPolicy decaying(double p0, int epochs, double floor_fraction = 0.05);
  double rate(int epoch) const;
};

/// Everything a search needs besides the data and the seed.
struct SearchConfig {
  StageSchedule schedule = StageSchedule::cifar10();
  int nodes = 4;
  std::int64_t batch_size = 96;
  OptimizerConfig weight_optimizer = default_weight_optimizer();
  OptimizerConfig alpha_optimizer = OptimizerConfig::adam(6e-4, 0.5, 0.999, 1e-3);
  double dropout_floor_fraction = 0.05;
  double alpha_init_scale = 1e-3;
  SkipLimits skip_limits;

  /// SGD, cosine 0.025 -> 0.001 over each stage, momentum 0.9, L2 3e-4, clip 5.
  static OptimizerConfig default_weight_optimizer();
  void validate() const;
  SearchNetConfig net_config(const StageConfig& stage, const Dataset& data) const;
};

/// Per-edge retention of the `keep` largest alphas (ties to the lower
/// operation index), returned in canonical order. Throws InvalidArgument
/// when keep < 1 or keep is not below an edge's current count.
CellSchema prune_cell(const CellArch& arch, int keep);
SearchSchema prune_operations(const ArchSnapshot& arch, int keep);

/// Mean over all edges of both cell types of the entropy of softmax(alpha).
double mean_edge_entropy(const ArchSnapshot& arch);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
  double dropout_rate = 0;
  double mean_edge_entropy = 0;
};

std::string metrics_csv(const std::vector<EpochMetrics>& rows);

template <typename T>
struct SearchState {
  int stage = 0;
  /// Epochs already completed in this stage.
  int epoch = 0;
  SuperNet<T> net;
  AlphaTable<T> alphas;
  std::vector<EpochMetrics> metrics;
};

/// Builds the stage network and alphas with fresh parameters drawn from
/// substreams of `seed`.
template <typename T>
SearchState<T> init_stage(const SearchConfig& cfg, int stage, const SearchSchema& schema, const Dataset& data,
                          std::uint64_t seed);

/// One SGD step on the network weights with alphas frozen; returns the loss.
template <typename T>
double weight_step(SearchState<T>& state, const SearchConfig& cfg, const Batch<T>& batch, const SkipDropout& drop,
                   double lr);

/// One Adam step on the alphas with the network weights frozen; returns the loss.
template <typename T>
double alpha_step(SearchState<T>& state, const SearchConfig& cfg, const Batch<T>& batch, const SkipDropout& drop);

struct StageRunOptions {
  /// Checkpoint directory written after every epoch; empty disables.
  std::filesystem::path checkpoint_dir;
  /// Continue from checkpoint_dir when it holds a checkpoint.
  bool resume = false;
  /// Stop after this many completed epochs (for interruption tests).
  std::optional<int> stop_after;
  std::ostream* log = nullptr;
};

/// Warmup epochs of weight steps only, then per iteration one weight step
/// on a train batch and one alpha step on a val batch. One metrics row per
/// epoch. Non-finite losses raise NumericError tagged with stage and epoch.
template <typename T>
void run_stage(SearchState<T>& state, const SearchConfig& cfg, const Dataset& train_half, const Dataset& val_half,
               std::uint64_t seed, const StageRunOptions& options = {});

struct StageOutcome {
  SearchSchema schema;
  ArchSnapshot arch;
  std::vector<EpochMetrics> metrics;
};

struct SearchResult {
  std::vector<StageOutcome> stages;
  Genotype derived;
  Genotype refined;
};

struct SearchRunOptions {
  /// Run directory; empty keeps everything in memory.
  std::filesystem::path out_dir;
  bool resume = false;
  std::ostream* log = nullptr;
};

/// Stage loop with fresh weights and alphas per stage, pruning between
/// stages, then derivation and skip refinement of the final alphas. Writes
/// stage<k>/{schema.json, alphas.json, weights.ckpt, metrics.csv} and
/// genotype.json, genotype_derived.json under the run directory.
template <typename T>
SearchResult run_progressive_search(const SearchConfig& cfg, const Dataset& data, std::uint64_t seed,
                                    const SearchRunOptions& options = {});

}  // namespace pdarts
