#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <vector>

#include "pdarts/arch.hpp"
#include "pdarts/data.hpp"
#include "pdarts/optim.hpp"

namespace pdarts {

struct EvalConfig {
  int layers = 8;
  std::int64_t channels = 16;
  int epochs = 30;
  std::int64_t batch_size = 64;
  int cutout_length = 0;
  double drop_path_prob = 0.0;
  /// 0 removes the auxiliary tower.
  double auxiliary_weight = 0.4;
  /// Hidden width of the auxiliary tower.
  std::int64_t auxiliary_channels = 128;
  /// Affine BN inside cells (preprocessing and operations).
  bool affine = true;
  OptimizerConfig optimizer = default_optimizer();

  /// SGD momentum 0.9, L2 3e-4, cosine 0.025 -> 0 over the run, clip 5.
  static OptimizerConfig default_optimizer();
  /// L=8, C=16, 30 epochs, no cutout or drop-path, auxiliary weight 0.4.
  static EvalConfig desk();
  /// L=20, C=36, 600 epochs, batch 96, cutout 16, drop-path 0.3, auxiliary weight 0.4.
  static EvalConfig cifar10();

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  bool is_reduction(int cell) const { return cell == layers / 3 || cell == 2 * layers / 3; }
  /// The auxiliary tower reads the output of this cell.
  int auxiliary_position() const { return 2 * layers / 3; }
  bool has_auxiliary() const { return auxiliary_weight > 0.0; }
};

/// Sample n is zeroed with probability p and otherwise scaled by 1/(1-p).
/// Identity when not training or p is 0.
template <typename T>
Tensor<T> drop_path(const Tensor<T>& x, double p, Rng& rng, bool training);

/// Rows [y0, y1) and columns [x0, x1) zeroed by a cutout of `length`
/// centered at (cy, cx), clipped to the image.
struct CutoutBox {
  std::int64_t y0, y1, x0, x1;
};

CutoutBox cutout_box(std::int64_t height, std::int64_t width, int length, std::int64_t cy, std::int64_t cx);

/// Zeroes one square per sample of a [N, C, H, W] batch at the given centers.
template <typename T>
Tensor<T> cutout_at(const Tensor<T>& images, int length, const std::vector<std::pair<std::int64_t, std::int64_t>>& centers);

/// Centers drawn uniformly over the pixels. Length 0 returns the input.
template <typename T>
Tensor<T> cutout(const Tensor<T>& images, int length, Rng& rng);

/// Trainable scalars of build_eval_net(g, cfg) for the data shape.
std::int64_t eval_param_count(const Genotype& g, const EvalConfig& cfg, std::int64_t in_channels, int num_classes);

template <typename T>
struct EvalOutput {
  Tensor<T> logits;
  /// Undefined when the tower is absent or outside training.
  Tensor<T> aux_logits;
};

template <typename T>
class EvalNet {
 public:
  /// Throws FormatError for an invalid genotype and ConfigError for a bad config.
  EvalNet(const Genotype& g, const EvalConfig& cfg, std::int64_t in_channels, std::int64_t image_size,
          int num_classes, std::uint64_t seed);
  ~EvalNet();
  EvalNet(EvalNet&&) noexcept;
  EvalNet& operator=(EvalNet&&) noexcept;

  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const Genotype& genotype() const { return genotype_; }

  /// `drop` supplies drop-path draws while training; null disables drop-path.
  EvalOutput<T> forward(const Tensor<T>& images, bool training, double drop_path_prob = 0.0, Rng* drop = nullptr);

 private:
  struct Impl;
  Genotype genotype_;
  EvalConfig cfg_;
  std::int64_t in_channels_;
  std::int64_t image_size_;
  ParamStore<T> store_;
  std::unique_ptr<Impl> impl_;
};

struct EvalEpoch {
  int epoch = 0;
  /// Mean over batches of main + auxiliary_weight * aux.
  double train_loss = 0;
  double train_main_loss = 0;
  double train_aux_loss = 0;
  double test_acc = 0;
  double lr = 0;
};

/// "epoch,train_loss,test_acc,lr" rows.
std::string eval_metrics_csv(const std::vector<EvalEpoch>& rows);

struct EvalRunOptions {
  /// Receives metrics.csv and model.ckpt; empty keeps everything in memory.
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;
};

struct EvalResult {
  std::vector<EvalEpoch> epochs;
  double final_test_acc = 0;
};

/// Top-1 accuracy in inference mode.
template <typename T>
double evaluate_accuracy(EvalNet<T>& net, const Dataset& test, std::int64_t batch_size);

/// Trains on `train` with SGD and cosine decay, reporting test accuracy
/// after every epoch. Non-finite losses raise NumericError naming the epoch.
template <typename T>
EvalResult train_eval(EvalNet<T>& net, const Dataset& train, const Dataset& test, const EvalConfig& cfg,
                      std::uint64_t seed, const EvalRunOptions& options = {});

}  // namespace pdarts
