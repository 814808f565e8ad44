#pragma once

#include <string>

#include "pdarts/param_store.hpp"

namespace pdarts {

/// eta_min + (eta_max - eta_min) * (1 + cos(pi * t / period)) / 2
double cosine_lr(double t, double period, double lr_max, double lr_min);

struct LrSchedule {
  enum class Kind { constant, cosine };
  Kind kind = Kind::constant;
  double lr_max = 0.025;
  double lr_min = 0.0;
  int period = 1;

  double at(int t) const;
};

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  LrSchedule lr;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// L2 coefficient added to the gradient (coupled) for both optimizers.
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;

  /// Throws InvalidArgument naming the first bad field.
  void validate() const;

  static OptimizerConfig sgd(double lr_max, double lr_min, int period, double momentum, double weight_decay);
  static OptimizerConfig adam(double lr, double beta1, double beta2, double weight_decay);
};

/// Scales all present gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& store, double max_norm);

/// Heavy-ball SGD: buf = momentum*buf + (g + wd*p); p -= lr*buf.
/// Parameters without a gradient are skipped.
template <typename T>
void sgd_step(ParamStore<T>& store, const OptimizerConfig& cfg, double lr);

/// Bias-corrected Adam with L2 weight decay added to the gradient.
template <typename T>
void adam_step(ParamStore<T>& store, const OptimizerConfig& cfg, double lr);

/// Clips (if configured) and dispatches on cfg.kind with lr = cfg.lr.at(t).
template <typename T>
void optimizer_step(ParamStore<T>& store, const OptimizerConfig& cfg, int t);

/// As optimizer_step with an explicit learning rate.
template <typename T>
void optimizer_step_lr(ParamStore<T>& store, const OptimizerConfig& cfg, double lr);

}  // namespace pdarts
