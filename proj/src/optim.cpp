#include "pdarts/optim.hpp"

#include <cmath>
#include <numbers>

namespace pdarts {

double cosine_lr(double t, double period, double lr_max, double lr_min) {
  if (period <= 0) throw InvalidArgument("cosine_lr: period must be positive");
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t / period));
}

double LrSchedule::at(int t) const {
  if (t < 0) throw InvalidArgument("learning-rate step must be non-negative");
  if (kind == Kind::constant) return lr_max;
  return cosine_lr(t, period, lr_max, lr_min);
}

void OptimizerConfig::validate() const {
  if (!(lr.lr_max > 0)) throw InvalidArgument("lr: maximum learning rate must be positive");
  if (lr.lr_min < 0 || lr.lr_min > lr.lr_max) throw InvalidArgument("lr_min: must lie in [0, lr]");
  if (lr.kind == LrSchedule::Kind::cosine && lr.period <= 0) throw InvalidArgument("lr.period: must be positive");
  if (kind == OptimizerKind::sgd_momentum && !(momentum >= 0 && momentum < 1)) {
    throw InvalidArgument("momentum: must lie in [0, 1)");
  }
  if (kind == OptimizerKind::adam) {
    if (!(beta1 >= 0 && beta1 < 1)) throw InvalidArgument("beta1: must lie in [0, 1)");
    if (!(beta2 > 0 && beta2 < 1)) throw InvalidArgument("beta2: must lie in (0, 1)");
    if (!(eps > 0)) throw InvalidArgument("eps: must be positive");
  }
  if (weight_decay < 0) throw InvalidArgument("weight_decay: must be non-negative");
  if (grad_clip < 0) throw InvalidArgument("grad_clip: must be non-negative");
}

OptimizerConfig OptimizerConfig::sgd(double lr_max, double lr_min, int period, double momentum, double weight_decay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::sgd_momentum;
  c.lr = {LrSchedule::Kind::cosine, lr_max, lr_min, period};
  c.momentum = momentum;
  c.weight_decay = weight_decay;
  return c;
}

OptimizerConfig OptimizerConfig::adam(double lr, double beta1, double beta2, double weight_decay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::adam;
  c.lr = {LrSchedule::Kind::constant, lr, lr, 1};
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.weight_decay = weight_decay;
  return c;
}

template <typename T>
double clip_grad_norm(ParamStore<T>& store, double max_norm) {
  double sq = 0;
  for (const auto& [name, p] : store.params()) {
    for (T g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double k = max_norm / (norm + 1e-6);
    for (auto& [name, p] : store.params()) {
      Tensor<T> h = p;
      if (!h.has_grad()) continue;
      for (T& g : h.mutable_grad()) g = static_cast<T>(g * k);
    }
  }
  return norm;
}

template <typename T>
void sgd_step(ParamStore<T>& store, const OptimizerConfig& cfg, double lr) {
  const T mom = static_cast<T>(cfg.momentum), wd = static_cast<T>(cfg.weight_decay), rate = static_cast<T>(lr);
  for (auto& [name, p] : store.params()) {
    Tensor<T> h = p;
    if (!h.has_grad()) continue;
    auto data = h.mutable_data();
    const auto grad = h.grad();
    auto& buf = store.slot("momentum", name);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T g = grad[i] + wd * data[i];
      buf[i] = mom * buf[i] + g;
      data[i] -= rate * buf[i];
    }
    ++store.step(name);
  }
}

template <typename T>
void adam_step(ParamStore<T>& store, const OptimizerConfig& cfg, double lr) {
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  for (auto& [name, p] : store.params()) {
    Tensor<T> h = p;
    if (!h.has_grad()) continue;
    auto data = h.mutable_data();
    const auto grad = h.grad();
    auto& m = store.slot("adam_m", name);
    auto& v = store.slot("adam_v", name);
    const std::int64_t t = ++store.step(name);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = static_cast<double>(grad[i]) + cfg.weight_decay * data[i];
      m[i] = static_cast<T>(b1 * m[i] + (1 - b1) * g);
      v[i] = static_cast<T>(b2 * v[i] + (1 - b2) * g * g);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      data[i] = static_cast<T>(data[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

template <typename T>
void optimizer_step(ParamStore<T>& store, const OptimizerConfig& cfg, int t) {
  optimizer_step_lr(store, cfg, cfg.lr.at(t));
}

template <typename T>
void optimizer_step_lr(ParamStore<T>& store, const OptimizerConfig& cfg, double lr) {
  if (cfg.grad_clip > 0) clip_grad_norm(store, cfg.grad_clip);
  if (cfg.kind == OptimizerKind::adam) {
    adam_step(store, cfg, lr);
  } else {
    sgd_step(store, cfg, lr);
  }
}

template double clip_grad_norm(ParamStore<float>&, double);
template double clip_grad_norm(ParamStore<double>&, double);
template void sgd_step(ParamStore<float>&, const OptimizerConfig&, double);
template void sgd_step(ParamStore<double>&, const OptimizerConfig&, double);
template void adam_step(ParamStore<float>&, const OptimizerConfig&, double);
template void adam_step(ParamStore<double>&, const OptimizerConfig&, double);
template void optimizer_step(ParamStore<float>&, const OptimizerConfig&, int);
template void optimizer_step(ParamStore<double>&, const OptimizerConfig&, int);
template void optimizer_step_lr(ParamStore<float>&, const OptimizerConfig&, double);
template void optimizer_step_lr(ParamStore<double>&, const OptimizerConfig&, double);

}  // namespace pdarts
