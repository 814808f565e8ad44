#include "pdarts/eval_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "pdarts/checkpoint.hpp"
#include "pdarts/op_catalog.hpp"
#include "pdarts/text_io.hpp"

namespace pdarts {

namespace fs = std::filesystem;

OptimizerConfig EvalConfig::default_optimizer() {
  auto o = OptimizerConfig::sgd(0.025, 0.0, 30, 0.9, 3e-4);
  o.grad_clip = 5.0;
  return o;
}

EvalConfig EvalConfig::desk() { return EvalConfig{}; }

EvalConfig EvalConfig::cifar10() {
  EvalConfig c;
  c.layers = 20;
  c.channels = 36;
  c.epochs = 600;
  c.batch_size = 96;
  c.cutout_length = 16;
  c.drop_path_prob = 0.3;
  c.auxiliary_weight = 0.4;
  c.optimizer.lr.period = 600;
  return c;
}

void EvalConfig::validate() const {
  if (layers < 2) throw ConfigError("layers", "must be at least 2, got " + std::to_string(layers));
  if (channels < 2 || channels % 2 != 0) {
    throw ConfigError("channels", "must be a positive even number, got " + std::to_string(channels));
  }
  if (epochs < 1) throw ConfigError("epochs", "must be positive, got " + std::to_string(epochs));
  if (batch_size < 2) throw ConfigError("batch_size", "must be at least 2, got " + std::to_string(batch_size));
  if (cutout_length < 0) throw ConfigError("cutout_length", "must be non-negative, got " + std::to_string(cutout_length));
  if (!(drop_path_prob >= 0.0 && drop_path_prob < 1.0)) {
    throw ConfigError("drop_path_prob", "must be in [0, 1), got " + std::to_string(drop_path_prob));
  }
  if (!(auxiliary_weight >= 0.0) || !std::isfinite(auxiliary_weight)) {
    throw ConfigError("auxiliary_weight", "must be a finite non-negative number");
  }
  if (auxiliary_channels < 1) throw ConfigError("auxiliary_channels", "must be positive");
  try {
    optimizer.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("optimizer", e.what());
  }
}

template <typename T>
Tensor<T> drop_path(const Tensor<T>& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("drop-path probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> factors(static_cast<std::size_t>(x.dim(0)));
  for (auto& f : factors) f = rng.bernoulli(p) ? T(0) : keep_scale;
  return scale_samples(x, std::move(factors));
}

CutoutBox cutout_box(std::int64_t height, std::int64_t width, int length, std::int64_t cy, std::int64_t cx) {
  if (length < 0) throw InvalidArgument("cutout length must be non-negative");
  const std::int64_t y = cy - length / 2, x = cx - length / 2;
  return {std::clamp<std::int64_t>(y, 0, height), std::clamp<std::int64_t>(y + length, 0, height),
          std::clamp<std::int64_t>(x, 0, width), std::clamp<std::int64_t>(x + length, 0, width)};
}

template <typename T>
Tensor<T> cutout_at(const Tensor<T>& images, int length,
                    const std::vector<std::pair<std::int64_t, std::int64_t>>& centers) {
  const Shape& s = images.shape();
  if (s.size() != 4) throw ShapeError("cutout expects [N, C, H, W], got " + to_string(s));
  if (static_cast<std::int64_t>(centers.size()) != s[0]) throw InvalidArgument("one cutout center per sample");
  std::vector<T> v(images.data().begin(), images.data().end());
  const std::int64_t hw = s[2] * s[3];
  for (std::int64_t n = 0; n < s[0]; ++n) {
    const auto b = cutout_box(s[2], s[3], length, centers[static_cast<std::size_t>(n)].first,
                              centers[static_cast<std::size_t>(n)].second);
    for (std::int64_t c = 0; c < s[1]; ++c) {
      T* plane = v.data() + (n * s[1] + c) * hw;
      for (std::int64_t y = b.y0; y < b.y1; ++y) std::fill(plane + y * s[3] + b.x0, plane + y * s[3] + b.x1, T(0));
    }
  }
  return Tensor<T>::from_data(s, std::move(v));
}

template <typename T>
Tensor<T> cutout(const Tensor<T>& images, int length, Rng& rng) {
  if (length < 0) throw InvalidArgument("cutout length must be non-negative");
  if (length == 0) return images;
  std::vector<std::pair<std::int64_t, std::int64_t>> centers(static_cast<std::size_t>(images.dim(0)));
  for (auto& c : centers) {
    c.first = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(images.dim(2))));
    c.second = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(images.dim(3))));
  }
  return cutout_at(images, length, centers);
}

namespace {

struct Layout {
  struct Cell {
    CellType type;
    std::int64_t c_pp, c_p, c;
    bool reduction_prev;
  };
  std::vector<Cell> cells;
  std::int64_t aux_in = 0;
  std::int64_t features = 0;
};

Layout layout(const Genotype& g, const EvalConfig& cfg) {
  Layout l;
  const auto width = static_cast<std::int64_t>(g.concat.size());
  std::int64_t c_pp = cfg.channels, c_p = cfg.channels, c = cfg.channels;
  bool reduction_prev = false;
  for (int i = 0; i < cfg.layers; ++i) {
    const bool reduction = cfg.is_reduction(i);
    if (reduction) c *= 2;
    l.cells.push_back({reduction ? CellType::reduce : CellType::normal, c_pp, c_p, c, reduction_prev});
    c_pp = c_p;
    c_p = c * width;
    reduction_prev = reduction;
    if (i == cfg.auxiliary_position()) l.aux_in = c_p;
  }
  l.features = c_p;
  return l;
}

int pick_stride(CellType type, const Pick& p) { return type == CellType::reduce && p.from < 2 ? 2 : 1; }

}  // namespace

std::int64_t eval_param_count(const Genotype& g, const EvalConfig& cfg, std::int64_t in_channels, int num_classes) {
  g.validate();
  cfg.validate();
  const auto l = layout(g, cfg);
  std::int64_t n = cfg.channels * in_channels * 9 + 2 * cfg.channels;
  for (const auto& cell : l.cells) {
    n += (cell.c_pp + cell.c_p) * cell.c + (cfg.affine ? 4 * cell.c : 0);
    for (const auto& node : g.of(cell.type)) {
      for (const auto& p : node) n += op_param_count(p.op, cell.c, pick_stride(cell.type, p), cfg.affine);
    }
  }
  n += l.features * num_classes + num_classes;
  if (cfg.has_auxiliary()) {
    const std::int64_t a = cfg.auxiliary_channels;
    n += l.aux_in * a + 2 * a + a * num_classes + num_classes;
  }
  return n;
}

template <typename T>
struct EvalNet<T>::Impl {
  struct Branch {
    std::unique_ptr<Module<T>> op;
    int from;
    bool identity;
  };
  struct Cell {
    CellType type;
    std::unique_ptr<Module<T>> pre0, pre1;
    std::vector<std::array<Branch, 2>> nodes;
  };

  Tensor<T> stem_w;
  BatchNormState<T> stem_bn;
  std::vector<Cell> cells;
  Tensor<T> fc_w, fc_b;
  Tensor<T> aux_w;
  BatchNormState<T> aux_bn;
  Tensor<T> aux_fc_w, aux_fc_b;
};

template <typename T>
EvalNet<T>::EvalNet(const Genotype& g, const EvalConfig& cfg, std::int64_t in_channels, std::int64_t image_size,
                    int num_classes, std::uint64_t seed)
    : genotype_(g), cfg_(cfg), in_channels_(in_channels), image_size_(image_size), impl_(std::make_unique<Impl>()) {
  g.validate();
  cfg.validate();
  if (image_size < 4 || image_size % 4 != 0) {
    throw InvalidArgument("image size must be a positive multiple of 4, got " + std::to_string(image_size));
  }
  if (num_classes < 2) throw InvalidArgument("need at least 2 classes");
  const auto l = layout(g, cfg);
  Rng rng(seed);
  ParamBuilder<T> pb(store_, rng);
  auto& m = *impl_;
  m.stem_w = pb.conv("stem/conv", cfg.channels, in_channels, 3);
  m.stem_bn = pb.batch_norm("stem/bn", cfg.channels, true);
  for (std::size_t i = 0; i < l.cells.size(); ++i) {
    const auto& lc = l.cells[i];
    auto cb = pb.sub("cell" + std::to_string(i));
    typename Impl::Cell cell;
    cell.type = lc.type;
    cell.pre0 = lc.reduction_prev ? make_factorized_reduce<T>(lc.c_pp, lc.c, cfg.affine, cb.sub("pre0"))
                                  : make_relu_conv_bn<T>(lc.c_pp, lc.c, cfg.affine, cb.sub("pre0"));
    cell.pre1 = make_relu_conv_bn<T>(lc.c_p, lc.c, cfg.affine, cb.sub("pre1"));
    const auto& picks = g.of(lc.type);
    for (std::size_t k = 0; k < picks.size(); ++k) {
      std::array<typename Impl::Branch, 2> node;
      for (std::size_t b = 0; b < 2; ++b) {
        const Pick& p = picks[k][b];
        const int stride = pick_stride(lc.type, p);
        node[b] = {instantiate_op<T>(p.op, lc.c, stride, cfg.affine,
                                     cb.sub("node" + std::to_string(k + 2) + "/" + std::to_string(b) + "_" +
                                            std::string(op_name(p.op)))),
                   p.from, p.op == OpKind::skip_connect && stride == 1};
      }
      cell.nodes.push_back(std::move(node));
    }
    m.cells.push_back(std::move(cell));
    if (cfg.has_auxiliary() && static_cast<int>(i) == cfg.auxiliary_position()) {
      m.aux_w = pb.conv("aux/conv", cfg.auxiliary_channels, l.aux_in, 1);
      m.aux_bn = pb.batch_norm("aux/bn", cfg.auxiliary_channels, true);
      m.aux_fc_w = pb.uniform("aux/classifier/weight", {num_classes, cfg.auxiliary_channels}, cfg.auxiliary_channels);
      m.aux_fc_b = pb.zeros("aux/classifier/bias", {num_classes});
    }
  }
  m.fc_w = pb.uniform("classifier/weight", {num_classes, l.features}, l.features);
  m.fc_b = pb.zeros("classifier/bias", {num_classes});
}

template <typename T>
EvalNet<T>::~EvalNet() = default;
template <typename T>
EvalNet<T>::EvalNet(EvalNet&&) noexcept = default;
template <typename T>
EvalNet<T>& EvalNet<T>::operator=(EvalNet&&) noexcept = default;

template <typename T>
EvalOutput<T> EvalNet<T>::forward(const Tensor<T>& images, bool training, double drop_path_prob, Rng* drop) {
  const Shape& in = images.shape();
  if (in.size() != 4 || in[1] != in_channels_ || in[2] != image_size_ || in[3] != image_size_) {
    throw ShapeError("network expects [N, " + std::to_string(in_channels_) + ", " + std::to_string(image_size_) +
                     ", " + std::to_string(image_size_) + "] images, got " + to_string(in));
  }
  auto& m = *impl_;
  const bool dropping = training && drop != nullptr && drop_path_prob > 0.0;
  EvalOutput<T> out;
  Tensor<T> s0 = batch_norm(conv2d(images, m.stem_w, {1, 1, 1, 1}), m.stem_bn, training);
  Tensor<T> s1 = s0;
  for (std::size_t i = 0; i < m.cells.size(); ++i) {
    auto& cell = m.cells[i];
    std::vector<Tensor<T>> states{cell.pre0->forward(s0, training), cell.pre1->forward(s1, training)};
    for (auto& node : cell.nodes) {
      std::vector<Tensor<T>> terms;
      for (auto& b : node) {
        Tensor<T> h = b.op->forward(states[static_cast<std::size_t>(b.from)], training);
        if (dropping && !b.identity) h = drop_path(h, drop_path_prob, *drop, true);
        terms.push_back(std::move(h));
      }
      states.push_back(add(terms[0], terms[1]));
    }
    std::vector<Tensor<T>> kept;
    for (int c : genotype_.concat) kept.push_back(states[static_cast<std::size_t>(c)]);
    s0 = std::move(s1);
    s1 = concat_channels(kept);
    if (training && cfg_.has_auxiliary() && static_cast<int>(i) == cfg_.auxiliary_position()) {
      Tensor<T> a = relu(batch_norm(conv2d(relu(s1), m.aux_w), m.aux_bn, training));
      out.aux_logits = dense(global_avg_pool(relu(a)), m.aux_fc_w, m.aux_fc_b);
    }
  }
  out.logits = dense(global_avg_pool(s1), m.fc_w, m.fc_b);
  for (T v : out.logits.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite logits");
  }
  return out;
}

std::string eval_metrics_csv(const std::vector<EvalEpoch>& rows) {
  std::string s = "epoch,train_loss,test_acc,lr\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.test_acc, r.lr);
    s += line;
  }
  return s;
}

template <typename T>
double evaluate_accuracy(EvalNet<T>& net, const Dataset& test, std::int64_t batch_size) {
  if (test.size() == 0) throw InvalidArgument("empty test set");
  NoGradGuard no_grad;
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < test.size(); start += batch_size) {
    std::vector<std::int64_t> idx;
    for (std::int64_t i = start; i < std::min(test.size(), start + batch_size); ++i) idx.push_back(i);
    const auto batch = make_batch<T>(test, idx);
    const auto logits = net.forward(batch.images, false).logits;
    const auto k = logits.dim(1);
    const auto v = logits.data();
    for (std::size_t n = 0; n < idx.size(); ++n) {
      const auto row = v.subspan(n * static_cast<std::size_t>(k), static_cast<std::size_t>(k));
      correct += std::max_element(row.begin(), row.end()) - row.begin() == batch.labels[n];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

template <typename T>
EvalResult train_eval(EvalNet<T>& net, const Dataset& train, const Dataset& test, const EvalConfig& cfg,
                      std::uint64_t seed, const EvalRunOptions& options) {
  cfg.validate();
  train.validate();
  test.validate();
  const fs::path out = options.out_dir;
  if (!out.empty()) fs::create_directories(out);
  auto& store = net.params();
  EvalResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.optimizer.lr.lr_max, cfg.optimizer.lr.lr_min);
    Rng cut_rng(derive_seed(seed, "cutout", epoch));
    Rng drop_rng(derive_seed(seed, "drop-path", epoch));
    const auto batches = shuffled_batches(train.size(), cfg.batch_size, derive_seed(seed, "eval-order", epoch));
    EvalEpoch row;
    row.epoch = epoch;
    row.lr = lr;
    auto train_batch = [&](const std::vector<std::int64_t>& idx) {
      auto batch = make_batch<T>(train, idx);
      const Tensor<T> images = cutout(batch.images, cfg.cutout_length, cut_rng);
      store.zero_grad();
      const auto o = net.forward(images, true, cfg.drop_path_prob, &drop_rng);
      const std::span<const int> labels(batch.labels);
      Tensor<T> main = cross_entropy(o.logits, labels);
      Tensor<T> total = main;
      double aux_value = 0;
      if (o.aux_logits.defined()) {
        Tensor<T> aux = cross_entropy(o.aux_logits, labels);
        aux_value = aux.item();
        total = add(main, scale(aux, static_cast<T>(cfg.auxiliary_weight)));
      }
      const double value = total.item();
      if (!std::isfinite(value)) throw NumericError("non-finite loss");
      total.backward();
      optimizer_step_lr(store, cfg.optimizer, lr);
      row.train_loss += value;
      row.train_main_loss += main.item();
      row.train_aux_loss += aux_value;
    };
    try {
      for (const auto& idx : batches) train_batch(idx);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    store.zero_grad();
    const auto nb = static_cast<double>(batches.size());
    row.train_loss /= nb;
    row.train_main_loss /= nb;
    row.train_aux_loss /= nb;
    row.test_acc = evaluate_accuracy(net, test, cfg.batch_size);
    result.epochs.push_back(row);
    if (options.log) {
      *options.log << "eval epoch " << epoch << " train_loss " << row.train_loss << " test_acc " << row.test_acc
                   << " lr " << lr << "\n";
    }
    if (!out.empty()) write_text(out / "metrics.csv", eval_metrics_csv(result.epochs));
  }
  result.final_test_acc = result.epochs.back().test_acc;
  if (!out.empty()) save_checkpoint(store, out / "model.ckpt");
  return result;
}

#define PDARTS_INSTANTIATE(T)                                                                                       \
  template Tensor<T> drop_path<T>(const Tensor<T>&, double, Rng&, bool);                                          \
  template Tensor<T> cutout_at<T>(const Tensor<T>&, int, const std::vector<std::pair<std::int64_t, std::int64_t>>&); \
  template Tensor<T> cutout<T>(const Tensor<T>&, int, Rng&);                                                       \
  template class EvalNet<T>;                                                                                       \
  template double evaluate_accuracy<T>(EvalNet<T>&, const Dataset&, std::int64_t);                                 \
  template EvalResult train_eval<T>(EvalNet<T>&, const Dataset&, const Dataset&, const EvalConfig&, std::uint64_t, \
                                    const EvalRunOptions&);
PDARTS_INSTANTIATE(float)
PDARTS_INSTANTIATE(double)
#undef PDARTS_INSTANTIATE

}  // namespace pdarts
