#include "pdarts/supernet.hpp"

#include <bit>
#include <cmath>

namespace pdarts {

void SearchNetConfig::validate() const {
  if (layers < 2) throw ConfigError("layers", "must be at least 2, got " + std::to_string(layers));
  if (channels < 2 || channels % 2 != 0) {
    throw ConfigError("channels", "must be a positive even number, got " + std::to_string(channels));
  }
  if (nodes < 1) throw ConfigError("nodes", "must be at least 1, got " + std::to_string(nodes));
  if (num_classes < 2) throw ConfigError("num_classes", "must be at least 2, got " + std::to_string(num_classes));
  if (image_size < 4 || image_size % 4 != 0) {
    throw ConfigError("image_size", "must be a positive multiple of 4, got " + std::to_string(image_size));
  }
  if (in_channels < 1) throw ConfigError("in_channels", "must be positive, got " + std::to_string(in_channels));
}

SearchNetConfig SearchNetConfig::desk(int layers) { return {layers, 8, 2, 10, 8, 3}; }

SearchNetConfig SearchNetConfig::cifar10(int layers) { return {layers, 16, 4, 10, 32, 3}; }

std::vector<int> reduction_positions(int layers) { return {layers / 3, 2 * layers / 3}; }

SupernetPlan plan_supernet(const SearchNetConfig& cfg, std::int64_t batch) {
  cfg.validate();
  if (batch < 1) throw InvalidArgument("batch size must be positive, got " + std::to_string(batch));
  SupernetPlan plan;
  plan.input = {batch, cfg.in_channels, cfg.image_size, cfg.image_size};
  plan.stem_out = {batch, cfg.channels, cfg.image_size, cfg.image_size};
  Shape s0 = plan.stem_out, s1 = plan.stem_out;
  std::int64_t c = cfg.channels;
  bool reduction_prev = false;
  for (int i = 0; i < cfg.layers; ++i) {
    const bool reduction = cfg.is_reduction(i);
    if (reduction) c *= 2;
    const std::int64_t side = reduction ? s1[2] / 2 : s1[2];
    CellPlan cell{reduction ? CellType::reduce : CellType::normal, s0[1], s1[1], c, reduction_prev, s0, s1,
                  Shape{batch, c * cfg.nodes, side, side}};
    s0 = s1;
    s1 = cell.out;
    reduction_prev = reduction;
    plan.cells.push_back(cell);
  }
  plan.logits = {batch, cfg.num_classes};
  return plan;
}

namespace {

void check_schema(const SearchNetConfig& cfg, const SearchSchema& schema) {
  for (auto t : {CellType::normal, CellType::reduce}) {
    const auto& s = schema.of(t);
    if (s.spec.nodes != cfg.nodes) {
      throw InvalidArgument(std::string(cell_type_name(t)) + " schema has " + std::to_string(s.spec.nodes) +
                            " nodes but the network uses " + std::to_string(cfg.nodes));
    }
    s.validate();
  }
}

std::int64_t edge_activation_count(const std::vector<OpKind>& cands, const Shape& in, int stride,
                                   bool dropout_active) {
  const Shape out = op_output_shape(cands.front(), in, stride);
  std::int64_t n = 0;
  for (auto k : cands) {
    n += op_activation_count(k, in, stride);
    if (dropout_active && k == OpKind::skip_connect && stride == 1) n += numel(out);
  }
  if (cands.size() > 1) n += static_cast<std::int64_t>(cands.size()) + numel(out);
  return n;
}

}  // namespace

std::int64_t supernet_param_count(const SearchNetConfig& cfg, const SearchSchema& schema) {
  check_schema(cfg, schema);
  const auto plan = plan_supernet(cfg, 1);
  std::int64_t n = cfg.channels * cfg.in_channels * 9 + 2 * cfg.channels;  // stem conv + affine BN
  for (const auto& cell : plan.cells) {
    n += cell.c_pp * cell.c + cell.c_p * cell.c;  // 1x1 preprocessing (factorized reduce has the same count)
    const auto& s = schema.of(cell.type);
    for (int e = 0; e < s.spec.edge_count(); ++e) {
      const int stride = cell.type == CellType::reduce && s.spec.edge(e).first < 2 ? 2 : 1;
      for (auto k : s.candidates[static_cast<std::size_t>(e)]) n += op_param_count(k, cell.c, stride);
    }
  }
  const std::int64_t features = plan.cells.back().out[1];
  return n + features * cfg.num_classes + cfg.num_classes;
}

std::int64_t supernet_activation_count(const SearchNetConfig& cfg, const SearchSchema& schema, std::int64_t batch,
                                       bool dropout_active) {
  check_schema(cfg, schema);
  const auto plan = plan_supernet(cfg, batch);
  std::int64_t n = 2 * numel(plan.stem_out);  // conv + BN
  for (const auto& cell : plan.cells) {
    const Shape x{batch, cell.c, cell.s1[2], cell.s1[3]};
    n += cell.reduction_prev ? factorized_reduce_activation_count(cell.s0, cell.c)
                             : relu_conv_bn_activation_count(cell.s0, cell.c);
    n += relu_conv_bn_activation_count(cell.s1, cell.c);
    const Shape node{batch, cell.c, cell.out[2], cell.out[3]};
    const auto& s = schema.of(cell.type);
    for (int to = 2; to <= s.spec.nodes + 1; ++to) {
      for (int from = 0; from < to; ++from) {
        const int stride = cell.type == CellType::reduce && from < 2 ? 2 : 1;
        n += edge_activation_count(s.candidates[static_cast<std::size_t>(s.spec.edge_index(from, to))],
                                   from < 2 ? x : node, stride, dropout_active);
      }
      n += numel(node);
    }
    n += numel(cell.out);
  }
  return n + batch * plan.cells.back().out[1] + numel(plan.logits);  // pooled features + logits
}

double activation_count_proxy(const SearchNetConfig& cfg, int candidates) {
  if (candidates < 1 || candidates > kNumOps) {
    throw InvalidArgument("candidate count must be in [1, " + std::to_string(kNumOps) + "], got " +
                          std::to_string(candidates));
  }
  double total = 0;
  int subsets = 0;
  for (unsigned mask = 0; mask < (1u << kNumOps); ++mask) {
    if (std::popcount(mask) != candidates) continue;
    std::vector<OpKind> ops;
    for (int i = 0; i < kNumOps; ++i) {
      if (mask >> i & 1) ops.push_back(kAllOps[static_cast<std::size_t>(i)]);
    }
    const auto cell = CellSchema::uniform(cfg.nodes, ops);
    total += static_cast<double>(supernet_activation_count(cfg, {cell, cell}, 1));
    ++subsets;
  }
  return total / subsets;
}

template <typename T>
SuperNet<T>::SuperNet(const SearchNetConfig& cfg, const SearchSchema& schema, std::uint64_t seed)
    : cfg_(cfg), schema_(schema) {
  check_schema(cfg, schema);
  const auto plan = plan_supernet(cfg, 1);
  Rng rng(seed);
  ParamBuilder<T> pb(store_, rng);
  stem_w_ = pb.conv("stem/conv", cfg.channels, cfg.in_channels, 3);
  stem_bn_ = pb.batch_norm("stem/bn", cfg.channels, true);
  cells_.reserve(plan.cells.size());
  for (std::size_t i = 0; i < plan.cells.size(); ++i) {
    const auto& c = plan.cells[i];
    cells_.emplace_back(c.type, schema.of(c.type), c.c_pp, c.c_p, c.c, c.reduction_prev,
                        pb.sub("cell" + std::to_string(i)));
  }
  const std::int64_t features = plan.cells.back().out[1];
  fc_w_ = pb.uniform("classifier/weight", {cfg.num_classes, features}, features);
  fc_b_ = pb.zeros("classifier/bias", {cfg.num_classes});
}

template <typename T>
Tensor<T> SuperNet<T>::forward(const Tensor<T>& images, const AlphaTable<T>& alphas, const SkipDropout& drop,
                               bool training) {
  if (!(alphas.schema == schema_)) throw InvalidArgument("alpha table schema does not match the network");
  const Shape& in = images.shape();
  if (in.size() != 4 || in[1] != cfg_.in_channels || in[2] != cfg_.image_size || in[3] != cfg_.image_size) {
    throw ShapeError("network expects [N, " + std::to_string(cfg_.in_channels) + ", " +
                     std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) + "] images, got " +
                     to_string(in));
  }
  Tensor<T> s0 = batch_norm(conv2d(images, stem_w_, {1, 1, 1, 1}), stem_bn_, training);
  Tensor<T> s1 = s0;
  for (auto& cell : cells_) {
    Tensor<T> next = cell.forward(s0, s1, alphas.of(cell.type()), drop, training);
    s0 = std::move(s1);
    s1 = std::move(next);
  }
  Tensor<T> logits = dense(global_avg_pool(s1), fc_w_, fc_b_);
  for (T v : logits.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite logits");
  }
  return logits;
}

template class SuperNet<float>;
template class SuperNet<double>;

}  // namespace pdarts
