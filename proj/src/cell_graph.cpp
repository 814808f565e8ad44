#include "pdarts/cell_graph.hpp"

#include <cmath>

namespace pdarts {

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw InvalidArgument("dropout rate must be in [0, 1), got " + std::to_string(rate));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(static_cast<std::size_t>(x.numel()));
  for (auto& m : mask) m = rng.bernoulli(rate) ? T(0) : keep_scale;
  return mul_mask(x, std::move(mask));
}

template <typename T>
ArchSnapshot AlphaTable<T>::snapshot() const {
  ArchSnapshot snap;
  for (auto t : {CellType::normal, CellType::reduce}) {
    auto& cell = snap.of(t);
    cell.schema = schema.of(t);
    for (const auto& a : of(t)) cell.alpha.emplace_back(a.data().begin(), a.data().end());
  }
  return snap;
}

template <typename T>
void AlphaTable<T>::load(const ArchSnapshot& snap) {
  for (auto t : {CellType::normal, CellType::reduce}) {
    if (!(snap.of(t).schema == schema.of(t))) {
      throw InvalidArgument(std::string(cell_type_name(t)) + " snapshot schema does not match the alpha table");
    }
    auto& tensors = t == CellType::normal ? normal : reduce;
    for (std::size_t e = 0; e < tensors.size(); ++e) {
      auto d = tensors[e].mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(snap.of(t).alpha[e][i]);
    }
  }
}

template <typename T>
AlphaTable<T> init_alphas(const SearchSchema& schema, std::uint64_t seed, double scale) {
  AlphaTable<T> table;
  table.schema = schema;
  Rng rng(seed);
  for (auto t : {CellType::normal, CellType::reduce}) {
    const auto& cell = schema.of(t);
    cell.validate();
    auto& tensors = t == CellType::normal ? table.normal : table.reduce;
    for (std::size_t e = 0; e < cell.candidates.size(); ++e) {
      const auto n = static_cast<std::int64_t>(cell.candidates[e].size());
      std::vector<T> v(static_cast<std::size_t>(n));
      for (auto& a : v) a = static_cast<T>(rng.normal(0.0, scale));
      const std::string name = std::string(cell_type_name(t)) + "/edge" + std::to_string(e);
      tensors.push_back(table.store.add(name, Tensor<T>::from_data({n}, std::move(v))));
    }
  }
  return table;
}

template <typename T>
MixedEdge<T>::MixedEdge(std::vector<OpKind> candidates, std::int64_t channels, int stride, ParamBuilder<T> pb)
    : candidates_(std::move(candidates)), stride_(stride) {
  if (candidates_.empty()) throw InvalidArgument("mixed edge needs at least one candidate");
  for (auto k : candidates_) ops_.push_back(instantiate_op<T>(k, channels, stride, false, pb.sub(std::string(op_name(k)))));
}

namespace {

bool drops_branch(OpKind k, int stride) { return k == OpKind::skip_connect && stride == 1; }

}  // namespace

template <typename T>
std::int64_t MixedEdge<T>::activation_count(const Shape& in, bool dropout_active) const {
  const Shape out = output_shape(in);
  std::int64_t n = 0;
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    n += ops_[i]->activation_count(in);
    if (dropout_active && drops_branch(candidates_[i], stride_)) n += numel(out);
  }
  if (ops_.size() > 1) n += static_cast<std::int64_t>(ops_.size()) + numel(out);  // softmax + weighted sum
  return n;
}

template <typename T>
Tensor<T> edge_mix_forward(MixedEdge<T>& edge, const Tensor<T>& alpha, const Tensor<T>& x, const SkipDropout& drop,
                           bool training) {
  const auto& cands = edge.candidates();
  if (alpha.numel() != static_cast<std::int64_t>(cands.size())) {
    throw ShapeError("edge has " + std::to_string(cands.size()) + " candidates but alpha of shape " +
                     to_string(alpha.shape()));
  }
  auto branch = [&](std::size_t i) {
    Tensor<T> y = edge.op(i).forward(x, training);
    if (drop.active(training) && drops_branch(cands[i], edge.stride())) y = dropout(y, drop.rate, *drop.rng);
    return y;
  };
  if (cands.size() == 1) return branch(0);
  std::vector<Tensor<T>> outs;
  outs.reserve(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) outs.push_back(branch(i));
  return weighted_sum(softmax(alpha), outs);
}

template <typename T>
Tensor<T> cell_forward(const CellSpec& spec, std::vector<MixedEdge<T>>& edges, const std::vector<Tensor<T>>& alphas,
                       const Tensor<T>& x0, const Tensor<T>& x1, const SkipDropout& drop, bool training) {
  if (static_cast<int>(edges.size()) != spec.edge_count() || alphas.size() != edges.size()) {
    throw InvalidArgument("cell expects " + std::to_string(spec.edge_count()) + " edges and alphas");
  }
  if (x0.shape() != x1.shape()) {
    throw ShapeError("cell inputs differ in shape: " + to_string(x0.shape()) + " vs " + to_string(x1.shape()));
  }
  std::vector<Tensor<T>> states{x0, x1};
  for (int to = 2; to <= spec.nodes + 1; ++to) {
    std::vector<Tensor<T>> terms;
    for (int from = 0; from < to; ++from) {
      const int e = spec.edge_index(from, to);
      terms.push_back(edge_mix_forward(edges[e], alphas[e], states[from], drop, training));
    }
    states.push_back(add_n(terms));
  }
  return concat_channels(std::vector<Tensor<T>>(states.begin() + 2, states.end()));
}

template <typename T>
SearchCell<T>::SearchCell(CellType type, const CellSchema& schema, std::int64_t c_pp, std::int64_t c_p,
                          std::int64_t c, bool reduction_prev, ParamBuilder<T> pb)
    : type_(type), spec_(schema.spec), c_(c) {
  schema.validate();
  pre0_ = reduction_prev ? make_factorized_reduce<T>(c_pp, c, false, pb.sub("pre0"))
                         : make_relu_conv_bn<T>(c_pp, c, false, pb.sub("pre0"));
  pre1_ = make_relu_conv_bn<T>(c_p, c, false, pb.sub("pre1"));
  for (int e = 0; e < spec_.edge_count(); ++e) {
    const auto [from, to] = spec_.edge(e);
    const int stride = type == CellType::reduce && from < 2 ? 2 : 1;
    edges_.emplace_back(schema.candidates[e], c, stride, pb.sub("edge" + std::to_string(e)));
  }
}

template <typename T>
Tensor<T> SearchCell<T>::forward(const Tensor<T>& s0, const Tensor<T>& s1, const std::vector<Tensor<T>>& alphas,
                                 const SkipDropout& drop, bool training) {
  return cell_forward(spec_, edges_, alphas, pre0_->forward(s0, training), pre1_->forward(s1, training), drop,
                      training);
}

template <typename T>
Shape SearchCell<T>::output_shape(const Shape& s0, const Shape& s1) const {
  const Shape x = pre1_->output_shape(s1);
  if (pre0_->output_shape(s0) != x) {
    throw ShapeError("cell inputs differ in shape after preprocessing: " + to_string(pre0_->output_shape(s0)) +
                     " vs " + to_string(x));
  }
  const Shape node = edges_.front().output_shape(x);
  return {node[0], out_channels(), node[2], node[3]};
}

template <typename T>
std::int64_t SearchCell<T>::activation_count(const Shape& s0, const Shape& s1, bool dropout_active) const {
  const Shape x = pre1_->output_shape(s1);
  std::int64_t n = pre0_->activation_count(s0) + pre1_->activation_count(s1);
  const Shape node = edges_.front().output_shape(x);
  for (int to = 2; to <= spec_.nodes + 1; ++to) {
    for (int from = 0; from < to; ++from) {
      const auto& edge = edges_[static_cast<std::size_t>(spec_.edge_index(from, to))];
      n += edge.activation_count(from < 2 ? x : node, dropout_active);
    }
    n += numel(node);  // node sum
  }
  return n + numel(output_shape(s0, s1));  // concat
}

#define PDARTS_INSTANTIATE_CELL(T)                                                                                 \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Rng&);                                                   \
  template struct AlphaTable<T>;                                                                                   \
  template AlphaTable<T> init_alphas<T>(const SearchSchema&, std::uint64_t, double);                               \
  template class MixedEdge<T>;                                                                                     \
  template Tensor<T> edge_mix_forward<T>(MixedEdge<T>&, const Tensor<T>&, const Tensor<T>&, const SkipDropout&,    \
                                         bool);                                                                    \
  template Tensor<T> cell_forward<T>(const CellSpec&, std::vector<MixedEdge<T>>&, const std::vector<Tensor<T>>&,   \
                                     const Tensor<T>&, const Tensor<T>&, const SkipDropout&, bool);                \
  template class SearchCell<T>;

PDARTS_INSTANTIATE_CELL(float)
PDARTS_INSTANTIATE_CELL(double)

}  // namespace pdarts
