#pragma once

#include <memory>
#include <vector>

#include "pdarts/arch.hpp"
#include "pdarts/op_catalog.hpp"

namespace pdarts {

/// Operation-level dropout applied to the skip_connect branch of every mixed
/// edge while the super-network trains. Each element is zeroed with
/// probability `rate` and survivors are scaled by 1/(1-rate).
struct SkipDropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  bool active(bool training) const { return training && rate > 0.0 && rng != nullptr; }
};

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng);

/// Architecture parameters of both cell types as trainable tensors.
template <typename T>
struct AlphaTable {
  SearchSchema schema;
  ParamStore<T> store;
  std::vector<Tensor<T>> normal;
  std::vector<Tensor<T>> reduce;

  const std::vector<Tensor<T>>& of(CellType t) const { return t == CellType::normal ? normal : reduce; }
  ArchSnapshot snapshot() const;
  /// Overwrites values from a snapshot with the same schema.
  void load(const ArchSnapshot& snap);
};

/// Alphas drawn i.i.d. from a zero-mean Gaussian with standard deviation `scale`.
template <typename T>
AlphaTable<T> init_alphas(const SearchSchema& schema, std::uint64_t seed, double scale = 1e-3);

/// The candidate operations of one edge.
template <typename T>
class MixedEdge {
 public:
  MixedEdge(std::vector<OpKind> candidates, std::int64_t channels, int stride, ParamBuilder<T> params);

  const std::vector<OpKind>& candidates() const { return candidates_; }
  int stride() const { return stride_; }
  Module<T>& op(std::size_t i) { return *ops_[i]; }
  Shape output_shape(const Shape& in) const { return ops_.front()->output_shape(in); }
  std::int64_t activation_count(const Shape& in, bool dropout_active) const;

 private:
  std::vector<OpKind> candidates_;
  int stride_;
  std::vector<std::unique_ptr<Module<T>>> ops_;
};

/// sum_o softmax(alpha)_o * o(x). A single candidate returns o(x) directly.
template <typename T>
Tensor<T> edge_mix_forward(MixedEdge<T>& edge, const Tensor<T>& alpha, const Tensor<T>& x, const SkipDropout& drop,
                           bool training);

/// Node j = sum over i < j of edge (i, j) applied to node i; returns the
/// channel concat of all intermediate nodes. `edges` and `alphas` follow
/// CellSpec edge numbering.
template <typename T>
Tensor<T> cell_forward(const CellSpec& spec, std::vector<MixedEdge<T>>& edges, const std::vector<Tensor<T>>& alphas,
                       const Tensor<T>& x0, const Tensor<T>& x1, const SkipDropout& drop, bool training);

/// A super-network cell: input preprocessing plus the mixed-edge DAG.
template <typename T>
class SearchCell {
 public:
  /// c_pp, c_p: channels of the two previous cell outputs; c: this cell's
  /// per-node channels. Preprocessing of input 0 downsamples when the
  /// previous cell was a reduction.
  SearchCell(CellType type, const CellSchema& schema, std::int64_t c_pp, std::int64_t c_p, std::int64_t c,
             bool reduction_prev, ParamBuilder<T> params);

  CellType type() const { return type_; }
  std::int64_t out_channels() const { return c_ * spec_.nodes; }
  Tensor<T> forward(const Tensor<T>& s0, const Tensor<T>& s1, const std::vector<Tensor<T>>& alphas,
                    const SkipDropout& drop, bool training);
  Shape output_shape(const Shape& s0, const Shape& s1) const;
  std::int64_t activation_count(const Shape& s0, const Shape& s1, bool dropout_active) const;

 private:
  CellType type_;
  CellSpec spec_;
  std::int64_t c_;
  std::unique_ptr<Module<T>> pre0_;
  std::unique_ptr<Module<T>> pre1_;
  std::vector<MixedEdge<T>> edges_;
};

}  // namespace pdarts
