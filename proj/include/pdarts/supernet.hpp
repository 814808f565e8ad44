#pragma once

#include <cstdint>
#include <vector>

#include "pdarts/cell_graph.hpp"

namespace pdarts {

struct SearchNetConfig {
  int layers = 5;
  std::int64_t channels = 16;
  int nodes = 4;
  int num_classes = 10;
  std::int64_t image_size = 32;
  std::int64_t in_channels = 3;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  bool is_reduction(int cell) const { return cell == layers / 3 || cell == 2 * layers / 3; }

  /// C=8, B=2, 8x8 inputs.
  static SearchNetConfig desk(int layers = 5);
  /// C=16, B=4, 32x32 inputs.
  static SearchNetConfig cifar10(int layers = 5);
};

/// Cell indices holding reduction cells: floor(L/3) and floor(2L/3).
std::vector<int> reduction_positions(int layers);

struct CellPlan {
  CellType type;
  std::int64_t c_pp;
  std::int64_t c_p;
  std::int64_t c;
  bool reduction_prev;
  Shape s0;
  Shape s1;
  Shape out;
};

/// Channel and shape bookkeeping of the whole network for a batch size,
/// without allocating anything.
struct SupernetPlan {
  Shape input;
  Shape stem_out;
  std::vector<CellPlan> cells;
  Shape logits;
};

SupernetPlan plan_supernet(const SearchNetConfig& cfg, std::int64_t batch);

/// Trainable scalars of the network built on `schema` (alphas excluded).
std::int64_t supernet_param_count(const SearchNetConfig& cfg, const SearchSchema& schema);

/// Elements produced by one forward pass at batch size `batch`, summed over
/// the stem, every branch operation, node sums, concats and the classifier.
std::int64_t supernet_activation_count(const SearchNetConfig& cfg, const SearchSchema& schema, std::int64_t batch,
                                       bool dropout_active = false);

/// Batch-1 activation count averaged over every O-element subset of the
/// operation catalog used uniformly on all edges of both cell types.
double activation_count_proxy(const SearchNetConfig& cfg, int candidates);

template <typename T>
class SuperNet {
 public:
  /// Parameters are drawn from a generator seeded with `seed`.
  SuperNet(const SearchNetConfig& cfg, const SearchSchema& schema, std::uint64_t seed);

  const SearchNetConfig& config() const { return cfg_; }
  const SearchSchema& schema() const { return schema_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  /// images [N, in_channels, S, S] -> logits [N, num_classes]. Throws
  /// NumericError if the logits are not finite.
  Tensor<T> forward(const Tensor<T>& images, const AlphaTable<T>& alphas, const SkipDropout& drop, bool training);

 private:
  SearchNetConfig cfg_;
  SearchSchema schema_;
  ParamStore<T> store_;
  Tensor<T> stem_w_;
  BatchNormState<T> stem_bn_;
  std::vector<SearchCell<T>> cells_;
  Tensor<T> fc_w_;
  Tensor<T> fc_b_;
};

}  // namespace pdarts
