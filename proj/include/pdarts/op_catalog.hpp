#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "pdarts/ops.hpp"
#include "pdarts/param_store.hpp"
#include "pdarts/rng.hpp"

namespace pdarts {

/// Candidate operations. The integer value is the canonical index used for
/// every tie-break and for alpha vector layout.
enum class OpKind : int {
  zero = 0,
  skip_connect = 1,
  max_pool_3x3 = 2,
  avg_pool_3x3 = 3,
  sep_conv_3x3 = 4,
  sep_conv_5x5 = 5,
  dil_conv_3x3 = 6,
  dil_conv_5x5 = 7,
};

inline constexpr int kNumOps = 8;

inline constexpr std::array<OpKind, kNumOps> kAllOps = {
    OpKind::zero,         OpKind::skip_connect, OpKind::max_pool_3x3, OpKind::avg_pool_3x3,
    OpKind::sep_conv_3x3, OpKind::sep_conv_5x5, OpKind::dil_conv_3x3, OpKind::dil_conv_5x5,
};

constexpr int op_index(OpKind k) { return static_cast<int>(k); }

std::string_view op_name(OpKind kind);

/// Inverse of op_name; nullopt for unknown names.
std::optional<OpKind> find_op(std::string_view name);

/// As find_op but throws FormatError for unknown names.
OpKind parse_op(std::string_view name);

/// A forward-only building block with optional owned parameters.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  /// Elements produced by primitive operations during forward at this input
  /// shape (tensors kept alive for the reverse pass).
  virtual std::int64_t activation_count(const Shape& in) const = 0;
};

/// Creates parameters under a path prefix. Convolution and dense weights
/// are uniform in +-1/sqrt(fan_in), drawn in creation order from `rng`.
template <typename T>
class ParamBuilder {
 public:
  ParamBuilder(ParamStore<T>& store, Rng& rng, std::string prefix = {})
      : store_(&store), rng_(&rng), prefix_(std::move(prefix)) {}

  ParamBuilder sub(const std::string& name) const { return ParamBuilder(*store_, *rng_, path(name)); }

  std::string path(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "/" + name; }

  Tensor<T> uniform(const std::string& name, Shape shape, std::int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> v(static_cast<std::size_t>(numel(shape)));
    for (auto& e : v) e = static_cast<T>(rng_->uniform(-bound, bound));
    return store_->add(path(name), Tensor<T>::from_data(std::move(shape), std::move(v)));
  }

  Tensor<T> zeros(const std::string& name, Shape shape) {
    return store_->add(path(name), Tensor<T>::zeros(std::move(shape)));
  }

  /// [cout, cin/groups, k, k]
  Tensor<T> conv(const std::string& name, std::int64_t cout, std::int64_t cin_per_group, std::int64_t k) {
    return uniform(name, {cout, cin_per_group, k, k}, cin_per_group * k * k);
  }

  BatchNormState<T> batch_norm(const std::string& name, std::int64_t channels, bool affine) {
    auto st = BatchNormState<T>::make(channels, affine);
    if (affine) {
      store_->add(path(name + "/weight"), st.weight);
      store_->add(path(name + "/bias"), st.bias);
    }
    store_->add_buffer(path(name + "/running_mean"), st.running_mean);
    store_->add_buffer(path(name + "/running_var"), st.running_var);
    return st;
  }

 private:
  ParamStore<T>* store_;
  Rng* rng_;
  std::string prefix_;
};

/// Builds operation `kind` mapping [N,C,H,W] to [N,C,H/stride,W/stride].
/// BN layers carry scale/shift only when `affine`.
template <typename T>
std::unique_ptr<Module<T>> instantiate_op(OpKind kind, std::int64_t channels, int stride, bool affine,
                                          ParamBuilder<T> params);

/// ReLU -> 1x1 conv -> BN, used to align cell inputs.
template <typename T>
std::unique_ptr<Module<T>> make_relu_conv_bn(std::int64_t c_in, std::int64_t c_out, bool affine,
                                             ParamBuilder<T> params);

/// ReLU -> two 1x1 stride-2 convs (the second on the input shifted by one
/// pixel) -> channel concat -> BN. Requires even spatial size and c_out.
template <typename T>
std::unique_ptr<Module<T>> make_factorized_reduce(std::int64_t c_in, std::int64_t c_out, bool affine,
                                                  ParamBuilder<T> params);

/// Trainable scalar count of instantiate_op(kind, channels, stride, affine).
std::int64_t op_param_count(OpKind kind, std::int64_t channels, int stride = 1, bool affine = false);

/// Output shape of the operation for input shape [N,C,H,W].
Shape op_output_shape(OpKind kind, const Shape& in, int stride);

/// Elements produced by the operation's forward pass at input shape `in`.
std::int64_t op_activation_count(OpKind kind, const Shape& in, int stride);

std::int64_t relu_conv_bn_activation_count(const Shape& in, std::int64_t c_out);
std::int64_t factorized_reduce_activation_count(const Shape& in, std::int64_t c_out);

}  // namespace pdarts
