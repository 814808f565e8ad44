#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pdarts/tensor.hpp"

/// Differentiable primitives. Images are NCHW; every function records its
/// backward closure when an input requires a gradient.
namespace pdarts {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

/// floor((in + 2*pad - dilation*(k-1) - 1)/stride) + 1
std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, int stride, int padding, int dilation);

/// x: [N, Cin, H, W], w: [Cout, Cin/groups, KH, KW]. No bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Conv2dOptions& opt = {});

/// Per-channel normalization state. weight/bias stay undefined when the
/// affine transform is off; running statistics are inference-only buffers.
template <typename T>
struct BatchNormState {
  Tensor<T> weight;
  Tensor<T> bias;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  bool affine() const { return weight.defined(); }
  static BatchNormState make(std::int64_t channels, bool affine);
};

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, bool training);

enum class PoolKind { max, avg };

/// 3x3 pooling. Average excludes padded cells from the count; max routes the
/// gradient to the first maximal element in row-major window order.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, int kernel, int stride, int padding);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& xs);

/// Elementwise product of equal shapes.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// x * mask with a constant mask of the same size (dropout).
template <typename T>
Tensor<T> mul_mask(const Tensor<T>& x, std::vector<T> mask);

/// Multiplies sample n of a batched tensor by factors[n] (drop-path).
template <typename T>
Tensor<T> scale_samples(const Tensor<T>& x, std::vector<T> factors);

/// Softmax of a 1-D tensor. Entries equal to -inf get weight exactly 0.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// sum_i weights[i] * xs[i]; weights is 1-D with one entry per term.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& weights, const std::vector<Tensor<T>>& xs);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

/// x[:, :, top:, left:]
template <typename T>
Tensor<T> crop(const Tensor<T>& x, int top, int left);

/// [N, C, H, W] -> [N, C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// x: [N, F], w: [K, F], b: [K] (may be undefined) -> [N, K]
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// sum_i x_i * r_i for a constant r; scalarizes outputs for gradient checks.
template <typename T>
Tensor<T> sum_product(const Tensor<T>& x, std::span<const T> r);

}  // namespace pdarts
