#include "pdarts/op_catalog.hpp"

#include <cmath>

namespace pdarts {

namespace {

constexpr std::array<std::string_view, kNumOps> kNames = {
    "zero",         "skip_connect", "max_pool_3x3", "avg_pool_3x3",
    "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5",
};

void check_stride(int stride) {
  if (stride != 1 && stride != 2) throw InvalidArgument("stride must be 1 or 2, got " + std::to_string(stride));
}

void check_input(const Shape& in, const char* what) {
  if (in.size() != 4) throw ShapeError(std::string(what) + ": expected NCHW input, got " + to_string(in));
}

Shape strided(const Shape& in, int stride) {
  return {in[0], in[1], conv_output_size(in[2], 1, stride, 0, 1), conv_output_size(in[3], 1, stride, 0, 1)};
}

int kernel_of(OpKind k) {
  return (k == OpKind::sep_conv_5x5 || k == OpKind::dil_conv_5x5) ? 5 : 3;
}

template <typename T>
class Zero final : public Module<T> {
 public:
  explicit Zero(int stride) : stride_(stride) {}
  Tensor<T> forward(const Tensor<T>& x, bool) override { return Tensor<T>::zeros(output_shape(x.shape())); }
  Shape output_shape(const Shape& in) const override { return strided(in, stride_); }
  std::int64_t activation_count(const Shape&) const override { return 0; }

 private:
  int stride_;
};

template <typename T>
class Identity final : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool) override { return x; }
  Shape output_shape(const Shape& in) const override { return in; }
  std::int64_t activation_count(const Shape&) const override { return 0; }
};

template <typename T>
class PoolBN final : public Module<T> {
 public:
  PoolBN(PoolKind kind, std::int64_t c, int stride, bool affine, ParamBuilder<T> pb)
      : kind_(kind), stride_(stride), bn_(pb.batch_norm("bn", c, affine)) {}
  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    return batch_norm(pool2d(x, kind_, 3, stride_, 1), bn_, training);
  }
  Shape output_shape(const Shape& in) const override { return strided(in, stride_); }
  std::int64_t activation_count(const Shape& in) const override { return 2 * numel(output_shape(in)); }

 private:
  PoolKind kind_;
  int stride_;
  BatchNormState<T> bn_;
};

/// ReLU -> depthwise kxk -> pointwise 1x1 -> BN.
template <typename T>
class DwPwBlock {
 public:
  DwPwBlock(std::int64_t c, int k, int stride, int dilation, bool affine, ParamBuilder<T> pb)
      : opt_{stride, dilation * (k - 1) / 2, dilation, static_cast<int>(c)},
        dw_(pb.conv("dw", c, 1, k)),
        pw_(pb.conv("pw", c, c, 1)),
        bn_(pb.batch_norm("bn", c, affine)) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batch_norm(conv2d(conv2d(relu(x), dw_, opt_), pw_), bn_, training);
  }
  Shape output_shape(const Shape& in) const { return strided(in, opt_.stride); }
  std::int64_t activation_count(const Shape& in) const { return numel(in) + 3 * numel(output_shape(in)); }

 private:
  Conv2dOptions opt_;
  Tensor<T> dw_;
  Tensor<T> pw_;
  BatchNormState<T> bn_;
};

template <typename T>
class SepConv final : public Module<T> {
 public:
  SepConv(std::int64_t c, int k, int stride, bool affine, ParamBuilder<T> pb)
      : first_(c, k, stride, 1, affine, pb.sub("block1")), second_(c, k, 1, 1, affine, pb.sub("block2")) {}
  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    return second_.forward(first_.forward(x, training), training);
  }
  Shape output_shape(const Shape& in) const override { return first_.output_shape(in); }
  std::int64_t activation_count(const Shape& in) const override {
    const Shape mid = first_.output_shape(in);
    return first_.activation_count(in) + second_.activation_count(mid);
  }

 private:
  DwPwBlock<T> first_;
  DwPwBlock<T> second_;
};

template <typename T>
class DilConv final : public Module<T> {
 public:
  DilConv(std::int64_t c, int k, int stride, bool affine, ParamBuilder<T> pb) : block_(c, k, stride, 2, affine, pb) {}
  Tensor<T> forward(const Tensor<T>& x, bool training) override { return block_.forward(x, training); }
  Shape output_shape(const Shape& in) const override { return block_.output_shape(in); }
  std::int64_t activation_count(const Shape& in) const override { return block_.activation_count(in); }

 private:
  DwPwBlock<T> block_;
};

template <typename T>
class ReLUConvBN final : public Module<T> {
 public:
  ReLUConvBN(std::int64_t c_in, std::int64_t c_out, bool affine, ParamBuilder<T> pb)
      : c_out_(c_out), w_(pb.conv("conv", c_out, c_in, 1)), bn_(pb.batch_norm("bn", c_out, affine)) {}
  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    return batch_norm(conv2d(relu(x), w_), bn_, training);
  }
  Shape output_shape(const Shape& in) const override { return {in[0], c_out_, in[2], in[3]}; }
  std::int64_t activation_count(const Shape& in) const override {
    return relu_conv_bn_activation_count(in, c_out_);
  }

 private:
  std::int64_t c_out_;
  Tensor<T> w_;
  BatchNormState<T> bn_;
};

template <typename T>
class FactorizedReduce final : public Module<T> {
 public:
  FactorizedReduce(std::int64_t c_in, std::int64_t c_out, bool affine, ParamBuilder<T> pb)
      : c_out_(even_channels(c_out)),
        w1_(pb.conv("conv1", c_out / 2, c_in, 1)),
        w2_(pb.conv("conv2", c_out / 2, c_in, 1)),
        bn_(pb.batch_norm("bn", c_out, affine)) {}
  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    check_even(x.shape());
    const auto r = relu(x);
    const Conv2dOptions s2{.stride = 2};
    return batch_norm(concat_channels<T>({conv2d(r, w1_, s2), conv2d(crop(r, 1, 1), w2_, s2)}), bn_, training);
  }
  Shape output_shape(const Shape& in) const override {
    check_even(in);
    return {in[0], c_out_, in[2] / 2, in[3] / 2};
  }
  std::int64_t activation_count(const Shape& in) const override {
    return factorized_reduce_activation_count(in, c_out_);
  }

 private:
  static std::int64_t even_channels(std::int64_t c) {
    if (c % 2 != 0) throw InvalidArgument("factorized reduce needs an even channel count, got " + std::to_string(c));
    return c;
  }

  static void check_even(const Shape& in) {
    check_input(in, "factorized reduce");
    if (in[2] % 2 != 0 || in[3] % 2 != 0) {
      throw ShapeError("factorized reduce needs even spatial size, got " + to_string(in));
    }
  }

  std::int64_t c_out_;
  Tensor<T> w1_;
  Tensor<T> w2_;
  BatchNormState<T> bn_;
};

}  // namespace

std::string_view op_name(OpKind kind) {
  const int i = op_index(kind);
  if (i < 0 || i >= kNumOps) throw InvalidArgument("invalid operation index " + std::to_string(i));
  return kNames[static_cast<std::size_t>(i)];
}

std::optional<OpKind> find_op(std::string_view name) {
  for (int i = 0; i < kNumOps; ++i) {
    if (kNames[static_cast<std::size_t>(i)] == name) return static_cast<OpKind>(i);
  }
  return std::nullopt;
}

OpKind parse_op(std::string_view name) {
  if (auto k = find_op(name)) return *k;
  throw FormatError("unknown operation '" + std::string(name) + "'");
}

template <typename T>
std::unique_ptr<Module<T>> instantiate_op(OpKind kind, std::int64_t channels, int stride, bool affine,
                                          ParamBuilder<T> pb) {
  check_stride(stride);
  if (channels <= 0) throw InvalidArgument("channels must be positive, got " + std::to_string(channels));
  switch (kind) {
    case OpKind::zero:
      return std::make_unique<Zero<T>>(stride);
    case OpKind::skip_connect:
      if (stride == 1) return std::make_unique<Identity<T>>();
      return std::make_unique<FactorizedReduce<T>>(channels, channels, affine, pb);
    case OpKind::max_pool_3x3:
      return std::make_unique<PoolBN<T>>(PoolKind::max, channels, stride, affine, pb);
    case OpKind::avg_pool_3x3:
      return std::make_unique<PoolBN<T>>(PoolKind::avg, channels, stride, affine, pb);
    case OpKind::sep_conv_3x3:
    case OpKind::sep_conv_5x5:
      return std::make_unique<SepConv<T>>(channels, kernel_of(kind), stride, affine, pb);
    case OpKind::dil_conv_3x3:
    case OpKind::dil_conv_5x5:
      return std::make_unique<DilConv<T>>(channels, kernel_of(kind), stride, affine, pb);
  }
  throw InvalidArgument("invalid operation index " + std::to_string(op_index(kind)));
}

template <typename T>
std::unique_ptr<Module<T>> make_relu_conv_bn(std::int64_t c_in, std::int64_t c_out, bool affine,
                                             ParamBuilder<T> pb) {
  return std::make_unique<ReLUConvBN<T>>(c_in, c_out, affine, pb);
}

template <typename T>
std::unique_ptr<Module<T>> make_factorized_reduce(std::int64_t c_in, std::int64_t c_out, bool affine,
                                                  ParamBuilder<T> pb) {
  return std::make_unique<FactorizedReduce<T>>(c_in, c_out, affine, pb);
}

std::int64_t op_param_count(OpKind kind, std::int64_t c, int stride, bool affine) {
  check_stride(stride);
  const std::int64_t bn = affine ? 2 * c : 0;
  switch (kind) {
    case OpKind::zero:
      return 0;
    case OpKind::skip_connect:
      return stride == 1 ? 0 : 2 * (c / 2) * c + bn;
    case OpKind::max_pool_3x3:
    case OpKind::avg_pool_3x3:
      return bn;
    case OpKind::sep_conv_3x3:
    case OpKind::sep_conv_5x5: {
      const std::int64_t k = kernel_of(kind);
      return 2 * (k * k * c + c * c + bn);
    }
    case OpKind::dil_conv_3x3:
    case OpKind::dil_conv_5x5: {
      const std::int64_t k = kernel_of(kind);
      return k * k * c + c * c + bn;
    }
  }
  throw InvalidArgument("invalid operation index " + std::to_string(op_index(kind)));
}

Shape op_output_shape(OpKind kind, const Shape& in, int stride) {
  check_stride(stride);
  check_input(in, op_name(kind).data());
  if (kind == OpKind::skip_connect && stride == 2) {
    if (in[2] % 2 != 0 || in[3] % 2 != 0) {
      throw ShapeError("factorized reduce needs even spatial size, got " + to_string(in));
    }
  }
  return strided(in, stride);
}

std::int64_t op_activation_count(OpKind kind, const Shape& in, int stride) {
  const Shape out = op_output_shape(kind, in, stride);
  switch (kind) {
    case OpKind::zero:
      return 0;
    case OpKind::skip_connect:
      return stride == 1 ? 0 : factorized_reduce_activation_count(in, in[1]);
    case OpKind::max_pool_3x3:
    case OpKind::avg_pool_3x3:
      return 2 * numel(out);
    case OpKind::sep_conv_3x3:
    case OpKind::sep_conv_5x5:
      return numel(in) + 7 * numel(out);
    case OpKind::dil_conv_3x3:
    case OpKind::dil_conv_5x5:
      return numel(in) + 3 * numel(out);
  }
  throw InvalidArgument("invalid operation index " + std::to_string(op_index(kind)));
}

std::int64_t relu_conv_bn_activation_count(const Shape& in, std::int64_t c_out) {
  check_input(in, "relu-conv-bn");
  return numel(in) + 2 * in[0] * c_out * in[2] * in[3];
}

std::int64_t factorized_reduce_activation_count(const Shape& in, std::int64_t c_out) {
  check_input(in, "factorized reduce");
  const std::int64_t n = in[0], h = in[2], w = in[3];
  const std::int64_t out = n * c_out * (h / 2) * (w / 2);
  // relu, cropped copy, two half-width convs, concat, bn
  return numel(in) + n * in[1] * (h - 1) * (w - 1) + out + 2 * out;
}

#define PDARTS_INSTANTIATE_CATALOG(T)                                                                       \
  template std::unique_ptr<Module<T>> instantiate_op<T>(OpKind, std::int64_t, int, bool, ParamBuilder<T>); \
  template std::unique_ptr<Module<T>> make_relu_conv_bn<T>(std::int64_t, std::int64_t, bool, ParamBuilder<T>); \
  template std::unique_ptr<Module<T>> make_factorized_reduce<T>(std::int64_t, std::int64_t, bool, ParamBuilder<T>);

PDARTS_INSTANTIATE_CATALOG(float)
PDARTS_INSTANTIATE_CATALOG(double)

}  // namespace pdarts
