#include "pdarts/ops.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace pdarts {

namespace {

using Index = std::int64_t;

void require_4d(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected NCHW input, got shape " + to_string(s));
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

// Range of output columns whose input column ow*stride - pad + offset is in [0, width).
struct ColumnRange {
  Index lo;
  Index hi;
};

ColumnRange valid_columns(Index width, Index out_width, int stride, Index shift) {
  // need 0 <= ow*stride + shift < width
  Index lo = 0;
  if (shift < 0) lo = (-shift + stride - 1) / stride;
  Index hi = out_width;
  if (width - 1 - shift < 0) {
    hi = 0;
  } else {
    hi = std::min<Index>(out_width, (width - 1 - shift) / stride + 1);
  }
  return {lo, std::max(lo, hi)};
}

template <typename T>
void accumulate(std::vector<T>& dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, int stride, int padding, int dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Conv2dOptions& opt) {
  require_4d(x.shape(), "conv2d");
  if (w.ndim() != 4) throw ShapeError("conv2d: weight must be 4-D, got " + to_string(w.shape()));
  if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0 || opt.groups < 1) {
    throw InvalidArgument("conv2d: stride, dilation and groups must be >= 1 and padding >= 0");
  }
  const Index n_batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int groups = opt.groups;
  if (c_in % groups != 0) {
    throw ShapeError("conv2d: input channels " + std::to_string(c_in) + " not divisible by groups " +
                     std::to_string(groups));
  }
  if (c_out % groups != 0) {
    throw ShapeError("conv2d: output channels " + std::to_string(c_out) + " not divisible by groups " +
                     std::to_string(groups));
  }
  if (w.dim(1) != c_in / groups) {
    throw ShapeError("conv2d: weight dim 1 is " + std::to_string(w.dim(1)) + ", expected input channels/groups = " +
                     std::to_string(c_in / groups));
  }
  const Index eff_h = opt.dilation * (kh - 1) + 1, eff_w = opt.dilation * (kw - 1) + 1;
  if (h + 2 * opt.padding < eff_h) {
    throw ShapeError("conv2d: padded height " + std::to_string(h + 2 * opt.padding) + " smaller than kernel extent " +
                     std::to_string(eff_h));
  }
  if (wd + 2 * opt.padding < eff_w) {
    throw ShapeError("conv2d: padded width " + std::to_string(wd + 2 * opt.padding) + " smaller than kernel extent " +
                     std::to_string(eff_w));
  }
  const Index oh = conv_output_size(h, kh, opt.stride, opt.padding, opt.dilation);
  const Index ow = conv_output_size(wd, kw, opt.stride, opt.padding, opt.dilation);
  const Index cin_g = c_in / groups, cout_g = c_out / groups;
  const int stride = opt.stride, pad = opt.padding, dil = opt.dilation;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

  std::vector<ColumnRange> cols(static_cast<std::size_t>(kw));
  for (Index j = 0; j < kw; ++j) cols[j] = valid_columns(wd, ow, stride, j * dil - pad);

  // Visits every (output row segment, input row segment, weight) triple once.
  auto for_each_tap = [=](auto&& fn) {
    for (Index n = 0; n < n_batch; ++n) {
      for (Index oc = 0; oc < c_out; ++oc) {
        const Index g = oc / cout_g;
        for (Index icg = 0; icg < cin_g; ++icg) {
          const Index ic = g * cin_g + icg;
          const Index x_plane = (n * c_in + ic) * h * wd;
          const Index y_plane = (n * c_out + oc) * oh * ow;
          const Index w_base = (oc * cin_g + icg) * kh * kw;
          if (pointwise) {
            fn(y_plane, x_plane, Index{1}, oh * ow, w_base);
            continue;
          }
          for (Index i = 0; i < kh; ++i) {
            for (Index r = 0; r < oh; ++r) {
              const Index ih = r * stride - pad + i * dil;
              if (ih < 0 || ih >= h) continue;
              for (Index j = 0; j < kw; ++j) {
                const auto [lo, hi] = cols[j];
                if (lo >= hi) continue;
                const Index x0 = x_plane + ih * wd + lo * stride - pad + j * dil;
                fn(y_plane + r * ow + lo, x0, Index{stride}, hi - lo, w_base + i * kw + j);
              }
            }
          }
        }
      }
    }
  };

  std::vector<T> out(static_cast<std::size_t>(n_batch * c_out * oh * ow), T(0));
  {
    const T* xd = x.data().data();
    const T* wdat = w.data().data();
    T* yd = out.data();
    for_each_tap([&](Index y0, Index x0, Index xs, Index len, Index wi) {
      const T wv = wdat[wi];
      T* yp = yd + y0;
      const T* xp = xd + x0;
      if (xs == 1) {
        for (Index t = 0; t < len; ++t) yp[t] += wv * xp[t];
      } else {
        for (Index t = 0; t < len; ++t) yp[t] += wv * xp[t * xs];
      }
    });
  }

  return make_result<T>(
      {n_batch, c_out, oh, ow}, std::move(out), {x, w}, "conv2d", [=](detail::Node<T>& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        const T* gy = self.grad.data();
        if (xn.requires_grad) {
          T* gx = xn.ensure_grad().data();
          const T* wdat = wn.data.data();
          for_each_tap([&](Index y0, Index x0, Index xs, Index len, Index wi) {
            const T wv = wdat[wi];
            const T* gp = gy + y0;
            T* xp = gx + x0;
            for (Index t = 0; t < len; ++t) xp[t * xs] += wv * gp[t];
          });
        }
        if (wn.requires_grad) {
          T* gw = wn.ensure_grad().data();
          const T* xd = xn.data.data();
          for_each_tap([&](Index y0, Index x0, Index xs, Index len, Index wi) {
            const T* gp = gy + y0;
            const T* xp = xd + x0;
            T acc = 0;
            for (Index t = 0; t < len; ++t) acc += gp[t] * xp[t * xs];
            gw[wi] += acc;
          });
        }
      });
}

// ---------------------------------------------------------------------------
// batch_norm

template <typename T>
BatchNormState<T> BatchNormState<T>::make(std::int64_t channels, bool affine) {
  BatchNormState s;
  if (affine) {
    s.weight = Tensor<T>::full({channels}, T(1), true);
    s.bias = Tensor<T>::zeros({channels}, true);
  }
  s.running_mean = Tensor<T>::zeros({channels});
  s.running_var = Tensor<T>::full({channels}, T(1));
  return s;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, bool training) {
  require_4d(x.shape(), "batch_norm");
  if (!(state.eps > 0)) throw InvalidArgument("batch_norm: eps must be positive");
  const Index n_batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const Index m = n_batch * hw;
  if (m == 0) throw ShapeError("batch_norm: channel has zero elements in input " + to_string(x.shape()));
  if (state.running_mean.numel() != c) {
    throw ShapeError("batch_norm: state has " + std::to_string(state.running_mean.numel()) +
                     " channels, input has " + std::to_string(c));
  }
  const bool affine = state.affine();
  const auto xd = x.data();

  std::vector<T> mean(c), inv_std(c);
  if (training) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (Index ch = 0; ch < c; ++ch) {
      double s = 0;
      for (Index n = 0; n < n_batch; ++n) {
        const T* p = xd.data() + (n * c + ch) * hw;
        for (Index i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0;
      for (Index n = 0; n < n_batch; ++n) {
        const T* p = xd.data() + (n * c + ch) * hw;
        for (Index i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(m);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      rm[ch] = static_cast<T>((1 - state.momentum) * rm[ch] + state.momentum * mu);
      rv[ch] = static_cast<T>((1 - state.momentum) * rv[ch] + state.momentum * unbiased);
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (Index ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + state.eps));
    }
  }

  std::vector<T> xhat(xd.size());
  std::vector<T> out(xd.size());
  for (Index n = 0; n < n_batch; ++n) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index base = (n * c + ch) * hw;
      const T g = affine ? state.weight.data()[ch] : T(1);
      const T b = affine ? state.bias.data()[ch] : T(0);
      for (Index i = 0; i < hw; ++i) {
        const T v = (xd[base + i] - mean[ch]) * inv_std[ch];
        xhat[base + i] = v;
        out[base + i] = v * g + b;
      }
    }
  }

  std::vector<Tensor<T>> inputs{x};
  if (affine) {
    inputs.push_back(state.weight);
    inputs.push_back(state.bias);
  }
  return make_result<T>(
      x.shape(), std::move(out), std::move(inputs), "batch_norm",
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        const T* gy = self.grad.data();
        const T* gamma = affine ? self.parents[1]->data.data() : nullptr;
        if (affine) {
          auto& wn = *self.parents[1];
          auto& bn = *self.parents[2];
          if (wn.requires_grad || bn.requires_grad) {
            auto& gw = wn.ensure_grad();
            auto& gb = bn.ensure_grad();
            for (Index ch = 0; ch < c; ++ch) {
              double sw = 0, sb = 0;
              for (Index n = 0; n < n_batch; ++n) {
                const Index base = (n * c + ch) * hw;
                for (Index i = 0; i < hw; ++i) {
                  sw += gy[base + i] * xhat[base + i];
                  sb += gy[base + i];
                }
              }
              gw[ch] += static_cast<T>(sw);
              gb[ch] += static_cast<T>(sb);
            }
          }
        }
        auto& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        auto& gx = xn.ensure_grad();
        for (Index ch = 0; ch < c; ++ch) {
          const T g = gamma ? gamma[ch] : T(1);
          if (!training) {
            for (Index n = 0; n < n_batch; ++n) {
              const Index base = (n * c + ch) * hw;
              for (Index i = 0; i < hw; ++i) gx[base + i] += gy[base + i] * g * inv_std[ch];
            }
            continue;
          }
          double sum_dy = 0, sum_dy_xhat = 0;
          for (Index n = 0; n < n_batch; ++n) {
            const Index base = (n * c + ch) * hw;
            for (Index i = 0; i < hw; ++i) {
              sum_dy += gy[base + i];
              sum_dy_xhat += gy[base + i] * xhat[base + i];
            }
          }
          const double md = static_cast<double>(m);
          const double k = static_cast<double>(g) * inv_std[ch] / md;
          for (Index n = 0; n < n_batch; ++n) {
            const Index base = (n * c + ch) * hw;
            for (Index i = 0; i < hw; ++i) {
              gx[base + i] += static_cast<T>(k * (md * gy[base + i] - sum_dy - xhat[base + i] * sum_dy_xhat));
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// pool2d

template <typename T>
Tensor<T> pool2d(const Tensor<T>& x, PoolKind kind, int kernel, int stride, int padding) {
  require_4d(x.shape(), "pool2d");
  if (kernel != 3) throw InvalidArgument("pool2d: unsupported kernel size " + std::to_string(kernel));
  if (stride < 1 || padding < 0) throw InvalidArgument("pool2d: invalid stride or padding");
  const Index n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (h + 2 * padding < kernel || wd + 2 * padding < kernel) {
    throw ShapeError("pool2d: padded input " + to_string(x.shape()) + " smaller than kernel");
  }
  const Index oh = conv_output_size(h, kernel, stride, padding, 1);
  const Index ow = conv_output_size(wd, kernel, stride, padding, 1);
  const Index planes = n_batch * c;
  std::vector<T> out(static_cast<std::size_t>(planes * oh * ow));
  const auto xd = x.data();

  if (kind == PoolKind::max) {
    std::vector<Index> argmax(out.size());
    for (Index p = 0; p < planes; ++p) {
      const T* xp = xd.data() + p * h * wd;
      for (Index r = 0; r < oh; ++r) {
        for (Index q = 0; q < ow; ++q) {
          T best = -std::numeric_limits<T>::infinity();
          Index best_idx = -1;
          for (int i = 0; i < kernel; ++i) {
            const Index ih = r * stride - padding + i;
            if (ih < 0 || ih >= h) continue;
            for (int j = 0; j < kernel; ++j) {
              const Index iw = q * stride - padding + j;
              if (iw < 0 || iw >= wd) continue;
              const T v = xp[ih * wd + iw];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = ih * wd + iw;
              }
            }
          }
          const Index o = (p * oh + r) * ow + q;
          out[o] = best;
          argmax[o] = p * h * wd + best_idx;
        }
      }
    }
    return make_result<T>({n_batch, c, oh, ow}, std::move(out), {x}, "max_pool2d",
                          [argmax = std::move(argmax)](detail::Node<T>& self) {
                            auto& gx = self.parents[0]->ensure_grad();
                            for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
                          });
  }

  auto window_count = [=](Index r, Index q) {
    const Index h0 = std::max<Index>(0, r * stride - padding), h1 = std::min<Index>(h, r * stride - padding + kernel);
    const Index w0 = std::max<Index>(0, q * stride - padding), w1 = std::min<Index>(wd, q * stride - padding + kernel);
    return std::pair{std::array<Index, 4>{h0, h1, w0, w1}, (h1 - h0) * (w1 - w0)};
  };
  for (Index p = 0; p < planes; ++p) {
    const T* xp = xd.data() + p * h * wd;
    for (Index r = 0; r < oh; ++r) {
      for (Index q = 0; q < ow; ++q) {
        const auto [b, count] = window_count(r, q);
        T s = 0;
        for (Index ih = b[0]; ih < b[1]; ++ih)
          for (Index iw = b[2]; iw < b[3]; ++iw) s += xp[ih * wd + iw];
        out[(p * oh + r) * ow + q] = s / static_cast<T>(count);
      }
    }
  }
  return make_result<T>({n_batch, c, oh, ow}, std::move(out), {x}, "avg_pool2d", [=](detail::Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (Index p = 0; p < planes; ++p) {
      for (Index r = 0; r < oh; ++r) {
        for (Index q = 0; q < ow; ++q) {
          const auto [b, count] = window_count(r, q);
          const T g = self.grad[(p * oh + r) * ow + q] / static_cast<T>(count);
          for (Index ih = b[0]; ih < b[1]; ++ih)
            for (Index iw = b[2]; iw < b[3]; ++iw) gx[p * h * wd + ih * wd + iw] += g;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  return make_result<T>(x.shape(), std::move(out), {x}, "relu", [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    auto& gx = p.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (p.data[i] > T(0)) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "add", [](detail::Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) accumulate<T>(p->ensure_grad(), self.grad);
    }
  });
}

template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw InvalidArgument("add_n: no inputs");
  if (xs.size() == 1) return xs.front();
  std::vector<T> out(xs[0].data().begin(), xs[0].data().end());
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require_same_shape(xs[0].shape(), xs[k].shape(), "add_n");
    const auto d = xs[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  return make_result<T>(xs[0].shape(), std::move(out), xs, "add_n", [](detail::Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) accumulate<T>(p->ensure_grad(), self.grad);
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  const auto ad = a.data(), bd = b.data();
  std::vector<T> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, "mul", [](detail::Node<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (an.requires_grad) {
      auto& g = an.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.data[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(x.shape(), std::move(out), {x}, "scale", [factor](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> mul_mask(const Tensor<T>& x, std::vector<T> mask) {
  if (static_cast<std::int64_t>(mask.size()) != x.numel()) throw ShapeError("mul_mask: mask size mismatch");
  std::vector<T> out(mask.size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  return make_result<T>(x.shape(), std::move(out), {x}, "mul_mask", [mask = std::move(mask)](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> scale_samples(const Tensor<T>& x, std::vector<T> factors) {
  if (x.ndim() < 1 || static_cast<std::int64_t>(factors.size()) != x.dim(0)) {
    throw ShapeError("scale_samples: need one factor per sample of " + to_string(x.shape()));
  }
  const Index per = factors.empty() ? 0 : x.numel() / x.dim(0);
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t n = 0; n < factors.size(); ++n)
    for (Index i = 0; i < per; ++i) out[n * per + i] *= factors[n];
  return make_result<T>(x.shape(), std::move(out), {x}, "scale_samples",
                        [factors = std::move(factors), per](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t n = 0; n < factors.size(); ++n)
                            for (Index i = 0; i < per; ++i) g[n * per + i] += self.grad[n * per + i] * factors[n];
                        });
}

// ---------------------------------------------------------------------------
// mixing

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.ndim() != 1 || logits.numel() == 0) {
    throw ShapeError("softmax: expected non-empty 1-D tensor, got " + to_string(logits.shape()));
  }
  const auto a = logits.data();
  const T mx = *std::max_element(a.begin(), a.end());
  std::vector<T> out(a.size(), T(0));
  if (std::isfinite(static_cast<double>(mx))) {
    double z = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double e = std::exp(static_cast<double>(a[i] - mx));
      out[i] = static_cast<T>(e);
      z += e;
    }
    for (auto& v : out) v = static_cast<T>(v / z);
  }
  std::vector<T> w = out;
  return make_result<T>(logits.shape(), std::move(out), {logits}, "softmax",
                        [w = std::move(w)](detail::Node<T>& self) {
                          T dot = 0;
                          for (std::size_t i = 0; i < w.size(); ++i) dot += self.grad[i] * w[i];
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < w.size(); ++i) g[i] += w[i] * (self.grad[i] - dot);
                        });
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& weights, const std::vector<Tensor<T>>& xs) {
  if (weights.ndim() != 1 || weights.numel() != static_cast<std::int64_t>(xs.size())) {
    throw ShapeError("weighted_sum: " + std::to_string(xs.size()) + " terms but weights of shape " +
                     to_string(weights.shape()));
  }
  if (xs.empty()) throw InvalidArgument("weighted_sum: no terms");
  const auto wd = weights.data();
  std::vector<T> out(static_cast<std::size_t>(xs[0].numel()), T(0));
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require_same_shape(xs[0].shape(), xs[k].shape(), "weighted_sum");
    const auto d = xs[k].data();
    const T wk = wd[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wk * d[i];
  }
  std::vector<Tensor<T>> inputs{weights};
  inputs.insert(inputs.end(), xs.begin(), xs.end());
  return make_result<T>(xs[0].shape(), std::move(out), std::move(inputs), "weighted_sum", [](detail::Node<T>& self) {
    auto& wn = *self.parents[0];
    const std::size_t terms = self.parents.size() - 1;
    for (std::size_t k = 0; k < terms; ++k) {
      auto& xn = *self.parents[k + 1];
      if (wn.requires_grad) {
        T acc = 0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn.data[i];
        wn.ensure_grad()[k] += acc;
      }
      if (xn.requires_grad) {
        auto& g = xn.ensure_grad();
        const T wk = wn.data[k];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += wk * self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw InvalidArgument("concat_channels: no inputs");
  for (const auto& t : xs) require_4d(t.shape(), "concat_channels");
  const Index n_batch = xs[0].dim(0), h = xs[0].dim(2), wd = xs[0].dim(3);
  Index c_total = 0;
  for (const auto& t : xs) {
    if (t.dim(0) != n_batch || t.dim(2) != h || t.dim(3) != wd) {
      throw ShapeError("concat_channels: incompatible shapes " + to_string(xs[0].shape()) + " and " +
                       to_string(t.shape()));
    }
    c_total += t.dim(1);
  }
  const Index hw = h * wd;
  std::vector<T> out(static_cast<std::size_t>(n_batch * c_total * hw));
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const Index c = t.dim(1);
    const auto d = t.data();
    for (Index n = 0; n < n_batch; ++n)
      std::copy_n(d.data() + n * c * hw, c * hw, out.data() + (n * c_total + off) * hw);
    off += c;
  }
  return make_result<T>({n_batch, c_total, h, wd}, std::move(out), xs, "concat",
                        [=](detail::Node<T>& self) {
                          for (std::size_t k = 0; k < self.parents.size(); ++k) {
                            auto& p = *self.parents[k];
                            if (!p.requires_grad) continue;
                            const Index c = p.shape[1];
                            auto& g = p.ensure_grad();
                            for (Index n = 0; n < n_batch; ++n) {
                              const T* src = self.grad.data() + (n * c_total + offsets[k]) * hw;
                              T* dst = g.data() + n * c * hw;
                              for (Index i = 0; i < c * hw; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, int top, int left) {
  require_4d(x.shape(), "crop");
  const Index n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (top < 0 || left < 0 || top >= h || left >= wd) throw ShapeError("crop: offsets outside " + to_string(x.shape()));
  const Index oh = h - top, ow = wd - left;
  std::vector<T> out(static_cast<std::size_t>(n_batch * c * oh * ow));
  const auto xd = x.data();
  for (Index p = 0; p < n_batch * c; ++p)
    for (Index r = 0; r < oh; ++r)
      for (Index q = 0; q < ow; ++q) out[(p * oh + r) * ow + q] = xd[p * h * wd + (r + top) * wd + q + left];
  return make_result<T>({n_batch, c, oh, ow}, std::move(out), {x}, "crop", [=](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (Index p = 0; p < n_batch * c; ++p)
      for (Index r = 0; r < oh; ++r)
        for (Index q = 0; q < ow; ++q) g[p * h * wd + (r + top) * wd + q + left] += self.grad[(p * oh + r) * ow + q];
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_4d(x.shape(), "global_avg_pool");
  const Index n_batch = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  std::vector<T> out(static_cast<std::size_t>(n_batch * c));
  const auto xd = x.data();
  for (Index p = 0; p < n_batch * c; ++p) {
    T s = 0;
    for (Index i = 0; i < hw; ++i) s += xd[p * hw + i];
    out[p] = s / static_cast<T>(hw);
  }
  return make_result<T>({n_batch, c}, std::move(out), {x}, "global_avg_pool", [=](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (Index p = 0; p < n_batch * c; ++p) {
      const T v = self.grad[p] / static_cast<T>(hw);
      for (Index i = 0; i < hw; ++i) g[p * hw + i] += v;
    }
  });
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1)) {
    throw ShapeError("dense: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  }
  const Index n_batch = x.dim(0), f = x.dim(1), k = w.dim(0);
  const bool has_bias = b.defined();
  if (has_bias && (b.ndim() != 1 || b.dim(0) != k)) throw ShapeError("dense: bias shape " + to_string(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(n_batch * k));
  const auto xd = x.data(), wd = w.data();
  for (Index n = 0; n < n_batch; ++n) {
    for (Index j = 0; j < k; ++j) {
      T s = has_bias ? b.data()[j] : T(0);
      for (Index i = 0; i < f; ++i) s += xd[n * f + i] * wd[j * f + i];
      out[n * k + j] = s;
    }
  }
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return make_result<T>({n_batch, k}, std::move(out), std::move(inputs), "dense", [=](detail::Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    const T* gy = self.grad.data();
    if (xn.requires_grad) {
      auto& gx = xn.ensure_grad();
      for (Index n = 0; n < n_batch; ++n)
        for (Index j = 0; j < k; ++j)
          for (Index i = 0; i < f; ++i) gx[n * f + i] += gy[n * k + j] * wn.data[j * f + i];
    }
    if (wn.requires_grad) {
      auto& gw = wn.ensure_grad();
      for (Index n = 0; n < n_batch; ++n)
        for (Index j = 0; j < k; ++j)
          for (Index i = 0; i < f; ++i) gw[j * f + i] += gy[n * k + j] * xn.data[n * f + i];
    }
    if (has_bias && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->ensure_grad();
      for (Index n = 0; n < n_batch; ++n)
        for (Index j = 0; j < k; ++j) gb[j] += gy[n * k + j];
    }
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: logits must be [batch, K], got " + to_string(logits.shape()));
  const Index n_batch = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n_batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n_batch));
  }
  if (n_batch == 0) throw ShapeError("cross_entropy: empty batch");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw InvalidArgument("cross_entropy: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                            " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto z = logits.data();
  std::vector<T> probs(z.size());
  double loss = 0;
  for (Index n = 0; n < n_batch; ++n) {
    const T* row = z.data() + n * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0;
    for (Index j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (Index j = 0; j < k; ++j) probs[n * k + j] = static_cast<T>(std::exp(row[j] - lse));
    loss += lse - row[labels[n]];
  }
  loss /= static_cast<double>(n_batch);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<T>({}, {static_cast<T>(loss)}, {logits}, "cross_entropy",
                        [=, probs = std::move(probs), lab = std::move(lab)](detail::Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          const T s = self.grad[0] / static_cast<T>(n_batch);
                          for (Index n = 0; n < n_batch; ++n) {
                            for (Index j = 0; j < k; ++j) {
                              const T target = j == lab[n] ? T(1) : T(0);
                              g[n * k + j] += s * (probs[n * k + j] - target);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0;
  for (T v : x.data()) s += v;
  return make_result<T>({}, {static_cast<T>(s)}, {x}, "sum", [](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> sum_product(const Tensor<T>& x, std::span<const T> r) {
  if (static_cast<std::int64_t>(r.size()) != x.numel()) throw ShapeError("sum_product: size mismatch");
  double s = 0;
  const auto xd = x.data();
  for (std::size_t i = 0; i < r.size(); ++i) s += static_cast<double>(xd[i]) * r[i];
  std::vector<T> rv(r.begin(), r.end());
  return make_result<T>({}, {static_cast<T>(s)}, {x}, "sum_product", [rv = std::move(rv)](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * rv[i];
  });
}

#define PDARTS_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Conv2dOptions&);                  \
  template struct BatchNormState<T>;                                                                    \
  template Tensor<T> batch_norm(const Tensor<T>&, BatchNormState<T>&, bool);                            \
  template Tensor<T> pool2d(const Tensor<T>&, PoolKind, int, int, int);                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> add_n(const std::vector<Tensor<T>>&);                                              \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                                        \
  template Tensor<T> mul_mask(const Tensor<T>&, std::vector<T>);                                        \
  template Tensor<T> scale_samples(const Tensor<T>&, std::vector<T>);                                   \
  template Tensor<T> softmax(const Tensor<T>&);                                                         \
  template Tensor<T> weighted_sum(const Tensor<T>&, const std::vector<Tensor<T>>&);                     \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> crop(const Tensor<T>&, int, int);                                                  \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                 \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                             \
  template Tensor<T> sum(const Tensor<T>&);                                                             \
  template Tensor<T> sum_product(const Tensor<T>&, std::span<const T>);

PDARTS_INSTANTIATE_OPS(float)
PDARTS_INSTANTIATE_OPS(double)

}  // namespace pdarts
