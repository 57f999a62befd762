// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <tuple>

#include "vmseg/tensor.hpp"

namespace vmseg {

/// 2D convolution geometry. ConvGRU convolutions are "same":
/// padding = (kernel_size - 1) / 2, stride = 1.
struct ConvSpec {
  int kernel_size = 3;
  int padding = 1;
  int stride = 1;

  static ConvSpec same(int k) {
    if (k <= 0 || k % 2 == 0)
      throw std::invalid_argument("ConvSpec: kernel size must be odd positive");
    return ConvSpec{k, (k - 1) / 2, 1};
  }
};

namespace detail {
inline std::atomic<std::uint64_t>& conv_counter() {
  static std::atomic<std::uint64_t> n{0};
  return n;
}
}  // namespace detail

/// Number of conv2d invocations since process start (test instrumentation).
inline std::uint64_t conv2d_call_count() { return detail::conv_counter().load(); }

inline int conv_out_extent(int in, int k, int pad, int stride) {
  int num = in + 2 * pad - k;
  if (num < 0 || num % stride != 0) return -1;
  return num / stride + 1;
}

/// Cross-correlation (no kernel flip): out[co,y,x] =
///   sum_{ci,ky,kx} in[ci, y*stride+ky-pad, x*stride+kx-pad] * kernel[co,ci,ky,kx] + bias[co].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, const ConvSpec& spec) {
  if (input.rank() != 3 || kernel.rank() != 4)
    throw std::invalid_argument("conv2d: input must be [C,H,W], kernel [Cout,Cin,K,K]");
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != cin)
    throw std::invalid_argument("conv2d: kernel Cin " + std::to_string(kernel.dim(1)) +
                                " does not match input Cin " + std::to_string(cin));
  if (kernel.dim(3) != k || k != spec.kernel_size)
    throw std::invalid_argument("conv2d: kernel extent does not match spec");
  if (bias.rank() != 1 || bias.dim(0) != cout)
    throw std::invalid_argument("conv2d: bias must be [Cout]");
  const int oh = conv_out_extent(h, k, spec.padding, spec.stride);
  const int ow = conv_out_extent(w, k, spec.padding, spec.stride);
  if (oh <= 0 || ow <= 0)
    throw std::invalid_argument("conv2d: non-positive output extent for input " +
                                input.shape_str());

  detail::conv_counter().fetch_add(1, std::memory_order_relaxed);

  Tensor<T> out({cout, oh, ow});
  for (int co = 0; co < cout; ++co) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T acc = bias[static_cast<std::size_t>(co)];
        const int y0 = oy * spec.stride - spec.padding;
        const int x0 = ox * spec.stride - spec.padding;
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y0 + ky;
            if (iy < 0 || iy >= h) continue;
            const int kx_lo = std::max(0, -x0);
            const int kx_hi = std::min(k, w - x0);
            const T* in_row = &input.at(ci, iy, 0);
            const T* ker_row = &kernel.at4(co, ci, ky, 0);
            for (int kx = kx_lo; kx < kx_hi; ++kx) {
              acc += in_row[x0 + kx] * ker_row[kx];
            }
          }
        }
        out.at(co, oy, ox) = acc;
      }
    }
  }
  return out;
}

template <class T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> kernel;
  Tensor<T> bias;
};

/// Analytic gradients of conv2d. grad_bias[c] = sum of grad_output[c].
template <class T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel,
                               const ConvSpec& spec, const Tensor<T>& grad_output) {
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), k = kernel.dim(2);
  const int oh = conv_out_extent(h, k, spec.padding, spec.stride);
  const int ow = conv_out_extent(w, k, spec.padding, spec.stride);
  if (kernel.dim(1) != cin)
    throw std::invalid_argument("conv2d_backward: kernel/input channel mismatch");
  if (grad_output.rank() != 3 || grad_output.dim(0) != cout ||
      grad_output.dim(1) != oh || grad_output.dim(2) != ow)
    throw std::invalid_argument("conv2d_backward: grad_output shape " +
                                grad_output.shape_str() +
                                " does not match forward output");

  Conv2dGrads<T> g{Tensor<T>({cin, h, w}), Tensor<T>({cout, cin, k, k}),
                   Tensor<T>({cout})};
  for (int co = 0; co < cout; ++co) {
    T bsum = T(0);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T go = grad_output.at(co, oy, ox);
        bsum += go;
        if (go == T(0)) continue;
        const int y0 = oy * spec.stride - spec.padding;
        const int x0 = ox * spec.stride - spec.padding;
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y0 + ky;
            if (iy < 0 || iy >= h) continue;
            const int kx_lo = std::max(0, -x0);
            const int kx_hi = std::min(k, w - x0);
            const T* in_row = &input.at(ci, iy, 0);
            T* gin_row = &g.input.at(ci, iy, 0);
            const T* ker_row = &kernel.at4(co, ci, ky, 0);
            T* gker_row = &g.kernel.at4(co, ci, ky, 0);
            for (int kx = kx_lo; kx < kx_hi; ++kx) {
              gin_row[x0 + kx] += go * ker_row[kx];
              gker_row[kx] += go * in_row[x0 + kx];
            }
          }
        }
      }
    }
    g.bias[static_cast<std::size_t>(co)] = bsum;
  }
  return g;
}

enum class Pointwise { Sigmoid, Tanh };

template <class T>
Tensor<T> pointwise(Pointwise op, const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  if (op == Pointwise::Sigmoid) {
    for (std::size_t i = 0; i < input.size(); ++i) {
      const T x = input[i];
      // branch keeps exp() argument non-positive for either sign
      out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                         : std::exp(x) / (T(1) + std::exp(x));
    }
  } else {
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = std::tanh(input[i]);
  }
  return out;
}

/// Backward given the *forward output* y: sigmoid' = y(1-y), tanh' = 1-y^2.
template <class T>
Tensor<T> pointwise_backward(Pointwise op, const Tensor<T>& output,
                             const Tensor<T>& grad_output) {
  check_same_shape(output, grad_output, "pointwise_backward");
  Tensor<T> g(output.shape());
  if (op == Pointwise::Sigmoid) {
    for (std::size_t i = 0; i < output.size(); ++i)
      g[i] = grad_output[i] * output[i] * (T(1) - output[i]);
  } else {
    for (std::size_t i = 0; i < output.size(); ++i)
      g[i] = grad_output[i] * (T(1) - output[i] * output[i]);
  }
  return g;
}

/// Per-pixel two-way softmax over the channel axis, max-subtracted.
template <class T>
Tensor<T> channel_softmax2(const Tensor<T>& input) {
  if (input.rank() != 3 || input.dim(0) != 2)
    throw std::invalid_argument("channel_softmax2: expected [2,H,W], got " +
                                input.shape_str());
  const int h = input.dim(1), w = input.dim(2);
  Tensor<T> out(input.shape());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const T a = input.at(0, y, x), b = input.at(1, y, x);
      const T m = std::max(a, b);
      const T ea = std::exp(a - m), eb = std::exp(b - m);
      const T z = ea + eb;
      out.at(0, y, x) = ea / z;
      out.at(1, y, x) = eb / z;
    }
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw std::invalid_argument("concat_channels: spatial mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

/// Channel slice [c0, c1) of a [C,H,W] tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& t, int c0, int c1) {
  if (t.rank() != 3 || c0 < 0 || c1 > t.dim(0) || c0 >= c1)
    throw std::invalid_argument("slice_channels: bad range");
  Tensor<T> out({c1 - c0, t.dim(1), t.dim(2)});
  const std::size_t plane = static_cast<std::size_t>(t.dim(1)) * t.dim(2);
  std::copy(t.data() + c0 * plane, t.data() + c1 * plane, out.data());
  return out;
}

/// 2x2 average pooling; H and W must be even.
template <class T>
Tensor<T> downsample2(const Tensor<T>& input) {
  if (input.rank() != 3)
    throw std::invalid_argument("downsample2: expected [C,H,W]");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("downsample2: odd extent in " + input.shape_str());
  Tensor<T> out({c, h / 2, w / 2});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h / 2; ++y)
      for (int x = 0; x < w / 2; ++x)
        out.at(ch, y, x) = (input.at(ch, 2 * y, 2 * x) + input.at(ch, 2 * y, 2 * x + 1) +
                            input.at(ch, 2 * y + 1, 2 * x) +
                            input.at(ch, 2 * y + 1, 2 * x + 1)) /
                           T(4);
  return out;
}

/// Backward of downsample2: each 2x2 cell receives grad/4.
template <class T>
Tensor<T> downsample2_backward(const std::vector<int>& input_shape,
                               const Tensor<T>& grad_output) {
  Tensor<T> g(input_shape);
  const int c = input_shape[0], h = input_shape[1], w = input_shape[2];
  if (grad_output.dim(0) != c || grad_output.dim(1) != h / 2 ||
      grad_output.dim(2) != w / 2)
    throw std::invalid_argument("downsample2_backward: shape mismatch");
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h / 2; ++y)
      for (int x = 0; x < w / 2; ++x) {
        const T q = grad_output.at(ch, y, x) / T(4);
        g.at(ch, 2 * y, 2 * x) = q;
        g.at(ch, 2 * y, 2 * x + 1) = q;
        g.at(ch, 2 * y + 1, 2 * x) = q;
        g.at(ch, 2 * y + 1, 2 * x + 1) = q;
      }
  return g;
}

// Elementwise helpers used throughout the recurrent cell.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <class T>
void add_channel_bias(Tensor<T>& t, const Tensor<T>& bias) {
  if (t.rank() != 3 || bias.rank() != 1 || bias.dim(0) != t.dim(0))
    throw std::invalid_argument("add_channel_bias: shape mismatch");
  const std::size_t plane = static_cast<std::size_t>(t.dim(1)) * t.dim(2);
  for (int c = 0; c < t.dim(0); ++c) {
    const T b = bias[static_cast<std::size_t>(c)];
    T* p = t.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += b;
  }
}

template <class T>
Tensor<T> channel_sum(const Tensor<T>& t) {
  Tensor<T> out({t.dim(0)});
  const std::size_t plane = static_cast<std::size_t>(t.dim(1)) * t.dim(2);
  for (int c = 0; c < t.dim(0); ++c) {
    T s = T(0);
    const T* p = t.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    out[static_cast<std::size_t>(c)] = s;
  }
  return out;
}

}  // namespace vmseg
