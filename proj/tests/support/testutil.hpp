// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "vmseg/gru.hpp"
#include "vmseg/ops.hpp"
#include "vmseg/tensor.hpp"

namespace vmseg::test {

template <class T>
Tensor<T> random_tensor(const std::vector<int>& shape, std::mt19937& rng,
                        T lo = T(-1), T hi = T(1)) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                              static_cast<double>(hi));
  Tensor<T> t(shape);
  for (T& v : t.raw()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
double max_rel_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-8) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    const double s = std::max({std::abs(static_cast<double>(a[i])),
                               std::abs(static_cast<double>(b[i])), floor});
    worst = std::max(worst, d / s);
  }
  return worst;
}

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

/// Independent six-nested-loop cross-correlation oracle.
template <class T>
Tensor<T> conv2d_oracle(const Tensor<T>& input, const Tensor<T>& kernel,
                        const Tensor<T>& bias, int pad, int stride) {
  const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int cout = kernel.dim(0), k = kernel.dim(2);
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  Tensor<T> out({cout, oh, ow});
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T acc = bias[static_cast<std::size_t>(co)];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride + ky - pad;
              const int ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += input.at(ci, iy, ix) * kernel.at4(co, ci, ky, kx);
            }
        out.at(co, oy, ox) = acc;
      }
  return out;
}

/// Scalar-loop evaluation of the four ConvGRU update equations, pixel by
/// pixel, independent of the library's conv/pointwise code.
template <class T>
Tensor<T> gru_step_oracle(const Tensor<T>& x, const Tensor<T>& h_prev,
                          const ConvGruParams<T>& p) {
  const int dh = p.state_channels();
  const int hh = x.dim(1), ww = x.dim(2);
  const int k = p.kernel_size(), pad = (k - 1) / 2;
  auto corr = [&](const Tensor<T>& in, const Tensor<T>& w, int co, int y, int x0) {
    T acc = T(0);
    for (int ci = 0; ci < in.dim(0); ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const int iy = y + ky - pad, ix = x0 + kx - pad;
          if (iy < 0 || iy >= hh || ix < 0 || ix >= ww) continue;
          acc += in.at(ci, iy, ix) * w.at4(co, ci, ky, kx);
        }
    return acc;
  };
  auto sig = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
  Tensor<T> r({dh, hh, ww});
  for (int c = 0; c < dh; ++c)
    for (int y = 0; y < hh; ++y)
      for (int x0 = 0; x0 < ww; ++x0)
        r.at(c, y, x0) = sig(corr(x, p.w_xr, c, y, x0) + corr(h_prev, p.w_hr, c, y, x0) +
                             p.b_r[static_cast<std::size_t>(c)]);
  Tensor<T> u = mul(r, h_prev);
  Tensor<T> h_new({dh, hh, ww});
  for (int c = 0; c < dh; ++c)
    for (int y = 0; y < hh; ++y)
      for (int x0 = 0; x0 < ww; ++x0) {
        const T z = sig(corr(x, p.w_xz, c, y, x0) + corr(h_prev, p.w_hz, c, y, x0) +
                        p.b_z[static_cast<std::size_t>(c)]);
        const T hc = std::tanh(corr(x, p.w_xh, c, y, x0) + corr(u, p.w_hh, c, y, x0) +
                               p.b_h[static_cast<std::size_t>(c)]);
        h_new.at(c, y, x0) = (T(1) - z) * h_prev.at(c, y, x0) + z * hc;
      }
  return h_new;
}

/// Central finite differences of `loss()` w.r.t. every element of `param`.
inline Tensor<double> finite_diff(Tensor<double>& param,
                                  const std::function<double()>& loss,
                                  double eps = 1e-4) {
  Tensor<double> g(param.shape());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + eps;
    const double lp = loss();
    param[i] = saved - eps;
    const double lm = loss();
    param[i] = saved;
    g[i] = (lp - lm) / (2 * eps);
  }
  return g;
}

/// Relative-error comparison suited to gradients (absolute floor avoids
/// blow-ups at zero crossings).
inline double grad_rel_error(const Tensor<double>& analytic, const Tensor<double>& fd,
                             double floor = 1e-6) {
  return max_rel_error(analytic, fd, floor);
}

inline ConvGruParams<double> random_gru(int cx, int dh, int k, std::mt19937& rng,
                                        double scale = 0.5) {
  ConvGruParams<double> p = ConvGruParams<double>::zeros(cx, dh, k);
  for (Tensor<double>* t : {&p.w_xz, &p.w_hz, &p.w_xr, &p.w_hr, &p.w_xh, &p.w_hh,
                            &p.b_z, &p.b_r, &p.b_h})
    *t = random_tensor<double>(t->shape(), rng, -scale, scale);
  return p;
}

}  // namespace vmseg::test
