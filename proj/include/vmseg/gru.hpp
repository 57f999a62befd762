// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <vector>

#include "vmseg/ops.hpp"
#include "vmseg/tensor.hpp"

namespace vmseg {

/// The six convolution kernels and three biases of the ConvGRU cell.
/// Input-side kernels are [d_h, Cx, K, K]; state-side kernels [d_h, d_h, K, K].
template <class T>
struct ConvGruParams {
  Tensor<T> w_xz, w_hz;
  Tensor<T> w_xr, w_hr;
  Tensor<T> w_xh, w_hh;
  Tensor<T> b_z, b_r, b_h;

  int state_channels() const { return w_hz.dim(0); }
  int input_channels() const { return w_xz.dim(1); }
  int kernel_size() const { return w_xz.dim(2); }
  ConvSpec spec() const { return ConvSpec::same(kernel_size()); }

  static ConvGruParams zeros(int cx, int dh, int k) {
    ConvGruParams p;
    p.w_xz = Tensor<T>({dh, cx, k, k});
    p.w_hz = Tensor<T>({dh, dh, k, k});
    p.w_xr = Tensor<T>({dh, cx, k, k});
    p.w_hr = Tensor<T>({dh, dh, k, k});
    p.w_xh = Tensor<T>({dh, cx, k, k});
    p.w_hh = Tensor<T>({dh, dh, k, k});
    p.b_z = Tensor<T>({dh});
    p.b_r = Tensor<T>({dh});
    p.b_h = Tensor<T>({dh});
    return p;
  }

  void validate() const {
    const int dh = state_channels(), cx = input_channels(), k = kernel_size();
    auto chk = [&](const Tensor<T>& w, int cin, const char* name) {
      if (w.rank() != 4 || w.dim(0) != dh || w.dim(1) != cin || w.dim(2) != k ||
          w.dim(3) != k)
        throw std::invalid_argument(std::string("ConvGruParams: bad shape for ") + name);
    };
    chk(w_xz, cx, "w_xz");
    chk(w_hz, dh, "w_hz");
    chk(w_xr, cx, "w_xr");
    chk(w_hr, dh, "w_hr");
    chk(w_xh, cx, "w_xh");
    chk(w_hh, dh, "w_hh");
    if (b_z.dim(0) != dh || b_r.dim(0) != dh || b_h.dim(0) != dh)
      throw std::invalid_argument("ConvGruParams: bad bias shape");
  }
};

/// Per-step gate snapshot, recomputable contract:
/// h_new = (1 - z) .* h_prev + z .* h_cand.
template <class T>
struct GateRecord {
  Tensor<T> z, r, h_cand, h_new;
};

/// Everything the backward pass needs from one forward step.
template <class T>
struct GruStepCache {
  Tensor<T> x, h_prev, z, r, u, h_cand;  // u = r .* h_prev
};

template <class T>
Tensor<T> gru_step(const Tensor<T>& x, const Tensor<T>& h_prev,
                   const ConvGruParams<T>& params, GateRecord<T>* record = nullptr,
                   GruStepCache<T>* cache = nullptr) {
  if (x.rank() != 3 || h_prev.rank() != 3 || x.dim(1) != h_prev.dim(1) ||
      x.dim(2) != h_prev.dim(2))
    throw std::invalid_argument("gru_step: spatial mismatch " + x.shape_str() + " vs " +
                                h_prev.shape_str());
  if (x.dim(0) != params.input_channels() || h_prev.dim(0) != params.state_channels())
    throw std::invalid_argument("gru_step: channel count does not match params");
  const ConvSpec spec = params.spec();
  const Tensor<T> zero_bias({params.state_channels()});

  Tensor<T> az = conv2d(x, params.w_xz, zero_bias, spec);
  add_inplace(az, conv2d(h_prev, params.w_hz, zero_bias, spec));
  add_channel_bias(az, params.b_z);
  Tensor<T> z = pointwise(Pointwise::Sigmoid, az);

  Tensor<T> ar = conv2d(x, params.w_xr, zero_bias, spec);
  add_inplace(ar, conv2d(h_prev, params.w_hr, zero_bias, spec));
  add_channel_bias(ar, params.b_r);
  Tensor<T> r = pointwise(Pointwise::Sigmoid, ar);

  Tensor<T> u = mul(r, h_prev);
  Tensor<T> ah = conv2d(x, params.w_xh, zero_bias, spec);
  add_inplace(ah, conv2d(u, params.w_hh, zero_bias, spec));
  add_channel_bias(ah, params.b_h);
  Tensor<T> h_cand = pointwise(Pointwise::Tanh, ah);

  Tensor<T> h_new(h_prev.shape());
  for (std::size_t i = 0; i < h_new.size(); ++i)
    h_new[i] = (T(1) - z[i]) * h_prev[i] + z[i] * h_cand[i];

  if (record) *record = GateRecord<T>{z, r, h_cand, h_new};
  if (cache) *cache = GruStepCache<T>{x, h_prev, z, r, std::move(u), h_cand};
  return h_new;
}

template <class T>
struct GruStepGrads {
  Tensor<T> x, h_prev;
};

/// Accumulates parameter gradients into `pg` (pre-sized like the params) and
/// returns gradients w.r.t. the step inputs.
template <class T>
GruStepGrads<T> gru_step_backward(const GruStepCache<T>& cache,
                                  const ConvGruParams<T>& params,
                                  const Tensor<T>& grad_h_new,
                                  ConvGruParams<T>& pg) {
  if (cache.x.empty() || cache.h_prev.empty())
    throw std::invalid_argument("gru_step_backward: missing forward cache");
  check_same_shape(grad_h_new, cache.h_prev, "gru_step_backward");
  const ConvSpec spec = params.spec();

  const std::size_t n = grad_h_new.size();
  Tensor<T> dz(cache.z.shape()), dhc(cache.z.shape()), dh_prev(cache.h_prev.shape());
  for (std::size_t i = 0; i < n; ++i) {
    dz[i] = grad_h_new[i] * (cache.h_cand[i] - cache.h_prev[i]);
    dhc[i] = grad_h_new[i] * cache.z[i];
    dh_prev[i] = grad_h_new[i] * (T(1) - cache.z[i]);
  }

  // candidate path
  Tensor<T> dah = pointwise_backward(Pointwise::Tanh, cache.h_cand, dhc);
  add_inplace(pg.b_h, channel_sum(dah));
  auto gx_h = conv2d_backward(cache.x, params.w_xh, spec, dah);
  add_inplace(pg.w_xh, gx_h.kernel);
  auto gu = conv2d_backward(cache.u, params.w_hh, spec, dah);
  add_inplace(pg.w_hh, gu.kernel);
  Tensor<T> gr(cache.r.shape());
  for (std::size_t i = 0; i < n; ++i) {
    gr[i] = gu.input[i] * cache.h_prev[i];
    dh_prev[i] += gu.input[i] * cache.r[i];
  }

  // reset gate path
  Tensor<T> dar = pointwise_backward(Pointwise::Sigmoid, cache.r, gr);
  add_inplace(pg.b_r, channel_sum(dar));
  auto gx_r = conv2d_backward(cache.x, params.w_xr, spec, dar);
  add_inplace(pg.w_xr, gx_r.kernel);
  auto gh_r = conv2d_backward(cache.h_prev, params.w_hr, spec, dar);
  add_inplace(pg.w_hr, gh_r.kernel);
  add_inplace(dh_prev, gh_r.input);

  // update gate path
  Tensor<T> daz = pointwise_backward(Pointwise::Sigmoid, cache.z, dz);
  add_inplace(pg.b_z, channel_sum(daz));
  auto gx_z = conv2d_backward(cache.x, params.w_xz, spec, daz);
  add_inplace(pg.w_xz, gx_z.kernel);
  auto gh_z = conv2d_backward(cache.h_prev, params.w_hz, spec, daz);
  add_inplace(pg.w_hz, gh_z.kernel);
  add_inplace(dh_prev, gh_z.input);

  Tensor<T> gx = gx_h.input;
  add_inplace(gx, gx_r.input);
  add_inplace(gx, gx_z.input);
  return GruStepGrads<T>{std::move(gx), std::move(dh_prev)};
}

enum class Direction { Forward, Backward };

template <class T>
struct SequenceRun {
  // states[t] corresponds to input frame t, regardless of direction.
  std::vector<Tensor<T>> states;
  std::vector<GateRecord<T>> records;  // empty unless requested
  std::vector<GruStepCache<T>> caches; // empty unless requested; processing order
};

template <class T>
SequenceRun<T> run_sequence(const std::vector<Tensor<T>>& xs, const Tensor<T>& h0,
                            const ConvGruParams<T>& params, Direction direction,
                            bool record_gates = false, bool keep_caches = false) {
  const int t_len = static_cast<int>(xs.size());
  if (t_len < 1) throw std::invalid_argument("run_sequence: empty sequence");
  SequenceRun<T> run;
  run.states.resize(static_cast<std::size_t>(t_len));
  if (record_gates) run.records.resize(static_cast<std::size_t>(t_len));
  if (keep_caches) run.caches.resize(static_cast<std::size_t>(t_len));

  Tensor<T> h = h0;
  for (int step = 0; step < t_len; ++step) {
    const int t = direction == Direction::Forward ? step : t_len - 1 - step;
    GateRecord<T>* rec = record_gates ? &run.records[static_cast<std::size_t>(t)] : nullptr;
    GruStepCache<T>* cache =
        keep_caches ? &run.caches[static_cast<std::size_t>(step)] : nullptr;
    h = gru_step(xs[static_cast<std::size_t>(t)], h, params, rec, cache);
    run.states[static_cast<std::size_t>(t)] = h;
  }
  return run;
}

/// 3x3 fuse convolution applied to the concatenated forward/backward states.
template <class T>
struct BidirFuseParams {
  Tensor<T> w_fuse;  // [d_h, 2*d_h, 3, 3]
  Tensor<T> b_fuse;  // [d_h]

  static BidirFuseParams zeros(int dh) {
    return BidirFuseParams{Tensor<T>({dh, 2 * dh, 3, 3}), Tensor<T>({dh})};
  }
};

template <class T>
struct BidirCache {
  SequenceRun<T> fwd, bwd;
  std::vector<Tensor<T>> concat;      // per frame, forward-then-backward channels
  std::vector<Tensor<T>> fused_tanh;  // per frame, post-tanh fuse output
};

/// Runs both directions with shared weights, concatenates states per frame
/// (forward channels first), applies the 3x3 fuse conv and a tanh.
template <class T>
std::vector<Tensor<T>> bidirectional_run(const std::vector<Tensor<T>>& xs,
                                         const ConvGruParams<T>& params,
                                         const BidirFuseParams<T>& fuse,
                                         const Tensor<T>& h0_fwd, const Tensor<T>& h0_bwd,
                                         bool record_gates = false,
                                         BidirCache<T>* cache = nullptr) {
  const bool keep = cache != nullptr;
  SequenceRun<T> fwd =
      run_sequence(xs, h0_fwd, params, Direction::Forward, record_gates, keep);
  SequenceRun<T> bwd =
      run_sequence(xs, h0_bwd, params, Direction::Backward, record_gates, keep);
  const ConvSpec spec = ConvSpec::same(3);
  std::vector<Tensor<T>> out(xs.size());
  if (cache) {
    cache->concat.resize(xs.size());
    cache->fused_tanh.resize(xs.size());
  }
  for (std::size_t t = 0; t < xs.size(); ++t) {
    Tensor<T> cat = concat_channels(fwd.states[t], bwd.states[t]);
    Tensor<T> fused = conv2d(cat, fuse.w_fuse, fuse.b_fuse, spec);
    Tensor<T> activated = pointwise(Pointwise::Tanh, fused);
    if (cache) {
      cache->concat[t] = std::move(cat);
      cache->fused_tanh[t] = activated;
    }
    out[t] = std::move(activated);
  }
  if (cache) {
    cache->fwd = std::move(fwd);
    cache->bwd = std::move(bwd);
  }
  return out;
}

/// Plain convolutional RNN cell (ablation): h = tanh(x*w_x + h_prev*w_h + b).
template <class T>
struct ConvRnnParams {
  Tensor<T> w_x, w_h;  // [d_h,Cx,K,K], [d_h,d_h,K,K]
  Tensor<T> b;         // [d_h]

  int state_channels() const { return w_h.dim(0); }
  int input_channels() const { return w_x.dim(1); }
  int kernel_size() const { return w_x.dim(2); }

  static ConvRnnParams zeros(int cx, int dh, int k) {
    return ConvRnnParams{Tensor<T>({dh, cx, k, k}), Tensor<T>({dh, dh, k, k}),
                         Tensor<T>({dh})};
  }
};

template <class T>
struct RnnStepCache {
  Tensor<T> x, h_prev, h_new;
};

template <class T>
Tensor<T> rnn_step(const Tensor<T>& x, const Tensor<T>& h_prev,
                   const ConvRnnParams<T>& params, RnnStepCache<T>* cache = nullptr) {
  if (x.dim(1) != h_prev.dim(1) || x.dim(2) != h_prev.dim(2) ||
      x.dim(0) != params.input_channels() || h_prev.dim(0) != params.state_channels())
    throw std::invalid_argument("rnn_step: shape mismatch");
  const ConvSpec spec = ConvSpec::same(params.kernel_size());
  const Tensor<T> zero_bias({params.state_channels()});
  Tensor<T> a = conv2d(x, params.w_x, zero_bias, spec);
  add_inplace(a, conv2d(h_prev, params.w_h, zero_bias, spec));
  add_channel_bias(a, params.b);
  Tensor<T> h = pointwise(Pointwise::Tanh, a);
  if (cache) *cache = RnnStepCache<T>{x, h_prev, h};
  return h;
}

template <class T>
GruStepGrads<T> rnn_step_backward(const RnnStepCache<T>& cache,
                                  const ConvRnnParams<T>& params,
                                  const Tensor<T>& grad_h_new, ConvRnnParams<T>& pg) {
  if (cache.x.empty()) throw std::invalid_argument("rnn_step_backward: missing cache");
  const ConvSpec spec = ConvSpec::same(params.kernel_size());
  Tensor<T> da = pointwise_backward(Pointwise::Tanh, cache.h_new, grad_h_new);
  add_inplace(pg.b, channel_sum(da));
  auto gx = conv2d_backward(cache.x, params.w_x, spec, da);
  add_inplace(pg.w_x, gx.kernel);
  auto gh = conv2d_backward(cache.h_prev, params.w_h, spec, da);
  add_inplace(pg.w_h, gh.kernel);
  return GruStepGrads<T>{std::move(gx.input), std::move(gh.input)};
}

}  // namespace vmseg
