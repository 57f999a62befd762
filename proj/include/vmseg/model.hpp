// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vmseg/gru.hpp"
#include "vmseg/ops.hpp"
#include "vmseg/tensor.hpp"

namespace vmseg {

enum class Variant { Full, NoApp, Rgb, NoMotion, NoMemory, Unidir, ConvRnn };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoApp: return "no-app";
    case Variant::Rgb: return "rgb";
    case Variant::NoMotion: return "no-motion";
    case Variant::NoMemory: return "no-memory";
    case Variant::Unidir: return "unidir";
    case Variant::ConvRnn: return "convrnn";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  for (Variant v : {Variant::Full, Variant::NoApp, Variant::Rgb, Variant::NoMotion,
                    Variant::NoMemory, Variant::Unidir, Variant::ConvRnn})
    if (s == variant_name(v)) return v;
  throw std::invalid_argument("unknown variant: " + s);
}

/// Model dimensions. Desk-scale defaults; a full-scale preset would be
/// d_app=128, d_h=64, k_gru=7, stride=8.
struct ModelConfig {
  int d_app = 16;
  int d_h = 16;
  int k_gru = 3;
  int stride = 4;   // power of two; feature grid is H/stride x W/stride
  int d_mid_app = 16;
  int d_mid_mot = 8;
  bool bidirectional = true;
  Variant variant = Variant::Full;
  int stack_depth = 6;   // no-memory replacement depth
  int stack_width = 0;   // 0 = auto (parameter-matched to GRU + fuse)

  int pool_levels() const {
    int s = stride, n = 0;
    while (s > 1) {
      if (s % 2 != 0) throw std::invalid_argument("ModelConfig: stride must be a power of two");
      s /= 2;
      ++n;
    }
    return n;
  }

  /// Channels of the appearance half of the fused GRU input.
  int app_channels() const {
    switch (variant) {
      case Variant::NoApp: return 0;
      case Variant::Rgb: return 3;
      default: return d_app;
    }
  }
  int fused_channels() const { return app_channels() + 1; }  // + motion channel
  bool uses_bidir() const {
    return variant != Variant::Unidir && variant != Variant::NoMemory;
  }
  int head_in_channels() const { return d_h; }
};

/// Two conv layers with tanh; spatial reduction by average pooling between them.
template <class T>
struct AppearanceParams {
  Tensor<T> w1, b1;  // [d_mid,3,3,3]
  Tensor<T> w2, b2;  // [d_app,d_mid,3,3]
};

template <class T>
struct MotionParams {
  Tensor<T> w1, b1;  // [d_mid,2,3,3]
  Tensor<T> w2, b2;  // [1,d_mid,3,3]
};

template <class T>
struct HeadParams {
  Tensor<T> w, b;  // [2,d_h,1,1], [2]
};

/// Parameter-matched stack of plain convolutions (no-memory ablation).
template <class T>
struct ConvStackParams {
  std::vector<Tensor<T>> w;
  std::vector<Tensor<T>> b;
};

enum class ParamGroup { Stub, Memory };

template <class T>
struct ModelParams {
  ModelConfig cfg;
  AppearanceParams<T> app;
  MotionParams<T> mot;
  ConvGruParams<T> gru;
  BidirFuseParams<T> fuse;
  HeadParams<T> head;
  ConvRnnParams<T> rnn;
  ConvStackParams<T> stack;
};

inline std::size_t gru_fuse_param_count(const ModelConfig& cfg) {
  const std::size_t k2 = static_cast<std::size_t>(cfg.k_gru) * cfg.k_gru;
  const std::size_t cx = static_cast<std::size_t>(cfg.fused_channels());
  const std::size_t dh = static_cast<std::size_t>(cfg.d_h);
  std::size_t gru = 3 * (dh * cx * k2) + 3 * (dh * dh * k2) + 3 * dh;
  std::size_t fuse = dh * 2 * dh * 9 + dh;
  return gru + fuse;
}

inline std::size_t conv_stack_param_count(const ModelConfig& cfg, int width) {
  const std::size_t k2 = static_cast<std::size_t>(cfg.k_gru) * cfg.k_gru;
  const std::size_t cx = static_cast<std::size_t>(cfg.fused_channels());
  const std::size_t dh = static_cast<std::size_t>(cfg.d_h);
  const std::size_t d = static_cast<std::size_t>(width);
  std::size_t n = d * cx * k2 + d;                                   // first
  n += static_cast<std::size_t>(cfg.stack_depth - 2) * (d * d * k2 + d);  // middle
  n += dh * d * k2 + dh;                                             // last
  return n;
}

/// Largest stack width whose parameter count does not exceed the replaced
/// GRU + fuse block (the matching rule printed by the CLI audit).
inline int matched_stack_width(const ModelConfig& cfg) {
  const std::size_t target = gru_fuse_param_count(cfg);
  int best = 1;
  for (int w = 1; w <= 4096; ++w) {
    if (conv_stack_param_count(cfg, w) <= target) best = w;
    else break;
  }
  return best;
}

template <class T>
ModelParams<T> make_model(const ModelConfig& cfg_in) {
  ModelConfig cfg = cfg_in;
  if (cfg.variant == Variant::NoMemory && cfg.stack_width == 0)
    cfg.stack_width = matched_stack_width(cfg);
  if (cfg.variant == Variant::Unidir) cfg.bidirectional = false;

  ModelParams<T> m;
  m.cfg = cfg;
  if (cfg.variant != Variant::NoApp && cfg.variant != Variant::Rgb) {
    m.app.w1 = Tensor<T>({cfg.d_mid_app, 3, 3, 3});
    m.app.b1 = Tensor<T>({cfg.d_mid_app});
    m.app.w2 = Tensor<T>({cfg.d_app, cfg.d_mid_app, 3, 3});
    m.app.b2 = Tensor<T>({cfg.d_app});
  }
  m.mot.w1 = Tensor<T>({cfg.d_mid_mot, 2, 3, 3});
  m.mot.b1 = Tensor<T>({cfg.d_mid_mot});
  m.mot.w2 = Tensor<T>({1, cfg.d_mid_mot, 3, 3});
  m.mot.b2 = Tensor<T>({1});
  const int cx = cfg.fused_channels();
  if (cfg.variant == Variant::NoMemory) {
    const int d = cfg.stack_width;
    for (int i = 0; i < cfg.stack_depth; ++i) {
      const int ci = i == 0 ? cx : d;
      const int co = i == cfg.stack_depth - 1 ? cfg.d_h : d;
      m.stack.w.push_back(Tensor<T>({co, ci, cfg.k_gru, cfg.k_gru}));
      m.stack.b.push_back(Tensor<T>({co}));
    }
  } else if (cfg.variant == Variant::ConvRnn) {
    m.rnn = ConvRnnParams<T>::zeros(cx, cfg.d_h, cfg.k_gru);
  } else {
    m.gru = ConvGruParams<T>::zeros(cx, cfg.d_h, cfg.k_gru);
  }
  if (cfg.uses_bidir()) m.fuse = BidirFuseParams<T>::zeros(cfg.d_h);
  m.head.w = Tensor<T>({2, cfg.d_h, 1, 1});
  m.head.b = Tensor<T>({2});
  return m;
}

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
  ParamGroup group;
};

/// Enumerates the trainable tensors active under the model's variant, in a
/// fixed order (the checkpoint and optimizer order).
template <class T>
std::vector<ParamRef<T>> param_refs(ModelParams<T>& m) {
  std::vector<ParamRef<T>> v;
  auto put = [&](const char* n, Tensor<T>& t, ParamGroup g) {
    v.push_back({n, &t, g});
  };
  const ModelConfig& c = m.cfg;
  if (c.variant != Variant::NoApp && c.variant != Variant::Rgb) {
    put("app.w1", m.app.w1, ParamGroup::Stub);
    put("app.b1", m.app.b1, ParamGroup::Stub);
    put("app.w2", m.app.w2, ParamGroup::Stub);
    put("app.b2", m.app.b2, ParamGroup::Stub);
  }
  put("mot.w1", m.mot.w1, ParamGroup::Stub);
  put("mot.b1", m.mot.b1, ParamGroup::Stub);
  put("mot.w2", m.mot.w2, ParamGroup::Stub);
  put("mot.b2", m.mot.b2, ParamGroup::Stub);
  if (c.variant == Variant::NoMemory) {
    for (std::size_t i = 0; i < m.stack.w.size(); ++i) {
      put(("stack.w" + std::to_string(i)).c_str(), m.stack.w[i], ParamGroup::Memory);
      put(("stack.b" + std::to_string(i)).c_str(), m.stack.b[i], ParamGroup::Memory);
    }
  } else if (c.variant == Variant::ConvRnn) {
    put("rnn.w_x", m.rnn.w_x, ParamGroup::Memory);
    put("rnn.w_h", m.rnn.w_h, ParamGroup::Memory);
    put("rnn.b", m.rnn.b, ParamGroup::Memory);
  } else {
    put("gru.w_xz", m.gru.w_xz, ParamGroup::Memory);
    put("gru.w_hz", m.gru.w_hz, ParamGroup::Memory);
    put("gru.w_xr", m.gru.w_xr, ParamGroup::Memory);
    put("gru.w_hr", m.gru.w_hr, ParamGroup::Memory);
    put("gru.w_xh", m.gru.w_xh, ParamGroup::Memory);
    put("gru.w_hh", m.gru.w_hh, ParamGroup::Memory);
    put("gru.b_z", m.gru.b_z, ParamGroup::Memory);
    put("gru.b_r", m.gru.b_r, ParamGroup::Memory);
    put("gru.b_h", m.gru.b_h, ParamGroup::Memory);
  }
  if (c.uses_bidir()) {
    put("fuse.w", m.fuse.w_fuse, ParamGroup::Memory);
    put("fuse.b", m.fuse.b_fuse, ParamGroup::Memory);
  }
  put("head.w", m.head.w, ParamGroup::Memory);
  put("head.b", m.head.b, ParamGroup::Memory);
  return v;
}

template <class T>
std::size_t trainable_param_count(ModelParams<T>& m) {
  std::size_t n = 0;
  for (auto& r : param_refs(m)) n += r.tensor->size();
  return n;
}

// ---------------------------------------------------------------------------
// Stream encoders
// ---------------------------------------------------------------------------

template <class T>
struct EncoderCache {
  Tensor<T> input;
  Tensor<T> a1;                        // tanh output of layer 1
  std::vector<Tensor<T>> pooled;       // after each downsample2, last feeds conv2
  Tensor<T> out;                       // final activation output
};

namespace detail {

template <class T>
Tensor<T> encode2(const Tensor<T>& input, const Tensor<T>& w1, const Tensor<T>& b1,
                  const Tensor<T>& w2, const Tensor<T>& b2, Pointwise final_act,
                  int pool_levels, EncoderCache<T>* cache) {
  const ConvSpec spec = ConvSpec::same(3);
  Tensor<T> a1 = pointwise(Pointwise::Tanh, conv2d(input, w1, b1, spec));
  Tensor<T> cur = a1;
  std::vector<Tensor<T>> pooled;
  for (int i = 0; i < pool_levels; ++i) {
    cur = downsample2(cur);
    if (cache) pooled.push_back(cur);
  }
  Tensor<T> out = pointwise(final_act, conv2d(cur, w2, b2, spec));
  if (cache) {
    cache->input = input;
    cache->a1 = std::move(a1);
    cache->pooled = std::move(pooled);
    cache->out = out;
  }
  return out;
}

// Backward through encode2, accumulating into gw1..gb2. Returns grad wrt input.
template <class T>
Tensor<T> encode2_backward(const EncoderCache<T>& c, const Tensor<T>& w1,
                           const Tensor<T>& w2, Pointwise final_act,
                           const Tensor<T>& grad_out, Tensor<T>& gw1, Tensor<T>& gb1,
                           Tensor<T>& gw2, Tensor<T>& gb2) {
  const ConvSpec spec = ConvSpec::same(3);
  Tensor<T> da2 = pointwise_backward(final_act, c.out, grad_out);
  const Tensor<T>& conv2_in = c.pooled.empty() ? c.a1 : c.pooled.back();
  auto g2 = conv2d_backward(conv2_in, w2, spec, da2);
  add_inplace(gw2, g2.kernel);
  add_inplace(gb2, g2.bias);
  Tensor<T> g = std::move(g2.input);
  for (std::size_t i = c.pooled.size(); i-- > 0;) {
    const std::vector<int>& in_shape =
        i == 0 ? c.a1.shape() : c.pooled[i - 1].shape();
    g = downsample2_backward(in_shape, g);
  }
  Tensor<T> da1 = pointwise_backward(Pointwise::Tanh, c.a1, g);
  auto g1 = conv2d_backward(c.input, w1, spec, da1);
  add_inplace(gw1, g1.kernel);
  add_inplace(gb1, g1.bias);
  return std::move(g1.input);
}

}  // namespace detail

template <class T>
Tensor<T> appearance_encode(const Tensor<T>& frame, const AppearanceParams<T>& p,
                            int pool_levels, EncoderCache<T>* cache = nullptr) {
  if (frame.rank() != 3 || frame.dim(0) != 3)
    throw std::invalid_argument("appearance_encode: expected [3,H,W]");
  for (int d = 1; d <= 2; ++d)
    if (frame.dim(d) % (1 << pool_levels) != 0)
      throw std::invalid_argument("appearance_encode: extent not divisible by stride");
  return detail::encode2(frame, p.w1, p.b1, p.w2, p.b2, Pointwise::Tanh, pool_levels,
                         cache);
}

template <class T>
Tensor<T> motion_encode(const Tensor<T>& flow_angle, const MotionParams<T>& p,
                        int pool_levels, EncoderCache<T>* cache = nullptr) {
  if (flow_angle.rank() != 3 || flow_angle.dim(0) != 2)
    throw std::invalid_argument("motion_encode: expected [2,H,W] (sin, cos)");
  for (int d = 1; d <= 2; ++d)
    if (flow_angle.dim(d) % (1 << pool_levels) != 0)
      throw std::invalid_argument("motion_encode: extent not divisible by stride");
  return detail::encode2(flow_angle, p.w1, p.b1, p.w2, p.b2, Pointwise::Sigmoid,
                         pool_levels, cache);
}

/// Appearance channels first, motion channel last.
template <class T>
Tensor<T> fuse_streams(const Tensor<T>& app, const Tensor<T>& motion) {
  if (motion.dim(0) != 1)
    throw std::invalid_argument("fuse_streams: motion must be single-channel");
  return concat_channels(app, motion);
}

template <class T>
struct HeadCache {
  Tensor<T> input;
  Tensor<T> probs;
};

/// 1x1 conv to two logit channels + per-pixel softmax. Channel 1 is the
/// object probability.
template <class T>
Tensor<T> segment_head(const Tensor<T>& feature, const HeadParams<T>& p,
                       HeadCache<T>* cache = nullptr) {
  Tensor<T> logits = conv2d(feature, p.w, p.b, ConvSpec{1, 0, 1});
  Tensor<T> probs = channel_softmax2(logits);
  if (cache) *cache = HeadCache<T>{feature, probs};
  return probs;
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Per-frame inputs of one clip. `motion_override[t]`, when non-empty, replaces
/// the motion stream's output at the feature grid (training augmentation and
/// ablations). flow_angle[t] may be empty for frames that carry an override.
template <class T>
struct ClipInput {
  std::vector<Tensor<T>> frames;          // T x [3,H,W]
  std::vector<Tensor<T>> flow_angle;      // T x [2,H,W]
  std::vector<Tensor<T>> motion_override; // empty, or T entries ([1,H',W'] or empty)
};

template <class T>
struct ForwardOptions {
  bool record_gates = false;
};

template <class T>
struct ClipCache {
  std::vector<EncoderCache<T>> app;     // per frame (unused for no-app/rgb)
  std::vector<EncoderCache<T>> mot;     // per frame (empty cache where overridden)
  std::vector<bool> motion_overridden;
  std::vector<Tensor<T>> fused;         // per frame GRU inputs x_t
  BidirCache<T> bidir;                  // bidirectional variants
  SequenceRun<T> uni;                   // unidirectional variant
  std::vector<std::vector<RnnStepCache<T>>> rnn_caches;  // [dir][step]
  std::vector<std::vector<Tensor<T>>> rnn_states;        // [dir][t]
  std::vector<std::vector<Tensor<T>>> stack_acts;        // no-memory: [t][layer]
  std::vector<Tensor<T>> head_in;       // per frame head input
  std::vector<HeadCache<T>> head;       // per frame
};

template <class T>
struct ForwardResult {
  std::vector<Tensor<T>> probs;  // T x [2,H',W']
  std::vector<GateRecord<T>> records_fwd, records_bwd;
};

namespace detail {

// ConvRNN sequence run mirroring run_sequence's re-indexing contract.
template <class T>
std::vector<Tensor<T>> rnn_run(const std::vector<Tensor<T>>& xs, const Tensor<T>& h0,
                               const ConvRnnParams<T>& p, Direction dir,
                               std::vector<RnnStepCache<T>>* caches) {
  const int t_len = static_cast<int>(xs.size());
  std::vector<Tensor<T>> states(xs.size());
  if (caches) caches->resize(xs.size());
  Tensor<T> h = h0;
  for (int step = 0; step < t_len; ++step) {
    const int t = dir == Direction::Forward ? step : t_len - 1 - step;
    h = rnn_step(xs[static_cast<std::size_t>(t)], h, p,
                 caches ? &(*caches)[static_cast<std::size_t>(step)] : nullptr);
    states[static_cast<std::size_t>(t)] = h;
  }
  return states;
}

}  // namespace detail

template <class T>
ForwardResult<T> forward_video(const ClipInput<T>& clip, const ModelParams<T>& m,
                               const ForwardOptions<T>& opt = {},
                               ClipCache<T>* cache = nullptr) {
  const ModelConfig& cfg = m.cfg;
  const std::size_t t_len = clip.frames.size();
  if (t_len == 0) throw std::invalid_argument("forward_video: empty clip");
  const int levels = cfg.pool_levels();
  const int hp = clip.frames[0].dim(1) / cfg.stride;
  const int wp = clip.frames[0].dim(2) / cfg.stride;

  if (cache) {
    cache->app.resize(t_len);
    cache->mot.resize(t_len);
    cache->motion_overridden.assign(t_len, false);
    cache->fused.resize(t_len);
    cache->head_in.resize(t_len);
    cache->head.resize(t_len);
  }

  // Per-frame stream encoding and fusion.
  std::vector<Tensor<T>> xs(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    Tensor<T> app;
    switch (cfg.variant) {
      case Variant::NoApp:
        break;
      case Variant::Rgb: {
        app = clip.frames[t];
        for (int i = 0; i < levels; ++i) app = downsample2(app);
        break;
      }
      default:
        app = appearance_encode(clip.frames[t], m.app, levels,
                                cache ? &cache->app[t] : nullptr);
    }
    Tensor<T> motion;
    const bool overridden =
        !clip.motion_override.empty() && !clip.motion_override[t].empty();
    if (overridden) {
      motion = clip.motion_override[t];
      if (motion.dim(0) != 1 || motion.dim(1) != hp || motion.dim(2) != wp)
        throw std::invalid_argument("forward_video: motion_override must be [1,H',W']");
    } else if (cfg.variant == Variant::NoMotion) {
      motion = Tensor<T>({1, hp, wp}, T(0.5));
    } else {
      if (clip.flow_angle.size() != t_len)
        throw std::invalid_argument("forward_video: missing flow for frame " +
                                    std::to_string(t));
      motion = motion_encode(clip.flow_angle[t], m.mot, levels,
                             cache ? &cache->mot[t] : nullptr);
    }
    if (cache) cache->motion_overridden[t] = overridden || cfg.variant == Variant::NoMotion;
    Tensor<T> fused =
        app.empty() ? std::move(motion) : fuse_streams(app, motion);
    if (cache) cache->fused[t] = fused;
    xs[t] = std::move(fused);
  }

  // Memory module.
  ForwardResult<T> res;
  std::vector<Tensor<T>> head_in(t_len);
  const Tensor<T> h0({cfg.d_h, hp, wp});  // zeros
  switch (cfg.variant) {
    case Variant::NoMemory: {
      if (cache) cache->stack_acts.resize(t_len);
      const ConvSpec spec = ConvSpec::same(cfg.k_gru);
      for (std::size_t t = 0; t < t_len; ++t) {
        Tensor<T> cur = xs[t];
        std::vector<Tensor<T>> acts;
        for (std::size_t l = 0; l < m.stack.w.size(); ++l) {
          cur = pointwise(Pointwise::Tanh, conv2d(cur, m.stack.w[l], m.stack.b[l], spec));
          if (cache) acts.push_back(cur);
        }
        if (cache) cache->stack_acts[t] = std::move(acts);
        head_in[t] = std::move(cur);
      }
      break;
    }
    case Variant::Unidir: {
      SequenceRun<T> run = run_sequence(xs, h0, m.gru, Direction::Forward,
                                        opt.record_gates, cache != nullptr);
      if (opt.record_gates) res.records_fwd = run.records;
      head_in = run.states;
      if (cache) cache->uni = std::move(run);
      break;
    }
    case Variant::ConvRnn: {
      if (cache) {
        cache->rnn_caches.resize(2);
        cache->rnn_states.resize(2);
      }
      auto f = detail::rnn_run(xs, h0, m.rnn, Direction::Forward,
                               cache ? &cache->rnn_caches[0] : nullptr);
      auto b = detail::rnn_run(xs, h0, m.rnn, Direction::Backward,
                               cache ? &cache->rnn_caches[1] : nullptr);
      const ConvSpec spec3 = ConvSpec::same(3);
      if (cache) {
        cache->bidir.concat.resize(t_len);
        cache->bidir.fused_tanh.resize(t_len);
      }
      for (std::size_t t = 0; t < t_len; ++t) {
        Tensor<T> cat = concat_channels(f[t], b[t]);
        Tensor<T> fused =
            pointwise(Pointwise::Tanh, conv2d(cat, m.fuse.w_fuse, m.fuse.b_fuse, spec3));
        if (cache) {
          cache->bidir.concat[t] = std::move(cat);
          cache->bidir.fused_tanh[t] = fused;
        }
        head_in[t] = std::move(fused);
      }
      if (cache) {
        cache->rnn_states[0] = std::move(f);
        cache->rnn_states[1] = std::move(b);
      }
      break;
    }
    default: {  // Full / NoApp / Rgb / NoMotion: bidirectional ConvGRU
      BidirCache<T>* bc = cache ? &cache->bidir : nullptr;
      head_in = bidirectional_run(xs, m.gru, m.fuse, h0, h0, opt.record_gates, bc);
      if (opt.record_gates && bc) {
        res.records_fwd = bc->fwd.records;
        res.records_bwd = bc->bwd.records;
      } else if (opt.record_gates) {
        // without a cache, rerun cheaply to expose records
        BidirCache<T> tmp;
        head_in = bidirectional_run(xs, m.gru, m.fuse, h0, h0, true, &tmp);
        res.records_fwd = tmp.fwd.records;
        res.records_bwd = tmp.bwd.records;
      }
    }
  }

  res.probs.resize(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    if (cache) cache->head_in[t] = head_in[t];
    res.probs[t] = segment_head(head_in[t], m.head, cache ? &cache->head[t] : nullptr);
  }
  return res;
}

/// Gradients of all active parameters, in param_refs order and shape.
template <class T>
ModelParams<T> zero_grads_like(ModelParams<T>& m) {
  ModelParams<T> g = m;
  for (auto& r : param_refs(g)) r.tensor->fill(T(0));
  return g;
}

/// Full backward pass: `grad_logits[t]` is dLoss/d(head logits) per frame.
/// Accumulates into `grads` (same layout as the model).
template <class T>
void model_backward(const ModelParams<T>& m, const ClipCache<T>& cache,
                    const std::vector<Tensor<T>>& grad_logits, ModelParams<T>& grads) {
  const ModelConfig& cfg = m.cfg;
  const std::size_t t_len = cache.head_in.size();
  if (grad_logits.size() != t_len)
    throw std::invalid_argument("model_backward: grad_logits length mismatch");
  const ConvSpec spec1{1, 0, 1};
  const ConvSpec spec3 = ConvSpec::same(3);
  const ConvSpec specK = ConvSpec::same(cfg.k_gru);

  // Head: logits = conv1x1(head_in). grad_logits is already past the softmax.
  std::vector<Tensor<T>> ghead_in(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    auto g = conv2d_backward(cache.head_in[t], m.head.w, spec1, grad_logits[t]);
    add_inplace(grads.head.w, g.kernel);
    add_inplace(grads.head.b, g.bias);
    ghead_in[t] = std::move(g.input);
  }

  // Memory module backward; produces per-frame gradients w.r.t. fused inputs.
  std::vector<Tensor<T>> gx(t_len);
  for (std::size_t t = 0; t < t_len; ++t) gx[t] = Tensor<T>(cache.fused[t].shape());

  auto bptt = [&](const std::vector<GruStepCache<T>>& caches,
                  const std::vector<Tensor<T>>& inject, Direction dir) {
    // caches are in processing order; inject is indexed by frame.
    Tensor<T> carry(inject[0].shape());
    for (int step = static_cast<int>(t_len) - 1; step >= 0; --step) {
      const int t = dir == Direction::Forward ? step : static_cast<int>(t_len) - 1 - step;
      Tensor<T> gh = carry;
      add_inplace(gh, inject[static_cast<std::size_t>(t)]);
      auto g = gru_step_backward(caches[static_cast<std::size_t>(step)], m.gru, gh,
                                 grads.gru);
      add_inplace(gx[static_cast<std::size_t>(t)], g.x);
      carry = std::move(g.h_prev);
    }
  };

  switch (cfg.variant) {
    case Variant::NoMemory: {
      for (std::size_t t = 0; t < t_len; ++t) {
        Tensor<T> g = ghead_in[t];
        for (std::size_t l = m.stack.w.size(); l-- > 0;) {
          Tensor<T> da =
              pointwise_backward(Pointwise::Tanh, cache.stack_acts[t][l], g);
          const Tensor<T>& in = l == 0 ? cache.fused[t] : cache.stack_acts[t][l - 1];
          auto gc = conv2d_backward(in, m.stack.w[l], specK, da);
          add_inplace(grads.stack.w[l], gc.kernel);
          add_inplace(grads.stack.b[l], gc.bias);
          g = std::move(gc.input);
        }
        add_inplace(gx[t], g);
      }
      break;
    }
    case Variant::Unidir: {
      bptt(cache.uni.caches, ghead_in, Direction::Forward);
      break;
    }
    case Variant::ConvRnn: {
      // fuse conv backward, then BPTT through both ConvRNN directions.
      std::vector<Tensor<T>> ghf(t_len), ghb(t_len);
      for (std::size_t t = 0; t < t_len; ++t) {
        Tensor<T> da =
            pointwise_backward(Pointwise::Tanh, cache.bidir.fused_tanh[t], ghead_in[t]);
        auto g = conv2d_backward(cache.bidir.concat[t], m.fuse.w_fuse, spec3, da);
        add_inplace(grads.fuse.w_fuse, g.kernel);
        add_inplace(grads.fuse.b_fuse, g.bias);
        ghf[t] = slice_channels(g.input, 0, cfg.d_h);
        ghb[t] = slice_channels(g.input, cfg.d_h, 2 * cfg.d_h);
      }
      for (int dir = 0; dir < 2; ++dir) {
        const Direction d = dir == 0 ? Direction::Forward : Direction::Backward;
        const std::vector<Tensor<T>>& inject = dir == 0 ? ghf : ghb;
        Tensor<T> carry(inject[0].shape());
        for (int step = static_cast<int>(t_len) - 1; step >= 0; --step) {
          const int t =
              d == Direction::Forward ? step : static_cast<int>(t_len) - 1 - step;
          Tensor<T> gh = carry;
          add_inplace(gh, inject[static_cast<std::size_t>(t)]);
          auto g = rnn_step_backward(
              cache.rnn_caches[static_cast<std::size_t>(dir)][static_cast<std::size_t>(step)],
              m.rnn, gh, grads.rnn);
          add_inplace(gx[static_cast<std::size_t>(t)], g.x);
          carry = std::move(g.h_prev);
        }
      }
      break;
    }
    default: {  // bidirectional ConvGRU
      std::vector<Tensor<T>> ghf(t_len), ghb(t_len);
      for (std::size_t t = 0; t < t_len; ++t) {
        Tensor<T> da =
            pointwise_backward(Pointwise::Tanh, cache.bidir.fused_tanh[t], ghead_in[t]);
        auto g = conv2d_backward(cache.bidir.concat[t], m.fuse.w_fuse, spec3, da);
        add_inplace(grads.fuse.w_fuse, g.kernel);
        add_inplace(grads.fuse.b_fuse, g.bias);
        ghf[t] = slice_channels(g.input, 0, cfg.d_h);
        ghb[t] = slice_channels(g.input, cfg.d_h, 2 * cfg.d_h);
      }
      bptt(cache.bidir.fwd.caches, ghf, Direction::Forward);
      bptt(cache.bidir.bwd.caches, ghb, Direction::Backward);
    }
  }

  // Split fused-input gradients back into the streams.
  const int ca = cfg.app_channels();
  const int levels = cfg.pool_levels();
  for (std::size_t t = 0; t < t_len; ++t) {
    if (ca > 0 && cfg.variant != Variant::Rgb) {
      Tensor<T> ga = slice_channels(gx[t], 0, ca);
      detail::encode2_backward(cache.app[t], m.app.w1, m.app.w2, Pointwise::Tanh, ga,
                               grads.app.w1, grads.app.b1, grads.app.w2, grads.app.b2);
    }
    if (!cache.motion_overridden[t]) {
      Tensor<T> gm = slice_channels(gx[t], gx[t].dim(0) - 1, gx[t].dim(0));
      detail::encode2_backward(cache.mot[t], m.mot.w1, m.mot.w2, Pointwise::Sigmoid, gm,
                               grads.mot.w1, grads.mot.b1, grads.mot.w2, grads.mot.b2);
    }
  }
}

}  // namespace vmseg
