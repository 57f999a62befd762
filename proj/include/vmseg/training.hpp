// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vmseg/dataio.hpp"
#include "vmseg/model.hpp"
#include "vmseg/tensor.hpp"

namespace vmseg {

struct TrainConfig {
  double learning_rate = 1e-4;
  double lr_decay_per_epoch = 0.95;
  double weight_decay = 0.005;
  double clip_bound = 50.0;
  int batch_frames = 14;     // n consecutive frames per batch
  int iterations = 2000;
  int pretrain_iterations = 600;
  double aug_fraction = 0.20;
  int freeze_len = 5;
  int crop_h = 56, crop_w = 56;
  int iterations_per_epoch = 300;
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (learning_rate <= 0 || lr_decay_per_epoch <= 0 || weight_decay < 0 ||
        clip_bound <= 0 || batch_frames < 1 || iterations < 0 || freeze_len < 1 ||
        crop_h < 1 || crop_w < 1 || iterations_per_epoch < 1)
      throw std::invalid_argument("TrainConfig: all settings must be positive");
    if (aug_fraction < 0 || aug_fraction > 1)
      throw std::invalid_argument("TrainConfig: aug_fraction must be in [0,1]");
    if (batch_frames < 2 * freeze_len)
      throw std::invalid_argument("TrainConfig: batch_frames must be >= 2*freeze_len");
  }
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

template <class T>
struct BceResult {
  T loss = T(0);
  std::vector<Tensor<T>> grad_logits;  // per frame, [2,H',W']
};

/// Mean over all frames and pixels of -[y log p_obj + (1-y) log(1-p_obj)].
/// The gradient is taken w.r.t. the pre-softmax logits: (p - onehot(y)) / N.
template <class T>
BceResult<T> bce_loss(const std::vector<Tensor<T>>& probs,
                      const std::vector<Tensor<T>>& gt_masks) {
  if (probs.empty() || probs.size() != gt_masks.size())
    throw std::invalid_argument("bce_loss: sequence length mismatch");
  const int h = probs[0].dim(1), w = probs[0].dim(2);
  const T n = static_cast<T>(probs.size()) * h * w;
  BceResult<T> res;
  res.grad_logits.resize(probs.size());
  for (std::size_t t = 0; t < probs.size(); ++t) {
    const Tensor<T>& p = probs[t];
    const Tensor<T>& g = gt_masks[t];
    if (g.dim(0) != 1 || g.dim(1) != h || g.dim(2) != w)
      throw std::invalid_argument("bce_loss: gt mask shape mismatch at frame " +
                                  std::to_string(t));
    Tensor<T> gl(p.shape());
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const T yv = g.at(0, y, x);
        if (yv != T(0) && yv != T(1))
          throw std::invalid_argument("bce_loss: non-binary ground truth");
        const T p1 = std::max(p.at(1, y, x), T(1e-12));
        const T p0 = std::max(p.at(0, y, x), T(1e-12));
        res.loss -= (yv * std::log(p1) + (T(1) - yv) * std::log(p0)) / n;
        gl.at(0, y, x) = (p.at(0, y, x) - (T(1) - yv)) / n;
        gl.at(1, y, x) = (p.at(1, y, x) - yv) / n;
      }
    res.grad_logits[t] = std::move(gl);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <class T>
void clip_gradients(ModelParams<T>& grads, T bound = T(50)) {
  for (auto& r : param_refs(grads))
    for (T& v : r.tensor->raw()) v = std::clamp(v, -bound, bound);
}

/// RMSProp with decoupled L2 shrinkage:
///   acc <- rho*acc + (1-rho)*g^2
///   theta <- theta - lr*g/sqrt(acc+eps) - lr*weight_decay*theta
template <class T>
struct RmsPropState {
  std::vector<Tensor<T>> acc;  // aligned with param_refs order
  T rho = T(0.9);
  T eps = T(1e-8);

  static RmsPropState init(ModelParams<T>& m) {
    RmsPropState s;
    for (auto& r : param_refs(m)) s.acc.push_back(Tensor<T>(r.tensor->shape()));
    return s;
  }
};

template <class T>
void rmsprop_update(ModelParams<T>& params, ModelParams<T>& grads, RmsPropState<T>& state,
                    T lr, T weight_decay,
                    std::optional<ParamGroup> only_group = std::nullopt) {
  auto prefs = param_refs(params);
  auto grefs = param_refs(grads);
  if (prefs.size() != grefs.size() || prefs.size() != state.acc.size())
    throw std::invalid_argument("rmsprop_update: parameter table mismatch");
  for (std::size_t i = 0; i < prefs.size(); ++i) {
    if (!prefs[i].tensor->same_shape(*grefs[i].tensor) ||
        !prefs[i].tensor->same_shape(state.acc[i]))
      throw std::invalid_argument("rmsprop_update: shape mismatch for " + prefs[i].name);
    if (only_group && prefs[i].group != *only_group) continue;
    Tensor<T>& p = *prefs[i].tensor;
    const Tensor<T>& g = *grefs[i].tensor;
    Tensor<T>& a = state.acc[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      a[k] = state.rho * a[k] + (T(1) - state.rho) * g[k] * g[k];
      p[k] -= lr * g[k] / std::sqrt(a[k] + state.eps) + lr * weight_decay * p[k];
    }
  }
}

inline double lr_schedule(double lr0, double decay, int epoch) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
  return lr0 * std::pow(decay, epoch);
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Uniform in +-sqrt(6/(fan_in+fan_out)) for conv kernels; fan counts exclude
/// the output/input channel respectively.
template <class T>
Tensor<T> xavier_init(const std::vector<int>& shape, std::mt19937& rng) {
  if (shape.size() != 4)
    throw std::invalid_argument("xavier_init: expected a conv-kernel shape");
  const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
  const double fan_out = static_cast<double>(shape[0]) * shape[2] * shape[3];
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(shape);
  for (T& v : t.raw()) v = static_cast<T>(dist(rng));
  return t;
}

/// Xavier for every kernel (ConvGRU kernels use the same rule), zero biases.
template <class T>
void init_model(ModelParams<T>& m, std::mt19937& rng) {
  for (auto& r : param_refs(m)) {
    if (r.tensor->rank() == 4)
      *r.tensor = xavier_init<T>(r.tensor->shape(), rng);
    else
      r.tensor->fill(T(0));
  }
}

// ---------------------------------------------------------------------------
// Batch formation and augmentation
// ---------------------------------------------------------------------------

/// One training batch: n consecutive frames of one video with a single crop
/// window and flip decision applied to every modality.
struct BatchSample {
  std::vector<Tensor<float>> frames;  // n x [3,h,w]
  std::vector<Tensor<float>> flow;    // n x [2,h,w] raw
  std::vector<Tensor<float>> masks;   // n x [1,h,w]
  std::vector<Tensor<float>> motion_override;  // empty or n entries at feature grid
  bool augmented = false;
  int crop_x = 0, crop_y = 0;
  bool flipped = false;
};

inline Tensor<float> crop3(const Tensor<float>& t, int x0, int y0, int h, int w) {
  Tensor<float> out({t.dim(0), h, w});
  for (int c = 0; c < t.dim(0); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = t.at(c, y0 + y, x0 + x);
  return out;
}

/// Horizontal mirror; `negate_channel` flips the sign of that channel
/// (the dx component of flow).
inline Tensor<float> hflip(const Tensor<float>& t, int negate_channel = -1) {
  Tensor<float> out(t.shape());
  const int w = t.dim(2);
  for (int c = 0; c < t.dim(0); ++c)
    for (int y = 0; y < t.dim(1); ++y)
      for (int x = 0; x < w; ++x) {
        float v = t.at(c, y, w - 1 - x);
        if (c == negate_channel) v = -v;
        out.at(c, y, x) = v;
      }
  return out;
}

inline BatchSample make_batch(const std::vector<VideoSample>& dataset,
                              const TrainConfig& cfg, std::mt19937& rng) {
  if (dataset.empty()) throw std::invalid_argument("make_batch: empty dataset");
  const VideoSample& v =
      dataset[std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(rng)];
  const int n = cfg.batch_frames;
  if (v.length() < n)
    throw std::invalid_argument("make_batch: video '" + v.name + "' shorter than " +
                                std::to_string(n) + " frames");
  const int h = std::min(cfg.crop_h, v.height());
  const int w = std::min(cfg.crop_w, v.width());
  const int t0 = std::uniform_int_distribution<int>(0, v.length() - n)(rng);
  BatchSample b;
  b.crop_x = std::uniform_int_distribution<int>(0, v.width() - w)(rng);
  b.crop_y = std::uniform_int_distribution<int>(0, v.height() - h)(rng);
  b.flipped = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  for (int i = 0; i < n; ++i) {
    const std::size_t t = static_cast<std::size_t>(t0 + i);
    Tensor<float> frame = crop3(v.frames[t], b.crop_x, b.crop_y, h, w);
    Tensor<float> flow = crop3(v.flow[t], b.crop_x, b.crop_y, h, w);
    Tensor<float> mask = crop3(v.masks[t], b.crop_x, b.crop_y, h, w);
    if (b.flipped) {
      frame = hflip(frame);
      flow = hflip(flow, /*negate_channel=*/0);
      mask = hflip(mask);
    }
    b.frames.push_back(std::move(frame));
    b.flow.push_back(std::move(flow));
    b.masks.push_back(std::move(mask));
  }
  return b;
}

namespace detail {
inline void apply_override_all(BatchSample& b, int stride, int frozen_begin,
                               int frozen_end) {
  const int n = static_cast<int>(b.frames.size());
  b.motion_override.resize(static_cast<std::size_t>(n));
  const int hp = b.frames[0].dim(1) / stride, wp = b.frames[0].dim(2) / stride;
  for (int t = 0; t < n; ++t) {
    if (t >= frozen_begin && t < frozen_end)
      b.motion_override[static_cast<std::size_t>(t)] =
          Tensor<float>({1, hp, wp});  // "signal absent" zeros
    else
      b.motion_override[static_cast<std::size_t>(t)] =
          downsample_mask(b.masks[static_cast<std::size_t>(t)], stride);
  }
  b.augmented = true;
}
}  // namespace detail

/// Stop-and-go tail: the last freeze_len frames are replaced by copies of the
/// frame preceding them; ground-truth masks drive the motion channel on the
/// live frames, zeros on the frozen ones. Loss covers all frames.
inline void augment_stop(BatchSample& b, int stride, int freeze_len = 5) {
  const int n = static_cast<int>(b.frames.size());
  if (n <= freeze_len) throw std::invalid_argument("augment_stop: batch too short");
  const std::size_t src = static_cast<std::size_t>(n - freeze_len - 1);
  for (int t = n - freeze_len; t < n; ++t) {
    b.frames[static_cast<std::size_t>(t)] = b.frames[src];
    b.flow[static_cast<std::size_t>(t)] = b.flow[src];
    b.masks[static_cast<std::size_t>(t)] = b.masks[src];
  }
  detail::apply_override_all(b, stride, n - freeze_len, n);
}

/// Static head: mirror of augment_stop at the start of the sequence.
inline void augment_static_start(BatchSample& b, int stride, int freeze_len = 5) {
  const int n = static_cast<int>(b.frames.size());
  if (n <= freeze_len)
    throw std::invalid_argument("augment_static_start: batch too short");
  const std::size_t src = static_cast<std::size_t>(freeze_len);
  for (int t = 0; t < freeze_len; ++t) {
    b.frames[static_cast<std::size_t>(t)] = b.frames[src];
    b.flow[static_cast<std::size_t>(t)] = b.flow[src];
    b.masks[static_cast<std::size_t>(t)] = b.masks[src];
  }
  detail::apply_override_all(b, stride, 0, freeze_len);
}

// ---------------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------------

inline ClipInput<float> clip_from_batch(const BatchSample& b) {
  ClipInput<float> clip;
  clip.frames = b.frames;
  clip.motion_override = b.motion_override;
  clip.flow_angle.reserve(b.flow.size());
  for (const auto& f : b.flow) clip.flow_angle.push_back(flow_to_angle(f));
  return clip;
}

/// Forward + BPTT + clip + RMSProp. `group` limits which parameters move
/// (stage B trains only the memory/fuse/head group). Returns the batch loss.
inline float train_step(ModelParams<float>& model, const BatchSample& batch,
                        RmsPropState<float>& opt, const TrainConfig& cfg, float lr,
                        std::optional<ParamGroup> group = std::nullopt) {
  ClipInput<float> clip = clip_from_batch(batch);
  std::vector<Tensor<float>> gt;
  gt.reserve(batch.masks.size());
  for (const auto& m : batch.masks) gt.push_back(downsample_mask(m, model.cfg.stride));

  ClipCache<float> cache;
  ForwardResult<float> fwd = forward_video(clip, model, {}, &cache);
  BceResult<float> loss = bce_loss(fwd.probs, gt);
  if (!std::isfinite(loss.loss))
    throw std::runtime_error("train_step: non-finite loss (diverged); loss=" +
                             std::to_string(loss.loss));
  ModelParams<float> grads = zero_grads_like(model);
  model_backward(model, cache, loss.grad_logits, grads);
  clip_gradients(grads, static_cast<float>(cfg.clip_bound));
  rmsprop_update(model, grads, opt, lr, static_cast<float>(cfg.weight_decay), group);
  return loss.loss;
}

// ---------------------------------------------------------------------------
// Stage-A stub pretraining
// ---------------------------------------------------------------------------

/// Per-frame mask of pixels moving independently of the camera: flow differs
/// from the most common flow vector in the frame.
inline Tensor<float> moving_mask_from_flow(const Tensor<float>& flow) {
  const int h = flow.dim(1), w = flow.dim(2);
  // dominant flow from integer-rounded histogram
  std::map<std::pair<int, int>, int> hist;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      ++hist[{static_cast<int>(std::lround(flow.at(0, y, x) * 4)),
              static_cast<int>(std::lround(flow.at(1, y, x) * 4))}];
  std::pair<int, int> bg{0, 0};
  int best = -1;
  for (const auto& [k, c] : hist)
    if (c > best) {
      best = c;
      bg = k;
    }
  Tensor<float> out({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float ddx = flow.at(0, y, x) - static_cast<float>(bg.first) / 4.0f;
      const float ddy = flow.at(1, y, x) - static_cast<float>(bg.second) / 4.0f;
      out.at(0, y, x) = (ddx * ddx + ddy * ddy) > 0.0625f ? 1.0f : 0.0f;
    }
  return out;
}

struct PretrainResult {
  float final_app_loss = 0;
  float final_mot_loss = 0;
};

/// Trains the appearance stub (through a throwaway 1x1 aux head) to predict
/// the object mask from RGB, and the motion stub to predict the
/// independently-moving mask from the flow-angle field. Per-frame, no memory.
PretrainResult pretrain_stubs(ModelParams<float>& model,
                              const std::vector<VideoSample>& dataset,
                              const TrainConfig& cfg,
                              bool verbose = false);

/// Stage-B driver: augmented-batch schedule, lr decay per epoch, progress
/// lines "iter=<k> loss=<v> lr=<v>" when verbose.
void train_memory(ModelParams<float>& model, const std::vector<VideoSample>& dataset,
                  const TrainConfig& cfg, bool verbose = false);

}  // namespace vmseg
