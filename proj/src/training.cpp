// SPDX-License-Identifier: Apache-2.0
#include "vmseg/training.hpp"

#include <cstdio>

namespace vmseg {

namespace {

// Minimal per-tensor RMSProp used by the stage-A loops.
struct ScalarRms {
  Tensor<float> acc;
  explicit ScalarRms(const std::vector<int>& shape) : acc(shape) {}
  void step(Tensor<float>& p, const Tensor<float>& g, float lr, float wd) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc[i] = 0.9f * acc[i] + 0.1f * g[i] * g[i];
      p[i] -= lr * g[i] / std::sqrt(acc[i] + 1e-8f) + lr * wd * p[i];
    }
  }
};

float bce_single(const Tensor<float>& prob, const Tensor<float>& gt,
                 Tensor<float>& grad_out) {
  // prob is a single-channel likelihood; grad_out receives dLoss/dprob.
  const int h = prob.dim(1), w = prob.dim(2);
  const float n = static_cast<float>(h) * w;
  float loss = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float p = std::clamp(prob.at(0, y, x), 1e-6f, 1.0f - 1e-6f);
      const float yv = gt.at(0, y, x);
      loss -= (yv * std::log(p) + (1 - yv) * std::log(1 - p)) / n;
      grad_out.at(0, y, x) = (-yv / p + (1 - yv) / (1 - p)) / n;
    }
  return loss;
}

}  // namespace

PretrainResult pretrain_stubs(ModelParams<float>& model,
                              const std::vector<VideoSample>& dataset,
                              const TrainConfig& cfg, bool verbose) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("pretrain_stubs: empty dataset");
  std::mt19937 rng(static_cast<std::uint32_t>(cfg.rng_seed ^ 0x517cc1b7u));
  const ModelConfig& mc = model.cfg;
  const int levels = mc.pool_levels();
  const bool has_app = mc.variant != Variant::NoApp && mc.variant != Variant::Rgb;
  const float lr = static_cast<float>(cfg.learning_rate) * 10.0f;  // per-frame task

  // throwaway appearance head
  HeadParams<float> aux;
  aux.w = has_app ? xavier_init<float>({2, mc.d_app, 1, 1}, rng) : Tensor<float>();
  aux.b = Tensor<float>({2});

  ScalarRms r_aw1(has_app ? model.app.w1.shape() : std::vector<int>{1});
  ScalarRms r_ab1(has_app ? model.app.b1.shape() : std::vector<int>{1});
  ScalarRms r_aw2(has_app ? model.app.w2.shape() : std::vector<int>{1});
  ScalarRms r_ab2(has_app ? model.app.b2.shape() : std::vector<int>{1});
  ScalarRms r_xw(has_app ? aux.w.shape() : std::vector<int>{1});
  ScalarRms r_xb(has_app ? aux.b.shape() : std::vector<int>{1});
  ScalarRms r_mw1(model.mot.w1.shape()), r_mb1(model.mot.b1.shape());
  ScalarRms r_mw2(model.mot.w2.shape()), r_mb2(model.mot.b2.shape());

  PretrainResult res;
  for (int it = 0; it < cfg.pretrain_iterations; ++it) {
    const VideoSample& v =
        dataset[std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(rng)];
    const std::size_t t =
        std::uniform_int_distribution<std::size_t>(0, v.frames.size() - 1)(rng);
    const Tensor<float> gt = downsample_mask(v.masks[t], mc.stride);

    if (has_app) {
      EncoderCache<float> ec;
      Tensor<float> feat = appearance_encode(v.frames[t], model.app, levels, &ec);
      HeadCache<float> hc;
      Tensor<float> probs = segment_head(feat, aux, &hc);
      BceResult<float> l = bce_loss<float>({probs}, {gt});
      auto hg = conv2d_backward(feat, aux.w, ConvSpec{1, 0, 1}, l.grad_logits[0]);
      Tensor<float> gw1(model.app.w1.shape()), gb1(model.app.b1.shape());
      Tensor<float> gw2(model.app.w2.shape()), gb2(model.app.b2.shape());
      detail::encode2_backward(ec, model.app.w1, model.app.w2, Pointwise::Tanh,
                               hg.input, gw1, gb1, gw2, gb2);
      r_aw1.step(model.app.w1, gw1, lr, 0);
      r_ab1.step(model.app.b1, gb1, lr, 0);
      r_aw2.step(model.app.w2, gw2, lr, 0);
      r_ab2.step(model.app.b2, gb2, lr, 0);
      r_xw.step(aux.w, hg.kernel, lr, 0);
      r_xb.step(aux.b, hg.bias, lr, 0);
      res.final_app_loss = l.loss;
    }

    {
      EncoderCache<float> ec;
      Tensor<float> angle = flow_to_angle(v.flow[t]);
      Tensor<float> lik = motion_encode(angle, model.mot, levels, &ec);
      Tensor<float> target = downsample_mask(moving_mask_from_flow(v.flow[t]), mc.stride);
      Tensor<float> gl(lik.shape());
      res.final_mot_loss = bce_single(lik, target, gl);
      Tensor<float> gw1(model.mot.w1.shape()), gb1(model.mot.b1.shape());
      Tensor<float> gw2(model.mot.w2.shape()), gb2(model.mot.b2.shape());
      detail::encode2_backward(ec, model.mot.w1, model.mot.w2, Pointwise::Sigmoid, gl,
                               gw1, gb1, gw2, gb2);
      r_mw1.step(model.mot.w1, gw1, lr, 0);
      r_mb1.step(model.mot.b1, gb1, lr, 0);
      r_mw2.step(model.mot.w2, gw2, lr, 0);
      r_mb2.step(model.mot.b2, gb2, lr, 0);
    }

    if (verbose && (it % 100 == 0 || it + 1 == cfg.pretrain_iterations))
      std::printf("pretrain iter=%d app_loss=%g mot_loss=%g\n", it,
                  static_cast<double>(res.final_app_loss),
                  static_cast<double>(res.final_mot_loss));
  }
  return res;
}

void train_memory(ModelParams<float>& model, const std::vector<VideoSample>& dataset,
                  const TrainConfig& cfg, bool verbose) {
  cfg.validate();
  std::mt19937 rng(static_cast<std::uint32_t>(cfg.rng_seed));
  RmsPropState<float> opt = RmsPropState<float>::init(model);
  std::uniform_real_distribution<double> coin(0, 1);
  for (int it = 0; it < cfg.iterations; ++it) {
    const int epoch = it / cfg.iterations_per_epoch;
    const float lr = static_cast<float>(
        lr_schedule(cfg.learning_rate, cfg.lr_decay_per_epoch, epoch));
    BatchSample batch = make_batch(dataset, cfg, rng);
    if (coin(rng) < cfg.aug_fraction) {
      // even split between the two stop-and-go schemes
      if (coin(rng) < 0.5)
        augment_stop(batch, model.cfg.stride, cfg.freeze_len);
      else
        augment_static_start(batch, model.cfg.stride, cfg.freeze_len);
    }
    const float loss =
        train_step(model, batch, opt, cfg, lr, ParamGroup::Memory);
    if (verbose)
      std::printf("iter=%d loss=%g lr=%g\n", it, static_cast<double>(loss),
                  static_cast<double>(lr));
  }
}

}  // namespace vmseg
