// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "support/testutil.hpp"
#include "vmseg/training.hpp"

using namespace vmseg;
using namespace vmseg::test;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_app = 4;
  cfg.d_h = 4;
  cfg.stride = 2;
  cfg.d_mid_app = 4;
  cfg.d_mid_mot = 4;
  return cfg;
}

std::vector<VideoSample> small_dataset(int count, unsigned seed) {
  std::vector<VideoSample> out;
  SynthRandomize r;
  r.width = 32;
  r.height = 32;
  r.frames = 16;
  std::mt19937 rng(seed);
  for (int i = 0; i < count; ++i) {
    auto cfg = random_synth_config(r, rng, "train_" + std::to_string(i));
    out.push_back(generate_video(cfg));
  }
  return out;
}

}  // namespace

TEST_CASE("bce loss of a uniform prediction is ln 2") {
  std::vector<Tensor<double>> probs(3, Tensor<double>({2, 4, 4}, 0.5));
  std::vector<Tensor<double>> gt(3, Tensor<double>({1, 4, 4}, 1.0));
  auto res = bce_loss(probs, gt);
  CHECK(res.loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("bce loss of a perfect confident prediction is near zero") {
  Tensor<double> p({2, 2, 2});
  Tensor<double> g({1, 2, 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      const double yv = (y + x) % 2;
      g.at(0, y, x) = yv;
      p.at(1, y, x) = yv == 1.0 ? 1.0 - 1e-9 : 1e-9;
      p.at(0, y, x) = 1.0 - p.at(1, y, x);
    }
  auto res = bce_loss<double>({p}, {g});
  CHECK(res.loss < 1e-8);
}

TEST_CASE("bce rejects non-binary ground truth and length mismatch") {
  std::vector<Tensor<double>> probs(1, Tensor<double>({2, 2, 2}, 0.5));
  std::vector<Tensor<double>> bad(1, Tensor<double>({1, 2, 2}, 0.3));
  CHECK_THROWS_AS(bce_loss(probs, bad), std::invalid_argument);
  std::vector<Tensor<double>> gt(2, Tensor<double>({1, 2, 2}, 1.0));
  CHECK_THROWS_AS(bce_loss(probs, gt), std::invalid_argument);
}

TEST_CASE("bce gradient matches finite differences through the softmax") {
  std::mt19937 rng(1);
  auto logits = random_tensor<double>({2, 3, 3}, rng);
  Tensor<double> gt({1, 3, 3});
  std::uniform_int_distribution<int> coin(0, 1);
  for (auto& v : gt.raw()) v = coin(rng);

  auto loss = [&]() {
    auto p = channel_softmax2(logits);
    return bce_loss<double>({p}, {gt}).loss;
  };
  auto p = channel_softmax2(logits);
  auto res = bce_loss<double>({p}, {gt});
  CHECK(grad_rel_error(res.grad_logits[0], finite_diff(logits, loss)) < 1e-5);
}

TEST_CASE("gradient clipping bounds every entry and keeps signs") {
  std::mt19937 rng(2);
  auto m = make_model<float>(small_config());
  auto grads = zero_grads_like(m);
  for (auto& r : param_refs(grads))
    *r.tensor = random_tensor<float>(r.tensor->shape(), rng, -200.0, 200.0);
  auto before = grads;
  clip_gradients(grads, 50.0f);
  auto brefs = param_refs(before);
  auto arefs = param_refs(grads);
  for (std::size_t i = 0; i < arefs.size(); ++i)
    for (std::size_t k = 0; k < arefs[i].tensor->size(); ++k) {
      const float a = (*arefs[i].tensor)[k];
      const float b = (*brefs[i].tensor)[k];
      CHECK(std::abs(a) <= 50.0f);
      if (std::abs(b) <= 50.0f) CHECK(a == b);
      else CHECK(a == (b > 0 ? 50.0f : -50.0f));
    }
}

TEST_CASE("rmsprop matches a scalar reference over 100 steps") {
  // Reference recurrence computed independently in double.
  ModelConfig cfg = small_config();
  auto m = make_model<float>(cfg);
  auto refs = param_refs(m);
  refs[0].tensor->fill(1.0f);
  auto opt = RmsPropState<float>::init(m);

  double theta = 1.0, acc = 0.0;
  const double g = 0.3, lr = 0.01, wd = 0.005;
  for (int i = 0; i < 100; ++i) {
    auto grads = zero_grads_like(m);
    param_refs(grads)[0].tensor->fill(static_cast<float>(g));
    rmsprop_update(m, grads, opt, static_cast<float>(lr), static_cast<float>(wd));
    acc = 0.9 * acc + 0.1 * g * g;
    theta -= lr * g / std::sqrt(acc + 1e-8) + lr * wd * theta;
  }
  CHECK(std::abs((*param_refs(m)[0].tensor)[0] - theta) < 1e-4);
}

TEST_CASE("rmsprop group filter moves only the requested group") {
  std::mt19937 rng(3);
  auto m = make_model<float>(small_config());
  init_model(m, rng);
  auto snapshot = m;
  auto grads = zero_grads_like(m);
  for (auto& r : param_refs(grads)) r.tensor->fill(0.5f);
  auto opt = RmsPropState<float>::init(m);
  rmsprop_update(m, grads, opt, 0.01f, 0.0f, ParamGroup::Memory);

  auto now = param_refs(m);
  auto then = param_refs(snapshot);
  for (std::size_t i = 0; i < now.size(); ++i) {
    const bool same = bitwise_equal(now[i].tensor->template cast<double>(),
                                    then[i].tensor->template cast<double>());
    if (now[i].group == ParamGroup::Stub) CHECK(same);
    else CHECK_FALSE(same);
  }
}

TEST_CASE("learning rate schedule decays per epoch") {
  CHECK(lr_schedule(1e-4, 0.95, 0) == doctest::Approx(1e-4));
  CHECK(lr_schedule(1e-4, 0.95, 1) == doctest::Approx(0.95e-4));
  CHECK(lr_schedule(1e-4, 0.95, 10) == doctest::Approx(1e-4 * std::pow(0.95, 10)));
  CHECK_THROWS_AS(lr_schedule(1e-4, 0.95, -1), std::invalid_argument);
}

TEST_CASE("xavier init respects the fan bound and is deterministic") {
  std::mt19937 a(7), b(7);
  auto t1 = xavier_init<float>({8, 4, 3, 3}, a);
  auto t2 = xavier_init<float>({8, 4, 3, 3}, b);
  CHECK(bitwise_equal(t1, t2));
  const double bound = std::sqrt(6.0 / (4 * 9 + 8 * 9));
  double mean = 0;
  for (float v : t1.raw()) {
    CHECK(std::abs(v) <= bound);
    mean += v;
  }
  mean /= static_cast<double>(t1.size());
  CHECK(std::abs(mean) < bound / 4.0);
  CHECK_THROWS_AS(xavier_init<float>({8, 4}, a), std::invalid_argument);
}

TEST_CASE("init_model fills kernels and zeroes biases") {
  std::mt19937 rng(8);
  auto m = make_model<float>(small_config());
  init_model(m, rng);
  for (auto& r : param_refs(m)) {
    if (r.tensor->rank() == 4) {
      double s = 0;
      for (float v : r.tensor->raw()) s += std::abs(v);
      CHECK(s > 0.0);
    } else {
      for (float v : r.tensor->raw()) CHECK(v == 0.0f);
    }
  }
}

TEST_CASE("hflip is an involution and negates the requested channel") {
  std::mt19937 rng(9);
  Tensor<float> t({2, 3, 4});
  for (auto& v : t.raw())
    v = std::uniform_real_distribution<float>(-1, 1)(rng);
  auto once = hflip(t, 0);
  auto twice = hflip(once, 0);
  CHECK(bitwise_equal(twice, t));
  CHECK(once.at(0, 1, 0) == -t.at(0, 1, 3));
  CHECK(once.at(1, 1, 0) == t.at(1, 1, 3));
}

TEST_CASE("flipping flow flips cos and preserves sin of the angle") {
  std::mt19937 rng(10);
  Tensor<float> flow({2, 4, 4});
  for (auto& v : flow.raw())
    v = std::uniform_real_distribution<float>(-3, 3)(rng);
  auto angle = flow_to_angle(flow);
  auto flipped_angle = flow_to_angle(hflip(flow, /*negate_channel=*/0));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(flipped_angle.at(0, y, x) ==
            doctest::Approx(angle.at(0, y, 3 - x)).epsilon(1e-6));  // sin
      CHECK(flipped_angle.at(1, y, x) ==
            doctest::Approx(-angle.at(1, y, 3 - x)).epsilon(1e-6));  // cos
    }
}

TEST_CASE("make_batch crops consistently across streams") {
  auto dataset = small_dataset(2, 11);
  TrainConfig cfg;
  cfg.batch_frames = 10;
  cfg.crop_h = 16;
  cfg.crop_w = 16;
  std::mt19937 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    auto b = make_batch(dataset, cfg, rng);
    REQUIRE(b.frames.size() == 10);
    REQUIRE(b.flow.size() == 10);
    REQUIRE(b.masks.size() == 10);
    CHECK(b.frames[0].shape() == std::vector<int>{3, 16, 16});
    CHECK(b.flow[0].shape() == std::vector<int>{2, 16, 16});
    CHECK(b.masks[0].shape() == std::vector<int>{1, 16, 16});
    for (const auto& m : b.masks)
      for (float v : m.raw()) CHECK((v == 0.0f || v == 1.0f));
  }
}

TEST_CASE("make_batch rejects short videos") {
  auto dataset = small_dataset(1, 13);
  TrainConfig cfg;
  cfg.batch_frames = 100;
  cfg.freeze_len = 5;
  std::mt19937 rng(14);
  CHECK_THROWS_AS(make_batch(dataset, cfg, rng), std::invalid_argument);
}

TEST_CASE("augment_stop freezes the tail and overrides motion from gt") {
  auto dataset = small_dataset(1, 15);
  TrainConfig cfg;
  cfg.batch_frames = 12;
  cfg.crop_h = 16;
  cfg.crop_w = 16;
  std::mt19937 rng(16);
  auto b = make_batch(dataset, cfg, rng);
  const int stride = 2, freeze = 5, n = 12;
  augment_stop(b, stride, freeze);
  CHECK(b.augmented);

  const std::size_t src = size_t(n - freeze - 1);
  for (int t = n - freeze; t < n; ++t) {
    CHECK(bitwise_equal(b.frames[size_t(t)], b.frames[src]));
    CHECK(bitwise_equal(b.masks[size_t(t)], b.masks[src]));
  }
  REQUIRE(b.motion_override.size() == size_t(n));
  for (int t = 0; t < n; ++t) {
    REQUIRE_FALSE(b.motion_override[size_t(t)].empty());
    if (t >= n - freeze) {
      for (float v : b.motion_override[size_t(t)].raw()) CHECK(v == 0.0f);
    } else {
      auto want = downsample_mask(b.masks[size_t(t)], stride);
      CHECK(bitwise_equal(b.motion_override[size_t(t)], want));
    }
  }
}

TEST_CASE("augment_static_start mirrors augment_stop at the head") {
  auto dataset = small_dataset(1, 17);
  TrainConfig cfg;
  cfg.batch_frames = 12;
  cfg.crop_h = 16;
  cfg.crop_w = 16;
  std::mt19937 rng(18);
  auto b = make_batch(dataset, cfg, rng);
  augment_static_start(b, 2, 5);
  for (int t = 0; t < 5; ++t) {
    CHECK(bitwise_equal(b.frames[size_t(t)], b.frames[5]));
    for (float v : b.motion_override[size_t(t)].raw()) CHECK(v == 0.0f);
  }
  auto want = downsample_mask(b.masks[6], 2);
  CHECK(bitwise_equal(b.motion_override[6], want));
}

TEST_CASE("train_step with zero learning rate leaves parameters unchanged") {
  auto dataset = small_dataset(1, 19);
  TrainConfig cfg;
  cfg.batch_frames = 10;
  cfg.crop_h = 16;
  cfg.crop_w = 16;
  std::mt19937 rng(20);
  auto m = make_model<float>(small_config());
  init_model(m, rng);
  auto snapshot = m;
  auto opt = RmsPropState<float>::init(m);
  auto b = make_batch(dataset, cfg, rng);
  const float loss = train_step(m, b, opt, cfg, 0.0f);
  CHECK(std::isfinite(loss));
  auto now = param_refs(m);
  auto then = param_refs(snapshot);
  for (std::size_t i = 0; i < now.size(); ++i)
    CHECK(bitwise_equal(now[i].tensor->template cast<double>(),
                        then[i].tensor->template cast<double>()));
}

TEST_CASE("a few train steps reduce the loss on a fixed batch") {
  auto dataset = small_dataset(2, 21);
  TrainConfig cfg;
  cfg.batch_frames = 10;
  cfg.crop_h = 16;
  cfg.crop_w = 16;
  std::mt19937 rng(22);
  auto m = make_model<float>(small_config());
  init_model(m, rng);
  auto opt = RmsPropState<float>::init(m);
  auto b = make_batch(dataset, cfg, rng);
  const float first = train_step(m, b, opt, cfg, 1e-3f);
  float last = first;
  for (int i = 0; i < 30; ++i) last = train_step(m, b, opt, cfg, 1e-3f);
  CHECK(last < first);
}

TEST_CASE("moving_mask_from_flow separates object from camera flow") {
  Tensor<float> flow({2, 8, 8});
  for (auto& v : flow.raw()) v = 0;
  // camera flow (1, 0) everywhere
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) flow.at(0, y, x) = 1.0f;
  // a 2x2 object moving differently
  for (int y = 2; y < 4; ++y)
    for (int x = 5; x < 7; ++x) {
      flow.at(0, y, x) = -1.0f;
      flow.at(1, y, x) = 2.0f;
    }
  auto m = moving_mask_from_flow(flow);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const bool obj = y >= 2 && y < 4 && x >= 5 && x < 7;
      CHECK(m.at(0, y, x) == (obj ? 1.0f : 0.0f));
    }
}

TEST_CASE("pretraining the stubs reduces both stub losses") {
  auto dataset = small_dataset(3, 23);
  TrainConfig cfg;
  cfg.batch_frames = 10;
  cfg.crop_h = 16;
  cfg.crop_w = 16;
  cfg.pretrain_iterations = 60;
  cfg.rng_seed = 24;
  std::mt19937 rng(25);
  auto m = make_model<float>(small_config());
  init_model(m, rng);
  auto res = pretrain_stubs(m, dataset, cfg);
  CHECK(std::isfinite(res.final_app_loss));
  CHECK(std::isfinite(res.final_mot_loss));
  CHECK(res.final_mot_loss < std::log(2.0));
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.aug_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.aug_fraction = 0.2;
  cfg.batch_frames = 6;
  cfg.freeze_len = 5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
