// SPDX-License-Identifier: Apache-2.0
//
// vmseg: data generation, training, inference, evaluation and gate
// visualization for the two-stream ConvGRU video segmentation pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vmseg/checkpoint.hpp"
#include "vmseg/config.hpp"
#include "vmseg/dataio.hpp"
#include "vmseg/metrics.hpp"
#include "vmseg/training.hpp"
#include "vmseg/visualize.hpp"

namespace fs = std::filesystem;
using namespace vmseg;

namespace {

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return RunConfig::from_file(path);
}

std::vector<VideoSample> load_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.txt";
  std::vector<VideoSample> out;
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      out.push_back(load_sequence(dir / line));
    }
  } else if (fs::exists(dir / "meta.txt")) {
    out.push_back(load_sequence(dir));
  } else {
    throw std::runtime_error("no manifest.txt or meta.txt under " + dir.string());
  }
  return out;
}

std::string indexed(const char* prefix, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05d.%s", prefix, i, ext);
  return buf;
}

// Gate record file: magic "GREC", u32 T, u32 d_h, u32 H, u32 W, then per
// frame z, r, h_cand, h_new as packed f32 (native little-endian layout).
void save_gate_records(const fs::path& path, const std::vector<GateRecord<float>>& recs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  out.write("GREC", 4);
  u32(static_cast<std::uint32_t>(recs.size()));
  u32(static_cast<std::uint32_t>(recs[0].z.dim(0)));
  u32(static_cast<std::uint32_t>(recs[0].z.dim(1)));
  u32(static_cast<std::uint32_t>(recs[0].z.dim(2)));
  for (const auto& r : recs)
    for (const Tensor<float>* t : {&r.z, &r.r, &r.h_cand, &r.h_new})
      out.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->size() * sizeof(float)));
}

std::vector<GateRecord<float>> load_gate_records(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "GREC")
    throw std::runtime_error("bad gate record file " + path.string());
  auto u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  const std::uint32_t t_len = u32(), dh = u32(), h = u32(), w = u32();
  std::vector<GateRecord<float>> recs(t_len);
  for (auto& r : recs) {
    for (Tensor<float>* t : {&r.z, &r.r, &r.h_cand, &r.h_new}) {
      *t = Tensor<float>({static_cast<int>(dh), static_cast<int>(h), static_cast<int>(w)});
      in.read(reinterpret_cast<char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(float)));
    }
  }
  if (!in) throw std::runtime_error("truncated gate record file " + path.string());
  return recs;
}

int cmd_gen_data(const std::string& out_dir, const std::string& config, int count,
                 std::uint64_t seed) {
  const RunConfig cfg = load_config(config);
  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("unwritable path " + out_dir);
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04d", i);
    const SynthConfig sc = random_synth_config(cfg.gen, rng, name);
    const VideoSample v = generate_video(sc);
    save_sequence(v, fs::path(out_dir) / name);
    manifest << name << "\n";
  }
  std::printf("generated %d sequences under %s\n", count, out_dir.c_str());
  return 0;
}

int cmd_pretrain(const std::string& data, const std::string& out,
                 const std::string& config) {
  const RunConfig cfg = load_config(config);
  const auto dataset = load_dataset(data);
  ModelParams<float> model = make_model<float>(cfg.model);
  std::mt19937 rng(static_cast<std::uint32_t>(cfg.train.rng_seed));
  init_model(model, rng);
  const PretrainResult r = pretrain_stubs(model, dataset, cfg.train, true);
  save_checkpoint(out, model);
  std::printf("pretrain done app_loss=%g mot_loss=%g ckpt=%s\n",
              static_cast<double>(r.final_app_loss),
              static_cast<double>(r.final_mot_loss), out.c_str());
  return 0;
}

int cmd_train(const std::string& data, const std::string& init, const std::string& out,
              const std::string& config) {
  const RunConfig cfg = load_config(config);
  const auto dataset = load_dataset(data);
  ModelParams<float> model = init.empty() ? make_model<float>(cfg.model)
                                          : load_checkpoint(init);
  if (init.empty()) {
    std::mt19937 rng(static_cast<std::uint32_t>(cfg.train.rng_seed));
    init_model(model, rng);
  } else {
    // memory-side tensors restart from scratch unless the checkpoint was
    // already trained; reinitialize only if they are all zero
    bool all_zero = true;
    for (auto& r : param_refs(model))
      if (r.group == ParamGroup::Memory)
        for (float v : r.tensor->raw()) all_zero &= v == 0.0f;
    if (all_zero) {
      std::mt19937 rng(static_cast<std::uint32_t>(cfg.train.rng_seed ^ 0x9e3779b9u));
      for (auto& r : param_refs(model))
        if (r.group == ParamGroup::Memory && r.tensor->rank() == 4)
          *r.tensor = xavier_init<float>(r.tensor->shape(), rng);
    }
  }
  train_memory(model, dataset, cfg.train, true);
  save_checkpoint(out, model);
  std::printf("train done ckpt=%s\n", out.c_str());
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& seq, const std::string& out,
              int window, int step, bool record_gates) {
  ModelParams<float> model = load_checkpoint(ckpt);
  const VideoSample sample = load_sequence(seq);
  const SlidingResult res = sliding_window_infer(model, sample, window, step);
  fs::create_directories(out);
  for (int t = 0; t < sample.length(); ++t) {
    const Tensor<float> up =
        upsample_nearest(res.masks[static_cast<std::size_t>(t)], model.cfg.stride);
    write_pgm(fs::path(out) / indexed("mask", t, "pgm"), up);
  }
  if (record_gates) {
    // gate capture uses a single full pass (window merging has no per-frame
    // gate identity)
    ClipInput<float> clip = clip_from_sample(sample);
    ForwardOptions<float> opt;
    opt.record_gates = true;
    ForwardResult<float> fr = forward_video(clip, model, opt);
    if (!fr.records_fwd.empty())
      save_gate_records(fs::path(out) / "gates_fwd.bin", fr.records_fwd);
    if (!fr.records_bwd.empty())
      save_gate_records(fs::path(out) / "gates_bwd.bin", fr.records_bwd);
  }
  std::printf("inferred %d frames to %s\n", sample.length(), out.c_str());
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir,
             const std::string& report) {
  const VideoSample gt = load_sequence(gt_dir);
  std::vector<Tensor<float>> pred;
  for (int t = 0; t < gt.length(); ++t) {
    const fs::path p = fs::path(pred_dir) / indexed("mask", t, "pgm");
    if (!fs::exists(p)) throw std::runtime_error("missing prediction " + p.string());
    Tensor<float> m = read_pgm(p);
    for (float& v : m.raw()) v = v >= 0.5f ? 1.0f : 0.0f;
    if (m.dim(1) != gt.height()) {
      if (gt.height() % m.dim(1) != 0)
        throw std::runtime_error("prediction grid is not an integer divisor of gt");
      m = upsample_nearest(m, gt.height() / m.dim(1));
    }
    pred.push_back(std::move(m));
  }
  const SequenceReport rep = evaluate_sequence(pred, gt.masks);
  std::cout << rep.table();
  if (!report.empty()) {
    std::ofstream out(report);
    out << rep.table() << "\n" << rep.records();
  }
  return 0;
}

int cmd_vis_gates(const std::string& records, const std::string& channels,
                  const std::string& out, int scale) {
  HeatmapSpec spec;
  std::stringstream ss(channels);
  std::string tok;
  while (std::getline(ss, tok, ',')) if (!tok.empty()) spec.channels.push_back(std::stoi(tok));
  spec.scale = scale;
  const auto recs = load_gate_records(records);
  const auto files = render_gates(recs, spec, out);
  std::printf("wrote %zu heatmaps to %s\n", files.size(), out.c_str());
  return 0;
}

int cmd_ablate(const std::string& variant, const std::string& data,
               const std::string& val, const std::string& out,
               const std::string& config, bool audit_only) {
  RunConfig cfg = load_config(config);
  cfg.model.variant = variant_from_name(variant);
  ModelParams<float> model = make_model<float>(cfg.model);

  if (cfg.model.variant == Variant::NoMemory) {
    // parameter-count audit: the conv stack uses the largest width whose
    // count does not exceed the replaced GRU + fuse block
    ModelConfig full_cfg = cfg.model;
    full_cfg.variant = Variant::Full;
    std::size_t stack_count = 0;
    for (const auto& w : model.stack.w) stack_count += w.size();
    for (const auto& b : model.stack.b) stack_count += b.size();
    std::printf("audit: gru+fuse params=%zu conv-stack params=%zu width=%d\n",
                gru_fuse_param_count(full_cfg), stack_count, model.cfg.stack_width);
  }
  std::printf("variant=%s trainable params=%zu\n", variant.c_str(),
              trainable_param_count(model));
  if (audit_only) return 0;

  const auto dataset = load_dataset(data);
  std::mt19937 rng(static_cast<std::uint32_t>(cfg.train.rng_seed));
  init_model(model, rng);
  pretrain_stubs(model, dataset, cfg.train, false);
  train_memory(model, dataset, cfg.train, true);
  if (!out.empty()) save_checkpoint(out, model);

  if (!val.empty()) {
    const auto valset = load_dataset(val);
    double sum = 0;
    std::size_t n = 0;
    for (const auto& v : valset) {
      const SlidingResult res = sliding_window_infer(model, v, cfg.window, cfg.step);
      for (int t = 0; t < v.length(); ++t) {
        sum += iou(res.masks[static_cast<std::size_t>(t)],
                   downsample_mask(v.masks[static_cast<std::size_t>(t)],
                                   model.cfg.stride));
        ++n;
      }
    }
    std::printf("val_mean_iou=%g\n", n ? sum / static_cast<double>(n) : 0.0);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stream ConvGRU moving-object video segmentation"};
  app.require_subcommand(1);

  std::string out_dir, config, data, init, out_ckpt, ckpt, seq, pred, gt, report;
  std::string records, channels, variant, val;
  int count = 0, window = 130, step = 50, scale = 1;
  std::uint64_t seed = 1;
  bool record_gates = false, audit_only = false;

  auto* gen = app.add_subcommand("gen-data", "generate synthetic sequences");
  gen->add_option("--out", out_dir)->required();
  gen->add_option("--config", config);
  gen->add_option("--count", count)->required();
  gen->add_option("--seed", seed);

  auto* pre = app.add_subcommand("pretrain", "stage A: train the stream stubs");
  pre->add_option("--data", data)->required();
  pre->add_option("--out", out_ckpt)->required();
  pre->add_option("--config", config);

  auto* tr = app.add_subcommand("train", "stage B: train the memory module");
  tr->add_option("--data", data)->required();
  tr->add_option("--init", init);
  tr->add_option("--out", out_ckpt)->required();
  tr->add_option("--config", config);

  auto* inf = app.add_subcommand("infer", "segment a sequence");
  inf->add_option("--ckpt", ckpt)->required();
  inf->add_option("--seq", seq)->required();
  inf->add_option("--out", out_dir)->required();
  inf->add_option("--window", window);
  inf->add_option("--step", step);
  inf->add_flag("--record-gates", record_gates);

  auto* ev = app.add_subcommand("eval", "score predictions against ground truth");
  ev->add_option("--pred", pred)->required();
  ev->add_option("--gt", gt)->required();
  ev->add_option("--report", report);

  auto* vg = app.add_subcommand("vis-gates", "render gate activation heatmaps");
  vg->add_option("--records", records)->required();
  vg->add_option("--channels", channels)->required();
  vg->add_option("--out", out_dir)->required();
  vg->add_option("--scale", scale);

  auto* ab = app.add_subcommand(
      "ablate", "swap one pipeline element and train/evaluate the variant; "
                "no-memory uses the largest conv-stack width whose parameter "
                "count does not exceed the replaced GRU+fuse block");
  ab->add_option("--variant", variant)
      ->required()
      ->check(CLI::IsMember({"no-app", "rgb", "no-motion", "no-memory", "unidir",
                             "convrnn", "full"}));
  ab->add_option("--data", data);
  ab->add_option("--val", val);
  ab->add_option("--out", out_ckpt);
  ab->add_option("--config", config);
  ab->add_flag("--audit", audit_only);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(out_dir, config, count, seed);
    if (pre->parsed()) return cmd_pretrain(data, out_ckpt, config);
    if (tr->parsed()) return cmd_train(data, init, out_ckpt, config);
    if (inf->parsed()) return cmd_infer(ckpt, seq, out_dir, window, step, record_gates);
    if (ev->parsed()) return cmd_eval(pred, gt, report);
    if (vg->parsed()) return cmd_vis_gates(records, channels, out_dir, scale);
    if (ab->parsed()) return cmd_ablate(variant, data, val, out_ckpt, config, audit_only);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
