// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the core operations: numpy arrays in, numpy arrays out.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>

#include "vmseg/checkpoint.hpp"
#include "vmseg/config.hpp"
#include "vmseg/dataio.hpp"
#include "vmseg/metrics.hpp"
#include "vmseg/model.hpp"
#include "vmseg/training.hpp"

namespace py = pybind11;
using namespace vmseg;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const Array& a) {
  std::vector<int> shape;
  for (py::ssize_t d = 0; d < a.ndim(); ++d)
    shape.push_back(static_cast<int>(a.shape(d)));
  Tensor<float> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.raw().begin());
  return t;
}

Array from_tensor(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  std::copy(t.raw().begin(), t.raw().end(), a.mutable_data());
  return a;
}

std::vector<Tensor<float>> to_tensors(const std::vector<Array>& arrays) {
  std::vector<Tensor<float>> out;
  out.reserve(arrays.size());
  for (const auto& a : arrays) out.push_back(to_tensor(a));
  return out;
}

// Stack equally shaped per-frame tensors into one array with a leading
// time dimension.
Array from_tensors(const std::vector<Tensor<float>>& ts) {
  if (ts.empty()) return Array(std::vector<py::ssize_t>{0});
  std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(ts.size())};
  shape.insert(shape.end(), ts[0].shape().begin(), ts[0].shape().end());
  Array a(shape);
  float* dst = a.mutable_data();
  for (const auto& t : ts) {
    std::copy(t.raw().begin(), t.raw().end(), dst);
    dst += t.size();
  }
  return a;
}

ModelConfig config_from_kwargs(int d_app, int d_h, int k_gru, int stride,
                               int d_mid_app, int d_mid_mot, const std::string& variant) {
  ModelConfig cfg;
  cfg.d_app = d_app;
  cfg.d_h = d_h;
  cfg.k_gru = k_gru;
  cfg.stride = stride;
  cfg.d_mid_app = d_mid_app;
  cfg.d_mid_mot = d_mid_mot;
  cfg.variant = variant_from_name(variant);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_vmseg, m) {
  m.doc() = "moving-object video segmentation with a convolutional GRU memory";

  m.def(
      "conv2d",
      [](const Array& input, const Array& kernel, const Array& bias, int padding,
         int stride) {
        return from_tensor(conv2d(to_tensor(input), to_tensor(kernel), to_tensor(bias),
                                  ConvSpec{static_cast<int>(to_tensor(kernel).dim(2)),
                                           padding, stride}));
      },
      py::arg("input"), py::arg("kernel"), py::arg("bias"), py::arg("padding") = 0,
      py::arg("stride") = 1,
      "2-D convolution over a [C,H,W] input with an [O,C,K,K] kernel");

  m.def(
      "gru_step",
      [](const Array& x, const Array& h_prev, const std::vector<Array>& weights,
         const std::vector<Array>& biases) {
        if (weights.size() != 6 || biases.size() != 3)
          throw std::invalid_argument("gru_step: expected 6 kernels and 3 biases");
        ConvGruParams<float> p;
        p.w_xz = to_tensor(weights[0]);
        p.w_hz = to_tensor(weights[1]);
        p.w_xr = to_tensor(weights[2]);
        p.w_hr = to_tensor(weights[3]);
        p.w_xh = to_tensor(weights[4]);
        p.w_hh = to_tensor(weights[5]);
        p.b_z = to_tensor(biases[0]);
        p.b_r = to_tensor(biases[1]);
        p.b_h = to_tensor(biases[2]);
        return from_tensor(gru_step(to_tensor(x), to_tensor(h_prev), p));
      },
      py::arg("x"), py::arg("h_prev"), py::arg("weights"), py::arg("biases"),
      "One convolutional GRU step; weights = [w_xz, w_hz, w_xr, w_hr, w_xh, w_hh]");

  m.def(
      "flow_to_angle",
      [](const Array& flow) { return from_tensor(flow_to_angle(to_tensor(flow))); },
      py::arg("flow"), "per-pixel (sin, cos) of the flow direction; (0,0) when still");

  m.def(
      "iou",
      [](const Array& pred, const Array& gt) { return iou(to_tensor(pred), to_tensor(gt)); },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "boundary_f",
      [](const Array& pred, const Array& gt, double tol_frac) {
        return boundary_f(to_tensor(pred), to_tensor(gt), tol_frac);
      },
      py::arg("pred"), py::arg("gt"), py::arg("tol_frac") = 0.008);

  m.def(
      "evaluate_sequence",
      [](const std::vector<Array>& pred, const std::vector<Array>& gt) {
        auto rep = evaluate_sequence(to_tensors(pred), to_tensors(gt));
        py::dict d;
        d["j_mean"] = rep.j_mean;
        d["j_recall"] = rep.j_recall;
        d["j_decay"] = rep.j_decay;
        d["f_mean"] = rep.f_mean;
        d["precision"] = rep.precision;
        d["recall"] = rep.recall;
        d["f_measure"] = rep.f_measure;
        return d;
      },
      py::arg("pred"), py::arg("gt"));

  py::class_<VideoSample>(m, "VideoSample")
      .def_property_readonly("frames",
                             [](const VideoSample& v) { return from_tensors(v.frames); })
      .def_property_readonly("flow",
                             [](const VideoSample& v) { return from_tensors(v.flow); })
      .def_property_readonly("masks",
                             [](const VideoSample& v) { return from_tensors(v.masks); })
      .def_readonly("name", &VideoSample::name)
      .def("__len__", &VideoSample::length);

  m.def(
      "generate_video",
      [](int width, int height, int frames, int seed, int max_objects) {
        SynthRandomize r;
        r.width = width;
        r.height = height;
        r.frames = frames;
        r.max_objects = max_objects;
        std::mt19937 rng(static_cast<unsigned>(seed));
        return generate_video(random_synth_config(r, rng, "py_" + std::to_string(seed)));
      },
      py::arg("width") = 64, py::arg("height") = 64, py::arg("frames") = 24,
      py::arg("seed") = 1, py::arg("max_objects") = 2,
      "render a random synthetic moving-shapes video");

  m.def("save_sequence", &save_sequence, py::arg("sample"), py::arg("dir"));
  m.def("load_sequence", &load_sequence, py::arg("dir"));

  py::class_<ModelParams<float>>(m, "Model")
      .def_property_readonly(
          "param_count",
          [](ModelParams<float>& m_) { return trainable_param_count(m_); })
      .def_property_readonly("variant", [](const ModelParams<float>& m_) {
        return std::string(variant_name(m_.cfg.variant));
      })
      .def_property_readonly("stride",
                             [](const ModelParams<float>& m_) { return m_.cfg.stride; });

  m.def(
      "make_model",
      [](int d_app, int d_h, int k_gru, int stride, int d_mid_app, int d_mid_mot,
         const std::string& variant, int seed) {
        auto model = make_model<float>(
            config_from_kwargs(d_app, d_h, k_gru, stride, d_mid_app, d_mid_mot, variant));
        std::mt19937 rng(static_cast<unsigned>(seed));
        init_model(model, rng);
        return model;
      },
      py::arg("d_app") = 16, py::arg("d_h") = 16, py::arg("k_gru") = 3,
      py::arg("stride") = 4, py::arg("d_mid_app") = 16, py::arg("d_mid_mot") = 8,
      py::arg("variant") = "full", py::arg("seed") = 1);

  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("model"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "forward_video",
      [](const ModelParams<float>& model, const std::vector<Array>& frames,
         const std::vector<Array>& flow) {
        ClipInput<float> clip;
        clip.frames = to_tensors(frames);
        for (const auto& f : flow) clip.flow_angle.push_back(flow_to_angle(to_tensor(f)));
        return from_tensors(forward_video(clip, model).probs);
      },
      py::arg("model"), py::arg("frames"), py::arg("flow"),
      "run the full pipeline; returns per-frame [2,H',W'] probabilities");

  m.def(
      "infer",
      [](const ModelParams<float>& model, const VideoSample& sample, int window,
         int step) {
        auto res = sliding_window_infer(model, sample, window, step);
        return py::make_tuple(from_tensors(res.prob), from_tensors(res.masks));
      },
      py::arg("model"), py::arg("sample"), py::arg("window") = 130, py::arg("step") = 50,
      "sliding-window inference; returns (probabilities, thresholded masks)");

  m.def(
      "train",
      [](ModelParams<float>& model, const std::vector<VideoSample>& dataset,
         int pretrain_iterations, int iterations, int crop, int batch_frames,
         int seed) {
        TrainConfig cfg;
        cfg.pretrain_iterations = pretrain_iterations;
        cfg.iterations = iterations;
        cfg.crop_h = crop;
        cfg.crop_w = crop;
        cfg.batch_frames = batch_frames;
        cfg.rng_seed = static_cast<std::uint64_t>(seed);
        pretrain_stubs(model, dataset, cfg);
        train_memory(model, dataset, cfg);
      },
      py::arg("model"), py::arg("dataset"), py::arg("pretrain_iterations") = 300,
      py::arg("iterations") = 2000, py::arg("crop") = 56, py::arg("batch_frames") = 14,
      py::arg("seed") = 1, "two-stage training: stream stubs, then the memory module");
}
