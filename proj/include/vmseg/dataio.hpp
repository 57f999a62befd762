// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vmseg/model.hpp"
#include "vmseg/tensor.hpp"

namespace vmseg {

/// Aligned frames / forward flow / binary masks of one clip.
/// flow[t] maps frame t to t+1; flow[T-1] duplicates flow[T-2].
struct VideoSample {
  std::vector<Tensor<float>> frames;  // T x [3,H,W] in [0,1]
  std::vector<Tensor<float>> flow;    // T x [2,H,W] raw (dx,dy) pixels/frame
  std::vector<Tensor<float>> masks;   // T x [1,H,W] binary
  std::string name;

  int length() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.at(0).dim(1); }
  int width() const { return frames.at(0).dim(2); }
  void validate() const;
};

struct SynthObject {
  enum class Shape { Rectangle, Disk };
  Shape shape = Shape::Rectangle;
  int half_w = 8, half_h = 8;  // disk uses half_w as radius
  int x0 = 32, y0 = 32;        // center at t = 0
  int vx = 0, vy = 0;          // independent (object) velocity, pixels/frame
  int stop_begin = 0, stop_end = 0;  // frames in [stop_begin,stop_end) move with camera
  std::uint32_t texture_seed = 0;

  bool moving_at(int t) const {
    if ((vx == 0 && vy == 0)) return false;
    return t < stop_begin || t >= stop_end;
  }
};

struct SynthConfig {
  int width = 64, height = 64, frames = 24;
  int cam_vx = 0, cam_vy = 0;
  std::vector<SynthObject> objects;
  std::uint32_t background_seed = 1;
  std::string name = "synth";
};

/// Knobs for drawing random-but-valid SynthConfigs.
struct SynthRandomize {
  int width = 64, height = 64, frames = 24;
  int min_objects = 1, max_objects = 2;
  int min_half = 7, max_half = 12;
  int max_speed = 2;       // per-axis object speed
  int max_cam_speed = 1;   // per-axis camera speed
  double stop_tail_prob = 0.0;  // freeze objects for the final stop_tail frames
  int stop_tail = 0;
  double static_head_prob = 0.0;  // objects static for the first static_head frames
  int static_head = 0;
  // Distractors: objects with zero independent velocity. They render like any
  // other object but never enter the mask, so appearance alone cannot decide.
  int min_distractors = 0, max_distractors = 0;
};

SynthConfig random_synth_config(const SynthRandomize& r, std::mt19937& rng,
                                const std::string& name);

/// Renders the configured scene. Objects whose independent velocity is nonzero
/// in at least one frame are marked in every frame's mask, including frames
/// where they move with the camera.
VideoSample generate_video(const SynthConfig& cfg);

/// Per-pixel (sin theta, cos theta) of the flow direction; pixels with
/// |flow| <= 1e-6 map to (0,0).
template <class T>
Tensor<T> flow_to_angle(const Tensor<T>& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2)
    throw std::invalid_argument("flow_to_angle: expected [2,H,W]");
  Tensor<T> out(flow.shape());
  const int h = flow.dim(1), w = flow.dim(2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const T dx = flow.at(0, y, x), dy = flow.at(1, y, x);
      const T mag = std::sqrt(dx * dx + dy * dy);
      if (mag <= T(1e-6)) {
        out.at(0, y, x) = T(0);
        out.at(1, y, x) = T(0);
      } else {
        out.at(0, y, x) = dy / mag;  // sin
        out.at(1, y, x) = dx / mag;  // cos
      }
    }
  return out;
}

// On-disk sequence format:
//   frame_%05d.ppm (P6 8-bit), mask_%05d.pgm (P5, 0/255),
//   flow_%05d.flo (Middlebury "PIEH"), meta.txt (key = value).
void save_sequence(const VideoSample& sample, const std::filesystem::path& dir);
VideoSample load_sequence(const std::filesystem::path& dir);

// Individual codecs (also used by the visualization module).
void write_ppm(const std::filesystem::path& path, const Tensor<float>& rgb01);
Tensor<float> read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Tensor<float>& gray01);
Tensor<float> read_pgm(const std::filesystem::path& path);
void write_flo(const std::filesystem::path& path, const Tensor<float>& flow);
Tensor<float> read_flo(const std::filesystem::path& path);

/// Nearest-neighbor reduction to the model's feature grid, sampling cell centers.
Tensor<float> downsample_mask(const Tensor<float>& mask, int stride);
/// Nearest-neighbor upsampling by an integer factor.
Tensor<float> upsample_nearest(const Tensor<float>& t, int factor);

/// Window starts {0, step, 2*step, ...} plus a final window clamped to end at
/// t_len; degenerates to {0} when t_len <= window.
std::vector<int> sliding_window_starts(int t_len, int window, int step);

/// Bidirectional inference over overlapping windows; object probabilities of
/// frames covered by several windows are averaged before thresholding.
struct SlidingResult {
  std::vector<Tensor<float>> prob;   // T x [2,H',W'] averaged probabilities
  std::vector<Tensor<float>> masks;  // T x [1,H',W'] thresholded at 0.5
};
SlidingResult sliding_window_infer(const ModelParams<float>& model,
                                   const VideoSample& sample, int window = 130,
                                   int step = 50);

ClipInput<float> clip_from_sample(const VideoSample& sample);

}  // namespace vmseg
