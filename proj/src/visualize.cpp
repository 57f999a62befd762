// SPDX-License-Identifier: Apache-2.0
#include "vmseg/visualize.hpp"

#include <stdexcept>

#include "vmseg/dataio.hpp"

namespace vmseg {

namespace fs = std::filesystem;

std::vector<fs::path> render_gates(const std::vector<GateRecord<float>>& records,
                                   const HeatmapSpec& spec, const fs::path& out_dir) {
  if (records.empty())
    throw std::invalid_argument("render_gates: no gate records (was record_gates set?)");
  fs::create_directories(out_dir);
  const int dh = records[0].z.dim(0);
  for (int c : spec.channels)
    if (c < 0 || c >= dh)
      throw std::invalid_argument("render_gates: channel " + std::to_string(c) +
                                  " out of range (d_h=" + std::to_string(dh) + ")");
  std::vector<fs::path> out;
  for (std::size_t t = 0; t < records.size(); ++t) {
    for (GateSignal sig : spec.signals) {
      const Tensor<float>* src = nullptr;
      switch (sig) {
        case GateSignal::Reset: src = &records[t].r; break;
        case GateSignal::InverseUpdate: src = &records[t].z; break;
        case GateSignal::State: src = &records[t].h_new; break;
      }
      for (int c : spec.channels) {
        Tensor<float> img({1, src->dim(1), src->dim(2)});
        for (int y = 0; y < img.dim(1); ++y)
          for (int x = 0; x < img.dim(2); ++x) {
            float v = src->at(c, y, x);
            if (sig == GateSignal::InverseUpdate) v = 1.0f - v;
            if (sig == GateSignal::State) v = 0.5f * (v + 1.0f);
            img.at(0, y, x) = v;
          }
        if (spec.scale > 1) img = upsample_nearest(img, spec.scale);
        fs::path p = out_dir / ("gate_" + std::string(gate_signal_name(sig)) + "_c" +
                                std::to_string(c) + "_t" + std::to_string(t) + ".pgm");
        write_pgm(p, img);
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

fs::path overlay_mask(const Tensor<float>& frame, const Tensor<float>& mask,
                      int frame_index, const fs::path& out_dir, float alpha) {
  if (frame.rank() != 3 || frame.dim(0) != 3)
    throw std::invalid_argument("overlay_mask: expected [3,H,W] frame");
  Tensor<float> m = mask;
  if (m.dim(1) != frame.dim(1)) {
    if (frame.dim(1) % m.dim(1) != 0 || frame.dim(2) % m.dim(2) != 0)
      throw std::invalid_argument("overlay_mask: mask grid is not an integer divisor");
    m = upsample_nearest(m, frame.dim(1) / m.dim(1));
  }
  const float highlight[3] = {1.0f, 0.1f, 0.1f};
  Tensor<float> out = frame;
  for (int y = 0; y < frame.dim(1); ++y)
    for (int x = 0; x < frame.dim(2); ++x)
      if (m.at(0, y, x) >= 0.5f)
        for (int c = 0; c < 3; ++c)
          out.at(c, y, x) = (1.0f - alpha) * frame.at(c, y, x) + alpha * highlight[c];
  fs::create_directories(out_dir);
  fs::path p = out_dir / ("overlay_t" + std::to_string(frame_index) + ".ppm");
  write_ppm(p, out);
  return p;
}

}  // namespace vmseg
