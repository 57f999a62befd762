// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vmseg/gru.hpp"
#include "vmseg/tensor.hpp"

namespace vmseg {

enum class GateSignal { Reset, InverseUpdate, State };

inline const char* gate_signal_name(GateSignal s) {
  switch (s) {
    case GateSignal::Reset: return "r";
    case GateSignal::InverseUpdate: return "invz";
    case GateSignal::State: return "h";
  }
  return "?";
}

struct HeatmapSpec {
  std::vector<int> channels;
  std::vector<GateSignal> signals = {GateSignal::Reset, GateSignal::InverseUpdate};
  int scale = 1;  // nearest-neighbor upscale factor for readability
};

/// Writes one 8-bit PGM per (frame, channel, signal) with the fixed mapping
/// activation 1.0 -> 255 (no per-image normalization). State maps are shifted
/// from [-1,1] to [0,1]. Files: gate_<signal>_c<channel>_t<frame>.pgm.
/// Returns the created paths.
std::vector<std::filesystem::path> render_gates(
    const std::vector<GateRecord<float>>& records, const HeatmapSpec& spec,
    const std::filesystem::path& out_dir);

/// Blends object pixels toward a fixed highlight color with weight alpha; the
/// mask is nearest-upsampled to the frame grid. Writes overlay_t<frame>.ppm.
std::filesystem::path overlay_mask(const Tensor<float>& frame, const Tensor<float>& mask,
                                   int frame_index, const std::filesystem::path& out_dir,
                                   float alpha = 0.5f);

}  // namespace vmseg
