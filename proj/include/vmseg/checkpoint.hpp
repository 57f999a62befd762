// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "vmseg/model.hpp"

namespace vmseg {

// Binary layout (all integers little-endian):
//   magic "CGRU" | version u32 | config echo (u32 length + key=value text)
//   | tensor count u32 | per tensor: name (u32 length + bytes), rank u8,
//     dims u32 each, dtype u8 (0=f32, 1=f64), row-major payload
//   | CRC-32 (zlib polynomial) of everything prior.
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Serializes the model config to the checkpoint's echo block; the echo alone
/// reconstructs the model shape.
std::string model_config_echo(const ModelConfig& cfg);
ModelConfig model_config_from_echo(const std::string& echo);

void save_checkpoint(const std::filesystem::path& path, ModelParams<float>& model);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace vmseg
