// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "vmseg/dataio.hpp"
#include "vmseg/model.hpp"
#include "vmseg/training.hpp"

namespace vmseg {

/// All tunables as `key = value` lines (`#` comments). Unknown keys are
/// rejected. Defaults reproduce the desk-scale runs.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthRandomize gen;
  int window = 130;
  int step = 50;

  void apply_line(const std::string& line, int line_no);
  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_string(const std::string& text);
  std::string to_string() const;
};

}  // namespace vmseg
