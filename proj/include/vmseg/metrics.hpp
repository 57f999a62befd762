// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "vmseg/tensor.hpp"

namespace vmseg {

struct FrameScore {
  int frame = 0;
  double iou = 0;
  double boundary_f = 0;
};

struct SequenceReport {
  std::vector<FrameScore> frames;
  double j_mean = 0, j_recall = 0, j_decay = 0;
  double f_mean = 0;
  double precision = 0, recall = 0, f_measure = 0;

  std::string table() const;      // aligned plain-text table
  std::string records() const;    // line-oriented key=value
};

/// |pred ∩ gt| / |pred ∪ gt|; both masks empty scores 1.0.
double iou(const Tensor<float>& pred, const Tensor<float>& gt);

struct JStats {
  double mean = 0, recall = 0, decay = 0;
};

/// mean, fraction of frames with iou > 0.5, and first-quartile mean minus
/// last-quartile mean (temporal quartiles).
JStats j_statistics(const std::vector<double>& ious);

/// Contour F-measure: boundary pixels (mask pixel with a background 4-neighbor
/// or on the border) matched within radius ceil(tol_frac * diagonal).
double boundary_f(const Tensor<float>& pred, const Tensor<float>& gt,
                  double tol_frac = 0.008);

struct Prf {
  double precision = 0, recall = 0, f = 0;
};

/// Region-level pixel precision/recall/F. Empty denominators give 0 unless
/// both masks are empty (then all 1).
Prf prf(const Tensor<float>& pred, const Tensor<float>& gt);

/// Full per-sequence report over aligned mask sequences.
SequenceReport evaluate_sequence(const std::vector<Tensor<float>>& pred,
                                 const std::vector<Tensor<float>>& gt,
                                 double tol_frac = 0.008);

}  // namespace vmseg
