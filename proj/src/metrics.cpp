// SPDX-License-Identifier: Apache-2.0
#include "vmseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vmseg {

namespace {

void check_mask_pair(const Tensor<float>& a, const Tensor<float>& b, const char* op) {
  if (a.rank() != 3 || a.dim(0) != 1)
    throw std::invalid_argument(std::string(op) + ": masks must be [1,H,W]");
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": dimension mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

inline bool on(const Tensor<float>& m, int y, int x) { return m.at(0, y, x) >= 0.5f; }

std::vector<std::pair<int, int>> boundary_pixels(const Tensor<float>& m) {
  const int h = m.dim(1), w = m.dim(2);
  std::vector<std::pair<int, int>> px;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!on(m, y, x)) continue;
      const bool border = y == 0 || y == h - 1 || x == 0 || x == w - 1;
      const bool bg_neighbor =
          (y > 0 && !on(m, y - 1, x)) || (y < h - 1 && !on(m, y + 1, x)) ||
          (x > 0 && !on(m, y, x - 1)) || (x < w - 1 && !on(m, y, x + 1));
      if (border || bg_neighbor) px.emplace_back(y, x);
    }
  return px;
}

double matched_fraction(const std::vector<std::pair<int, int>>& from,
                        const std::vector<std::pair<int, int>>& to, double radius) {
  if (from.empty()) return 0;
  const double r2 = radius * radius;
  std::size_t matched = 0;
  for (const auto& [y, x] : from) {
    for (const auto& [gy, gx] : to) {
      const double dy = y - gy, dx = x - gx;
      if (dy * dy + dx * dx <= r2) {
        ++matched;
        break;
      }
    }
  }
  return static_cast<double>(matched) / static_cast<double>(from.size());
}

}  // namespace

double iou(const Tensor<float>& pred, const Tensor<float>& gt) {
  check_mask_pair(pred, gt, "iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= 0.5f, g = gt[i] >= 0.5f;
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return 1.0;  // a correct "nothing moves" prediction
  return static_cast<double>(inter) / static_cast<double>(uni);
}

JStats j_statistics(const std::vector<double>& ious) {
  if (ious.empty()) throw std::invalid_argument("j_statistics: empty input");
  JStats s;
  s.mean = std::accumulate(ious.begin(), ious.end(), 0.0) / static_cast<double>(ious.size());
  std::size_t above = 0;
  for (double v : ious) above += v > 0.5;
  s.recall = static_cast<double>(above) / static_cast<double>(ious.size());
  if (ious.size() >= 4) {
    const std::size_t q = ious.size() / 4;
    const double first = std::accumulate(ious.begin(), ious.begin() + q, 0.0) / q;
    const double last = std::accumulate(ious.end() - q, ious.end(), 0.0) / q;
    s.decay = first - last;
  }
  return s;
}

double boundary_f(const Tensor<float>& pred, const Tensor<float>& gt, double tol_frac) {
  check_mask_pair(pred, gt, "boundary_f");
  const double diag = std::hypot(pred.dim(1), pred.dim(2));
  const double radius = std::ceil(tol_frac * diag);
  const auto pb = boundary_pixels(pred);
  const auto gb = boundary_pixels(gt);
  if (pb.empty() && gb.empty()) return 1.0;
  if (pb.empty() || gb.empty()) return 0.0;
  const double p = matched_fraction(pb, gb, radius);
  const double r = matched_fraction(gb, pb, radius);
  if (p + r == 0) return 0.0;
  return 2 * p * r / (p + r);
}

Prf prf(const Tensor<float>& pred, const Tensor<float>& gt) {
  check_mask_pair(pred, gt, "prf");
  std::size_t np = 0, ng = 0, inter = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= 0.5f, g = gt[i] >= 0.5f;
    np += p;
    ng += g;
    inter += p && g;
  }
  if (np == 0 && ng == 0) return {1.0, 1.0, 1.0};
  Prf r;
  r.precision = np ? static_cast<double>(inter) / np : 0.0;
  r.recall = ng ? static_cast<double>(inter) / ng : 0.0;
  r.f = (r.precision + r.recall) > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall)
                                     : 0.0;
  return r;
}

SequenceReport evaluate_sequence(const std::vector<Tensor<float>>& pred,
                                 const std::vector<Tensor<float>>& gt, double tol_frac) {
  if (pred.empty() || pred.size() != gt.size())
    throw std::invalid_argument("evaluate_sequence: sequence length mismatch");
  SequenceReport rep;
  std::vector<double> ious;
  std::size_t np = 0, ng = 0, inter = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    FrameScore fs;
    fs.frame = static_cast<int>(t);
    fs.iou = iou(pred[t], gt[t]);
    fs.boundary_f = boundary_f(pred[t], gt[t], tol_frac);
    rep.frames.push_back(fs);
    ious.push_back(fs.iou);
    rep.f_mean += fs.boundary_f / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred[t].size(); ++i) {
      const bool p = pred[t][i] >= 0.5f, g = gt[t][i] >= 0.5f;
      np += p;
      ng += g;
      inter += p && g;
    }
  }
  const JStats j = j_statistics(ious);
  rep.j_mean = j.mean;
  rep.j_recall = j.recall;
  rep.j_decay = j.decay;
  if (np == 0 && ng == 0) {
    rep.precision = rep.recall = rep.f_measure = 1.0;
  } else {
    rep.precision = np ? static_cast<double>(inter) / np : 0.0;
    rep.recall = ng ? static_cast<double>(inter) / ng : 0.0;
    rep.f_measure = (rep.precision + rep.recall) > 0
                        ? 2 * rep.precision * rep.recall / (rep.precision + rep.recall)
                        : 0.0;
  }
  return rep;
}

std::string SequenceReport::table() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "measure      value\n"
     << "J(mean)      " << j_mean << "\n"
     << "J(recall)    " << j_recall << "\n"
     << "J(decay)     " << j_decay << "\n"
     << "F(mean)      " << f_mean << "\n"
     << "precision    " << precision << "\n"
     << "recall       " << recall << "\n"
     << "F-measure    " << f_measure << "\n";
  return os.str();
}

std::string SequenceReport::records() const {
  std::ostringstream os;
  os << "j_mean=" << j_mean << "\nj_recall=" << j_recall << "\nj_decay=" << j_decay
     << "\nf_mean=" << f_mean << "\nprecision=" << precision << "\nrecall=" << recall
     << "\nf_measure=" << f_measure << "\n";
  for (const FrameScore& f : frames) {
    os << "frame_" << std::setw(4) << std::setfill('0') << f.frame << std::setfill(' ')
       << "_iou=" << f.iou << "\n";
    os << "frame_" << std::setw(4) << std::setfill('0') << f.frame << std::setfill(' ')
       << "_boundary_f=" << f.boundary_f << "\n";
  }
  return os.str();
}

}  // namespace vmseg
