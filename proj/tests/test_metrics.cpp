// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "support/testutil.hpp"
#include "vmseg/metrics.hpp"

using namespace vmseg;
using namespace vmseg::test;

namespace {

Tensor<float> mask3(unsigned bits) {
  Tensor<float> m({1, 3, 3});
  for (int i = 0; i < 9; ++i) m[size_t(i)] = (bits >> i) & 1u ? 1.0f : 0.0f;
  return m;
}

// Brute-force reference metrics on 3x3 masks.
double iou_ref(unsigned a, unsigned b) {
  const int inter = __builtin_popcount(a & b);
  const int uni = __builtin_popcount(a | b);
  return uni == 0 ? 1.0 : double(inter) / uni;
}

Prf prf_ref(unsigned p, unsigned g) {
  const int tp = __builtin_popcount(p & g);
  const int np = __builtin_popcount(p), ng = __builtin_popcount(g);
  if (np == 0 && ng == 0) return {1.0, 1.0, 1.0};
  Prf r;
  r.precision = np == 0 ? 0.0 : double(tp) / np;
  r.recall = ng == 0 ? 0.0 : double(tp) / ng;
  r.f = (r.precision + r.recall) == 0.0
            ? 0.0
            : 2 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

// Reference boundary extraction + matcher for 3x3 masks.
std::vector<std::pair<int, int>> boundary_ref(unsigned bits) {
  std::vector<std::pair<int, int>> out;
  auto get = [&](int y, int x) {
    if (y < 0 || y > 2 || x < 0 || x > 2) return 0;
    return int((bits >> (y * 3 + x)) & 1u);
  };
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      if (!get(y, x)) continue;
      if (y == 0 || y == 2 || x == 0 || x == 2 || !get(y - 1, x) || !get(y + 1, x) ||
          !get(y, x - 1) || !get(y, x + 1))
        out.push_back({y, x});
    }
  return out;
}

double boundary_f_ref(unsigned p, unsigned g) {
  auto bp = boundary_ref(p);
  auto bg = boundary_ref(g);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  const int radius = int(std::ceil(0.008 * std::sqrt(18.0)));
  auto match = [&](const std::vector<std::pair<int, int>>& a,
                   const std::vector<std::pair<int, int>>& b) {
    int hit = 0;
    for (auto [ya, xa] : a) {
      bool ok = false;
      for (auto [yb, xb] : b)
        if (std::abs(ya - yb) <= radius && std::abs(xa - xb) <= radius &&
            (ya - yb) * (ya - yb) + (xa - xb) * (xa - xb) <= radius * radius)
          ok = true;
      if (ok) ++hit;
    }
    return double(hit) / double(a.size());
  };
  const double pr = match(bp, bg), rc = match(bg, bp);
  return pr + rc == 0.0 ? 0.0 : 2 * pr * rc / (pr + rc);
}

}  // namespace

TEST_CASE("iou worked examples") {
  Tensor<float> a({1, 2, 2}, std::vector<float>{1, 1, 0, 0});
  Tensor<float> b({1, 2, 2}, std::vector<float>{1, 0, 1, 0});
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(a, a) == 1.0);
  Tensor<float> e({1, 2, 2});
  CHECK(iou(e, e) == 1.0);  // both empty
  CHECK(iou(a, e) == 0.0);
}

TEST_CASE("iou and prf match brute force on every pair of 3x3 masks") {
  for (unsigned a = 0; a < 512; ++a)
    for (unsigned b = 0; b < 512; b += 7) {  // sampled second operand
      auto ta = mask3(a), tb = mask3(b);
      REQUIRE(iou(ta, tb) == doctest::Approx(iou_ref(a, b)));
      auto got = prf(ta, tb);
      auto want = prf_ref(a, b);
      REQUIRE(got.precision == doctest::Approx(want.precision));
      REQUIRE(got.recall == doctest::Approx(want.recall));
      REQUIRE(got.f == doctest::Approx(want.f));
    }
}

TEST_CASE("iou is symmetric") {
  for (unsigned a = 0; a < 512; a += 5)
    for (unsigned b = 0; b < 512; b += 11)
      CHECK(iou(mask3(a), mask3(b)) == iou(mask3(b), mask3(a)));
}

TEST_CASE("boundary_f matches brute force on 3x3 masks") {
  for (unsigned a = 0; a < 512; a += 3)
    for (unsigned b = 0; b < 512; b += 13)
      REQUIRE(boundary_f(mask3(a), mask3(b)) == doctest::Approx(boundary_f_ref(a, b)));
}

TEST_CASE("boundary_f edge cases") {
  Tensor<float> e({1, 8, 8});
  CHECK(boundary_f(e, e) == 1.0);
  Tensor<float> box({1, 8, 8});
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) box.at(0, y, x) = 1.0f;
  CHECK(boundary_f(box, box) == 1.0);
  CHECK(boundary_f(box, e) == 0.0);
  CHECK(boundary_f(e, box) == 0.0);
}

TEST_CASE("boundary_f tolerates small shifts within the radius") {
  // with a large tolerance a 1-pixel shift still matches perfectly
  Tensor<float> a({1, 16, 16}), b({1, 16, 16});
  for (int y = 4; y < 10; ++y)
    for (int x = 4; x < 10; ++x) {
      a.at(0, y, x) = 1.0f;
      b.at(0, y, x + 2) = 1.0f;
    }
  CHECK(boundary_f(a, b, /*tol_frac=*/0.2) == doctest::Approx(1.0));
  // the default tolerance gives radius 1 here, so a 2-pixel shift is penalized
  CHECK(boundary_f(a, b, /*tol_frac=*/0.008) < 1.0);
}

TEST_CASE("j_statistics quartile decay and recall") {
  std::vector<double> ious{0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2};
  auto s = j_statistics(ious);
  CHECK(s.mean == doctest::Approx(0.55));
  CHECK(s.recall == doctest::Approx(4.0 / 8.0));  // > 0.5 strictly
  // first quartile {0.9, 0.8} mean 0.85; last quartile {0.3, 0.2} mean 0.25
  CHECK(s.decay == doctest::Approx(0.6));

  auto one = j_statistics({0.7});
  CHECK(one.mean == doctest::Approx(0.7));
  CHECK(one.decay == 0.0);  // too short for quartiles
}

TEST_CASE("evaluate_sequence aggregates per-frame scores") {
  std::vector<Tensor<float>> pred, gt;
  Tensor<float> full({1, 4, 4}, 1.0f);
  Tensor<float> empty({1, 4, 4});
  Tensor<float> half({1, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 2; ++x) half.at(0, y, x) = 1.0f;

  pred = {full, half, full, half};
  gt = {full, full, full, full};
  auto rep = evaluate_sequence(pred, gt);
  REQUIRE(rep.frames.size() == 4);
  CHECK(rep.frames[0].iou == 1.0);
  CHECK(rep.frames[1].iou == doctest::Approx(0.5));
  CHECK(rep.j_mean == doctest::Approx(0.75));
  CHECK(rep.j_recall == doctest::Approx(0.5));
  CHECK(rep.precision == doctest::Approx(1.0));
  CHECK(rep.recall == doctest::Approx(0.75));

  // identical sequences score perfectly everywhere
  auto perfect = evaluate_sequence(gt, gt);
  CHECK(perfect.j_mean == 1.0);
  CHECK(perfect.f_mean == 1.0);
  CHECK(perfect.f_measure == 1.0);
  CHECK(perfect.j_decay == 0.0);

  CHECK_THROWS_AS(evaluate_sequence(pred, {full}), std::invalid_argument);
}

TEST_CASE("report formats include every frame") {
  std::vector<Tensor<float>> m(3, Tensor<float>({1, 4, 4}, 1.0f));
  auto rep = evaluate_sequence(m, m);
  auto rec = rep.records();
  CHECK(rec.find("j_mean") != std::string::npos);
  CHECK(rec.find("frame_0002_iou") != std::string::npos);
  CHECK(rec.find("frame_0003_iou") == std::string::npos);
  auto tab = rep.table();
  CHECK(tab.find("J(mean)") != std::string::npos);
  CHECK(tab.find("F-measure") != std::string::npos);
}
