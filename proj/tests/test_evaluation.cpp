// Copyright 2026 The histoseg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <tuple>

#include "histoseg/errors.hpp"
#include "histoseg/evaluation.hpp"
#include "test_support.hpp"

using namespace histoseg;
using histoseg::testing::flood_fill;

namespace {

ConfusionCounts counts(long long tp, long long fp, long long tn, long long fn) { return {tp, fp, tn, fn}; }

Heatmap heatmap_of(const Raster<float>& probs, double mpp_eff) {
  Heatmap hm;
  hm.bbox = Rect{0, 0, probs.width, probs.height};
  hm.mpp_eff = mpp_eff;
  hm.probs = probs;
  hm.coverage = Raster<std::uint16_t>(probs.width, probs.height, 1, 1);
  return hm;
}

/// Sections with a few rectangular blobs of random strength.
std::vector<EvalSection> random_sections(int n, std::mt19937_64& rng) {
  std::vector<EvalSection> out;
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::uniform_int_distribution<int> pos(0, 35), side(1, 12), blobs(0, 3);
  for (int i = 0; i < n; ++i) {
    Raster<float> p(48, 48);
    for (auto& v : p.data) v = 0.1f * u(rng);
    const int count = blobs(rng);
    for (int b = 0; b < count; ++b) {
      const int x0 = pos(rng), y0 = pos(rng), w = side(rng), h = side(rng);
      const float strength = 0.2f + 0.8f * u(rng);
      for (int y = y0; y < std::min(48, y0 + h); ++y)
        for (int x = x0; x < std::min(48, x0 + w); ++x) p.at(x, y) = strength;
    }
    EvalSection s;
    s.section_id = "s" + std::to_string(i);
    s.truth = u(rng) < 0.5f ? SectionLabel::Tumor : SectionLabel::Normal;
    s.heatmap = heatmap_of(p, 4.0);
    out.push_back(std::move(s));
  }
  return out;
}

/// Nested-loop reimplementation: flood-fill every thresholded heatmap, call a
/// section Tumor when any region reaches area_t, score, and keep the best
/// cell under the documented order.
ScoreRow oracle_best(const std::vector<EvalSection>& sections, const std::vector<double>& pred_grid,
                     const std::vector<double>& area_grid, double beta, std::vector<ScoreRow>* all = nullptr) {
  ScoreRow best;
  bool have = false;
  auto sens = [](const ConfusionCounts& c) { return c.tp + c.fn == 0 ? -1.0 : double(c.tp) / (c.tp + c.fn); };
  for (double pt : pred_grid)
    for (double at : area_grid) {
      ConfusionCounts c;
      for (const auto& s : sections) {
        Mask m(s.heatmap.probs.width, s.heatmap.probs.height);
        for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = s.heatmap.probs.data[i] >= pt ? 1 : 0;
        const auto ff = flood_fill(m, true);
        bool tumor = false;
        for (long long a : ff.areas) tumor = tumor || a * s.heatmap.mpp_eff * s.heatmap.mpp_eff >= at;
        const bool truth = s.truth == SectionLabel::Tumor;
        if (truth && tumor) ++c.tp;
        if (!truth && tumor) ++c.fp;
        if (!truth && !tumor) ++c.tn;
        if (truth && !tumor) ++c.fn;
      }
      const double p = c.tp + c.fp == 0 ? 0.0 : double(c.tp) / (c.tp + c.fp);
      const double r = c.tp + c.fn == 0 ? 0.0 : double(c.tp) / (c.tp + c.fn);
      const double b2 = beta * beta;
      const double f = (b2 * p + r) == 0.0 ? 0.0 : (1 + b2) * p * r / (b2 * p + r);
      const ScoreRow row{{pt, at}, c, f};
      if (all) all->push_back(row);
      const auto key = [&](const ScoreRow& x) {
        return std::make_tuple(x.f_beta, sens(x.counts), -x.thresholds.area_t, -x.thresholds.pred_t);
      };
      if (!have || key(row) > key(best)) {
        best = row;
        have = true;
      }
    }
  return best;
}

}  // namespace

TEST_CASE("metrics") {
  const auto m = metrics(counts(9, 2, 8, 1));
  CHECK(*m.sensitivity == doctest::Approx(0.9));
  CHECK(*m.specificity == doctest::Approx(0.8));
  CHECK(*m.accuracy == doctest::Approx(0.85));
  CHECK(*m.precision == doctest::Approx(9.0 / 11.0));
  CHECK(*m.recall == *m.sensitivity);

  const auto no_pos = metrics(counts(0, 3, 5, 0));
  CHECK_FALSE(no_pos.sensitivity.has_value());
  CHECK_FALSE(no_pos.recall.has_value());
  CHECK(*no_pos.precision == 0.0);

  const auto perfect = metrics(counts(4, 0, 6, 0));
  for (auto v : {perfect.accuracy, perfect.sensitivity, perfect.specificity, perfect.precision, perfect.recall})
    CHECK(*v == 1.0);

  CHECK_THROWS_AS(metrics(ConfusionCounts{}), ValidationError);

  ConfusionCounts c;
  c.add(SectionLabel::Tumor, SectionLabel::Tumor);
  c.add(SectionLabel::Tumor, SectionLabel::Normal);
  c.add(SectionLabel::Normal, SectionLabel::Tumor);
  c.add(SectionLabel::Normal, SectionLabel::Normal);
  c.add(SectionLabel::Normal, SectionLabel::Normal);
  CHECK(c == counts(1, 1, 2, 1));
}

TEST_CASE("f_beta") {
  CHECK(f_beta(1.0, 1.0, 1.5) == 1.0);
  CHECK(std::abs(f_beta(0.5, 1.0, 1.5) - 0.7647) <= 1e-4);
  CHECK(f_beta(0.5, 1.0, 1.5) == doctest::Approx(3.25 * 0.5 / (2.25 * 0.5 + 1.0)));
  CHECK(f_beta(0.8, 0.8, 1.0) == doctest::Approx(0.8));
  CHECK(f_beta(0.0, 0.0, 1.5) == 0.0);
  CHECK_THROWS_AS(f_beta(0.5, 0.5, 0.0), ValidationError);
  CHECK(f_beta(counts(0, 0, 5, 0), 1.5) == 0.0);
  CHECK(f_beta(counts(9, 2, 8, 1), 1.0) == doctest::Approx(2 * 9.0 / (2 * 9 + 2 + 1)));

  for (int i = 0; i <= 20; ++i)
    for (int j = 1; j <= 20; ++j) {
      const double p = i / 20.0, r = j / 20.0;
      CHECK(f_beta(p, r, 1.5) >= 0.0);
      CHECK(f_beta(p, r, 1.5) <= 1.0 + 1e-12);
      if (i < 20) CHECK(f_beta(p + 0.05, r, 1.5) >= f_beta(p, r, 1.5));
      if (j < 20) CHECK(f_beta(r, p + 0.05, 1.5) >= f_beta(r, p, 1.5));
    }
}

TEST_CASE("iou") {
  Mask a(4, 4), b(4, 4);
  CHECK(iou(a, b) == 1.0);
  a.at(0, 0) = a.at(1, 0) = 1;
  CHECK(iou(a, a) == 1.0);
  b.at(3, 3) = 1;
  CHECK(iou(a, b) == 0.0);
  b = Mask(4, 4);
  b.at(1, 0) = b.at(2, 0) = 1;
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(iou(a, Mask(4, 5)), ShapeError);
}

TEST_CASE("default grids") {
  const auto pred = default_pred_grid();
  const auto area = default_area_grid();
  CHECK(pred.size() == 19);
  CHECK(area.size() == 11);
  auto contains = [](const std::vector<double>& g, double v) {
    return std::any_of(g.begin(), g.end(), [&](double x) { return std::abs(x - v) < 1e-12; });
  };
  for (double v : {0.45, 0.60, 0.65}) CHECK(contains(pred, v));
  for (double v : {2560.0, 3840.0, 5120.0, 8960.0}) CHECK(contains(area, v));
  CHECK(pred.front() == doctest::Approx(0.05));
  CHECK(pred.back() == doctest::Approx(0.95));
  CHECK(area.front() == 0.0);
  CHECK(area.back() == 12800.0);
}

TEST_CASE("grid search") {
  std::mt19937_64 rng(51);
  SUBCASE("1x1 grid returns that pair") {
    const auto sections = random_sections(6, rng);
    const auto r = grid_search(sections, {0.35}, {320.0}, 1.5);
    CHECK(r.best == ThresholdPair{0.35, 320.0});
    CHECK(r.table.size() == 1);
  }
  SUBCASE("perfect heatmaps reach F = 1") {
    auto sections = random_sections(10, rng);
    for (auto& s : sections) {
      auto& p = s.heatmap.probs;
      std::fill(p.data.begin(), p.data.end(), 0.0f);
      if (s.truth == SectionLabel::Tumor)
        for (int y = 10; y < 30; ++y)
          for (int x = 10; x < 30; ++x) p.at(x, y) = 0.95f;
    }
    const auto r = grid_search(sections, default_pred_grid(), default_area_grid(), 1.5);
    CHECK(r.best_row.f_beta == 1.0);
  }
  SUBCASE("5x5 grid on 20 sections equals the nested-loop oracle") {
    const std::vector<double> pred = {0.1, 0.3, 0.5, 0.7, 0.9};
    const std::vector<double> area = {0.0, 640.0, 1280.0, 3840.0, 8000.0};
    for (int trial = 0; trial < 10; ++trial) {
      const auto sections = random_sections(20, rng);
      std::vector<ScoreRow> table;
      const auto expected = oracle_best(sections, pred, area, 1.5, &table);
      const auto r = grid_search(sections, pred, area, 1.5);
      CHECK(r.best_row == expected);
      CHECK(r.best == expected.thresholds);
      REQUIRE(r.table.size() == table.size());
      for (std::size_t i = 0; i < table.size(); ++i) {
        CHECK(r.table[i].thresholds == table[i].thresholds);
        CHECK(r.table[i].counts == table[i].counts);
        CHECK(r.table[i].f_beta == doctest::Approx(table[i].f_beta).epsilon(1e-12));
      }
      // Cached heatmaps give the same answer on a second pass.
      CHECK(grid_search(sections, pred, area, 1.5).best_row == r.best_row);
    }
  }
  SUBCASE("result is invariant under grid permutation") {
    std::vector<double> pred = default_pred_grid(), area = default_area_grid();
    for (int trial = 0; trial < 10; ++trial) {
      const auto sections = random_sections(12, rng);
      const auto base = grid_search(sections, pred, area, 1.5);
      std::shuffle(pred.begin(), pred.end(), rng);
      std::shuffle(area.begin(), area.end(), rng);
      const auto shuffled = grid_search(sections, pred, area, 1.5);
      CHECK(shuffled.best == base.best);
      CHECK(shuffled.best_row == base.best_row);
    }
  }
  SUBCASE("ties prefer sensitivity, then lower area, then lower pred_t") {
    // Every cell scores the same on an all-zero heatmap: no positives predicted.
    auto sections = random_sections(4, rng);
    for (auto& s : sections) std::fill(s.heatmap.probs.data.begin(), s.heatmap.probs.data.end(), 0.0f);
    const auto r = grid_search(sections, {0.9, 0.4, 0.6}, {5000.0, 100.0}, 1.5);
    CHECK(r.best == ThresholdPair{0.4, 100.0});
  }
}

TEST_CASE("score table csv") {
  const auto dir = histoseg::testing::temp_dir("score_table");
  std::mt19937_64 rng(52);
  const auto r = grid_search(random_sections(5, rng), {0.5, 0.7}, {0.0, 1280.0}, 1.5);
  write_score_table_csv(r.table, dir / "t.csv");
  std::ifstream in(dir / "t.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "pred_t,area_t,tp,fp,tn,fn,f_beta");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
}
