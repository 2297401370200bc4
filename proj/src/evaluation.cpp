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

#include "histoseg/evaluation.hpp"

#include <fstream>

#include "histoseg/errors.hpp"

namespace histoseg {

void ConfusionCounts::add(SectionLabel truth, SectionLabel predicted) {
  const bool t = truth == SectionLabel::Tumor;
  const bool p = predicted == SectionLabel::Tumor;
  if (t && p) ++tp;
  else if (t) ++fn;
  else if (p) ++fp;
  else ++tn;
}

namespace {

std::optional<double> ratio(long long num, long long den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

double sensitivity_key(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn).value_or(-1.0); }

}  // namespace

Metrics metrics(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.tn < 0 || c.fn < 0) throw ValidationError("counts", "negative count");
  if (c.total() == 0) throw ValidationError("counts", "no sections");
  Metrics m;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = m.sensitivity;
  return m;
}

double f_beta(double precision, double recall, double beta) {
  if (!(beta > 0.0)) throw ValidationError("beta", "must be > 0");
  const double b2 = beta * beta;
  const double den = b2 * precision + recall;
  if (den == 0.0) return 0.0;
  return (1.0 + b2) * precision * recall / den;
}

double f_beta(const ConfusionCounts& c, double beta) {
  return f_beta(ratio(c.tp, c.tp + c.fp).value_or(0.0), ratio(c.tp, c.tp + c.fn).value_or(0.0), beta);
}

double iou(const Mask& pred, const Mask& target) {
  if (pred.width != target.width || pred.height != target.height || pred.channels != target.channels)
    throw ShapeError("iou: mask shapes differ");
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] != 0, b = target.data[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> default_pred_grid() {
  std::vector<double> g;
  for (int j = 1; j <= 19; ++j) g.push_back(j / 20.0);
  return g;
}

std::vector<double> default_area_grid() {
  std::vector<double> g;
  for (int j = 0; j <= 10; ++j) g.push_back(1280.0 * j);
  return g;
}

GridResult grid_search(const std::vector<EvalSection>& sections, const std::vector<double>& pred_grid,
                       const std::vector<double>& area_grid, double beta) {
  if (pred_grid.empty() || area_grid.empty()) throw ValidationError("grid", "empty");
  if (!(beta > 0.0)) throw ValidationError("beta", "must be > 0");
  GridResult result;
  bool have_best = false;
  for (double pred_t : pred_grid) {
    // Largest region per section; a section is Tumor iff it reaches area_t.
    std::vector<std::optional<double>> largest;
    largest.reserve(sections.size());
    for (const auto& s : sections) {
      const auto labeling = binarize_and_label(s.heatmap, pred_t);
      std::optional<double> best;
      for (const auto& r : labeling.regions)
        if (!best || r.area_um2 > *best) best = r.area_um2;
      largest.push_back(best);
    }
    for (double area_t : area_grid) {
      ScoreRow row;
      row.thresholds = {pred_t, area_t};
      for (std::size_t i = 0; i < sections.size(); ++i) {
        const bool tumor = largest[i] && *largest[i] >= area_t;
        row.counts.add(sections[i].truth, tumor ? SectionLabel::Tumor : SectionLabel::Normal);
      }
      row.f_beta = f_beta(row.counts, beta);
      result.table.push_back(row);

      bool better = !have_best;
      if (have_best) {
        const auto& b = result.best_row;
        if (row.f_beta != b.f_beta) better = row.f_beta > b.f_beta;
        else if (sensitivity_key(row.counts) != sensitivity_key(b.counts))
          better = sensitivity_key(row.counts) > sensitivity_key(b.counts);
        else if (area_t != b.thresholds.area_t) better = area_t < b.thresholds.area_t;
        else better = pred_t < b.thresholds.pred_t;
      }
      if (better) {
        result.best_row = row;
        have_best = true;
      }
    }
  }
  result.best = result.best_row.thresholds;
  return result;
}

void write_score_table_csv(const std::vector<ScoreRow>& table, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out.precision(10);
  out << "pred_t,area_t,tp,fp,tn,fn,f_beta\n";
  for (const auto& r : table)
    out << r.thresholds.pred_t << ',' << r.thresholds.area_t << ',' << r.counts.tp << ',' << r.counts.fp << ','
        << r.counts.tn << ',' << r.counts.fn << ',' << r.f_beta << '\n';
}

}  // namespace histoseg
