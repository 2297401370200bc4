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

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "histoseg/inference.hpp"
#include "histoseg/raster.hpp"
#include "histoseg/slide_io.hpp"

namespace histoseg {

/// Section-level counts with Tumor as the positive class.
struct ConfusionCounts {
  long long tp = 0;
  long long fp = 0;
  long long tn = 0;
  long long fn = 0;

  long long total() const { return tp + fp + tn + fn; }
  void add(SectionLabel truth, SectionLabel predicted);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Ratios with a zero denominator are absent.
struct Metrics {
  std::optional<double> accuracy;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> precision;
  std::optional<double> recall;
};

/// Throws ValidationError when no sections were counted.
Metrics metrics(const ConfusionCounts& c);

/// (1 + b^2) p r / (b^2 p + r); 0 when p = r = 0.
double f_beta(double precision, double recall, double beta);

/// F_beta of a confusion table; absent precision or recall count as 0.
double f_beta(const ConfusionCounts& c, double beta);

/// |A and B| / |A or B| over nonzero pixels; 1.0 when both are empty.
double iou(const Mask& pred, const Mask& target);

struct ThresholdPair {
  double pred_t = 0.5;
  double area_t = 0.0;  // square microns
  friend bool operator==(const ThresholdPair&, const ThresholdPair&) = default;
};

struct EvalSection {
  std::string section_id;
  SectionLabel truth = SectionLabel::Normal;
  Heatmap heatmap;
};

struct ScoreRow {
  ThresholdPair thresholds;
  ConfusionCounts counts;
  double f_beta = 0.0;
  friend bool operator==(const ScoreRow&, const ScoreRow&) = default;
};

struct GridResult {
  ThresholdPair best;
  ScoreRow best_row;
  std::vector<ScoreRow> table;  // pred_grid-major, grid order
};

/// {0.05, 0.10, ..., 0.95}.
std::vector<double> default_pred_grid();
/// {1280 * j : j = 0..10} square microns.
std::vector<double> default_area_grid();

/// Scores every (pred_t, area_t) cell on the given heatmaps and returns the
/// argmax of F_beta; ties go to higher sensitivity, then lower area_t, then
/// lower pred_t.
GridResult grid_search(const std::vector<EvalSection>& sections, const std::vector<double>& pred_grid,
                       const std::vector<double>& area_grid, double beta);

/// `pred_t,area_t,tp,fp,tn,fn,f_beta` with a header row.
void write_score_table_csv(const std::vector<ScoreRow>& table, const std::filesystem::path& file);

}  // namespace histoseg
