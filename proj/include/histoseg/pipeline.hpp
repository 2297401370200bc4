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

#include "histoseg/evaluation.hpp"
#include "histoseg/run_config.hpp"
#include "histoseg/sampler.hpp"
#include "histoseg/slide_io.hpp"

namespace histoseg {

std::vector<SlideBundle> load_bundles(const std::vector<std::filesystem::path>& dirs);

/// Training slides at sampling magnification, their patch grid and the
/// balancing plan over it.
struct TrainingData {
  std::vector<SlideRaster> slides;
  ResamplePlan plan;
  double unbalance_before = 0.0;
  double unbalance_after = 0.0;
};

TrainingData build_training_data(const std::vector<SlideBundle>& bundles, const RunConfig& cfg);

/// Grid patches of the validation slides, neither re-sampled nor augmented.
std::vector<PatchPixels> build_validation_patches(const std::vector<SlideBundle>& bundles, const RunConfig& cfg);

/// Heatmap of every labeled section of the bundles.
std::vector<EvalSection> compute_eval_sections(SegModel<float>& model, const std::vector<SlideBundle>& bundles,
                                               const PipelineConfig& cfg, std::optional<int> truncate_at = std::nullopt);

struct Selection {
  std::filesystem::path checkpoint;
  GridResult grid;
};

/// Grid search on each checkpoint; the best F_beta wins, then the earlier
/// candidate.
Selection select_thresholds(const std::vector<std::filesystem::path>& checkpoints,
                            const std::vector<SlideBundle>& val_bundles, const PipelineConfig& cfg,
                            const std::vector<double>& pred_grid, const std::vector<double>& area_grid);

/// Predicted label of every section under fixed thresholds.
std::vector<SectionLabel> classify_sections(const std::vector<EvalSection>& sections, const ThresholdPair& t);

}  // namespace histoseg
