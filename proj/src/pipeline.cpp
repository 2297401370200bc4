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

#include "histoseg/pipeline.hpp"

#include "histoseg/errors.hpp"
#include "histoseg/inference.hpp"

namespace histoseg {

std::vector<SlideBundle> load_bundles(const std::vector<std::filesystem::path>& dirs) {
  std::vector<SlideBundle> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) out.push_back(load_slide_bundle(d));
  return out;
}

TrainingData build_training_data(const std::vector<SlideBundle>& bundles, const RunConfig& cfg) {
  const int p = cfg.model.patch_size;
  const auto threshold = static_cast<std::uint8_t>(cfg.pipeline.background_threshold);
  TrainingData data;
  std::vector<PatchSpec> specs;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    data.slides.push_back(prepare_slide(bundles[i], cfg.pipeline.mag_divisor, threshold));
    auto grid = extract_patch_grid(data.slides.back(), p, cfg.pipeline.stride_for(p), static_cast<int>(i));
    specs.insert(specs.end(), grid.begin(), grid.end());
  }
  if (specs.empty()) throw ValidationError("data", "no training patches touch tissue");
  data.unbalance_before = pixel_unbalance(specs, std::vector<int>(specs.size(), 1));
  data.plan = build_resample_plan(std::move(specs), default_resample_rules(), cfg.train.seed);
  data.unbalance_after = pixel_unbalance(data.plan);
  return data;
}

std::vector<PatchPixels> build_validation_patches(const std::vector<SlideBundle>& bundles, const RunConfig& cfg) {
  const int p = cfg.model.patch_size;
  std::vector<PatchPixels> out;
  for (const auto& b : bundles) {
    const auto slide =
        prepare_slide(b, cfg.pipeline.mag_divisor, static_cast<std::uint8_t>(cfg.pipeline.background_threshold));
    for (const auto& spec : extract_patch_grid(slide, p, cfg.pipeline.stride_for(p))) out.push_back(patch_pixels(slide, spec));
  }
  return out;
}

std::vector<EvalSection> compute_eval_sections(SegModel<float>& model, const std::vector<SlideBundle>& bundles,
                                               const PipelineConfig& cfg, std::optional<int> truncate_at) {
  const int overlap = cfg.overlap_for(model.config().patch_size);
  std::vector<EvalSection> out;
  for (const auto& b : bundles) {
    const auto slide = prepare_slide(b, cfg.mag_divisor, static_cast<std::uint8_t>(cfg.background_threshold));
    for (const auto& s : b.sections) {
      if (!s.truth_label) continue;
      EvalSection e;
      e.section_id = s.section_id;
      e.truth = *s.truth_label;
      e.heatmap = predict_heatmap(model, slide, scale_bbox(s.bbox, cfg.mag_divisor, slide.image.width,
                                                           slide.image.height),
                                  overlap, truncate_at);
      out.push_back(std::move(e));
    }
  }
  return out;
}

Selection select_thresholds(const std::vector<std::filesystem::path>& checkpoints,
                            const std::vector<SlideBundle>& val_bundles, const PipelineConfig& cfg,
                            const std::vector<double>& pred_grid, const std::vector<double>& area_grid) {
  if (checkpoints.empty()) throw ValidationError("checkpoints", "empty");
  std::optional<Selection> best;
  for (const auto& ckpt : checkpoints) {
    auto model = load_model(ckpt);
    const auto sections = compute_eval_sections(model, val_bundles, cfg);
    if (sections.empty()) throw ValidationError("val", "no labeled sections");
    auto grid = grid_search(sections, pred_grid, area_grid, cfg.beta);
    if (!best || grid.best_row.f_beta > best->grid.best_row.f_beta) best = Selection{ckpt, std::move(grid)};
  }
  return *best;
}

std::vector<SectionLabel> classify_sections(const std::vector<EvalSection>& sections, const ThresholdPair& t) {
  std::vector<SectionLabel> out;
  for (const auto& s : sections) out.push_back(classify_section(binarize_and_label(s.heatmap, t.pred_t), t.area_t).label);
  return out;
}

}  // namespace histoseg
