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

#include "histoseg/components.hpp"
#include "histoseg/raster.hpp"
#include "histoseg/sampler.hpp"
#include "histoseg/segmodel.hpp"
#include "histoseg/slide_io.hpp"

namespace histoseg {

struct TileOrigin {
  int x = 0;
  int y = 0;
  friend bool operator==(const TileOrigin&, const TileOrigin&) = default;
};

/// Origins of P x P tiles covering `bbox` on a stride (P - min_overlap) grid
/// with an edge-aligned last tile per axis. An axis no longer than P gets a
/// single origin at the bbox edge. Throws ValidationError unless
/// P/2 <= min_overlap < P.
std::vector<TileOrigin> tile_positions(const Rect& bbox, int patch_size, int min_overlap);

struct Heatmap {
  Rect bbox;  // at inference scale
  double mpp_eff = 1.0;
  Raster<float> probs;
  Raster<std::uint16_t> coverage;
};

/// Native section bbox mapped onto the slide at 1/mag_divisor, clamped.
Rect scale_bbox(const Rect& native, int mag_divisor, int width, int height);

/// Tumor probability per pixel of `bbox` as the mean over covering tiles.
/// With `truncate_at` only decoder blocks 0..l run.
Heatmap predict_heatmap(SegModel<float>& model, const SlideRaster& slide, const Rect& bbox, int min_overlap,
                        std::optional<int> truncate_at = std::nullopt, int batch_size = 16);

struct Region {
  long long area_px = 0;
  double area_um2 = 0.0;
  Rect bbox;
  std::vector<Run> runs;
};

struct RegionLabeling {
  double mpp_eff = 1.0;
  std::vector<Region> regions;
};

/// Foreground iff prob >= pred_t; 8-connected regions.
RegionLabeling binarize_and_label(const Heatmap& hm, double pred_t);

struct SectionDecision {
  SectionLabel label = SectionLabel::Normal;
  std::vector<std::size_t> surviving;  // indices into the labeling
};

/// Regions with area_um2 >= area_t survive; Tumor iff any survives.
SectionDecision classify_section(const RegionLabeling& labeling, double area_t);

/// Writes `heatmap_<id>.png` (round(prob * 255)) and `heatmap_<id>.json`.
void write_heatmap(const std::filesystem::path& dir, const std::string& section_id, const Heatmap& hm,
                   const std::string& model_id, std::optional<int> truncate_at);
/// Reads a heatmap pair back; probabilities are the PNG levels / 255.
Heatmap read_heatmap(const std::filesystem::path& dir, const std::string& section_id);

/// Grayscale PNG bytes of a heatmap.
std::vector<std::uint8_t> encode_heatmap_png(const Heatmap& hm);

}  // namespace histoseg
