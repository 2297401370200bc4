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

#include "histoseg/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "histoseg/errors.hpp"
#include "histoseg/png_io.hpp"
#include "histoseg/tiling.hpp"

namespace histoseg {

std::vector<TileOrigin> tile_positions(const Rect& bbox, int patch_size, int min_overlap) {
  if (patch_size <= 0) throw ValidationError("patch_size", "must be positive");
  if (2 * min_overlap < patch_size || min_overlap >= patch_size)
    throw ValidationError("min_overlap", "must satisfy P/2 <= min_overlap < P");
  if (bbox.width() <= 0 || bbox.height() <= 0) throw ValidationError("bbox", "empty");
  const int stride = patch_size - min_overlap;
  std::vector<TileOrigin> out;
  for (int y : axis_positions(bbox.height(), patch_size, stride))
    for (int x : axis_positions(bbox.width(), patch_size, stride)) out.push_back({bbox.x0 + x, bbox.y0 + y});
  return out;
}

Rect scale_bbox(const Rect& native, int mag_divisor, int width, int height) {
  if (mag_divisor < 1) throw ValidationError("mag_divisor", "must be >= 1");
  Rect r{native.x0 / mag_divisor, native.y0 / mag_divisor, (native.x1 + mag_divisor - 1) / mag_divisor,
         (native.y1 + mag_divisor - 1) / mag_divisor};
  r.x0 = std::clamp(r.x0, 0, width);
  r.y0 = std::clamp(r.y0, 0, height);
  r.x1 = std::clamp(r.x1, r.x0, width);
  r.y1 = std::clamp(r.y1, r.y0, height);
  return r;
}

Heatmap predict_heatmap(SegModel<float>& model, const SlideRaster& slide, const Rect& bbox, int min_overlap,
                        std::optional<int> truncate_at, int batch_size) {
  const int p = model.config().patch_size;
  const auto origins = tile_positions(bbox, p, min_overlap);
  const int w = bbox.width(), h = bbox.height();
  std::vector<double> sums(static_cast<std::size_t>(w) * h, 0.0);
  Heatmap hm;
  hm.bbox = bbox;
  hm.mpp_eff = slide.mpp_eff;
  hm.coverage = Raster<std::uint16_t>(w, h);

  nn::NoGradGuard guard;
  for (std::size_t start = 0; start < origins.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(origins.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<RgbImage> crops;
    for (std::size_t i = start; i < end; ++i)
      crops.push_back(crop_reflect(slide.image, Rect{origins[i].x, origins[i].y, origins[i].x + p, origins[i].y + p}));
    std::vector<const RgbImage*> ptrs;
    for (const auto& c : crops) ptrs.push_back(&c);
    const auto out = model.forward(nn::Var<float>(images_to_tensor(ptrs)), NormMode::Eval, truncate_at);
    const auto& phi = out.final.value();
    for (std::size_t i = start; i < end; ++i) {
      const int n = static_cast<int>(i - start);
      for (int py = 0; py < p; ++py) {
        const int y = origins[i].y + py - bbox.y0;
        if (y < 0 || y >= h) continue;
        for (int px = 0; px < p; ++px) {
          const int x = origins[i].x + px - bbox.x0;
          if (x < 0 || x >= w) continue;
          sums[static_cast<std::size_t>(y) * w + x] += phi.at(n, kTumorChannel, py, px);
          ++hm.coverage.at(x, y);
        }
      }
    }
  }
  hm.probs = Raster<float>(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      hm.probs.at(x, y) = static_cast<float>(sums[static_cast<std::size_t>(y) * w + x] / hm.coverage.at(x, y));
  return hm;
}

RegionLabeling binarize_and_label(const Heatmap& hm, double pred_t) {
  if (!(pred_t > 0.0 && pred_t < 1.0)) throw ValidationError("pred_t", "must be in (0, 1)");
  Mask fg(hm.probs.width, hm.probs.height);
  for (std::size_t i = 0; i < fg.data.size(); ++i) fg.data[i] = hm.probs.data[i] >= pred_t ? 1 : 0;
  auto labels = label_components(fg, Connectivity::Eight);
  RegionLabeling out;
  out.mpp_eff = hm.mpp_eff;
  const double px_area = hm.mpp_eff * hm.mpp_eff;
  for (auto& c : labels.components) {
    Region r;
    r.area_px = c.area;
    r.area_um2 = static_cast<double>(c.area) * px_area;
    r.bbox = c.bbox;
    r.runs = std::move(c.runs);
    out.regions.push_back(std::move(r));
  }
  return out;
}

SectionDecision classify_section(const RegionLabeling& labeling, double area_t) {
  SectionDecision d;
  for (std::size_t i = 0; i < labeling.regions.size(); ++i)
    if (labeling.regions[i].area_um2 >= area_t) d.surviving.push_back(i);
  d.label = d.surviving.empty() ? SectionLabel::Normal : SectionLabel::Tumor;
  return d;
}

namespace {

Raster<std::uint8_t> quantize(const Heatmap& hm) {
  Raster<std::uint8_t> gray(hm.probs.width, hm.probs.height);
  for (std::size_t i = 0; i < gray.data.size(); ++i)
    gray.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(hm.probs.data[i], 0.0f, 1.0f) * 255.0f));
  return gray;
}

}  // namespace

std::vector<std::uint8_t> encode_heatmap_png(const Heatmap& hm) { return encode_png(quantize(hm)); }

void write_heatmap(const std::filesystem::path& dir, const std::string& section_id, const Heatmap& hm,
                   const std::string& model_id, std::optional<int> truncate_at) {
  std::filesystem::create_directories(dir);
  write_png(dir / ("heatmap_" + section_id + ".png"), quantize(hm));
  nlohmann::json j = {{"section_id", section_id},
                      {"mpp_eff", hm.mpp_eff},
                      {"bbox", {hm.bbox.x0, hm.bbox.y0, hm.bbox.x1, hm.bbox.y1}},
                      {"model", model_id},
                      {"truncate", truncate_at ? nlohmann::json(*truncate_at) : nlohmann::json(nullptr)}};
  std::ofstream out(dir / ("heatmap_" + section_id + ".json"));
  if (!out) throw Error("cannot write heatmap sidecar in " + dir.string());
  out << j.dump(2) << '\n';
}

Heatmap read_heatmap(const std::filesystem::path& dir, const std::string& section_id) {
  const auto json_path = dir / ("heatmap_" + section_id + ".json");
  std::ifstream in(json_path);
  if (!in) throw LoadError(json_path.string(), "cannot open");
  Heatmap hm;
  try {
    const auto j = nlohmann::json::parse(in);
    hm.mpp_eff = j.at("mpp_eff").get<double>();
    const auto b = j.at("bbox");
    hm.bbox = Rect{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(json_path.string(), e.what());
  }
  const auto gray = read_png_gray(dir / ("heatmap_" + section_id + ".png"));
  if (gray.width != hm.bbox.width() || gray.height != hm.bbox.height())
    throw LoadError(json_path.string(), "bbox does not match the heatmap image");
  hm.probs = Raster<float>(gray.width, gray.height);
  for (std::size_t i = 0; i < gray.data.size(); ++i) hm.probs.data[i] = gray.data[i] / 255.0f;
  hm.coverage = Raster<std::uint16_t>(gray.width, gray.height, 1, 1);
  return hm;
}

}  // namespace histoseg
