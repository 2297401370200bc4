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

#include "histoseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>

#include <json.hpp>

#include "histoseg/errors.hpp"

namespace histoseg {

void SynthConfig::validate() const {
  if (width < 128 || height < 128) throw ConfigError("slide dimensions must be >= 128");
  if (!(mpp > 0.0)) throw ConfigError("mpp must be > 0");
  if (sections_per_slide < 1) throw ConfigError("sections_per_slide must be >= 1");
  if (!(prevalence >= 0.0 && prevalence <= 1.0)) throw ConfigError("prevalence must be in [0,1]");
  if (!(section_radius_min > 0.0 && section_radius_min <= section_radius_max && section_radius_max < 0.5))
    throw ConfigError("section radius range must satisfy 0 < min <= max < 0.5");
  if (tumor_blobs_min < 1 || tumor_blobs_min > tumor_blobs_max) throw ConfigError("invalid tumor blob count range");
  if (blob_radius_min < 4 || blob_radius_min > blob_radius_max) throw ConfigError("invalid blob radius range");
  if (!(stipple_density >= 0.0 && stipple_density <= 1.0)) throw ConfigError("stipple_density must be in [0,1]");
  if (!(distractor_probability >= 0.0 && distractor_probability <= 1.0))
    throw ConfigError("distractor_probability must be in [0,1]");
  if (!(stroma_scale >= 1.0)) throw ConfigError("stroma_scale must be >= 1");
  if (noise_amplitude < 0) throw ConfigError("noise_amplitude must be >= 0");
  if (min_section_area < 1) throw ConfigError("min_section_area must be >= 1");
}

namespace {

struct Blob {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
  Polygon polygon;
};

struct Ellipse {
  double cx, cy, a, b;
  bool contains(double x, double y, double margin = 0.0) const {
    const double dx = (x - cx) / (a - margin), dy = (y - cy) / (b - margin);
    return dx * dx + dy * dy <= 1.0;
  }
};

Polygon star_polygon(double cx, double cy, double radius, double scale, const std::vector<double>& radii,
                     const std::vector<double>& angles) {
  Polygon p;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double r = radius * radii[i] * scale;
    p.push_back({static_cast<int>(std::lround(cx + r * std::cos(angles[i]))),
                 static_cast<int>(std::lround(cy + r * std::sin(angles[i])))});
  }
  return p;
}

class SlidePainter {
 public:
  SlidePainter(const SynthConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), rng_(rng), image_(cfg.width, cfg.height, 3) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  void fill_background() {
    for (int y = 0; y < cfg_.height; ++y)
      for (int x = 0; x < cfg_.width; ++x) set(x, y, cfg_.background, 2);
  }

  void paint_ellipse(const Ellipse& e) {
    for (int y = 0; y < cfg_.height; ++y)
      for (int x = 0; x < cfg_.width; ++x)
        if (e.contains(x + 0.5, y + 0.5)) set(x, y, cfg_.tissue, cfg_.noise_amplitude);
  }

  void paint_mask(const Raster<std::uint8_t>& bits, std::uint8_t bit, const Rgb& color) {
    for (int y = 0; y < cfg_.height; ++y)
      for (int x = 0; x < cfg_.width; ++x)
        if (bits.at(x, y) & bit) set(x, y, color, cfg_.noise_amplitude);
  }

  /// Dark nuclei on 2x2 blocks aligned to even coordinates.
  void stipple(const Raster<std::uint8_t>& bits, std::uint8_t bit) {
    for (int by = 0; by < cfg_.height; by += 2)
      for (int bx = 0; bx < cfg_.width; bx += 2) {
        const bool dark = uniform(0.0, 1.0) < cfg_.stipple_density;
        if (!dark) continue;
        for (int y = by; y < std::min(by + 2, cfg_.height); ++y)
          for (int x = bx; x < std::min(bx + 2, cfg_.width); ++x)
            if (bits.at(x, y) & bit) set(x, y, cfg_.nuclei, cfg_.noise_amplitude);
      }
  }

  RgbImage take() { return std::move(image_); }

 private:
  void set(int x, int y, const Rgb& color, int noise) {
    for (int c = 0; c < 3; ++c) {
      const int jitter = noise > 0 ? uniform_int(-noise, noise) : 0;
      image_.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(color[static_cast<std::size_t>(c)] + jitter, 0, 255));
    }
  }

  const SynthConfig& cfg_;
  std::mt19937_64& rng_;
  RgbImage image_;
};

bool overlaps(const std::vector<Blob>& placed, double cx, double cy, double reach) {
  for (const auto& b : placed)
    if (std::hypot(b.cx - cx, b.cy - cy) < reach + b.radius + 4.0) return true;
  return false;
}

}  // namespace

std::uint64_t slide_seed(std::uint64_t dataset_seed, int index) {
  std::uint64_t z = dataset_seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SlideBundle generate_slide(const SynthConfig& cfg, const std::string& slide_id) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  SlidePainter painter(cfg, rng);
  painter.fill_background();

  const int n = cfg.sections_per_slide;
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  const double cell_w = static_cast<double>(cfg.width) / cols;
  const double cell_h = static_cast<double>(cfg.height) / rows;
  const double cell = std::min(cell_w, cell_h);

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const int n_tumor = static_cast<int>(std::lround(cfg.prevalence * n));
  std::vector<bool> is_tumor(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n_tumor; ++i) is_tumor[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  std::vector<Ellipse> ellipses;
  for (int i = 0; i < n; ++i) {
    const double cx = (i % cols + 0.5) * cell_w, cy = (i / cols + 0.5) * cell_h;
    ellipses.push_back({cx, cy, cell * painter.uniform(cfg.section_radius_min, cfg.section_radius_max),
                        cell * painter.uniform(cfg.section_radius_min, cfg.section_radius_max)});
    painter.paint_ellipse(ellipses.back());
  }

  SlideBundle bundle;
  bundle.slide_id = slide_id;
  bundle.mpp = cfg.mpp;
  bundle.magnification = cfg.magnification;

  auto make_blob = [&](const Ellipse& e, const std::vector<Blob>& placed, double reach_scale) -> std::optional<Blob> {
    for (int attempt = 0; attempt < 200; ++attempt) {
      Blob b;
      b.radius = painter.uniform(cfg.blob_radius_min, cfg.blob_radius_max);
      const double margin = b.radius * reach_scale + 2.0;
      if (margin >= std::min(e.a, e.b)) continue;
      const double angle = painter.uniform(0.0, 2.0 * std::numbers::pi);
      const double dist = std::sqrt(painter.uniform(0.0, 1.0));
      b.cx = e.cx + dist * (e.a - margin) * std::cos(angle);
      b.cy = e.cy + dist * (e.b - margin) * std::sin(angle);
      if (overlaps(placed, b.cx, b.cy, b.radius * reach_scale)) continue;
      const int m = painter.uniform_int(10, 16);
      std::vector<double> radii, angles;
      const double phase = painter.uniform(0.0, 2.0 * std::numbers::pi);
      for (int v = 0; v < m; ++v) {
        radii.push_back(painter.uniform(0.7, 1.0));
        angles.push_back(phase + 2.0 * std::numbers::pi * (v + painter.uniform(-0.3, 0.3)) / m);
      }
      b.polygon = star_polygon(b.cx, b.cy, b.radius, 1.0, radii, angles);
      auto halo = star_polygon(b.cx, b.cy, b.radius, reach_scale, radii, angles);
      bool inside = polygon_is_simple(b.polygon) && polygon_is_simple(halo);
      for (const auto& p : halo) inside = inside && e.contains(p.x, p.y, 1.0);
      if (!inside) continue;
      if (reach_scale > 1.0) bundle.annotations.push_back({AnnotationClass::Stroma, halo});
      return b;
    }
    return std::nullopt;
  };

  std::vector<Blob> tumors, distractors;
  std::vector<int> tumor_section;
  for (int i = 0; i < n; ++i) {
    std::vector<Blob> placed;
    if (is_tumor[static_cast<std::size_t>(i)]) {
      const int count = painter.uniform_int(cfg.tumor_blobs_min, cfg.tumor_blobs_max);
      for (int c = 0; c < count; ++c) {
        auto b = make_blob(ellipses[static_cast<std::size_t>(i)], placed, cfg.stroma_scale);
        if (!b) {
          if (c == 0) throw Error("could not place a tumor blob; enlarge the sections or shrink the blobs");
          break;
        }
        placed.push_back(*b);
        tumors.push_back(*b);
        tumor_section.push_back(i);
        bundle.annotations.push_back({AnnotationClass::Tumornest, b->polygon});
      }
    }
    if (painter.uniform(0.0, 1.0) < cfg.distractor_probability) {
      if (auto b = make_blob(ellipses[static_cast<std::size_t>(i)], placed, 1.0)) {
        placed.push_back(*b);
        distractors.push_back(*b);
        bundle.annotations.push_back({AnnotationClass::Normal, b->polygon});
      }
    }
  }

  const Rect full{0, 0, cfg.width, cfg.height};
  const auto bits = rasterize_annotations(bundle.annotations, full, 1.0).bits;
  painter.paint_mask(bits, AnnotationRaster::kStroma, cfg.stroma);
  // Distractors carry the mean tumor color without its texture.
  Rgb mean_tumor{};
  for (std::size_t c = 0; c < 3; ++c)
    mean_tumor[c] = static_cast<int>(
        std::lround(cfg.tumor[c] * (1.0 - cfg.stipple_density) + cfg.nuclei[c] * cfg.stipple_density));
  painter.paint_mask(bits, AnnotationRaster::kNormal, mean_tumor);
  painter.paint_mask(bits, AnnotationRaster::kTumor, cfg.tumor);
  painter.stipple(bits, AnnotationRaster::kTumor);
  bundle.image = painter.take();

  auto sections = detect_sections(detect_tissue(bundle.image), cfg.min_section_area);
  if (static_cast<int>(sections.size()) != n)
    throw Error("generated " + std::to_string(sections.size()) + " sections instead of " + std::to_string(n));
  for (std::size_t s = 0; s < sections.size(); ++s) {
    auto& rec = sections[s];
    rec.section_id = slide_id + "_s" + std::to_string(s);
    bool tumor = false;
    for (const auto& b : tumors) tumor = tumor || rec.bbox.contains(static_cast<int>(b.cx), static_cast<int>(b.cy));
    rec.truth_label = tumor ? SectionLabel::Tumor : SectionLabel::Normal;
  }
  bundle.sections = std::move(sections);
  validate(bundle);
  return bundle;
}

std::vector<std::filesystem::path> generate_dataset(const SynthConfig& cfg, int count,
                                                    const std::filesystem::path& out) {
  if (count < 0) throw ValidationError("count", "must be >= 0");
  cfg.validate();
  std::filesystem::create_directories(out);
  std::vector<std::filesystem::path> dirs;
  nlohmann::json manifest = {{"seed", cfg.seed}, {"slides", nlohmann::json::array()}};
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "slide_%03d", i);
    SynthConfig slide_cfg = cfg;
    slide_cfg.seed = slide_seed(cfg.seed, i);
    const auto bundle = generate_slide(slide_cfg, name);
    const auto dir = out / name;
    save_slide_bundle(bundle, dir);
    dirs.push_back(dir);
    nlohmann::json sections = nlohmann::json::array();
    for (const auto& s : bundle.sections)
      sections.push_back({{"section_id", s.section_id}, {"truth_label", std::string(to_string(*s.truth_label))}});
    manifest["slides"].push_back({{"slide_id", bundle.slide_id}, {"dir", name}, {"sections", sections}});
  }
  std::ofstream f(out / "manifest.json");
  if (!f) throw Error("cannot write " + (out / "manifest.json").string());
  f << manifest.dump(2) << '\n';
  return dirs;
}

std::vector<std::filesystem::path> list_bundle_dirs(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw LoadError(root.string(), "not a directory");
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "meta.json")) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace histoseg
