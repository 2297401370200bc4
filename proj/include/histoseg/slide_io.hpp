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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "histoseg/raster.hpp"

namespace histoseg {

enum class AnnotationClass { Tumornest, Stroma, Normal };
enum class SectionLabel { Tumor, Normal };

std::string_view to_string(AnnotationClass cls);
std::string_view to_string(SectionLabel label);
/// Throws ValidationError(field) on unknown names.
AnnotationClass parse_annotation_class(std::string_view name, const std::string& field = "class");
SectionLabel parse_section_label(std::string_view name, const std::string& field = "label");

/// Native pixel coordinates.
struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

using Polygon = std::vector<Point>;

struct Annotation {
  AnnotationClass cls = AnnotationClass::Tumornest;
  Polygon polygon;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct SectionRecord {
  std::string section_id;
  Rect bbox;
  std::optional<SectionLabel> truth_label;
  std::optional<SectionLabel> predicted_label;
  std::optional<SectionLabel> corrected_label;
  friend bool operator==(const SectionRecord&, const SectionRecord&) = default;
};

struct SlideBundle {
  std::string slide_id;
  RgbImage image;
  double mpp = 1.0;
  double magnification = 20.0;
  std::vector<Annotation> annotations;
  std::vector<SectionRecord> sections;
  friend bool operator==(const SlideBundle&, const SlideBundle&) = default;
};

struct TissueMask {
  Mask mask;
  double coverage = 0.0;
};

/// Per-pixel class membership bits over a window.
struct AnnotationRaster {
  static constexpr std::uint8_t kTumor = 1;
  static constexpr std::uint8_t kStroma = 2;
  static constexpr std::uint8_t kNormal = 4;

  Raster<std::uint8_t> bits;

  bool has(int x, int y, std::uint8_t bit) const { return (bits.at(x, y) & bit) != 0; }
  /// Hierarchical single-label view: Tumornest beats Stroma beats Normal;
  /// nullopt is unannotated background.
  std::optional<AnnotationClass> label_at(int x, int y) const;
  /// Foreground-only training target (Tumornest channel), 0/1 values.
  Mask tumor_mask() const;
  double fraction(std::uint8_t bit) const;
};

inline constexpr int kMinSlideSide = 64;
inline constexpr std::uint8_t kDefaultBackgroundThreshold = 240;

/// Loads `image.png`, `meta.json` and the optional `annotations.json` and
/// `sections.json` from a bundle directory and validates every invariant.
SlideBundle load_slide_bundle(const std::filesystem::path& dir);
void save_slide_bundle(const SlideBundle& bundle, const std::filesystem::path& dir);
/// Writes only `sections.json` (used when labels change).
void save_sections(const std::vector<SectionRecord>& sections, const std::filesystem::path& dir);
std::vector<SectionRecord> load_sections(const std::filesystem::path& file);
/// Throws ValidationError naming the offending field.
void validate(const SlideBundle& bundle);

/// Tissue iff min(R, G, B) < background_threshold.
TissueMask detect_tissue(const RgbImage& image,
                         std::uint8_t background_threshold = kDefaultBackgroundThreshold);

/// One record per 8-connected tissue region with area >= min_section_area_px,
/// tight half-open bboxes, sorted by (top, left). Ids are "s<index>".
std::vector<SectionRecord> detect_sections(const TissueMask& tissue, long long min_section_area_px);

/// Rasterizes annotations with the even-odd rule. Output pixel (x, y) of the
/// window samples the native point ((window.x0 + x + 0.5) / scale,
/// (window.y0 + y + 0.5) / scale); the window is in scaled coordinates.
AnnotationRaster rasterize_annotations(const std::vector<Annotation>& annotations, const Rect& window,
                                       double scale);

/// Even-odd point-in-polygon.
bool point_in_polygon(const Polygon& polygon, double x, double y);
bool polygon_is_simple(const Polygon& polygon);
double polygon_area(const Polygon& polygon);

}  // namespace histoseg
