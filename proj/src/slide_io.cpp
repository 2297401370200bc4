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

#include "histoseg/slide_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "histoseg/components.hpp"
#include "histoseg/errors.hpp"
#include "histoseg/png_io.hpp"

namespace histoseg {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(AnnotationClass cls) {
  switch (cls) {
    case AnnotationClass::Tumornest: return "Tumornest";
    case AnnotationClass::Stroma: return "Stroma";
    case AnnotationClass::Normal: return "Normal";
  }
  return "?";
}

std::string_view to_string(SectionLabel label) {
  return label == SectionLabel::Tumor ? "Tumor" : "Normal";
}

AnnotationClass parse_annotation_class(std::string_view name, const std::string& field) {
  if (name == "Tumornest") return AnnotationClass::Tumornest;
  if (name == "Stroma") return AnnotationClass::Stroma;
  if (name == "Normal") return AnnotationClass::Normal;
  throw ValidationError(field, "unknown annotation class '" + std::string(name) + "'");
}

SectionLabel parse_section_label(std::string_view name, const std::string& field) {
  if (name == "Tumor") return SectionLabel::Tumor;
  if (name == "Normal") return SectionLabel::Normal;
  throw ValidationError(field, "unknown section label '" + std::string(name) + "'");
}

std::optional<AnnotationClass> AnnotationRaster::label_at(int x, int y) const {
  const auto b = bits.at(x, y);
  if (b & kTumor) return AnnotationClass::Tumornest;
  if (b & kStroma) return AnnotationClass::Stroma;
  if (b & kNormal) return AnnotationClass::Normal;
  return std::nullopt;
}

Mask AnnotationRaster::tumor_mask() const {
  Mask out(bits.width, bits.height);
  for (std::size_t i = 0; i < bits.data.size(); ++i) out.data[i] = (bits.data[i] & kTumor) ? 1 : 0;
  return out;
}

double AnnotationRaster::fraction(std::uint8_t bit) const {
  if (bits.data.empty()) return 0.0;
  std::size_t n = 0;
  for (auto b : bits.data) n += (b & bit) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(bits.data.size());
}

namespace {

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string(), "cannot open");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(file.string(), std::string("invalid JSON: ") + e.what());
  }
}

void write_json(const fs::path& file, const json& j) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

json label_to_json(const std::optional<SectionLabel>& label) {
  if (!label) return nullptr;
  return std::string(to_string(*label));
}

std::optional<SectionLabel> label_from_json(const json& j, const std::string& field) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_string()) throw ValidationError(field, "expected string or null");
  return parse_section_label(j.get<std::string>(), field);
}

std::vector<SectionRecord> sections_from_json(const json& j, const std::string& file) {
  if (!j.is_array()) throw LoadError(file, "expected an array of sections");
  std::vector<SectionRecord> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& item = j[i];
    const std::string prefix = "sections[" + std::to_string(i) + "]";
    try {
      SectionRecord rec;
      rec.section_id = item.at("section_id").get<std::string>();
      const auto& b = item.at("bbox");
      if (!b.is_array() || b.size() != 4) throw ValidationError(prefix + ".bbox", "expected [x0,y0,x1,y1]");
      rec.bbox = Rect{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
      rec.truth_label = label_from_json(item.value("truth_label", json()), prefix + ".truth_label");
      rec.predicted_label = label_from_json(item.value("predicted_label", json()), prefix + ".predicted_label");
      rec.corrected_label = label_from_json(item.value("corrected_label", json()), prefix + ".corrected_label");
      out.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw LoadError(file, prefix + ": " + e.what());
    }
  }
  return out;
}

json sections_to_json(const std::vector<SectionRecord>& sections) {
  json arr = json::array();
  for (const auto& s : sections) {
    arr.push_back({{"section_id", s.section_id},
                   {"bbox", {s.bbox.x0, s.bbox.y0, s.bbox.x1, s.bbox.y1}},
                   {"truth_label", label_to_json(s.truth_label)},
                   {"predicted_label", label_to_json(s.predicted_label)},
                   {"corrected_label", label_to_json(s.corrected_label)}});
  }
  return arr;
}

}  // namespace

std::vector<SectionRecord> load_sections(const fs::path& file) {
  return sections_from_json(read_json(file), file.string());
}

void save_sections(const std::vector<SectionRecord>& sections, const fs::path& dir) {
  write_json(dir / "sections.json", sections_to_json(sections));
}

SlideBundle load_slide_bundle(const fs::path& dir) {
  SlideBundle bundle;
  const fs::path meta_file = dir / "meta.json";
  const json meta = read_json(meta_file);
  try {
    bundle.slide_id = meta.at("slide_id").get<std::string>();
    bundle.mpp = meta.at("mpp").get<double>();
    bundle.magnification = meta.at("magnification").get<double>();
  } catch (const json::exception& e) {
    throw LoadError(meta_file.string(), e.what());
  }
  bundle.image = read_png_rgb(dir / "image.png");

  const fs::path ann_file = dir / "annotations.json";
  if (fs::exists(ann_file)) {
    const json arr = read_json(ann_file);
    if (!arr.is_array()) throw LoadError(ann_file.string(), "expected an array of annotations");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string prefix = "annotations[" + std::to_string(i) + "]";
      try {
        Annotation a;
        a.cls = parse_annotation_class(arr[i].at("class").get<std::string>(), prefix + ".class");
        for (const auto& v : arr[i].at("polygon")) {
          if (!v.is_array() || v.size() != 2) throw ValidationError(prefix + ".polygon", "vertex must be [x,y]");
          a.polygon.push_back(Point{v[0].get<int>(), v[1].get<int>()});
        }
        bundle.annotations.push_back(std::move(a));
      } catch (const json::exception& e) {
        throw LoadError(ann_file.string(), prefix + ": " + e.what());
      }
    }
  }
  const fs::path sec_file = dir / "sections.json";
  if (fs::exists(sec_file)) bundle.sections = load_sections(sec_file);
  validate(bundle);
  return bundle;
}

void save_slide_bundle(const SlideBundle& bundle, const fs::path& dir) {
  validate(bundle);
  fs::create_directories(dir);
  write_png(dir / "image.png", bundle.image);
  write_json(dir / "meta.json",
             {{"slide_id", bundle.slide_id}, {"mpp", bundle.mpp}, {"magnification", bundle.magnification}});
  json ann = json::array();
  for (const auto& a : bundle.annotations) {
    json poly = json::array();
    for (const auto& p : a.polygon) poly.push_back({p.x, p.y});
    ann.push_back({{"class", std::string(to_string(a.cls))}, {"polygon", poly}});
  }
  write_json(dir / "annotations.json", ann);
  save_sections(bundle.sections, dir);
}

void validate(const SlideBundle& bundle) {
  const int w = bundle.image.width;
  const int h = bundle.image.height;
  if (bundle.image.channels != 3) throw ValidationError("image", "expected 3 channels");
  if (w < kMinSlideSide || h < kMinSlideSide)
    throw ValidationError("image", "slide must be at least 64x64, got " + std::to_string(w) + "x" +
                                       std::to_string(h));
  if (!(bundle.mpp > 0.0) || !std::isfinite(bundle.mpp)) throw ValidationError("mpp", "must be > 0");
  if (!(bundle.magnification > 0.0)) throw ValidationError("magnification", "must be > 0");
  for (std::size_t i = 0; i < bundle.annotations.size(); ++i) {
    const auto& poly = bundle.annotations[i].polygon;
    const std::string field = "annotations[" + std::to_string(i) + "].polygon";
    if (poly.size() < 3) throw ValidationError(field, "needs at least 3 vertices");
    for (const auto& p : poly) {
      if (p.x < 0 || p.x >= w || p.y < 0 || p.y >= h)
        throw ValidationError(field, "vertex (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                                         ") outside image");
    }
    if (!polygon_is_simple(poly)) throw ValidationError(field, "polygon self-intersects");
  }
  for (std::size_t i = 0; i < bundle.sections.size(); ++i) {
    const auto& b = bundle.sections[i].bbox;
    const std::string field = "sections[" + std::to_string(i) + "].bbox";
    if (b.area() <= 0) throw ValidationError(field, "empty bbox");
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > w || b.y1 > h) throw ValidationError(field, "bbox outside image");
  }
}

TissueMask detect_tissue(const RgbImage& image, std::uint8_t background_threshold) {
  TissueMask out;
  out.mask = Mask(image.width, image.height);
  std::size_t count = 0;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const auto m = std::min({image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2)});
      const bool tissue = m < background_threshold;
      out.mask.at(x, y) = tissue ? 1 : 0;
      count += tissue ? 1 : 0;
    }
  }
  const auto total = static_cast<double>(image.width) * image.height;
  out.coverage = total > 0 ? static_cast<double>(count) / total : 0.0;
  return out;
}

std::vector<SectionRecord> detect_sections(const TissueMask& tissue, long long min_section_area_px) {
  const auto labels = label_components(tissue.mask, Connectivity::Eight);
  std::vector<Rect> boxes;
  for (const auto& c : labels.components) {
    if (c.area >= min_section_area_px) boxes.push_back(c.bbox);
  }
  std::stable_sort(boxes.begin(), boxes.end(), [](const Rect& a, const Rect& b) {
    return a.y0 != b.y0 ? a.y0 < b.y0 : a.x0 < b.x0;
  });
  std::vector<SectionRecord> out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    SectionRecord rec;
    rec.section_id = "s" + std::to_string(i);
    rec.bbox = boxes[i];
    out.push_back(std::move(rec));
  }
  return out;
}

bool point_in_polygon(const Polygon& polygon, double x, double y) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = polygon[i].x, yi = polygon[i].y;
    const double xj = polygon[j].x, yj = polygon[j].y;
    if ((yi > y) != (yj > y)) {
      const double xc = xi + (y - yi) * (xj - xi) / (yj - yi);
      if (x < xc) inside = !inside;
    }
  }
  return inside;
}

namespace {

long long orient(const Point& a, const Point& b, const Point& c) {
  return static_cast<long long>(b.x - a.x) * (c.y - a.y) - static_cast<long long>(b.y - a.y) * (c.x - a.x);
}

bool on_segment(const Point& a, const Point& b, const Point& p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_intersect(const Point& a, const Point& b, const Point& c, const Point& d) {
  const auto o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0))) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

}  // namespace

bool polygon_is_simple(const Polygon& polygon) {
  const std::size_t n = polygon.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = polygon[i];
    const Point& b = polygon[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      // Adjacent edges share exactly one vertex; skip them.
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      const Point& c = polygon[j];
      const Point& d = polygon[(j + 1) % n];
      if (segments_intersect(a, b, c, d)) return false;
    }
  }
  return true;
}

double polygon_area(const Polygon& polygon) {
  double acc = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    acc += static_cast<double>(polygon[j].x) * polygon[i].y - static_cast<double>(polygon[i].x) * polygon[j].y;
  }
  return std::abs(acc) * 0.5;
}

AnnotationRaster rasterize_annotations(const std::vector<Annotation>& annotations, const Rect& window,
                                       double scale) {
  if (!(scale > 0.0)) throw UsageError("rasterize_annotations: scale must be > 0");
  AnnotationRaster out;
  out.bits = Raster<std::uint8_t>(std::max(0, window.width()), std::max(0, window.height()));
  std::vector<double> crossings;
  for (const auto& ann : annotations) {
    const std::uint8_t bit = ann.cls == AnnotationClass::Tumornest ? AnnotationRaster::kTumor
                             : ann.cls == AnnotationClass::Stroma  ? AnnotationRaster::kStroma
                                                                   : AnnotationRaster::kNormal;
    const auto& poly = ann.polygon;
    const std::size_t n = poly.size();
    if (n < 3) continue;
    double min_y = poly[0].y, max_y = poly[0].y;
    for (const auto& p : poly) {
      min_y = std::min<double>(min_y, p.y);
      max_y = std::max<double>(max_y, p.y);
    }
    for (int row = 0; row < out.bits.height; ++row) {
      const double y = (window.y0 + row + 0.5) / scale;
      if (y < min_y || y > max_y) continue;
      crossings.clear();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double xi = poly[i].x, yi = poly[i].y;
        const double xj = poly[j].x, yj = poly[j].y;
        if ((yi > y) != (yj > y)) crossings.push_back(xi + (y - yi) * (xj - xi) / (yj - yi));
      }
      std::sort(crossings.begin(), crossings.end());
      // Inside iff an odd number of crossings lie strictly right of x, i.e.
      // an odd number lie at or left of x.
      std::size_t k = 0;
      for (int col = 0; col < out.bits.width; ++col) {
        const double x = (window.x0 + col + 0.5) / scale;
        while (k < crossings.size() && crossings[k] <= x) ++k;
        if (k == crossings.size() && k % 2 == 0) break;
        if (k % 2 == 1) out.bits.at(col, row) |= bit;
      }
    }
  }
  return out;
}

}  // namespace histoseg
