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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "histoseg/raster.hpp"
#include "histoseg/slide_io.hpp"

namespace histoseg {

/// Reference to one P x P training patch at sampling magnification.
struct PatchSpec {
  std::string slide_id;
  int slide_index = 0;  // position in the caller's slide list
  int x = 0;
  int y = 0;
  int size = 0;
  double t = 0.0;  // Tumornest pixel fraction
  double s = 0.0;  // Stroma
  double n = 0.0;  // Normal
};

/// Rows of the balancing table. Rows overlap: a dense-tumor patch also
/// matches TumorPresent, a stroma-only patch also matches TumorAbsent.
enum class Category { TumorAbsent, TumorPresent, TumorDense, StromaPresent, NormalPresent };

inline constexpr double kPresenceFraction = 0.0005;  // 0.05 %
inline constexpr double kDenseFraction = 0.10;

std::string_view to_string(Category c);
std::vector<Category> categorize(const PatchSpec& spec);

struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

struct ResampleRule {
  std::string name;
  std::function<bool(const PatchSpec&)> predicate;
  Rational multiplier;
};

/// Per-row multipliers; defaults are the after/before patch-count ratios of
/// the balancing table.
struct TableMultipliers {
  Rational tumor_absent{1, 1};
  Rational tumor_present{30000, 9537};
  Rational tumor_dense{10000, 5528};
  Rational stroma_present{20000, 9096};
  Rational normal_present{20000, 9458};
};

std::vector<ResampleRule> default_resample_rules(const TableMultipliers& m = {});

enum class Rounding {
  /// Each matched rule contributes floor(m) or ceil(m) copies, drawn with
  /// P(ceil) = frac(m).
  Stochastic,
  /// Each rule contributes exactly round(count * m) copies over the patches
  /// it matches (largest-remainder apportionment in a seeded order).
  Exact,
};

/// Repetition count per patch is the product over matched rules of that
/// rule's realized multiplicity.
struct ResamplePlan {
  std::vector<ResampleRule> rules;
  std::vector<PatchSpec> specs;
  std::vector<int> repetitions;

  long long total() const;
};

ResamplePlan build_resample_plan(std::vector<PatchSpec> specs, std::vector<ResampleRule> rules, std::uint64_t seed,
                                 Rounding rounding = Rounding::Stochastic);

/// sum(rep * (1 - t)) / sum(rep * t); throws ValidationError without tumor pixels.
double pixel_unbalance(const std::vector<PatchSpec>& specs, const std::vector<int>& repetitions);
double pixel_unbalance(const ResamplePlan& plan);

/// `slide_id,x,y,t,s,n,repetitions` with a header row.
void write_plan_csv(const ResamplePlan& plan, const std::filesystem::path& file);

/// A slide at sampling magnification with its tumor target and class bits.
struct SlideRaster {
  std::string slide_id;
  int mag_divisor = 1;
  double mpp_eff = 1.0;
  RgbImage image;
  AnnotationRaster annotations;
  Mask tissue;
};

SlideRaster prepare_slide(const SlideBundle& bundle, int mag_divisor,
                          std::uint8_t background_threshold = kDefaultBackgroundThreshold);

/// Grid of P x P windows (stride `stride`, plus edge-aligned last windows)
/// on the downscaled slide, keeping windows that touch tissue.
std::vector<PatchSpec> extract_patch_grid(const SlideRaster& slide, int patch_size, int stride, int slide_index = 0);
std::vector<PatchSpec> extract_patch_grid(const SlideBundle& bundle, int patch_size, int stride, int mag_divisor);

struct PatchPixels {
  RgbImage image;
  Mask target;  // 0/1 tumor
};

PatchPixels patch_pixels(const SlideRaster& slide, const PatchSpec& spec);

struct AugmentConfig {
  double rotation_min_deg = -180.0;
  double rotation_max_deg = 180.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double blur_sigma_min = 0.0;
  double blur_sigma_max = 1.5;
  double brightness = 0.10;
  double saturation = 0.10;
  int elastic_grid = 64;
  double elastic_sigma = 2.0;
  /// Probability of applying each of rotation, scaling, elastic, blur, color.
  double probability = 0.5;

  void validate() const;
};

/// Same geometric warp for image (bilinear) and target (nearest); blur and
/// color only touch the image. Deterministic in `seed`.
PatchPixels augment(const PatchPixels& in, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace histoseg
