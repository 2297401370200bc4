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
#include <string>
#include <vector>

#include "histoseg/slide_io.hpp"

namespace histoseg {

using Rgb = std::array<int, 3>;

/// Synthetic slides: elliptical tissue sections on a grid, stippled tumor
/// nests with a stroma halo, and smooth look-alike blobs annotated Normal.
struct SynthConfig {
  std::uint64_t seed = 0;
  int width = 512;
  int height = 512;
  double mpp = 2.0;
  double magnification = 20.0;
  int sections_per_slide = 4;
  double section_radius_min = 0.30;  // fraction of the grid cell side
  double section_radius_max = 0.42;
  double prevalence = 0.5;  // fraction of Tumor sections per slide
  int tumor_blobs_min = 1;
  int tumor_blobs_max = 2;
  int blob_radius_min = 14;  // native pixels
  int blob_radius_max = 28;
  double stipple_density = 0.4;
  double distractor_probability = 0.6;
  double stroma_scale = 1.4;
  int noise_amplitude = 6;
  Rgb background{248, 246, 248};
  Rgb tissue{232, 182, 206};
  Rgb stroma{222, 166, 198};
  Rgb tumor{176, 112, 186};
  Rgb nuclei{72, 34, 112};
  long long min_section_area = 2000;

  /// Throws ConfigError.
  void validate() const;
};

/// One slide. Section ids are `<slide_id>_s<i>` in (top, left) order and
/// every section carries its truth label.
SlideBundle generate_slide(const SynthConfig& cfg, const std::string& slide_id);

/// Seed of slide `index` in a dataset generated from `cfg.seed`.
std::uint64_t slide_seed(std::uint64_t dataset_seed, int index);

/// Writes `count` bundles named `slide_NNN` under `out` plus `manifest.json`
/// listing every section's truth label. Returns the bundle directories.
std::vector<std::filesystem::path> generate_dataset(const SynthConfig& cfg, int count,
                                                    const std::filesystem::path& out);

/// Bundle directories under `root` (subdirectories holding `meta.json`), sorted.
std::vector<std::filesystem::path> list_bundle_dirs(const std::filesystem::path& root);

}  // namespace histoseg
