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
#include <vector>

#include "histoseg/raster.hpp"

namespace histoseg {

enum class Connectivity { Four, Eight };

/// Horizontal run of foreground pixels on row y, [x0, x1).
struct Run {
  int y = 0;
  int x0 = 0;
  int x1 = 0;
  friend bool operator==(const Run&, const Run&) = default;
};

struct Component {
  long long area = 0;
  Rect bbox;
  std::vector<Run> runs;  // row-major order
};

/// Label raster (0 = background, i+1 = components[i]) plus per-component
/// statistics. Components are numbered by their first pixel in raster order.
struct ComponentLabels {
  int width = 0;
  int height = 0;
  std::vector<int> labels;
  std::vector<Component> components;
};

/// Run-based union-find labeling; a pixel is foreground iff its mask value is nonzero.
ComponentLabels label_components(const Mask& mask, Connectivity connectivity = Connectivity::Eight);

}  // namespace histoseg
