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

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace histoseg {

/// Axis-aligned rectangle, half-open: [x0, x1) x [y0, y1).
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long long area() const {
    return width() > 0 && height() > 0 ? static_cast<long long>(width()) * height() : 0;
  }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Interleaved row-major raster with `channels` values per pixel.
template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, int c = 1, T fill = T{})
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  T& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  friend bool operator==(const Raster&, const Raster&) = default;
};

using RgbImage = Raster<std::uint8_t>;
using Mask = Raster<std::uint8_t>;

/// Copies `window` out of `src`; pixels outside the source are mirrored
/// back in (reflection without edge repeat, falling back to clamping for
/// windows larger than twice the source).
template <typename T>
Raster<T> crop_reflect(const Raster<T>& src, const Rect& window) {
  auto reflect = [](int v, int n) {
    if (n == 1) return 0;
    while (v < 0 || v >= n) {
      if (v < 0) v = -v;
      if (v >= n) v = 2 * (n - 1) - v;
    }
    return v;
  };
  Raster<T> out(window.width(), window.height(), src.channels);
  for (int y = 0; y < out.height; ++y) {
    const int sy = reflect(window.y0 + y, src.height);
    for (int x = 0; x < out.width; ++x) {
      const int sx = reflect(window.x0 + x, src.width);
      for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = src.at(sx, sy, c);
    }
  }
  return out;
}

/// Box-filter downscale by an integer factor (partial trailing blocks dropped).
RgbImage downscale_box(const RgbImage& src, int factor);

}  // namespace histoseg
