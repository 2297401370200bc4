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
#include <string>
#include <vector>

#include "histoseg/raster.hpp"

namespace histoseg {

/// Reads any 8-bit PNG and converts it to RGB (gray is replicated, alpha dropped).
RgbImage read_png_rgb(const std::filesystem::path& path);

/// Reads an 8-bit grayscale PNG (RGB input is reduced to its first channel).
Raster<std::uint8_t> read_png_gray(const std::filesystem::path& path);

/// Encodes a 1-channel (gray) or 3-channel (RGB) 8-bit raster.
std::vector<std::uint8_t> encode_png(const Raster<std::uint8_t>& image);

void write_png(const std::filesystem::path& path, const Raster<std::uint8_t>& image);

}  // namespace histoseg
