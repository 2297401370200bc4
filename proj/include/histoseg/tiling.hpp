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

#include <vector>

namespace histoseg {

/// Window origins along one axis of `length` pixels: 0, stride, 2*stride, ...
/// while the window still ends before `length`, then one edge-aligned origin
/// at length - window. A single origin 0 when the axis is not longer than the
/// window.
inline std::vector<int> axis_positions(int length, int window, int stride) {
  std::vector<int> out;
  if (length <= window) {
    out.push_back(0);
    return out;
  }
  int pos = 0;
  for (; pos + window < length; pos += stride) out.push_back(pos);
  if (out.back() != length - window) out.push_back(length - window);
  return out;
}

}  // namespace histoseg
