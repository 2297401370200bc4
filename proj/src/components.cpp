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

#include "histoseg/components.hpp"

#include <algorithm>
#include <numeric>

namespace histoseg {

namespace {

struct DisjointSet {
  std::vector<int> parent;
  int add() {
    parent.push_back(static_cast<int>(parent.size()));
    return parent.back();
  }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // Smaller id wins so the root is the run seen first in raster order.
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

}  // namespace

ComponentLabels label_components(const Mask& mask, Connectivity connectivity) {
  ComponentLabels out;
  out.width = mask.width;
  out.height = mask.height;
  out.labels.assign(static_cast<std::size_t>(mask.width) * mask.height, 0);
  const int reach = connectivity == Connectivity::Eight ? 1 : 0;

  std::vector<Run> runs;
  std::vector<int> row_start(mask.height + 1, 0);
  DisjointSet sets;
  std::size_t prev_begin = 0;
  std::size_t prev_end = 0;
  for (int y = 0; y < mask.height; ++y) {
    row_start[y] = static_cast<int>(runs.size());
    const std::size_t cur_begin = runs.size();
    int x = 0;
    while (x < mask.width) {
      if (!mask.at(x, y, 0)) {
        ++x;
        continue;
      }
      Run run{y, x, x};
      while (x < mask.width && mask.at(x, y, 0)) ++x;
      run.x1 = x;
      runs.push_back(run);
      sets.add();
    }
    // Merge with touching runs of the previous row (two-pointer sweep).
    std::size_t p = prev_begin;
    for (std::size_t c = cur_begin; c < runs.size(); ++c) {
      const Run& cur = runs[c];
      while (p < prev_end && runs[p].x1 + reach <= cur.x0) ++p;
      for (std::size_t q = p; q < prev_end && runs[q].x0 < cur.x1 + reach; ++q) {
        sets.unite(static_cast<int>(c), static_cast<int>(q));
      }
    }
    prev_begin = cur_begin;
    prev_end = runs.size();
  }

  std::vector<int> root_to_label(runs.size(), -1);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const int root = sets.find(static_cast<int>(i));
    if (root_to_label[root] < 0) {
      root_to_label[root] = static_cast<int>(out.components.size());
      Component comp;
      comp.bbox = Rect{runs[i].x0, runs[i].y, runs[i].x1, runs[i].y + 1};
      out.components.push_back(comp);
    }
    const int label = root_to_label[root];
    Component& comp = out.components[label];
    const Run& r = runs[i];
    comp.runs.push_back(r);
    comp.area += r.x1 - r.x0;
    comp.bbox.x0 = std::min(comp.bbox.x0, r.x0);
    comp.bbox.x1 = std::max(comp.bbox.x1, r.x1);
    comp.bbox.y0 = std::min(comp.bbox.y0, r.y);
    comp.bbox.y1 = std::max(comp.bbox.y1, r.y + 1);
    for (int x = r.x0; x < r.x1; ++x)
      out.labels[static_cast<std::size_t>(r.y) * mask.width + x] = label + 1;
  }
  return out;
}

}  // namespace histoseg
