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

// Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "histoseg/evaluation.hpp"
#include "histoseg/inference.hpp"
#include "histoseg/pipeline.hpp"
#include "histoseg/run_config.hpp"
#include "histoseg/sampler.hpp"
#include "histoseg/segmodel.hpp"
#include "histoseg/synthetic.hpp"
#include "histoseg/trainer.hpp"
#include "test_support.hpp"

using namespace histoseg;
using histoseg::testing::flood_fill;
using histoseg::testing::gradient_check;
using histoseg::testing::project;
using histoseg::testing::random_mask;
using histoseg::testing::random_tensor;
using histoseg::testing::relative_error;
using nn::Shape;
using nn::Tensor;
using nn::Var;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kLayerGradTol = 1e-4;
constexpr double kModelGradTol = 1e-3;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kProbSumTol = 1e-6;
constexpr double kMergeTol = 1e-6;
constexpr double kFocalCeTol = 1e-8;
constexpr double kFocalValueTol = 1e-6;
constexpr long long kTableTotal = 255771;
constexpr int kUnbalanceSeeds = 100;
constexpr int kTilingTrials = 500;
constexpr int kComponentMasks = 1000;
constexpr int kMonotoneHeatmaps = 200;
constexpr int kGridSections = 20;
constexpr double kMinValIou = 0.6;
constexpr double kMinAccuracy = 0.90;
constexpr double kMinSensitivity = 0.90;
constexpr int kMinTestSections = 40;
constexpr double kE2eBudgetSeconds = 30 * 60;
constexpr double kMinTruncAgreement = 0.95;
constexpr double kMinTruncSpeedup = 0.10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void progress(const std::string& line) { std::cerr << "  .. " << line << std::endl; }

ModelConfig model_config(EncoderKind enc, HeadKind head, int k, int p, double width, std::uint64_t seed = 11) {
  ModelConfig cfg;
  cfg.encoder = enc;
  cfg.head = head;
  cfg.depth = k;
  cfg.patch_size = p;
  cfg.width_multiplier = width;
  cfg.seed = seed;
  return cfg;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Tensor<double> spaced(const Shape& shape, std::mt19937_64& rng) {
  Tensor<double> t(shape);
  std::vector<int> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.05 * (order[i] - static_cast<double>(t.size()) / 2.0) + 0.025;
  return t;
}

template <typename T>
Tensor<T> checker_target(int n, int p) {
  Tensor<T> t({n, 2, p, p});
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x) t.at(b, (x / 4 + y / 4 + b) % 2, y, x) = T{1};
  return t;
}

double layer_gradient_error() {
  using namespace nn;
  std::mt19937_64 rng(2024);
  std::vector<double> errors;
  for (int stride : {1, 2})
    for (int k : {1, 3, 7})
      errors.push_back(gradient_check([&](const auto& v) { return project(conv2d(v[0], v[1], stride, k / 2)); },
                                      {random_tensor({2, 3, 8, 8}, rng), random_tensor({2, 3, k, k}, rng)}));
  errors.push_back(gradient_check([](const auto& v) { return project(add_channel_bias(v[0], v[1])); },
                                  {random_tensor({2, 3, 3, 3}, rng), random_tensor({3}, rng)}));
  {
    Tensor<double> rm({3}), rv({3}, 1.0);
    errors.push_back(gradient_check(
        [&](const auto& v) { return project(batch_norm(v[0], v[1], v[2], rm, rv, NormMode::Train)); },
        {random_tensor({2, 3, 3, 3}, rng), random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng)}));
  }
  {
    Tensor<double> rm({2}, 0.3), rv({2}, 2.0);
    errors.push_back(gradient_check(
        [&](const auto& v) { return project(batch_norm(v[0], v[1], v[2], rm, rv, NormMode::Eval)); },
        {random_tensor({2, 2, 3, 3}, rng), random_tensor({2}, rng), random_tensor({2}, rng)}));
  }
  errors.push_back(gradient_check([](const auto& v) { return project(relu(v[0])); }, {spaced({1, 2, 4, 4}, rng)}));
  errors.push_back(gradient_check([](const auto& v) { return project(max_pool(v[0])); }, {spaced({2, 2, 6, 6}, rng)}));
  errors.push_back(gradient_check([](const auto& v) { return project(concat_channels(v[0], v[1])); },
                                  {random_tensor({2, 1, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)}));
  errors.push_back(gradient_check([](const auto& v) { return project(upsample_bilinear(v[0], 8, 6)); },
                                  {random_tensor({1, 2, 4, 3}, rng)}));
  errors.push_back(gradient_check([](const auto& v) { return project(softmax_channels(v[0])); },
                                  {random_tensor({2, 2, 3, 3}, rng, -3.0, 3.0)}));
  errors.push_back(gradient_check([](const auto& v) { return project(add(v[0], mul(v[0], v[1]))); },
                                  {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}));
  errors.push_back(gradient_check([](const auto& v) { return project(scale(v[0], -2.5)); }, {random_tensor({4}, rng)}));
  errors.push_back(gradient_check([](const auto& v) { return project(weighted_sum<double>({v[0], v[1], v[2]}, v[3])); },
                                  {random_tensor({1, 2, 2, 2}, rng), random_tensor({1, 2, 2, 2}, rng),
                                   random_tensor({1, 2, 2, 2}, rng), random_tensor({3}, rng)}));
  {
    Tensor<double> target({2, 2, 3, 3});
    for (int n = 0; n < 2; ++n)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) target.at(n, (x + y + n) % 2, y, x) = 1.0;
    for (double gamma : {0.0, 2.0})
      errors.push_back(gradient_check([&](const auto& v) { return focal_loss(softmax_channels(v[0]), target, gamma); },
                                      {random_tensor({2, 2, 3, 3}, rng, -2.0, 2.0)}));
  }
  return *std::max_element(errors.begin(), errors.end());
}

/// Relative error between backprop and central differences on sampled
/// parameters of a full model (P=32, k=3, width 0.125).
double model_gradient_error(HeadKind head) {
  constexpr int kSamples = 60;
  SegModel<double> model(model_config(EncoderKind::ResNet34, head, 3, 32, 0.125));
  std::mt19937_64 rng(7);
  const Var<double> x(random_tensor({2, 3, 32, 32}, rng));
  const auto target = checker_target<double>(2, 32);
  auto& store = model.params();
  if (head == HeadKind::LinearMerge)
    store.param("merge.w").var.mutable_value() = Tensor<double>({3}, std::vector<double>{0.3, -0.4, 0.9});
  store.zero_grad();
  nn::backward(model.loss(model.forward(x, NormMode::Train), target));

  std::vector<std::pair<std::string, std::size_t>> picks;
  const auto names = store.param_names();
  std::uniform_int_distribution<std::size_t> pick_name(0, names.size() - 1);
  while (picks.size() < kSamples) {
    const auto& name = names[pick_name(rng)];
    std::uniform_int_distribution<std::size_t> pick_index(0, store.param(name).var.value().size() - 1);
    picks.emplace_back(name, pick_index(rng));
  }
  if (head == HeadKind::LinearMerge) picks.back() = {"merge.w", 1};

  std::vector<double> analytic, numeric;
  const double h = 1e-7;  // small enough to stay clear of ReLU and max-pool kinks
  for (const auto& [name, index] : picks) {
    analytic.push_back(store.grad(name)[index]);
    auto& value = store.param(name).var.mutable_value();
    const double saved = value[index];
    auto eval = [&](double v) {
      nn::NoGradGuard guard;
      value[index] = v;
      return model.loss(model.forward(x, NormMode::Train), target).value()[0];
    };
    numeric.push_back((eval(saved + h) - eval(saved - h)) / (2.0 * h));
    value[index] = saved;
  }
  double norm = 0.0;
  for (double g : analytic) norm += g * g;
  if (norm == 0.0) return 1.0;  // a vanishing gradient proves nothing
  return relative_error(analytic, numeric);
}

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const double layers = layer_gradient_error();
  double heads = 0.0;
  std::string per_head;
  for (auto head : {HeadKind::Plain, HeadKind::DeepSupervision, HeadKind::LinearMerge}) {
    const double e = model_gradient_error(head);
    heads = std::max(heads, e);
    per_head += " " + std::string(to_string(head)) + "=" + fmt(e, 2);
  }
  const double elapsed = seconds_since(t0);
  return {layers < kLayerGradTol && heads < kModelGradTol && elapsed < kGradBudgetSeconds,
          "layers max rel err " + fmt(layers, 2) + " (< " + fmt(kLayerGradTol) + "), heads" + per_head + " (< " +
              fmt(kModelGradTol) + "), " + fmt(elapsed) + " s (< " + fmt(kGradBudgetSeconds) + ")"};
}

// ---------------------------------------------------------------------------
// 2. Shape ladder

Outcome criterion_shape_ladder() {
  bool ok = true;
  std::string detail;
  for (auto enc : {EncoderKind::ResNet34, EncoderKind::Baseline}) {
    SegModel<float> model(model_config(enc, HeadKind::DeepSupervision, 5, 512, 0.0625));
    std::mt19937_64 rng(2);
    nn::NoGradGuard guard;
    const auto out = model.forward(Var<float>(random_tensor({1, 3, 512, 512}, rng).cast<float>()), NormMode::Eval);
    std::string sizes;
    if (out.score_maps.size() != 5) ok = false;
    for (std::size_t l = 0; l < out.score_maps.size(); ++l) {
      const auto& s = out.score_maps[l].shape();
      const int expected = 32 << l;
      ok = ok && s == Shape{1, 2, expected, expected} && out.prob_maps[l].shape() == s;
      sizes += (l ? "," : "") + std::to_string(s[2]);
    }
    ok = ok && out.final.shape() == Shape{1, 2, 512, 512};
    double worst = 0.0;
    const auto& phi = out.final.value();
    for (int y = 0; y < 512; ++y)
      for (int x = 0; x < 512; ++x)
        worst = std::max(worst, std::abs(static_cast<double>(phi.at(0, 0, y, x)) + phi.at(0, 1, y, x) - 1.0));
    ok = ok && worst <= kProbSumTol;
    detail += std::string(detail.empty() ? "" : "; ") + std::string(to_string(enc)) + " psi " + sizes +
              ", Phi 512x512x2, max |sum-1| " + fmt(worst, 2);
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 3. LinearMerge with a one-hot last weight equals the Plain head

Outcome criterion_linear_merge() {
  const auto plain_cfg = model_config(EncoderKind::ResNet34, HeadKind::Plain, 5, 64, 0.25);
  auto merge_cfg = plain_cfg;
  merge_cfg.head = HeadKind::LinearMerge;
  SegModel<float> plain(plain_cfg), merge(merge_cfg);
  merge.params().param("merge.w").var.mutable_value() = Tensor<float>({5}, std::vector<float>{0, 0, 0, 0, 1});
  std::mt19937_64 rng(3);
  const auto x = random_tensor({2, 3, 64, 64}, rng).cast<float>();
  double worst = 0.0;
  for (auto mode : {NormMode::Eval, NormMode::Train}) {
    nn::NoGradGuard guard;
    const auto a = merge.forward(Var<float>(x), mode).final.value();
    const auto b = plain.forward(Var<float>(x), mode).final.value();
    if (a.shape() != b.shape()) return {false, "shape mismatch"};
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(a[i] - b[i])));
  }
  return {worst <= kMergeTol, "k=5, w=(0,0,0,0,1): max |LinearMerge - Plain| " + fmt(worst, 2) + " (<= " +
                                  fmt(kMergeTol) + ")"};
}

// ---------------------------------------------------------------------------
// 4. Focal loss

Outcome criterion_focal() {
  constexpr int kPixels = 1000;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(1e-3, 1.0 - 1e-3);
  Tensor<double> probs({1, 2, 1, kPixels}), target({1, 2, 1, kPixels});
  double ce = 0.0;
  for (int i = 0; i < kPixels; ++i) {
    const double p = u(rng);
    probs.at(0, 0, 0, i) = 1.0 - p;
    probs.at(0, 1, 0, i) = p;
    const int cls = u(rng) < 0.5 ? 0 : 1;
    target.at(0, cls, 0, i) = 1.0;
    ce -= std::log(probs.at(0, cls, 0, i));
  }
  ce /= kPixels;
  const double ce_err = std::abs(nn::focal_loss(Var<double>(probs), target, 0.0).value()[0] - ce);

  double value_err = 0.0;
  for (int j = 1; j <= 9; ++j) {
    const double pt = j / 10.0;
    const Var<double> p(Tensor<double>({1, 2, 1, 1}, std::vector<double>{1.0 - pt, pt}));
    const Tensor<double> t({1, 2, 1, 1}, std::vector<double>{0.0, 1.0});
    const double direct = -(1.0 - pt) * (1.0 - pt) * std::log(pt);
    value_err = std::max(value_err, std::abs(nn::focal_loss(p, t, 2.0).value()[0] - direct));
  }
  return {ce_err <= kFocalCeTol && value_err <= kFocalValueTol,
          "gamma 0 vs CE on 1000 pixels " + fmt(ce_err, 2) + " (<= " + fmt(kFocalCeTol) +
              "), gamma 2 single pixel max err " + fmt(value_err, 2) + " (<= " + fmt(kFocalValueTol) + ")"};
}

// ---------------------------------------------------------------------------
// 5. Balancing table and pixel unbalance

Outcome criterion_balancing() {
  const std::vector<std::pair<std::string, int>> rows = {
      {"T<0.05%", 175771}, {"T>=0.05%", 9537}, {"T>=10%", 5528}, {"S>=0.05%", 9096}, {"N>=0.05%", 9458}};
  const auto defaults = default_resample_rules();
  std::vector<PatchSpec> specs;
  std::vector<ResampleRule> rules;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int k = 0; k < rows[i].second; ++k) {
      PatchSpec p;
      p.slide_id = rows[i].first;
      specs.push_back(p);
    }
    const std::string group = rows[i].first;
    rules.push_back({group, [group](const PatchSpec& p) { return p.slide_id == group; }, defaults[i].multiplier});
  }
  const long long total = build_resample_plan(specs, rules, 1, Rounding::Exact).total();

  int lowered = 0;
  for (int seed = 0; seed < kUnbalanceSeeds; ++seed) {
    RunConfig cfg;
    cfg.set("seed", std::to_string(seed));
    cfg.set("patch_size", "64");
    std::vector<SlideBundle> bundles;
    for (int i = 0; i < 3; ++i) {
      auto synth = cfg.synth;
      synth.seed = slide_seed(cfg.synth.seed, i);
      bundles.push_back(generate_slide(synth, "u" + std::to_string(i)));
    }
    const auto data = build_training_data(bundles, cfg);
    lowered += data.unbalance_after < data.unbalance_before;
  }
  return {total == kTableTotal && lowered == kUnbalanceSeeds,
          "table total " + std::to_string(total) + " (== " + std::to_string(kTableTotal) + "), unbalance lowered in " +
              std::to_string(lowered) + "/" + std::to_string(kUnbalanceSeeds) + " seeds"};
}

// ---------------------------------------------------------------------------
// 6. Tiling

Outcome criterion_tiling() {
  std::mt19937_64 rng(6);
  int failures = 0;
  for (int trial = 0; trial < kTilingTrials; ++trial) {
    const int p = trial % 2 == 0 ? 64 : 512;
    const int overlap = p / 2;
    std::uniform_int_distribution<int> dim(1, p == 64 ? 400 : 1600), off(0, 500);
    const int x0 = off(rng), y0 = off(rng);
    const Rect bbox{x0, y0, x0 + dim(rng), y0 + dim(rng)};
    const auto tiles = tile_positions(bbox, p, overlap);
    Raster<std::uint8_t> covered(bbox.width(), bbox.height());
    for (const auto& t : tiles)
      for (int y = std::max(t.y, bbox.y0); y < std::min(t.y + p, bbox.y1); ++y)
        for (int x = std::max(t.x, bbox.x0); x < std::min(t.x + p, bbox.x1); ++x)
          covered.at(x - bbox.x0, y - bbox.y0) = 1;
    bool ok = std::find(covered.data.begin(), covered.data.end(), 0) == covered.data.end();
    // Neighbouring tiles on each axis share at least half a patch.
    for (bool horizontal : {true, false}) {
      std::set<int> axis;
      for (const auto& t : tiles) axis.insert(horizontal ? t.x : t.y);
      int prev = 0;
      bool first = true;
      for (int v : axis) {
        if (!first) ok = ok && prev + p - v >= overlap;
        prev = v;
        first = false;
      }
    }
    failures += !ok;
  }
  std::set<int> xs, ys;
  for (const auto& t : tile_positions(Rect{0, 0, 768, 768}, 512, 256)) {
    xs.insert(t.x);
    ys.insert(t.y);
  }
  const bool example = xs == std::set<int>{0, 256} && ys == std::set<int>{0, 256};
  return {failures == 0 && example, std::to_string(kTilingTrials - failures) + "/" + std::to_string(kTilingTrials) +
                                        " bboxes covered with >= 50% overlap, 768 @ P=512 -> {0, 256} " +
                                        (example ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 7. Connected components and the area rule

Heatmap heatmap_from(const Raster<float>& probs, double mpp_eff) {
  Heatmap hm;
  hm.bbox = Rect{0, 0, probs.width, probs.height};
  hm.mpp_eff = mpp_eff;
  hm.probs = probs;
  hm.coverage = Raster<std::uint16_t>(probs.width, probs.height, 1, 1);
  return hm;
}

Outcome criterion_components() {
  std::mt19937_64 rng(7);
  int agree = 0;
  for (int trial = 0; trial < kComponentMasks; ++trial) {
    const double density = std::uniform_real_distribution<double>(0.1, 0.7)(rng);
    const auto mask = random_mask(64, 64, density, rng);
    Raster<float> p(64, 64);
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = mask.data[i] ? 0.75f : 0.25f;
    const auto lab = binarize_and_label(heatmap_from(p, 1.0), 0.5);
    const auto oracle = flood_fill(mask, true);
    bool same = lab.regions.size() == oracle.areas.size();
    for (std::size_t r = 0; same && r < oracle.areas.size(); ++r) {
      same = lab.regions[r].area_px == oracle.areas[r] && lab.regions[r].bbox == oracle.boxes[r];
      for (const auto& run : lab.regions[r].runs)
        for (int x = run.x0; x < run.x1; ++x) same = same && oracle.labels[run.y * 64 + x] == static_cast<int>(r);
    }
    agree += same;
  }

  int monotone = 0;
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::uniform_int_distribution<int> pos(0, 40), side(1, 16), blobs(0, 4);
  for (int trial = 0; trial < kMonotoneHeatmaps; ++trial) {
    Raster<float> p(56, 56);
    for (auto& v : p.data) v = 0.3f * u(rng);
    for (int b = blobs(rng); b > 0; --b) {
      const int x0 = pos(rng), y0 = pos(rng), w = side(rng), h = side(rng);
      for (int y = y0; y < std::min(56, y0 + h); ++y)
        for (int x = x0; x < std::min(56, x0 + w); ++x) p.at(x, y) = std::max(p.at(x, y), u(rng));
    }
    const auto hm = heatmap_from(p, 2.0);
    constexpr int kPred = 19, kArea = 21;
    bool tumor[kPred][kArea];
    for (int i = 0; i < kPred; ++i) {
      const auto lab = binarize_and_label(hm, (i + 1) / 20.0);
      for (int j = 0; j < kArea; ++j) tumor[i][j] = classify_section(lab, 40.0 * j).label == SectionLabel::Tumor;
    }
    bool ok = true;
    for (int i = 0; i < kPred; ++i)
      for (int j = 0; j < kArea; ++j) {
        if (i > 0 && tumor[i][j] && !tumor[i - 1][j]) ok = false;
        if (j > 0 && tumor[i][j] && !tumor[i][j - 1]) ok = false;
      }
    monotone += ok;
  }
  return {agree == kComponentMasks && monotone == kMonotoneHeatmaps,
          std::to_string(agree) + "/" + std::to_string(kComponentMasks) + " masks match flood fill, " +
              std::to_string(monotone) + "/" + std::to_string(kMonotoneHeatmaps) + " heatmaps monotone"};
}

// ---------------------------------------------------------------------------
// 8. Grid search against an exhaustive oracle

std::vector<EvalSection> random_sections(int n, std::mt19937_64& rng) {
  std::vector<EvalSection> out;
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::uniform_int_distribution<int> pos(0, 35), side(1, 12), blobs(0, 3);
  for (int i = 0; i < n; ++i) {
    Raster<float> p(48, 48);
    for (auto& v : p.data) v = 0.1f * u(rng);
    for (int b = blobs(rng); b > 0; --b) {
      const int x0 = pos(rng), y0 = pos(rng), w = side(rng), h = side(rng);
      const float strength = 0.2f + 0.8f * u(rng);
      for (int y = y0; y < std::min(48, y0 + h); ++y)
        for (int x = x0; x < std::min(48, x0 + w); ++x) p.at(x, y) = strength;
    }
    EvalSection s;
    s.section_id = "s" + std::to_string(i);
    s.truth = u(rng) < 0.5f ? SectionLabel::Tumor : SectionLabel::Normal;
    s.heatmap = heatmap_from(p, 4.0);
    out.push_back(std::move(s));
  }
  return out;
}

/// Exhaustive nested loop: flood-fill each thresholded heatmap, apply the
/// area rule, score, keep the best cell (F, then sensitivity, then lower
/// area_t, then lower pred_t).
std::vector<ScoreRow> oracle_table(const std::vector<EvalSection>& sections, const std::vector<double>& pred_grid,
                                   const std::vector<double>& area_grid, double beta, ScoreRow& best) {
  std::vector<ScoreRow> table;
  bool have = false;
  auto sens = [](const ConfusionCounts& c) { return c.tp + c.fn == 0 ? -1.0 : double(c.tp) / (c.tp + c.fn); };
  for (double pt : pred_grid)
    for (double at : area_grid) {
      ConfusionCounts c;
      for (const auto& s : sections) {
        Mask m(s.heatmap.probs.width, s.heatmap.probs.height);
        for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = s.heatmap.probs.data[i] >= pt ? 1 : 0;
        bool tumor = false;
        for (long long a : flood_fill(m, true).areas) tumor = tumor || a * s.heatmap.mpp_eff * s.heatmap.mpp_eff >= at;
        const bool truth = s.truth == SectionLabel::Tumor;
        c.tp += truth && tumor;
        c.fp += !truth && tumor;
        c.tn += !truth && !tumor;
        c.fn += truth && !tumor;
      }
      const double p = c.tp + c.fp == 0 ? 0.0 : double(c.tp) / (c.tp + c.fp);
      const double r = c.tp + c.fn == 0 ? 0.0 : double(c.tp) / (c.tp + c.fn);
      const double b2 = beta * beta;
      const double f = (b2 * p + r) == 0.0 ? 0.0 : (1 + b2) * p * r / (b2 * p + r);
      const ScoreRow row{{pt, at}, c, f};
      table.push_back(row);
      const auto key = [&](const ScoreRow& x) {
        return std::make_tuple(x.f_beta, sens(x.counts), -x.thresholds.area_t, -x.thresholds.pred_t);
      };
      if (!have || key(row) > key(best)) {
        best = row;
        have = true;
      }
    }
  return table;
}

Outcome criterion_grid_search() {
  const std::vector<double> pred = {0.1, 0.3, 0.5, 0.7, 0.9};
  const std::vector<double> area = {0.0, 640.0, 1280.0, 3840.0, 8000.0};
  std::mt19937_64 rng(8);
  int matched = 0;
  constexpr int kTrials = 10;
  for (int trial = 0; trial < kTrials; ++trial) {
    const auto sections = random_sections(kGridSections, rng);
    ScoreRow best;
    const auto table = oracle_table(sections, pred, area, 1.5, best);
    const auto r = grid_search(sections, pred, area, 1.5);
    bool ok = r.best_row.thresholds == best.thresholds && r.best_row.counts == best.counts &&
              r.best == best.thresholds && r.table.size() == table.size();
    for (std::size_t i = 0; ok && i < table.size(); ++i)
      ok = r.table[i].thresholds == table[i].thresholds && r.table[i].counts == table[i].counts &&
           std::abs(r.table[i].f_beta - table[i].f_beta) <= 1e-12;
    matched += ok;
  }
  auto contains = [](const std::vector<double>& g, double v) {
    return std::any_of(g.begin(), g.end(), [&](double x) { return std::abs(x - v) < 1e-12; });
  };
  bool grids = true;
  for (double v : {0.45, 0.60, 0.65}) grids = grids && contains(default_pred_grid(), v);
  for (double v : {2560.0, 3840.0, 5120.0, 8960.0}) grids = grids && contains(default_area_grid(), v);
  return {matched == kTrials && grids, std::to_string(matched) + "/" + std::to_string(kTrials) +
                                           " trials of 20 sections x 5x5 equal the oracle, default grids " +
                                           (grids ? "contain" : "miss") + " the reference thresholds"};
}

// ---------------------------------------------------------------------------
// 9-11. Synthetic end-to-end run

RunConfig desk_config() {
  RunConfig cfg;
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{{"seed", "1"},
                                                                             {"encoder", "ResNet34"},
                                                                             {"head", "DeepSupervision"},
                                                                             {"depth", "4"},
                                                                             {"patch_size", "64"},
                                                                             {"width_multiplier", "0.25"},
                                                                             {"epochs", "15"},
                                                                             {"batch_size", "16"},
                                                                             {"lr0", "0.002"},
                                                                             {"mag_divisor", "2"},
                                                                             {"prevalence", "0.5"},
                                                                             {"sections_per_slide", "4"}})
    cfg.set(k, v);
  return cfg;
}

constexpr int kSlides = 30, kTrainSlides = 14, kValSlides = 6;

struct EndToEnd {
  bool ran = false;
  fs::path checkpoint;
  ThresholdPair thresholds;
  std::vector<SlideBundle> test;
  std::vector<SectionLabel> full_labels;
};

EndToEnd e2e;

fs::path work_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("histoseg_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Outcome criterion_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = desk_config();
  const auto root = work_dir("e2e");
  const auto dirs = generate_dataset(cfg.synth, kSlides, root / "data");
  auto bundles = load_bundles(dirs);
  const std::vector<SlideBundle> train_b(bundles.begin(), bundles.begin() + kTrainSlides);
  const std::vector<SlideBundle> val_b(bundles.begin() + kTrainSlides, bundles.begin() + kTrainSlides + kValSlides);
  e2e.test.assign(bundles.begin() + kTrainSlides + kValSlides, bundles.end());
  progress("generated " + std::to_string(kSlides) + " slides in " + fmt(seconds_since(t0)) + " s");

  const auto data = build_training_data(train_b, cfg);
  const auto val = build_validation_patches(val_b, cfg);
  progress(std::to_string(data.plan.specs.size()) + " patches, " + std::to_string(data.plan.total()) +
           " after re-sampling, " + std::to_string(val.size()) + " validation patches");
  SegModel<float> model(cfg.model);
  const auto reports = train(model, TrainingSet{&data.slides, &data.plan}, val, cfg.train, root / "run",
                             [](const EpochReport& r) {
                               progress("epoch " + std::to_string(r.epoch) + " loss " + fmt(r.mean_loss, 4) +
                                        " val IoU " + fmt(r.val_iou) + " (" + fmt(r.seconds) + " s)");
                             });
  double best_iou = 0.0;
  for (const auto& r : reports) best_iou = std::max(best_iou, r.val_iou);

  std::vector<fs::path> candidates;
  for (const auto& r : select_top_epochs(reports, cfg.pipeline.top_epochs)) candidates.push_back(r.checkpoint);
  const auto sel = select_thresholds(candidates, val_b, cfg.pipeline, default_pred_grid(), default_area_grid());
  progress("selected " + sel.checkpoint.filename().string() + " pred_t " + fmt(sel.grid.best.pred_t) + " area_t " +
           fmt(sel.grid.best.area_t) + " val F " + fmt(sel.grid.best_row.f_beta));

  auto chosen = load_model(sel.checkpoint);
  const auto sections = compute_eval_sections(chosen, e2e.test, cfg.pipeline);
  const auto labels = classify_sections(sections, sel.grid.best);
  ConfusionCounts c;
  for (std::size_t i = 0; i < sections.size(); ++i) c.add(sections[i].truth, labels[i]);
  const auto m = metrics(c);
  const double accuracy = m.accuracy.value_or(0.0), sensitivity = m.sensitivity.value_or(0.0);
  const int n = static_cast<int>(sections.size());
  const double elapsed = seconds_since(t0);

  e2e.ran = true;
  e2e.checkpoint = sel.checkpoint;
  e2e.thresholds = sel.grid.best;
  e2e.full_labels = labels;

  const bool pass = best_iou >= kMinValIou && accuracy >= kMinAccuracy && sensitivity >= kMinSensitivity &&
                    n >= kMinTestSections && elapsed <= kE2eBudgetSeconds;
  return {pass, "val IoU " + fmt(best_iou) + " (>= " + fmt(kMinValIou) + "), test accuracy " + fmt(accuracy) +
                    " sensitivity " + fmt(sensitivity) + " (>= " + fmt(kMinAccuracy) + ") on " + std::to_string(n) +
                    " sections (tp " + std::to_string(c.tp) + " fp " + std::to_string(c.fp) + " tn " +
                    std::to_string(c.tn) + " fn " + std::to_string(c.fn) + "), " + fmt(elapsed) + " s (<= " +
                    fmt(kE2eBudgetSeconds) + ")"};
}

Outcome criterion_truncated() {
  if (!e2e.ran) return {false, "needs the end-to-end run (criterion 9)"};
  const auto cfg = desk_config();
  auto model = load_model(e2e.checkpoint);
  auto timed = [&](std::optional<int> truncate, std::vector<EvalSection>& out) {
    double best = 1e300;
    for (int rep = 0; rep < 2; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      out = compute_eval_sections(model, e2e.test, cfg.pipeline, truncate);
      best = std::min(best, seconds_since(t0));
    }
    return best;
  };
  std::vector<EvalSection> full, psi0;
  const double t_full = timed(std::nullopt, full);
  const double t_psi0 = timed(0, psi0);
  const auto full_labels = classify_sections(full, e2e.thresholds);
  const auto psi0_labels = classify_sections(psi0, e2e.thresholds);
  int agree = 0;
  for (std::size_t i = 0; i < full_labels.size(); ++i) agree += full_labels[i] == psi0_labels[i];
  const double agreement = full_labels.empty() ? 0.0 : static_cast<double>(agree) / full_labels.size();
  const double speedup = 1.0 - t_psi0 / t_full;
  return {agreement >= kMinTruncAgreement && speedup >= kMinTruncSpeedup,
          "psi0 agrees on " + std::to_string(agree) + "/" + std::to_string(full_labels.size()) + " sections (" +
              fmt(agreement) + " >= " + fmt(kMinTruncAgreement) + "), full " + fmt(t_full) + " s vs psi0 " +
              fmt(t_psi0) + " s, " + fmt(100.0 * speedup) + "% faster (>= " + fmt(100.0 * kMinTruncSpeedup) + "%)"};
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Relative path -> bytes for every regular file under root.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

Outcome criterion_determinism() {
  auto cfg = desk_config();
  const auto root = work_dir("determinism");

  // Synthetic data: the full end-to-end dataset, twice.
  generate_dataset(cfg.synth, kSlides, root / "a");
  generate_dataset(cfg.synth, kSlides, root / "b");
  const auto ta = tree_bytes(root / "a"), tb = tree_bytes(root / "b");
  const bool data_same = ta == tb && ta.size() == static_cast<std::size_t>(kSlides) * 4 + 1;

  // Training: a shortened run of the same model with augmentation, twice.
  cfg.set("epochs", "2");
  const auto bundles = load_bundles(list_bundle_dirs(root / "a"));
  const std::vector<SlideBundle> train_b(bundles.begin(), bundles.begin() + 3);
  const std::vector<SlideBundle> val_b(bundles.begin() + 3, bundles.begin() + 4);
  const std::vector<SlideBundle> test_b(bundles.begin() + 4, bundles.begin() + 6);
  const auto val = build_validation_patches(val_b, cfg);
  std::vector<std::vector<EpochReport>> curves;
  std::vector<std::vector<EvalSection>> heatmaps;
  for (int run = 0; run < 2; ++run) {
    const auto data = build_training_data(train_b, cfg);
    SegModel<float> model(cfg.model);
    curves.push_back(train(model, TrainingSet{&data.slides, &data.plan}, val, cfg.train));
    heatmaps.push_back(compute_eval_sections(model, test_b, cfg.pipeline));
    if (run == 0) {
      // Same model, second inference pass.
      heatmaps.push_back(compute_eval_sections(model, test_b, cfg.pipeline));
      for (const auto& s : heatmaps.back()) write_heatmap(root / "hm_a", s.section_id, s.heatmap, "m", std::nullopt);
    } else {
      for (const auto& s : heatmaps.back()) write_heatmap(root / "hm_b", s.section_id, s.heatmap, "m", std::nullopt);
    }
  }
  bool curves_same = curves[0].size() == curves[1].size();
  for (std::size_t i = 0; curves_same && i < curves[0].size(); ++i)
    curves_same = curves[0][i].mean_loss == curves[1][i].mean_loss && curves[0][i].val_iou == curves[1][i].val_iou;

  bool heatmaps_same = true;
  for (std::size_t h = 1; h < heatmaps.size(); ++h) {
    heatmaps_same = heatmaps_same && heatmaps[h].size() == heatmaps[0].size();
    for (std::size_t i = 0; heatmaps_same && i < heatmaps[0].size(); ++i)
      heatmaps_same = heatmaps[h][i].heatmap.probs.data == heatmaps[0][i].heatmap.probs.data;
  }
  heatmaps_same = heatmaps_same && !heatmaps[0].empty() && tree_bytes(root / "hm_a") == tree_bytes(root / "hm_b");

  std::string losses;
  for (const auto& r : curves[0]) losses += (losses.empty() ? "" : ",") + fmt(r.mean_loss, 6);
  return {data_same && curves_same && heatmaps_same,
          std::string("data ") + (data_same ? "identical" : "DIFFERENT") + " (" + std::to_string(ta.size()) +
              " files), loss curve " + (curves_same ? "identical" : "DIFFERENT") + " [" + losses + "], heatmaps " +
              (heatmaps_same ? "identical" : "DIFFERENT") + " (" + std::to_string(heatmaps[0].size()) + " sections)"};
}

struct Criterion {
  int id;
  std::string title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", criterion_gradients},
      {2, "shape ladder", criterion_shape_ladder},
      {3, "linear merge special case", criterion_linear_merge},
      {4, "focal loss", criterion_focal},
      {5, "balancing table and unbalance", criterion_balancing},
      {6, "tiling", criterion_tiling},
      {7, "connected components and area rule", criterion_components},
      {8, "threshold grid search", criterion_grid_search},
      {9, "synthetic end-to-end run", criterion_end_to_end},
      {10, "truncated-decoder inference", criterion_truncated},
      {11, "determinism", criterion_determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.count(10)) wanted.insert(9);

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    std::cerr << "[" << c.id << "] " << c.title << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.title.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
