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

#include "histoseg/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "histoseg/errors.hpp"
#include "histoseg/tiling.hpp"

namespace histoseg {

std::string_view to_string(Category c) {
  switch (c) {
    case Category::TumorAbsent: return "T<0.05%";
    case Category::TumorPresent: return "T>=0.05%";
    case Category::TumorDense: return "T>=10%";
    case Category::StromaPresent: return "S>=0.05%";
    case Category::NormalPresent: return "N>=0.05%";
  }
  return "?";
}

std::vector<Category> categorize(const PatchSpec& spec) {
  std::vector<Category> out;
  if (spec.t < kPresenceFraction) out.push_back(Category::TumorAbsent);
  if (spec.t >= kPresenceFraction) out.push_back(Category::TumorPresent);
  if (spec.t >= kDenseFraction) out.push_back(Category::TumorDense);
  if (spec.s >= kPresenceFraction) out.push_back(Category::StromaPresent);
  if (spec.n >= kPresenceFraction) out.push_back(Category::NormalPresent);
  return out;
}

namespace {

bool matches(const PatchSpec& spec, Category c) {
  const auto cats = categorize(spec);
  return std::find(cats.begin(), cats.end(), c) != cats.end();
}

}  // namespace

std::vector<ResampleRule> default_resample_rules(const TableMultipliers& m) {
  auto rule = [](Category c, Rational r) {
    return ResampleRule{std::string(to_string(c)), [c](const PatchSpec& s) { return matches(s, c); }, r};
  };
  return {rule(Category::TumorAbsent, m.tumor_absent), rule(Category::TumorPresent, m.tumor_present),
          rule(Category::TumorDense, m.tumor_dense), rule(Category::StromaPresent, m.stroma_present),
          rule(Category::NormalPresent, m.normal_present)};
}

long long ResamplePlan::total() const {
  long long n = 0;
  for (int r : repetitions) n += r;
  return n;
}

ResamplePlan build_resample_plan(std::vector<PatchSpec> specs, std::vector<ResampleRule> rules, std::uint64_t seed,
                                 Rounding rounding) {
  for (const auto& r : rules) {
    if (r.multiplier.den <= 0 || r.multiplier.num < 0)
      throw ValidationError("multiplier." + r.name, "must be a nonnegative rational");
  }
  ResamplePlan plan;
  plan.repetitions.assign(specs.size(), 1);
  std::mt19937_64 rng(seed);

  if (rounding == Rounding::Stochastic) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      long long reps = 1;
      for (const auto& r : rules) {
        if (!r.predicate(specs[i])) continue;
        const std::int64_t base = r.multiplier.num / r.multiplier.den;
        const double frac = static_cast<double>(r.multiplier.num % r.multiplier.den) / r.multiplier.den;
        const std::int64_t m = base + (unit(rng) < frac ? 1 : 0);
        reps *= m;
      }
      plan.repetitions[i] = static_cast<int>(reps);
    }
  } else {
    for (const auto& r : rules) {
      std::vector<std::size_t> matched;
      for (std::size_t i = 0; i < specs.size(); ++i)
        if (r.predicate(specs[i])) matched.push_back(i);
      const auto count = static_cast<std::int64_t>(matched.size());
      const std::int64_t target = (2 * count * r.multiplier.num + r.multiplier.den) / (2 * r.multiplier.den);
      const std::int64_t base = r.multiplier.num / r.multiplier.den;
      const std::int64_t extra = target - count * base;
      std::shuffle(matched.begin(), matched.end(), rng);
      for (std::size_t j = 0; j < matched.size(); ++j) {
        const std::int64_t m = base + (static_cast<std::int64_t>(j) < extra ? 1 : 0);
        plan.repetitions[matched[j]] = static_cast<int>(plan.repetitions[matched[j]] * m);
      }
    }
  }
  plan.specs = std::move(specs);
  plan.rules = std::move(rules);
  return plan;
}

double pixel_unbalance(const std::vector<PatchSpec>& specs, const std::vector<int>& repetitions) {
  if (specs.size() != repetitions.size()) throw UsageError("pixel_unbalance: size mismatch");
  double tumor = 0.0, other = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const double area = static_cast<double>(specs[i].size) * specs[i].size;
    tumor += repetitions[i] * specs[i].t * area;
    other += repetitions[i] * (1.0 - specs[i].t) * area;
  }
  if (!(tumor > 0.0)) throw ValidationError("t", "no tumor pixels: pixel unbalance is undefined");
  return other / tumor;
}

double pixel_unbalance(const ResamplePlan& plan) { return pixel_unbalance(plan.specs, plan.repetitions); }

void write_plan_csv(const ResamplePlan& plan, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "slide_id,x,y,t,s,n,repetitions\n";
  out.precision(9);
  for (std::size_t i = 0; i < plan.specs.size(); ++i) {
    const auto& s = plan.specs[i];
    out << s.slide_id << ',' << s.x << ',' << s.y << ',' << s.t << ',' << s.s << ',' << s.n << ','
        << plan.repetitions[i] << '\n';
  }
}

SlideRaster prepare_slide(const SlideBundle& bundle, int mag_divisor, std::uint8_t background_threshold) {
  if (mag_divisor < 1) throw ValidationError("mag_divisor", "must be >= 1");
  SlideRaster out;
  out.slide_id = bundle.slide_id;
  out.mag_divisor = mag_divisor;
  out.mpp_eff = bundle.mpp * mag_divisor;
  out.image = downscale_box(bundle.image, mag_divisor);
  out.annotations =
      rasterize_annotations(bundle.annotations, Rect{0, 0, out.image.width, out.image.height}, 1.0 / mag_divisor);
  out.tissue = detect_tissue(out.image, background_threshold).mask;
  return out;
}

namespace {

// Summed-area table with a zero first row and column.
struct Integral {
  int w = 0;
  std::vector<long long> sums;
  template <typename F>
  Integral(int width, int height, F value) : w(width + 1), sums(static_cast<std::size_t>(width + 1) * (height + 1), 0) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        at(x + 1, y + 1) = value(x, y) + at(x, y + 1) + at(x + 1, y) - at(x, y);
  }
  long long& at(int x, int y) { return sums[static_cast<std::size_t>(y) * w + x]; }
  long long box(int x0, int y0, int x1, int y1) const {
    auto get = [&](int x, int y) { return sums[static_cast<std::size_t>(y) * w + x]; };
    return get(x1, y1) - get(x0, y1) - get(x1, y0) + get(x0, y0);
  }
};

}  // namespace

std::vector<PatchSpec> extract_patch_grid(const SlideRaster& slide, int patch_size, int stride, int slide_index) {
  if (patch_size <= 0 || stride <= 0 || stride > patch_size)
    throw ValidationError("stride", "need 0 < stride <= patch size");
  const int w = slide.image.width, h = slide.image.height;
  std::vector<PatchSpec> out;
  if (patch_size > w || patch_size > h) return out;
  const auto& bits = slide.annotations.bits;
  Integral tissue(w, h, [&](int x, int y) { return slide.tissue.at(x, y) ? 1 : 0; });
  Integral tumor(w, h, [&](int x, int y) { return (bits.at(x, y) & AnnotationRaster::kTumor) ? 1 : 0; });
  Integral stroma(w, h, [&](int x, int y) { return (bits.at(x, y) & AnnotationRaster::kStroma) ? 1 : 0; });
  Integral normal(w, h, [&](int x, int y) { return (bits.at(x, y) & AnnotationRaster::kNormal) ? 1 : 0; });
  const double area = static_cast<double>(patch_size) * patch_size;
  for (int y : axis_positions(h, patch_size, stride)) {
    for (int x : axis_positions(w, patch_size, stride)) {
      const int x1 = x + patch_size, y1 = y + patch_size;
      if (tissue.box(x, y, x1, y1) == 0) continue;
      PatchSpec spec;
      spec.slide_id = slide.slide_id;
      spec.slide_index = slide_index;
      spec.x = x;
      spec.y = y;
      spec.size = patch_size;
      spec.t = tumor.box(x, y, x1, y1) / area;
      spec.s = stroma.box(x, y, x1, y1) / area;
      spec.n = normal.box(x, y, x1, y1) / area;
      out.push_back(std::move(spec));
    }
  }
  return out;
}

std::vector<PatchSpec> extract_patch_grid(const SlideBundle& bundle, int patch_size, int stride, int mag_divisor) {
  return extract_patch_grid(prepare_slide(bundle, mag_divisor), patch_size, stride);
}

PatchPixels patch_pixels(const SlideRaster& slide, const PatchSpec& spec) {
  const Rect window{spec.x, spec.y, spec.x + spec.size, spec.y + spec.size};
  PatchPixels out;
  out.image = crop_reflect(slide.image, window);
  out.target = Mask(spec.size, spec.size);
  for (int y = 0; y < spec.size; ++y)
    for (int x = 0; x < spec.size; ++x) {
      const int sx = std::clamp(window.x0 + x, 0, slide.image.width - 1);
      const int sy = std::clamp(window.y0 + y, 0, slide.image.height - 1);
      out.target.at(x, y) = slide.annotations.has(sx, sy, AnnotationRaster::kTumor) ? 1 : 0;
    }
  return out;
}

void AugmentConfig::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!(probability >= 0.0 && probability <= 1.0)) throw ConfigError("augment probability must be in [0,1]");
  if (!finite(rotation_min_deg) || !finite(rotation_max_deg) || rotation_min_deg > rotation_max_deg)
    throw ConfigError("invalid rotation range");
  if (!(scale_min > 0.0) || scale_min > scale_max || !finite(scale_max)) throw ConfigError("invalid scale range");
  if (blur_sigma_min < 0.0 || blur_sigma_min > blur_sigma_max || !finite(blur_sigma_max))
    throw ConfigError("invalid blur range");
  if (brightness < 0.0 || saturation < 0.0 || !finite(brightness) || !finite(saturation))
    throw ConfigError("invalid color jitter");
  if (elastic_grid < 1 || elastic_sigma < 0.0 || !finite(elastic_sigma)) throw ConfigError("invalid elastic settings");
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  return k;
}

void blur(std::vector<double>& img, int w, int h, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int sx = std::clamp(x + i, 0, w - 1);
          acc += k[i + r] * img[(static_cast<std::size_t>(y) * w + sx) * 3 + c];
        }
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int sy = std::clamp(y + i, 0, h - 1);
          acc += k[i + r] * tmp[(static_cast<std::size_t>(sy) * w + x) * 3 + c];
        }
        img[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
}

}  // namespace

PatchPixels augment(const PatchPixels& in, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int w = in.image.width, h = in.image.height;
  if (in.target.width != w || in.target.height != h) throw ShapeError("augment: image/target size mismatch");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto coin = [&] { return unit(rng) < cfg.probability; };
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  // Draw every random quantity in a fixed order.
  const bool do_rotate = coin();
  const double angle = uniform(cfg.rotation_min_deg, cfg.rotation_max_deg) * std::numbers::pi / 180.0;
  const bool do_scale = coin();
  const double zoom = uniform(cfg.scale_min, cfg.scale_max);
  const bool do_elastic = coin();
  const int gx = w / cfg.elastic_grid + 2, gy = h / cfg.elastic_grid + 2;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> field(static_cast<std::size_t>(gx) * gy * 2);
  for (auto& v : field) v = normal(rng) * cfg.elastic_sigma;
  const bool do_blur = coin();
  const double sigma = uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
  const bool do_color = coin();
  const double bright = 1.0 + uniform(-cfg.brightness, cfg.brightness);
  const double sat = 1.0 + uniform(-cfg.saturation, cfg.saturation);

  PatchPixels out = in;
  std::vector<double> img(in.image.data.begin(), in.image.data.end());

  if (do_rotate || do_scale || do_elastic) {
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const double cs = do_rotate ? std::cos(angle) : 1.0;
    const double sn = do_rotate ? std::sin(angle) : 0.0;
    const double inv_zoom = do_scale ? 1.0 / zoom : 1.0;
    std::vector<double> warped(img.size());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double ux = x - cx, uy = y - cy;
        double sx = (cs * ux - sn * uy) * inv_zoom + cx;
        double sy = (sn * ux + cs * uy) * inv_zoom + cy;
        if (do_elastic) {
          const double fx = static_cast<double>(x) / cfg.elastic_grid;
          const double fy = static_cast<double>(y) / cfg.elastic_grid;
          const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
          const double ax = fx - ix, ay = fy - iy;
          for (int d = 0; d < 2; ++d) {
            auto node = [&](int nx, int ny) { return field[(static_cast<std::size_t>(ny) * gx + nx) * 2 + d]; };
            const double v = (1 - ay) * ((1 - ax) * node(ix, iy) + ax * node(ix + 1, iy)) +
                             ay * ((1 - ax) * node(ix, iy + 1) + ax * node(ix + 1, iy + 1));
            (d == 0 ? sx : sy) += v;
          }
        }
        const int nx = std::clamp(static_cast<int>(std::lround(sx)), 0, w - 1);
        const int ny = std::clamp(static_cast<int>(std::lround(sy)), 0, h - 1);
        out.target.at(x, y) = in.target.at(nx, ny);
        const double bx = std::clamp(sx, 0.0, w - 1.0), by = std::clamp(sy, 0.0, h - 1.0);
        const int x0 = static_cast<int>(bx), y0 = static_cast<int>(by);
        const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const double ax = bx - x0, ay = by - y0;
        for (int c = 0; c < 3; ++c) {
          auto px = [&](int xx, int yy) { return img[(static_cast<std::size_t>(yy) * w + xx) * 3 + c]; };
          warped[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
              (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x1, y0)) + ay * ((1 - ax) * px(x0, y1) + ax * px(x1, y1));
        }
      }
    }
    img = std::move(warped);
  }
  if (do_blur && sigma > 0.25) blur(img, w, h, sigma);
  if (do_color) {
    for (std::size_t p = 0; p < img.size(); p += 3) {
      const double gray = (img[p] + img[p + 1] + img[p + 2]) / 3.0;
      for (int c = 0; c < 3; ++c) img[p + c] = (gray + (img[p + c] - gray) * sat) * bright;
    }
  }
  for (std::size_t i = 0; i < img.size(); ++i)
    out.image.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(img[i]), 0L, 255L));
  return out;
}

}  // namespace histoseg
