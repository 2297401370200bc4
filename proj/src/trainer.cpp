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

#include "histoseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "histoseg/errors.hpp"

namespace histoseg {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be > 0");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) throw ConfigError("lr_decay must be in (0, 1]");
  if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
  if (!(val_threshold > 0.0 && val_threshold < 1.0)) throw ConfigError("val_threshold must be in (0, 1)");
  augment_config.validate();
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw UsageError("lr_at: negative epoch");
  return cfg.lr0 * std::pow(cfg.lr_decay, epoch / cfg.lr_decay_every);
}

std::vector<std::size_t> expand_plan(const ResamplePlan& plan) {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(plan.total()));
  for (std::size_t i = 0; i < plan.specs.size(); ++i)
    for (int r = 0; r < plan.repetitions[i]; ++r) out.push_back(i);
  return out;
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::uint8_t> stack_targets(const std::vector<const Mask*>& masks) {
  std::vector<std::uint8_t> out;
  for (const auto* m : masks) out.insert(out.end(), m->data.begin(), m->data.end());
  return out;
}

}  // namespace

double validation_iou(SegModel<float>& model, const std::vector<PatchPixels>& val, double threshold, int batch_size) {
  nn::NoGradGuard guard;
  long long inter = 0, uni = 0;
  for (std::size_t start = 0; start < val.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(val.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const RgbImage*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&val[i].image);
    auto out = model.forward(nn::Var<float>(images_to_tensor(images)), NormMode::Eval);
    const auto& phi = out.final.value();
    for (std::size_t i = start; i < end; ++i) {
      const auto& target = val[i].target;
      const int n = static_cast<int>(i - start);
      for (int y = 0; y < target.height; ++y)
        for (int x = 0; x < target.width; ++x) {
          const bool p = phi.at(n, kTumorChannel, y, x) >= threshold;
          const bool t = target.at(x, y) != 0;
          inter += p && t;
          uni += p || t;
        }
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<EpochReport> train(SegModel<float>& model, const TrainingSet& data, const std::vector<PatchPixels>& val,
                               const TrainConfig& cfg, const std::optional<std::filesystem::path>& checkpoint_root,
                               const std::function<void(const EpochReport&)>& on_epoch) {
  cfg.validate();
  if (data.slides == nullptr || data.plan == nullptr) throw UsageError("train: missing training data");
  const auto order = expand_plan(*data.plan);
  if (order.empty()) throw ValidationError("plan", "no training patches");
  if (val.empty()) throw ValidationError("val", "no validation patches");
  const int patch = model.config().patch_size;
  for (const auto& spec : data.plan->specs) {
    if (spec.size != patch) throw ValidationError("plan", "patch size differs from the model");
    if (spec.slide_index < 0 || spec.slide_index >= static_cast<int>(data.slides->size()))
      throw ValidationError("plan", "slide index out of range");
  }

  std::vector<EpochReport> reports;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> shuffled = order;
    std::mt19937_64 rng(mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    nn::AdamConfig adam;
    adam.lr = lr_at(epoch, cfg);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < shuffled.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(shuffled.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<PatchPixels> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& spec = data.plan->specs[shuffled[i]];
        auto pixels = patch_pixels((*data.slides)[static_cast<std::size_t>(spec.slide_index)], spec);
        if (cfg.augment)
          pixels = augment(pixels, cfg.augment_config, mix(mix(cfg.seed, static_cast<std::uint64_t>(epoch)), i));
        batch.push_back(std::move(pixels));
      }
      std::vector<const RgbImage*> images;
      std::vector<const Mask*> masks;
      for (const auto& b : batch) {
        images.push_back(&b.image);
        masks.push_back(&b.target);
      }
      const int n = static_cast<int>(batch.size());
      const auto target = one_hot_target<float>(stack_targets(masks), n, patch, patch);

      model.params().zero_grad();
      auto out = model.forward(nn::Var<float>(images_to_tensor(images)), NormMode::Train);
      auto loss = model.loss(out, target);
      const double value = loss.value()[0];
      if (!std::isfinite(value))
        throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(steps));
      nn::backward(loss);
      model.params().adam_step(adam);
      loss_sum += value;
      ++steps;
    }

    EpochReport report;
    report.epoch = epoch;
    report.steps = steps;
    report.mean_loss = loss_sum / steps;
    report.val_iou = validation_iou(model, val, cfg.val_threshold);
    if (checkpoint_root) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d", epoch);
      report.checkpoint = *checkpoint_root / name;
      save_model(report.checkpoint, model);
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    reports.push_back(report);
    if (on_epoch) on_epoch(report);
  }
  return reports;
}

std::vector<EpochReport> select_top_epochs(const std::vector<EpochReport>& reports, int n) {
  if (reports.empty()) throw ValidationError("reports", "empty");
  std::vector<EpochReport> sorted = reports;
  std::stable_sort(sorted.begin(), sorted.end(), [](const EpochReport& a, const EpochReport& b) {
    if (a.val_iou != b.val_iou) return a.val_iou > b.val_iou;
    return a.epoch < b.epoch;
  });
  if (static_cast<int>(sorted.size()) > n) sorted.resize(static_cast<std::size_t>(std::max(n, 0)));
  return sorted;
}

void write_reports_json(const std::vector<EpochReport>& reports, const std::filesystem::path& file) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports)
    j.push_back({{"epoch", r.epoch},
                 {"mean_loss", r.mean_loss},
                 {"val_iou", r.val_iou},
                 {"checkpoint", r.checkpoint.string()},
                 {"seconds", r.seconds},
                 {"steps", r.steps}});
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

std::vector<EpochReport> read_reports_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string(), "cannot open");
  std::vector<EpochReport> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j) {
      EpochReport r;
      r.epoch = e.at("epoch").get<int>();
      r.mean_loss = e.at("mean_loss").get<double>();
      r.val_iou = e.at("val_iou").get<double>();
      r.checkpoint = e.at("checkpoint").get<std::string>();
      r.seconds = e.value("seconds", 0.0);
      r.steps = e.value("steps", 0);
      out.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(file.string(), e.what());
  }
  return out;
}

}  // namespace histoseg
