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
#include <optional>
#include <vector>

#include "histoseg/sampler.hpp"
#include "histoseg/segmodel.hpp"

namespace histoseg {

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  double lr0 = 5e-4;
  double lr_decay = 0.8;
  int lr_decay_every = 5;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augment_config;
  double val_threshold = 0.5;

  /// Throws ConfigError.
  void validate() const;
};

struct EpochReport {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_iou = 0.0;
  std::filesystem::path checkpoint;  // empty when checkpoints are disabled
  double seconds = 0.0;
  int steps = 0;
};

/// lr0 * decay^floor(epoch / every).
double lr_at(int epoch, const TrainConfig& cfg);

/// Training patches: the slides at sampling magnification plus the plan whose
/// specs index into them by `slide_index`.
struct TrainingSet {
  const std::vector<SlideRaster>* slides = nullptr;
  const ResamplePlan* plan = nullptr;
};

/// Plan expanded into one entry per repetition, in patch order.
std::vector<std::size_t> expand_plan(const ResamplePlan& plan);

/// Mean training loss of one epoch is reported together with the IoU of the
/// Tumor channel of Phi (threshold cfg.val_threshold) over all validation
/// patches. Each epoch is checkpointed to `checkpoint_root/epoch_NNN` when a
/// root is given. Throws Error naming the batch on a non-finite loss.
std::vector<EpochReport> train(SegModel<float>& model, const TrainingSet& data, const std::vector<PatchPixels>& val,
                               const TrainConfig& cfg,
                               const std::optional<std::filesystem::path>& checkpoint_root = std::nullopt,
                               const std::function<void(const EpochReport&)>& on_epoch = {});

/// IoU of the thresholded Tumor channel against the targets, accumulated over
/// all patches; 1.0 when both are empty.
double validation_iou(SegModel<float>& model, const std::vector<PatchPixels>& val, double threshold = 0.5,
                      int batch_size = 16);

/// Top-n reports by validation IoU; earlier epochs win ties.
std::vector<EpochReport> select_top_epochs(const std::vector<EpochReport>& reports, int n = 5);

void write_reports_json(const std::vector<EpochReport>& reports, const std::filesystem::path& file);
std::vector<EpochReport> read_reports_json(const std::filesystem::path& file);

}  // namespace histoseg
