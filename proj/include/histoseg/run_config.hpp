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

#include <filesystem>
#include <string>
#include <vector>

#include "histoseg/segmodel.hpp"
#include "histoseg/synthetic.hpp"
#include "histoseg/trainer.hpp"

namespace histoseg {

struct PipelineConfig {
  int mag_divisor = 2;
  int min_overlap = 0;    // 0 means P/2
  int sample_stride = 0;  // 0 means P/2
  int background_threshold = kDefaultBackgroundThreshold;
  double val_fraction = 0.2;
  double beta = 1.5;
  double pred_t = 0.5;
  double area_t = 3840.0;
  int top_epochs = 5;

  int overlap_for(int patch_size) const { return min_overlap > 0 ? min_overlap : patch_size / 2; }
  int stride_for(int patch_size) const { return sample_stride > 0 ? sample_stride : patch_size / 2; }
  void validate() const;
};

/// Everything a pipeline run reads from the flat `key = value` file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  PipelineConfig pipeline;

  /// `seed` sets the model, training and synthesis seeds together.
  /// Throws ConfigError on unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
};

/// Lines are `key = value`; `#` starts a comment. Throws LoadError when the
/// file cannot be read and ConfigError naming the line otherwise.
RunConfig load_run_config(const std::filesystem::path& file);
void apply_run_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<text>");

std::vector<std::string> run_config_keys();

}  // namespace histoseg
