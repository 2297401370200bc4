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
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "histoseg/nn/ops.hpp"
#include "histoseg/nn/params.hpp"
#include "histoseg/raster.hpp"

namespace histoseg {

enum class EncoderKind { Baseline, ResNet34 };
enum class HeadKind { Plain, DeepSupervision, LinearMerge };

std::string_view to_string(EncoderKind kind);
std::string_view to_string(HeadKind kind);
EncoderKind parse_encoder_kind(std::string_view name);
HeadKind parse_head_kind(std::string_view name);

/// Channel index of the Tumor class in every two-channel map.
inline constexpr int kTumorChannel = 1;
inline constexpr int kNumClasses = 2;

struct ModelConfig {
  EncoderKind encoder = EncoderKind::ResNet34;
  HeadKind head = HeadKind::DeepSupervision;
  int depth = 5;          // decoder blocks k
  int patch_size = 512;   // P
  double width_multiplier = 1.0;
  double focal_gamma = 2.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
  /// Spatial side of psi_level: (P / 2^k) * 2^(level+1).
  int level_size(int level) const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using nn::NormMode;

template <typename T>
struct DecoderOutputs {
  HeadKind head = HeadKind::Plain;
  std::vector<nn::Var<T>> score_maps;  // psi-hat, level 0 first
  std::vector<nn::Var<T>> prob_maps;   // softmax of score_maps
  nn::Var<T> final;                    // Phi, [N, 2, P, P]
};

/// UNet with a Baseline or ResNet34-style encoder, a k-block bilinear decoder
/// (the last block has no skip connection) and a 1x1 score head per block.
/// Plain and DeepSupervision share one parameter set and read Phi from the
/// last block's head; LinearMerge adds the trainable weights `merge.w`.
template <typename T>
class SegModel {
 public:
  explicit SegModel(ModelConfig cfg);

  SegModel(SegModel&&) noexcept = default;
  SegModel& operator=(SegModel&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// x is [N, 3, P, P]. With `truncate_at = l < k-1` only decoder blocks 0..l
  /// run and Phi is psi_l bilinearly resized to P x P.
  DecoderOutputs<T> forward(const nn::Var<T>& x, NormMode mode, std::optional<int> truncate_at = {});

  /// Head-dependent training loss: focal loss on Phi for Plain/LinearMerge,
  /// the deep-supervision sum for DeepSupervision. `target` is one-hot [N,2,P,P].
  nn::Var<T> loss(const DecoderOutputs<T>& out, const nn::Tensor<T>& target) const;

  /// Channels of the encoder feature map at each resolution level (stem first).
  const std::vector<int>& encoder_channels() const { return enc_channels_; }
  const std::vector<int>& decoder_channels() const { return dec_channels_; }

 private:
  struct ConvBn {
    std::string prefix;
    int stride = 1;
    int pad = 0;
  };
  struct ResidualBlock {
    ConvBn first;
    ConvBn second;
    std::optional<ConvBn> projection;
  };

  ConvBn make_conv_bn(const std::string& prefix, int in, int out, int k, int stride, std::mt19937_64& rng);
  void make_head(const std::string& prefix, int in, std::mt19937_64& rng);
  nn::Var<T> conv_bn(const ConvBn& layer, const nn::Var<T>& x, NormMode mode, bool relu);
  nn::Var<T> head(const std::string& prefix, const nn::Var<T>& x);

  ModelConfig cfg_;
  nn::ParamStore<T> params_;
  ConvBn stem_;
  std::vector<std::vector<ResidualBlock>> resnet_stages_;     // ResNet34 encoder
  std::vector<std::pair<ConvBn, ConvBn>> baseline_blocks_;    // Baseline encoder
  std::vector<std::pair<ConvBn, ConvBn>> decoder_blocks_;
  std::vector<int> enc_channels_;
  std::vector<int> dec_channels_;
};

extern template class SegModel<float>;
extern template class SegModel<double>;

/// Majority-vote block pooling of a one-hot target by `factor`; ties go to Tumor.
template <typename T>
nn::Tensor<T> downsample_target(const nn::Tensor<T>& target, int factor);

/// Sum over levels of focal(psi_l, downsample(y)). Throws UsageError unless
/// the outputs come from a DeepSupervision head.
template <typename T>
nn::Var<T> deep_supervision_loss(const DecoderOutputs<T>& out, const nn::Tensor<T>& target, double gamma);

/// softmax(sum_l w_l * resize(psi-hat_l, P)).
template <typename T>
nn::Var<T> linear_merge(const std::vector<nn::Var<T>>& score_maps, const nn::Var<T>& w, int patch_size);

/// One-hot [N,2,H,W] target from 0/1 tumor masks laid out [N,H,W].
template <typename T>
nn::Tensor<T> one_hot_target(const std::vector<std::uint8_t>& tumor, int n, int h, int w);

/// Stacks equally sized RGB images into an [N,3,H,W] tensor scaled to [-1, 1].
nn::Tensor<float> images_to_tensor(const std::vector<const RgbImage*>& images);

void save_model(const std::filesystem::path& dir, const SegModel<float>& model);
SegModel<float> load_model(const std::filesystem::path& dir);

}  // namespace histoseg
