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

#include "histoseg/segmodel.hpp"

#include <cmath>

#include "histoseg/errors.hpp"
#include "histoseg/nn/checkpoint.hpp"

namespace histoseg {

using nn::Tensor;
using nn::Var;

std::string_view to_string(EncoderKind kind) { return kind == EncoderKind::Baseline ? "Baseline" : "ResNet34"; }

std::string_view to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::Plain: return "Plain";
    case HeadKind::DeepSupervision: return "DeepSupervision";
    case HeadKind::LinearMerge: return "LinearMerge";
  }
  return "?";
}

EncoderKind parse_encoder_kind(std::string_view name) {
  if (name == "Baseline") return EncoderKind::Baseline;
  if (name == "ResNet34") return EncoderKind::ResNet34;
  throw ConfigError("unknown encoder '" + std::string(name) + "' (Baseline|ResNet34)");
}

HeadKind parse_head_kind(std::string_view name) {
  if (name == "Plain") return HeadKind::Plain;
  if (name == "DeepSupervision" || name == "DS") return HeadKind::DeepSupervision;
  if (name == "LinearMerge" || name == "Linear") return HeadKind::LinearMerge;
  throw ConfigError("unknown head '" + std::string(name) + "' (Plain|DeepSupervision|LinearMerge)");
}

namespace {

constexpr int kResNetWidths[] = {64, 128, 256, 512};
constexpr int kResNetBlocks[] = {3, 4, 6, 3};
constexpr int kStemChannels = 64;
constexpr int kMaxResNetDepth = 5;

}  // namespace

void ModelConfig::validate() const {
  if (depth < 2) throw ConfigError("depth k must be >= 2, got " + std::to_string(depth));
  if (encoder == EncoderKind::ResNet34 && depth > kMaxResNetDepth)
    throw ConfigError("ResNet34 encoder supports depth k <= 5, got " + std::to_string(depth));
  if (depth > 20) throw ConfigError("depth k too large");
  const long long divisor = 1LL << (depth + 1);
  if (patch_size <= 0 || patch_size % divisor != 0)
    throw ConfigError("patch_size " + std::to_string(patch_size) + " must be a positive multiple of 2^(k+1) = " +
                      std::to_string(divisor));
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0))
    throw ConfigError("width_multiplier must be in (0, 1]");
  if (!(focal_gamma >= 0.0) || !std::isfinite(focal_gamma)) throw ConfigError("focal_gamma must be >= 0");
}

int ModelConfig::level_size(int level) const { return (patch_size >> depth) << (level + 1); }

nlohmann::json ModelConfig::to_json() const {
  return {{"encoder", std::string(to_string(encoder))},
          {"head", std::string(to_string(head))},
          {"depth", depth},
          {"patch_size", patch_size},
          {"width_multiplier", width_multiplier},
          {"focal_gamma", focal_gamma},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.encoder = parse_encoder_kind(j.at("encoder").get<std::string>());
    cfg.head = parse_head_kind(j.at("head").get<std::string>());
    cfg.depth = j.at("depth").get<int>();
    cfg.patch_size = j.at("patch_size").get<int>();
    cfg.width_multiplier = j.at("width_multiplier").get<double>();
    cfg.focal_gamma = j.at("focal_gamma").get<double>();
    cfg.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

template <typename T>
typename SegModel<T>::ConvBn SegModel<T>::make_conv_bn(const std::string& prefix, int in, int out, int k, int stride,
                                                       std::mt19937_64& rng) {
  // He-normal, fan-in.
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (in * k * k)));
  Tensor<T> w({out, in, k, k});
  for (auto& v : w.vec()) v = static_cast<T>(normal(rng));
  params_.add(prefix + ".weight", std::move(w));
  params_.add(prefix + ".bn.gamma", Tensor<T>({out}, T{1}));
  params_.add(prefix + ".bn.beta", Tensor<T>({out}, T{0}));
  params_.add_buffer(prefix + ".bn.running_mean", Tensor<T>({out}, T{0}));
  params_.add_buffer(prefix + ".bn.running_var", Tensor<T>({out}, T{1}));
  return ConvBn{prefix, stride, k / 2};
}

template <typename T>
void SegModel<T>::make_head(const std::string& prefix, int in, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / in));
  Tensor<T> w({kNumClasses, in, 1, 1});
  for (auto& v : w.vec()) v = static_cast<T>(normal(rng));
  params_.add(prefix + ".weight", std::move(w));
  params_.add(prefix + ".bias", Tensor<T>({kNumClasses}, T{0}));
}

template <typename T>
SegModel<T>::SegModel(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const int k = cfg_.depth;
  auto scaled = [&](int c) { return std::max(1, static_cast<int>(std::lround(c * cfg_.width_multiplier))); };

  const int c0 = scaled(kStemChannels);
  stem_ = make_conv_bn("stem", 3, c0, 7, 2, rng);
  enc_channels_.push_back(c0);

  if (cfg_.encoder == EncoderKind::ResNet34) {
    int in = c0;
    for (int s = 1; s < k; ++s) {
      const int out = scaled(kResNetWidths[s - 1]);
      std::vector<ResidualBlock> stage;
      for (int b = 0; b < kResNetBlocks[s - 1]; ++b) {
        const std::string p = "enc" + std::to_string(s) + ".block" + std::to_string(b);
        const int stride = (b == 0 && s > 1) ? 2 : 1;
        ResidualBlock block;
        block.first = make_conv_bn(p + ".conv1", in, out, 3, stride, rng);
        block.second = make_conv_bn(p + ".conv2", out, out, 3, 1, rng);
        if (stride != 1 || in != out) block.projection = make_conv_bn(p + ".proj", in, out, 1, stride, rng);
        stage.push_back(std::move(block));
        in = out;
      }
      resnet_stages_.push_back(std::move(stage));
      enc_channels_.push_back(out);
    }
  } else {
    int in = c0;
    for (int s = 1; s < k; ++s) {
      const int out = in * 2;
      const std::string p = "enc" + std::to_string(s);
      auto first = make_conv_bn(p + ".conv1", in, out, 3, 2, rng);
      auto second = make_conv_bn(p + ".conv2", out, out, 3, 1, rng);
      baseline_blocks_.emplace_back(first, second);
      enc_channels_.push_back(out);
      in = out;
    }
  }

  const int bottleneck = enc_channels_.back();
  int in = bottleneck;
  for (int level = 0; level < k; ++level) {
    const int skip = level < k - 1 ? enc_channels_[k - 2 - level] : 0;
    const int out = std::max(1, bottleneck >> (level + 1));
    const std::string p = "dec" + std::to_string(level);
    auto first = make_conv_bn(p + ".conv1", in + skip, out, 3, 1, rng);
    auto second = make_conv_bn(p + ".conv2", out, out, 3, 1, rng);
    decoder_blocks_.emplace_back(first, second);
    make_head("head" + std::to_string(level), out, rng);
    dec_channels_.push_back(out);
    in = out;
  }
  if (cfg_.head == HeadKind::LinearMerge) params_.add("merge.w", Tensor<T>({k}, static_cast<T>(1.0 / k)));
}

template <typename T>
Var<T> SegModel<T>::conv_bn(const ConvBn& layer, const Var<T>& x, NormMode mode, bool apply_relu) {
  auto y = nn::conv2d(x, params_.param(layer.prefix + ".weight").var, layer.stride, layer.pad);
  y = nn::batch_norm(y, params_.param(layer.prefix + ".bn.gamma").var, params_.param(layer.prefix + ".bn.beta").var,
                     params_.buffer(layer.prefix + ".bn.running_mean").value,
                     params_.buffer(layer.prefix + ".bn.running_var").value, mode);
  return apply_relu ? nn::relu(y) : y;
}

template <typename T>
Var<T> SegModel<T>::head(const std::string& prefix, const Var<T>& x) {
  auto y = nn::conv2d(x, params_.param(prefix + ".weight").var, 1, 0);
  return nn::add_channel_bias(y, params_.param(prefix + ".bias").var);
}

template <typename T>
DecoderOutputs<T> SegModel<T>::forward(const Var<T>& x, NormMode mode, std::optional<int> truncate_at) {
  const int k = cfg_.depth;
  const int p = cfg_.patch_size;
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != p || s[3] != p)
    throw ShapeError("model input must be [N,3," + std::to_string(p) + "," + std::to_string(p) + "], got " +
                     nn::shape_string(s));
  const int last = truncate_at.value_or(k - 1);
  if (last < 0 || last >= k) throw UsageError("truncate_at must be in [0, k-1]");

  std::vector<Var<T>> features;
  Var<T> h = conv_bn(stem_, x, mode, true);
  features.push_back(h);
  if (cfg_.encoder == EncoderKind::ResNet34) {
    for (std::size_t st = 0; st < resnet_stages_.size(); ++st) {
      if (st == 0) h = nn::max_pool(h, 3, 2, 1);
      for (const auto& block : resnet_stages_[st]) {
        auto y = conv_bn(block.first, h, mode, true);
        y = conv_bn(block.second, y, mode, false);
        auto shortcut = block.projection ? conv_bn(*block.projection, h, mode, false) : h;
        h = nn::relu(nn::add(y, shortcut));
      }
      features.push_back(h);
    }
  } else {
    for (const auto& [first, second] : baseline_blocks_) {
      h = conv_bn(first, h, mode, true);
      h = conv_bn(second, h, mode, true);
      features.push_back(h);
    }
  }

  DecoderOutputs<T> out;
  out.head = cfg_.head;
  for (int level = 0; level <= last; ++level) {
    h = nn::upsample_bilinear(h, h.shape()[2] * 2, h.shape()[3] * 2);
    if (level < k - 1) h = nn::concat_channels(h, features[k - 2 - level]);
    h = conv_bn(decoder_blocks_[level].first, h, mode, true);
    h = conv_bn(decoder_blocks_[level].second, h, mode, true);
    auto score = head("head" + std::to_string(level), h);
    out.prob_maps.push_back(nn::softmax_channels(score));
    out.score_maps.push_back(std::move(score));
  }

  if (last < k - 1) {
    out.final = nn::upsample_bilinear(out.prob_maps.back(), p, p);
  } else if (cfg_.head == HeadKind::LinearMerge) {
    out.final = linear_merge(out.score_maps, params_.param("merge.w").var, p);
  } else {
    out.final = out.prob_maps.back();
  }
  return out;
}

template <typename T>
Var<T> SegModel<T>::loss(const DecoderOutputs<T>& out, const Tensor<T>& target) const {
  if (cfg_.head == HeadKind::DeepSupervision) return deep_supervision_loss(out, target, cfg_.focal_gamma);
  return nn::focal_loss(out.final, target, cfg_.focal_gamma);
}

template <typename T>
Tensor<T> downsample_target(const Tensor<T>& target, int factor) {
  const auto& s = target.shape();
  if (s.size() != 4 || s[1] != kNumClasses) throw ShapeError("downsample_target: expected [N,2,H,W]");
  if (factor < 1 || s[2] % factor != 0 || s[3] % factor != 0)
    throw ShapeError("downsample_target: factor " + std::to_string(factor) + " does not divide " +
                     nn::shape_string(s));
  if (factor == 1) return target;
  const int oh = s[2] / factor, ow = s[3] / factor;
  Tensor<T> out({s[0], kNumClasses, oh, ow});
  const int window = factor * factor;
  for (int n = 0; n < s[0]; ++n)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        int tumor = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            tumor += target.at(n, kTumorChannel, y * factor + dy, x * factor + dx) > T{0.5} ? 1 : 0;
        const bool is_tumor = 2 * tumor >= window;
        out.at(n, kTumorChannel, y, x) = is_tumor ? T{1} : T{0};
        out.at(n, 1 - kTumorChannel, y, x) = is_tumor ? T{0} : T{1};
      }
  return out;
}

template <typename T>
Var<T> deep_supervision_loss(const DecoderOutputs<T>& out, const Tensor<T>& target, double gamma) {
  if (out.head != HeadKind::DeepSupervision)
    throw UsageError("deep_supervision_loss requires a DeepSupervision head, got " +
                     std::string(to_string(out.head)));
  const int p = target.shape().at(2);
  Var<T> total;
  for (const auto& prob : out.prob_maps) {
    const int factor = p / prob.shape()[2];
    auto term = nn::focal_loss(prob, downsample_target(target, factor), gamma);
    total = total.defined() ? nn::add(total, term) : term;
  }
  return total;
}

template <typename T>
Var<T> linear_merge(const std::vector<Var<T>>& score_maps, const Var<T>& w, int patch_size) {
  if (score_maps.size() != w.value().size())
    throw ShapeError("linear_merge: " + std::to_string(score_maps.size()) + " score maps but " +
                     std::to_string(w.value().size()) + " weights");
  std::vector<Var<T>> resized;
  resized.reserve(score_maps.size());
  for (const auto& m : score_maps) resized.push_back(nn::upsample_bilinear(m, patch_size, patch_size));
  return nn::softmax_channels(nn::weighted_sum(resized, w));
}

template <typename T>
Tensor<T> one_hot_target(const std::vector<std::uint8_t>& tumor, int n, int h, int w) {
  if (tumor.size() != static_cast<std::size_t>(n) * h * w) throw ShapeError("one_hot_target: size mismatch");
  Tensor<T> out({n, kNumClasses, h, w});
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const bool t = tumor[(static_cast<std::size_t>(b) * h + y) * w + x] != 0;
        out.at(b, kTumorChannel, y, x) = t ? T{1} : T{0};
        out.at(b, 1 - kTumorChannel, y, x) = t ? T{0} : T{1};
      }
  return out;
}

nn::Tensor<float> images_to_tensor(const std::vector<const RgbImage*>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: empty batch");
  const int h = images[0]->height, w = images[0]->width;
  Tensor<float> out({static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = *images[n];
    if (img.width != w || img.height != h || img.channels != 3) throw ShapeError("images_to_tensor: mixed sizes");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.at(static_cast<int>(n), c, y, x) = img.at(x, y, c) / 127.5f - 1.0f;
  }
  return out;
}

void save_model(const std::filesystem::path& dir, const SegModel<float>& model) {
  nn::save_checkpoint(dir, model.params(), model.config().to_json());
}

SegModel<float> load_model(const std::filesystem::path& dir) {
  const auto manifest = nn::read_checkpoint_manifest(dir);
  SegModel<float> model(ModelConfig::from_json(manifest.at("model")));
  nn::load_checkpoint_tensors(dir, model.params());
  return model;
}

template class SegModel<float>;
template class SegModel<double>;
template Tensor<float> downsample_target(const Tensor<float>&, int);
template Tensor<double> downsample_target(const Tensor<double>&, int);
template Var<float> deep_supervision_loss(const DecoderOutputs<float>&, const Tensor<float>&, double);
template Var<double> deep_supervision_loss(const DecoderOutputs<double>&, const Tensor<double>&, double);
template Var<float> linear_merge(const std::vector<Var<float>>&, const Var<float>&, int);
template Var<double> linear_merge(const std::vector<Var<double>>&, const Var<double>&, int);
template Tensor<float> one_hot_target(const std::vector<std::uint8_t>&, int, int, int);
template Tensor<double> one_hot_target(const std::vector<std::uint8_t>&, int, int, int);

}  // namespace histoseg
