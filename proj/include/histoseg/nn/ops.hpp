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
#include <vector>

#include "histoseg/nn/autograd.hpp"

namespace histoseg::nn {

enum class NormMode { Train, Eval };

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kProbabilityClamp = 1e-7;

/// Cross-correlation of NCHW input with OIkk square weights.
/// Output spatial size is floor((in + 2*padding - k) / stride) + 1.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weights, int stride, int padding);

/// Adds a per-channel bias of shape [C].
template <typename T>
Var<T> add_channel_bias(const Var<T>& input, const Var<T>& bias);

/// Train mode normalizes with biased batch statistics over (N, H, W) and
/// blends the unbiased variance into the running estimates with `momentum`;
/// eval mode uses the running estimates.
template <typename T>
Var<T> batch_norm(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, NormMode mode, double momentum = kBatchNormMomentum,
                  double eps = kBatchNormEpsilon);

template <typename T>
Var<T> relu(const Var<T>& input);

/// Max pooling with -inf padding; gradient goes to the first maximum in
/// window scan order (lowest linear index).
template <typename T>
Var<T> max_pool(const Var<T>& input, int kernel = 3, int stride = 2, int padding = 1);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

/// Half-pixel-centre bilinear resampling: src = (dst + 0.5) * in / out - 0.5,
/// clamped to the valid range.
template <typename T>
Var<T> upsample_bilinear(const Var<T>& input, int out_height, int out_width);

/// Max-subtracted softmax over the channel axis of an NCHW tensor.
template <typename T>
Var<T> softmax_channels(const Var<T>& input);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, double factor);

/// Sum of all elements, shape [1].
template <typename T>
Var<T> sum(const Var<T>& a);

/// sum_i w[i] * xs[i]; w has shape [xs.size()].
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const Var<T>& w);

/// Mean over pixels of -(1 - p_t)^gamma * log(p_t), p_t = <probs, target>
/// along channels, clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var<T> focal_loss(const Var<T>& probs, const Tensor<T>& target, double gamma);

/// Multiply-accumulates performed by conv2d forward passes (process-wide).
std::uint64_t conv_mac_count();
void reset_conv_mac_count();

}  // namespace histoseg::nn
