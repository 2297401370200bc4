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
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "histoseg/nn/autograd.hpp"

namespace histoseg::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named trainable tensors (leaf graph nodes whose grad is the parameter
/// gradient) with Adam moments, plus named non-trainable buffers such as
/// batch-norm running statistics. Entries keep their address for the
/// lifetime of the store, and iteration follows insertion order.
template <typename T>
class ParamStore {
 public:
  struct Param {
    std::string name;
    Var<T> var;
    Tensor<T> first_moment;
    Tensor<T> second_moment;
  };
  struct Buffer {
    std::string name;
    Tensor<T> value;
  };

  ParamStore() = default;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Param& add(const std::string& name, Tensor<T> init);
  Buffer& add_buffer(const std::string& name, Tensor<T> init);

  Param& param(const std::string& name);
  const Param& param(const std::string& name) const;
  Buffer& buffer(const std::string& name);
  const Buffer& buffer(const std::string& name) const;
  bool has_param(const std::string& name) const { return param_index_.count(name) != 0; }
  bool has_buffer(const std::string& name) const { return buffer_index_.count(name) != 0; }

  const std::vector<std::unique_ptr<Param>>& params() const { return params_; }
  const std::vector<std::unique_ptr<Buffer>>& buffers() const { return buffers_; }
  std::vector<std::string> param_names() const;

  /// Gradient of a parameter; zeros when nothing reached it.
  Tensor<T> grad(const std::string& name) const;
  void zero_grad();
  std::size_t parameter_count() const;

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  /// Bias-corrected Adam update of every parameter; increments the step counter.
  void adam_step(const AdamConfig& cfg);

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::vector<std::unique_ptr<Buffer>> buffers_;
  std::unordered_map<std::string, std::size_t> param_index_;
  std::unordered_map<std::string, std::size_t> buffer_index_;
  std::int64_t step_ = 0;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace histoseg::nn
