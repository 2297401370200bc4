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

#include "histoseg/nn/params.hpp"

#include <cmath>

#include "histoseg/errors.hpp"

namespace histoseg::nn {

template <typename T>
typename ParamStore<T>::Param& ParamStore<T>::add(const std::string& name, Tensor<T> init) {
  if (has_param(name) || has_buffer(name)) throw UsageError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Param>();
  p->name = name;
  p->first_moment = Tensor<T>(init.shape());
  p->second_moment = Tensor<T>(init.shape());
  p->var = Var<T>(std::move(init), true);
  param_index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
typename ParamStore<T>::Buffer& ParamStore<T>::add_buffer(const std::string& name, Tensor<T> init) {
  if (has_param(name) || has_buffer(name)) throw UsageError("duplicate buffer name '" + name + "'");
  auto b = std::make_unique<Buffer>();
  b->name = name;
  b->value = std::move(init);
  buffer_index_[name] = buffers_.size();
  buffers_.push_back(std::move(b));
  return *buffers_.back();
}

template <typename T>
typename ParamStore<T>::Param& ParamStore<T>::param(const std::string& name) {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw NotFoundError("no parameter '" + name + "'");
  return *params_[it->second];
}

template <typename T>
const typename ParamStore<T>::Param& ParamStore<T>::param(const std::string& name) const {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw NotFoundError("no parameter '" + name + "'");
  return *params_[it->second];
}

template <typename T>
typename ParamStore<T>::Buffer& ParamStore<T>::buffer(const std::string& name) {
  auto it = buffer_index_.find(name);
  if (it == buffer_index_.end()) throw NotFoundError("no buffer '" + name + "'");
  return *buffers_[it->second];
}

template <typename T>
const typename ParamStore<T>::Buffer& ParamStore<T>::buffer(const std::string& name) const {
  auto it = buffer_index_.find(name);
  if (it == buffer_index_.end()) throw NotFoundError("no buffer '" + name + "'");
  return *buffers_[it->second];
}

template <typename T>
std::vector<std::string> ParamStore<T>::param_names() const {
  std::vector<std::string> out;
  for (const auto& p : params_) out.push_back(p->name);
  return out;
}

template <typename T>
Tensor<T> ParamStore<T>::grad(const std::string& name) const {
  const auto& p = param(name);
  if (p.var.grad().shape() == p.var.shape()) return p.var.grad();
  return Tensor<T>(p.var.shape());
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) p->var.node()->grad_buffer().fill(T{0});
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->var.value().size();
  return n;
}

template <typename T>
void ParamStore<T>::adam_step(const AdamConfig& cfg) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (auto& p : params_) {
    auto& node = *p->var.node();
    if (node.grad.shape() != node.value.shape()) continue;  // never reached: zero gradient
    T* w = node.value.ptr();
    const T* g = node.grad.ptr();
    T* m = p->first_moment.ptr();
    T* v = p->second_moment.ptr();
    for (std::size_t i = 0; i < node.value.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      w[i] = static_cast<T>(w[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace histoseg::nn
