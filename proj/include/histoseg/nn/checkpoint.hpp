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

#include <json.hpp>

#include "histoseg/nn/params.hpp"

namespace histoseg::nn {

inline constexpr const char* kCheckpointMagic = "HSEG1";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kBlobFile = "weights.bin";

/// Writes `dir/manifest.json` (magic, step, model config, tensor table with
/// byte offsets) and `dir/weights.bin` (flat little-endian float32 blob of
/// parameters followed by buffers).
void save_checkpoint(const std::filesystem::path& dir, const ParamStore<float>& store,
                     const nlohmann::json& model_config);

/// Parses and checks the manifest magic.
nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir);

/// Fills an already-built store; every tensor must exist with the same shape.
void load_checkpoint_tensors(const std::filesystem::path& dir, ParamStore<float>& store);

}  // namespace histoseg::nn
