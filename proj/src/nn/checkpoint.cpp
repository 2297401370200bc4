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

#include "histoseg/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "histoseg/errors.hpp"

namespace histoseg::nn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void append_le(std::vector<char>& blob, const Tensor<float>& t) {
  const std::size_t start = blob.size();
  blob.resize(start + t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(t[i]);
    for (int b = 0; b < 4; ++b) blob[start + i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
}

void read_le(const std::vector<char>& blob, std::size_t offset, Tensor<float>& t, const std::string& file) {
  if (offset + t.size() * 4 > blob.size()) throw LoadError(file, "blob too short");
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + i * 4 + b])) << (8 * b);
    t[i] = std::bit_cast<float>(bits);
  }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ParamStore<float>& store, const json& model_config) {
  fs::create_directories(dir);
  std::vector<char> blob;
  json tensors = json::array();
  auto record = [&](const std::string& name, const char* kind, const Tensor<float>& t) {
    tensors.push_back({{"name", name}, {"kind", kind}, {"shape", t.shape()}, {"offset", blob.size()}});
    append_le(blob, t);
  };
  for (const auto& p : store.params()) record(p->name, "param", p->var.value());
  for (const auto& b : store.buffers()) record(b->name, "buffer", b->value);
  json manifest = {{"format", kCheckpointMagic}, {"step", store.step()}, {"model", model_config},
                   {"blob", kBlobFile},          {"dtype", "float32-le"}, {"tensors", tensors}};
  {
    std::ofstream out(dir / kManifestFile);
    if (!out) throw Error("cannot write " + (dir / kManifestFile).string());
    out << manifest.dump(2) << '\n';
  }
  std::ofstream out(dir / kBlobFile, std::ios::binary);
  if (!out) throw Error("cannot write " + (dir / kBlobFile).string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

json read_checkpoint_manifest(const fs::path& dir) {
  const fs::path file = dir / kManifestFile;
  std::ifstream in(file);
  if (!in) throw LoadError(file.string(), "cannot open checkpoint manifest");
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(file.string(), e.what());
  }
  if (manifest.value("format", std::string()) != kCheckpointMagic)
    throw LoadError(file.string(), "not an HSEG1 checkpoint");
  return manifest;
}

void load_checkpoint_tensors(const fs::path& dir, ParamStore<float>& store) {
  const json manifest = read_checkpoint_manifest(dir);
  const fs::path blob_file = dir / manifest.value("blob", std::string(kBlobFile));
  std::ifstream in(blob_file, std::ios::binary);
  if (!in) throw LoadError(blob_file.string(), "cannot open checkpoint blob");
  std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t seen = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto kind = entry.at("kind").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    Tensor<float>* target = nullptr;
    if (kind == "param" && store.has_param(name)) target = &store.param(name).var.mutable_value();
    if (kind == "buffer" && store.has_buffer(name)) target = &store.buffer(name).value;
    if (!target) throw LoadError(blob_file.string(), "unexpected tensor '" + name + "'");
    if (target->shape() != shape)
      throw LoadError(blob_file.string(), "shape mismatch for '" + name + "': " + shape_string(shape) + " vs " +
                                              shape_string(target->shape()));
    read_le(blob, offset, *target, blob_file.string());
    ++seen;
  }
  if (seen != store.params().size() + store.buffers().size())
    throw LoadError(blob_file.string(), "checkpoint is missing tensors");
  store.set_step(manifest.value("step", std::int64_t{0}));
}

}  // namespace histoseg::nn
