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

#include "histoseg/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "histoseg/errors.hpp"

namespace histoseg {

void PipelineConfig::validate() const {
  if (mag_divisor < 1) throw ConfigError("mag_divisor must be >= 1");
  if (min_overlap < 0) throw ConfigError("min_overlap must be >= 0");
  if (sample_stride < 0) throw ConfigError("sample_stride must be >= 0");
  if (background_threshold < 1 || background_threshold > 255) throw ConfigError("background_threshold must be in [1,255]");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0,1)");
  if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
  if (!(pred_t > 0.0 && pred_t < 1.0)) throw ConfigError("pred_t must be in (0,1)");
  if (!(area_t >= 0.0)) throw ConfigError("area_t must be >= 0");
  if (top_epochs < 1) throw ConfigError("top_epochs must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": not a number: '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key + ": not a boolean: '" + value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <typename T, typename F>
Setter number(F field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_number<T>(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto s = parse_number<std::uint64_t>(k, v);
         c.model.seed = c.train.seed = c.synth.seed = s;
       }},
      {"encoder",
       [](RunConfig& c, const std::string&, const std::string& v) {
         try {
           c.model.encoder = parse_encoder_kind(v);
         } catch (const Error& e) {
           throw ConfigError(e.what());
         }
       }},
      {"head",
       [](RunConfig& c, const std::string&, const std::string& v) {
         try {
           c.model.head = parse_head_kind(v);
         } catch (const Error& e) {
           throw ConfigError(e.what());
         }
       }},
      {"depth", number<int>([](RunConfig& c) -> int& { return c.model.depth; })},
      {"patch_size", number<int>([](RunConfig& c) -> int& { return c.model.patch_size; })},
      {"width_multiplier", number<double>([](RunConfig& c) -> double& { return c.model.width_multiplier; })},
      {"focal_gamma", number<double>([](RunConfig& c) -> double& { return c.model.focal_gamma; })},
      {"epochs", number<int>([](RunConfig& c) -> int& { return c.train.epochs; })},
      {"batch_size", number<int>([](RunConfig& c) -> int& { return c.train.batch_size; })},
      {"lr0", number<double>([](RunConfig& c) -> double& { return c.train.lr0; })},
      {"lr_decay", number<double>([](RunConfig& c) -> double& { return c.train.lr_decay; })},
      {"lr_decay_every", number<int>([](RunConfig& c) -> int& { return c.train.lr_decay_every; })},
      {"augment",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.augment = parse_bool(k, v); }},
      {"augment_probability",
       number<double>([](RunConfig& c) -> double& { return c.train.augment_config.probability; })},
      {"val_threshold", number<double>([](RunConfig& c) -> double& { return c.train.val_threshold; })},
      {"slide_width", number<int>([](RunConfig& c) -> int& { return c.synth.width; })},
      {"slide_height", number<int>([](RunConfig& c) -> int& { return c.synth.height; })},
      {"mpp", number<double>([](RunConfig& c) -> double& { return c.synth.mpp; })},
      {"magnification", number<double>([](RunConfig& c) -> double& { return c.synth.magnification; })},
      {"sections_per_slide", number<int>([](RunConfig& c) -> int& { return c.synth.sections_per_slide; })},
      {"prevalence", number<double>([](RunConfig& c) -> double& { return c.synth.prevalence; })},
      {"tumor_blobs_min", number<int>([](RunConfig& c) -> int& { return c.synth.tumor_blobs_min; })},
      {"tumor_blobs_max", number<int>([](RunConfig& c) -> int& { return c.synth.tumor_blobs_max; })},
      {"blob_radius_min", number<int>([](RunConfig& c) -> int& { return c.synth.blob_radius_min; })},
      {"blob_radius_max", number<int>([](RunConfig& c) -> int& { return c.synth.blob_radius_max; })},
      {"stipple_density", number<double>([](RunConfig& c) -> double& { return c.synth.stipple_density; })},
      {"distractor_probability",
       number<double>([](RunConfig& c) -> double& { return c.synth.distractor_probability; })},
      {"noise_amplitude", number<int>([](RunConfig& c) -> int& { return c.synth.noise_amplitude; })},
      {"min_section_area", number<long long>([](RunConfig& c) -> long long& { return c.synth.min_section_area; })},
      {"mag_divisor", number<int>([](RunConfig& c) -> int& { return c.pipeline.mag_divisor; })},
      {"min_overlap", number<int>([](RunConfig& c) -> int& { return c.pipeline.min_overlap; })},
      {"sample_stride", number<int>([](RunConfig& c) -> int& { return c.pipeline.sample_stride; })},
      {"background_threshold", number<int>([](RunConfig& c) -> int& { return c.pipeline.background_threshold; })},
      {"val_fraction", number<double>([](RunConfig& c) -> double& { return c.pipeline.val_fraction; })},
      {"beta", number<double>([](RunConfig& c) -> double& { return c.pipeline.beta; })},
      {"pred_t", number<double>([](RunConfig& c) -> double& { return c.pipeline.pred_t; })},
      {"area_t", number<double>([](RunConfig& c) -> double& { return c.pipeline.area_t; })},
      {"top_epochs", number<int>([](RunConfig& c) -> int& { return c.pipeline.top_epochs; })},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown key '" + key + "'");
  it->second(*this, key, value);
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  pipeline.validate();
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

void apply_run_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string(), "cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_run_config_text(cfg, ss.str(), file.string());
  return cfg;
}

}  // namespace histoseg
