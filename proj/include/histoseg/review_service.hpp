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
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "histoseg/segmodel.hpp"
#include "histoseg/slide_io.hpp"

namespace httplib {
class Server;
}

namespace histoseg {

struct ReviewRecord {
  std::string slide_id;
  SectionRecord section;
  std::optional<std::string> reviewer;
  std::optional<std::string> note;
  std::optional<std::string> updated_at;

  /// corrected_label if set, else predicted_label.
  std::optional<SectionLabel> effective_label() const;
  friend bool operator==(const ReviewRecord&, const ReviewRecord&) = default;
};

struct SlideSummary {
  std::string slide_id;
  int n_sections = 0;
  int n_corrected = 0;
};

/// Inference settings for on-demand heatmaps.
struct LiveModel {
  std::filesystem::path checkpoint;
  int mag_divisor = 2;
  int min_overlap = 0;  // 0 means P/2
};

/// Section labels of every bundle under a data root plus an append-only
/// journal (`review_journal.jsonl`) of label changes replayed on open.
class ReviewStore {
 public:
  explicit ReviewStore(std::filesystem::path data_root, std::optional<LiveModel> live = std::nullopt);
  ~ReviewStore();

  std::vector<SlideSummary> list_slides() const;
  /// Throws NotFoundError.
  std::vector<ReviewRecord> list_sections(const std::string& slide_id) const;
  ReviewRecord section(const std::string& section_id) const;

  /// Sets corrected_label and journals the change unless the record already
  /// holds exactly this label and note. Throws NotFoundError.
  ReviewRecord set_label(const std::string& section_id, SectionLabel label, const std::string& reviewer,
                         const std::optional<std::string>& note = std::nullopt);

  /// `slide_id,section_id,predicted,effective,changed` with a header row.
  std::string export_csv() const;

  std::vector<std::uint8_t> section_image_png(const std::string& section_id) const;
  /// Pre-rendered `heatmap_<id>.png` from `<root>/heatmaps` or
  /// `<root>/<slide>/heatmaps`, else computed by the live model. Throws
  /// NotFoundError when neither exists.
  std::vector<std::uint8_t> heatmap_png(const std::string& section_id) const;

  const std::filesystem::path& journal_path() const { return journal_path_; }
  std::size_t journal_entries() const;

 private:
  struct Slot {
    std::filesystem::path dir;
    ReviewRecord record;
  };
  void apply_event(const nlohmann::json& event);
  const Slot& slot(const std::string& section_id) const;

  std::filesystem::path root_;
  std::filesystem::path journal_path_;
  std::optional<LiveModel> live_;
  mutable std::shared_mutex mutex_;
  mutable std::mutex model_mutex_;
  mutable std::unique_ptr<SegModel<float>> model_;
  std::vector<std::string> slide_order_;
  std::map<std::string, std::vector<std::string>> slide_sections_;
  std::map<std::string, Slot> slots_;
  std::size_t journal_entries_ = 0;
};

nlohmann::json to_json(const ReviewRecord& record);

/// HTTP front end:
///   GET  /api/slides
///   GET  /api/slides/{id}/sections
///   GET  /api/sections/{id}/image.png
///   GET  /api/sections/{id}/heatmap.png
///   POST /api/sections/{id}/label   {"label": ..., "reviewer": ..., "note": ...}
///   GET  /api/export.csv
class ReviewServer {
 public:
  explicit ReviewServer(ReviewStore& store);
  ~ReviewServer();

  /// Binds to `port` (0 picks a free port) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  ReviewStore& store_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace histoseg
