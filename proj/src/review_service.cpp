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

#include "histoseg/review_service.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include <httplib.h>

#include "histoseg/errors.hpp"
#include "histoseg/inference.hpp"
#include "histoseg/png_io.hpp"
#include "histoseg/sampler.hpp"
#include "histoseg/synthetic.hpp"

namespace histoseg {

std::optional<SectionLabel> ReviewRecord::effective_label() const {
  return section.corrected_label ? section.corrected_label : section.predicted_label;
}

namespace {

nlohmann::json label_json(const std::optional<SectionLabel>& label) {
  return label ? nlohmann::json(std::string(to_string(*label))) : nlohmann::json(nullptr);
}

nlohmann::json optional_json(const std::optional<std::string>& s) {
  return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

}  // namespace

nlohmann::json to_json(const ReviewRecord& r) {
  const auto& s = r.section;
  return {{"slide_id", r.slide_id},
          {"section_id", s.section_id},
          {"bbox", {s.bbox.x0, s.bbox.y0, s.bbox.x1, s.bbox.y1}},
          {"truth_label", label_json(s.truth_label)},
          {"predicted_label", label_json(s.predicted_label)},
          {"corrected_label", label_json(s.corrected_label)},
          {"effective_label", label_json(r.effective_label())},
          {"reviewer", optional_json(r.reviewer)},
          {"note", optional_json(r.note)},
          {"updated_at", optional_json(r.updated_at)}};
}

ReviewStore::ReviewStore(std::filesystem::path data_root, std::optional<LiveModel> live)
    : root_(std::move(data_root)), journal_path_(root_ / "review_journal.jsonl"), live_(std::move(live)) {
  for (const auto& dir : list_bundle_dirs(root_)) {
    const auto bundle = load_slide_bundle(dir);
    if (slide_sections_.count(bundle.slide_id)) throw ValidationError("slide_id", "duplicate " + bundle.slide_id);
    slide_order_.push_back(bundle.slide_id);
    auto& ids = slide_sections_[bundle.slide_id];
    for (const auto& s : bundle.sections) {
      if (slots_.count(s.section_id)) throw ValidationError("section_id", "duplicate " + s.section_id);
      ids.push_back(s.section_id);
      slots_[s.section_id] = Slot{dir, ReviewRecord{bundle.slide_id, s, {}, {}, {}}};
    }
  }
  std::sort(slide_order_.begin(), slide_order_.end());
  std::ifstream in(journal_path_);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      apply_event(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(journal_path_.string(), "line " + std::to_string(line_no) + ": " + e.what());
    }
    ++journal_entries_;
  }
}

ReviewStore::~ReviewStore() = default;

void ReviewStore::apply_event(const nlohmann::json& event) {
  const auto id = event.at("section_id").get<std::string>();
  auto it = slots_.find(id);
  if (it == slots_.end()) throw LoadError(journal_path_.string(), "unknown section " + id);
  auto& r = it->second.record;
  r.section.corrected_label = parse_section_label(event.at("label").get<std::string>());
  r.reviewer = event.at("reviewer").get<std::string>();
  r.note = event.at("note").is_null() ? std::nullopt : std::optional(event.at("note").get<std::string>());
  r.updated_at = event.at("timestamp").get<std::string>();
}

const ReviewStore::Slot& ReviewStore::slot(const std::string& section_id) const {
  auto it = slots_.find(section_id);
  if (it == slots_.end()) throw NotFoundError("unknown section " + section_id);
  return it->second;
}

std::vector<SlideSummary> ReviewStore::list_slides() const {
  std::shared_lock lock(mutex_);
  std::vector<SlideSummary> out;
  for (const auto& id : slide_order_) {
    SlideSummary s{id, 0, 0};
    for (const auto& sid : slide_sections_.at(id)) {
      ++s.n_sections;
      s.n_corrected += slots_.at(sid).record.section.corrected_label.has_value();
    }
    out.push_back(s);
  }
  return out;
}

std::vector<ReviewRecord> ReviewStore::list_sections(const std::string& slide_id) const {
  std::shared_lock lock(mutex_);
  auto it = slide_sections_.find(slide_id);
  if (it == slide_sections_.end()) throw NotFoundError("unknown slide " + slide_id);
  std::vector<ReviewRecord> out;
  for (const auto& sid : it->second) out.push_back(slots_.at(sid).record);
  return out;
}

ReviewRecord ReviewStore::section(const std::string& section_id) const {
  std::shared_lock lock(mutex_);
  return slot(section_id).record;
}

ReviewRecord ReviewStore::set_label(const std::string& section_id, SectionLabel label, const std::string& reviewer,
                                    const std::optional<std::string>& note) {
  std::unique_lock lock(mutex_);
  auto it = slots_.find(section_id);
  if (it == slots_.end()) throw NotFoundError("unknown section " + section_id);
  auto& r = it->second.record;
  if (r.section.corrected_label == label && r.note == note) return r;
  const nlohmann::json event = {{"seq", journal_entries_ + 1},
                                {"section_id", section_id},
                                {"slide_id", r.slide_id},
                                {"label", std::string(to_string(label))},
                                {"reviewer", reviewer},
                                {"note", optional_json(note)},
                                {"timestamp", utc_now()}};
  std::ofstream out(journal_path_, std::ios::app);
  if (!out) throw Error("cannot append to " + journal_path_.string());
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw Error("cannot append to " + journal_path_.string());
  apply_event(event);
  ++journal_entries_;
  return r;
}

std::size_t ReviewStore::journal_entries() const {
  std::shared_lock lock(mutex_);
  return journal_entries_;
}

std::string ReviewStore::export_csv() const {
  std::shared_lock lock(mutex_);
  std::ostringstream out;
  out << "slide_id,section_id,predicted,effective,changed\n";
  for (const auto& slide : slide_order_) {
    for (const auto& sid : slide_sections_.at(slide)) {
      const auto& r = slots_.at(sid).record;
      const auto predicted = r.section.predicted_label;
      const auto effective = r.effective_label();
      out << slide << ',' << sid << ',' << (predicted ? to_string(*predicted) : "") << ','
          << (effective ? to_string(*effective) : "") << ',' << (effective != predicted ? "true" : "false") << '\n';
    }
  }
  return out.str();
}

std::vector<std::uint8_t> ReviewStore::section_image_png(const std::string& section_id) const {
  std::filesystem::path dir;
  Rect bbox;
  {
    std::shared_lock lock(mutex_);
    const auto& s = slot(section_id);
    dir = s.dir;
    bbox = s.record.section.bbox;
  }
  const auto bundle = load_slide_bundle(dir);
  return encode_png(crop_reflect(bundle.image, bbox));
}

std::vector<std::uint8_t> ReviewStore::heatmap_png(const std::string& section_id) const {
  std::filesystem::path dir;
  Rect bbox;
  {
    std::shared_lock lock(mutex_);
    const auto& s = slot(section_id);
    dir = s.dir;
    bbox = s.record.section.bbox;
  }
  const std::string name = "heatmap_" + section_id + ".png";
  for (const auto& candidate : {root_ / "heatmaps" / name, dir / "heatmaps" / name}) {
    if (std::filesystem::exists(candidate)) return encode_png(read_png_gray(candidate));
  }
  if (!live_) throw NotFoundError("no heatmap for section " + section_id);
  std::lock_guard model_lock(model_mutex_);
  if (!model_) model_ = std::make_unique<SegModel<float>>(load_model(live_->checkpoint));
  const auto bundle = load_slide_bundle(dir);
  const auto slide = prepare_slide(bundle, live_->mag_divisor);
  const int p = model_->config().patch_size;
  const int overlap = live_->min_overlap > 0 ? live_->min_overlap : p / 2;
  const auto hm = predict_heatmap(*model_, slide, scale_bbox(bbox, live_->mag_divisor, slide.image.width,
                                                              slide.image.height),
                                  overlap);
  return encode_heatmap_png(hm);
}

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json({{"error", message}}).dump(), "application/json");
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ValidationError& e) {
      send_error(res, 400, e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

std::string png_body(const std::vector<std::uint8_t>& bytes) { return std::string(bytes.begin(), bytes.end()); }

}  // namespace

ReviewServer::ReviewServer(ReviewStore& store) : store_(store), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.Get("/api/slides", guarded([this](const httplib::Request&, httplib::Response& res) {
          nlohmann::json j = nlohmann::json::array();
          for (const auto& slide : store_.list_slides())
            j.push_back({{"slide_id", slide.slide_id},
                         {"n_sections", slide.n_sections},
                         {"n_corrected", slide.n_corrected}});
          res.set_content(j.dump(), "application/json");
        }));
  s.Get(R"(/api/slides/([^/]+)/sections)", guarded([this](const httplib::Request& req, httplib::Response& res) {
          nlohmann::json j = nlohmann::json::array();
          for (const auto& r : store_.list_sections(req.matches[1])) j.push_back(to_json(r));
          res.set_content(j.dump(), "application/json");
        }));
  s.Get(R"(/api/sections/([^/]+)/image\.png)", guarded([this](const httplib::Request& req, httplib::Response& res) {
          res.set_content(png_body(store_.section_image_png(req.matches[1])), "image/png");
        }));
  s.Get(R"(/api/sections/([^/]+)/heatmap\.png)", guarded([this](const httplib::Request& req, httplib::Response& res) {
          res.set_content(png_body(store_.heatmap_png(req.matches[1])), "image/png");
        }));
  s.Post(R"(/api/sections/([^/]+)/label)", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const std::string id = req.matches[1];
           store_.section(id);
           const auto body = nlohmann::json::parse(req.body);
           if (!body.contains("label") || !body["label"].is_string())
             throw ValidationError("label", "missing or not a string");
           const auto label = parse_section_label(body["label"].get<std::string>());
           const std::string reviewer = body.value("reviewer", std::string("anonymous"));
           std::optional<std::string> note;
           if (body.contains("note") && !body["note"].is_null()) note = body["note"].get<std::string>();
           res.set_content(to_json(store_.set_label(id, label, reviewer, note)).dump(), "application/json");
         }));
  s.Get("/api/export.csv", guarded([this](const httplib::Request&, httplib::Response& res) {
          res.set_content(store_.export_csv(), "text/csv");
        }));
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void ReviewServer::listen() { server_->listen_after_bind(); }

void ReviewServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace histoseg
