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

#include "histoseg/cli.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "histoseg/errors.hpp"
#include "histoseg/evaluation.hpp"
#include "histoseg/inference.hpp"
#include "histoseg/nn/checkpoint.hpp"
#include "histoseg/pipeline.hpp"
#include "histoseg/review_service.hpp"
#include "histoseg/run_config.hpp"
#include "histoseg/synthetic.hpp"
#include "histoseg/trainer.hpp"

#ifndef HISTOSEG_VERSION
#define HISTOSEG_VERSION "dev"
#endif

namespace histoseg {

namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "Flat key = value configuration file");
    app->add_option("--set", sets, "Override one configuration key (KEY=VALUE, repeatable)");
  }

  RunConfig load() const {
    RunConfig cfg = file.empty() ? RunConfig{} : load_run_config(file);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

void write_json(const fs::path& file, const nlohmann::json& j) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string(), "cannot open");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(file.string(), e.what());
  }
}

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json metrics_json(const ConfusionCounts& c, double beta) {
  const auto m = metrics(c);
  return {{"tp", c.tp},
          {"fp", c.fp},
          {"tn", c.tn},
          {"fn", c.fn},
          {"accuracy", optional_number(m.accuracy)},
          {"sensitivity", optional_number(m.sensitivity)},
          {"specificity", optional_number(m.specificity)},
          {"precision", optional_number(m.precision)},
          {"recall", optional_number(m.recall)},
          {"beta", beta},
          {"f_beta", f_beta(c, beta)}};
}

/// Checkpoints named by --model: a checkpoint directory, or a training run
/// directory whose reports pick the top epochs.
std::vector<fs::path> resolve_checkpoints(const fs::path& model, int top) {
  if (fs::exists(model / "manifest.json")) return {model};
  if (fs::exists(model / "reports.json")) {
    std::vector<fs::path> out;
    for (const auto& r : select_top_epochs(read_reports_json(model / "reports.json"), top)) out.push_back(r.checkpoint);
    return out;
  }
  throw LoadError(model.string(), "neither a checkpoint nor a training run directory");
}

int cmd_gen(const ConfigFlags& flags, const fs::path& out_dir, int count, std::optional<std::uint64_t> seed,
            std::ostream& out) {
  auto cfg = flags.load();
  if (seed) cfg.synth.seed = *seed;
  cfg.synth.validate();
  const auto dirs = generate_dataset(cfg.synth, count, out_dir);
  out << "generated " << dirs.size() << " slides in " << out_dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const ConfigFlags& flags, const fs::path& data_dir, const fs::path& out_dir,
              const std::string& val_dir, std::ostream& out) {
  const auto cfg = flags.load();
  cfg.validate();
  auto train_dirs = list_bundle_dirs(data_dir);
  std::vector<fs::path> val_dirs;
  if (!val_dir.empty()) {
    val_dirs = list_bundle_dirs(val_dir);
  } else {
    const auto n = static_cast<int>(train_dirs.size());
    const int n_val = std::max(1, static_cast<int>(std::lround(cfg.pipeline.val_fraction * n)));
    if (n - n_val < 1) throw ValidationError("data", "need at least two slides to split off validation");
    val_dirs.assign(train_dirs.end() - n_val, train_dirs.end());
    train_dirs.resize(static_cast<std::size_t>(n - n_val));
  }
  if (train_dirs.empty()) throw ValidationError("data", "no slide bundles");
  if (val_dirs.empty()) throw ValidationError("val", "no slide bundles");

  const auto train_bundles = load_bundles(train_dirs);
  const auto val_bundles = load_bundles(val_dirs);
  const auto data = build_training_data(train_bundles, cfg);
  const auto val = build_validation_patches(val_bundles, cfg);
  fs::create_directories(out_dir);
  write_plan_csv(data.plan, out_dir / "plan.csv");
  out << "patches " << data.plan.specs.size() << ", after re-sampling " << data.plan.total()
      << ", pixel unbalance " << data.unbalance_before << " -> " << data.unbalance_after << '\n';

  SegModel<float> model(cfg.model);
  const TrainingSet set{&data.slides, &data.plan};
  const auto reports = train(model, set, val, cfg.train, out_dir, [&](const EpochReport& r) {
    out << "epoch " << r.epoch << " loss " << r.mean_loss << " val_iou " << r.val_iou << " (" << r.seconds << " s)\n";
    out.flush();
  });
  write_reports_json(reports, out_dir / "reports.json");
  return kExitOk;
}

int cmd_select(const ConfigFlags& flags, const fs::path& model_path, const fs::path& val_dir,
               std::optional<double> beta, const fs::path& out_file, std::string table, std::ostream& out) {
  auto cfg = flags.load();
  if (beta) cfg.pipeline.beta = *beta;
  cfg.pipeline.validate();
  const auto checkpoints = resolve_checkpoints(model_path, cfg.pipeline.top_epochs);
  const auto val = load_bundles(list_bundle_dirs(val_dir));
  const auto sel = select_thresholds(checkpoints, val, cfg.pipeline, default_pred_grid(), default_area_grid());
  if (table.empty()) table = (out_file.parent_path() / "score_table.csv").string();
  if (fs::path(table).has_parent_path()) fs::create_directories(fs::path(table).parent_path());
  write_score_table_csv(sel.grid.table, table);
  const auto& c = sel.grid.best_row.counts;
  write_json(out_file, {{"checkpoint", sel.checkpoint.string()},
                        {"pred_t", sel.grid.best.pred_t},
                        {"area_t", sel.grid.best.area_t},
                        {"beta", cfg.pipeline.beta},
                        {"f_beta", sel.grid.best_row.f_beta},
                        {"tp", c.tp},
                        {"fp", c.fp},
                        {"tn", c.tn},
                        {"fn", c.fn}});
  out << "selected " << sel.checkpoint.string() << " pred_t " << sel.grid.best.pred_t << " area_t "
      << sel.grid.best.area_t << " F" << cfg.pipeline.beta << " " << sel.grid.best_row.f_beta << '\n';
  return kExitOk;
}

int cmd_infer(const ConfigFlags& flags, const fs::path& model_path, const fs::path& slide_dir,
              std::optional<int> truncate, const fs::path& out_dir, std::ostream& out) {
  const auto cfg = flags.load();
  cfg.pipeline.validate();
  auto model = load_model(model_path);
  if (truncate && (*truncate < 0 || *truncate >= model.config().depth))
    throw ValidationError("truncate", "must be in [0, " + std::to_string(model.config().depth - 1) + "]");
  const auto bundle = load_slide_bundle(slide_dir);
  const auto slide =
      prepare_slide(bundle, cfg.pipeline.mag_divisor, static_cast<std::uint8_t>(cfg.pipeline.background_threshold));
  const int overlap = cfg.pipeline.overlap_for(model.config().patch_size);
  const std::string model_id = fs::absolute(model_path).lexically_normal().filename().string();
  for (const auto& s : bundle.sections) {
    const auto hm = predict_heatmap(model, slide, scale_bbox(s.bbox, cfg.pipeline.mag_divisor, slide.image.width,
                                                             slide.image.height),
                                    overlap, truncate);
    write_heatmap(out_dir, s.section_id, hm, model_id, truncate);
  }
  out << "wrote " << bundle.sections.size() << " heatmaps to " << out_dir.string() << '\n';
  return kExitOk;
}

int cmd_classify(const ConfigFlags& flags, const fs::path& heatmap_dir, std::optional<double> pred_t,
                 std::optional<double> area_t, const std::string& thresholds, const std::string& slide_dir,
                 const fs::path& out_file, std::ostream& out) {
  auto cfg = flags.load();
  ThresholdPair t{cfg.pipeline.pred_t, cfg.pipeline.area_t};
  if (!thresholds.empty()) {
    const auto j = read_json(thresholds);
    t.pred_t = j.at("pred_t").get<double>();
    t.area_t = j.at("area_t").get<double>();
  }
  if (pred_t) t.pred_t = *pred_t;
  if (area_t) t.area_t = *area_t;
  if (!(t.pred_t > 0.0 && t.pred_t < 1.0)) throw ValidationError("pred-t", "must be in (0, 1)");
  if (!(t.area_t >= 0.0)) throw ValidationError("area-t", "must be >= 0");

  std::vector<std::string> ids;
  std::optional<SlideBundle> bundle;
  if (!slide_dir.empty()) {
    bundle = load_slide_bundle(slide_dir);
    for (const auto& s : bundle->sections) ids.push_back(s.section_id);
  } else {
    if (!fs::is_directory(heatmap_dir)) throw LoadError(heatmap_dir.string(), "not a directory");
    for (const auto& e : fs::directory_iterator(heatmap_dir)) {
      const auto name = e.path().filename().string();
      if (name.rfind("heatmap_", 0) == 0 && e.path().extension() == ".json")
        ids.push_back(name.substr(8, name.size() - 8 - 5));
    }
    std::sort(ids.begin(), ids.end());
  }

  std::ostringstream csv;
  csv << "section_id,predicted,n_regions,largest_region_um2\n";
  std::map<std::string, SectionLabel> labels;
  int tumors = 0;
  for (const auto& id : ids) {
    const auto labeling = binarize_and_label(read_heatmap(heatmap_dir, id), t.pred_t);
    const auto decision = classify_section(labeling, t.area_t);
    double largest = 0.0;
    for (const auto& r : labeling.regions) largest = std::max(largest, r.area_um2);
    labels[id] = decision.label;
    tumors += decision.label == SectionLabel::Tumor;
    csv << id << ',' << to_string(decision.label) << ',' << labeling.regions.size() << ',' << largest << '\n';
  }
  if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
  std::ofstream f(out_file);
  if (!f) throw Error("cannot write " + out_file.string());
  f << csv.str();
  if (bundle) {
    auto sections = bundle->sections;
    for (auto& s : sections) s.predicted_label = labels.at(s.section_id);
    save_sections(sections, slide_dir);
  }
  out << ids.size() << " sections, " << tumors << " Tumor (pred_t " << t.pred_t << ", area_t " << t.area_t << ")\n";
  return kExitOk;
}

int cmd_metrics(const fs::path& predictions, const fs::path& data_dir, double beta, const std::string& out_file,
                std::ostream& out) {
  std::map<std::string, SectionLabel> truth;
  for (const auto& b : load_bundles(list_bundle_dirs(data_dir)))
    for (const auto& s : b.sections)
      if (s.truth_label) truth[s.section_id] = *s.truth_label;
  std::ifstream in(predictions);
  if (!in) throw LoadError(predictions.string(), "cannot open");
  std::string line;
  std::getline(in, line);
  ConfusionCounts c;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, label;
    std::getline(ls, id, ',');
    std::getline(ls, label, ',');
    const auto it = truth.find(id);
    if (it == truth.end()) throw ValidationError("section_id", "row " + std::to_string(row) + ": no truth for " + id);
    c.add(it->second, parse_section_label(label, "predicted"));
  }
  const auto j = metrics_json(c, beta);
  if (!out_file.empty()) write_json(out_file, j);
  out << j.dump(2) << '\n';
  return kExitOk;
}

int cmd_serve(const fs::path& data_dir, const std::string& host, int port, const std::string& live_model,
              const ConfigFlags& flags, std::ostream& out) {
  const auto cfg = flags.load();
  std::optional<LiveModel> live;
  if (!live_model.empty()) live = LiveModel{live_model, cfg.pipeline.mag_divisor, cfg.pipeline.min_overlap};
  ReviewStore store(data_dir, live);
  ReviewServer server(store);
  const int bound = server.bind(host, port);
  out << "serving " << data_dir.string() << " on http://" << host << ':' << bound << '\n';
  out.flush();
  server.listen();
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"histoseg: slide segmentation and section classification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("histoseg ") + HISTOSEG_VERSION + " (checkpoint format " +
                                        nn::kCheckpointMagic + ")");
  int threads = 0;
  app.add_option("--threads", threads, "Cap on BLAS worker threads")->check(CLI::PositiveNumber);

  ConfigFlags gen_flags, train_flags, select_flags, infer_flags, classify_flags, serve_flags;
  std::string out_path, data_dir, val_dir, model_path, slide_dir, heatmap_dir, thresholds, table, predictions,
      live_model, host = "127.0.0.1";
  int count = 1, port = 8080;
  std::optional<std::uint64_t> seed;
  std::optional<double> beta, pred_t, area_t;
  double metrics_beta = 1.5;
  std::optional<int> truncate;

  auto* gen = app.add_subcommand("gen", "Generate synthetic slide bundles");
  gen_flags.attach(gen);
  gen->add_option("--out", out_path, "Output directory")->required();
  gen->add_option("--count", count, "Number of slides")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", seed, "Dataset seed");

  auto* tr = app.add_subcommand("train", "Train a model on slide bundles");
  train_flags.attach(tr);
  tr->add_option("--data", data_dir, "Directory of training slide bundles")->required();
  tr->add_option("--val", val_dir, "Directory of validation bundles (default: split off val_fraction)");
  tr->add_option("--out", out_path, "Run directory for checkpoints and reports")->required();

  auto* sel = app.add_subcommand("select", "Grid-search the decision thresholds on validation slides");
  select_flags.attach(sel);
  sel->add_option("--model", model_path, "Checkpoint or training run directory")->required();
  sel->add_option("--val", val_dir, "Directory of validation bundles")->required();
  sel->add_option("--beta", beta, "F-beta weight of recall");
  sel->add_option("--out", out_path, "Thresholds JSON file")->required();
  sel->add_option("--table", table, "Score table CSV (default: score_table.csv next to --out)");

  auto* inf = app.add_subcommand("infer", "Write section heatmaps for one slide");
  infer_flags.attach(inf);
  inf->add_option("--model", model_path, "Checkpoint directory")->required();
  inf->add_option("--slide", slide_dir, "Slide bundle directory")->required();
  inf->add_option("--truncate", truncate, "Evaluate decoder blocks 0..L only");
  inf->add_option("--out", out_path, "Heatmap output directory")->required();

  auto* cls = app.add_subcommand("classify", "Classify sections from heatmaps");
  classify_flags.attach(cls);
  cls->add_option("--heatmaps", heatmap_dir, "Directory of heatmap_<id>.png/.json pairs")->required();
  cls->add_option("--pred-t", pred_t, "Prediction threshold");
  cls->add_option("--area-t", area_t, "Tumor-area threshold in square microns");
  cls->add_option("--thresholds", thresholds, "Thresholds JSON written by select");
  cls->add_option("--slide", slide_dir, "Slide bundle whose sections to classify; predictions are saved into it");
  cls->add_option("--out", out_path, "Predictions CSV")->required();

  auto* met = app.add_subcommand("metrics", "Section-level metrics of predictions against truth labels");
  met->add_option("--predictions", predictions, "Predictions CSV written by classify")->required();
  met->add_option("--data", data_dir, "Directory of slide bundles with truth labels")->required();
  met->add_option("--beta", metrics_beta, "F-beta weight of recall")->check(CLI::PositiveNumber);
  met->add_option("--out", out_path, "Metrics JSON file");

  auto* srv = app.add_subcommand("serve", "Serve the review API");
  serve_flags.attach(srv);
  srv->add_option("--data", data_dir, "Directory of slide bundles")->required();
  srv->add_option("--port", port, "TCP port (0 picks a free port)")->check(CLI::Range(0, 65535));
  srv->add_option("--host", host, "Bind address");
  srv->add_option("--live-model", live_model, "Checkpoint for on-demand heatmaps");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success& e) {
    out << (dynamic_cast<const CLI::CallForHelp*>(&e) || dynamic_cast<const CLI::CallForAllHelp*>(&e)
                ? app.help()
                : std::string());
    if (std::string(e.what()).find("histoseg ") == 0) out << e.what() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  if (threads > 0) openblas_set_num_threads(threads);
  try {
    if (*gen) return cmd_gen(gen_flags, out_path, count, seed, out);
    if (*tr) return cmd_train(train_flags, data_dir, out_path, val_dir, out);
    if (*sel) return cmd_select(select_flags, model_path, val_dir, beta, out_path, table, out);
    if (*inf) return cmd_infer(infer_flags, model_path, slide_dir, truncate, out_path, out);
    if (*cls) return cmd_classify(classify_flags, heatmap_dir, pred_t, area_t, thresholds, slide_dir, out_path, out);
    if (*met) return cmd_metrics(predictions, data_dir, metrics_beta, out_path, out);
    if (*srv) return cmd_serve(data_dir, host, port, live_model, serve_flags, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace histoseg
