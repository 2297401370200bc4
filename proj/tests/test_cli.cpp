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

#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "histoseg/cli.hpp"
#include "histoseg/inference.hpp"
#include "histoseg/synthetic.hpp"
#include "test_support.hpp"

using namespace histoseg;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "histoseg");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> small_model() {
  return {"--set", "depth=3", "--set", "patch_size=32", "--set", "width_multiplier=0.125", "--set", "epochs=2",
          "--set", "batch_size=8", "--set", "seed=4"};
}

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("help and version") {
  const auto help = run({"--help"});
  CHECK(help.code == kExitOk);
  CHECK(help.out.find("gen") != std::string::npos);
  CHECK(help.out.find("serve") != std::string::npos);
  const auto version = run({"--version"});
  CHECK(version.code == kExitOk);
  CHECK(version.out.find("histoseg ") == 0);
}

TEST_CASE("usage errors exit with 1") {
  const auto dir = histoseg::testing::temp_dir("cli_usage");
  CHECK(run({"gen", "--out", dir.string(), "--bogus"}).code == kExitValidation);
  CHECK(run({"gen"}).code == kExitValidation);
  CHECK(run({"gen", "--out", dir.string(), "--count", "-1"}).code == kExitValidation);
  const auto unknown_key = run({"gen", "--out", dir.string(), "--set", "no_such_key=3"});
  CHECK(unknown_key.code == kExitValidation);
  CHECK(unknown_key.err.find("no_such_key") != std::string::npos);
  CHECK(run({"gen", "--out", dir.string(), "--set", "prevalence"}).code == kExitValidation);
  CHECK(run({"gen", "--out", dir.string(), "--set", "prevalence=2"}).code == kExitValidation);

  {
    std::ofstream conf(dir / "bad.conf");
    conf << "seed = 1\nwidht = 512\n";
  }
  CHECK(run({"gen", "--out", (dir / "x").string(), "--config", (dir / "bad.conf").string()}).code ==
        kExitValidation);
  CHECK(run({"classify", "--heatmaps", dir.string(), "--pred-t", "1.5", "--out", (dir / "p.csv").string()}).code ==
        kExitValidation);
}

TEST_CASE("missing inputs exit with 2") {
  const auto dir = histoseg::testing::temp_dir("cli_missing");
  const auto r = run({"infer", "--model", (dir / "none").string(), "--slide", (dir / "none").string(), "--out",
                      (dir / "hm").string()});
  CHECK(r.code == kExitFailure);
  CHECK(r.err.find("error:") == 0);
  CHECK(run({"metrics", "--predictions", (dir / "none.csv").string(), "--data", dir.string()}).code == kExitFailure);
}

TEST_CASE("gen writes the requested bundles") {
  const auto dir = histoseg::testing::temp_dir("cli_gen");
  const auto r = run({"gen", "--out", dir.string(), "--count", "2", "--seed", "5"});
  CHECK(r.code == kExitOk);
  CHECK(fs::exists(dir / "slide_000" / "image.png"));
  CHECK(fs::exists(dir / "slide_001" / "sections.json"));
  CHECK_FALSE(fs::exists(dir / "slide_002"));
  CHECK(list_bundle_dirs(dir).size() == 2);
}

TEST_CASE("pipeline smoke run") {
  const auto root = histoseg::testing::temp_dir("cli_pipeline");
  const auto train_dir = root / "train", val_dir = root / "val", run_dir = root / "run";
  REQUIRE(run({"gen", "--out", train_dir.string(), "--count", "3", "--seed", "11"}).code == kExitOk);
  REQUIRE(run({"gen", "--out", val_dir.string(), "--count", "1", "--seed", "12"}).code == kExitOk);

  const auto tr = run(with({"train", "--data", train_dir.string(), "--val", val_dir.string(), "--out", run_dir.string()},
                           small_model()));
  INFO(tr.err);
  REQUIRE(tr.code == kExitOk);
  CHECK(fs::exists(run_dir / "reports.json"));
  CHECK(fs::exists(run_dir / "plan.csv"));
  CHECK(fs::exists(run_dir / "epoch_001" / "manifest.json"));
  CHECK(tr.out.find("epoch 1") != std::string::npos);

  const auto thresholds = root / "thresholds.json";
  const auto sel = run(with({"select", "--model", run_dir.string(), "--val", val_dir.string(), "--out",
                             thresholds.string()},
                            small_model()));
  INFO(sel.err);
  REQUIRE(sel.code == kExitOk);
  const auto tj = nlohmann::json::parse(std::ifstream(thresholds));
  CHECK(tj.contains("pred_t"));
  CHECK(tj.contains("area_t"));
  CHECK(fs::exists(root / "score_table.csv"));
  const std::string checkpoint = tj.at("checkpoint");

  const auto slide = val_dir / "slide_000";
  const auto hm_dir = root / "heatmaps";
  const auto inf = run({"infer", "--model", checkpoint, "--slide", slide.string(), "--out", hm_dir.string()});
  INFO(inf.err);
  REQUIRE(inf.code == kExitOk);
  const auto bundle = load_slide_bundle(slide);
  for (const auto& s : bundle.sections) CHECK(fs::exists(hm_dir / ("heatmap_" + s.section_id + ".png")));
  const auto hm = read_heatmap(hm_dir, bundle.sections[0].section_id);
  CHECK(hm.mpp_eff == doctest::Approx(bundle.mpp * 2));

  const auto truncated_dir = root / "heatmaps_t0";
  CHECK(run({"infer", "--model", checkpoint, "--slide", slide.string(), "--truncate", "0", "--out",
             truncated_dir.string()})
            .code == kExitOk);
  CHECK(run({"infer", "--model", checkpoint, "--slide", slide.string(), "--truncate", "9", "--out",
             truncated_dir.string()})
            .code == kExitValidation);

  const auto predictions = root / "pred.csv";
  const auto cls = run({"classify", "--heatmaps", hm_dir.string(), "--thresholds", thresholds.string(), "--slide",
                        slide.string(), "--out", predictions.string()});
  INFO(cls.err);
  REQUIRE(cls.code == kExitOk);
  for (const auto& s : load_slide_bundle(slide).sections) CHECK(s.predicted_label.has_value());

  const auto metrics_file = root / "metrics.json";
  const auto met = run({"metrics", "--predictions", predictions.string(), "--data", val_dir.string(), "--out",
                        metrics_file.string()});
  INFO(met.err);
  REQUIRE(met.code == kExitOk);
  const auto mj = nlohmann::json::parse(std::ifstream(metrics_file));
  CHECK(mj.at("tp").get<int>() + mj.at("fp").get<int>() + mj.at("tn").get<int>() + mj.at("fn").get<int>() ==
        static_cast<int>(bundle.sections.size()));
}
