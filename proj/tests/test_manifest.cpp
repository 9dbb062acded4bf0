#include <filesystem>
#include <fstream>

#include "vaecomp/manifest.hpp"

#include "doctest.h"

using namespace vaecomp;

namespace fs = std::filesystem;

namespace {

ExperimentManifest base_manifest(const std::string& dir) {
  ExperimentManifest m;
  m.preset = "desk-beta-vae";
  m.seed = 7;
  m.artifact_dir = dir;
  m.constraint = {"auroc", 0.5};
  return m;
}

std::string temp_dir(const std::string& stem) {
  return (fs::temp_directory_path() / stem).string();
}

bool artifact_exists(const std::string& dir, const std::string& stem, const std::string& h,
                     const std::string& ext) {
  return fs::exists(fs::path(dir) / (stem + "-" + h + ext));
}

}  // namespace

TEST_CASE("manifest JSON round trip") {
  ExperimentManifest m = base_manifest("/tmp/x");
  m.stages = {{"synth", {{"n", 10}}}, {"train", {{"epochs", 2}}}};
  nlohmann::json j = m.to_json();
  ExperimentManifest back = ExperimentManifest::from_json(j);
  CHECK(back.preset == m.preset);
  CHECK(back.seed == m.seed);
  CHECK(back.constraint.threshold == 0.5);
  REQUIRE(back.stages.size() == 2);
  CHECK(back.stages[0].name == "synth");
  CHECK(back.stages[0].config["n"] == 10);
  CHECK(back.to_json() == j);

  const std::string path = temp_dir("man-test.json");
  std::ofstream(path) << j.dump(2);
  ExperimentManifest loaded = ExperimentManifest::load(path);
  CHECK(loaded.to_json() == j);
  fs::remove(path);
  CHECK_THROWS_AS(ExperimentManifest::load(path), Error);
}

TEST_CASE("manifest hash is stable and input-sensitive") {
  ExperimentManifest m = base_manifest("/tmp/x");
  m.stages = {{"synth", {}}, {"train", {}}};
  const std::string h = m.hash();
  CHECK(h.size() == 12);
  CHECK(m.hash() == h);
  ExperimentManifest other = m;
  other.seed = 8;
  CHECK(other.hash() != h);
  other = m;
  other.stages[1].config["epochs"] = 3;
  CHECK(other.hash() != h);
}

TEST_CASE("manifest validation enforces stage ordering") {
  ExperimentManifest m = base_manifest("/tmp/x");
  m.stages = {{"synth", {}}, {"train", {}}, {"calibrate", {}}, {"detect", {}}};
  m.validate();

  ExperimentManifest bad = m;
  bad.stages = {{"frobnicate", {}}};
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("unknown stage"), Error);

  bad = m;
  bad.stages = {{"train", {}}};  // no synth, no dataset
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.stages = {{"train", {{"dataset", "/tmp/ds"}}}};
  bad.validate();  // an explicit dataset path substitutes for synth

  bad = m;
  bad.stages = {{"synth", {}}, {"eval", {}}};  // eval without train
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = m;
  bad.stages = {{"synth", {}}, {"train", {}}, {"detect", {}}};  // detect without calibrate
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = m;
  bad.preset = "no-such-preset";
  CHECK_THROWS_AS(bad.validate(), Error);

  bad = m;
  bad.artifact_dir = "";
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("stage seeds derive from the manifest seed per stage name") {
  ExperimentManifest m = base_manifest("/tmp/x");
  CHECK(stage_seed(m, "synth") != stage_seed(m, "train"));
  ExperimentManifest other = m;
  other.seed = 8;
  CHECK(stage_seed(m, "synth") != stage_seed(other, "synth"));
  CHECK(stage_seed(m, "synth") == stage_seed(m, "synth"));
}

TEST_CASE("tiny end-to-end brightness pipeline produces its artifacts") {
  const std::string dir = temp_dir("man-e2e");
  fs::remove_all(dir);
  ExperimentManifest m = base_manifest(dir);
  m.stages = {{"synth", {{"n", 10}}},
              {"train", {{"epochs", 1}, {"batch_size", 4}}},
              {"calibrate", {{"k", 2}}},
              {"detect", {}},
              {"eval", {}},
              {"bench", {{"n_runs", 10}}}};
  const std::string h = m.hash();
  run_manifest(m);

  CHECK(artifact_exists(dir, "manifest", h, ".json"));
  CHECK(fs::exists(fs::path(dir) / ("dataset-" + h) / "index.json"));
  CHECK(artifact_exists(dir, "model", h, ".vaec"));
  CHECK(artifact_exists(dir, "loss", h, ".csv"));
  CHECK(artifact_exists(dir, "detector", h, ".json"));
  CHECK(artifact_exists(dir, "trace", h, ".csv"));
  CHECK(artifact_exists(dir, "metrics", h, ".json"));
  CHECK(artifact_exists(dir, "roc", h, ".csv"));
  CHECK(artifact_exists(dir, "bench", h, ".json"));
  CHECK(!artifact_exists(dir, "failure", h, ".json"));

  // the metrics file carries a finite auroc
  std::ifstream is(fs::path(dir) / ("metrics-" + h + ".json"));
  nlohmann::json j;
  is >> j;
  CHECK(j["auroc"].get<double>() >= 0.0);
  CHECK(j["auroc"].get<double>() <= 1.0);
  fs::remove_all(dir);
}

TEST_CASE("synth and train alone produce only model and loss artifacts") {
  const std::string dir = temp_dir("man-train-only");
  fs::remove_all(dir);
  ExperimentManifest m = base_manifest(dir);
  m.stages = {{"synth", {{"n", 5}}}, {"train", {{"epochs", 1}, {"batch_size", 2}}}};
  const std::string h = m.hash();
  run_manifest(m);
  CHECK(artifact_exists(dir, "model", h, ".vaec"));
  CHECK(artifact_exists(dir, "loss", h, ".csv"));
  CHECK(!artifact_exists(dir, "detector", h, ".json"));
  CHECK(!artifact_exists(dir, "metrics", h, ".json"));
  fs::remove_all(dir);
}

TEST_CASE("a failing stage writes a failure record and rethrows") {
  const std::string dir = temp_dir("man-fail");
  fs::remove_all(dir);
  ExperimentManifest m = base_manifest(dir);
  // quantized models cannot be pruned again: prune after quantize fails
  m.stages = {{"synth", {{"n", 5}}},
              {"train", {{"epochs", 1}, {"batch_size", 2}}},
              {"quantize", {{"mode", "dynamic"}}},
              {"prune", {{"sparsity", 50.0}}}};
  const std::string h = m.hash();
  CHECK_THROWS_WITH_AS(run_manifest(m), doctest::Contains("stage 'prune' failed"), Error);
  CHECK(artifact_exists(dir, "failure", h, ".json"));
  std::ifstream is(fs::path(dir) / ("failure-" + h + ".json"));
  nlohmann::json j;
  is >> j;
  CHECK(j["stage"] == "prune");
  CHECK(!j["error"].get<std::string>().empty());
  // artifacts from the successful stages survive
  CHECK(artifact_exists(dir, "model", h, ".vaec"));
  fs::remove_all(dir);
}

TEST_CASE("flow pipeline trains both encoders and thresholds on a quantile") {
  const std::string dir = temp_dir("man-flow");
  fs::remove_all(dir);
  ExperimentManifest m = base_manifest(dir);
  m.preset = "desk-of";
  m.stages = {{"synth", {{"n", 4}}},
              {"train", {{"epochs", 1}, {"batch_size", 2}}},
              {"calibrate", {{"quantile", 0.95}}},
              {"eval", {}}};
  const std::string h = m.hash();
  run_manifest(m);
  CHECK(artifact_exists(dir, "model-h", h, ".vaec"));
  CHECK(artifact_exists(dir, "model-v", h, ".vaec"));
  CHECK(artifact_exists(dir, "of-threshold", h, ".json"));
  CHECK(artifact_exists(dir, "metrics", h, ".json"));
  fs::remove_all(dir);
}

TEST_CASE("training from a saved dataset path skips synthesis") {
  const std::string ds_dir = temp_dir("man-ds");
  const std::string dir = temp_dir("man-from-ds");
  fs::remove_all(ds_dir);
  fs::remove_all(dir);
  save_brightness(gen_brightness(3, 5, 32), ds_dir);

  ExperimentManifest m = base_manifest(dir);
  m.stages = {{"train", {{"epochs", 1}, {"batch_size", 2}, {"dataset", ds_dir}}}};
  const std::string h = m.hash();
  run_manifest(m);
  CHECK(artifact_exists(dir, "model", h, ".vaec"));
  fs::remove_all(ds_dir);
  fs::remove_all(dir);
}
