// Experiment manifests and the end-to-end pipeline runner.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaecomp/compress.hpp"
#include "vaecomp/datasynth.hpp"
#include "vaecomp/model_io.hpp"

#include "json.hpp"

namespace vaecomp {

struct StageConfig {
  std::string name;           // synth | train | calibrate | quantize | prune |
                              // distill-search | sparsity-search | target-aware |
                              // detect | eval | bench
  nlohmann::json config;      // stage-specific options
};

struct ExperimentManifest {
  std::string preset;
  std::uint64_t seed = 0;
  std::string artifact_dir;
  AccuracyConstraint constraint;
  std::vector<StageConfig> stages;

  nlohmann::json to_json() const;
  static ExperimentManifest from_json(const nlohmann::json& j);
  static ExperimentManifest load(const std::string& path);

  // FNV-1a over the canonical JSON dump; embedded in artifact file names.
  std::string hash() const;

  void validate() const;
};

// Stage sub-seed: all randomness flows from the manifest seed via labeled
// hashes, so stages re-run independently yet deterministically.
std::uint64_t stage_seed(const ExperimentManifest& m, const std::string& stage_name);

// AUROC of the full beta-VAE detector (per-frame CUSUM scores over the
// test streams), recalibrating the detector for the candidate model.
double evaluate_beta(const Model& model, const BrightnessDataset& ds, int reasoner_k = 3);

// AUROC of the OF detector (summed-KL scores over the labeled test windows).
double evaluate_of(const Model& enc_h, const Model& enc_v, const FlowDataset& ds);

// Executes all stages in order; returns the artifact directory. A stage
// failure writes a failure record there and rethrows.
std::string run_manifest(const ExperimentManifest& m);

}  // namespace vaecomp
