// Latent-space OOD statistics: per-dimension KL, reasoner selection, ICP
// p-values, power martingale, CUSUM, and the two detector pipelines.
#pragma once

#include <string>
#include <vector>

#include "vaecomp/runtime.hpp"

#include "json.hpp"

namespace vaecomp {

// kl_i = 1/2 (mu_i^2 + exp(logvar_i) - logvar_i - 1), elementwise.
Array latent_kl_per_dim(const Array& mu, const Array& logvar);

// kl: (N, D) calibration KL matrix. Top-k dims by variance across samples,
// descending; ascending index on ties.
std::vector<int> select_reasoners(const Array& kl, int k);

// p = (#{c in calib : c >= test} + 1) / (N + 1); calib must be sorted.
double icp_pvalue(const std::vector<double>& sorted_calib, double test_score);

// Power martingale step in log space.
double martingale_increment(double p, double epsilon);
double martingale_update(double log_m, double p, double epsilon);

// S' = max(0, S + z - delta)
double cusum_update(double s, double z, double delta);

struct DetectorState {
  std::vector<int> reasoner_dims;
  std::vector<double> calib_scores;  // sorted ascending
  double epsilon = 0.92;
  double log_martingale = 0.0;
  double cusum = 0.0;
  double delta = 0.05;
  double tau = 5.0;

  bool calibrated() const { return !calib_scores.empty() && !reasoner_dims.empty(); }
  nlohmann::json to_json() const;
  static DetectorState from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static DetectorState load(const std::string& path);
};

// Inference-mode encoder pass.
EncoderResult encode(const Model& model, const Array& batch);

// Summed KL over reasoner dims, one score per sample.
std::vector<double> reasoner_scores(const Model& model, const DetectorState& state,
                                    const Array& batch);

// Summed KL over all dims (the VAE KL loss term), one per sample.
std::vector<double> full_kl_scores(const Model& model, const Array& batch);

// Selects reasoners and computes sorted calibration scores; martingale and
// CUSUM start at rest.
DetectorState calibrate(const Model& model, const Array& calib, int k);

struct TraceRow {
  int frame = 0;
  double kl_sum = 0, p = 0, log_m = 0, cusum = 0;
  bool is_ood = false;
};

// Sequential per-frame detection; state evolves across the stream.
std::vector<TraceRow> beta_vae_detect(const Model& model, DetectorState& state,
                                      const Array& frames);

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

struct OfDetection {
  double score = 0;
  bool is_ood = false;
};

// score = sum_i kl_i(h) + sum_i kl_i(v); OOD iff score > tau (strict).
OfDetection of_detect(const Model& enc_h, const Model& enc_v, const Array& window_h,
                      const Array& window_v, double tau);

// Picks (delta, tau) maximizing TPR subject to FPR <= fpr_cap on per-frame
// CUSUM decisions over the given score streams.
void tune_cusum(DetectorState& state, const std::vector<double>& id_scores,
                const std::vector<double>& ood_scores, double fpr_cap = 0.25);

}  // namespace vaecomp
