// Detection metrics, FLOP accounting, and relative timing benchmarks.
#pragma once

#include <string>
#include <vector>

#include "vaecomp/ood.hpp"

#include "json.hpp"

namespace vaecomp {

struct MetricReport {
  double auroc = 0, tpr = 0, fpr = 0, threshold = 0;
  int64_t n_id = 0, n_ood = 0;

  nlohmann::json to_json() const;
  void save(const std::string& path) const;
};

// Mann-Whitney statistic; higher score = more OOD. Ties count 1/2.
double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores);

// Positives are strict: score > threshold.
std::pair<double, double> tpr_fpr(const std::vector<double>& id_scores,
                                  const std::vector<double>& ood_scores, double threshold);

MetricReport make_metric_report(const std::vector<double>& id_scores,
                                const std::vector<double>& ood_scores, double threshold);

// conv: 2 k^2 in_ch out_ch H_out W_out per sample; linear: 2 in out;
// norm/activation/pool: one op per output element. Encoder + decoder.
int64_t flop_count(const VaeSpec& spec);
int64_t encoder_flop_count(const VaeSpec& spec);
int64_t layer_flop_count(const LayerSpec& l, const std::vector<int64_t>& in);

struct BenchResult {
  double mean_ms = 0, std_ms = 0;
  int n_runs = 0;
};

// Single-threaded repeated encoder forward passes; warm-up runs excluded.
BenchResult benchmark_forward(const Model& model, const Array& batch, int n_runs,
                              int warmup = 3);

// ROC curve points (fpr, tpr) swept over all observed score thresholds.
void write_roc_csv(const std::vector<double>& id_scores, const std::vector<double>& ood_scores,
                   const std::string& path);

}  // namespace vaecomp
