// Compression drivers: int8 quantization (dynamic, static, QAT), fp16
// conversion, global magnitude pruning, pruning-aware knowledge
// distillation, and the two accuracy-constrained searches.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vaecomp/eval.hpp"
#include "vaecomp/train.hpp"

#include "json.hpp"

namespace vaecomp {

struct AccuracyConstraint {
  std::string metric = "auroc";
  double threshold = 0.0;

  void validate() const;
};

// Returns the model's AUROC on the caller's evaluation bundle.
using Evaluator = std::function<double(const Model&)>;

// Weights qint8 per-tensor symmetric; activation scales recomputed per
// batch at inference.
Model dynamic_quantize(const Model& model);

// As dynamic, plus activation qparams frozen from min/max observed over
// the calibration batches.
Model static_quantize(const Model& model, const std::vector<Array>& calib_batches);

// Folds batchnorm into the preceding conv/deconv, returning a BN-free
// model with identical inference outputs.
Model fold_batchnorm(const Model& model);

// BN fold, fake-quant fine-tune (straight-through gradients), then
// finalize weights and activation qparams to qint8.
Model qat_quantize(const Model& model, const Array& data, const TrainConfig& cfg);

Model to_fp16_model(const Model& model);

// Masks the floor(pct*K/100) smallest-|value| scalars across all prunable
// tensors (ties broken by lower global flat index). Existing masks are
// replaced; masked values are set to zero.
void global_magnitude_prune(ParamStore& params, double sparsity_pct);

Model pruned_copy(const Model& model, double sparsity_pct);

// Fraction of prunable scalars equal to zero.
double measured_sparsity(const ParamStore& params);

// Per prunable tensor, in store order.
std::vector<std::pair<std::string, double>> layer_zero_fractions(const ParamStore& params);

// Removal candidates ranked by zero fraction descending; deeper tensors
// win ties. The first param layer and the latent head are exempt.
std::vector<std::string> removal_candidates(const VaeSpec& spec, const ParamStore& params);
std::string select_removal_layer(const VaeSpec& spec, const ParamStore& params);

// removed is a parameter tensor name ("enc.<i>.weight" removes the layer,
// "enc.<i>.bias" just the bias). Conv removal rescales the preceding
// conv's stride/dilation to reproduce the removed layer's output extent
// (minimal dilation, then minimal stride); linear removal widens the
// preceding linear. The decoder is re-mirrored. Throws if no valid
// stride/dilation pair exists.
VaeSpec build_student_spec(const VaeSpec& spec, const std::string& removed);

// Fresh-initialized student trained with ELBO + kd_lambda * MSE(student
// mu, teacher mu) against the frozen teacher.
Model distill_train(const Model& teacher, const VaeSpec& student_spec, const Array& data,
                    TrainConfig cfg);

struct CandidateRecord {
  std::string spec_id;
  std::string removed_layers;  // ';'-joined, cumulative
  double sparsity_pct = 0;
  std::string dtype = "f32";
  double auroc = 0;
  int64_t param_count = 0;
  int64_t size_bytes = 0;
  int64_t flops = 0;
  double mean_ms = 0, std_ms = 0;  // filled by bench tooling, not searches
  bool selected = false;
};

struct SearchReport {
  std::vector<CandidateRecord> records;
  int selected_index = -1;

  const CandidateRecord& selected() const;
  nlohmann::json to_json() const;
  void save_json(const std::string& path) const;
  void save_csv(const std::string& path) const;
};

// Greedy loop: prune current model 50%, pick a removal target, distill a
// student, evaluate; stops at the first constraint violation. Record 0 is
// the teacher. The KD teacher of each iteration is the previous surviving
// model.
SearchReport prune_aware_kd_search(const Model& teacher, const AccuracyConstraint& constraint,
                                   const TrainConfig& cfg, const Array& data,
                                   const Evaluator& evaluate);

// Also returns the surviving candidate models (index-aligned with
// report.records; records[0] pairs with the teacher).
SearchReport prune_aware_kd_search(const Model& teacher, const AccuracyConstraint& constraint,
                                   const TrainConfig& cfg, const Array& data,
                                   const Evaluator& evaluate, std::vector<Model>* models);

// Bisection over sparsity starting at 50%, re-pruning the original model
// each step; terminates when the bracket is narrower than resolution_pct.
SearchReport binary_sparsity_search(const Model& model, const AccuracyConstraint& constraint,
                                    double resolution_pct, const Evaluator& evaluate);

}  // namespace vaecomp
