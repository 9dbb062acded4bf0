#include "vaecomp/compress.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "vaecomp/rng.hpp"

namespace vaecomp {

namespace {

constexpr double kBnEps = 1e-5;

bool is_weight_tensor(const ParamTensor& pt) {
  return pt.prunable && pt.value.shape.size() >= 2;
}

void require_fp32(const Model& model, const char* op) {
  if (model.params.dtype != DType::F32)
    throw Error(std::string(op) + ": expected an fp32 model");
}

}  // namespace

void AccuracyConstraint::validate() const {
  if (metric != "auroc") throw Error("AccuracyConstraint: unsupported metric " + metric);
  if (threshold < 0 || threshold > 1) throw Error("AccuracyConstraint: threshold must be in [0,1]");
}

Model dynamic_quantize(const Model& model) {
  require_fp32(model, "dynamic_quantize");
  Model q = model;
  for (auto& [name, pt] : q.params.entries) {
    if (!is_weight_tensor(pt)) continue;
    const QuantParams qp = compute_qparams(pt.value, QScheme::Symmetric);
    pt.value = quantize_affine(pt.value, qp);
  }
  q.params.dtype = DType::QInt8;
  q.params.act_qparams.clear();
  return q;
}

Model static_quantize(const Model& model, const std::vector<Array>& calib_batches) {
  if (calib_batches.empty()) throw Error("static_quantize: empty calibration set");
  Model q = dynamic_quantize(model);

  RangeMap ranges;
  RuntimeParams rp = materialize(q.params);
  ExecOptions opt;
  opt.prec = ExecPrecision::StaticInt8;
  opt.observe = &ranges;
  for (const Array& batch : calib_batches) {
    EncoderResult enc = forward_encoder(q.spec, rp, batch, opt);
    forward_decoder(q.spec, rp, enc.mu, enc.pools, opt);
  }
  for (const auto& [key, r] : ranges) {
    if (!r.valid()) continue;
    q.params.act_qparams[key] = compute_qparams_range(r.lo, r.hi, QScheme::Affine);
  }
  return q;
}

namespace {

// Drops BatchNorm2d layers from one section, folding each into the
// immediately preceding conv/deconv.
std::vector<LayerSpec> fold_section(const std::vector<LayerSpec>& layers, const std::string& prefix,
                                    std::vector<std::pair<std::string, std::string>>& renames,
                                    std::vector<std::pair<std::string, std::string>>& folds) {
  std::vector<LayerSpec> out;
  int last_conv_old = -1;
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string old_key = prefix + "." + std::to_string(i);
    if (std::holds_alternative<BatchNorm2d>(layers[i])) {
      if (last_conv_old != static_cast<int>(i) - 1 ||
          (!std::holds_alternative<Conv2d>(layers[i - 1]) &&
           !std::holds_alternative<ConvTranspose2d>(layers[i - 1])))
        throw Error("fold_batchnorm: batchnorm at " + old_key + " has no preceding conv");
      folds.emplace_back(prefix + "." + std::to_string(i - 1), old_key);
      continue;
    }
    LayerSpec l = layers[i];
    if (auto* c = std::get_if<Conv2d>(&l)) {
      if (i + 1 < layers.size() && std::holds_alternative<BatchNorm2d>(layers[i + 1]))
        c->bias = true;
      last_conv_old = static_cast<int>(i);
    } else if (auto* c = std::get_if<ConvTranspose2d>(&l)) {
      if (i + 1 < layers.size() && std::holds_alternative<BatchNorm2d>(layers[i + 1]))
        c->bias = true;
      last_conv_old = static_cast<int>(i);
    }
    renames.emplace_back(old_key, prefix + "." + std::to_string(out.size()));
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace

Model fold_batchnorm(const Model& model) {
  require_fp32(model, "fold_batchnorm");
  Model out;
  out.spec = model.spec;
  std::vector<std::pair<std::string, std::string>> renames;  // old layer key -> new layer key
  std::vector<std::pair<std::string, std::string>> folds;    // conv old key -> bn old key
  out.spec.encoder = fold_section(model.spec.encoder, "enc", renames, folds);
  out.spec.decoder = fold_section(model.spec.decoder, "dec", renames, folds);
  infer_shapes(out.spec);

  std::map<std::string, std::string> bn_of;  // conv old key -> bn old key
  for (auto& [conv, bn] : folds) bn_of[conv] = bn;

  out.params = init_params(out.spec, 0);
  for (auto& [old_key, new_key] : renames) {
    // Copy every tensor of this layer, folding where a BN followed.
    const auto fit = bn_of.find(old_key);
    for (auto& [name, pt] : out.params.entries) {
      if (name.rfind(new_key + ".", 0) != 0) continue;
      const std::string suffix = name.substr(new_key.size());
      if (fit == bn_of.end()) {
        pt.value = model.params.at(old_key + suffix).value;
        continue;
      }
      const std::string& bn_key = fit->second;
      const Tensor& gamma = model.params.at(bn_key + ".gamma").value;
      const Tensor& beta = model.params.at(bn_key + ".beta").value;
      const Tensor& rm = model.params.at(bn_key + ".running_mean").value;
      const Tensor& rv = model.params.at(bn_key + ".running_var").value;
      const int64_t oc = gamma.numel();
      std::vector<double> s(static_cast<size_t>(oc));
      for (int64_t j = 0; j < oc; ++j)
        s[j] = gamma.f[j] / std::sqrt(static_cast<double>(rv.f[j]) + kBnEps);
      if (suffix == ".weight") {
        const Tensor& w = model.params.at(old_key + suffix).value;
        pt.value = w;
        // Conv2d weights are (oc,ic,k,k): scale dim 0. ConvTranspose2d are
        // (ic,oc,k,k): scale dim 1.
        const int old_idx = std::stoi(old_key.substr(4));
        const auto& old_layers =
            old_key.rfind("enc.", 0) == 0 ? model.spec.encoder : model.spec.decoder;
        const bool oc_first = std::holds_alternative<Conv2d>(old_layers[static_cast<size_t>(old_idx)]);
        const int64_t d0 = w.shape[0], rest = w.numel() / d0;
        const int64_t per_oc = oc_first ? rest : rest / oc;
        for (int64_t a = 0; a < d0; ++a) {
          for (int64_t b = 0; b < rest; ++b) {
            const int64_t j = oc_first ? a : b / per_oc;
            pt.value.f[a * rest + b] =
                static_cast<float>(pt.value.f[a * rest + b] * s[static_cast<size_t>(j)]);
          }
        }
      } else if (suffix == ".bias") {
        pt.value = Tensor::zeros({oc});
        const bool had_bias = model.params.has(old_key + ".bias");
        for (int64_t j = 0; j < oc; ++j) {
          const double b0 = had_bias ? model.params.at(old_key + ".bias").value.f[j] : 0.0;
          pt.value.f[j] = static_cast<float>(beta.f[j] + s[static_cast<size_t>(j)] * (b0 - rm.f[j]));
        }
      } else {
        pt.value = model.params.at(old_key + suffix).value;
      }
    }
  }
  return out;
}

Model qat_quantize(const Model& model, const Array& data, const TrainConfig& cfg) {
  Model folded = fold_batchnorm(model);
  TrainConfig c = cfg;
  c.qat = true;
  TrainResult tr = train_vae(folded.spec, folded.params, data, c);
  if (tr.diverged) throw Error("qat_quantize: fine-tuning diverged");

  Model q = dynamic_quantize(folded);
  for (const auto& [key, r] : tr.act_ranges) {
    if (!r.valid()) continue;
    q.params.act_qparams[key] = compute_qparams_range(r.lo, r.hi, QScheme::Affine);
  }
  return q;
}

Model to_fp16_model(const Model& model) {
  require_fp32(model, "to_fp16_model");
  Model h = model;
  for (auto& [name, pt] : h.params.entries) pt.value = to_fp16(pt.value);
  h.params.dtype = DType::F16;
  h.params.act_qparams.clear();
  return h;
}

void global_magnitude_prune(ParamStore& params, double sparsity_pct) {
  if (sparsity_pct < 0 || sparsity_pct > 100)
    throw Error("global_magnitude_prune: sparsity must be in [0,100]");
  if (params.dtype != DType::F32) throw Error("global_magnitude_prune: expected an fp32 model");

  struct Slot {
    float mag;
    int64_t flat;  // global flat index, for the stable tie-break
    ParamTensor* pt;
    size_t at;
  };
  std::vector<Slot> pool;
  int64_t flat = 0;
  for (auto& [name, pt] : params.entries) {
    if (!pt.prunable) continue;
    pt.mask.reset();
    for (size_t i = 0; i < pt.value.f.size(); ++i)
      pool.push_back({std::abs(pt.value.f[i]), flat++, &pt, i});
  }
  const int64_t k = static_cast<int64_t>(std::floor(sparsity_pct * static_cast<double>(pool.size()) / 100.0));
  if (k == 0) return;

  std::nth_element(pool.begin(), pool.begin() + (k - 1), pool.end(), [](const Slot& a, const Slot& b) {
    if (a.mag != b.mag) return a.mag < b.mag;
    return a.flat < b.flat;
  });
  std::sort(pool.begin(), pool.begin() + k, [](const Slot& a, const Slot& b) {
    if (a.mag != b.mag) return a.mag < b.mag;
    return a.flat < b.flat;
  });
  for (auto& [name, pt] : params.entries) {
    if (!pt.prunable) continue;
    pt.mask = std::vector<std::uint8_t>(pt.value.f.size(), 1);
  }
  for (int64_t i = 0; i < k; ++i) {
    Slot& s = pool[static_cast<size_t>(i)];
    (*s.pt->mask)[s.at] = 0;
    s.pt->value.f[s.at] = 0.0f;
  }
}

Model pruned_copy(const Model& model, double sparsity_pct) {
  Model m = model;
  global_magnitude_prune(m.params, sparsity_pct);
  return m;
}

double measured_sparsity(const ParamStore& params) {
  int64_t zeros = 0, total = 0;
  for (const auto& [name, pt] : params.entries) {
    if (!pt.prunable) continue;
    total += pt.value.numel();
    for (float v : pt.value.f)
      if (v == 0.0f) ++zeros;
  }
  if (total == 0) throw Error("measured_sparsity: no prunable tensors");
  return 100.0 * static_cast<double>(zeros) / static_cast<double>(total);
}

std::vector<std::pair<std::string, double>> layer_zero_fractions(const ParamStore& params) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [name, pt] : params.entries) {
    if (!pt.prunable) continue;
    int64_t zeros = 0;
    for (float v : pt.value.f)
      if (v == 0.0f) ++zeros;
    out.emplace_back(name, static_cast<double>(zeros) / static_cast<double>(pt.value.numel()));
  }
  return out;
}

namespace {

int first_param_layer(const std::vector<LayerSpec>& encoder) {
  for (size_t i = 0; i < encoder.size(); ++i)
    if (std::holds_alternative<Conv2d>(encoder[i]) || std::holds_alternative<Linear>(encoder[i]))
      return static_cast<int>(i);
  return -1;
}

}  // namespace

std::vector<std::string> removal_candidates(const VaeSpec& spec, const ParamStore& params) {
  const int first = first_param_layer(spec.encoder);
  struct Cand {
    double frac;
    int layer;
    std::string name;
  };
  std::vector<Cand> cands;
  for (const auto& [name, frac] : layer_zero_fractions(params)) {
    if (name.rfind("enc.", 0) != 0) continue;
    if (name.find(".mu_") != std::string::npos || name.find(".logvar_") != std::string::npos)
      continue;  // latent head is exempt
    const int layer = std::stoi(name.substr(4));
    if (layer == first) continue;  // first param layer is exempt
    cands.push_back({frac, layer, name});
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.frac != b.frac) return a.frac > b.frac;
    if (a.layer != b.layer) return a.layer > b.layer;  // deeper wins ties
    return a.name < b.name;                            // bias before weight
  });
  std::vector<std::string> out;
  for (auto& c : cands) out.push_back(c.name);
  return out;
}

std::string select_removal_layer(const VaeSpec& spec, const ParamStore& params) {
  auto cands = removal_candidates(spec, params);
  if (cands.empty()) throw Error("select_removal_layer: all tensors are exempt");
  return cands.front();
}

namespace {

// Walks the sequence fixing channel/width fields to match the incoming
// shape; throws (via layer_output_shape) if shapes cannot be made valid.
void patch_channels(std::vector<LayerSpec>& layers, std::vector<int64_t> shape) {
  for (size_t i = 0; i < layers.size(); ++i) {
    if (auto* c = std::get_if<Conv2d>(&layers[i]))
      c->in_ch = static_cast<int>(shape[0]);
    else if (auto* bn = std::get_if<BatchNorm2d>(&layers[i]))
      bn->ch = static_cast<int>(shape[0]);
    else if (auto* li = std::get_if<Linear>(&layers[i]))
      li->in = static_cast<int>(shape[0]);
    shape = layer_output_shape(layers[i], shape, "enc." + std::to_string(i));
  }
}

std::vector<std::vector<int64_t>> encoder_input_shapes(const std::vector<LayerSpec>& layers,
                                                       const std::array<int, 3>& input_shape) {
  std::vector<std::vector<int64_t>> ins;
  std::vector<int64_t> cur = {input_shape[0], input_shape[1], input_shape[2]};
  for (size_t i = 0; i < layers.size(); ++i) {
    ins.push_back(cur);
    cur = layer_output_shape(layers[i], cur, "enc." + std::to_string(i));
  }
  ins.push_back(cur);  // output of the whole sequence
  return ins;
}

bool is_activation(const LayerSpec& l) {
  return std::holds_alternative<LeakyReLU>(l) || std::holds_alternative<ReLU>(l);
}

}  // namespace

VaeSpec build_student_spec(const VaeSpec& spec, const std::string& removed) {
  if (removed.rfind("enc.", 0) != 0)
    throw Error("build_student_spec: removal target must be an encoder tensor: " + removed);
  const size_t dot = removed.find('.', 4);
  if (dot == std::string::npos) throw Error("build_student_spec: bad tensor name " + removed);
  const int idx = std::stoi(removed.substr(4, dot - 4));
  const std::string suffix = removed.substr(dot + 1);
  if (idx < 0 || idx >= static_cast<int>(spec.encoder.size()))
    throw Error("build_student_spec: layer index out of range in " + removed);
  if (idx == first_param_layer(spec.encoder))
    throw Error("build_student_spec: first param layer is exempt: " + removed);

  VaeSpec student = spec;

  if (suffix == "bias") {
    if (auto* c = std::get_if<Conv2d>(&student.encoder[idx]))
      c->bias = false;
    else if (auto* li = std::get_if<Linear>(&student.encoder[idx]))
      li->bias = false;
    else
      throw Error("build_student_spec: no bias on layer of " + removed);
    student.decoder = mirror_decoder(student.encoder, student.input_shape, student.latent_dim);
    infer_shapes(student);
    return student;
  }
  if (suffix != "weight")
    throw Error("build_student_spec: tensor is exempt from removal: " + removed);

  const auto orig_ins = encoder_input_shapes(spec.encoder, spec.input_shape);

  // Indices dropped with the layer: its batchnorm and activation, if they
  // directly follow.
  size_t drop_end = static_cast<size_t>(idx) + 1;
  if (drop_end < spec.encoder.size() && std::holds_alternative<BatchNorm2d>(spec.encoder[drop_end]))
    ++drop_end;
  if (drop_end < spec.encoder.size() && is_activation(spec.encoder[drop_end])) ++drop_end;
  // Original input extent of the first layer kept after the block.
  if (drop_end >= spec.encoder.size())
    throw Error("build_student_spec: cannot remove the last encoder block");
  const std::vector<int64_t>& target = orig_ins[drop_end];

  if (std::holds_alternative<Linear>(spec.encoder[idx])) {
    int pred = -1;
    for (int j = idx - 1; j >= 0; --j)
      if (std::holds_alternative<Linear>(spec.encoder[j])) {
        pred = j;
        break;
      }
    if (pred < 0)
      throw Error("build_student_spec: no preceding linear for " + removed);
    const int removed_out = std::get<Linear>(spec.encoder[idx]).out;
    std::get<Linear>(student.encoder[pred]).out = removed_out;
    size_t lin_drop_end = static_cast<size_t>(idx) + 1;
    if (lin_drop_end < spec.encoder.size() && is_activation(spec.encoder[lin_drop_end]))
      ++lin_drop_end;
    student.encoder.erase(student.encoder.begin() + idx,
                          student.encoder.begin() + static_cast<int>(lin_drop_end));
    patch_channels(student.encoder,
                   {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]});
    student.decoder = mirror_decoder(student.encoder, student.input_shape, student.latent_dim);
    infer_shapes(student);
    return student;
  }

  if (!std::holds_alternative<Conv2d>(spec.encoder[idx]))
    throw Error("build_student_spec: tensor is exempt from removal: " + removed);

  int pred = -1;
  for (int j = idx - 1; j >= 0; --j)
    if (std::holds_alternative<Conv2d>(spec.encoder[j])) {
      pred = j;
      break;
    }
  if (pred < 0) throw Error("build_student_spec: no preceding conv for " + removed);
  const int pred_in_extent = static_cast<int>(orig_ins[static_cast<size_t>(pred)][1]);

  std::vector<LayerSpec> base = spec.encoder;
  base.erase(base.begin() + idx, base.begin() + static_cast<int>(drop_end));
  const size_t after = static_cast<size_t>(idx);  // position of the first kept layer after the block

  for (int dil = 1; dil <= 4; ++dil) {
    for (int stride = 1; stride <= pred_in_extent; ++stride) {
      std::vector<LayerSpec> cand = base;
      auto& pc = std::get<Conv2d>(cand[static_cast<size_t>(pred)]);
      pc.stride = stride;
      pc.dilation = dil;
      try {
        patch_channels(cand, {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]});
        const auto ins = encoder_input_shapes(cand, spec.input_shape);
        if (ins[after].size() == 3 && target.size() == 3 && ins[after][1] != target[1]) continue;
        VaeSpec s = spec;
        s.encoder = std::move(cand);
        s.decoder = mirror_decoder(s.encoder, s.input_shape, s.latent_dim);
        infer_shapes(s);
        return s;
      } catch (const Error&) {
        continue;
      }
    }
  }
  throw Error("build_student_spec: no stride/dilation pair reproduces the output extent for " +
              removed);
}

Model distill_train(const Model& teacher, const VaeSpec& student_spec, const Array& data,
                    TrainConfig cfg) {
  Model student;
  student.spec = student_spec;
  student.params = init_params(student_spec, cfg.seed);
  TrainResult tr = train_vae(student.spec, student.params, data, cfg, &teacher);
  if (tr.diverged) throw Error("distill_train: student training diverged");
  return student;
}

// ---- search reports ---------------------------------------------------

const CandidateRecord& SearchReport::selected() const {
  if (selected_index < 0 || selected_index >= static_cast<int>(records.size()))
    throw Error("SearchReport: no selected candidate");
  return records[static_cast<size_t>(selected_index)];
}

nlohmann::json SearchReport::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) {
    recs.push_back({{"spec_id", r.spec_id},
                    {"removed_layers", r.removed_layers},
                    {"sparsity_pct", r.sparsity_pct},
                    {"dtype", r.dtype},
                    {"auroc", r.auroc},
                    {"param_count", r.param_count},
                    {"size_bytes", r.size_bytes},
                    {"flops", r.flops},
                    {"mean_ms", r.mean_ms},
                    {"std_ms", r.std_ms},
                    {"selected", r.selected}});
  }
  return {{"records", recs}, {"selected_index", selected_index}};
}

void SearchReport::save_json(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("SearchReport: cannot open " + path);
  os << to_json().dump(2) << "\n";
}

void SearchReport::save_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("SearchReport: cannot open " + path);
  os << "spec_id,removed_layers,sparsity_pct,dtype,auroc,param_count,size_bytes,flops,mean_ms,"
        "std_ms,selected\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), ",%.17g,%s,%.17g,%lld,%lld,%lld,%.17g,%.17g,%d\n",
                  r.sparsity_pct, r.dtype.c_str(), r.auroc, static_cast<long long>(r.param_count),
                  static_cast<long long>(r.size_bytes), static_cast<long long>(r.flops), r.mean_ms,
                  r.std_ms, r.selected ? 1 : 0);
    os << r.spec_id << "," << r.removed_layers << buf;
  }
}

namespace {

CandidateRecord describe(const Model& m, const std::string& spec_id,
                         const std::string& removed_layers, double auroc_value) {
  CandidateRecord r;
  r.spec_id = spec_id;
  r.removed_layers = removed_layers;
  r.dtype = dtype_name(m.params.dtype);
  r.auroc = auroc_value;
  r.param_count = param_count(m.spec);
  r.size_bytes = model_size_bytes(m.params);
  r.flops = flop_count(m.spec);
  return r;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ";";
    out += parts[i];
  }
  return out;
}

}  // namespace

SearchReport prune_aware_kd_search(const Model& teacher, const AccuracyConstraint& constraint,
                                   const TrainConfig& cfg, const Array& data,
                                   const Evaluator& evaluate) {
  return prune_aware_kd_search(teacher, constraint, cfg, data, evaluate, nullptr);
}

SearchReport prune_aware_kd_search(const Model& teacher, const AccuracyConstraint& constraint,
                                   const TrainConfig& cfg, const Array& data,
                                   const Evaluator& evaluate, std::vector<Model>* models) {
  constraint.validate();
  cfg.validate();

  const double teacher_auroc = evaluate(teacher);
  if (teacher_auroc < constraint.threshold)
    throw Error("prune_aware_kd_search: teacher does not satisfy the accuracy constraint");

  SearchReport report;
  report.records.push_back(describe(teacher, teacher.spec.name, "", teacher_auroc));
  report.selected_index = 0;
  if (models) {
    models->clear();
    models->push_back(teacher);
  }

  Model current = teacher;
  std::vector<std::string> removed_acc;
  const int max_iters = static_cast<int>(teacher.spec.encoder.size());
  for (int iter = 1; iter <= max_iters; ++iter) {
    ParamStore pruned = current.params;
    global_magnitude_prune(pruned, 50.0);

    VaeSpec student_spec;
    std::string removed_name;
    bool found = false;
    for (const std::string& cand : removal_candidates(current.spec, pruned)) {
      try {
        student_spec = build_student_spec(current.spec, cand);
        removed_name = cand;
        found = true;
        break;
      } catch (const Error&) {
        continue;  // rejected candidate; try the next one
      }
    }
    if (!found) break;

    student_spec.name = teacher.spec.name + "-s" + std::to_string(iter);
    TrainConfig c = cfg;
    c.seed = hash_key({cfg.seed, hash_str("kd-iter"), static_cast<std::uint64_t>(iter)});
    Model student = distill_train(current, student_spec, data, c);
    const double a = evaluate(student);

    std::vector<std::string> removed_now = removed_acc;
    removed_now.push_back(removed_name);
    report.records.push_back(describe(student, student_spec.name, join(removed_now), a));
    if (a < constraint.threshold) break;

    report.selected_index = static_cast<int>(report.records.size()) - 1;
    if (models) models->push_back(student);
    current = std::move(student);
    removed_acc = std::move(removed_now);
  }

  report.records[static_cast<size_t>(report.selected_index)].selected = true;
  return report;
}

SearchReport binary_sparsity_search(const Model& model, const AccuracyConstraint& constraint,
                                    double resolution_pct, const Evaluator& evaluate) {
  constraint.validate();
  if (!(resolution_pct > 0)) throw Error("binary_sparsity_search: resolution must be positive");

  SearchReport report;
  double lo = 0, hi = 100;
  double best_s = -1;
  int best_idx = -1;
  while (hi - lo >= resolution_pct) {
    const double s = lo + (hi - lo) / 2.0;
    Model pruned = pruned_copy(model, s);
    const double a = evaluate(pruned);
    CandidateRecord rec = describe(pruned, model.spec.name, "", a);
    rec.sparsity_pct = s;
    report.records.push_back(rec);
    if (a >= constraint.threshold) {
      if (s > best_s) {
        best_s = s;
        best_idx = static_cast<int>(report.records.size()) - 1;
      }
      lo = s;
    } else {
      hi = s;
    }
  }
  if (best_idx < 0) {
    // Nothing passed; fall back to the unpruned model at 0% sparsity.
    const double a = evaluate(model);
    CandidateRecord rec = describe(model, model.spec.name, "", a);
    rec.sparsity_pct = 0;
    report.records.push_back(rec);
    best_idx = static_cast<int>(report.records.size()) - 1;
  }
  report.selected_index = best_idx;
  report.records[static_cast<size_t>(best_idx)].selected = true;
  return report;
}

}  // namespace vaecomp
