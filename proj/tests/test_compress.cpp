#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "vaecomp/compress.hpp"
#include "vaecomp/rng.hpp"

#include "doctest.h"

using namespace vaecomp;

namespace {

Model preset_model(const char* name, std::uint64_t seed) {
  Model m;
  m.spec = make_preset(name);
  m.params = init_params(m.spec, seed);
  // biases start at zero; nudge them so sparsity accounting is nontrivial
  for (auto& [pname, pt] : m.params.entries)
    if (pt.prunable && pt.value.shape.size() == 1)
      for (size_t i = 0; i < pt.value.f.size(); ++i)
        pt.value.f[i] = 0.01f * static_cast<float>(i + 1);
  return m;
}

Array random_batch(const VaeSpec& spec, int64_t n, std::uint64_t seed) {
  Array b({n, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]});
  for (size_t i = 0; i < b.v.size(); ++i) b.v[i] = 0.3 * key_gaussian({seed, i});
  return b;
}

// Flat list of prunable scalars in store order, the pruning oracle below
// sorts it independently of the implementation.
std::vector<float> prunable_values(const ParamStore& p) {
  std::vector<float> out;
  for (const auto& [name, pt] : p.entries)
    if (pt.prunable) out.insert(out.end(), pt.value.f.begin(), pt.value.f.end());
  return out;
}

}  // namespace

TEST_CASE("dynamic quantization uses per-tensor symmetric scales") {
  Model m = preset_model("desk-of", 1);
  // pin one weight tensor to a known range
  ParamTensor& w = m.params.at("enc.0.weight");
  for (size_t i = 0; i < w.value.f.size(); ++i) w.value.f[i] = 0.0f;
  w.value.f[0] = 2.0f;
  w.value.f[1] = -2.0f;

  Model q = dynamic_quantize(m);
  CHECK(q.params.dtype == DType::QInt8);
  CHECK(q.params.act_qparams.empty());
  const Tensor& qw = q.params.at("enc.0.weight").value;
  REQUIRE(qw.qparams.has_value());
  CHECK(qw.qparams->scale == doctest::Approx(2.0 / 127).epsilon(1e-12));
  CHECK(qw.qparams->zero_point == 0);
  CHECK(qw.q[0] == 127);
  CHECK(qw.q[1] == -127);  // symmetric: max magnitude maps to +/-127

  // biases stay fp32
  CHECK(q.params.at("enc.3.weight").value.dtype == DType::QInt8);
  for (const auto& [name, pt] : q.params.entries)
    if (pt.value.shape.size() == 1) CHECK(pt.value.dtype == DType::F32);
  CHECK(exec_precision_for(q.params) == ExecPrecision::DynamicInt8);
}

TEST_CASE("all-zero tensors quantize with unit scale") {
  Model m = preset_model("desk-of", 2);
  ParamTensor& w = m.params.at("enc.0.weight");
  std::fill(w.value.f.begin(), w.value.f.end(), 0.0f);
  Model q = dynamic_quantize(m);
  const Tensor& qw = q.params.at("enc.0.weight").value;
  CHECK(qw.qparams->scale == 1.0);
  CHECK(qw.qparams->zero_point == 0);
  for (auto x : qw.q) CHECK(x == 0);
}

TEST_CASE("quantized models serialize to under 30% of fp32 size") {
  Model m = preset_model("desk-beta-vae", 3);
  Model q = dynamic_quantize(m);
  CHECK(static_cast<double>(model_size_bytes(q.params)) /
            static_cast<double>(model_size_bytes(m.params)) <=
        0.30);
}

TEST_CASE("static quantization freezes ranges and reruns bit-identically") {
  Model m = preset_model("desk-of", 4);
  std::vector<Array> calib = {random_batch(m.spec, 2, 10), random_batch(m.spec, 2, 11)};
  Model a = static_quantize(m, calib);
  Model b = static_quantize(m, calib);
  CHECK(!a.params.act_qparams.empty());
  CHECK(exec_precision_for(a.params) == ExecPrecision::StaticInt8);
  REQUIRE(a.params.act_qparams.size() == b.params.act_qparams.size());
  for (const auto& [key, qp] : a.params.act_qparams) {
    CHECK(b.params.act_qparams.at(key).scale == qp.scale);
    CHECK(b.params.act_qparams.at(key).zero_point == qp.zero_point);
  }
  for (size_t i = 0; i < a.params.entries.size(); ++i)
    CHECK(a.params.entries[i].second.value.q == b.params.entries[i].second.value.q);

  // the frozen static path runs without per-batch observation
  RuntimeParams rp = materialize(a.params);
  ExecOptions opt;
  opt.prec = ExecPrecision::StaticInt8;
  opt.act_qparams = &a.params.act_qparams;
  EncoderResult enc = forward_encoder(a.spec, rp, random_batch(m.spec, 1, 12), opt);
  for (double x : enc.mu.v) CHECK(std::isfinite(x));
}

TEST_CASE("activation qparams cover a zero-extended observed range") {
  // range [0, 5.1]: scale (5.1-0)/255, zero_point -128
  Tensor t = Tensor::from_values({2}, {0.0f, 5.1f});
  QuantParams qp = compute_qparams(t, QScheme::Affine);
  CHECK(qp.scale == doctest::Approx(0.02).epsilon(1e-9));
  CHECK(qp.zero_point == -128);
  // all-positive range still includes zero
  Tensor pos = Tensor::from_values({2}, {2.0f, 4.0f});
  QuantParams qpp = compute_qparams(pos, QScheme::Affine);
  CHECK(dequantize(quantize_affine(Tensor::from_values({1}, {0.0f}), qpp)).f[0] ==
        doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("fp16 conversion rounds storage and keeps shapes") {
  Model m = preset_model("desk-of", 5);
  Model h = to_fp16_model(m);
  CHECK(h.params.dtype == DType::F16);
  for (size_t i = 0; i < m.params.entries.size(); ++i) {
    const auto& pt = m.params.entries[i].second;
    const auto& hp = h.params.entries[i].second;
    CHECK(hp.value.dtype == DType::F16);
    for (size_t j = 0; j < pt.value.f.size(); ++j)
      CHECK(hp.value.f[j] == round_to_fp16(pt.value.f[j]));
  }
  CHECK(exec_precision_for(h.params) == ExecPrecision::Fp16);
}

TEST_CASE("global magnitude pruning worked example") {
  VaeSpec spec;
  spec.name = "p";
  spec.input_shape = {4, 1, 1};
  spec.latent_dim = 1;
  spec.encoder = {Flatten{}, Linear{4, 1, false}, LatentHead{1}};
  ParamStore params = init_params(spec, 0);
  ParamTensor& w = params.at("enc.1.weight");
  w.value.f = {0.1f, -0.5f, 0.3f, 0.05f};
  // head weights out of the way
  params.at("enc.2.mu_weight").value.f = {9.0f};
  params.at("enc.2.logvar_weight").value.f = {9.0f};
  ParamTensor& mb = params.at("enc.2.mu_bias");
  ParamTensor& lb = params.at("enc.2.logvar_bias");
  mb.value.f = {9.0f};
  lb.value.f = {9.0f};

  global_magnitude_prune(params, 25);  // floor(0.25 * 8) = 2 smallest
  const ParamTensor& after = params.at("enc.1.weight");
  CHECK(after.value.f == std::vector<float>{0.0f, -0.5f, 0.3f, 0.0f});
  CHECK(*after.mask == std::vector<std::uint8_t>{0, 1, 1, 0});

  global_magnitude_prune(params, 0);
  CHECK(!params.at("enc.1.weight").mask.has_value());
  CHECK(params.at("enc.1.weight").value.f == std::vector<float>{0.0f, -0.5f, 0.3f, 0.0f});

  global_magnitude_prune(params, 100);
  for (const auto& [name, pt] : params.entries)
    if (pt.prunable)
      for (float x : pt.value.f) CHECK(x == 0.0f);
}

TEST_CASE("pruning ties break toward the lower global flat index") {
  VaeSpec spec;
  spec.name = "t";
  spec.input_shape = {4, 1, 1};
  spec.latent_dim = 1;
  spec.encoder = {Flatten{}, Linear{4, 1, false}, LatentHead{1}};
  ParamStore params = init_params(spec, 0);
  params.at("enc.1.weight").value.f = {0.2f, -0.2f, 0.2f, 0.2f};
  params.at("enc.2.mu_weight").value.f = {9.0f};
  params.at("enc.2.logvar_weight").value.f = {9.0f};
  params.at("enc.2.mu_bias").value.f = {9.0f};
  params.at("enc.2.logvar_bias").value.f = {9.0f};
  global_magnitude_prune(params, 25);  // floor(0.25*8)=2: indices 0 and 1
  CHECK(*params.at("enc.1.weight").mask == std::vector<std::uint8_t>{0, 0, 1, 1});
}

TEST_CASE("pruning matches an independent sort oracle at many levels") {
  Model m = preset_model("desk-of", 6);
  const std::vector<float> flat = prunable_values(m.params);
  const auto k_total = static_cast<int64_t>(flat.size());

  for (double pct : {10.0, 33.0, 50.0, 77.0, 90.0}) {
    ParamStore p = m.params;
    global_magnitude_prune(p, pct);
    const auto k = static_cast<int64_t>(std::floor(pct * static_cast<double>(k_total) / 100.0));

    // oracle: stable sort by (|value|, flat index)
    std::vector<int64_t> order(flat.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      return std::abs(flat[static_cast<size_t>(a)]) < std::abs(flat[static_cast<size_t>(b)]);
    });
    std::vector<std::uint8_t> want(flat.size(), 1);
    for (int64_t i = 0; i < k; ++i) want[static_cast<size_t>(order[static_cast<size_t>(i)])] = 0;

    size_t at = 0;
    int64_t zeros = 0;
    for (const auto& [name, pt] : p.entries) {
      if (!pt.prunable) continue;
      REQUIRE(pt.mask.has_value());
      for (size_t i = 0; i < pt.value.f.size(); ++i, ++at) {
        CAPTURE(name);
        CHECK((*pt.mask)[i] == want[at]);
        if ((*pt.mask)[i] == 0) {
          CHECK(pt.value.f[i] == 0.0f);
          ++zeros;
        }
      }
    }
    CHECK(zeros == k);
    // measured_sparsity reports percent and may exceed pct through
    // pre-existing zeros
    CHECK(measured_sparsity(p) >= pct - 100.0 / static_cast<double>(k_total));
  }
}

TEST_CASE("layer zero fractions and removal candidate ranking") {
  Model m = preset_model("desk-of", 7);
  ParamStore p = m.params;
  // force distinctive zero fractions
  auto zero_frac = [&](const char* name, double frac) {
    ParamTensor& pt = p.at(name);
    const auto n = static_cast<size_t>(std::round(frac * pt.value.f.size()));
    for (size_t i = 0; i < pt.value.f.size(); ++i)
      pt.value.f[i] = i < n ? 0.0f : 0.5f;
  };
  zero_frac("enc.3.weight", 0.5);
  zero_frac("enc.6.weight", 0.25);
  zero_frac("enc.9.weight", 0.5);

  std::vector<std::pair<std::string, double>> fr = layer_zero_fractions(p);
  bool saw = false;
  for (const auto& [name, f] : fr)
    if (name == "enc.3.weight") {
      CHECK(f == doctest::Approx(0.5).epsilon(0.001));
      saw = true;
    }
  CHECK(saw);

  // tie between enc.3 and enc.9 resolves to the deeper layer
  std::vector<std::string> cands = removal_candidates(m.spec, p);
  REQUIRE(!cands.empty());
  CHECK(select_removal_layer(m.spec, p) == "enc.9.weight");
  // the first param layer and the latent head never appear
  for (const std::string& c : cands) {
    CHECK(c.rfind("enc.0.", 0) != 0);
    CHECK(c.find("mu_") == std::string::npos);
    CHECK(c.find("logvar_") == std::string::npos);
  }
}

TEST_CASE("student spec: conv removal rescales the predecessor") {
  VaeSpec spec = make_preset("paper-of");
  // removing the third conv (7->1 is enc.9? layout: conv,bn,act triples)
  // find the conv layer indices first
  std::vector<size_t> convs;
  for (size_t i = 0; i < spec.encoder.size(); ++i)
    if (std::holds_alternative<Conv2d>(spec.encoder[i])) convs.push_back(i);
  REQUIRE(convs.size() == 4);

  const std::string removed = "enc." + std::to_string(convs[2]) + ".weight";
  VaeSpec student = build_student_spec(spec, removed);
  // one conv block fewer; shapes still close end to end
  std::vector<size_t> sconvs;
  for (size_t i = 0; i < student.encoder.size(); ++i)
    if (std::holds_alternative<Conv2d>(student.encoder[i])) sconvs.push_back(i);
  CHECK(sconvs.size() == 3);
  ShapeReport r = infer_shapes(student);
  // the final conv output extent is preserved (1x1 before the head)
  CHECK(r.encoder.back() == std::vector<int64_t>{student.latent_dim});
  // predecessor conv reproduces the removed layer's 7x7 extent from 74
  const auto& pred = std::get<Conv2d>(student.encoder[sconvs[1]]);
  CHECK(conv_out_extent(74, pred.kernel, pred.stride, pred.dilation, pred.padding) == 7);
  CHECK(param_count(student) < param_count(spec));
  // the channel chain is patched: the conv after the removed block now
  // consumes the predecessor's output channels
  const auto& last = std::get<Conv2d>(student.encoder[sconvs[2]]);
  CHECK(last.in_ch == pred.out_ch);
}

TEST_CASE("student spec: linear removal widens the predecessor") {
  VaeSpec spec = make_preset("desk-beta-vae");
  std::vector<size_t> fcs;
  for (size_t i = 0; i < spec.encoder.size(); ++i)
    if (std::holds_alternative<Linear>(spec.encoder[i])) fcs.push_back(i);
  REQUIRE(fcs.size() >= 2);
  const auto& removed_fc = std::get<Linear>(spec.encoder[fcs.back()]);
  const std::string removed = "enc." + std::to_string(fcs.back()) + ".weight";
  VaeSpec student = build_student_spec(spec, removed);
  std::vector<size_t> sfcs;
  for (size_t i = 0; i < student.encoder.size(); ++i)
    if (std::holds_alternative<Linear>(student.encoder[i])) sfcs.push_back(i);
  CHECK(sfcs.size() == fcs.size() - 1);
  CHECK(std::get<Linear>(student.encoder[sfcs.back()]).out == removed_fc.out);
  infer_shapes(student);  // throws on inconsistency
}

TEST_CASE("student spec: bias removal only disables the bias") {
  VaeSpec spec = make_preset("desk-beta-vae");
  std::vector<size_t> fcs;
  for (size_t i = 0; i < spec.encoder.size(); ++i)
    if (std::holds_alternative<Linear>(spec.encoder[i])) fcs.push_back(i);
  const std::string removed = "enc." + std::to_string(fcs.back()) + ".bias";
  VaeSpec student = build_student_spec(spec, removed);
  CHECK(student.encoder.size() == spec.encoder.size());
  CHECK(!std::get<Linear>(student.encoder[fcs.back()]).bias);
  CHECK(param_count(student) == param_count(spec) -
                                    std::get<Linear>(spec.encoder[fcs.back()]).out);
}

TEST_CASE("batchnorm folding preserves inference outputs") {
  Model m = preset_model("desk-of", 8);
  // give running stats and affine params nontrivial values
  for (auto& [name, pt] : m.params.entries) {
    if (name.find("running_mean") != std::string::npos)
      for (size_t i = 0; i < pt.value.f.size(); ++i)
        pt.value.f[i] = 0.1f * static_cast<float>(i) - 0.2f;
    if (name.find("running_var") != std::string::npos)
      for (size_t i = 0; i < pt.value.f.size(); ++i)
        pt.value.f[i] = 0.5f + 0.1f * static_cast<float>(i);
    if (name.find("gamma") != std::string::npos)
      for (size_t i = 0; i < pt.value.f.size(); ++i)
        pt.value.f[i] = 0.8f + 0.05f * static_cast<float>(i);
    if (name.find("beta") != std::string::npos)
      for (size_t i = 0; i < pt.value.f.size(); ++i) pt.value.f[i] = 0.03f * static_cast<float>(i);
  }
  Model folded = fold_batchnorm(m);
  for (const LayerSpec& l : folded.spec.encoder) CHECK(!std::holds_alternative<BatchNorm2d>(l));

  Array x = random_batch(m.spec, 2, 20);
  RuntimeParams ra = materialize(m.params), rb = materialize(folded.params);
  ExecOptions opt;
  EncoderResult ea = forward_encoder(m.spec, ra, x, opt);
  EncoderResult eb = forward_encoder(folded.spec, rb, x, opt);
  REQUIRE(ea.mu.v.size() == eb.mu.v.size());
  for (size_t i = 0; i < ea.mu.v.size(); ++i)
    CHECK(ea.mu.v[i] == doctest::Approx(eb.mu.v[i]).epsilon(1e-6));
  for (size_t i = 0; i < ea.logvar.v.size(); ++i)
    CHECK(ea.logvar.v[i] == doctest::Approx(eb.logvar.v[i]).epsilon(1e-6));
}

TEST_CASE("qat produces a quantized model with frozen activation ranges") {
  VaeSpec spec;
  spec.name = "qat-tiny";
  spec.input_shape = {1, 4, 4};
  spec.latent_dim = 2;
  spec.encoder = {Flatten{}, Linear{16, 8}, LeakyReLU{0.01}, LatentHead{2}};
  spec.decoder = mirror_decoder(spec.encoder, spec.input_shape, spec.latent_dim);
  Model m;
  m.spec = spec;
  m.params = init_params(spec, 9);

  Array data({8, 1, 4, 4});
  for (size_t i = 0; i < data.v.size(); ++i) data.v[i] = 0.5 + 0.1 * key_gaussian({30, i});
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.seed = 31;
  Model q = qat_quantize(m, data, cfg);
  CHECK(q.params.dtype == DType::QInt8);
  CHECK(!q.params.act_qparams.empty());
  CHECK(exec_precision_for(q.params) == ExecPrecision::StaticInt8);
  // folded: no batchnorm entries survive
  for (const auto& [name, pt] : q.params.entries)
    CHECK(name.find("gamma") == std::string::npos);
}

TEST_CASE("distillation with zero kd weight equals plain training bit-for-bit") {
  VaeSpec spec;
  spec.name = "kd-tiny";
  spec.input_shape = {1, 4, 4};
  spec.latent_dim = 2;
  spec.encoder = {Flatten{}, Linear{16, 6}, LeakyReLU{0.01}, LatentHead{2}};
  spec.decoder = mirror_decoder(spec.encoder, spec.input_shape, spec.latent_dim);
  Model teacher;
  teacher.spec = spec;
  teacher.params = init_params(spec, 40);

  Array data({8, 1, 4, 4});
  for (size_t i = 0; i < data.v.size(); ++i) data.v[i] = 0.5 + 0.1 * key_gaussian({41, i});
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.seed = 42;
  cfg.kd_lambda = 0.0;

  Model student = distill_train(teacher, spec, data, cfg);
  ParamStore plain = init_params(spec, cfg.seed);
  train_vae(spec, plain, data, cfg);
  for (size_t i = 0; i < plain.entries.size(); ++i)
    CHECK(student.params.entries[i].second.value.f == plain.entries[i].second.value.f);
}

namespace {

// Scripted evaluator: returns a fixed sequence regardless of the model.
struct ScriptedEval {
  std::vector<double> seq;
  mutable size_t at = 0;
  mutable int calls = 0;
  double operator()(const Model&) const {
    ++calls;
    const double v = seq[std::min(at, seq.size() - 1)];
    ++at;
    return v;
  }
};

}  // namespace

TEST_CASE("kd search stops at the first violation and marks the last survivor") {
  Model teacher = preset_model("desk-of", 50);
  AccuracyConstraint c{"auroc", 0.9};
  TrainConfig cfg;
  cfg.epochs = 0;  // scripted evaluation; no training needed
  cfg.seed = 51;
  cfg.batch_size = 2;
  Array data = random_batch(teacher.spec, 2, 52);

  ScriptedEval ev{{0.95, 0.93, 0.88}};
  std::vector<Model> models;
  SearchReport r = prune_aware_kd_search(
      teacher, c, cfg, data, [&](const Model& m) { return ev(m); }, &models);

  REQUIRE(r.records.size() == 3);  // teacher + passing + violating
  CHECK(r.records[0].auroc == 0.95);
  CHECK(r.records[1].auroc == 0.93);
  CHECK(r.records[2].auroc == 0.88);
  CHECK(r.selected_index == 1);
  CHECK(r.selected().auroc == 0.93);
  int flags = 0;
  for (const auto& rec : r.records) flags += rec.selected ? 1 : 0;
  CHECK(flags == 1);
  // models holds the survivors only: the teacher plus each passing student
  CHECK(models.size() == static_cast<size_t>(r.selected_index) + 1);
  // candidates shrink strictly in parameters and flops
  for (size_t i = 1; i < r.records.size(); ++i) {
    CHECK(r.records[i].param_count < r.records[i - 1].param_count);
    CHECK(r.records[i].flops < r.records[i - 1].flops);
  }
  // removed layer lists are cumulative
  CHECK(r.records[0].removed_layers.empty());
  CHECK(!r.records[1].removed_layers.empty());
  CHECK(r.records[2].removed_layers.find(r.records[1].removed_layers) != std::string::npos);
  // timing columns stay zero so reruns serialize identically
  for (const auto& rec : r.records) {
    CHECK(rec.mean_ms == 0.0);
    CHECK(rec.std_ms == 0.0);
  }
}

TEST_CASE("kd search where the first student fails selects the teacher") {
  Model teacher = preset_model("desk-of", 53);
  AccuracyConstraint c{"auroc", 0.9};
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 54;
  Array data = random_batch(teacher.spec, 2, 55);
  ScriptedEval ev{{0.95, 0.80}};
  SearchReport r = prune_aware_kd_search(teacher, c, cfg, data,
                                         [&](const Model& m) { return ev(m); });
  REQUIRE(r.records.size() == 2);
  CHECK(r.selected_index == 0);  // only the teacher passes
  CHECK(r.selected().auroc == 0.95);
}

TEST_CASE("binary sparsity search brackets the oracle transition") {
  Model m = preset_model("desk-of", 60);
  AccuracyConstraint c{"auroc", 0.9};

  for (double s_star : {10.0, 37.0, 60.0, 88.0}) {
    CAPTURE(s_star);
    int evals = 0;
    auto ev = [&](const Model& cand) {
      ++evals;
      return measured_sparsity(cand.params) <= s_star ? 1.0 : 0.0;
    };
    SearchReport r = binary_sparsity_search(m, c, 1.0, ev);
    REQUIRE(r.selected_index >= 0);
    const double sel = r.selected().sparsity_pct;
    // selected within one resolution below the transition
    CHECK(sel <= s_star + 1e-9);
    CHECK(sel >= s_star - 1.0 - 1e-9);
    CHECK(evals <= static_cast<int>(std::ceil(std::log2(100.0))) + 1);
    CHECK(r.selected().auroc == 1.0);
  }
}

TEST_CASE("binary sparsity search falls back to zero when even 50% fails") {
  Model m = preset_model("desk-of", 61);
  AccuracyConstraint c{"auroc", 0.9};
  auto ev = [&](const Model& cand) {
    return measured_sparsity(cand.params) <= 0.5 ? 1.0 : 0.0;
  };
  SearchReport r = binary_sparsity_search(m, c, 1.0, ev);
  REQUIRE(r.selected_index >= 0);
  CHECK(r.selected().sparsity_pct <= 0.5);
}

TEST_CASE("search reports serialize to json and csv") {
  SearchReport r;
  CandidateRecord a;
  a.spec_id = "m0";
  a.auroc = 0.95;
  a.param_count = 100;
  CandidateRecord b = a;
  b.spec_id = "m1";
  b.auroc = 0.91;
  b.param_count = 60;
  b.selected = true;
  r.records = {a, b};
  r.selected_index = 1;

  nlohmann::json j = r.to_json();
  CHECK(j["selected_index"] == 1);
  CHECK(j["records"].size() == 2);
  CHECK(j["records"][1]["selected"] == true);

  const std::string dir = std::filesystem::temp_directory_path().string();
  r.save_csv(dir + "/report-test.csv");
  std::ifstream is(dir + "/report-test.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line.find("spec_id") != std::string::npos);
  CHECK(line.find("auroc") != std::string::npos);
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove(dir + "/report-test.csv");

  SearchReport empty;
  CHECK_THROWS_AS(empty.selected(), Error);
}

TEST_CASE("accuracy constraint validation") {
  AccuracyConstraint ok{"auroc", 0.8};
  ok.validate();
  AccuracyConstraint bad{"accuracy", 0.8};
  CHECK_THROWS_AS(bad.validate(), Error);
  AccuracyConstraint range{"auroc", 1.5};
  CHECK_THROWS_AS(range.validate(), Error);
}
