#include "vaecomp/manifest.hpp"

#include <filesystem>
#include <fstream>

#include "vaecomp/rng.hpp"

namespace vaecomp {

namespace fs = std::filesystem;

nlohmann::json ExperimentManifest::to_json() const {
  nlohmann::json stages_j = nlohmann::json::array();
  for (const auto& s : stages) stages_j.push_back({{"name", s.name}, {"config", s.config}});
  return {{"preset", preset},
          {"seed", seed},
          {"artifact_dir", artifact_dir},
          {"constraint", {{"metric", constraint.metric}, {"threshold", constraint.threshold}}},
          {"stages", stages_j}};
}

ExperimentManifest ExperimentManifest::from_json(const nlohmann::json& j) {
  ExperimentManifest m;
  m.preset = j.at("preset");
  m.seed = j.at("seed");
  m.artifact_dir = j.at("artifact_dir");
  m.constraint.metric = j.at("constraint").at("metric");
  m.constraint.threshold = j.at("constraint").at("threshold");
  for (const auto& s : j.at("stages"))
    m.stages.push_back({s.at("name"), s.value("config", nlohmann::json::object())});
  return m;
}

ExperimentManifest ExperimentManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("manifest: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("manifest: parse error: ") + e.what());
  }
  return from_json(j);
}

std::string ExperimentManifest::hash() const {
  const std::string s = to_json().dump();
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 12);
}

void ExperimentManifest::validate() const {
  make_preset(preset);  // throws on unknown preset
  constraint.validate();
  if (artifact_dir.empty()) throw Error("manifest: artifact_dir is required");
  static const std::vector<std::string> known = {
      "synth",  "train",          "calibrate",       "quantize",     "prune",
      "detect", "distill-search", "sparsity-search", "target-aware", "eval",
      "bench"};
  bool have_synth = false, have_train = false, have_calib = false;
  for (const auto& s : stages) {
    if (std::find(known.begin(), known.end(), s.name) == known.end())
      throw Error("manifest: unknown stage " + s.name);
    if (s.name == "synth") have_synth = true;
    if (s.name == "train") {
      if (!have_synth && !s.config.contains("dataset"))
        throw Error("manifest: train stage needs a preceding synth stage or a dataset path");
      have_train = true;
    }
    if (s.name == "calibrate") have_calib = true;
    if (s.name != "synth" && s.name != "train" && !have_train)
      throw Error("manifest: stage " + s.name + " requires a preceding train stage");
    if (s.name == "detect" && !have_calib)
      throw Error("manifest: detect requires a preceding calibrate stage");
  }
}

std::uint64_t stage_seed(const ExperimentManifest& m, const std::string& stage_name) {
  return hash_key({m.seed, hash_str(stage_name)});
}

double evaluate_beta(const Model& model, const BrightnessDataset& ds, int reasoner_k) {
  DetectorState st = calibrate(model, ds.calibration, reasoner_k);
  auto cusum_scores = [&](const Array& frames) {
    DetectorState s = st;
    std::vector<double> out;
    for (const TraceRow& r : beta_vae_detect(model, s, frames)) out.push_back(r.cusum);
    return out;
  };
  return auroc(cusum_scores(ds.test_id), cusum_scores(ds.test_ood));
}

double evaluate_of(const Model& enc_h, const Model& enc_v, const FlowDataset& ds) {
  const std::vector<double> sh = full_kl_scores(enc_h, ds.test_h);
  const std::vector<double> sv = full_kl_scores(enc_v, ds.test_v);
  std::vector<double> id, ood;
  for (size_t i = 0; i < ds.test_labels.size(); ++i)
    (ds.test_labels[i] ? ood : id).push_back(sh[i] + sv[i]);
  return auroc(id, ood);
}

namespace {

struct PipelineContext {
  const ExperimentManifest& man;
  std::string dir, h;
  bool flow = false;
  int size = 32;

  BrightnessDataset bds;
  FlowDataset fds;
  bool have_data = false;

  Model model, model_v;  // model_v only for flow presets
  bool have_model = false;

  DetectorState det;
  bool have_det = false;
  double of_tau = 0;
  int reasoner_k = 3;

  std::string art(const std::string& stem, const std::string& ext) const {
    return (fs::path(dir) / (stem + "-" + h + ext)).string();
  }
};

std::vector<double> of_train_scores(PipelineContext& ctx) {
  const std::vector<double> sh = full_kl_scores(ctx.model, ctx.fds.train_h);
  const std::vector<double> sv = full_kl_scores(ctx.model_v, ctx.fds.train_v);
  std::vector<double> s(sh.size());
  for (size_t i = 0; i < sh.size(); ++i) s[i] = sh[i] + sv[i];
  return s;
}

Evaluator beta_evaluator(PipelineContext& ctx) {
  return [&ctx](const Model& m) { return evaluate_beta(m, ctx.bds, ctx.reasoner_k); };
}

void stage_synth(PipelineContext& ctx, const nlohmann::json& cfg) {
  const std::uint64_t seed = stage_seed(ctx.man, "synth");
  if (ctx.flow) {
    const int n = cfg.value("n", 24);
    ctx.fds = gen_flows(seed, n, ctx.size);
    save_flows(ctx.fds, (fs::path(ctx.dir) / ("dataset-" + ctx.h)).string());
  } else {
    const int n = cfg.value("n", 30);
    ctx.bds = gen_brightness(seed, n, ctx.size);
    save_brightness(ctx.bds, (fs::path(ctx.dir) / ("dataset-" + ctx.h)).string());
  }
  ctx.have_data = true;
}

TrainConfig train_cfg_from(const nlohmann::json& cfg, std::uint64_t seed, double beta) {
  TrainConfig c;
  c.epochs = cfg.value("epochs", 6);
  c.learning_rate = cfg.value("learning_rate", 1e-3);
  c.batch_size = cfg.value("batch_size", 16);
  c.beta = beta;
  c.seed = seed;
  c.kd_lambda = cfg.value("kd_lambda", 0.0);
  return c;
}

void stage_train(PipelineContext& ctx, const nlohmann::json& cfg) {
  if (!ctx.have_data) {
    const std::string ds = cfg.at("dataset");
    if (ctx.flow)
      ctx.fds = load_flows(ds);
    else
      ctx.bds = load_brightness(ds);
    ctx.have_data = true;
  }
  const VaeSpec spec = make_preset(ctx.man.preset);
  if (ctx.flow) {
    for (const char* side : {"h", "v"}) {
      const std::uint64_t seed = hash_key({stage_seed(ctx.man, "train"), hash_str(side)});
      Model& m = side[0] == 'h' ? ctx.model : ctx.model_v;
      m.spec = spec;
      m.params = init_params(spec, seed);
      TrainConfig c = train_cfg_from(cfg, seed, spec.beta);
      const Array& data = side[0] == 'h' ? ctx.fds.train_h : ctx.fds.train_v;
      TrainResult tr = train_vae(m.spec, m.params, data, c);
      if (tr.diverged) throw Error(std::string("train: encoder ") + side + " diverged");
      save_model(m, ctx.art(std::string("model-") + side, ".vaec"));
      write_loss_csv(tr.history, ctx.art(std::string("loss-") + side, ".csv"));
    }
  } else {
    const std::uint64_t seed = stage_seed(ctx.man, "train");
    ctx.model.spec = spec;
    ctx.model.params = init_params(spec, seed);
    TrainConfig c = train_cfg_from(cfg, seed, spec.beta);
    TrainResult tr = train_vae(ctx.model.spec, ctx.model.params, ctx.bds.train, c);
    if (tr.diverged) throw Error("train: training diverged");
    save_model(ctx.model, ctx.art("model", ".vaec"));
    write_loss_csv(tr.history, ctx.art("loss", ".csv"));
  }
  ctx.have_model = true;
}

void stage_calibrate(PipelineContext& ctx, const nlohmann::json& cfg) {
  if (ctx.flow) {
    // Threshold at the given quantile of the ID training scores.
    std::vector<double> s = of_train_scores(ctx);
    std::sort(s.begin(), s.end());
    const double q = cfg.value("quantile", 0.95);
    ctx.of_tau = s[static_cast<size_t>(q * static_cast<double>(s.size() - 1))];
    std::ofstream os(ctx.art("of-threshold", ".json"));
    os << nlohmann::json{{"tau", ctx.of_tau}}.dump(2) << "\n";
  } else {
    ctx.reasoner_k = cfg.value("k", 3);
    ctx.det = calibrate(ctx.model, ctx.bds.calibration, ctx.reasoner_k);
    tune_cusum(ctx.det, reasoner_scores(ctx.model, ctx.det, ctx.bds.test_id),
               reasoner_scores(ctx.model, ctx.det, ctx.bds.test_ood),
               cfg.value("fpr_cap", 0.25));
    ctx.det.save(ctx.art("detector", ".json"));
  }
  ctx.have_det = true;
}

void apply_each(PipelineContext& ctx, const std::function<Model(const Model&)>& f) {
  ctx.model = f(ctx.model);
  if (ctx.flow) ctx.model_v = f(ctx.model_v);
}

std::vector<Array> calib_batches(PipelineContext& ctx, bool vertical) {
  std::vector<Array> out;
  const Array& data = ctx.flow ? (vertical ? ctx.fds.train_v : ctx.fds.train_h)
                               : ctx.bds.calibration;
  const int64_t n = data.dim(0);
  for (int64_t b = 0; b < n; b += 16) out.push_back(slice_batch(data, b, std::min(b + 16, n)));
  return out;
}

void stage_quantize(PipelineContext& ctx, const nlohmann::json& cfg) {
  const std::string mode = cfg.value("mode", "dynamic");
  if (mode == "dynamic") {
    apply_each(ctx, [](const Model& m) { return dynamic_quantize(m); });
  } else if (mode == "static") {
    ctx.model = static_quantize(ctx.model, calib_batches(ctx, false));
    if (ctx.flow) ctx.model_v = static_quantize(ctx.model_v, calib_batches(ctx, true));
  } else if (mode == "qat") {
    const std::uint64_t seed = stage_seed(ctx.man, "quantize");
    TrainConfig c = train_cfg_from(cfg, seed, ctx.model.spec.beta);
    c.epochs = cfg.value("epochs", 2);
    c.learning_rate = cfg.value("learning_rate", 1e-4);
    ctx.model = qat_quantize(ctx.model, ctx.flow ? ctx.fds.train_h : ctx.bds.train, c);
    if (ctx.flow) ctx.model_v = qat_quantize(ctx.model_v, ctx.fds.train_v, c);
  } else {
    throw Error("quantize: unknown mode " + mode);
  }
  save_model(ctx.model, ctx.art(ctx.flow ? "model-" + mode + "-h" : "model-" + mode, ".vaec"));
  if (ctx.flow) save_model(ctx.model_v, ctx.art("model-" + mode + "-v", ".vaec"));
}

void stage_prune(PipelineContext& ctx, const nlohmann::json& cfg) {
  const double s = cfg.value("sparsity", 50.0);
  apply_each(ctx, [s](const Model& m) { return pruned_copy(m, s); });
  const std::string stem = "model-pruned" + std::to_string(static_cast<int>(s));
  save_model(ctx.model, ctx.art(ctx.flow ? stem + "-h" : stem, ".vaec"));
  if (ctx.flow) save_model(ctx.model_v, ctx.art(stem + "-v", ".vaec"));
}

void stage_distill_search(PipelineContext& ctx, const nlohmann::json& cfg) {
  const std::uint64_t seed = stage_seed(ctx.man, "distill-search");
  TrainConfig c = train_cfg_from(cfg, seed, ctx.model.spec.beta);
  c.kd_lambda = cfg.value("kd_lambda", 1.0);
  if (ctx.flow) {
    // Each encoder is searched with the other held fixed.
    std::vector<Model> mh, mv;
    Evaluator eh = [&ctx](const Model& m) { return evaluate_of(m, ctx.model_v, ctx.fds); };
    SearchReport rh =
        prune_aware_kd_search(ctx.model, ctx.man.constraint, c, ctx.fds.train_h, eh, &mh);
    ctx.model = mh.back();
    rh.save_csv(ctx.art("distill-search-h", ".csv"));
    rh.save_json(ctx.art("distill-search-h", ".json"));
    Evaluator ev = [&ctx](const Model& m) { return evaluate_of(ctx.model, m, ctx.fds); };
    SearchReport rv =
        prune_aware_kd_search(ctx.model_v, ctx.man.constraint, c, ctx.fds.train_v, ev, &mv);
    ctx.model_v = mv.back();
    rv.save_csv(ctx.art("distill-search-v", ".csv"));
    rv.save_json(ctx.art("distill-search-v", ".json"));
    save_model(ctx.model, ctx.art("model-distilled-h", ".vaec"));
    save_model(ctx.model_v, ctx.art("model-distilled-v", ".vaec"));
  } else {
    std::vector<Model> models;
    SearchReport r = prune_aware_kd_search(ctx.model, ctx.man.constraint, c, ctx.bds.train,
                                           beta_evaluator(ctx), &models);
    ctx.model = models.back();
    r.save_csv(ctx.art("distill-search", ".csv"));
    r.save_json(ctx.art("distill-search", ".json"));
    save_model(ctx.model, ctx.art("model-distilled", ".vaec"));
  }
}

// Optional precision transform applied before every search evaluation.
std::function<Model(const Model&)> precision_transform(const std::string& precision) {
  if (precision == "fp16") return [](const Model& m) { return to_fp16_model(m); };
  if (precision == "qint8") return [](const Model& m) { return dynamic_quantize(m); };
  if (precision.empty() || precision == "fp32") return [](const Model& m) { return m; };
  throw Error("unknown search precision " + precision);
}

SearchReport run_sparsity_search(PipelineContext& ctx, double resolution,
                                 const std::string& precision, Model* selected_h,
                                 Model* selected_v) {
  auto transform = precision_transform(precision);
  SearchReport report;
  if (ctx.flow) {
    Evaluator e = [&](const Model& mh) {
      const double s = measured_sparsity(mh.params);
      Model mv = pruned_copy(ctx.model_v, s);
      return evaluate_of(transform(mh), transform(mv), ctx.fds);
    };
    report = binary_sparsity_search(ctx.model, ctx.man.constraint, resolution, e);
    const double s = report.selected().sparsity_pct;
    *selected_h = pruned_copy(ctx.model, s);
    if (selected_v) *selected_v = pruned_copy(ctx.model_v, measured_sparsity(selected_h->params));
  } else {
    Evaluator e = [&](const Model& m) { return evaluate_beta(transform(m), ctx.bds, ctx.reasoner_k); };
    report = binary_sparsity_search(ctx.model, ctx.man.constraint, resolution, e);
    *selected_h = pruned_copy(ctx.model, report.selected().sparsity_pct);
  }
  return report;
}

void stage_sparsity_search(PipelineContext& ctx, const nlohmann::json& cfg) {
  const double resolution = cfg.value("resolution", 5.0);
  Model sh, sv;
  SearchReport r = run_sparsity_search(ctx, resolution, cfg.value("precision", ""), &sh,
                                       ctx.flow ? &sv : nullptr);
  r.save_csv(ctx.art("sparsity-search", ".csv"));
  r.save_json(ctx.art("sparsity-search", ".json"));
  ctx.model = sh;
  if (ctx.flow) ctx.model_v = sv;
  save_model(ctx.model, ctx.art(ctx.flow ? "model-sparse-h" : "model-sparse", ".vaec"));
  if (ctx.flow) save_model(ctx.model_v, ctx.art("model-sparse-v", ".vaec"));
}

void stage_target_aware(PipelineContext& ctx, const nlohmann::json& cfg) {
  const double resolution = cfg.value("resolution", 5.0);
  for (const char* precision : {"fp16", "qint8"}) {
    Model sh, sv;
    SearchReport r =
        run_sparsity_search(ctx, resolution, precision, &sh, ctx.flow ? &sv : nullptr);
    r.save_csv(ctx.art(std::string("target-search-") + precision, ".csv"));
    r.save_json(ctx.art(std::string("target-search-") + precision, ".json"));
    auto transform = precision_transform(precision);
    const std::string stem = std::string("model-") + precision;
    save_model(transform(sh), ctx.art(ctx.flow ? stem + "-h" : stem, ".vaec"));
    if (ctx.flow) save_model(transform(sv), ctx.art(stem + "-v", ".vaec"));
  }
}

void stage_detect(PipelineContext& ctx, const nlohmann::json&) {
  if (ctx.flow) throw Error("detect: stream detection applies to brightness presets only");
  DetectorState st = ctx.det;
  st.cusum = 0;
  st.log_martingale = 0;
  Array stream = ctx.bds.test_id;
  const int64_t per = stream.numel() / stream.dim(0);
  stream.v.insert(stream.v.end(), ctx.bds.test_ood.v.begin(), ctx.bds.test_ood.v.end());
  stream.shape[0] += ctx.bds.test_ood.dim(0);
  (void)per;
  write_trace_csv(beta_vae_detect(ctx.model, st, stream), ctx.art("trace", ".csv"));
}

void stage_eval(PipelineContext& ctx, const nlohmann::json&) {
  std::vector<double> id, ood;
  double threshold = 0;
  if (ctx.flow) {
    const std::vector<double> sh = full_kl_scores(ctx.model, ctx.fds.test_h);
    const std::vector<double> sv = full_kl_scores(ctx.model_v, ctx.fds.test_v);
    for (size_t i = 0; i < ctx.fds.test_labels.size(); ++i)
      (ctx.fds.test_labels[i] ? ood : id).push_back(sh[i] + sv[i]);
    threshold = ctx.of_tau;
  } else {
    DetectorState st = ctx.have_det ? ctx.det : calibrate(ctx.model, ctx.bds.calibration, ctx.reasoner_k);
    auto cusum_scores = [&](const Array& frames) {
      DetectorState s = st;
      s.cusum = 0;
      s.log_martingale = 0;
      std::vector<double> out;
      for (const TraceRow& r : beta_vae_detect(ctx.model, s, frames)) out.push_back(r.cusum);
      return out;
    };
    id = cusum_scores(ctx.bds.test_id);
    ood = cusum_scores(ctx.bds.test_ood);
    threshold = st.tau;
  }
  make_metric_report(id, ood, threshold).save(ctx.art("metrics", ".json"));
  write_roc_csv(id, ood, ctx.art("roc", ".csv"));
}

void stage_bench(PipelineContext& ctx, const nlohmann::json& cfg) {
  const int n_runs = cfg.value("n_runs", 10);
  const Array& data = ctx.flow ? ctx.fds.test_h : ctx.bds.test_id;
  BenchResult b = benchmark_forward(ctx.model, slice_batch(data, 0, 1), n_runs);
  std::ofstream os(ctx.art("bench", ".json"));
  os << nlohmann::json{{"mean_ms", b.mean_ms}, {"std_ms", b.std_ms}, {"n_runs", b.n_runs}}.dump(2)
     << "\n";
}

}  // namespace

std::string run_manifest(const ExperimentManifest& m) {
  m.validate();
  PipelineContext ctx{m};
  ctx.dir = m.artifact_dir;
  ctx.h = m.hash();
  ctx.flow = preset_is_flow(m.preset);
  ctx.size = make_preset(m.preset).input_shape[1];
  fs::create_directories(ctx.dir);
  {
    std::ofstream os(ctx.art("manifest", ".json"));
    os << m.to_json().dump(2) << "\n";
  }

  for (const StageConfig& stage : m.stages) {
    try {
      if (stage.name == "synth")
        stage_synth(ctx, stage.config);
      else if (stage.name == "train")
        stage_train(ctx, stage.config);
      else if (stage.name == "calibrate")
        stage_calibrate(ctx, stage.config);
      else if (stage.name == "quantize")
        stage_quantize(ctx, stage.config);
      else if (stage.name == "prune")
        stage_prune(ctx, stage.config);
      else if (stage.name == "distill-search")
        stage_distill_search(ctx, stage.config);
      else if (stage.name == "sparsity-search")
        stage_sparsity_search(ctx, stage.config);
      else if (stage.name == "target-aware")
        stage_target_aware(ctx, stage.config);
      else if (stage.name == "detect")
        stage_detect(ctx, stage.config);
      else if (stage.name == "eval")
        stage_eval(ctx, stage.config);
      else if (stage.name == "bench")
        stage_bench(ctx, stage.config);
    } catch (const std::exception& e) {
      std::ofstream os(ctx.art("failure", ".json"));
      os << nlohmann::json{{"stage", stage.name}, {"error", e.what()}}.dump(2) << "\n";
      throw Error("stage '" + stage.name + "' failed: " + e.what());
    }
  }
  return ctx.dir;
}

}  // namespace vaecomp
