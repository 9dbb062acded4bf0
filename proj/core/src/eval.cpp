#include "vaecomp/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

namespace vaecomp {

double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw Error("auroc: empty score set");
  // O((n+m) log) via merged ranks; equivalent to pair enumeration with half ties.
  std::vector<double> id_sorted = id_scores;
  std::sort(id_sorted.begin(), id_sorted.end());
  double wins = 0;
  for (double o : ood_scores) {
    const auto lo = std::lower_bound(id_sorted.begin(), id_sorted.end(), o);
    const auto hi = std::upper_bound(id_sorted.begin(), id_sorted.end(), o);
    wins += static_cast<double>(lo - id_sorted.begin());
    wins += 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size()));
}

std::pair<double, double> tpr_fpr(const std::vector<double>& id_scores,
                                  const std::vector<double>& ood_scores, double threshold) {
  if (id_scores.empty() || ood_scores.empty()) throw Error("tpr_fpr: empty score set");
  double tp = 0, fp = 0;
  for (double o : ood_scores)
    if (o > threshold) tp += 1;
  for (double i : id_scores)
    if (i > threshold) fp += 1;
  return {tp / static_cast<double>(ood_scores.size()), fp / static_cast<double>(id_scores.size())};
}

MetricReport make_metric_report(const std::vector<double>& id_scores,
                                const std::vector<double>& ood_scores, double threshold) {
  MetricReport r;
  r.auroc = auroc(id_scores, ood_scores);
  const auto [tpr, fpr] = tpr_fpr(id_scores, ood_scores, threshold);
  r.tpr = tpr;
  r.fpr = fpr;
  r.threshold = threshold;
  r.n_id = static_cast<int64_t>(id_scores.size());
  r.n_ood = static_cast<int64_t>(ood_scores.size());
  return r;
}

nlohmann::json MetricReport::to_json() const {
  return {{"auroc", auroc}, {"tpr", tpr},     {"fpr", fpr},
          {"threshold", threshold}, {"n_id", n_id}, {"n_ood", n_ood}};
}

void MetricReport::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("MetricReport: cannot open " + path);
  os << to_json().dump(2) << "\n";
}

namespace {

int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

}  // namespace

int64_t layer_flop_count(const LayerSpec& l, const std::vector<int64_t>& in) {
  const std::vector<int64_t> out = layer_output_shape(l, in, "flops");
  if (std::holds_alternative<Flatten>(l) || std::holds_alternative<Unflatten>(l))
    return 0;  // pure reshapes
  if (const auto* c = std::get_if<Conv2d>(&l))
    return 2LL * c->kernel * c->kernel * c->in_ch * c->out_ch * out[1] * out[2];
  if (const auto* c = std::get_if<ConvTranspose2d>(&l))
    return 2LL * c->kernel * c->kernel * c->in_ch * c->out_ch * in[1] * in[2];
  if (const auto* fc = std::get_if<Linear>(&l)) return 2LL * fc->in * fc->out;
  if (const auto* h = std::get_if<LatentHead>(&l)) return 2 * (2LL * in[0] * h->latent_dim);
  return numel_of(out);
}

namespace {

int64_t sequence_flops(const std::vector<LayerSpec>& layers, std::vector<int64_t> shape,
                       const std::string& where) {
  int64_t total = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    total += layer_flop_count(layers[i], shape);
    shape = layer_output_shape(layers[i], shape, where + "[" + std::to_string(i) + "]");
  }
  return total;
}

}  // namespace

int64_t encoder_flop_count(const VaeSpec& spec) {
  std::vector<int64_t> in = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  return sequence_flops(spec.encoder, in, "encoder");
}

int64_t flop_count(const VaeSpec& spec) {
  int64_t total = encoder_flop_count(spec);
  if (!spec.decoder.empty())
    total += sequence_flops(spec.decoder, {spec.latent_dim}, "decoder");
  return total;
}

BenchResult benchmark_forward(const Model& model, const Array& batch, int n_runs, int warmup) {
  if (n_runs < 10) throw Error("benchmark_forward: n_runs must be >= 10");
  RuntimeParams rp = materialize(model.params);
  ExecOptions opt;
  opt.prec = exec_precision_for(model.params);
  opt.act_qparams = &model.params.act_qparams;

  volatile double sink = 0;
  for (int i = 0; i < warmup; ++i) {
    EncoderResult r = forward_encoder(model.spec, rp, batch, opt);
    sink += r.mu.v.empty() ? 0 : r.mu.v[0];
  }
  std::vector<double> ms(static_cast<size_t>(n_runs));
  for (int i = 0; i < n_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    EncoderResult r = forward_encoder(model.spec, rp, batch, opt);
    const auto t1 = std::chrono::steady_clock::now();
    sink += r.mu.v.empty() ? 0 : r.mu.v[0];
    ms[static_cast<size_t>(i)] =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  (void)sink;
  BenchResult res;
  res.n_runs = n_runs;
  for (double m : ms) res.mean_ms += m;
  res.mean_ms /= static_cast<double>(n_runs);
  for (double m : ms) res.std_ms += (m - res.mean_ms) * (m - res.mean_ms);
  res.std_ms = std::sqrt(res.std_ms / static_cast<double>(n_runs));
  return res;
}

void write_roc_csv(const std::vector<double>& id_scores, const std::vector<double>& ood_scores,
                   const std::string& path) {
  if (id_scores.empty() || ood_scores.empty()) throw Error("write_roc_csv: empty score set");
  std::vector<double> thresholds;
  thresholds.reserve(id_scores.size() + ood_scores.size());
  thresholds.insert(thresholds.end(), id_scores.begin(), id_scores.end());
  thresholds.insert(thresholds.end(), ood_scores.begin(), ood_scores.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::ofstream os(path);
  if (!os) throw Error("write_roc_csv: cannot open " + path);
  os << "threshold,fpr,tpr\n";
  char buf[160];
  os << "-inf,1,1\n";
  for (double t : thresholds) {
    const auto [tpr, fpr] = tpr_fpr(id_scores, ood_scores, t);
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", t, fpr, tpr);
    os << buf;
  }
}

}  // namespace vaecomp
