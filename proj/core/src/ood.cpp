#include "vaecomp/ood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace vaecomp {

Array latent_kl_per_dim(const Array& mu, const Array& logvar) {
  if (mu.shape != logvar.shape) throw Error("latent_kl_per_dim: shape mismatch");
  Array kl(mu.shape);
  for (size_t i = 0; i < mu.v.size(); ++i) {
    const double m = mu.v[i], lv = logvar.v[i];
    if (!std::isfinite(m) || !std::isfinite(lv))
      throw Error("latent_kl_per_dim: non-finite latent statistic");
    kl.v[i] = 0.5 * (m * m + std::exp(lv) - lv - 1.0);
  }
  return kl;
}

std::vector<int> select_reasoners(const Array& kl, int k) {
  if (k <= 0) throw Error("select_reasoners: k must be positive");
  if (kl.ndim() != 2) throw Error("select_reasoners: expected (N,D) KL matrix");
  const int64_t n = kl.dim(0), d = kl.dim(1);
  if (k > d) throw Error("select_reasoners: k exceeds latent dim");
  std::vector<std::pair<double, int>> var_by_dim;
  for (int64_t j = 0; j < d; ++j) {
    double mean = 0;
    for (int64_t i = 0; i < n; ++i) mean += kl.v[i * d + j];
    mean /= static_cast<double>(n);
    double var = 0;
    for (int64_t i = 0; i < n; ++i) {
      const double dev = kl.v[i * d + j] - mean;
      var += dev * dev;
    }
    var /= static_cast<double>(n);
    var_by_dim.emplace_back(var, static_cast<int>(j));
  }
  std::stable_sort(var_by_dim.begin(), var_by_dim.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> dims;
  for (int i = 0; i < k; ++i) dims.push_back(var_by_dim[i].second);
  return dims;
}

double icp_pvalue(const std::vector<double>& sorted_calib, double test_score) {
  if (sorted_calib.empty()) throw Error("icp_pvalue: empty calibration set");
  const auto it = std::lower_bound(sorted_calib.begin(), sorted_calib.end(), test_score);
  const auto ge = static_cast<double>(sorted_calib.end() - it);
  return (ge + 1.0) / (static_cast<double>(sorted_calib.size()) + 1.0);
}

double martingale_increment(double p, double epsilon) {
  if (!(p > 0) || p > 1) throw Error("martingale: p must be in (0,1]");
  if (!(epsilon > 0) || !(epsilon < 1)) throw Error("martingale: epsilon must be in (0,1)");
  return std::log(epsilon) + (epsilon - 1.0) * std::log(p);
}

double martingale_update(double log_m, double p, double epsilon) {
  return log_m + martingale_increment(p, epsilon);
}

double cusum_update(double s, double z, double delta) {
  if (s < 0) throw Error("cusum_update: S must be nonnegative");
  return std::max(0.0, s + z - delta);
}

nlohmann::json DetectorState::to_json() const {
  nlohmann::json j;
  j["reasoner_dims"] = reasoner_dims;
  j["calib_scores"] = calib_scores;
  j["epsilon"] = epsilon;
  j["log_martingale"] = log_martingale;
  j["cusum"] = cusum;
  j["delta"] = delta;
  j["tau"] = tau;
  return j;
}

DetectorState DetectorState::from_json(const nlohmann::json& j) {
  DetectorState s;
  s.reasoner_dims = j.at("reasoner_dims").get<std::vector<int>>();
  s.calib_scores = j.at("calib_scores").get<std::vector<double>>();
  s.epsilon = j.at("epsilon");
  s.log_martingale = j.at("log_martingale");
  s.cusum = j.at("cusum");
  s.delta = j.at("delta");
  s.tau = j.at("tau");
  return s;
}

void DetectorState::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("DetectorState: cannot open " + path);
  os << to_json().dump(2) << "\n";
}

DetectorState DetectorState::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("DetectorState: cannot open " + path);
  nlohmann::json j;
  is >> j;
  return from_json(j);
}

EncoderResult encode(const Model& model, const Array& batch) {
  RuntimeParams rp = materialize(model.params);
  ExecOptions opt;
  opt.prec = exec_precision_for(model.params);
  opt.act_qparams = &model.params.act_qparams;
  return forward_encoder(model.spec, rp, batch, opt);
}

std::vector<double> reasoner_scores(const Model& model, const DetectorState& state,
                                    const Array& batch) {
  EncoderResult enc = encode(model, batch);
  Array kl = latent_kl_per_dim(enc.mu, enc.logvar);
  const int64_t n = kl.dim(0), d = kl.dim(1);
  std::vector<double> scores(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int dim : state.reasoner_dims) scores[i] += kl.v[i * d + dim];
  return scores;
}

std::vector<double> full_kl_scores(const Model& model, const Array& batch) {
  EncoderResult enc = encode(model, batch);
  Array kl = latent_kl_per_dim(enc.mu, enc.logvar);
  const int64_t n = kl.dim(0), d = kl.dim(1);
  std::vector<double> scores(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) scores[i] += kl.v[i * d + j];
  return scores;
}

DetectorState calibrate(const Model& model, const Array& calib, int k) {
  if (calib.ndim() != 4 || calib.dim(0) < 1) throw Error("calibrate: empty calibration set");
  DetectorState state;
  EncoderResult enc = encode(model, calib);
  Array kl = latent_kl_per_dim(enc.mu, enc.logvar);
  state.reasoner_dims = select_reasoners(kl, k);
  const int64_t n = kl.dim(0), d = kl.dim(1);
  state.calib_scores.resize(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int dim : state.reasoner_dims) state.calib_scores[i] += kl.v[i * d + dim];
  std::sort(state.calib_scores.begin(), state.calib_scores.end());
  state.log_martingale = 0.0;
  state.cusum = 0.0;
  return state;
}

std::vector<TraceRow> beta_vae_detect(const Model& model, DetectorState& state,
                                      const Array& frames) {
  if (!state.calibrated()) throw Error("beta_vae_detect: detector state is not calibrated");
  std::vector<double> scores = reasoner_scores(model, state, frames);
  std::vector<TraceRow> trace;
  trace.reserve(scores.size());
  for (size_t t = 0; t < scores.size(); ++t) {
    TraceRow row;
    row.frame = static_cast<int>(t);
    row.kl_sum = scores[t];
    row.p = icp_pvalue(state.calib_scores, scores[t]);
    const double z = martingale_increment(row.p, state.epsilon);
    state.log_martingale += z;
    state.cusum = cusum_update(state.cusum, z, state.delta);
    row.log_m = state.log_martingale;
    row.cusum = state.cusum;
    row.is_ood = state.cusum > state.tau;
    trace.push_back(row);
  }
  return trace;
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("write_trace_csv: cannot open " + path);
  os << "frame,kl_sum,p,log_M,cusum,is_ood\n";
  char buf[220];
  for (const TraceRow& r : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%d\n", r.frame, r.kl_sum, r.p,
                  r.log_m, r.cusum, r.is_ood ? 1 : 0);
    os << buf;
  }
}

OfDetection of_detect(const Model& enc_h, const Model& enc_v, const Array& window_h,
                      const Array& window_v, double tau) {
  Array bh = window_h, bv = window_v;
  if (bh.ndim() == 3) bh.shape.insert(bh.shape.begin(), 1);
  if (bv.ndim() == 3) bv.shape.insert(bv.shape.begin(), 1);
  const double score = full_kl_scores(enc_h, bh).at(0) + full_kl_scores(enc_v, bv).at(0);
  return {score, score > tau};
}

void tune_cusum(DetectorState& state, const std::vector<double>& id_scores,
                const std::vector<double>& ood_scores, double fpr_cap) {
  if (!state.calibrated()) throw Error("tune_cusum: detector state is not calibrated");
  auto cusum_series = [&](const std::vector<double>& scores, double delta) {
    std::vector<double> out;
    double s = 0;
    out.reserve(scores.size());
    for (double sc : scores) {
      const double p = icp_pvalue(state.calib_scores, sc);
      s = cusum_update(s, martingale_increment(p, state.epsilon), delta);
      out.push_back(s);
    }
    return out;
  };
  const std::vector<double> deltas = {0.0, 0.02, 0.05, 0.1, 0.2, 0.5};
  double best_tpr = -1, best_fpr = 2, best_delta = state.delta, best_tau = state.tau;
  for (double delta : deltas) {
    const std::vector<double> id_c = cusum_series(id_scores, delta);
    const std::vector<double> ood_c = cusum_series(ood_scores, delta);
    std::vector<double> taus = id_c;
    taus.push_back(0.0);
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    for (double tau : taus) {
      double fp = 0, tp = 0;
      for (double v : id_c)
        if (v > tau) fp += 1;
      for (double v : ood_c)
        if (v > tau) tp += 1;
      const double fpr = id_c.empty() ? 0 : fp / static_cast<double>(id_c.size());
      const double tpr = ood_c.empty() ? 0 : tp / static_cast<double>(ood_c.size());
      if (fpr > fpr_cap) continue;
      if (tpr > best_tpr || (tpr == best_tpr && fpr < best_fpr)) {
        best_tpr = tpr;
        best_fpr = fpr;
        best_delta = delta;
        best_tau = tau;
      }
    }
  }
  state.delta = best_delta;
  state.tau = best_tau;
}

}  // namespace vaecomp
