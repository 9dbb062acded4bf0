#include "vaecomp/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "vaecomp/rng.hpp"

namespace vaecomp {

void TrainConfig::validate() const {
  if (epochs < 0) throw Error("TrainConfig: epochs must be >= 0");
  if (!(learning_rate > 0)) throw Error("TrainConfig: learning_rate must be positive");
  if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
  if (!(beta > 0)) throw Error("TrainConfig: beta must be positive");
  if (kd_lambda < 0) throw Error("TrainConfig: kd_lambda must be nonnegative");
}

ElboParts elbo_loss(const Array& x, const Array& x_hat, const Array& mu, const Array& logvar,
                    double beta) {
  if (x.shape != x_hat.shape) throw Error("elbo_loss: x/x_hat shape mismatch");
  if (mu.shape != logvar.shape) throw Error("elbo_loss: mu/logvar shape mismatch");
  const int64_t n = x.dim(0);
  double recon = 0;
  for (size_t i = 0; i < x.v.size(); ++i) {
    if (!std::isfinite(x_hat.v[i])) throw Error("elbo_loss: non-finite reconstruction");
    const double d = x_hat.v[i] - x.v[i];
    recon += d * d;
  }
  recon /= static_cast<double>(n);
  double kl = 0;
  for (size_t i = 0; i < mu.v.size(); ++i) {
    const double m = mu.v[i], lv = logvar.v[i];
    if (!std::isfinite(m) || !std::isfinite(lv))
      throw Error("elbo_loss: non-finite latent statistics");
    kl += 0.5 * (m * m + std::exp(lv) - lv - 1.0);
  }
  kl /= static_cast<double>(n);
  return {recon + beta * kl, recon, kl};
}

Array reparameterize(const Array& mu, const Array& logvar, const Array& noise) {
  if (noise.shape != mu.shape) throw Error("reparameterize: noise shape mismatch");
  Array z(mu.shape);
  for (size_t i = 0; i < z.v.size(); ++i)
    z.v[i] = mu.v[i] + std::exp(0.5 * logvar.v[i]) * noise.v[i];
  return z;
}

void adam_step(RuntimeParams& params, GradStore& grads, AdamState& state, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (auto& [name, g] : grads.g) {
    Array& p = params.at(name);
    if (p.v.size() != g.v.size()) throw Error("adam_step: gradient shape mismatch for " + name);
    auto mit = params.masks.find(name);
    const std::vector<std::uint8_t>* mask = mit == params.masks.end() ? nullptr : &mit->second;
    auto m = state.m.find(name);
    if (m == state.m.end()) {
      m = state.m.emplace(name, Array(p.shape)).first;
      state.v.emplace(name, Array(p.shape));
    }
    Array& ma = m->second;
    Array& va = state.v.at(name);
    for (size_t i = 0; i < p.v.size(); ++i) {
      double gi = g.v[i];
      if (mask && !(*mask)[i]) {
        p.v[i] = 0;
        continue;
      }
      ma.v[i] = b1 * ma.v[i] + (1 - b1) * gi;
      va.v[i] = b2 * va.v[i] + (1 - b2) * gi * gi;
      p.v[i] -= lr * (ma.v[i] / bc1) / (std::sqrt(va.v[i] / bc2) + eps);
    }
  }
}

Array slice_batch(const Array& data, int64_t begin, int64_t end) {
  if (begin < 0 || end > data.dim(0) || begin >= end)
    throw Error("slice_batch: range [" + std::to_string(begin) + "," + std::to_string(end) +
                ") out of bounds");
  const int64_t per = data.numel() / data.dim(0);
  Array out;
  out.shape = data.shape;
  out.shape[0] = end - begin;
  out.v.assign(data.v.begin() + begin * per, data.v.begin() + end * per);
  return out;
}

Array gather_batch(const Array& data, const std::vector<int64_t>& idx) {
  const int64_t per = data.numel() / data.dim(0);
  Array out;
  out.shape = data.shape;
  out.shape[0] = static_cast<int64_t>(idx.size());
  out.v.resize(idx.size() * static_cast<size_t>(per));
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(data.v.begin() + idx[i] * per, per, out.v.begin() + static_cast<int64_t>(i) * per);
  return out;
}

TrainResult train_vae(const VaeSpec& spec, ParamStore& params, const Array& data,
                      const TrainConfig& cfg, const Model* teacher) {
  cfg.validate();
  if (data.ndim() != 4 || data.dim(0) < 1) throw Error("train_vae: data must be nonempty (M,C,H,W)");
  if (params.dtype != DType::F32) throw Error("train_vae: only fp32 models are trainable");

  TrainResult result;
  RuntimeParams rp = materialize(params);
  // Keep masked entries exactly zero from the start.
  for (auto& [name, mask] : rp.masks) {
    Array& p = rp.at(name);
    for (size_t i = 0; i < p.v.size(); ++i)
      if (!mask[i]) p.v[i] = 0;
  }

  RuntimeParams teacher_rp;
  ExecOptions teacher_opt;
  if (teacher) {
    teacher_rp = materialize(teacher->params);
    teacher_opt.prec = exec_precision_for(teacher->params);
    teacher_opt.act_qparams = &teacher->params.act_qparams;
  }

  ExecOptions opt;
  opt.training = true;
  opt.prec = cfg.qat ? ExecPrecision::FakeQuant : ExecPrecision::Fp32;
  opt.observe = cfg.qat ? &result.act_ranges : nullptr;

  AdamState adam;
  const int64_t m_total = data.dim(0);
  const int latent = spec.latent_dim;

  RuntimeParams last_good = rp;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(m_total);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 order_rng(hash_key({cfg.seed, hash_str("batch-order"), static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), order_rng);

    double sum_total = 0, sum_recon = 0, sum_kl = 0;
    bool finite = true;
    for (int64_t b0 = 0; b0 < m_total && finite; b0 += cfg.batch_size) {
      const int64_t b1 = std::min<int64_t>(b0 + cfg.batch_size, m_total);
      std::vector<int64_t> idx(order.begin() + b0, order.begin() + b1);
      Array batch = gather_batch(data, idx);
      const int64_t bn = b1 - b0;

      EncoderResult enc = forward_encoder(spec, rp, batch, opt);
      Array noise(enc.mu.shape);
      for (int64_t n = 0; n < bn; ++n)
        for (int d = 0; d < latent; ++d)
          noise.v[n * latent + d] = key_gaussian({cfg.seed, static_cast<std::uint64_t>(epoch),
                                                  static_cast<std::uint64_t>(idx[n]),
                                                  static_cast<std::uint64_t>(d)});
      Array z = reparameterize(enc.mu, enc.logvar, noise);
      DecoderResult dec = forward_decoder(spec, rp, z, enc.pools, opt);
      ElboParts parts = elbo_loss(batch, dec.out, enc.mu, enc.logvar, cfg.beta);

      double kd_term = 0;
      Array teacher_mu;
      if (teacher && cfg.kd_lambda > 0) {
        ExecOptions t_opt = teacher_opt;
        EncoderResult tenc = forward_encoder(teacher->spec, teacher_rp, batch, t_opt);
        teacher_mu = std::move(tenc.mu);
        for (size_t i = 0; i < teacher_mu.v.size(); ++i) {
          const double d = enc.mu.v[i] - teacher_mu.v[i];
          kd_term += d * d;
        }
        kd_term /= static_cast<double>(bn);
      }
      const double batch_total = parts.total + cfg.kd_lambda * kd_term;
      if (!std::isfinite(batch_total)) {
        finite = false;
        break;
      }
      sum_total += batch_total * static_cast<double>(bn);
      sum_recon += parts.recon * static_cast<double>(bn);
      sum_kl += parts.kl * static_cast<double>(bn);

      // Loss gradients.
      GradStore grads;
      Array d_xhat(dec.out.shape);
      for (size_t i = 0; i < d_xhat.v.size(); ++i)
        d_xhat.v[i] = 2.0 * (dec.out.v[i] - batch.v[i]) / static_cast<double>(bn);
      Array d_z = backward_decoder(spec, rp, dec.caches, enc.pools, d_xhat, opt, grads);

      Array d_mu(enc.mu.shape), d_logvar(enc.logvar.shape);
      for (size_t i = 0; i < d_mu.v.size(); ++i) {
        d_mu.v[i] = d_z.v[i] + cfg.beta * enc.mu.v[i] / static_cast<double>(bn);
        d_logvar.v[i] = 0.5 * d_z.v[i] * noise.v[i] * std::exp(0.5 * enc.logvar.v[i]) +
                        cfg.beta * (std::exp(enc.logvar.v[i]) - 1.0) / (2.0 * static_cast<double>(bn));
        if (teacher && cfg.kd_lambda > 0)
          d_mu.v[i] += 2.0 * cfg.kd_lambda * (enc.mu.v[i] - teacher_mu.v[i]) / static_cast<double>(bn);
      }
      backward_encoder(spec, rp, enc.caches, enc.pools, d_mu, d_logvar, opt, grads);

      // Pruned entries receive zero gradient.
      for (auto& [name, mask] : rp.masks) {
        auto git = grads.g.find(name);
        if (git == grads.g.end()) continue;
        for (size_t i = 0; i < git->second.v.size(); ++i)
          if (!mask[i]) git->second.v[i] = 0;
      }
      adam_step(rp, grads, adam, cfg.learning_rate);
    }

    if (!finite) {
      result.diverged = true;
      rp = last_good;
      break;
    }
    last_good = rp;
    result.history.push_back({sum_total / static_cast<double>(m_total),
                              sum_recon / static_cast<double>(m_total),
                              sum_kl / static_cast<double>(m_total)});
  }

  write_back(rp, params);
  return result;
}

void write_loss_csv(const std::vector<LossRecord>& history, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("write_loss_csv: cannot open " + path);
  os << "epoch,total,recon,kl\n";
  char buf[160];
  for (size_t e = 0; e < history.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e, history[e].total,
                  history[e].recon, history[e].kl);
    os << buf;
  }
}

}  // namespace vaecomp
