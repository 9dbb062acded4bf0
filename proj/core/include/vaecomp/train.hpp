// Beta-VAE training: ELBO, reparameterization, Adam, seeded epoch loop,
// optional latent distillation against a frozen teacher, optional QAT.
#pragma once

#include <string>
#include <vector>

#include "vaecomp/runtime.hpp"

namespace vaecomp {

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 1e-4;
  int batch_size = 16;
  double beta = 1.0;
  std::uint64_t seed = 0;
  bool qat = false;
  double kd_lambda = 0.0;  // 0 disables latent distillation

  void validate() const;
};

struct LossRecord {
  double total = 0, recon = 0, kl = 0;
};

struct ElboParts {
  double total = 0, recon = 0, kl = 0;
};

// recon: batch mean of per-sample sum-squared error. kl: batch mean of
// 1/2 * sum_i(mu^2 + exp(logvar) - logvar - 1).
ElboParts elbo_loss(const Array& x, const Array& x_hat, const Array& mu, const Array& logvar,
                    double beta);

// z = mu + exp(logvar/2) * noise
Array reparameterize(const Array& mu, const Array& logvar, const Array& noise);

struct AdamState {
  std::map<std::string, Array> m, v;
  std::int64_t t = 0;
};

// Bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8). Masked entries
// receive zero gradient and stay exactly zero.
void adam_step(RuntimeParams& params, GradStore& grads, AdamState& state, double lr);

struct TrainResult {
  std::vector<LossRecord> history;
  bool diverged = false;
  RangeMap act_ranges;  // populated on the QAT path
};

// data: (M,C,H,W). Deterministic given cfg.seed: fixed batch order per
// epoch, counter-based noise stream keyed by (seed, epoch, sample, dim).
// teacher, when set, adds cfg.kd_lambda * MSE(student mu, teacher mu).
TrainResult train_vae(const VaeSpec& spec, ParamStore& params, const Array& data,
                      const TrainConfig& cfg, const Model* teacher = nullptr);

void write_loss_csv(const std::vector<LossRecord>& history, const std::string& path);

// Slices rows [begin, end) of a (M,...) array.
Array slice_batch(const Array& data, int64_t begin, int64_t end);
Array gather_batch(const Array& data, const std::vector<int64_t>& idx);

}  // namespace vaecomp
