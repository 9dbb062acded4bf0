#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "vaecomp/rng.hpp"
#include "vaecomp/train.hpp"

#include "doctest.h"

using namespace vaecomp;

namespace {

VaeSpec tiny_spec() {
  VaeSpec spec;
  spec.name = "tiny";
  spec.input_shape = {1, 4, 4};
  spec.latent_dim = 2;
  spec.beta = 1.0;
  spec.encoder = {Flatten{}, Linear{16, 8}, LeakyReLU{0.01}, LatentHead{2}};
  spec.decoder = mirror_decoder(spec.encoder, spec.input_shape, spec.latent_dim);
  return spec;
}

Array tiny_data(int64_t n, std::uint64_t seed) {
  Array d({n, 1, 4, 4});
  for (size_t i = 0; i < d.v.size(); ++i) d.v[i] = 0.5 + 0.2 * key_gaussian({seed, i});
  return d;
}

}  // namespace

TEST_CASE("elbo_loss matches the closed form") {
  Array x({1, 1, 1, 2});
  x.v = {1.0, 0.0};
  Array xh({1, 1, 1, 2});
  xh.v = {0.0, 0.0};
  Array mu({1, 1});
  mu.v = {0.0};
  Array lv({1, 1});
  lv.v = {0.0};
  // recon = 1, kl = 0 at the prior
  ElboParts p = elbo_loss(x, xh, mu, lv, 1.4);
  CHECK(p.recon == doctest::Approx(1.0));
  CHECK(p.kl == doctest::Approx(0.0));
  CHECK(p.total == doctest::Approx(1.0));

  // mu = 1, logvar = 0 in one dim: kl = 1/2, beta 1.4 -> contributes 0.7
  mu.v = {1.0};
  p = elbo_loss(x, x, mu, lv, 1.4);
  CHECK(p.recon == doctest::Approx(0.0));
  CHECK(p.kl == doctest::Approx(0.5));
  CHECK(p.total == doctest::Approx(0.7));
}

TEST_CASE("kl term is nonnegative everywhere") {
  Array x({1, 1, 1, 1}), mu({1, 1}), lv({1, 1});
  for (double m : {-3.0, -0.5, 0.0, 0.7, 4.0})
    for (double l : {-5.0, -1.0, 0.0, 1.0, 3.0}) {
      mu.v = {m};
      lv.v = {l};
      CHECK(elbo_loss(x, x, mu, lv, 1.0).kl >= 0.0);
    }
}

TEST_CASE("elbo_loss rejects non-finite inputs") {
  Array x({1, 1, 1, 1}), mu({1, 1}), lv({1, 1});
  Array bad = x;
  bad.v = {std::nan("")};
  CHECK_THROWS_AS(elbo_loss(x, bad, mu, lv, 1.0), Error);
  lv.v = {std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(elbo_loss(x, x, mu, lv, 1.0), Error);
}

TEST_CASE("reparameterize scales noise by exp(logvar/2)") {
  Array mu({1, 1}), lv({1, 1}), noise({1, 1});
  mu.v = {2.0};
  lv.v = {std::log(4.0)};
  noise.v = {1.0};
  Array z = reparameterize(mu, lv, noise);
  CHECK(z.v[0] == doctest::Approx(2.0 + 2.0));

  noise.v = {0.0};
  CHECK(reparameterize(mu, lv, noise).v[0] == doctest::Approx(2.0));
}

TEST_CASE("adam leaves parameters with zero gradient untouched") {
  RuntimeParams rp;
  rp.values["w"] = Array({2});
  rp.at("w").v = {0.3, -0.7};
  GradStore g;
  g.grad_for("w", {2});  // zeros
  AdamState st;
  adam_step(rp, g, st, 0.01);
  CHECK(rp.at("w").v[0] == 0.3);
  CHECK(rp.at("w").v[1] == -0.7);
}

TEST_CASE("adam first step moves each weight by about lr") {
  RuntimeParams rp;
  rp.values["w"] = Array({2});
  rp.at("w").v = {1.0, -1.0};
  GradStore g;
  Array& gw = g.grad_for("w", {2});
  gw.v = {0.5, -3.0};
  AdamState st;
  adam_step(rp, g, st, 0.01);
  // bias-corrected m/sqrt(v) is sign(grad) on step one (up to eps)
  CHECK(rp.at("w").v[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-5));
  CHECK(rp.at("w").v[1] == doctest::Approx(-1.0 + 0.01).epsilon(1e-5));
}

TEST_CASE("adam keeps masked entries at exactly zero") {
  RuntimeParams rp;
  rp.values["w"] = Array({3});
  rp.at("w").v = {0.0, 1.0, 2.0};
  rp.masks["w"] = {0, 1, 1};
  GradStore g;
  Array& gw = g.grad_for("w", {3});
  gw.v = {5.0, 1.0, 1.0};
  AdamState st;
  for (int i = 0; i < 4; ++i) adam_step(rp, g, st, 0.1);
  CHECK(rp.at("w").v[0] == 0.0);
  CHECK(rp.at("w").v[1] != 1.0);
}

TEST_CASE("training reduces reconstruction loss on a tiny model") {
  VaeSpec spec = tiny_spec();
  ParamStore params = init_params(spec, 3);
  Array data = tiny_data(32, 9);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 8;
  cfg.beta = 0.05;
  cfg.seed = 7;
  TrainResult r = train_vae(spec, params, data, cfg);
  REQUIRE(r.history.size() == 40);
  CHECK(!r.diverged);
  CHECK(r.history.back().recon < 0.5 * r.history.front().recon);
}

TEST_CASE("zero epochs leaves the parameters untouched") {
  VaeSpec spec = tiny_spec();
  ParamStore params = init_params(spec, 1);
  ParamStore before = params;
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 5;
  TrainResult r = train_vae(spec, params, tiny_data(8, 2), cfg);
  CHECK(r.history.empty());
  for (size_t i = 0; i < params.entries.size(); ++i)
    CHECK(params.entries[i].second.value.f == before.entries[i].second.value.f);
}

TEST_CASE("identical seeds give bit-identical training trajectories") {
  VaeSpec spec = tiny_spec();
  Array data = tiny_data(16, 4);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.seed = 11;

  ParamStore a = init_params(spec, 3), b = init_params(spec, 3);
  TrainResult ra = train_vae(spec, a, data, cfg);
  TrainResult rb = train_vae(spec, b, data, cfg);
  for (size_t e = 0; e < ra.history.size(); ++e) {
    CHECK(ra.history[e].total == rb.history[e].total);
    CHECK(ra.history[e].recon == rb.history[e].recon);
  }
  for (size_t i = 0; i < a.entries.size(); ++i)
    CHECK(a.entries[i].second.value.f == b.entries[i].second.value.f);

  // a different seed changes the trajectory
  cfg.seed = 12;
  ParamStore c = init_params(spec, 3);
  TrainResult rc = train_vae(spec, c, data, cfg);
  CHECK(rc.history.back().total != ra.history.back().total);
}

TEST_CASE("training config validation") {
  TrainConfig cfg;
  cfg.epochs = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("loss history CSV has one row per epoch") {
  std::vector<LossRecord> h = {{1.5, 1.0, 0.5}, {1.2, 0.8, 0.4}};
  const std::string path =
      (std::filesystem::temp_directory_path() / "loss-test.csv").string();
  write_loss_csv(h, path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "epoch,total,recon,kl");
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove(path);
}

TEST_CASE("batch slicing and gathering") {
  Array d({4, 1, 1, 2});
  d.v = {0, 1, 2, 3, 4, 5, 6, 7};
  Array s = slice_batch(d, 1, 3);
  CHECK(s.shape == std::vector<int64_t>{2, 1, 1, 2});
  CHECK(s.v == std::vector<double>{2, 3, 4, 5});
  Array g = gather_batch(d, {3, 0});
  CHECK(g.v == std::vector<double>{6, 7, 0, 1});
  CHECK_THROWS_AS(slice_batch(d, 2, 5), Error);
}

TEST_CASE("latent distillation pulls the student mean toward the teacher") {
  VaeSpec spec = tiny_spec();
  Array data = tiny_data(16, 21);

  Model teacher;
  teacher.spec = spec;
  teacher.params = init_params(spec, 50);
  TrainConfig tcfg;
  tcfg.epochs = 20;
  tcfg.learning_rate = 2e-3;
  tcfg.batch_size = 8;
  tcfg.seed = 51;
  train_vae(teacher.spec, teacher.params, data, tcfg);

  auto mu_gap = [&](const ParamStore& sp) {
    Model s{spec, sp};
    RuntimeParams rs = materialize(s.params), rt = materialize(teacher.params);
    ExecOptions opt;
    EncoderResult es = forward_encoder(spec, rs, data, opt);
    EncoderResult et = forward_encoder(spec, rt, data, opt);
    double g = 0;
    for (size_t i = 0; i < es.mu.v.size(); ++i)
      g += (es.mu.v[i] - et.mu.v[i]) * (es.mu.v[i] - et.mu.v[i]);
    return g;
  };

  TrainConfig cfg = tcfg;
  cfg.seed = 52;
  cfg.epochs = 15;

  ParamStore plain = init_params(spec, 60);
  cfg.kd_lambda = 0.0;
  train_vae(spec, plain, data, cfg, &teacher);

  ParamStore distilled = init_params(spec, 60);
  cfg.kd_lambda = 20.0;
  train_vae(spec, distilled, data, cfg, &teacher);

  CHECK(mu_gap(distilled) < mu_gap(plain));
}

TEST_CASE("kd_lambda zero with a teacher equals plain training bit-for-bit") {
  VaeSpec spec = tiny_spec();
  Array data = tiny_data(8, 33);
  Model teacher{spec, init_params(spec, 70)};
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.seed = 71;

  ParamStore a = init_params(spec, 72), b = init_params(spec, 72);
  cfg.kd_lambda = 0.0;
  train_vae(spec, a, data, cfg, &teacher);
  train_vae(spec, b, data, cfg, nullptr);
  for (size_t i = 0; i < a.entries.size(); ++i)
    CHECK(a.entries[i].second.value.f == b.entries[i].second.value.f);
}

TEST_CASE("training respects pruning masks throughout") {
  VaeSpec spec = tiny_spec();
  ParamStore params = init_params(spec, 80);
  ParamTensor& w = params.at("enc.1.weight");
  w.mask = std::vector<std::uint8_t>(w.value.numel(), 1);
  for (size_t i = 0; i < w.value.f.size(); i += 3) {
    (*w.mask)[i] = 0;
    w.value.f[i] = 0;
  }
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 8;
  cfg.seed = 81;
  train_vae(spec, params, tiny_data(16, 82), cfg);
  const ParamTensor& after = params.at("enc.1.weight");
  for (size_t i = 0; i < after.value.f.size(); ++i) {
    if ((*after.mask)[i] == 0)
      CHECK(after.value.f[i] == 0.0f);
  }
}
