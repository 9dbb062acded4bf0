// Command-line front end: each subcommand wraps one library operation;
// `run` executes a whole experiment manifest.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "vaecomp/manifest.hpp"

#include "CLI11.hpp"

using namespace vaecomp;

namespace {

bool is_flow_dataset(const std::string& dir) {
  std::ifstream is(dir + "/index.json");
  if (!is) throw Error("cannot open dataset index in " + dir);
  nlohmann::json j;
  is >> j;
  return j.at("kind") == "flows";
}

// Evaluator over a dataset directory; for flow data the partner encoder is
// pruned to the candidate's measured sparsity when none is supplied.
Evaluator make_evaluator(const std::string& data_dir, const std::string& partner_path, int k) {
  if (is_flow_dataset(data_dir)) {
    auto ds = std::make_shared<FlowDataset>(load_flows(data_dir));
    if (partner_path.empty()) throw Error("flow evaluation needs --in-v (partner encoder)");
    auto partner = std::make_shared<Model>(load_model(partner_path));
    return [ds, partner](const Model& m) { return evaluate_of(m, *partner, *ds); };
  }
  auto ds = std::make_shared<BrightnessDataset>(load_brightness(data_dir));
  return [ds, k](const Model& m) { return evaluate_beta(m, *ds, k); };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"beta-VAE OOD detector compression toolkit"};
  app.require_subcommand(1);

  std::string preset = "desk-beta-vae", in, in_v, out, data, mode = "dynamic", manifest_path,
              detector_path, direction = "h";
  std::uint64_t seed = 0;
  int n = 30, epochs = 6, batch = 16, k = 3, n_runs = 10;
  double lr = 1e-3, sparsity = 50.0, threshold = 0.0, constraint_auroc = 0.5, resolution = 5.0,
         kd_lambda = 1.0;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--preset", preset);
  synth->add_option("--seed", seed);
  synth->add_option("--n", n);
  synth->add_option("--out", out)->required();

  auto* train = app.add_subcommand("train", "Train a beta-VAE");
  train->add_option("--preset", preset);
  train->add_option("--seed", seed);
  train->add_option("--in", in, "dataset directory")->required();
  train->add_option("--out", out)->required();
  train->add_option("--epochs", epochs);
  train->add_option("--learning-rate", lr);
  train->add_option("--batch-size", batch);
  train->add_option("--direction", direction, "flow component: h or v");

  auto* calib = app.add_subcommand("calibrate", "Calibrate the detector");
  calib->add_option("--in", in, "model file")->required();
  calib->add_option("--data", data, "dataset directory")->required();
  calib->add_option("--out", out)->required();
  calib->add_option("--k", k, "reasoner count");

  auto* quant = app.add_subcommand("quantize", "Quantize a model");
  quant->add_option("--in", in)->required();
  quant->add_option("--mode", mode, "dynamic | static | qat");
  quant->add_option("--data", data, "calibration dataset (static/qat)");
  quant->add_option("--out", out)->required();
  quant->add_option("--seed", seed);
  quant->add_option("--epochs", epochs);
  quant->add_option("--direction", direction);

  auto* prune = app.add_subcommand("prune", "Global magnitude pruning");
  prune->add_option("--in", in)->required();
  prune->add_option("--sparsity", sparsity);
  prune->add_option("--out", out)->required();

  auto* distill = app.add_subcommand("distill", "One pruning-aware KD step");
  distill->add_option("--in", in, "teacher model")->required();
  distill->add_option("--data", data)->required();
  distill->add_option("--out", out)->required();
  distill->add_option("--seed", seed);
  distill->add_option("--epochs", epochs);
  distill->add_option("--kd-lambda", kd_lambda);
  distill->add_option("--direction", direction);

  auto* search = app.add_subcommand("search", "Accuracy-constrained search");
  search->add_option("--in", in)->required();
  search->add_option("--in-v", in_v, "vertical flow encoder");
  search->add_option("--data", data)->required();
  search->add_option("--mode", mode, "kd | sparsity");
  search->add_option("--constraint-auroc", constraint_auroc);
  search->add_option("--resolution", resolution);
  search->add_option("--seed", seed);
  search->add_option("--epochs", epochs);
  search->add_option("--out", out, "report path prefix")->required();

  auto* detect = app.add_subcommand("detect", "Stream detection trace");
  detect->add_option("--in", in)->required();
  detect->add_option("--detector", detector_path)->required();
  detect->add_option("--data", data)->required();
  detect->add_option("--out", out)->required();

  auto* eval = app.add_subcommand("eval", "Detection metrics");
  eval->add_option("--in", in)->required();
  eval->add_option("--in-v", in_v);
  eval->add_option("--data", data)->required();
  eval->add_option("--threshold", threshold);
  eval->add_option("--k", k);
  eval->add_option("--out", out)->required();

  auto* bench = app.add_subcommand("bench", "Forward-pass timing");
  bench->add_option("--in", in)->required();
  bench->add_option("--data", data)->required();
  bench->add_option("--n-runs", n_runs);
  bench->add_option("--out", out)->required();

  auto* run = app.add_subcommand("run", "Execute an experiment manifest");
  run->add_option("--manifest", manifest_path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const int size = make_preset(preset).input_shape[1];
      if (preset_is_flow(preset))
        save_flows(gen_flows(seed, n, size), out);
      else
        save_brightness(gen_brightness(seed, n, size), out);
      std::cout << "dataset written to " << out << "\n";
    } else if (train->parsed()) {
      Model m;
      m.spec = make_preset(preset);
      m.params = init_params(m.spec, seed);
      TrainConfig cfg;
      cfg.epochs = epochs;
      cfg.learning_rate = lr;
      cfg.batch_size = batch;
      cfg.beta = m.spec.beta;
      cfg.seed = seed;
      Array training = preset_is_flow(preset)
                           ? (direction == "v" ? load_flows(in).train_v : load_flows(in).train_h)
                           : load_brightness(in).train;
      TrainResult tr = train_vae(m.spec, m.params, training, cfg);
      if (tr.diverged) throw Error("training diverged");
      save_model(m, out);
      write_loss_csv(tr.history, out + ".loss.csv");
      std::cout << "model written to " << out << "\n";
    } else if (calib->parsed()) {
      Model m = load_model(in);
      BrightnessDataset ds = load_brightness(data);
      DetectorState st = calibrate(m, ds.calibration, k);
      tune_cusum(st, reasoner_scores(m, st, ds.test_id), reasoner_scores(m, st, ds.test_ood));
      st.save(out);
      std::cout << "detector written to " << out << "\n";
    } else if (quant->parsed()) {
      Model m = load_model(in);
      Model q;
      if (mode == "dynamic") {
        q = dynamic_quantize(m);
      } else if (mode == "static") {
        if (data.empty()) throw Error("quantize --mode static requires --data");
        std::vector<Array> batches;
        Array calib_data = is_flow_dataset(data)
                               ? (direction == "v" ? load_flows(data).train_v
                                                   : load_flows(data).train_h)
                               : load_brightness(data).calibration;
        for (int64_t b = 0; b < calib_data.dim(0); b += 16)
          batches.push_back(slice_batch(calib_data, b, std::min<int64_t>(b + 16, calib_data.dim(0))));
        q = static_quantize(m, batches);
      } else if (mode == "qat") {
        if (data.empty()) throw Error("quantize --mode qat requires --data");
        Array training = is_flow_dataset(data)
                             ? (direction == "v" ? load_flows(data).train_v
                                                 : load_flows(data).train_h)
                             : load_brightness(data).train;
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.learning_rate = 1e-4;
        cfg.beta = m.spec.beta;
        cfg.seed = seed;
        q = qat_quantize(m, training, cfg);
      } else {
        throw Error("unknown quantize mode " + mode);
      }
      save_model(q, out);
      std::cout << "quantized model written to " << out << "\n";
    } else if (prune->parsed()) {
      Model m = pruned_copy(load_model(in), sparsity);
      save_model(m, out);
      std::printf("measured sparsity %.4f%%\n", measured_sparsity(m.params));
    } else if (distill->parsed()) {
      Model teacher = load_model(in);
      ParamStore pruned = teacher.params;
      global_magnitude_prune(pruned, 50.0);
      VaeSpec student_spec;
      bool found = false;
      for (const std::string& cand : removal_candidates(teacher.spec, pruned)) {
        try {
          student_spec = build_student_spec(teacher.spec, cand);
          std::cout << "removing " << cand << "\n";
          found = true;
          break;
        } catch (const Error&) {
        }
      }
      if (!found) throw Error("no removable layer");
      student_spec.name = teacher.spec.name + "-student";
      TrainConfig cfg;
      cfg.epochs = epochs;
      cfg.beta = teacher.spec.beta;
      cfg.seed = seed;
      cfg.kd_lambda = kd_lambda;
      Array training = is_flow_dataset(data)
                           ? (direction == "v" ? load_flows(data).train_v : load_flows(data).train_h)
                           : load_brightness(data).train;
      save_model(distill_train(teacher, student_spec, training, cfg), out);
      std::cout << "student written to " << out << "\n";
    } else if (search->parsed()) {
      Model m = load_model(in);
      AccuracyConstraint constraint{"auroc", constraint_auroc};
      Evaluator e = make_evaluator(data, in_v, k);
      SearchReport report;
      if (mode == "kd") {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.beta = m.spec.beta;
        cfg.seed = seed;
        cfg.kd_lambda = kd_lambda;
        Array training = is_flow_dataset(data) ? load_flows(data).train_h
                                               : load_brightness(data).train;
        report = prune_aware_kd_search(m, constraint, cfg, training, e);
      } else if (mode == "sparsity" || mode == "dynamic") {
        report = binary_sparsity_search(m, constraint, resolution, e);
      } else {
        throw Error("unknown search mode " + mode);
      }
      report.save_csv(out + ".csv");
      report.save_json(out + ".json");
      std::printf("selected %s at sparsity %.4f%% (auroc %.4f)\n",
                  report.selected().spec_id.c_str(), report.selected().sparsity_pct,
                  report.selected().auroc);
    } else if (detect->parsed()) {
      Model m = load_model(in);
      DetectorState st = DetectorState::load(detector_path);
      BrightnessDataset ds = load_brightness(data);
      Array stream = ds.test_id;
      stream.v.insert(stream.v.end(), ds.test_ood.v.begin(), ds.test_ood.v.end());
      stream.shape[0] += ds.test_ood.dim(0);
      write_trace_csv(beta_vae_detect(m, st, stream), out);
      std::cout << "trace written to " << out << "\n";
    } else if (eval->parsed()) {
      Model m = load_model(in);
      std::vector<double> id, ood;
      if (is_flow_dataset(data)) {
        if (in_v.empty()) throw Error("eval on flow data requires --in-v");
        Model mv = load_model(in_v);
        FlowDataset ds = load_flows(data);
        std::vector<double> sh = full_kl_scores(m, ds.test_h);
        std::vector<double> sv = full_kl_scores(mv, ds.test_v);
        for (size_t i = 0; i < ds.test_labels.size(); ++i)
          (ds.test_labels[i] ? ood : id).push_back(sh[i] + sv[i]);
      } else {
        BrightnessDataset ds = load_brightness(data);
        DetectorState st = calibrate(m, ds.calibration, k);
        auto cusum_scores = [&](const Array& frames) {
          DetectorState s = st;
          std::vector<double> out_scores;
          for (const TraceRow& r : beta_vae_detect(m, s, frames)) out_scores.push_back(r.cusum);
          return out_scores;
        };
        id = cusum_scores(ds.test_id);
        ood = cusum_scores(ds.test_ood);
      }
      MetricReport r = make_metric_report(id, ood, threshold);
      r.save(out);
      std::printf("auroc %.4f tpr %.4f fpr %.4f\n", r.auroc, r.tpr, r.fpr);
    } else if (bench->parsed()) {
      Model m = load_model(in);
      Array batch = is_flow_dataset(data) ? slice_batch(load_flows(data).test_h, 0, 1)
                                          : slice_batch(load_brightness(data).test_id, 0, 1);
      BenchResult b = benchmark_forward(m, batch, n_runs);
      std::ofstream os(out);
      os << nlohmann::json{{"mean_ms", b.mean_ms}, {"std_ms", b.std_ms}, {"n_runs", b.n_runs}}
                .dump(2)
         << "\n";
      std::printf("forward %.4f ms +/- %.4f ms\n", b.mean_ms, b.std_ms);
    } else if (run->parsed()) {
      std::cout << "artifacts in " << run_manifest(ExperimentManifest::load(manifest_path))
                << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
