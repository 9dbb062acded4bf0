// Forward/backward execution of VAE layer graphs. Compute runs in double;
// the model's storage precision decides which rounding is applied to
// weights and activations along the way.
#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "vaecomp/array.hpp"
#include "vaecomp/graph.hpp"

namespace vaecomp {

enum class ExecPrecision { Fp32, Fp16, DynamicInt8, StaticInt8, FakeQuant };

struct RuntimeParams {
  std::map<std::string, Array> values;
  std::map<std::string, std::vector<std::uint8_t>> masks;

  Array& at(const std::string& name);
  const Array& at(const std::string& name) const;
  bool has(const std::string& name) const { return values.count(name) != 0; }
};

// Dequantizes / keeps the stored rounding as appropriate.
RuntimeParams materialize(const ParamStore& store);

// Writes values back into an fp32 store (used after training).
void write_back(const RuntimeParams& rp, ParamStore& store);

struct ActRange {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void observe(const Array& a);
  bool valid() const { return lo <= hi; }
};
using RangeMap = std::map<std::string, ActRange>;

struct ExecOptions {
  bool training = false;
  ExecPrecision prec = ExecPrecision::Fp32;
  const std::map<std::string, QuantParams>* act_qparams = nullptr;  // StaticInt8
  RangeMap* observe = nullptr;  // calibration / QAT range tracking
};

ExecPrecision exec_precision_for(const ParamStore& store);

struct PoolRecord {
  std::vector<int64_t> in_shape;  // batched input shape of the pool
  std::vector<int64_t> indices;   // flat input index per output element
};

struct LayerCache {
  Array input;
  // batchnorm
  std::vector<double> mean, inv_std;
  Array xhat;
  // fake-quant straight-through mask on the layer output (empty = all pass)
  std::vector<std::uint8_t> passthrough;
  int pool_index = -1;
};

struct EncoderResult {
  Array mu, logvar;
  std::vector<PoolRecord> pools;
  std::vector<LayerCache> caches;  // populated when training
};

struct DecoderResult {
  Array out;
  std::vector<LayerCache> caches;
};

EncoderResult forward_encoder(const VaeSpec& spec, RuntimeParams& params, const Array& batch,
                              const ExecOptions& opt);

DecoderResult forward_decoder(const VaeSpec& spec, RuntimeParams& params, const Array& z,
                              const std::vector<PoolRecord>& pools, const ExecOptions& opt);

struct GradStore {
  std::map<std::string, Array> g;
  Array& grad_for(const std::string& name, const std::vector<int64_t>& shape);
};

// Returns d_z. Caches must come from a training-mode forward; only the
// fp32 and QAT fake-quant paths are differentiable.
Array backward_decoder(const VaeSpec& spec, const RuntimeParams& params,
                       const std::vector<LayerCache>& caches, const std::vector<PoolRecord>& pools,
                       const Array& d_out, const ExecOptions& opt, GradStore& grads);

void backward_encoder(const VaeSpec& spec, const RuntimeParams& params,
                      const std::vector<LayerCache>& caches, const std::vector<PoolRecord>& pools,
                      const Array& d_mu, const Array& d_logvar, const ExecOptions& opt,
                      GradStore& grads);

// dequantize(quantize(x)); records which elements stayed in range.
void fake_quant_inplace(Array& a, const QuantParams& qp, std::vector<std::uint8_t>* passthrough);

}  // namespace vaecomp
