// Declarative VAE layer graph: layer specs, shape inference, parameter
// store with optional pruning masks, presets, and accounting.
#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vaecomp/tensor.hpp"

#include "json.hpp"

namespace vaecomp {

struct Conv2d {
  int in_ch = 0, out_ch = 0, kernel = 0;
  int stride = 1, dilation = 1, padding = 0;
  bool bias = true;
};
struct ConvTranspose2d {
  int in_ch = 0, out_ch = 0, kernel = 0;
  int stride = 1, dilation = 1, padding = 0, output_padding = 0;
  bool bias = true;
};
struct BatchNorm2d {
  int ch = 0;
};
struct LeakyReLU {
  double slope = 0.01;
};
struct ReLU {};
struct MaxPool2d {
  int kernel = 0, stride = 0;
};
struct MaxUnpool2d {
  int kernel = 0, stride = 0;
};
struct Flatten {};
struct Unflatten {
  int ch = 0, h = 0, w = 0;
};
struct Linear {
  int in = 0, out = 0;
  bool bias = true;
};
// Emits (mean, log-variance): two parallel linear maps from the flattened input.
struct LatentHead {
  int latent_dim = 0;
};

using LayerSpec = std::variant<Conv2d, ConvTranspose2d, BatchNorm2d, LeakyReLU, ReLU, MaxPool2d,
                               MaxUnpool2d, Flatten, Unflatten, Linear, LatentHead>;

std::string layer_type_name(const LayerSpec& l);

struct VaeSpec {
  std::string name;
  std::vector<LayerSpec> encoder;  // must end in LatentHead
  std::vector<LayerSpec> decoder;
  int latent_dim = 0;
  double beta = 1.0;
  std::array<int, 3> input_shape{};  // (channels, H, W)
};

// Output shape of a single layer given its input shape (without batch dim).
std::vector<int64_t> layer_output_shape(const LayerSpec& l, const std::vector<int64_t>& in, const std::string& where);

struct ShapeReport {
  std::vector<std::vector<int64_t>> encoder;  // output shape per encoder layer
  std::vector<std::vector<int64_t>> decoder;
};

// Runs end-to-end shape inference; throws Error naming the offending layer.
ShapeReport infer_shapes(const VaeSpec& spec);

int conv_out_extent(int h, int k, int s, int d, int p);

struct ParamTensor {
  Tensor value;
  std::optional<std::vector<std::uint8_t>> mask;  // 1 = kept, 0 = pruned
  bool learnable = true;
  bool prunable = false;  // conv/linear/head weights and biases
};

struct ParamStore {
  DType dtype = DType::F32;
  std::vector<std::pair<std::string, ParamTensor>> entries;  // deterministic order
  std::map<std::string, QuantParams> act_qparams;            // per-layer, static/QAT models

  ParamTensor& at(const std::string& name);
  const ParamTensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
};

// Kaiming-uniform conv/linear weights, zero biases, unit/zero batchnorm.
ParamStore init_params(const VaeSpec& spec, std::uint64_t seed);

int64_t param_count(const VaeSpec& spec);
int64_t tensor_payload_bytes(const ParamTensor& pt);
int64_t model_size_bytes(const ParamStore& params);

struct Model {
  VaeSpec spec;
  ParamStore params;
};

// Builds a decoder mirroring the encoder (unpool/deconv blocks in reverse).
std::vector<LayerSpec> mirror_decoder(const std::vector<LayerSpec>& encoder,
                                      const std::array<int, 3>& input_shape, int latent_dim);

// Presets: paper-beta-vae, paper-of, desk-beta-vae, desk-of.
VaeSpec make_preset(const std::string& name);
bool preset_is_flow(const std::string& name);

nlohmann::json spec_to_json(const VaeSpec& spec);
VaeSpec spec_from_json(const nlohmann::json& j);

}  // namespace vaecomp
