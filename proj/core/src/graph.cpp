#include "vaecomp/graph.hpp"

#include <cmath>

#include "vaecomp/array.hpp"
#include "vaecomp/rng.hpp"

namespace vaecomp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

std::string layer_type_name(const LayerSpec& l) {
  return std::visit(overloaded{[](const Conv2d&) { return "conv2d"; },
                               [](const ConvTranspose2d&) { return "conv_transpose2d"; },
                               [](const BatchNorm2d&) { return "batchnorm2d"; },
                               [](const LeakyReLU&) { return "leaky_relu"; },
                               [](const ReLU&) { return "relu"; },
                               [](const MaxPool2d&) { return "maxpool2d"; },
                               [](const MaxUnpool2d&) { return "maxunpool2d"; },
                               [](const Flatten&) { return "flatten"; },
                               [](const Unflatten&) { return "unflatten"; },
                               [](const Linear&) { return "linear"; },
                               [](const LatentHead&) { return "latent_head"; }},
                    l);
}

int conv_out_extent(int h, int k, int s, int d, int p) {
  return (h + 2 * p - d * (k - 1) - 1) / s + 1;
}

std::vector<int64_t> layer_output_shape(const LayerSpec& l, const std::vector<int64_t>& in,
                                        const std::string& where) {
  auto fail = [&](const std::string& msg) -> std::vector<int64_t> {
    throw Error("shape inference failed at " + where + " (" + layer_type_name(l) + "): " + msg +
                ", input " + shape_str(in));
  };
  auto need_chw = [&]() {
    if (in.size() != 3) fail("expected (C,H,W) input");
  };
  return std::visit(
      overloaded{
          [&](const Conv2d& c) -> std::vector<int64_t> {
            need_chw();
            if (in[0] != c.in_ch) fail("channel mismatch, expected " + std::to_string(c.in_ch));
            const int ho = conv_out_extent(static_cast<int>(in[1]), c.kernel, c.stride, c.dilation, c.padding);
            const int wo = conv_out_extent(static_cast<int>(in[2]), c.kernel, c.stride, c.dilation, c.padding);
            if (ho < 1 || wo < 1) fail("output extent < 1");
            return {c.out_ch, ho, wo};
          },
          [&](const ConvTranspose2d& c) -> std::vector<int64_t> {
            need_chw();
            if (in[0] != c.in_ch) fail("channel mismatch, expected " + std::to_string(c.in_ch));
            const int ho = static_cast<int>(in[1] - 1) * c.stride - 2 * c.padding +
                           c.dilation * (c.kernel - 1) + 1 + c.output_padding;
            const int wo = static_cast<int>(in[2] - 1) * c.stride - 2 * c.padding +
                           c.dilation * (c.kernel - 1) + 1 + c.output_padding;
            if (ho < 1 || wo < 1) fail("output extent < 1");
            return {c.out_ch, ho, wo};
          },
          [&](const BatchNorm2d& b) -> std::vector<int64_t> {
            need_chw();
            if (in[0] != b.ch) fail("channel mismatch, expected " + std::to_string(b.ch));
            return in;
          },
          [&](const LeakyReLU&) { return in; },
          [&](const ReLU&) { return in; },
          [&](const MaxPool2d& p) -> std::vector<int64_t> {
            need_chw();
            const int ho = static_cast<int>(in[1] - p.kernel) / p.stride + 1;
            const int wo = static_cast<int>(in[2] - p.kernel) / p.stride + 1;
            if (ho < 1 || wo < 1) fail("output extent < 1");
            return {in[0], ho, wo};
          },
          [&](const MaxUnpool2d& p) -> std::vector<int64_t> {
            need_chw();
            return {in[0], (in[1] - 1) * p.stride + p.kernel, (in[2] - 1) * p.stride + p.kernel};
          },
          [&](const Flatten&) -> std::vector<int64_t> {
            int64_t n = 1;
            for (int64_t e : in) n *= e;
            return {n};
          },
          [&](const Unflatten& u) -> std::vector<int64_t> {
            if (in.size() != 1 || in[0] != static_cast<int64_t>(u.ch) * u.h * u.w)
              fail("flat size mismatch, expected " + std::to_string(static_cast<int64_t>(u.ch) * u.h * u.w));
            return {u.ch, u.h, u.w};
          },
          [&](const Linear& li) -> std::vector<int64_t> {
            if (in.size() != 1 || in[0] != li.in) fail("expected flat input of " + std::to_string(li.in));
            return {li.out};
          },
          [&](const LatentHead& h) -> std::vector<int64_t> {
            if (in.size() != 1) fail("expected flat input");
            return {h.latent_dim};
          }},
      l);
}

ShapeReport infer_shapes(const VaeSpec& spec) {
  ShapeReport rep;
  if (spec.encoder.empty() || !std::holds_alternative<LatentHead>(spec.encoder.back()))
    throw Error("spec '" + spec.name + "': encoder must end in latent_head");
  std::vector<int64_t> cur = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  for (size_t i = 0; i < spec.encoder.size(); ++i) {
    cur = layer_output_shape(spec.encoder[i], cur, "enc." + std::to_string(i));
    rep.encoder.push_back(cur);
  }
  if (!spec.decoder.empty()) {
    cur = {spec.latent_dim};
    for (size_t i = 0; i < spec.decoder.size(); ++i) {
      cur = layer_output_shape(spec.decoder[i], cur, "dec." + std::to_string(i));
      rep.decoder.push_back(cur);
    }
    std::vector<int64_t> want = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    if (cur != want)
      throw Error("spec '" + spec.name + "': decoder output " + shape_str(cur) +
                  " != input shape " + shape_str(want));
  }
  return rep;
}

ParamTensor& ParamStore::at(const std::string& name) {
  for (auto& [n, t] : entries)
    if (n == name) return t;
  throw Error("ParamStore: no tensor named " + name);
}

const ParamTensor& ParamStore::at(const std::string& name) const {
  for (auto& [n, t] : entries)
    if (n == name) return t;
  throw Error("ParamStore: no tensor named " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (auto& [n, t] : entries)
    if (n == name) return true;
  return false;
}

namespace {

Tensor kaiming_uniform(std::vector<int64_t> shape, int64_t fan_in, std::uint64_t seed,
                       const std::string& name) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  const std::uint64_t h = hash_str(name, seed);
  for (size_t i = 0; i < t.f.size(); ++i)
    t.f[i] = static_cast<float>((2.0 * key_uniform({h, i}) - 1.0) * bound);
  return t;
}

struct ParamShapeVisitor {
  // Appends (name, shape, fan_in, kind) for one layer. kind: 0 weight-like,
  // 1 bias-like, 2 bn affine, 3 bn stat.
  struct Rec {
    std::string name;
    std::vector<int64_t> shape;
    int64_t fan_in;
    int kind;
  };
  std::vector<Rec> recs;

  void visit(const std::string& prefix, const LayerSpec& l, const std::vector<int64_t>& in_shape) {
    std::visit(overloaded{
                   [&](const Conv2d& c) {
                     recs.push_back({prefix + ".weight", {c.out_ch, c.in_ch, c.kernel, c.kernel},
                                     static_cast<int64_t>(c.in_ch) * c.kernel * c.kernel, 0});
                     if (c.bias) recs.push_back({prefix + ".bias", {c.out_ch}, 1, 1});
                   },
                   [&](const ConvTranspose2d& c) {
                     recs.push_back({prefix + ".weight", {c.in_ch, c.out_ch, c.kernel, c.kernel},
                                     static_cast<int64_t>(c.in_ch) * c.kernel * c.kernel, 0});
                     if (c.bias) recs.push_back({prefix + ".bias", {c.out_ch}, 1, 1});
                   },
                   [&](const BatchNorm2d& b) {
                     recs.push_back({prefix + ".gamma", {b.ch}, 1, 2});
                     recs.push_back({prefix + ".beta", {b.ch}, 1, 2});
                     recs.push_back({prefix + ".running_mean", {b.ch}, 1, 3});
                     recs.push_back({prefix + ".running_var", {b.ch}, 1, 3});
                   },
                   [&](const Linear& li) {
                     recs.push_back({prefix + ".weight", {li.out, li.in}, li.in, 0});
                     if (li.bias) recs.push_back({prefix + ".bias", {li.out}, 1, 1});
                   },
                   [&](const LatentHead& h) {
                     const int64_t f = in_shape.empty() ? 0 : in_shape[0];
                     recs.push_back({prefix + ".mu_weight", {h.latent_dim, f}, f, 0});
                     recs.push_back({prefix + ".mu_bias", {h.latent_dim}, 1, 1});
                     recs.push_back({prefix + ".logvar_weight", {h.latent_dim, f}, f, 0});
                     recs.push_back({prefix + ".logvar_bias", {h.latent_dim}, 1, 1});
                   },
                   [&](const auto&) {}},
               l);
  }
};

ParamShapeVisitor collect_param_shapes(const VaeSpec& spec) {
  ShapeReport shapes = infer_shapes(spec);
  ParamShapeVisitor v;
  std::vector<int64_t> cur = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
  for (size_t i = 0; i < spec.encoder.size(); ++i) {
    v.visit("enc." + std::to_string(i), spec.encoder[i], cur);
    cur = shapes.encoder[i];
  }
  cur = {spec.latent_dim};
  for (size_t i = 0; i < spec.decoder.size(); ++i) {
    v.visit("dec." + std::to_string(i), spec.decoder[i], cur);
    cur = shapes.decoder[i];
  }
  return v;
}

}  // namespace

ParamStore init_params(const VaeSpec& spec, std::uint64_t seed) {
  ParamStore store;
  auto v = collect_param_shapes(spec);
  for (auto& r : v.recs) {
    ParamTensor pt;
    switch (r.kind) {
      case 0:
        pt.value = kaiming_uniform(r.shape, std::max<int64_t>(1, r.fan_in), seed, r.name);
        pt.prunable = true;
        break;
      case 1:
        pt.value = Tensor::zeros(r.shape);
        pt.prunable = true;
        break;
      case 2: {
        pt.value = Tensor::zeros(r.shape);
        if (r.name.ends_with(".gamma")) std::fill(pt.value.f.begin(), pt.value.f.end(), 1.0f);
        break;
      }
      case 3: {
        pt.value = Tensor::zeros(r.shape);
        if (r.name.ends_with(".running_var")) std::fill(pt.value.f.begin(), pt.value.f.end(), 1.0f);
        pt.learnable = false;
        break;
      }
    }
    store.entries.emplace_back(r.name, std::move(pt));
  }
  return store;
}

int64_t param_count(const VaeSpec& spec) {
  auto v = collect_param_shapes(spec);
  int64_t n = 0;
  for (auto& r : v.recs) {
    if (r.kind == 3) continue;  // running stats are not learnable
    int64_t k = 1;
    for (int64_t e : r.shape) k *= e;
    n += k;
  }
  return n;
}

int64_t tensor_payload_bytes(const ParamTensor& pt) {
  const int64_t n = pt.value.numel();
  int64_t bytes = 0;
  switch (pt.value.dtype) {
    case DType::F32: bytes = 4 * n; break;
    case DType::F16: bytes = 2 * n; break;
    case DType::QInt8: bytes = n + 16; break;  // payload + scale/zero_point record
  }
  if (pt.mask) bytes += (n + 7) / 8;
  return bytes;
}

int64_t model_size_bytes(const ParamStore& params) {
  int64_t total = 0;
  for (auto& [name, pt] : params.entries) total += tensor_payload_bytes(pt);
  return total;
}

std::vector<LayerSpec> mirror_decoder(const std::vector<LayerSpec>& encoder,
                                      const std::array<int, 3>& input_shape, int latent_dim) {
  if (encoder.empty() || !std::holds_alternative<LatentHead>(encoder.back()))
    throw Error("mirror_decoder: encoder must end in latent_head");

  // Per-layer input shapes.
  std::vector<std::vector<int64_t>> ins;
  std::vector<int64_t> cur = {input_shape[0], input_shape[1], input_shape[2]};
  for (size_t i = 0; i < encoder.size(); ++i) {
    ins.push_back(cur);
    cur = layer_output_shape(encoder[i], cur, "enc." + std::to_string(i));
  }

  size_t first_param = encoder.size();
  for (size_t i = 0; i < encoder.size(); ++i) {
    if (std::holds_alternative<Conv2d>(encoder[i]) || std::holds_alternative<Linear>(encoder[i])) {
      first_param = i;
      break;
    }
  }

  std::vector<LayerSpec> dec;
  const auto& head_in = ins.back();
  if (head_in.size() != 1) throw Error("mirror_decoder: latent_head input must be flat");
  dec.push_back(Linear{latent_dim, static_cast<int>(head_in[0]), true});

  size_t start = encoder.size() - 1;  // index of head; walk backwards from start-1
  // Activation immediately before the head mirrors to just after the first linear.
  std::optional<LayerSpec> pending_act;
  bool pending_bn = false;
  if (start >= 1 && (std::holds_alternative<LeakyReLU>(encoder[start - 1]) ||
                     std::holds_alternative<ReLU>(encoder[start - 1]))) {
    dec.push_back(encoder[start - 1]);
    --start;
  }

  for (size_t ii = start; ii-- > 0;) {
    const LayerSpec& l = encoder[ii];
    const auto& in_shape = ins[ii];
    const bool is_final = (ii == first_param);
    if (std::holds_alternative<Flatten>(l)) {
      if (in_shape.size() != 3) throw Error("mirror_decoder: flatten input must be (C,H,W)");
      dec.push_back(Unflatten{static_cast<int>(in_shape[0]), static_cast<int>(in_shape[1]),
                              static_cast<int>(in_shape[2])});
    } else if (auto* p = std::get_if<MaxPool2d>(&l)) {
      dec.push_back(MaxUnpool2d{p->kernel, p->stride});
    } else if (std::holds_alternative<LeakyReLU>(l) || std::holds_alternative<ReLU>(l)) {
      pending_act = l;
    } else if (std::holds_alternative<BatchNorm2d>(l)) {
      pending_bn = true;
    } else if (auto* c = std::get_if<Conv2d>(&l)) {
      const int in_extent = static_cast<int>(in_shape[1]);
      const int out_extent = conv_out_extent(in_extent, c->kernel, c->stride, c->dilation, c->padding);
      const int base = (out_extent - 1) * c->stride - 2 * c->padding + c->dilation * (c->kernel - 1) + 1;
      const int op = in_extent - base;
      if (op < 0) throw Error("mirror_decoder: negative output padding");
      dec.push_back(ConvTranspose2d{c->out_ch, c->in_ch, c->kernel, c->stride, c->dilation,
                                    c->padding, op, is_final ? true : c->bias});
      if (!is_final) {
        if (pending_bn) dec.push_back(BatchNorm2d{c->in_ch});
        if (pending_act) dec.push_back(*pending_act);
      }
      pending_bn = false;
      pending_act.reset();
    } else if (auto* li = std::get_if<Linear>(&l)) {
      dec.push_back(Linear{li->out, li->in, true});
      if (!is_final && pending_act) dec.push_back(*pending_act);
      pending_act.reset();
    } else {
      throw Error("mirror_decoder: cannot mirror layer " + layer_type_name(l));
    }
  }
  return dec;
}

namespace {

VaeSpec make_conv_pool_vae(const std::string& name, int size, int in_ch, std::vector<int> widths,
                           std::vector<int> fc, int latent, double beta) {
  VaeSpec s;
  s.name = name;
  s.input_shape = {in_ch, size, size};
  s.latent_dim = latent;
  s.beta = beta;
  int ch = in_ch;
  for (int w : widths) {
    s.encoder.push_back(Conv2d{ch, w, 3, 1, 1, 1, false});
    s.encoder.push_back(BatchNorm2d{w});
    s.encoder.push_back(LeakyReLU{0.01});
    s.encoder.push_back(MaxPool2d{2, 2});
    ch = w;
  }
  s.encoder.push_back(Flatten{});
  int spatial = size;
  for (size_t i = 0; i < widths.size(); ++i) spatial /= 2;
  int feat = ch * spatial * spatial;
  for (int o : fc) {
    s.encoder.push_back(Linear{feat, o, true});
    s.encoder.push_back(LeakyReLU{0.01});
    feat = o;
  }
  s.encoder.push_back(LatentHead{latent});
  s.decoder = mirror_decoder(s.encoder, s.input_shape, latent);
  return s;
}

VaeSpec make_of_vae(const std::string& name, int size, std::vector<int> widths, int kernel,
                    int stride, int padding, int latent) {
  VaeSpec s;
  s.name = name;
  s.input_shape = {6, size, size};
  s.latent_dim = latent;
  s.beta = 1.0;
  int ch = 6;
  for (int w : widths) {
    s.encoder.push_back(Conv2d{ch, w, kernel, stride, 1, padding, false});
    s.encoder.push_back(BatchNorm2d{w});
    s.encoder.push_back(ReLU{});
    ch = w;
  }
  s.encoder.push_back(Flatten{});
  s.encoder.push_back(LatentHead{latent});
  s.decoder = mirror_decoder(s.encoder, s.input_shape, latent);
  return s;
}

}  // namespace

VaeSpec make_preset(const std::string& name) {
  if (name == "paper-beta-vae")
    return make_conv_pool_vae(name, 224, 3, {32, 64, 128, 256}, {256, 128, 64, 64}, 30, 1.4);
  if (name == "desk-beta-vae")
    return make_conv_pool_vae(name, 32, 3, {8, 16, 32, 64}, {128, 64, 32, 16}, 8, 1.4);
  if (name == "paper-of") return make_of_vae(name, 224, {32, 64, 128, 256}, 5, 3, 0, 12);
  if (name == "desk-of") return make_of_vae(name, 32, {8, 16, 32, 64}, 3, 2, 1, 12);
  throw Error("unknown preset: " + name);
}

bool preset_is_flow(const std::string& name) { return name.find("-of") != std::string::npos; }

nlohmann::json spec_to_json(const VaeSpec& spec) {
  using nlohmann::json;
  auto layer_json = [](const LayerSpec& l) {
    json j;
    j["type"] = layer_type_name(l);
    std::visit(overloaded{[&](const Conv2d& c) {
                            j["in_ch"] = c.in_ch;
                            j["out_ch"] = c.out_ch;
                            j["kernel"] = c.kernel;
                            j["stride"] = c.stride;
                            j["dilation"] = c.dilation;
                            j["padding"] = c.padding;
                            j["bias"] = c.bias;
                          },
                          [&](const ConvTranspose2d& c) {
                            j["in_ch"] = c.in_ch;
                            j["out_ch"] = c.out_ch;
                            j["kernel"] = c.kernel;
                            j["stride"] = c.stride;
                            j["dilation"] = c.dilation;
                            j["padding"] = c.padding;
                            j["output_padding"] = c.output_padding;
                            j["bias"] = c.bias;
                          },
                          [&](const BatchNorm2d& b) { j["ch"] = b.ch; },
                          [&](const LeakyReLU& r) { j["slope"] = r.slope; },
                          [&](const ReLU&) {},
                          [&](const MaxPool2d& p) {
                            j["kernel"] = p.kernel;
                            j["stride"] = p.stride;
                          },
                          [&](const MaxUnpool2d& p) {
                            j["kernel"] = p.kernel;
                            j["stride"] = p.stride;
                          },
                          [&](const Flatten&) {},
                          [&](const Unflatten& u) {
                            j["ch"] = u.ch;
                            j["h"] = u.h;
                            j["w"] = u.w;
                          },
                          [&](const Linear& li) {
                            j["in"] = li.in;
                            j["out"] = li.out;
                            j["bias"] = li.bias;
                          },
                          [&](const LatentHead& h) { j["latent_dim"] = h.latent_dim; }},
               l);
    return j;
  };
  json j;
  j["name"] = spec.name;
  j["latent_dim"] = spec.latent_dim;
  j["beta"] = spec.beta;
  j["input_shape"] = spec.input_shape;
  j["encoder"] = json::array();
  for (auto& l : spec.encoder) j["encoder"].push_back(layer_json(l));
  j["decoder"] = json::array();
  for (auto& l : spec.decoder) j["decoder"].push_back(layer_json(l));
  return j;
}

VaeSpec spec_from_json(const nlohmann::json& j) {
  auto layer_from = [](const nlohmann::json& lj) -> LayerSpec {
    const std::string t = lj.at("type");
    if (t == "conv2d")
      return Conv2d{lj.at("in_ch"), lj.at("out_ch"), lj.at("kernel"), lj.at("stride"),
                    lj.at("dilation"), lj.at("padding"), lj.at("bias")};
    if (t == "conv_transpose2d")
      return ConvTranspose2d{lj.at("in_ch"),   lj.at("out_ch"),         lj.at("kernel"),
                             lj.at("stride"),  lj.at("dilation"),       lj.at("padding"),
                             lj.at("output_padding"), lj.at("bias")};
    if (t == "batchnorm2d") return BatchNorm2d{lj.at("ch")};
    if (t == "leaky_relu") return LeakyReLU{lj.at("slope")};
    if (t == "relu") return ReLU{};
    if (t == "maxpool2d") return MaxPool2d{lj.at("kernel"), lj.at("stride")};
    if (t == "maxunpool2d") return MaxUnpool2d{lj.at("kernel"), lj.at("stride")};
    if (t == "flatten") return Flatten{};
    if (t == "unflatten") return Unflatten{lj.at("ch"), lj.at("h"), lj.at("w")};
    if (t == "linear") return Linear{lj.at("in"), lj.at("out"), lj.at("bias")};
    if (t == "latent_head") return LatentHead{lj.at("latent_dim")};
    throw Error("spec_from_json: unknown layer type " + t);
  };
  VaeSpec s;
  s.name = j.at("name");
  s.latent_dim = j.at("latent_dim");
  s.beta = j.at("beta");
  auto is = j.at("input_shape");
  s.input_shape = {is.at(0), is.at(1), is.at(2)};
  for (auto& lj : j.at("encoder")) s.encoder.push_back(layer_from(lj));
  for (auto& lj : j.at("decoder")) s.decoder.push_back(layer_from(lj));
  return s;
}

}  // namespace vaecomp
