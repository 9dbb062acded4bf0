#include "vaecomp/model_io.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace vaecomp {

namespace {

constexpr char kMagic[4] = {'V', 'A', 'E', 'C'};
constexpr std::uint8_t kVersion = 1;

const char* scheme_name(QScheme s) { return s == QScheme::Affine ? "affine" : "symmetric"; }
QScheme scheme_from_name(const std::string& s) {
  if (s == "affine") return QScheme::Affine;
  if (s == "symmetric") return QScheme::Symmetric;
  throw Error("unknown quantization scheme: " + s);
}

nlohmann::json qparams_json(const QuantParams& qp) {
  return {{"scale", qp.scale}, {"zero_point", qp.zero_point}, {"scheme", scheme_name(qp.scheme)}};
}

QuantParams qparams_from_json(const nlohmann::json& j) {
  QuantParams qp;
  qp.scale = j.at("scale");
  qp.zero_point = j.at("zero_point");
  qp.scheme = scheme_from_name(j.at("scheme"));
  return qp;
}

template <typename T>
void write_raw(std::ostream& os, const T* data, size_t count) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
void read_raw(std::istream& is, T* data, size_t count) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (!is) throw Error("load_model: truncated payload");
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
  using nlohmann::json;
  json header;
  header["spec"] = spec_to_json(model.spec);
  header["dtype"] = dtype_name(model.params.dtype);
  json tensors = json::array();
  for (auto& [name, pt] : model.params.entries) {
    json tj;
    tj["name"] = name;
    tj["shape"] = pt.value.shape;
    tj["dtype"] = dtype_name(pt.value.dtype);
    tj["learnable"] = pt.learnable;
    tj["prunable"] = pt.prunable;
    tj["mask"] = pt.mask.has_value();
    if (pt.value.qparams) tj["qparams"] = qparams_json(*pt.value.qparams);
    tensors.push_back(std::move(tj));
  }
  header["tensors"] = std::move(tensors);
  json aq = json::object();
  for (auto& [k, qp] : model.params.act_qparams) aq[k] = qparams_json(qp);
  header["act_qparams"] = std::move(aq);

  const std::string hs = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("save_model: cannot open " + path);
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  write_raw(os, &hlen, 1);
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  for (auto& [name, pt] : model.params.entries) {
    const size_t n = static_cast<size_t>(pt.value.numel());
    switch (pt.value.dtype) {
      case DType::F32:
        write_raw(os, pt.value.f.data(), n);
        break;
      case DType::F16: {
        std::vector<std::uint16_t> bits(n);
        for (size_t i = 0; i < n; ++i) bits[i] = fp16_bits_from_float(pt.value.f[i]);
        write_raw(os, bits.data(), n);
        break;
      }
      case DType::QInt8:
        write_raw(os, pt.value.q.data(), n);
        break;
    }
    if (pt.mask) {
      std::vector<std::uint8_t> packed((n + 7) / 8, 0);
      for (size_t i = 0; i < n; ++i)
        if ((*pt.mask)[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
      write_raw(os, packed.data(), packed.size());
    }
  }
  if (!os) throw Error("save_model: write failed for " + path);
}

Model load_model(const std::string& path) {
  using nlohmann::json;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("load_model: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw Error("load_model: magic-byte mismatch");
  const int version = is.get();
  if (version != kVersion) throw Error("load_model: unsupported version " + std::to_string(version));
  std::uint32_t hlen = 0;
  read_raw(is, &hlen, 1);
  std::string hs(hlen, '\0');
  is.read(hs.data(), hlen);
  if (!is) throw Error("load_model: truncated header");
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw Error(std::string("load_model: corrupt header: ") + e.what());
  }

  Model model;
  model.spec = spec_from_json(header.at("spec"));
  model.params.dtype = dtype_from_name(header.at("dtype"));
  for (auto& [k, v] : header.at("act_qparams").items())
    model.params.act_qparams[k] = qparams_from_json(v);

  for (auto& tj : header.at("tensors")) {
    ParamTensor pt;
    pt.learnable = tj.at("learnable");
    pt.prunable = tj.at("prunable");
    Tensor& t = pt.value;
    t.shape = tj.at("shape").get<std::vector<int64_t>>();
    t.dtype = dtype_from_name(tj.at("dtype"));
    if (tj.contains("qparams")) t.qparams = qparams_from_json(tj.at("qparams"));
    const size_t n = static_cast<size_t>(t.numel());
    switch (t.dtype) {
      case DType::F32:
        t.f.resize(n);
        read_raw(is, t.f.data(), n);
        break;
      case DType::F16: {
        std::vector<std::uint16_t> bits(n);
        read_raw(is, bits.data(), n);
        t.f.resize(n);
        for (size_t i = 0; i < n; ++i) t.f[i] = float_from_fp16_bits(bits[i]);
        break;
      }
      case DType::QInt8:
        t.q.resize(n);
        read_raw(is, t.q.data(), n);
        break;
    }
    if (tj.at("mask").get<bool>()) {
      std::vector<std::uint8_t> packed((n + 7) / 8);
      read_raw(is, packed.data(), packed.size());
      std::vector<std::uint8_t> mask(n);
      for (size_t i = 0; i < n; ++i) mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
      pt.mask = std::move(mask);
    }
    t.validate();
    model.params.entries.emplace_back(tj.at("name").get<std::string>(), std::move(pt));
  }
  return model;
}

}  // namespace vaecomp
