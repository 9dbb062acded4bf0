// Double-precision compute buffers used by the execution engine. Storage
// precision (fp32/fp16/qint8) is applied at tensor boundaries; arithmetic
// runs in double so finite-difference checks stay clean.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaecomp/tensor.hpp"

namespace vaecomp {

struct Array {
  std::vector<int64_t> shape;
  std::vector<double> v;

  Array() = default;
  Array(std::vector<int64_t> s, double fill = 0.0) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(numel()), fill);
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
  }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t ndim() const { return shape.size(); }

  static Array from_tensor(const Tensor& t) {
    Array a;
    a.shape = t.shape;
    if (t.dtype == DType::QInt8) {
      Tensor d = dequantize(t);
      a.v.assign(d.f.begin(), d.f.end());
    } else {
      a.v.assign(t.f.begin(), t.f.end());
    }
    return a;
  }

  Tensor to_tensor(DType dtype = DType::F32) const {
    Tensor t;
    t.shape = shape;
    t.dtype = DType::F32;
    t.f.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) t.f[i] = static_cast<float>(v[i]);
    if (dtype == DType::F16) return to_fp16(t);
    if (dtype == DType::QInt8) throw Error("Array::to_tensor: quantize explicitly");
    return t;
  }
};

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

inline bool same_shape(const std::vector<int64_t>& a, const std::vector<int64_t>& b) { return a == b; }

}  // namespace vaecomp
