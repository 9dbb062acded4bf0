#include "vaecomp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace vaecomp {

const char* dtype_name(DType d) {
  switch (d) {
    case DType::F32: return "fp32";
    case DType::F16: return "fp16";
    case DType::QInt8: return "qint8";
  }
  return "?";
}

DType dtype_from_name(const std::string& s) {
  if (s == "fp32") return DType::F32;
  if (s == "fp16") return DType::F16;
  if (s == "qint8") return DType::QInt8;
  throw Error("unknown dtype: " + s);
}

void QuantParams::validate() const {
  if (!(scale > 0) || !std::isfinite(scale)) throw Error("QuantParams: scale must be positive and finite");
  if (zero_point < -128 || zero_point > 127) throw Error("QuantParams: zero_point out of [-128,127]");
  if (scheme == QScheme::Symmetric && zero_point != 0) throw Error("QuantParams: symmetric scheme requires zero_point 0");
}

std::uint16_t fp16_bits_from_float(float value) {
  std::uint32_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  const std::uint32_t sign = (bits >> 31) << 15;
  const int exp = static_cast<int>((bits >> 23) & 0xff);
  std::uint32_t frac = bits & 0x7fffffu;

  if (exp == 0xff) {
    if (frac != 0) return static_cast<std::uint16_t>(sign | 0x7e00u);  // NaN
    return static_cast<std::uint16_t>(sign | 0x7bffu);                 // inf saturates
  }

  int e = exp - 127 + 15;
  if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7bffu);  // overflow saturates
  if (e <= 0) {
    if (e < -10) return static_cast<std::uint16_t>(sign);  // underflow to zero
    frac |= 0x800000u;
    const int shift = 14 - e;  // yields a 10-bit subnormal mantissa
    std::uint32_t m = frac >> shift;
    const std::uint32_t rem = frac & ((1u << shift) - 1u);
    const std::uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (m & 1u))) ++m;
    return static_cast<std::uint16_t>(sign | m);  // carry into exponent is fine
  }

  std::uint32_t m = frac >> 13;
  const std::uint32_t rem = frac & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (m & 1u))) {
    ++m;
    if (m == 0x400u) {
      m = 0;
      ++e;
      if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7bffu);
    }
  }
  return static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(e) << 10) | m);
}

float float_from_fp16_bits(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h >> 15) << 31;
  const int exp = (h >> 10) & 0x1f;
  const std::uint32_t frac = h & 0x3ffu;
  std::uint32_t bits;
  if (exp == 0) {
    if (frac == 0) {
      bits = sign;
    } else {
      // subnormal: normalize
      int e = -1;
      std::uint32_t m = frac;
      while ((m & 0x400u) == 0) {
        m <<= 1;
        ++e;
      }
      m &= 0x3ffu;
      bits = sign | static_cast<std::uint32_t>(127 - 15 - e) << 23 | (m << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7f800000u | (frac << 13);
  } else {
    bits = sign | static_cast<std::uint32_t>(exp - 15 + 127) << 23 | (frac << 13);
  }
  float out;
  std::memcpy(&out, &bits, sizeof(out));
  return out;
}

float round_to_fp16(float value) { return float_from_fp16_bits(fp16_bits_from_float(value)); }

Tensor Tensor::zeros(std::vector<int64_t> shape, DType dtype) {
  Tensor t;
  t.shape = std::move(shape);
  t.dtype = dtype;
  int64_t n = 1;
  for (int64_t e : t.shape) n *= e;
  if (dtype == DType::QInt8) {
    t.q.assign(static_cast<size_t>(n), 0);
    t.qparams = QuantParams{1.0, 0, QScheme::Symmetric};
  } else {
    t.f.assign(static_cast<size_t>(n), 0.0f);
  }
  return t;
}

Tensor Tensor::from_values(std::vector<int64_t> shape, std::vector<float> values) {
  Tensor t;
  t.shape = std::move(shape);
  t.dtype = DType::F32;
  t.f = std::move(values);
  t.validate();
  return t;
}

int64_t Tensor::numel() const {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

void Tensor::validate() const {
  const int64_t n = numel();
  if (dtype == DType::QInt8) {
    if (static_cast<int64_t>(q.size()) != n) throw Error("Tensor: qint8 buffer length mismatch");
    if (!qparams) throw Error("Tensor: qint8 tensor requires qparams");
    qparams->validate();
  } else {
    if (static_cast<int64_t>(f.size()) != n) throw Error("Tensor: buffer length mismatch");
  }
}

Tensor quantize_affine(const Tensor& x, const QuantParams& qp) {
  qp.validate();
  if (x.dtype == DType::QInt8) throw Error("quantize_affine: input already quantized");
  Tensor out;
  out.shape = x.shape;
  out.dtype = DType::QInt8;
  out.qparams = qp;
  out.q.resize(x.f.size());
  for (size_t i = 0; i < x.f.size(); ++i) {
    const float v = x.f[i];
    if (!std::isfinite(v)) throw Error("quantize_affine: non-finite element at index " + std::to_string(i));
    // grid ratio in float so exact midpoints stay midpoints; nearbyint under
    // the default FE mode rounds half-to-even
    double r = std::nearbyint(v / static_cast<float>(qp.scale)) + qp.zero_point;
    r = std::clamp(r, -128.0, 127.0);
    out.q[i] = static_cast<int8_t>(r);
  }
  return out;
}

Tensor dequantize(const Tensor& q) {
  if (q.dtype != DType::QInt8) throw Error("dequantize: tensor is not qint8");
  if (!q.qparams) throw Error("dequantize: missing qparams");
  const QuantParams& qp = *q.qparams;
  Tensor out;
  out.shape = q.shape;
  out.dtype = DType::F32;
  out.f.resize(q.q.size());
  for (size_t i = 0; i < q.q.size(); ++i)
    out.f[i] = static_cast<float>(qp.scale * (q.q[i] - qp.zero_point));
  return out;
}

QuantParams compute_qparams_range(double lo, double hi, QScheme scheme) {
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi)
    throw Error("compute_qparams: invalid range");
  QuantParams qp;
  qp.scheme = scheme;
  if (scheme == QScheme::Symmetric) {
    const double amax = std::max(std::abs(lo), std::abs(hi));
    if (amax == 0.0) {
      qp.scale = 1.0;
    } else {
      qp.scale = amax / 127.0;
    }
    qp.zero_point = 0;
  } else {
    const double mn = std::min(0.0, lo);
    const double mx = std::max(0.0, hi);
    if (mx == mn) {
      qp.scale = 1.0;
      qp.zero_point = 0;
    } else {
      qp.scale = (mx - mn) / 255.0;
      double zp = std::nearbyint(-128.0 - mn / qp.scale);
      qp.zero_point = static_cast<int>(std::clamp(zp, -128.0, 127.0));
    }
  }
  return qp;
}

QuantParams compute_qparams(const Tensor& x, QScheme scheme) {
  if (x.dtype == DType::QInt8) throw Error("compute_qparams: input already quantized");
  if (x.f.empty()) throw Error("compute_qparams: empty tensor");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (float v : x.f) {
    if (!std::isfinite(v)) throw Error("compute_qparams: non-finite element");
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  return compute_qparams_range(lo, hi, scheme);
}

Tensor to_fp16(const Tensor& x) {
  if (x.dtype == DType::QInt8) throw Error("to_fp16: cannot convert qint8 tensor");
  Tensor out;
  out.shape = x.shape;
  out.dtype = DType::F16;
  out.f.resize(x.f.size());
  for (size_t i = 0; i < x.f.size(); ++i) out.f[i] = round_to_fp16(x.f[i]);
  return out;
}

}  // namespace vaecomp
