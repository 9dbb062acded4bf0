// Dense tensor storage with three precisions (fp32, emulated fp16, qint8)
// and uniform quantization primitives.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vaecomp {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

enum class DType { F32, F16, QInt8 };

enum class QScheme { Affine, Symmetric };

const char* dtype_name(DType d);
DType dtype_from_name(const std::string& s);

struct QuantParams {
  double scale = 1.0;
  int zero_point = 0;  // in [-128, 127]; 0 for symmetric
  QScheme scheme = QScheme::Affine;

  void validate() const;
};

// Binary16 emulation: round-to-nearest-even, overflow saturates to +/-65504.
std::uint16_t fp16_bits_from_float(float value);
float float_from_fp16_bits(std::uint16_t bits);
float round_to_fp16(float value);

// Row-major dense tensor. fp32/fp16 payloads live in `f` (fp16 values are
// floats already rounded to binary16); qint8 payloads live in `q`.
struct Tensor {
  std::vector<int64_t> shape;
  DType dtype = DType::F32;
  std::vector<float> f;
  std::vector<int8_t> q;
  std::optional<QuantParams> qparams;

  Tensor() = default;
  static Tensor zeros(std::vector<int64_t> shape, DType dtype = DType::F32);
  static Tensor from_values(std::vector<int64_t> shape, std::vector<float> values);

  int64_t numel() const;
  void validate() const;
};

// q = clamp(round_half_even(x / scale) + zero_point, -128, 127)
Tensor quantize_affine(const Tensor& x, const QuantParams& qp);

// x = scale * (q - zero_point)
Tensor dequantize(const Tensor& q);

// Affine: scale = (max-min)/255 over the zero-extended range, zero_point
// covering min; symmetric: scale = max|x|/127, zero_point 0. All-zero input
// falls back to scale 1, zero_point 0.
QuantParams compute_qparams(const Tensor& x, QScheme scheme);
QuantParams compute_qparams_range(double lo, double hi, QScheme scheme);

Tensor to_fp16(const Tensor& x);

}  // namespace vaecomp
