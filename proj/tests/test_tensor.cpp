#include <cmath>
#include <cstring>
#include <random>

#include "vaecomp/tensor.hpp"

#include "doctest.h"

using namespace vaecomp;

namespace {

// Independent binary16 reference: scale into the target exponent, round
// half-to-even in integer space, reassemble. Used to cross-check the
// production encoder bit-for-bit.
std::uint16_t ref_fp16_bits(float value) {
  if (std::isnan(value)) return 0x7e00;
  const std::uint32_t sign = std::signbit(value) ? 0x8000u : 0u;
  double a = std::abs(static_cast<double>(value));
  if (a == 0.0) return static_cast<std::uint16_t>(sign);
  if (a > 65504.0) {
    // Everything above the overflow midpoint saturates; below rounds down.
    if (a >= 65520.0) return static_cast<std::uint16_t>(sign | 0x7bff);
    return static_cast<std::uint16_t>(sign | 0x7bff);
  }
  int e = 0;
  std::frexp(a, &e);  // a = m * 2^e, m in [0.5, 1)
  e -= 1;             // a = m' * 2^e, m' in [1, 2)
  if (e < -14) {
    // subnormal: units of 2^-24
    const double scaled = std::ldexp(a, 24);
    auto q = static_cast<std::uint64_t>(std::nearbyint(scaled));
    if (q >= 1024) return static_cast<std::uint16_t>(sign | (1u << 10));  // rounded up to normal
    return static_cast<std::uint16_t>(sign | q);
  }
  const double scaled = std::ldexp(a, 10 - e);  // in [1024, 2048)
  auto q = static_cast<std::uint64_t>(std::nearbyint(scaled));
  if (q == 2048) {
    q = 1024;
    ++e;
    if (e > 15) return static_cast<std::uint16_t>(sign | 0x7bff);
  }
  return static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(e + 15) << 10) |
                                    (q & 0x3ff));
}

Tensor scalar(float v) { return Tensor::from_values({1}, {v}); }

}  // namespace

TEST_CASE("quantize_affine matches the closed form") {
  QuantParams qp{0.1, 0, QScheme::Symmetric};
  CHECK(quantize_affine(scalar(1.0f), qp).q[0] == 10);
  CHECK(quantize_affine(scalar(100.0f), qp).q[0] == 127);   // clamped
  CHECK(quantize_affine(scalar(-100.0f), qp).q[0] == -128);
  CHECK(quantize_affine(scalar(-0.05f), qp).q[0] == 0);     // half-to-even
  CHECK(quantize_affine(scalar(0.05f), qp).q[0] == 0);
  CHECK(quantize_affine(scalar(0.15f), qp).q[0] == 2);

  QuantParams affine{0.01, -128, QScheme::Affine};
  CHECK(quantize_affine(scalar(0.0f), affine).q[0] == -128);
  CHECK(quantize_affine(scalar(2.55f), affine).q[0] == 127);
}

TEST_CASE("quantize_affine reports the index of a non-finite element") {
  Tensor t = Tensor::from_values({3}, {1.0f, std::numeric_limits<float>::infinity(), 2.0f});
  QuantParams qp{0.1, 0, QScheme::Symmetric};
  CHECK_THROWS_WITH_AS(quantize_affine(t, qp), doctest::Contains("index 1"), Error);
}

TEST_CASE("dequantize inverts quantization within half a scale step") {
  QuantParams qp{0.1, 0, QScheme::Symmetric};
  Tensor q = quantize_affine(scalar(1.0f), qp);
  CHECK(dequantize(q).f[0] == doctest::Approx(1.0).epsilon(1e-12));

  QuantParams fine{0.01, 0, QScheme::Symmetric};
  Tensor rt = dequantize(quantize_affine(scalar(0.234f), fine));
  CHECK(rt.f[0] == doctest::Approx(0.23).epsilon(1e-6));
  CHECK(std::abs(rt.f[0] - 0.234f) <= 0.005f);

  Tensor no_qp;
  no_qp.shape = {1};
  no_qp.dtype = DType::QInt8;
  no_qp.q = {0};
  CHECK_THROWS_AS(dequantize(no_qp), Error);
}

TEST_CASE("round-trip error is bounded by scale/2 for in-range values") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const double scale = std::uniform_real_distribution<>(1e-3, 1.0)(rng);
    QuantParams qp{scale, 0, QScheme::Symmetric};
    const float x = static_cast<float>(std::uniform_real_distribution<>(-scale * 127, scale * 127)(rng));
    const float back = dequantize(quantize_affine(scalar(x), qp)).f[0];
    CHECK(std::abs(back - x) <= scale / 2 + 1e-12);
  }
}

TEST_CASE("compute_qparams covers the observed range") {
  Tensor a = Tensor::from_values({2}, {0.0f, 2.55f});
  QuantParams qa = compute_qparams(a, QScheme::Affine);
  CHECK(qa.scale == doctest::Approx(0.01).epsilon(1e-9));
  CHECK(qa.zero_point == -128);

  Tensor s = Tensor::from_values({2}, {-2.0f, 2.0f});
  QuantParams qs = compute_qparams(s, QScheme::Symmetric);
  CHECK(qs.scale == doctest::Approx(2.0 / 127).epsilon(1e-12));
  CHECK(qs.zero_point == 0);

  Tensor z = Tensor::zeros({4});
  QuantParams qz = compute_qparams(z, QScheme::Affine);
  CHECK(qz.scale == 1.0);
  CHECK(qz.zero_point == 0);

  // min and max always representable
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const float lo = static_cast<float>(std::uniform_real_distribution<>(-10, 10)(rng));
    const float hi = lo + static_cast<float>(std::uniform_real_distribution<>(0.01, 10)(rng));
    Tensor t = Tensor::from_values({2}, {lo, hi});
    QuantParams qp = compute_qparams(t, QScheme::Affine);
    Tensor q = quantize_affine(t, qp);
    Tensor back = dequantize(q);
    CHECK(std::abs(back.f[0] - lo) <= qp.scale / 2 + 1e-6);
    CHECK(std::abs(back.f[1] - hi) <= qp.scale / 2 + 1e-6);
  }
}

TEST_CASE("fp16 conversion matches a reference binary16 encoder") {
  CHECK(round_to_fp16(1.0f) == 1.0f);
  CHECK(round_to_fp16(1.0002f) == 1.0f);  // below the ulp at 1.0
  CHECK(round_to_fp16(70000.0f) == 65504.0f);
  CHECK(round_to_fp16(-70000.0f) == -65504.0f);

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<float> wide(-70000.0f, 70000.0f);
  std::uniform_real_distribution<float> narrow(-2.0f, 2.0f);
  std::uniform_real_distribution<float> tiny(-1e-4f, 1e-4f);
  for (int trial = 0; trial < 3000; ++trial) {
    float x = trial % 3 == 0 ? wide(rng) : trial % 3 == 1 ? narrow(rng) : tiny(rng);
    CAPTURE(x);
    CHECK(fp16_bits_from_float(x) == ref_fp16_bits(x));
  }
  for (float edge : {0.0f, -0.0f, 65504.0f, 65519.0f, 65520.0f, 6.1035156e-5f, 5.96e-8f,
                     2.98e-8f, 1e-10f}) {
    CAPTURE(edge);
    CHECK(fp16_bits_from_float(edge) == ref_fp16_bits(edge));
  }
}

TEST_CASE("to_fp16 is idempotent") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<float> dist(-1000.0f, 1000.0f);
  std::vector<float> vals(256);
  for (auto& v : vals) v = dist(rng);
  Tensor t = Tensor::from_values({256}, vals);
  Tensor once = to_fp16(t);
  Tensor twice = to_fp16(once);
  CHECK(once.dtype == DType::F16);
  for (size_t i = 0; i < vals.size(); ++i) CHECK(once.f[i] == twice.f[i]);
}

TEST_CASE("tensor validation enforces the shape/buffer contract") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  t.f.pop_back();
  CHECK_THROWS_AS(t.validate(), Error);

  QuantParams bad{0.0, 0, QScheme::Affine};
  CHECK_THROWS_AS(bad.validate(), Error);
  QuantParams bad_sym{1.0, 3, QScheme::Symmetric};
  CHECK_THROWS_AS(bad_sym.validate(), Error);
}
