#include "flashd/precision.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace flashd {

std::string_view to_string(Precision p) {
  switch (p) {
    case Precision::fp64: return "fp64";
    case Precision::bf16: return "bf16";
    case Precision::fp8e4m3: return "fp8e4m3";
  }
  return "unknown";
}

std::optional<Precision> parse_precision(std::string_view s) {
  if (s == "fp64") return Precision::fp64;
  if (s == "bf16") return Precision::bf16;
  if (s == "fp8e4m3") return Precision::fp8e4m3;
  return std::nullopt;
}

double max_finite(const FloatFormat& fmt) {
  switch (fmt.name) {
    case Precision::fp64: return std::numeric_limits<double>::max();
    case Precision::bf16: return std::ldexp(2.0 - std::ldexp(1.0, -7), 127);
    case Precision::fp8e4m3: return 448.0;
  }
  return 0.0;
}

double min_subnormal(const FloatFormat& fmt) {
  return std::ldexp(1.0, fmt.min_exponent() - fmt.mantissa_bits);
}

double round_to_format(double x, const FloatFormat& fmt) {
  if (fmt.name == Precision::fp64 || std::isnan(x) || x == 0.0) return x;
  const bool saturating = fmt.name == Precision::fp8e4m3;
  if (std::isinf(x)) {
    return saturating ? std::numeric_limits<double>::quiet_NaN() : x;
  }

  int e = 0;
  std::frexp(x, &e);
  int exponent = e - 1;  // |x| in [2^exponent, 2^(exponent+1))
  if (exponent < fmt.min_exponent()) exponent = fmt.min_exponent();
  const int quantum_exp = exponent - fmt.mantissa_bits;

  // Scaling by a power of two is exact here; nearbyint uses the default
  // round-to-nearest-even mode.
  const double steps = std::nearbyint(std::ldexp(x, -quantum_exp));
  const double rounded = std::ldexp(steps, quantum_exp);

  const double limit = max_finite(fmt);
  if (std::fabs(rounded) > limit) {
    if (saturating) return std::copysign(limit, x);
    return std::copysign(std::numeric_limits<double>::infinity(), x);
  }
  return rounded;
}

namespace {

// Generic encoder for a representable finite value.
std::uint32_t encode_bits(double v, const FloatFormat& fmt) {
  const std::uint32_t sign = std::signbit(v) ? 1u : 0u;
  const int mbits = fmt.mantissa_bits;
  const std::uint32_t sign_bit = sign << (fmt.exponent_bits + mbits);
  const double a = std::fabs(v);
  if (a == 0.0) return sign_bit;

  int e = 0;
  std::frexp(a, &e);
  const int exponent = e - 1;
  if (exponent < fmt.min_exponent()) {
    const auto mant = static_cast<std::uint32_t>(std::ldexp(a, -(fmt.min_exponent() - mbits)));
    return sign_bit | mant;
  }
  const auto biased = static_cast<std::uint32_t>(exponent + fmt.bias);
  const auto mant =
      static_cast<std::uint32_t>(std::ldexp(a, mbits - exponent)) - (1u << mbits);
  return sign_bit | (biased << mbits) | mant;
}

double decode_bits(std::uint32_t bits, const FloatFormat& fmt) {
  const int mbits = fmt.mantissa_bits;
  const std::uint32_t mant = bits & ((1u << mbits) - 1u);
  const std::uint32_t biased = (bits >> mbits) & ((1u << fmt.exponent_bits) - 1u);
  const bool negative = ((bits >> (mbits + fmt.exponent_bits)) & 1u) != 0;
  double mag = 0.0;
  if (biased == 0) {
    mag = std::ldexp(static_cast<double>(mant), fmt.min_exponent() - mbits);
  } else {
    mag = std::ldexp(static_cast<double>(mant + (1u << mbits)),
                     static_cast<int>(biased) - fmt.bias - mbits);
  }
  return negative ? -mag : mag;
}

}  // namespace

std::uint16_t encode_bf16(double v) {
  if (std::isnan(v)) return 0x7FC0;
  if (std::isinf(v)) return v > 0 ? 0x7F80 : 0xFF80;
  return static_cast<std::uint16_t>(encode_bits(v, kBf16));
}

double decode_bf16(std::uint16_t bits) {
  if ((bits & 0x7F80) == 0x7F80) {
    if ((bits & 0x007F) != 0) return std::numeric_limits<double>::quiet_NaN();
    return (bits & 0x8000) ? -std::numeric_limits<double>::infinity()
                           : std::numeric_limits<double>::infinity();
  }
  return decode_bits(bits, kBf16);
}

std::uint8_t encode_fp8e4m3(double v) {
  if (std::isnan(v) || std::isinf(v)) return 0x7F;
  return static_cast<std::uint8_t>(encode_bits(v, kFp8E4M3));
}

double decode_fp8e4m3(std::uint8_t bits) {
  if ((bits & 0x7F) == 0x7F) return std::numeric_limits<double>::quiet_NaN();
  return decode_bits(bits, kFp8E4M3);
}

namespace {

Precision common_format(EmulatedScalar a, EmulatedScalar b) {
  if (a.format() != b.format()) {
    throw std::invalid_argument("emulated operands must share a format");
  }
  return a.format();
}

}  // namespace

EmulatedScalar emulated_add(EmulatedScalar a, EmulatedScalar b) {
  return {a.value() + b.value(), common_format(a, b)};
}

EmulatedScalar emulated_sub(EmulatedScalar a, EmulatedScalar b) {
  return {a.value() - b.value(), common_format(a, b)};
}

EmulatedScalar emulated_mul(EmulatedScalar a, EmulatedScalar b) {
  return {a.value() * b.value(), common_format(a, b)};
}

EmulatedScalar emulated_div(EmulatedScalar a, EmulatedScalar b) {
  // x/0 is +-inf (or NaN for 0/0) in FP64; rounding then maps it to the
  // format's convention: infinity for BF16, NaN for E4M3.
  return {a.value() / b.value(), common_format(a, b)};
}

}  // namespace flashd
