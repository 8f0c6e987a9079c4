#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace flashd {

enum class Precision : std::uint8_t { fp64, bf16, fp8e4m3 };

/// Bit layout of a binary floating-point format. FP64 is the carrier for
/// every emulated value; the reduced formats are rounded into it.
struct FloatFormat {
  Precision name;
  int exponent_bits;
  int mantissa_bits;
  int bias;

  constexpr int min_exponent() const { return 1 - bias; }
  constexpr int storage_bits() const { return 1 + exponent_bits + mantissa_bits; }
};

inline constexpr FloatFormat kFp64{Precision::fp64, 11, 52, 1023};
inline constexpr FloatFormat kBf16{Precision::bf16, 8, 7, 127};
inline constexpr FloatFormat kFp8E4M3{Precision::fp8e4m3, 4, 3, 7};

constexpr FloatFormat format_of(Precision p) {
  switch (p) {
    case Precision::bf16: return kBf16;
    case Precision::fp8e4m3: return kFp8E4M3;
    case Precision::fp64: break;
  }
  return kFp64;
}

std::string_view to_string(Precision p);
std::optional<Precision> parse_precision(std::string_view s);

/// Largest finite magnitude. E4M3 keeps S.1111.000..110 as normal numbers,
/// so its maximum is 1.75 * 2^8 = 448.
double max_finite(const FloatFormat& fmt);
/// Smallest positive subnormal.
double min_subnormal(const FloatFormat& fmt);

/// Round-to-nearest-even into `fmt`. Overflow saturates for E4M3 and goes
/// to infinity for BF16. E4M3 has no infinity, so an infinite input maps to
/// NaN there. Subnormals are kept.
double round_to_format(double x, const FloatFormat& fmt);
inline double round_to_format(double x, Precision p) { return round_to_format(x, format_of(p)); }

// Bit-level codecs for the two storage formats. Encoding expects a value
// already representable in the format (i.e. the output of round_to_format).
std::uint16_t encode_bf16(double representable);
double decode_bf16(std::uint16_t bits);
std::uint8_t encode_fp8e4m3(double representable);
double decode_fp8e4m3(std::uint8_t bits);

/// A value known to be exactly representable in `format`.
class EmulatedScalar {
 public:
  EmulatedScalar() = default;
  EmulatedScalar(double x, Precision format)
      : carrier_(round_to_format(x, format)), format_(format) {}

  double value() const { return carrier_; }
  Precision format() const { return format_; }

  friend bool operator==(const EmulatedScalar&, const EmulatedScalar&) = default;

 private:
  double carrier_ = 0.0;
  Precision format_ = Precision::fp64;
};

// Compute in FP64, then round. Operands must share a format; mixing formats
// throws std::invalid_argument.
EmulatedScalar emulated_add(EmulatedScalar a, EmulatedScalar b);
EmulatedScalar emulated_sub(EmulatedScalar a, EmulatedScalar b);
EmulatedScalar emulated_mul(EmulatedScalar a, EmulatedScalar b);
EmulatedScalar emulated_div(EmulatedScalar a, EmulatedScalar b);

inline EmulatedScalar operator+(EmulatedScalar a, EmulatedScalar b) { return emulated_add(a, b); }
inline EmulatedScalar operator-(EmulatedScalar a, EmulatedScalar b) { return emulated_sub(a, b); }
inline EmulatedScalar operator*(EmulatedScalar a, EmulatedScalar b) { return emulated_mul(a, b); }
inline EmulatedScalar operator/(EmulatedScalar a, EmulatedScalar b) { return emulated_div(a, b); }

/// Rounding context used by the kernels: every arithmetic result goes
/// through `r()`. In FP64 rounding is the identity.
struct Arith {
  Precision precision = Precision::fp64;
  /// Accumulate dot products in FP64 and round once at the end.
  bool wide_accumulate = false;

  double r(double x) const {
    return precision == Precision::fp64 ? x : round_to_format(x, precision);
  }
  double add(double a, double b) const { return r(a + b); }
  double sub(double a, double b) const { return r(a - b); }
  double mul(double a, double b) const { return r(a * b); }
  double div(double a, double b) const { return r(a / b); }
};

}  // namespace flashd
