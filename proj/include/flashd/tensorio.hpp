#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "flashd/kernels.hpp"

namespace flashd {

// ATN1 tensor file, all integers little-endian:
//
//   offset 0   4 bytes  magic "ATN1"
//   offset 4   u8       dtype (0=fp64, 1=fp32, 2=bf16, 3=fp8e4m3)
//   offset 5   u8       rank
//   offset 6   rank x u32 dims
//   then       product(dims) elements, row-major, little-endian

enum class DType : std::uint8_t { fp64 = 0, fp32 = 1, bf16 = 2, fp8e4m3 = 3 };

std::size_t element_size(DType t);
DType dtype_for(Precision p);

enum class TensorIoErrc { bad_magic, unknown_dtype, size_mismatch, io_failure };

class TensorIoError : public std::runtime_error {
 public:
  TensorIoError(TensorIoErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  TensorIoErrc code() const { return code_; }

 private:
  TensorIoErrc code_;
};

/// Raw stored bytes plus shape; conversions to FP64 are lossless.
struct Tensor {
  DType dtype = DType::fp64;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;

  std::size_t elements() const;
  std::vector<double> to_doubles() const;
  /// Rounds each value into `dtype` (round-to-nearest-even).
  static Tensor from_doubles(DType dtype, std::vector<std::uint32_t> dims,
                             const std::vector<double>& values);

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
/// Throws TensorIoError.
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic problems.

enum class Distribution { gaussian, uniform, adversarial_large_scores };

struct GenSpec {
  std::uint64_t seed = 0;
  std::size_t n = 64;
  std::size_t d = 16;
  std::size_t queries = 1;
  Distribution distribution = Distribution::gaussian;
  /// gaussian: (mean, stddev); uniform: (lo, hi); adversarial: (scale, unused).
  double param_a = 0.0;
  double param_b = 1.0;

  void validate() const;
};

/// Parses "gaussian:MU,SIGMA", "uniform:A,B" or "adversarial:SCALE".
/// Throws std::invalid_argument.
void parse_distribution(const std::string& text, GenSpec& spec);
std::string describe_distribution(const GenSpec& spec);

/// SplitMix64: 64-bit state advanced by 0x9E3779B97F4A7C15, output mixed
/// with the standard 30/27/31 shift-multiply finaliser.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  /// Top 53 bits mapped to [0, 1).
  double uniform01();
  /// Box-Muller from two uniform01 draws (the first mapped to (0, 1]).
  double gaussian();

 private:
  std::uint64_t state_;
};

/// Deterministic problem. Draw order: all of Q, then K, then V, row-major.
/// The adversarial distribution draws standard normals and then rescales
/// each query so its largest |score| equals `scale`.
AttnProblem generate(const GenSpec& spec);

/// Writes q.atn, k.atn and v.atn (fp64) into `dir`.
void write_problem(const std::filesystem::path& dir, const AttnProblem& p);
/// Reads q.atn, k.atn and v.atn; any stored dtype is accepted.
AttnProblem read_problem(const std::filesystem::path& dir);

}  // namespace flashd
