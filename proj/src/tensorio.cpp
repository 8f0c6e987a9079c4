#include "flashd/tensorio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

namespace flashd {

std::size_t element_size(DType t) {
  switch (t) {
    case DType::fp64: return 8;
    case DType::fp32: return 4;
    case DType::bf16: return 2;
    case DType::fp8e4m3: return 1;
  }
  return 0;
}

DType dtype_for(Precision p) {
  switch (p) {
    case Precision::bf16: return DType::bf16;
    case Precision::fp8e4m3: return DType::fp8e4m3;
    case Precision::fp64: break;
  }
  return DType::fp64;
}

namespace {

constexpr std::uint8_t kMagic[4] = {'A', 'T', 'N', '1'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, std::size_t bytes) {
  for (std::size_t i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, std::size_t bytes) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::size_t product(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

std::size_t Tensor::elements() const { return product(dims); }

std::vector<double> Tensor::to_doubles() const {
  const std::size_t n = elements();
  const std::size_t es = element_size(dtype);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t raw = get_le(payload.data() + i * es, es);
    switch (dtype) {
      case DType::fp64: out[i] = std::bit_cast<double>(raw); break;
      case DType::fp32: out[i] = std::bit_cast<float>(static_cast<std::uint32_t>(raw)); break;
      case DType::bf16: out[i] = decode_bf16(static_cast<std::uint16_t>(raw)); break;
      case DType::fp8e4m3: out[i] = decode_fp8e4m3(static_cast<std::uint8_t>(raw)); break;
    }
  }
  return out;
}

Tensor Tensor::from_doubles(DType dtype, std::vector<std::uint32_t> dims,
                            const std::vector<double>& values) {
  Tensor t;
  t.dtype = dtype;
  t.dims = std::move(dims);
  if (values.size() != t.elements()) {
    throw TensorIoError(TensorIoErrc::size_mismatch, "tensor: value count does not match dims");
  }
  const std::size_t es = element_size(dtype);
  t.payload.reserve(values.size() * es);
  for (double x : values) {
    std::uint64_t raw = 0;
    switch (dtype) {
      case DType::fp64: raw = std::bit_cast<std::uint64_t>(x); break;
      case DType::fp32: raw = std::bit_cast<std::uint32_t>(static_cast<float>(x)); break;
      case DType::bf16: raw = encode_bf16(round_to_format(x, kBf16)); break;
      case DType::fp8e4m3: raw = encode_fp8e4m3(round_to_format(x, kFp8E4M3)); break;
    }
    put_le(t.payload, raw, es);
  }
  return t;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.dims.size() > 255) throw TensorIoError(TensorIoErrc::size_mismatch, "tensor: rank > 255");
  if (t.payload.size() != t.elements() * element_size(t.dtype)) {
    throw TensorIoError(TensorIoErrc::size_mismatch, "tensor: payload does not match dims");
  }
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(static_cast<std::uint8_t>(t.dtype));
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) put_le(out, d, 4);
  out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw TensorIoError(TensorIoErrc::bad_magic, "tensor: bad magic");
  }
  if (bytes.size() < 6) throw TensorIoError(TensorIoErrc::size_mismatch, "tensor: truncated header");
  if (bytes[4] > static_cast<std::uint8_t>(DType::fp8e4m3)) {
    throw TensorIoError(TensorIoErrc::unknown_dtype, "tensor: unknown dtype code");
  }
  Tensor t;
  t.dtype = static_cast<DType>(bytes[4]);
  const std::size_t rank = bytes[5];
  const std::size_t header = 6 + 4 * rank;
  if (bytes.size() < header) throw TensorIoError(TensorIoErrc::size_mismatch, "tensor: truncated dims");
  for (std::size_t r = 0; r < rank; ++r) {
    t.dims.push_back(static_cast<std::uint32_t>(get_le(bytes.data() + 6 + 4 * r, 4)));
  }
  const std::size_t expected = t.elements() * element_size(t.dtype);
  if (bytes.size() - header != expected) {
    throw TensorIoError(TensorIoErrc::size_mismatch, "tensor: payload size does not match dims");
  }
  t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw TensorIoError(TensorIoErrc::io_failure, "cannot open " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw TensorIoError(TensorIoErrc::io_failure, "write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorIoError(TensorIoErrc::io_failure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

// ---------------------------------------------------------------------------

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SplitMix64::uniform01() { return static_cast<double>(next() >> 11) * 0x1p-53; }

double SplitMix64::gaussian() {
  const double u1 = 1.0 - uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void GenSpec::validate() const {
  if (n < 1 || d < 1 || queries < 1) {
    throw std::invalid_argument("GenSpec: N, d and query count must be >= 1");
  }
  if (distribution == Distribution::gaussian && !(param_b >= 0.0)) {
    throw std::invalid_argument("GenSpec: gaussian stddev must be >= 0");
  }
  if (distribution == Distribution::uniform && !(param_a <= param_b)) {
    throw std::invalid_argument("GenSpec: uniform bounds must satisfy a <= b");
  }
  if (distribution == Distribution::adversarial_large_scores && !(param_a > 0.0)) {
    throw std::invalid_argument("GenSpec: adversarial scale must be > 0");
  }
}

void parse_distribution(const std::string& text, GenSpec& spec) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  std::vector<double> params;
  if (colon != std::string::npos) {
    std::string rest = text.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      const auto comma = rest.find(',', pos);
      const std::string tok = rest.substr(pos, comma == std::string::npos ? std::string::npos
                                                                         : comma - pos);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        throw std::invalid_argument("bad distribution parameter '" + tok + "'");
      }
      if (used != tok.size()) throw std::invalid_argument("bad distribution parameter '" + tok + "'");
      params.push_back(v);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  if (kind == "gaussian" || kind == "uniform") {
    if (params.size() != 2 && !params.empty()) {
      throw std::invalid_argument(kind + " takes two parameters");
    }
    spec.distribution = kind == "gaussian" ? Distribution::gaussian : Distribution::uniform;
    spec.param_a = params.empty() ? (kind == "gaussian" ? 0.0 : -1.0) : params[0];
    spec.param_b = params.empty() ? 1.0 : params[1];
  } else if (kind == "adversarial") {
    if (params.size() > 1) throw std::invalid_argument("adversarial takes one parameter");
    spec.distribution = Distribution::adversarial_large_scores;
    spec.param_a = params.empty() ? 1e4 : params[0];
    spec.param_b = 0.0;
  } else {
    throw std::invalid_argument("unknown distribution '" + kind + "'");
  }
}

std::string describe_distribution(const GenSpec& spec) {
  auto num = [](double x) {
    std::ostringstream os;
    os << x;
    return os.str();
  };
  switch (spec.distribution) {
    case Distribution::gaussian: return "gaussian:" + num(spec.param_a) + "," + num(spec.param_b);
    case Distribution::uniform: return "uniform:" + num(spec.param_a) + "," + num(spec.param_b);
    case Distribution::adversarial_large_scores: return "adversarial:" + num(spec.param_a);
  }
  return "unknown";
}

AttnProblem generate(const GenSpec& spec) {
  spec.validate();
  AttnProblem p;
  p.d = spec.d;
  p.n = spec.n;
  p.queries = spec.queries;
  p.q.resize(p.queries * p.d);
  p.k.resize(p.n * p.d);
  p.v.resize(p.n * p.d);

  SplitMix64 rng(spec.seed);
  auto draw = [&]() {
    switch (spec.distribution) {
      case Distribution::gaussian: return spec.param_a + spec.param_b * rng.gaussian();
      case Distribution::uniform:
        return spec.param_a + (spec.param_b - spec.param_a) * rng.uniform01();
      case Distribution::adversarial_large_scores: return rng.gaussian();
    }
    return 0.0;
  };
  for (auto* vec : {&p.q, &p.k, &p.v}) {
    for (double& x : *vec) x = draw();
  }

  if (spec.distribution == Distribution::adversarial_large_scores) {
    for (std::size_t qi = 0; qi < p.queries; ++qi) {
      double peak = 0.0;
      for (std::size_t i = 0; i < p.n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.d; ++j) s += p.q[qi * p.d + j] * p.k[i * p.d + j];
        peak = std::max(peak, std::fabs(s));
      }
      if (peak == 0.0) continue;
      const double factor = spec.param_a / peak;
      for (std::size_t j = 0; j < p.d; ++j) p.q[qi * p.d + j] *= factor;
    }
  }
  return p;
}

namespace {

Tensor matrix_tensor(const std::vector<double>& values, std::size_t rows, std::size_t cols) {
  return Tensor::from_doubles(DType::fp64,
                              {static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols)},
                              values);
}

}  // namespace

void write_problem(const std::filesystem::path& dir, const AttnProblem& p) {
  p.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw TensorIoError(TensorIoErrc::io_failure, "cannot create " + dir.string());
  write_tensor(dir / "q.atn", matrix_tensor(p.q, p.queries, p.d));
  write_tensor(dir / "k.atn", matrix_tensor(p.k, p.n, p.d));
  write_tensor(dir / "v.atn", matrix_tensor(p.v, p.n, p.d));
}

AttnProblem read_problem(const std::filesystem::path& dir) {
  const Tensor q = read_tensor(dir / "q.atn");
  const Tensor k = read_tensor(dir / "k.atn");
  const Tensor v = read_tensor(dir / "v.atn");
  for (const Tensor* t : {&q, &k, &v}) {
    if (t->dims.size() != 2) {
      throw TensorIoError(TensorIoErrc::size_mismatch, "problem tensors must be rank 2");
    }
  }
  if (k.dims != v.dims || q.dims[1] != k.dims[1]) {
    throw TensorIoError(TensorIoErrc::size_mismatch, "q/k/v shapes are inconsistent");
  }
  AttnProblem p;
  p.queries = q.dims[0];
  p.d = q.dims[1];
  p.n = k.dims[0];
  p.q = q.to_doubles();
  p.k = k.to_doubles();
  p.v = v.to_doubles();
  p.validate();
  return p;
}

}  // namespace flashd
