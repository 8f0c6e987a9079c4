#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace flashd {

/// Semantic operation tally. A length-d vector multiply counts as d muls.
struct OpCounts {
  std::uint64_t mul = 0;
  std::uint64_t add = 0;
  std::uint64_t sub = 0;
  std::uint64_t div = 0;
  std::uint64_t exp = 0;
  std::uint64_t ln = 0;
  std::uint64_t sigmoid_eval = 0;
  std::uint64_t max_cmp = 0;
  std::uint64_t vec_loads = 0;  // elements read from K and V

  OpCounts& operator+=(const OpCounts& o);
  friend OpCounts operator+(OpCounts a, const OpCounts& b) { return a += b; }
  friend OpCounts operator-(const OpCounts& a, const OpCounts& b);
  friend bool operator==(const OpCounts&, const OpCounts&) = default;

  /// Arithmetic vector work: mul + add + sub + div.
  std::uint64_t arithmetic() const { return mul + add + sub + div; }
};

/// Counters split by datapath stage, so the output-update cost can be read
/// apart from scoring and weight computation.
struct KernelCounters {
  OpCounts score;   // q.k dot products and K loads
  OpCounts weight;  // running max / sums / sigmoid recursion
  OpCounts output;  // output-vector update, V loads, final division

  OpCounts total() const { return score + weight + output; }
  KernelCounters& operator+=(const KernelCounters& o);
  friend bool operator==(const KernelCounters&, const KernelCounters&) = default;
};

struct SkipStats {
  std::uint64_t total_steps = 0;
  std::uint64_t skipped_low = 0;
  std::uint64_t skipped_high = 0;

  double skip_rate() const {
    return total_steps == 0
               ? 0.0
               : static_cast<double>(skipped_low + skipped_high) / static_cast<double>(total_steps);
  }
  SkipStats& operator+=(const SkipStats& o);
  friend bool operator==(const SkipStats&, const SkipStats&) = default;
};

struct QueryError {
  double max_abs = 0.0;
  double max_rel = 0.0;   // componentwise, denominator max(|b|, 1e-30)
  double norm_rel = 0.0;  // ||a-b||_inf / max(||b||_inf, 1e-30)
};

struct ErrorReport {
  double max_abs = 0.0;
  double max_rel = 0.0;
  double mean_rel = 0.0;
  /// Worst per-query infinity-norm relative error. Unlike the componentwise
  /// figure it stays meaningful when an output component is near zero.
  double max_norm_rel = 0.0;
  bool has_nonfinite = false;
  std::vector<QueryError> per_query;
};

/// Row-major outputs: `rows` vectors of length `width`.
struct Outputs {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<double> values;

  const double* row(std::size_t i) const { return values.data() + i * width; }
  double* row(std::size_t i) { return values.data() + i * width; }
};

/// Throws std::invalid_argument when shapes differ.
ErrorReport compare_outputs(const Outputs& a, const Outputs& b);

struct RunSummary {
  std::string kernel;
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t queries = 0;
  OpCounts totals;
  OpCounts per_step;  // totals / (queries * n), integer division
  SkipStats skips;
  bool division_free = false;  // div == 0
  bool max_free = false;       // max_cmp == 0
};

RunSummary summarize_run(const std::string& kernel, const KernelCounters& counters,
                         const SkipStats& stats, std::size_t n, std::size_t d,
                         std::size_t queries);

nlohmann::json to_json(const OpCounts& c);
nlohmann::json to_json(const SkipStats& s);
nlohmann::json to_json(const ErrorReport& r, bool include_per_query = false);
nlohmann::json to_json(const RunSummary& s);

/// One sweep/run record in the stable CSV layout.
struct CsvRow {
  std::string kernel;
  std::string precision;
  std::size_t n = 0;
  std::size_t d = 0;
  std::string skip;
  std::string mode;
  std::string nonlinear;
  OpCounts counts;
  SkipStats skips;
  double max_rel_err = 0.0;
  std::int64_t runtime_ns = 0;
  std::string error;  // non-empty when the row failed
};

std::string csv_header();
std::string csv_line(const CsvRow& row);

}  // namespace flashd
