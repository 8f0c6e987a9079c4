#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "flashd/instrumentation.hpp"
#include "flashd/nonlinear.hpp"
#include "flashd/precision.hpp"

namespace flashd {

/// Single-head attention instance: `queries` query vectors against N
/// key/value pairs, all of length d, stored row-major.
struct AttnProblem {
  std::size_t d = 0;
  std::size_t n = 0;
  std::size_t queries = 0;
  std::vector<double> q;  // queries x d
  std::vector<double> k;  // n x d
  std::vector<double> v;  // n x d

  std::span<const double> query(std::size_t i) const { return {q.data() + i * d, d}; }
  std::span<const double> key(std::size_t i) const { return {k.data() + i * d, d}; }
  std::span<const double> value(std::size_t i) const { return {v.data() + i * d, d}; }

  /// Throws std::invalid_argument when sizes are inconsistent or N or d is 0.
  void validate() const;
};

enum class KernelKind { reference, alg1, alg2, flashd };
enum class FlashDMode { paper, log_domain };
enum class NonlinearKind { exact, pwl };

std::string_view to_string(KernelKind k);
std::string_view to_string(FlashDMode m);
std::string_view to_string(NonlinearKind n);
std::optional<KernelKind> parse_kernel(std::string_view s);
std::optional<FlashDMode> parse_mode(std::string_view s);
std::optional<NonlinearKind> parse_nonlinear(std::string_view s);

/// What the skip window is tested against.
///  - difference: the raw score difference s_i - s_{i-1}. A low skip forces
///    w to skip_floor() and ln w to its log, so the error of the forced
///    weight carries into every later step.
///  - argument: the full sigmoid argument z = s_i - s_{i-1} + ln w_{i-1}.
///    A low skip carries ln w <- z instead of forcing it.
enum class SkipCriterion { difference, argument };

std::string_view to_string(SkipCriterion c);
std::optional<SkipCriterion> parse_skip_criterion(std::string_view s);

struct SkipConfig {
  bool enabled = false;
  double lo = -6.0;
  double hi = 11.0;
  SkipCriterion criterion = SkipCriterion::difference;
};

/// Weight forced by a low skip under the difference criterion.
inline constexpr double kSkipWeight = 0x1p-24;

/// Smallest weight FLASH-D keeps. With exact nonlinearities: the smallest
/// BF16 or E4M3 subnormal (2^-133, 2^-9), or the smallest normal double.
/// With PWL: at least the ln table's lower end, 2^-24. Below the floor
/// ln w is clamped, which overweights every later step.
double default_weight_floor(Precision p, NonlinearKind nonlinear = NonlinearKind::exact);

struct KernelOptions {
  Arith arith;
  SkipConfig skip;
  NonlinearKind nonlinear = NonlinearKind::exact;
  FlashDMode mode = FlashDMode::paper;
  /// Overrides default_weight_floor(arith.precision, nonlinear) when set.
  std::optional<double> weight_floor;
  /// PWL tables; default_sigmoid_table()/default_ln_table() when null.
  const PwlTable* sigmoid_table = nullptr;
  const PwlTable* ln_table = nullptr;

  double w_min() const {
    return weight_floor.value_or(default_weight_floor(arith.precision, nonlinear));
  }
  /// max(kSkipWeight, w_min()).
  double skip_floor() const;
  /// Throws std::invalid_argument for inconsistent settings.
  void validate() const;
};

/// q.k under the datapath precision: products and running sum are each
/// rounded unless `arith.wide_accumulate` is set. Counts d mul, d-1 add and
/// d key loads. Throws std::invalid_argument on length mismatch.
double score(std::span<const double> q, std::span<const double> k, const Arith& arith,
             OpCounts* counts = nullptr);

/// Safe-softmax attention for one query: the ground truth for the
/// streaming kernels.
std::vector<double> reference_attention(const AttnProblem& p, std::size_t query,
                                        const Arith& arith = {},
                                        KernelCounters* counters = nullptr);

// ---------------------------------------------------------------------------
// Streaming states. Steps update in place; `i` is the number of steps taken.

struct Alg1State {
  double m = 0.0;  // running max score
  double l = 0.0;  // running sum of e^{s-m}
  std::vector<double> o;
  std::size_t i = 0;
};

struct Alg2State {
  double m = 0.0;
  double l = 0.0;
  std::vector<double> o;  // unnormalised; o / l is the Alg1 output
  std::size_t i = 0;
};

struct FlashDState {
  double s_prev = 0.0;
  double w = 0.0;    // in (0, 1]
  double lnw = 0.0;  // ln w, carried alongside w
  std::vector<double> o;
  std::size_t i = 0;
  FlashDMode mode = FlashDMode::paper;
};

/// Online softmax with per-step normalisation (both divisions every step).
void alg1_step(Alg1State& st, double s, std::span<const double> v, const Arith& arith = {},
               KernelCounters* counters = nullptr);

/// Online softmax with the division deferred to alg2_finalize.
void alg2_step(Alg2State& st, double s, std::span<const double> v, const Arith& arith = {},
               KernelCounters* counters = nullptr);
/// o / l. Throws std::logic_error before the first step.
std::vector<double> alg2_finalize(const Alg2State& st, const Arith& arith = {},
                                  KernelCounters* counters = nullptr);

enum class SkipEvent { none, low, high };

/// One FLASH-D step: w = sigmoid(s - s_prev + ln w_prev), then
/// o += (v - o) * w. With skipping enabled, a tested value below `skip.lo`
/// leaves o untouched without reading v, and one above `skip.hi` copies v.
SkipEvent flashd_step(FlashDState& st, double s, std::span<const double> v,
                      const KernelOptions& opts = {}, KernelCounters* counters = nullptr);

// ---------------------------------------------------------------------------

struct KernelRun {
  Outputs outputs;
  KernelCounters counters;
  SkipStats skips;
};

/// Runs `kind` over every query, streaming K/V once per query in order.
/// Queries are distributed over OpenMP threads; per-query counters are merged
/// in query order so results are identical to run_kernel_serial.
KernelRun run_kernel(const AttnProblem& p, KernelKind kind, const KernelOptions& opts = {});

/// Single-threaded reference driver with the same semantics.
KernelRun run_kernel_serial(const AttnProblem& p, KernelKind kind,
                            const KernelOptions& opts = {});

/// Copy of `p` with every element rounded into `prec`.
AttnProblem round_problem(const AttnProblem& p, Precision prec);

}  // namespace flashd
