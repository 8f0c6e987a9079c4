// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Every tolerance is a named constant below.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "flashd/kernels.hpp"
#include "flashd/tensorio.hpp"
#include "oracles.hpp"

using namespace flashd;
namespace fs = std::filesystem;

namespace {

constexpr double kEquivalenceTol = 1e-12;
constexpr double kEquivalenceSeconds = 60.0;
constexpr double kWeightIdentityTol = 1e-12;
constexpr double kAdversarialScale = 1e4;
constexpr double kStabilityTol = 1e-10;
constexpr double kSigmoidPwlBound = 0.0102;
constexpr double kLnPwlBound = 0.302;
// Worst normwise error of BF16 FLASH-D with PWL tables against the FP64
// reference on the fixed instance set below, measured once (3.81) and
// rounded up. FP64 with the same tables measures the same, so this is the
// cost of the 8-segment tables, not of BF16.
constexpr double kBf16PwlEnvelope = 4.0;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

AttnProblem gaussian(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t queries) {
  GenSpec spec;
  spec.seed = seed;
  spec.n = n;
  spec.d = d;
  spec.queries = queries;
  return generate(spec);
}

// ---------------------------------------------------------------------------

Outcome equivalence() {
  const std::size_t ns[] = {1, 2, 64, 512, 1024};
  const std::size_t ds[] = {16, 64, 256};
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const AttnProblem p = gaussian(seed, ns[seed % 5], ds[(seed / 5) % 3], 2);
    std::vector<Outputs> outs;
    for (auto kind :
         {KernelKind::reference, KernelKind::alg1, KernelKind::alg2, KernelKind::flashd}) {
      outs.push_back(run_kernel(p, kind).outputs);
    }
    for (std::size_t a = 0; a < outs.size(); ++a) {
      for (std::size_t b = a + 1; b < outs.size(); ++b) {
        worst = std::max(worst, compare_outputs(outs[a], outs[b]).max_norm_rel);
      }
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= kEquivalenceTol && secs <= kEquivalenceSeconds,
          "200 instances, worst pairwise normwise rel err " + fmt("%.3g", worst) + " (tol " +
              fmt("%.0e", kEquivalenceTol) + "), " + fmt("%.2f", secs) + " s"};
}

Outcome weight_identity() {
  double worst = 0.0;
  std::size_t steps = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const AttnProblem p = gaussian(1000 + seed, 256, seed % 2 ? 64 : 16, 1);
    Alg1State a1;
    FlashDState fd;
    for (std::size_t i = 0; i < p.n; ++i) {
      const double s = score(p.query(0), p.key(i), {});
      alg1_step(a1, s, p.value(i));
      flashd_step(fd, s, p.value(i));
      worst = std::max(worst, std::fabs(std::exp(s - a1.m) / a1.l - fd.w));
      ++steps;
    }
  }
  return {worst <= kWeightIdentityTol, "50 seeds, " + std::to_string(steps) +
                                           " lockstep steps, max |w - e^(s-m)/l| " +
                                           fmt("%.3g", worst)};
}

Outcome stability() {
  double worst = 0.0;
  bool nonfinite = false;
  int naive_overflows = 0;
  const int instances = 20;
  for (int seed = 0; seed < instances; ++seed) {
    GenSpec spec;
    spec.seed = 2000 + seed;
    spec.n = 256;
    spec.d = 64;
    spec.queries = 4;
    spec.distribution = Distribution::adversarial_large_scores;
    spec.param_a = kAdversarialScale;
    const AttnProblem p = generate(spec);
    KernelOptions log_mode;
    log_mode.mode = FlashDMode::log_domain;
    const auto fd = run_kernel(p, KernelKind::flashd, log_mode);
    const auto ref = run_kernel(p, KernelKind::reference);
    const auto rep = compare_outputs(fd.outputs, ref.outputs);
    nonfinite |= rep.has_nonfinite;
    worst = std::max(worst, rep.max_norm_rel);
    bool overflowed = false;
    for (std::size_t qi = 0; qi < p.queries; ++qi) {
      for (double x : oracle::attention_naive(p, qi)) overflowed |= !std::isfinite(x);
    }
    naive_overflows += overflowed;
  }
  return {!nonfinite && worst <= kStabilityTol && naive_overflows >= 1,
          std::to_string(instances) + " instances with |s| up to " +
              fmt("%.0e", kAdversarialScale) + ": log-mode FLASH-D nonfinite=" +
              (nonfinite ? "yes" : "no") + ", worst rel err " + fmt("%.3g", worst) +
              "; naive softmax overflowed on " + std::to_string(naive_overflows)};
}

Outcome op_counts() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t d : {16u, 64u, 256u}) {
    const AttnProblem p = gaussian(3000 + d, 2, d, 1);
    const double s0 = score(p.query(0), p.key(0), {});
    const double s1 = score(p.query(0), p.key(1), {});

    FlashDState fd;
    flashd_step(fd, s0, p.value(0));
    KernelCounters cf;
    flashd_step(fd, s1, p.value(1), {}, &cf);
    const OpCounts& f = cf.output;
    ok &= f.mul == d && f.add == d && f.sub == d && f.div == 0 && f.max_cmp == 0;
    ok &= cf.total().div == 0 && cf.total().max_cmp == 0;

    Alg2State a2;
    alg2_step(a2, s0, p.value(0));
    KernelCounters ca;
    alg2_step(a2, s1, p.value(1), {}, &ca);
    ok &= ca.output.mul == 2 * d && ca.output.add == d && ca.output.sub == 0 &&
          ca.output.div == 0;

    const AttnProblem big = gaussian(3100 + d, 300, d, 3);
    const auto fr = run_kernel(big, KernelKind::flashd);
    const auto ar = run_kernel(big, KernelKind::alg2);
    ok &= fr.counters.total().div == 0 && fr.counters.total().max_cmp == 0;
    ok &= ar.counters.total().div == d * big.queries;
  }
  detail = "per step FLASH-D output {d mul, d add, d sub, 0 div, 0 max_cmp}, Alg2 {2d mul, d add};"
           " whole run FLASH-D div 0, Alg2 div d per query; d in {16, 64, 256}";
  return {ok, detail};
}

Outcome skip_behavior() {
  bool constructed = true;
  {
    KernelOptions on;
    on.skip.enabled = true;
    FlashDState st;
    const std::vector<double> v0{1.0, -2.0, 0.5};
    flashd_step(st, 3.0, v0, on);
    flashd_step(st, 3.5, std::vector<double>{0.0, 4.0, 1.0}, on);
    const std::vector<double> before = st.o;
    const std::vector<double> poison(3, std::numeric_limits<double>::quiet_NaN());
    constructed &= flashd_step(st, 3.5 - 10.0, poison, on) == SkipEvent::low;
    constructed &= st.o == before;
    const std::vector<double> v3{0.3, 0.7, -0.9};
    constructed &= flashd_step(st, 3.5 - 10.0 + 20.0, v3, on) == SkipEvent::high;
    constructed &= st.o == v3;
  }

  // Deviation of skip-on from skip-off against N * sigma(lo) * max_k |v_k - o|.
  struct Measure {
    double worst_ratio = 0.0;
    int violations = 0;
    int queries = 0;
    SkipStats skips;
  };
  auto measure = [](SkipCriterion criterion) {
    Measure m;
    const std::size_t ns[] = {16, 64, 512, 1024};
    const std::size_t ds[] = {16, 64, 256};
    for (std::size_t n : ns) {
      for (std::size_t d : ds) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
          const AttnProblem p = gaussian(4000 + seed, n, d, 4);
          KernelOptions on;
          on.skip.enabled = true;
          on.skip.criterion = criterion;
          const auto with = run_kernel(p, KernelKind::flashd, on);
          const auto without = run_kernel(p, KernelKind::flashd);
          m.skips += with.skips;
          for (std::size_t qi = 0; qi < p.queries; ++qi) {
            double dev = 0.0, spread = 0.0;
            for (std::size_t k = 0; k < p.d; ++k) {
              dev = std::max(dev, std::fabs(with.outputs.row(qi)[k] - without.outputs.row(qi)[k]));
            }
            for (std::size_t i = 0; i < p.n; ++i) {
              for (std::size_t k = 0; k < p.d; ++k) {
                spread = std::max(spread, std::fabs(p.value(i)[k] - without.outputs.row(qi)[k]));
              }
            }
            const double bound = static_cast<double>(n) * sigmoid_exact(on.skip.lo) * spread;
            const double ratio = dev / bound;
            m.worst_ratio = std::max(m.worst_ratio, ratio);
            m.violations += ratio > 1.0;
            ++m.queries;
          }
        }
      }
    }
    return m;
  };
  const Measure diff = measure(SkipCriterion::difference);
  const Measure arg = measure(SkipCriterion::argument);
  std::printf(
      "      synthetic skip rate (Gaussian, not comparable to LLM measurements): difference "
      "%.2f%% (low %llu, high %llu of %llu), argument %.2f%%\n",
      100.0 * diff.skips.skip_rate(), static_cast<unsigned long long>(diff.skips.skipped_low),
      static_cast<unsigned long long>(diff.skips.skipped_high),
      static_cast<unsigned long long>(diff.skips.total_steps), 100.0 * arg.skips.skip_rate());
  std::printf("      argument criterion: worst deviation/bound %.3g, %d of %d queries over\n",
              arg.worst_ratio, arg.violations, arg.queries);

  return {constructed && diff.violations == 0,
          std::string("constructed -10/+20 steps ") + (constructed ? "ok" : "WRONG") +
              "; default difference criterion: worst deviation/bound " +
              fmt("%.3g", diff.worst_ratio) + ", " + std::to_string(diff.violations) + " of " +
              std::to_string(diff.queries) + " queries over the bound"};
}

Outcome pwl_quality() {
  const double sig = default_sigmoid_table().max_abs_error;
  const double ln = default_ln_table().max_abs_error;
  bool ok = default_sigmoid_table().segments() == 8 && default_ln_table().segments() == 8;
  ok &= sig <= kSigmoidPwlBound && ln <= kLnPwlBound;

  double envelope = 0.0, exact_bf16 = 0.0;
  bool nonfinite = false;
  for (std::size_t d : {16u, 64u}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const AttnProblem p = gaussian(5000 + seed, 256, d, 4);
      const auto ref = run_kernel(p, KernelKind::reference);
      KernelOptions pwl;
      pwl.arith.precision = Precision::bf16;
      pwl.nonlinear = NonlinearKind::pwl;
      const auto rep = compare_outputs(run_kernel(p, KernelKind::flashd, pwl).outputs, ref.outputs);
      nonfinite |= rep.has_nonfinite;
      envelope = std::max(envelope, rep.max_norm_rel);
      KernelOptions exact;
      exact.arith.precision = Precision::bf16;
      exact_bf16 = std::max(
          exact_bf16,
          compare_outputs(run_kernel(p, KernelKind::flashd, exact).outputs, ref.outputs)
              .max_norm_rel);
    }
  }
  std::printf("      BF16 FLASH-D with exact nonlinearities on the same set: %.3g\n", exact_bf16);
  ok &= !nonfinite && envelope <= kBf16PwlEnvelope;
  return {ok, "sigmoid max abs err " + fmt("%.5f", sig) + " (bound " +
                  fmt("%.4f", kSigmoidPwlBound) + "), ln " + fmt("%.5f", ln) + " (bound " +
                  fmt("%.3f", kLnPwlBound) + "); BF16 PWL FLASH-D worst normwise err " +
                  fmt("%.3g", envelope) + " (envelope " + fmt("%.2f", kBf16PwlEnvelope) + ")"};
}

Outcome precision_roundtrip() {
  int mismatches = 0;
  const auto check = [&](std::uint32_t bits, const oracle::Layout& l, const FloatFormat& fmt_,
                         double decoded, std::uint32_t reencoded,
                         const std::vector<double>& ladder) {
    const double want = oracle::decode(bits, l);
    if (std::isnan(want)) {
      mismatches += !std::isnan(decoded);
      return;
    }
    mismatches += decoded != want;
    mismatches += round_to_format(decoded, fmt_) != decoded;
    if (std::isfinite(want)) mismatches += oracle::round_by_enumeration(want, l, ladder) != want;
    mismatches += reencoded != bits;
  };
  const auto ladder8 = oracle::positive_ladder(oracle::kE4M3);
  for (std::uint32_t b = 0; b < 256; ++b) {
    const double v = decode_fp8e4m3(static_cast<std::uint8_t>(b));
    check(b, oracle::kE4M3, kFp8E4M3, v, std::isnan(v) ? b : encode_fp8e4m3(v), ladder8);
  }
  const auto ladder16 = oracle::positive_ladder(oracle::kBf16);
  for (std::uint32_t b = 0; b < 65536; ++b) {
    const double v = decode_bf16(static_cast<std::uint16_t>(b));
    check(b, oracle::kBf16, kBf16, v, std::isnan(v) ? b : encode_bf16(v), ladder16);
  }
  return {mismatches == 0, "256 FP8 E4M3 + 65536 BF16 encodings, " +
                               std::to_string(mismatches) + " mismatches"};
}

int lab(const std::string& args) {
  const std::string cmd = std::string(FLASHD_LAB_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string without_runtime(const std::string& csv) {
  std::stringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

Outcome determinism() {
  const fs::path tmp = FLASHD_TEST_TMP;
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  const auto path = [&](const std::string& n) { return (tmp / n).string(); };
  bool ok = true;
  for (const char* dir : {"a", "b"}) {
    ok &= lab("gen --seed 99 --n 128 --d 32 --queries 4 --out " + path(dir)) == 0;
    ok &= lab("run --kernel flashd --precision bf16 --nonlinear pwl --skip on --in " + path(dir) +
              " --out " + path(std::string(dir) + "/o.atn")) == 0;
    ok &= lab("sweep --seed 99 --n 128 --skips off,on --out " + path(std::string(dir) + ".csv")) ==
          0;
  }
  int tensors = 0;
  for (const char* f : {"q.atn", "k.atn", "v.atn", "o.atn"}) {
    const std::string a = slurp(tmp / "a" / f);
    ok &= !a.empty() && a == slurp(tmp / "b" / f);
    ++tensors;
  }
  const std::string csv = slurp(tmp / "a.csv");
  ok &= !csv.empty() && without_runtime(csv) == without_runtime(slurp(tmp / "b.csv"));
  const auto rows = std::count(csv.begin(), csv.end(), '\n') - 1;
  return {ok, std::to_string(tensors) + " tensors bit-identical across runs; sweep CSV of " +
                  std::to_string(rows) + " rows identical apart from runtime_ns"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "equivalence", equivalence},         {2, "weight identity", weight_identity},
      {3, "stability", stability},             {4, "op-count deltas", op_counts},
      {5, "skip behaviour", skip_behavior},    {6, "PWL quality", pwl_quality},
      {7, "precision round-trip", precision_roundtrip}, {8, "determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o{false, ""};
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu of %zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
