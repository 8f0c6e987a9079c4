// flashd-lab: generate problems, run attention kernels, compare outputs,
// fit PWL tables and sweep the kernel/precision/dimension grid.
//
// Exit codes: 0 ok, 1 tolerance exceeded, 2 usage, 3 I/O, 4 shape mismatch.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "flashd/instrumentation.hpp"
#include "flashd/kernels.hpp"
#include "flashd/nonlinear.hpp"
#include "flashd/tensorio.hpp"

namespace {

using flashd::AttnProblem;
using nlohmann::json;

constexpr int kExitTolerance = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitShape = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenFlags {
  std::uint64_t seed = 0;
  std::size_t n = 64;
  std::size_t d = 16;
  std::size_t queries = 4;
  std::string dist = "gaussian:0,1";

  flashd::GenSpec spec() const {
    flashd::GenSpec s;
    s.seed = seed;
    s.n = n;
    s.d = d;
    s.queries = queries;
    try {
      flashd::parse_distribution(dist, s);
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return s;
  }
};

void add_gen_flags(CLI::App* cmd, GenFlags& g, bool with_defaults) {
  auto* seed = cmd->add_option("--seed", g.seed, "PRNG seed (SplitMix64)");
  cmd->add_option("--n", g.n, "sequence length N")->check(CLI::PositiveNumber);
  cmd->add_option("--d", g.d, "hidden dimension d")->check(CLI::PositiveNumber);
  cmd->add_option("--queries", g.queries, "number of query vectors")->check(CLI::PositiveNumber);
  cmd->add_option("--dist", g.dist, "gaussian:MU,SIGMA | uniform:A,B | adversarial:SCALE");
  if (with_defaults) seed->capture_default_str();
}

struct KernelFlags {
  std::string kernel = "flashd";
  std::string precision = "fp64";
  std::string skip = "off";
  double skip_lo = -6.0;
  double skip_hi = 11.0;
  std::string skip_criterion = "difference";
  std::string nonlinear = "exact";
  std::string mode = "paper";
  bool wide_accumulate = false;
};

void add_kernel_flags(CLI::App* cmd, KernelFlags& k, bool single_kernel) {
  if (single_kernel) {
    cmd->add_option("--kernel", k.kernel, "reference|alg1|alg2|flashd")
        ->check(CLI::IsMember({"reference", "alg1", "alg2", "flashd"}));
    cmd->add_option("--precision", k.precision, "fp64|bf16|fp8e4m3")
        ->check(CLI::IsMember({"fp64", "bf16", "fp8e4m3"}));
    cmd->add_option("--skip", k.skip, "on|off")->check(CLI::IsMember({"on", "off"}));
  }
  cmd->add_option("--skip-lo", k.skip_lo, "low skip threshold");
  cmd->add_option("--skip-hi", k.skip_hi, "high skip threshold");
  cmd->add_option("--skip-criterion", k.skip_criterion,
                  "difference: test s_i - s_{i-1}; argument: test s_i - s_{i-1} + ln w_{i-1}")
      ->check(CLI::IsMember({"difference", "argument"}));
  cmd->add_option("--nonlinear", k.nonlinear, "exact|pwl")->check(CLI::IsMember({"exact", "pwl"}));
  cmd->add_option("--mode", k.mode, "paper|log")->check(CLI::IsMember({"paper", "log"}));
  cmd->add_flag("--wide-accumulate", k.wide_accumulate, "accumulate dot products in FP64");
}

flashd::KernelOptions kernel_options(const KernelFlags& k, flashd::Precision prec, bool skip) {
  flashd::KernelOptions o;
  o.arith.precision = prec;
  o.arith.wide_accumulate = k.wide_accumulate;
  o.skip = {skip, k.skip_lo, k.skip_hi, *flashd::parse_skip_criterion(k.skip_criterion)};
  o.nonlinear = *flashd::parse_nonlinear(k.nonlinear);
  o.mode = *flashd::parse_mode(k.mode);
  try {
    o.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return o;
}

flashd::Outputs read_outputs(const std::string& path) {
  const flashd::Tensor t = flashd::read_tensor(path);
  if (t.dims.size() != 2) {
    throw flashd::TensorIoError(flashd::TensorIoErrc::size_mismatch, path + ": expected rank 2");
  }
  return {t.dims[0], t.dims[1], t.to_doubles()};
}

void write_outputs(const std::string& path, const flashd::Outputs& o) {
  flashd::write_tensor(path, flashd::Tensor::from_doubles(
                                 flashd::DType::fp64,
                                 {static_cast<std::uint32_t>(o.rows),
                                  static_cast<std::uint32_t>(o.width)},
                                 o.values));
}

bool all_finite(const flashd::Outputs& o) {
  for (double x : o.values) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::int64_t elapsed_ns(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                               start)
      .count();
}

// --- gen --------------------------------------------------------------------

int cmd_gen(const GenFlags& g, const std::string& out) {
  const AttnProblem p = flashd::generate(g.spec());
  flashd::write_problem(out, p);
  json j = {{"out", out},
            {"files", {"q.atn", "k.atn", "v.atn"}},
            {"seed", g.seed},
            {"n", p.n},
            {"d", p.d},
            {"queries", p.queries},
            {"dist", g.dist}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

// --- run --------------------------------------------------------------------

struct RunFlags {
  std::string in;
  std::string out;
  int reps = 1;
  bool serial = false;
  bool vs_reference = false;
};

int cmd_run(const GenFlags& g, bool have_gen, const KernelFlags& kf, const RunFlags& rf) {
  if (rf.in.empty() == !have_gen) {
    throw UsageError("run needs exactly one input source: --in DIR or generator flags (--seed ...)");
  }
  const AttnProblem p = have_gen ? flashd::generate(g.spec()) : flashd::read_problem(rf.in);
  const auto kind = *flashd::parse_kernel(kf.kernel);
  const auto prec = *flashd::parse_precision(kf.precision);
  const auto opts = kernel_options(kf, prec, kf.skip == "on");

  flashd::KernelRun run;
  std::int64_t best_ns = -1;
  for (int r = 0; r < std::max(1, rf.reps); ++r) {
    const auto start = std::chrono::steady_clock::now();
    run = rf.serial ? flashd::run_kernel_serial(p, kind, opts) : flashd::run_kernel(p, kind, opts);
    const auto ns = elapsed_ns(start);
    if (best_ns < 0 || ns < best_ns) best_ns = ns;
  }
  if (!rf.out.empty()) write_outputs(rf.out, run.outputs);

  const auto summary =
      flashd::summarize_run(kf.kernel, run.counters, run.skips, p.n, p.d, p.queries);
  json j = {{"kernel", kf.kernel},
            {"precision", kf.precision},
            {"skip", kf.skip},
            {"skip_lo", kf.skip_lo},
            {"skip_hi", kf.skip_hi},
            {"skip_criterion", kf.skip_criterion},
            {"nonlinear", kf.nonlinear},
            {"mode", kf.mode},
            {"wide_accumulate", kf.wide_accumulate},
            {"summary", flashd::to_json(summary)},
            {"output_update_counts", flashd::to_json(run.counters.output)},
            {"nonfinite", !all_finite(run.outputs)},
            {"runtime_ns", best_ns}};
  if (!rf.out.empty()) j["out"] = rf.out;
  if (rf.vs_reference) {
    const auto ref = flashd::run_kernel(p, flashd::KernelKind::reference, {});
    j["error_vs_fp64_reference"] = flashd::to_json(flashd::compare_outputs(run.outputs, ref.outputs));
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

// --- compare ----------------------------------------------------------------

int cmd_compare(const std::string& a_path, const std::string& b_path, double tol,
                const std::string& metric, bool per_query) {
  const auto a = read_outputs(a_path);
  const auto b = read_outputs(b_path);
  flashd::ErrorReport rep;
  try {
    rep = flashd::compare_outputs(a, b);
  } catch (const std::invalid_argument& e) {
    std::cerr << "compare: " << e.what() << '\n';
    return kExitShape;
  }
  const double measured = metric == "componentwise" ? rep.max_rel : rep.max_norm_rel;
  const bool pass = !rep.has_nonfinite && measured <= tol;
  json j = flashd::to_json(rep, per_query);
  j["metric"] = metric;
  j["tol"] = tol;
  j["pass"] = pass;
  std::cout << j.dump(2) << '\n';
  return pass ? 0 : kExitTolerance;
}

// --- fit-pwl ----------------------------------------------------------------

int cmd_fit_pwl(const std::string& function, std::optional<double> lo, std::optional<double> hi,
                int segments, const std::string& objective, const std::string& out) {
  std::function<double(double)> f;
  double dlo = 0.0;
  double dhi = 0.0;
  if (function == "sigmoid") {
    f = flashd::sigmoid_exact;
    dlo = flashd::kSigmoidPwlLo;
    dhi = flashd::kSigmoidPwlHi;
  } else {
    f = [](double w) { return std::log(w); };
    dlo = flashd::kLnPwlLo;
    dhi = flashd::kLnPwlHi;
  }
  dlo = lo.value_or(dlo);
  dhi = hi.value_or(dhi);
  if (function == "ln" && !(dlo > 0.0)) throw UsageError("ln domain must be positive");
  if (!(dlo < dhi)) throw UsageError("domain lo must be below hi");
  const auto obj = objective == "lsq" ? flashd::PwlObjective::lsq : flashd::PwlObjective::maxerr;
  const auto t = flashd::fit_pwl(f, dlo, dhi, segments, obj, function);
  json j = {{"function", t.function},
            {"domain", {t.domain_lo, t.domain_hi}},
            {"breakpoints", t.breakpoints},
            {"slopes", t.slopes},
            {"intercepts", t.intercepts},
            {"max_abs_error", t.max_abs_error},
            {"objective", objective}};
  const std::string text = j.dump(2);
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw flashd::TensorIoError(flashd::TensorIoErrc::io_failure, "cannot open " + out);
    os << text << '\n';
  }
  std::cout << text << '\n';
  return 0;
}

// --- sweep ------------------------------------------------------------------

struct SweepFlags {
  std::vector<std::string> kernels{"reference", "alg1", "alg2", "flashd"};
  std::vector<std::string> precisions{"fp64", "bf16", "fp8e4m3"};
  std::vector<std::size_t> dims{16, 64, 256};
  std::vector<std::string> skips{"off"};
  std::string out;
};

struct SweepCell {
  std::string kernel;
  std::string precision;
  std::size_t d;
  std::string skip;
};

int cmd_sweep(GenFlags g, const KernelFlags& kf, const SweepFlags& sf) {
  std::vector<SweepCell> cells;
  for (const auto& k : sf.kernels)
    for (const auto& p : sf.precisions)
      for (auto d : sf.dims)
        for (const auto& s : sf.skips) cells.push_back({k, p, d, s});

  // One problem and fp64 reference per dimension, shared by every row.
  std::vector<AttnProblem> problems;
  std::vector<flashd::Outputs> references;
  for (auto d : sf.dims) {
    GenFlags gd = g;
    gd.d = d;
    problems.push_back(flashd::generate(gd.spec()));
    references.push_back(flashd::run_kernel_serial(problems.back(),
                                                   flashd::KernelKind::reference, {})
                             .outputs);
  }
  if (kf.nonlinear == "pwl") {
    flashd::default_sigmoid_table();
    flashd::default_ln_table();
  }

  std::vector<flashd::CsvRow> rows(cells.size());
  const auto ncells = static_cast<std::ptrdiff_t>(cells.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ci = 0; ci < ncells; ++ci) {
    const SweepCell& c = cells[static_cast<std::size_t>(ci)];
    const std::size_t di = static_cast<std::size_t>(
        std::find(sf.dims.begin(), sf.dims.end(), c.d) - sf.dims.begin());
    flashd::CsvRow& row = rows[static_cast<std::size_t>(ci)];
    row.kernel = c.kernel;
    row.precision = c.precision;
    row.n = g.n;
    row.d = c.d;
    row.skip = c.skip;
    row.mode = kf.mode;
    row.nonlinear = kf.nonlinear;
    const auto start = std::chrono::steady_clock::now();
    try {
      const auto kind = flashd::parse_kernel(c.kernel);
      const auto prec = flashd::parse_precision(c.precision);
      if (!kind || !prec) throw std::invalid_argument("unknown kernel or precision");
      const auto run =
          flashd::run_kernel_serial(problems[di], *kind, kernel_options(kf, *prec, c.skip == "on"));
      row.counts = run.counters.total();
      row.skips = run.skips;
      row.max_rel_err = flashd::compare_outputs(run.outputs, references[di]).max_norm_rel;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    row.runtime_ns = elapsed_ns(start);
  }

  std::ostringstream csv;
  csv << flashd::csv_header() << '\n';
  for (const auto& r : rows) csv << flashd::csv_line(r) << '\n';
  if (sf.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream os(sf.out);
    if (!os) throw flashd::TensorIoError(flashd::TensorIoErrc::io_failure, "cannot open " + sf.out);
    os << csv.str();
    json j = {{"out", sf.out},
              {"rows", rows.size()},
              {"note", "skip rates are measured on synthetic inputs"}};
    std::cout << j.dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FLASH-D attention kernel lab"};
  app.require_subcommand(1);

  GenFlags gen_flags;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "write a synthetic problem as q.atn/k.atn/v.atn");
  add_gen_flags(gen, gen_flags, true);
  gen->add_option("--out", gen_out, "output directory")->required();

  GenFlags run_gen;
  KernelFlags run_kernel;
  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "run one kernel and print its instrumentation record");
  add_gen_flags(run, run_gen, false);
  add_kernel_flags(run, run_kernel, true);
  run->add_option("--in", run_flags.in, "directory holding q.atn, k.atn, v.atn");
  run->add_option("--out", run_flags.out, "write outputs tensor here");
  run->add_option("--reps", run_flags.reps, "repetitions; best runtime is reported")
      ->check(CLI::PositiveNumber);
  run->add_flag("--serial", run_flags.serial, "use the single-threaded driver");
  run->add_flag("--vs-reference", run_flags.vs_reference,
                "also report error against the fp64 reference kernel");

  std::string cmp_a, cmp_b, cmp_metric = "normwise";
  double cmp_tol = 1e-12;
  bool cmp_per_query = false;
  auto* compare = app.add_subcommand("compare", "compare two output tensors");
  compare->add_option("a", cmp_a, "outputs under test")->required();
  compare->add_option("b", cmp_b, "baseline outputs")->required();
  compare->add_option("--tol", cmp_tol, "relative tolerance")->capture_default_str();
  compare->add_option("--metric", cmp_metric, "normwise|componentwise")
      ->check(CLI::IsMember({"normwise", "componentwise"}))
      ->capture_default_str();
  compare->add_flag("--per-query", cmp_per_query, "include per-query errors");

  std::string fit_fn = "sigmoid", fit_obj = "maxerr", fit_out;
  std::optional<double> fit_lo, fit_hi;
  int fit_segments = flashd::kDefaultPwlSegments;
  auto* fit = app.add_subcommand("fit-pwl", "fit a piecewise-linear table and print it as JSON");
  fit->add_option("--function", fit_fn, "sigmoid|ln")->check(CLI::IsMember({"sigmoid", "ln"}));
  fit->add_option("--lo", fit_lo, "domain lower bound");
  fit->add_option("--hi", fit_hi, "domain upper bound");
  fit->add_option("--segments", fit_segments, "number of segments")->check(CLI::PositiveNumber);
  fit->add_option("--objective", fit_obj, "maxerr|lsq")->check(CLI::IsMember({"maxerr", "lsq"}));
  fit->add_option("--out", fit_out, "also write the JSON here");

  GenFlags sweep_gen;
  sweep_gen.n = 256;
  KernelFlags sweep_kernel;
  SweepFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "kernels x precisions x d x skip grid, CSV output");
  add_gen_flags(sweep, sweep_gen, true);
  add_kernel_flags(sweep, sweep_kernel, false);
  sweep->add_option("--kernels", sweep_flags.kernels)->delimiter(',');
  sweep->add_option("--precisions", sweep_flags.precisions)->delimiter(',');
  sweep->add_option("--dims", sweep_flags.dims)->delimiter(',');
  sweep->add_option("--skips", sweep_flags.skips, "subset of off,on")
      ->delimiter(',')
      ->check(CLI::IsMember({"on", "off"}));
  sweep->add_option("--out", sweep_flags.out, "CSV path (default: standard output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_flags, gen_out);
    if (*run) {
      const bool have_gen = run->count("--seed") + run->count("--n") + run->count("--d") +
                                run->count("--queries") + run->count("--dist") >
                            0;
      return cmd_run(run_gen, have_gen, run_kernel, run_flags);
    }
    if (*compare) return cmd_compare(cmp_a, cmp_b, cmp_tol, cmp_metric, cmp_per_query);
    if (*fit) return cmd_fit_pwl(fit_fn, fit_lo, fit_hi, fit_segments, fit_obj, fit_out);
    if (*sweep) return cmd_sweep(sweep_gen, sweep_kernel, sweep_flags);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const flashd::TensorIoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}
