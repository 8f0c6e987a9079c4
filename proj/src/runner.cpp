#include <algorithm>
#include <exception>
#include <stdexcept>

#include "flashd/kernels.hpp"

namespace flashd {

AttnProblem round_problem(const AttnProblem& p, Precision prec) {
  AttnProblem r = p;
  if (prec == Precision::fp64) return r;
  for (auto* vec : {&r.q, &r.k, &r.v}) {
    for (double& x : *vec) x = round_to_format(x, prec);
  }
  return r;
}

namespace {

struct QueryResult {
  KernelCounters counters;
  SkipStats skips;
};

QueryResult run_query(const AttnProblem& p, std::size_t qi, KernelKind kind,
                      const KernelOptions& opts, double* out) {
  QueryResult r;
  const Arith& a = opts.arith;
  const auto q = p.query(qi);
  std::vector<double> o;
  switch (kind) {
    case KernelKind::reference:
      o = reference_attention(p, qi, a, &r.counters);
      break;
    case KernelKind::alg1: {
      Alg1State st;
      for (std::size_t i = 0; i < p.n; ++i) {
        alg1_step(st, score(q, p.key(i), a, &r.counters.score), p.value(i), a, &r.counters);
      }
      o = std::move(st.o);
      break;
    }
    case KernelKind::alg2: {
      Alg2State st;
      for (std::size_t i = 0; i < p.n; ++i) {
        alg2_step(st, score(q, p.key(i), a, &r.counters.score), p.value(i), a, &r.counters);
      }
      o = alg2_finalize(st, a, &r.counters);
      break;
    }
    case KernelKind::flashd: {
      FlashDState st;
      st.mode = opts.mode;
      for (std::size_t i = 0; i < p.n; ++i) {
        const double s = score(q, p.key(i), a, &r.counters.score);
        switch (flashd_step(st, s, p.value(i), opts, &r.counters)) {
          case SkipEvent::low: ++r.skips.skipped_low; break;
          case SkipEvent::high: ++r.skips.skipped_high; break;
          case SkipEvent::none: break;
        }
      }
      o = std::move(st.o);
      break;
    }
  }
  r.skips.total_steps = p.n;
  std::copy(o.begin(), o.end(), out);
  return r;
}

KernelRun prepare(const AttnProblem& p, const KernelOptions& opts) {
  p.validate();
  opts.validate();
  if (opts.nonlinear == NonlinearKind::pwl) {
    // Fit the shared tables before any thread needs them.
    if (!opts.sigmoid_table) default_sigmoid_table();
    if (!opts.ln_table) default_ln_table();
  }
  KernelRun run;
  run.outputs.rows = p.queries;
  run.outputs.width = p.d;
  run.outputs.values.assign(p.queries * p.d, 0.0);
  return run;
}

void merge(KernelRun& run, const std::vector<QueryResult>& per_query) {
  for (const auto& r : per_query) {
    run.counters += r.counters;
    run.skips += r.skips;
  }
}

}  // namespace

KernelRun run_kernel(const AttnProblem& problem, KernelKind kind, const KernelOptions& opts) {
  KernelRun run = prepare(problem, opts);
  const AttnProblem p = round_problem(problem, opts.arith.precision);
  std::vector<QueryResult> per_query(p.queries);
  const auto nq = static_cast<std::ptrdiff_t>(p.queries);
  std::exception_ptr failure;
  // Each query owns its state and output row; K/V are shared read-only.
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t qi = 0; qi < nq; ++qi) {
    const auto i = static_cast<std::size_t>(qi);
    try {
      per_query[i] = run_query(p, i, kind, opts, run.outputs.row(i));
    } catch (...) {
#pragma omp critical(flashd_run_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  merge(run, per_query);
  return run;
}

KernelRun run_kernel_serial(const AttnProblem& problem, KernelKind kind,
                            const KernelOptions& opts) {
  KernelRun run = prepare(problem, opts);
  const AttnProblem p = round_problem(problem, opts.arith.precision);
  std::vector<QueryResult> per_query(p.queries);
  for (std::size_t i = 0; i < p.queries; ++i) {
    per_query[i] = run_query(p, i, kind, opts, run.outputs.row(i));
  }
  merge(run, per_query);
  return run;
}

}  // namespace flashd
