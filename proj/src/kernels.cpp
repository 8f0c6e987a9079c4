#include "flashd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace flashd {

void AttnProblem::validate() const {
  if (d == 0 || n == 0) throw std::invalid_argument("AttnProblem: N and d must be >= 1");
  if (q.size() != queries * d) throw std::invalid_argument("AttnProblem: query size mismatch");
  if (k.size() != n * d) throw std::invalid_argument("AttnProblem: key size mismatch");
  if (v.size() != n * d) throw std::invalid_argument("AttnProblem: value size mismatch");
}

std::string_view to_string(KernelKind k) {
  switch (k) {
    case KernelKind::reference: return "reference";
    case KernelKind::alg1: return "alg1";
    case KernelKind::alg2: return "alg2";
    case KernelKind::flashd: return "flashd";
  }
  return "unknown";
}

std::string_view to_string(FlashDMode m) { return m == FlashDMode::paper ? "paper" : "log"; }

std::string_view to_string(NonlinearKind n) { return n == NonlinearKind::exact ? "exact" : "pwl"; }

std::optional<KernelKind> parse_kernel(std::string_view s) {
  if (s == "reference") return KernelKind::reference;
  if (s == "alg1") return KernelKind::alg1;
  if (s == "alg2") return KernelKind::alg2;
  if (s == "flashd") return KernelKind::flashd;
  return std::nullopt;
}

std::optional<FlashDMode> parse_mode(std::string_view s) {
  if (s == "paper") return FlashDMode::paper;
  if (s == "log") return FlashDMode::log_domain;
  return std::nullopt;
}

std::optional<NonlinearKind> parse_nonlinear(std::string_view s) {
  if (s == "exact") return NonlinearKind::exact;
  if (s == "pwl") return NonlinearKind::pwl;
  return std::nullopt;
}

double default_weight_floor(Precision p, NonlinearKind nonlinear) {
  double floor = std::numeric_limits<double>::min();
  switch (p) {
    case Precision::bf16: floor = min_subnormal(kBf16); break;
    case Precision::fp8e4m3: floor = min_subnormal(kFp8E4M3); break;
    case Precision::fp64: break;
  }
  return nonlinear == NonlinearKind::pwl ? std::max(floor, kLnPwlLo) : floor;
}

std::string_view to_string(SkipCriterion c) {
  return c == SkipCriterion::difference ? "difference" : "argument";
}

std::optional<SkipCriterion> parse_skip_criterion(std::string_view s) {
  if (s == "difference") return SkipCriterion::difference;
  if (s == "argument") return SkipCriterion::argument;
  return std::nullopt;
}

double KernelOptions::skip_floor() const { return std::max(kSkipWeight, w_min()); }

void KernelOptions::validate() const {
  if (skip.enabled && !(skip.lo < skip.hi)) {
    throw std::invalid_argument("SkipConfig: lo must be below hi");
  }
  if (mode == FlashDMode::log_domain && nonlinear == NonlinearKind::pwl) {
    throw std::invalid_argument("log mode carries ln w exactly; it has no PWL variant");
  }
  const double floor = w_min();
  if (!(floor > 0.0 && floor < 1.0) || arith.r(floor) != floor) {
    throw std::invalid_argument("weight floor must be a representable value in (0, 1)");
  }
}

double score(std::span<const double> q, std::span<const double> k, const Arith& arith,
             OpCounts* counts) {
  if (q.size() != k.size()) throw std::invalid_argument("score: length mismatch");
  if (counts) {
    counts->mul += q.size();
    counts->add += q.empty() ? 0 : q.size() - 1;
    counts->vec_loads += k.size();
  }
  if (q.empty()) return 0.0;
  if (arith.wide_accumulate) {
    double acc = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) acc += q[j] * k[j];
    return arith.r(acc);
  }
  double acc = arith.mul(q[0], k[0]);
  for (std::size_t j = 1; j < q.size(); ++j) acc = arith.add(acc, arith.mul(q[j], k[j]));
  return acc;
}

namespace {

double exp_r(const Arith& a, double x) { return a.r(std::exp(x)); }

}  // namespace

std::vector<double> reference_attention(const AttnProblem& p, std::size_t query,
                                        const Arith& arith, KernelCounters* counters) {
  OpCounts* sc = counters ? &counters->score : nullptr;
  const auto q = p.query(query);
  std::vector<double> s(p.n);
  for (std::size_t i = 0; i < p.n; ++i) s[i] = score(q, p.key(i), arith, sc);

  const double m = *std::max_element(s.begin(), s.end());
  std::vector<double> f(p.n);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.n; ++i) {
    f[i] = exp_r(arith, arith.sub(s[i], m));
    sum = i == 0 ? f[i] : arith.add(sum, f[i]);
  }
  for (double& fi : f) fi = arith.div(fi, sum);

  std::vector<double> o(p.d, 0.0);
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto v = p.value(i);
    for (std::size_t k = 0; k < p.d; ++k) {
      const double t = arith.mul(f[i], v[k]);
      o[k] = i == 0 ? t : arith.add(o[k], t);
    }
  }
  if (counters) {
    OpCounts& w = counters->weight;
    w.max_cmp += p.n - 1;
    w.sub += p.n;
    w.exp += p.n;
    w.add += p.n - 1;
    w.div += p.n;
    OpCounts& out = counters->output;
    out.mul += p.n * p.d;
    out.add += (p.n - 1) * p.d;
    out.vec_loads += p.n * p.d;
  }
  return o;
}

void alg1_step(Alg1State& st, double s, std::span<const double> v, const Arith& arith,
               KernelCounters* counters) {
  if (st.i == 0) {
    st.m = s;
    st.l = 1.0;
    st.o.assign(v.begin(), v.end());
    st.i = 1;
    if (counters) counters->output.vec_loads += v.size();
    return;
  }
  if (v.size() != st.o.size()) throw std::invalid_argument("alg1_step: value length mismatch");
  const double m_new = std::max(st.m, s);
  const double rescale = exp_r(arith, arith.sub(st.m, m_new));
  const double e = exp_r(arith, arith.sub(s, m_new));
  const double carried = arith.mul(st.l, rescale);
  const double l_new = arith.add(carried, e);
  const double keep = arith.div(carried, l_new);
  const double take = arith.div(e, l_new);
  for (std::size_t k = 0; k < v.size(); ++k) {
    st.o[k] = arith.add(arith.mul(st.o[k], keep), arith.mul(v[k], take));
  }
  st.m = m_new;
  st.l = l_new;
  ++st.i;
  if (counters) {
    OpCounts& w = counters->weight;
    w.max_cmp += 1;
    w.sub += 2;
    w.exp += 2;
    w.mul += 1;
    w.add += 1;
    w.div += 2;
    OpCounts& out = counters->output;
    out.mul += 2 * v.size();
    out.add += v.size();
    out.vec_loads += v.size();
  }
}

void alg2_step(Alg2State& st, double s, std::span<const double> v, const Arith& arith,
               KernelCounters* counters) {
  if (st.i == 0) {
    st.m = s;
    st.l = 1.0;
    st.o.assign(v.begin(), v.end());
    st.i = 1;
    if (counters) counters->output.vec_loads += v.size();
    return;
  }
  if (v.size() != st.o.size()) throw std::invalid_argument("alg2_step: value length mismatch");
  const double m_new = std::max(st.m, s);
  const double rescale = exp_r(arith, arith.sub(st.m, m_new));
  const double e = exp_r(arith, arith.sub(s, m_new));
  st.l = arith.add(arith.mul(st.l, rescale), e);
  for (std::size_t k = 0; k < v.size(); ++k) {
    st.o[k] = arith.add(arith.mul(st.o[k], rescale), arith.mul(v[k], e));
  }
  st.m = m_new;
  ++st.i;
  if (counters) {
    OpCounts& w = counters->weight;
    w.max_cmp += 1;
    w.sub += 2;
    w.exp += 2;
    w.mul += 1;
    w.add += 1;
    OpCounts& out = counters->output;
    out.mul += 2 * v.size();
    out.add += v.size();
    out.vec_loads += v.size();
  }
}

std::vector<double> alg2_finalize(const Alg2State& st, const Arith& arith,
                                  KernelCounters* counters) {
  if (st.i == 0) throw std::logic_error("alg2_finalize: no steps taken");
  std::vector<double> out(st.o.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = arith.div(st.o[k], st.l);
  if (counters) counters->output.div += out.size();
  return out;
}

SkipEvent flashd_step(FlashDState& st, double s, std::span<const double> v,
                      const KernelOptions& opts, KernelCounters* counters) {
  const Arith& a = opts.arith;
  if (st.i == 0) {
    st.w = 1.0;
    st.lnw = 0.0;
    st.o.assign(v.begin(), v.end());
    st.s_prev = s;
    st.i = 1;
    if (counters) counters->output.vec_loads += v.size();
    return SkipEvent::none;
  }
  if (v.size() != st.o.size()) throw std::invalid_argument("flashd_step: value length mismatch");

  const double w_min = opts.w_min();
  const double diff = a.sub(s, st.s_prev);
  st.s_prev = s;
  ++st.i;
  if (counters) counters->weight.sub += 1;

  const bool on_argument = opts.skip.criterion == SkipCriterion::argument;
  const double z = a.add(diff, st.lnw);
  const double tested = on_argument ? z : diff;
  if (opts.skip.enabled && tested < opts.skip.lo) {
    // o keeps its value and v is never read.
    if (on_argument) {
      // ln sigmoid(z) = z - ln(1 + e^z), and e^z < e^lo here. w is only
      // reported; the next step reads ln w.
      st.lnw = z;
      st.w = w_min;
      if (counters) counters->weight.add += 1;
    } else {
      st.w = opts.skip_floor();
      st.lnw = a.r(std::log(st.w));
    }
    return SkipEvent::low;
  }
  if (opts.skip.enabled && tested > opts.skip.hi) {
    st.w = 1.0;
    st.lnw = 0.0;
    st.o.assign(v.begin(), v.end());
    if (counters) {
      counters->output.vec_loads += v.size();
      if (on_argument) counters->weight.add += 1;
    }
    return SkipEvent::high;
  }

  if (counters) {
    counters->weight.add += 1;
    counters->weight.sigmoid_eval += 1;
  }

  double w = 0.0;
  if (st.mode == FlashDMode::log_domain) {
    // ln w is carried exactly through log-sigmoid; only the weight fed to
    // the output update is floored.
    st.lnw = a.r(log_sigmoid_exact(z));
    w = std::max(a.r(std::exp(st.lnw)), w_min);
    if (counters) counters->weight.exp += 1;
  } else {
    if (opts.nonlinear == NonlinearKind::pwl) {
      const PwlTable& sig = opts.sigmoid_table ? *opts.sigmoid_table : default_sigmoid_table();
      w = eval_pwl(sig, std::clamp(z, sig.domain_lo, sig.domain_hi), a);
    } else {
      w = a.r(sigmoid_exact(z));
    }
    w = std::clamp(w, w_min, 1.0);
    if (opts.nonlinear == NonlinearKind::pwl) {
      const PwlTable& lnt = opts.ln_table ? *opts.ln_table : default_ln_table();
      st.lnw = std::min(eval_pwl(lnt, std::clamp(w, lnt.domain_lo, lnt.domain_hi), a), 0.0);
    } else {
      st.lnw = a.r(ln_exact(w));
    }
    if (counters) counters->weight.ln += 1;
  }
  st.w = w;

  // o + (v - o) * w: one subtract, one multiply, one add per element.
  for (std::size_t k = 0; k < v.size(); ++k) {
    st.o[k] = a.add(st.o[k], a.mul(a.sub(v[k], st.o[k]), w));
  }
  if (counters) {
    OpCounts& out = counters->output;
    out.sub += v.size();
    out.mul += v.size();
    out.add += v.size();
    out.vec_loads += v.size();
  }
  return SkipEvent::none;
}

}  // namespace flashd
