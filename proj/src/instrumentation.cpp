#include "flashd/instrumentation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace flashd {

OpCounts& OpCounts::operator+=(const OpCounts& o) {
  mul += o.mul;
  add += o.add;
  sub += o.sub;
  div += o.div;
  exp += o.exp;
  ln += o.ln;
  sigmoid_eval += o.sigmoid_eval;
  max_cmp += o.max_cmp;
  vec_loads += o.vec_loads;
  return *this;
}

OpCounts operator-(const OpCounts& a, const OpCounts& b) {
  OpCounts r;
  r.mul = a.mul - b.mul;
  r.add = a.add - b.add;
  r.sub = a.sub - b.sub;
  r.div = a.div - b.div;
  r.exp = a.exp - b.exp;
  r.ln = a.ln - b.ln;
  r.sigmoid_eval = a.sigmoid_eval - b.sigmoid_eval;
  r.max_cmp = a.max_cmp - b.max_cmp;
  r.vec_loads = a.vec_loads - b.vec_loads;
  return r;
}

KernelCounters& KernelCounters::operator+=(const KernelCounters& o) {
  score += o.score;
  weight += o.weight;
  output += o.output;
  return *this;
}

SkipStats& SkipStats::operator+=(const SkipStats& o) {
  total_steps += o.total_steps;
  skipped_low += o.skipped_low;
  skipped_high += o.skipped_high;
  return *this;
}

ErrorReport compare_outputs(const Outputs& a, const Outputs& b) {
  if (a.rows != b.rows || a.width != b.width || a.values.size() != b.values.size()) {
    throw std::invalid_argument("compare_outputs: shape mismatch");
  }
  ErrorReport rep;
  rep.per_query.resize(a.rows);
  double rel_sum = 0.0;
  for (std::size_t q = 0; q < a.rows; ++q) {
    QueryError& qe = rep.per_query[q];
    double ref_norm = 0.0;
    bool nonfinite = false;
    for (std::size_t k = 0; k < a.width; ++k) {
      const double x = a.row(q)[k];
      const double y = b.row(q)[k];
      if (!std::isfinite(x) || !std::isfinite(y)) nonfinite = true;
      const double abs_err = std::fabs(x - y);
      const double rel = abs_err / std::max(std::fabs(y), 1e-30);
      qe.max_abs = std::max(qe.max_abs, abs_err);
      qe.max_rel = std::max(qe.max_rel, rel);
      ref_norm = std::max(ref_norm, std::fabs(y));
      rel_sum += rel;
    }
    qe.norm_rel = qe.max_abs / std::max(ref_norm, 1e-30);
    // NaN must not be swallowed by std::max.
    if (nonfinite) {
      rep.has_nonfinite = true;
      qe.max_abs = qe.max_rel = qe.norm_rel = std::numeric_limits<double>::infinity();
    }
    rep.max_abs = std::max(rep.max_abs, qe.max_abs);
    rep.max_rel = std::max(rep.max_rel, qe.max_rel);
    rep.max_norm_rel = std::max(rep.max_norm_rel, qe.norm_rel);
  }
  const std::size_t n = a.values.size();
  rep.mean_rel = n == 0 ? 0.0 : rel_sum / static_cast<double>(n);
  if (rep.has_nonfinite) rep.mean_rel = std::numeric_limits<double>::infinity();
  return rep;
}

RunSummary summarize_run(const std::string& kernel, const KernelCounters& counters,
                         const SkipStats& stats, std::size_t n, std::size_t d,
                         std::size_t queries) {
  RunSummary s;
  s.kernel = kernel;
  s.n = n;
  s.d = d;
  s.queries = queries;
  s.totals = counters.total();
  s.skips = stats;
  const std::uint64_t steps = static_cast<std::uint64_t>(n) * queries;
  if (steps > 0) {
    auto per = [steps](std::uint64_t v) { return v / steps; };
    const OpCounts& t = s.totals;
    s.per_step = {per(t.mul), per(t.add),          per(t.sub),     per(t.div),      per(t.exp),
                  per(t.ln),  per(t.sigmoid_eval), per(t.max_cmp), per(t.vec_loads)};
  }
  s.division_free = s.totals.div == 0;
  s.max_free = s.totals.max_cmp == 0;
  return s;
}

nlohmann::json to_json(const OpCounts& c) {
  return {{"mul", c.mul},       {"add", c.add},
          {"sub", c.sub},       {"div", c.div},
          {"exp", c.exp},       {"ln", c.ln},
          {"sigmoid_eval", c.sigmoid_eval}, {"max_cmp", c.max_cmp},
          {"vec_loads", c.vec_loads}};
}

nlohmann::json to_json(const SkipStats& s) {
  return {{"total_steps", s.total_steps},
          {"skipped_low", s.skipped_low},
          {"skipped_high", s.skipped_high},
          {"skip_rate", s.skip_rate()},
          {"note", "measured on synthetic inputs; not comparable to LLM skip rates"}};
}

nlohmann::json to_json(const ErrorReport& r, bool include_per_query) {
  nlohmann::json j = {{"max_abs", r.max_abs},
                      {"max_rel", r.max_rel},
                      {"mean_rel", r.mean_rel},
                      {"max_norm_rel", r.max_norm_rel},
                      {"has_nonfinite", r.has_nonfinite}};
  if (include_per_query) {
    auto& arr = j["per_query"] = nlohmann::json::array();
    for (const auto& q : r.per_query) {
      arr.push_back({{"max_abs", q.max_abs}, {"max_rel", q.max_rel}, {"norm_rel", q.norm_rel}});
    }
  }
  return j;
}

nlohmann::json to_json(const RunSummary& s) {
  return {{"kernel", s.kernel},
          {"n", s.n},
          {"d", s.d},
          {"queries", s.queries},
          {"counts", to_json(s.totals)},
          {"per_step", to_json(s.per_step)},
          {"skip", to_json(s.skips)},
          {"division_free", s.division_free},
          {"max_free", s.max_free}};
}

std::string csv_header() {
  return "kernel,precision,N,d,skip,mode,nonlinear,mul,add,sub,div,exp,max_cmp,vec_loads,"
         "skipped_low,skipped_high,max_rel_err,runtime_ns";
}

std::string csv_line(const CsvRow& r) {
  std::ostringstream os;
  os << r.kernel << ',' << r.precision << ',' << r.n << ',' << r.d << ',' << r.skip << ','
     << r.mode << ',' << r.nonlinear << ',';
  if (!r.error.empty()) {
    // Failed rows keep the column count; counters are left blank.
    os << ",,,,,,,,,error:" << r.error << ',' << r.runtime_ns;
    return os.str();
  }
  os << r.counts.mul << ',' << r.counts.add << ',' << r.counts.sub << ',' << r.counts.div << ','
     << r.counts.exp << ',' << r.counts.max_cmp << ',' << r.counts.vec_loads << ','
     << r.skips.skipped_low << ',' << r.skips.skipped_high << ',' << std::setprecision(17)
     << r.max_rel_err << ',' << r.runtime_ns;
  return os.str();
}

}  // namespace flashd
