#include "flashd/nonlinear.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace flashd {

double sigmoid_exact(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double ln_exact(double w) {
  if (!(w > 0.0 && w <= 1.0)) {
    throw std::domain_error("ln_exact: weight outside (0, 1]");
  }
  return std::log(w);
}

double log_sigmoid_exact(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

namespace {

constexpr int kFitGridPoints = 2001;
constexpr int kLawsonSearchIterations = 40;
constexpr int kLawsonFinalIterations = 400;

struct Grid {
  std::vector<double> x;
  std::vector<double> y;
};

Grid sample(const std::function<double(double)>& f, double lo, double hi, int points) {
  Grid g;
  g.x.resize(points);
  g.y.resize(points);
  const double h = (hi - lo) / (points - 1);
  for (int i = 0; i < points; ++i) {
    g.x[i] = i + 1 == points ? hi : lo + h * i;
    g.y[i] = f(g.x[i]);
    if (!std::isfinite(g.y[i])) {
      throw std::invalid_argument("fit_pwl: function is not finite on the domain");
    }
  }
  return g;
}

// Weighted least-squares ordinates for fixed breakpoints. The hat-function
// Gram matrix is tridiagonal, solved with the Thomas algorithm.
std::vector<double> solve_ordinates(const std::vector<double>& bp, const Grid& g,
                                    const std::vector<double>& weight) {
  const std::size_t n = bp.size();
  std::vector<double> diag(n, 0.0), off(n, 0.0), rhs(n, 0.0);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < g.x.size(); ++i) {
    const double x = g.x[i];
    while (seg + 2 < n && x >= bp[seg + 1]) ++seg;
    const double t = (x - bp[seg]) / (bp[seg + 1] - bp[seg]);
    const double a = 1.0 - t;
    const double w = weight[i];
    diag[seg] += w * a * a;
    diag[seg + 1] += w * t * t;
    off[seg] += w * a * t;
    rhs[seg] += w * a * g.y[i];
    rhs[seg + 1] += w * t * g.y[i];
  }
  double scale = 0.0;
  for (double d : diag) scale = std::max(scale, d);
  for (double& d : diag) d += 1e-14 * scale;

  // Forward sweep.
  std::vector<double> c(n, 0.0), r(n, 0.0);
  c[0] = off[0] / diag[0];
  r[0] = rhs[0] / diag[0];
  for (std::size_t j = 1; j < n; ++j) {
    const double denom = diag[j] - off[j - 1] * c[j - 1];
    c[j] = j + 1 < n ? off[j] / denom : 0.0;
    r[j] = (rhs[j] - off[j - 1] * r[j - 1]) / denom;
  }
  std::vector<double> y(n);
  y[n - 1] = r[n - 1];
  for (std::size_t j = n - 1; j-- > 0;) y[j] = r[j] - c[j] * y[j + 1];
  return y;
}

void residuals(const std::vector<double>& bp, const std::vector<double>& ord, const Grid& g,
               std::vector<double>& out) {
  out.resize(g.x.size());
  std::size_t seg = 0;
  for (std::size_t i = 0; i < g.x.size(); ++i) {
    const double x = g.x[i];
    while (seg + 2 < bp.size() && x >= bp[seg + 1]) ++seg;
    const double t = (x - bp[seg]) / (bp[seg + 1] - bp[seg]);
    out[i] = g.y[i] - ((1.0 - t) * ord[seg] + t * ord[seg + 1]);
  }
}

struct Fit {
  std::vector<double> ordinates;
  double cost = std::numeric_limits<double>::infinity();
};

double max_abs(const std::vector<double>& res) {
  double m = 0.0;
  for (double e : res) m = std::max(m, std::fabs(e));
  return m;
}

// Least-squares ordinates for fixed breakpoints; cost is the sum of squares.
Fit fit_lsq(const std::vector<double>& bp, const Grid& g) {
  const std::vector<double> weight(g.x.size(), 1.0);
  std::vector<double> res;
  Fit fit;
  fit.ordinates = solve_ordinates(bp, g, weight);
  residuals(bp, fit.ordinates, g, res);
  fit.cost = 0.0;
  for (double e : res) fit.cost += e * e;
  return fit;
}

// Lawson's algorithm: reweighting by |residual| drives the weighted
// least-squares solution toward the minimax one. Cost is the max residual of
// the best iterate.
Fit fit_minimax(const std::vector<double>& bp, const Grid& g, int iterations) {
  std::vector<double> weight(g.x.size(), 1.0 / static_cast<double>(g.x.size()));
  std::vector<double> res;
  Fit best;
  const double floor = 1e-9 / static_cast<double>(weight.size());
  for (int it = 0; it < iterations; ++it) {
    auto ord = solve_ordinates(bp, g, weight);
    residuals(bp, ord, g, res);
    const double err = max_abs(res);
    if (err < best.cost) best = {std::move(ord), err};
    double total = 0.0;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] *= std::fabs(res[i]);
      total += weight[i];
    }
    if (!(total > 0.0)) break;
    for (double& w : weight) w = std::max(w / total, floor);
  }
  return best;
}

PwlTable make_table(std::string name, const std::vector<double>& bp,
                    const std::vector<double>& ord) {
  PwlTable t;
  t.function = std::move(name);
  t.breakpoints = bp;
  t.domain_lo = bp.front();
  t.domain_hi = bp.back();
  for (std::size_t j = 0; j + 1 < bp.size(); ++j) {
    const double slope = (ord[j + 1] - ord[j]) / (bp[j + 1] - bp[j]);
    t.slopes.push_back(slope);
    t.intercepts.push_back(ord[j] - slope * bp[j]);
  }
  return t;
}

std::size_t segment_of(const PwlTable& t, double x) {
  const auto first = t.breakpoints.begin() + 1;
  const auto last = t.breakpoints.end() - 1;
  return static_cast<std::size_t>(std::upper_bound(first, last, x) - first);
}

}  // namespace

PwlTable fit_pwl(const std::function<double(double)>& f, double domain_lo, double domain_hi,
                 int n_segments, PwlObjective objective, std::string name) {
  if (n_segments < 1) throw std::invalid_argument("fit_pwl: n_segments must be >= 1");
  if (!(domain_lo < domain_hi) || !std::isfinite(domain_lo) || !std::isfinite(domain_hi)) {
    throw std::invalid_argument("fit_pwl: invalid domain");
  }
  // Positive domains spanning several decades (ln near zero) are searched
  // and sampled in log coordinates as well, or the uniform grid never sees
  // the steep end.
  const bool logarithmic = domain_lo > 0.0 && domain_hi / domain_lo > 1e3;
  auto to_u = [&](double x) { return logarithmic ? std::log(x) : x; };
  auto from_u = [&](double u) { return logarithmic ? std::exp(u) : u; };
  const double u_lo = to_u(domain_lo);
  const double u_hi = to_u(domain_hi);

  Grid g = sample(f, domain_lo, domain_hi, kFitGridPoints);
  if (logarithmic) {
    const double h = (u_hi - u_lo) / (kFitGridPoints - 1);
    for (int i = 1; i + 1 < kFitGridPoints; ++i) {
      const double x = std::exp(u_lo + h * i);
      const double y = f(x);
      if (!std::isfinite(y)) throw std::invalid_argument("fit_pwl: function is not finite on the domain");
      g.x.push_back(x);
      g.y.push_back(y);
    }
    std::vector<std::size_t> order(g.x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return g.x[a] < g.x[b]; });
    Grid sorted;
    for (auto i : order) {
      sorted.x.push_back(g.x[i]);
      sorted.y.push_back(g.y[i]);
    }
    g = std::move(sorted);
  }

  const double spacing = (u_hi - u_lo) / (kFitGridPoints - 1);
  const double min_gap = 2.0 * spacing;

  std::vector<double> bp(n_segments + 1);
  for (int j = 0; j <= n_segments; ++j) {
    bp[j] = domain_lo + (domain_hi - domain_lo) * j / n_segments;
  }
  bp.front() = domain_lo;
  bp.back() = domain_hi;

  // Coordinate descent on the interior breakpoints: walk each one while the
  // cost improves, halve the step once a full pass stalls.
  auto descend = [&](const std::function<Fit(const std::vector<double>&)>& fit, double step,
                     double min_step) {
    Fit best = fit(bp);
    while (step >= min_step && best.cost > 0.0) {
      bool improved = false;
      for (int j = 1; j < n_segments; ++j) {
        for (double dir : {-1.0, 1.0}) {
          for (;;) {
            const double cand_u = to_u(bp[j]) + dir * step;
            if (cand_u <= to_u(bp[j - 1]) + min_gap || cand_u >= to_u(bp[j + 1]) - min_gap) break;
            const double saved = bp[j];
            bp[j] = from_u(cand_u);
            Fit trial = fit(bp);
            if (trial.cost < best.cost * (1.0 - 1e-12)) {
              best = std::move(trial);
              improved = true;
            } else {
              bp[j] = saved;
              break;
            }
          }
        }
      }
      if (!improved) step /= 2.0;
    }
    return best;
  };

  // The least-squares landscape is smooth, so it places the breakpoints
  // first; the minimax objective then refines them locally.
  Fit best = descend([&](const auto& b) { return fit_lsq(b, g); },
                     (u_hi - u_lo) / n_segments / 2.0, spacing / 4.0);
  if (objective == PwlObjective::maxerr) {
    descend([&](const auto& b) { return fit_minimax(b, g, kLawsonSearchIterations); },
            16.0 * spacing, spacing / 2.0);
    best = fit_minimax(bp, g, kLawsonFinalIterations);
  }

  PwlTable t = make_table(std::move(name), bp, best.ordinates);
  t.max_abs_error = pwl_max_abs_error(t, f);
  return t;
}

double eval_pwl(const PwlTable& t, double x) {
  if (!(x >= t.domain_lo && x <= t.domain_hi)) {
    throw std::domain_error("eval_pwl: argument outside table domain");
  }
  const std::size_t j = segment_of(t, x);
  return t.slopes[j] * x + t.intercepts[j];
}

double eval_pwl(const PwlTable& t, double x, const Arith& arith) {
  if (!(x >= t.domain_lo && x <= t.domain_hi)) {
    throw std::domain_error("eval_pwl: argument outside table domain");
  }
  const std::size_t j = segment_of(t, x);
  return arith.add(arith.mul(arith.r(t.slopes[j]), x), arith.r(t.intercepts[j]));
}

double pwl_max_abs_error(const PwlTable& t, const std::function<double(double)>& f, int points) {
  double worst = 0.0;
  const double h = (t.domain_hi - t.domain_lo) / (points - 1);
  for (int i = 0; i < points; ++i) {
    const double x = i + 1 == points ? t.domain_hi : t.domain_lo + h * i;
    worst = std::max(worst, std::fabs(f(x) - eval_pwl(t, x)));
  }
  return worst;
}

const PwlTable& default_sigmoid_table() {
  static const PwlTable table =
      fit_pwl(sigmoid_exact, kSigmoidPwlLo, kSigmoidPwlHi, kDefaultPwlSegments,
              PwlObjective::maxerr, "sigmoid");
  return table;
}

const PwlTable& default_ln_table() {
  static const PwlTable table =
      fit_pwl([](double w) { return std::log(w); }, kLnPwlLo, kLnPwlHi, kDefaultPwlSegments,
              PwlObjective::maxerr, "ln");
  return table;
}

}  // namespace flashd
