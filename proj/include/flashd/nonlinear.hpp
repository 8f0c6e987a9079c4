#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flashd/precision.hpp"

namespace flashd {

// Numerically stable scalar nonlinearities. None of them overflows for any
// finite input.

/// Logistic sigmoid, branching on sign so the exponential argument is <= 0.
double sigmoid_exact(double x);

/// Natural log restricted to weights, 0 < w <= 1. Throws std::domain_error
/// outside that range.
double ln_exact(double w);

/// ln(sigmoid(x)) == -softplus(-x); finite for every finite x.
double log_sigmoid_exact(double x);

enum class PwlObjective { maxerr, lsq };

/// Continuous piecewise-linear approximation. Segment j covers
/// [breakpoints[j], breakpoints[j+1]); the last segment is closed.
struct PwlTable {
  std::string function;
  std::vector<double> breakpoints;
  std::vector<double> slopes;
  std::vector<double> intercepts;
  double domain_lo = 0.0;
  double domain_hi = 0.0;
  /// Max |f - pwl| over the 10,001-point uniform validation grid.
  double max_abs_error = 0.0;

  std::size_t segments() const { return slopes.size(); }
};

inline constexpr int kDefaultPwlSegments = 8;
inline constexpr int kPwlValidationPoints = 10001;

/// Fit a continuous PWL with free breakpoints. Ordinates at the breakpoints
/// are solved on a dense grid (least squares, or Lawson-reweighted least
/// squares for the minimax objective); interior breakpoints are then moved by
/// coordinate descent starting from uniform spacing.
/// Throws std::invalid_argument for bad arguments or non-finite f values.
PwlTable fit_pwl(const std::function<double(double)>& f, double domain_lo, double domain_hi,
                 int n_segments = kDefaultPwlSegments,
                 PwlObjective objective = PwlObjective::maxerr, std::string name = {});

/// Throws std::domain_error when x lies outside [domain_lo, domain_hi].
double eval_pwl(const PwlTable& t, double x);

/// Same segment lookup, with coefficients, the product and the sum each
/// rounded into the datapath precision.
double eval_pwl(const PwlTable& t, double x, const Arith& arith);

/// Max |f - t| over a uniform grid of `points` points on the table domain.
double pwl_max_abs_error(const PwlTable& t, const std::function<double(double)>& f,
                         int points = kPwlValidationPoints);

// Domains of the hardware tables used by the FLASH-D kernel.
inline constexpr double kSigmoidPwlLo = -6.0;
inline constexpr double kSigmoidPwlHi = 11.0;
inline constexpr double kLnPwlLo = 0x1p-24;
inline constexpr double kLnPwlHi = 1.0;

/// 8-segment sigmoid table on [-6, 11]; fitted once and cached.
const PwlTable& default_sigmoid_table();
/// 8-segment ln table on [2^-24, 1]; fitted once and cached.
const PwlTable& default_ln_table();

}  // namespace flashd
