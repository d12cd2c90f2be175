#pragma once

#include <cmath>
#include <numbers>

#include "errors.hpp"

namespace ccpde {

/// Clamp applied to uniforms before they reach a quantile transform.
inline constexpr double kProbEps = 1e-9;

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
}

inline double std_normal_cdf(double x) {
  if (!std::isfinite(x)) throw ContractError("std_normal_cdf: non-finite argument");
  return 0.5 * std::erfc(-x * (0.5 * std::numbers::sqrt2));
}

struct QuantileResult {
  double x = 0.0;
  bool clamped = false;  // input was moved into [kProbEps, 1 - kProbEps]
};

namespace detail {

// Acklam's rational approximation; relative error about 1.15e-9 before polishing.
inline double acklam_quantile(double p) {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  constexpr double p_high = 1.0 - p_low;

  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > p_high) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}


// Acklam's approximation refined by one Halley step against std_normal_cdf,
// which brings |cdf(x) - p| to the 1e-15 level. Requires 0 < p < 1.
inline double polished_quantile(double p) {
  double x = acklam_quantile(p);
  // Work with the smaller tail to keep the residual exact.
  const double e = (x < 0.0) ? std_normal_cdf(x) - p : -(std_normal_cdf(-x) - (1.0 - p));
  const double step = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - step / (1.0 + 0.5 * x * step);
}

inline void check_unit(double u) {
  if (std::isnan(u) || u < 0.0 || u > 1.0)
    throw ContractError("std_normal_quantile: argument outside [0, 1]");
}

}  // namespace detail

/// Inverse standard normal CDF under the copula clamping policy: u is moved
/// into [kProbEps, 1 - kProbEps] first and the move is reported.
inline QuantileResult std_normal_quantile_checked(double u) {
  detail::check_unit(u);
  QuantileResult out;
  double p = u;
  if (p < kProbEps) {
    p = kProbEps;
    out.clamped = true;
  } else if (p > 1.0 - kProbEps) {
    p = 1.0 - kProbEps;
    out.clamped = true;
  }
  out.x = detail::polished_quantile(p);
  return out;
}

/// Inverse standard normal CDF on (0, 1). Only the endpoints 0 and 1 are
/// clamped, to kProbEps and 1 - kProbEps.
inline double std_normal_quantile(double u) {
  detail::check_unit(u);
  if (u == 0.0) u = kProbEps;
  if (u == 1.0) u = 1.0 - kProbEps;
  return detail::polished_quantile(u);
}

}  // namespace ccpde
