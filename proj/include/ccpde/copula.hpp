#pragma once

// Bivariate Gaussian copula: density, conditional h-function and the
// driver-derivative of the density (the Pi entry), with its analytic partials.

#include <cmath>
#include <string>

#include "errors.hpp"
#include "normal.hpp"

namespace ccpde {

/// Clamp applied to correlations before they reach the copula formulas.
inline constexpr double kCorrEps = 1e-6;

/// A value in the closed unit interval.
class Prob {
 public:
  explicit Prob(double value) : value_(value) {
    if (std::isnan(value) || value < 0.0 || value > 1.0)
      throw ContractError("Prob: value " + std::to_string(value) + " outside [0, 1]");
  }
  double value() const { return value_; }

 private:
  double value_;
};

/// A correlation coefficient; raw inputs outside [-1, 1] are rejected.
class Corr {
 public:
  explicit Corr(double value) : value_(value) {
    if (std::isnan(value) || value < -1.0 || value > 1.0)
      throw ContractError("Corr: value " + std::to_string(value) + " outside [-1, 1]");
  }
  double value() const { return value_; }
  double clamped() const {
    constexpr double bound = 1.0 - kCorrEps;
    return value_ > bound ? bound : (value_ < -bound ? -bound : value_);
  }
  bool near_singular() const { return std::abs(value_) >= 1.0 - kCorrEps; }

 private:
  double value_;
};

/// (u, v, rho) with the normal scores x1 = Phi^-1(u), x2 = Phi^-1(v) cached.
class CopulaPoint {
 public:
  CopulaPoint(Prob u, Prob v, Corr rho)
      : u_(u.value()), v_(v.value()), rho_(rho.clamped()), near_singular_(rho.near_singular()) {
    const QuantileResult q1 = std_normal_quantile_checked(u_);
    const QuantileResult q2 = std_normal_quantile_checked(v_);
    x1_ = q1.x;
    x2_ = q2.x;
    clamped_ = q1.clamped || q2.clamped;
  }
  CopulaPoint(double u, double v, double rho) : CopulaPoint(Prob(u), Prob(v), Corr(rho)) {}

  double u() const { return u_; }
  double v() const { return v_; }
  double rho() const { return rho_; }
  double x1() const { return x1_; }
  double x2() const { return x2_; }
  /// u or v had to be clamped away from {0, 1}.
  bool clamped() const { return clamped_; }
  /// |rho| sits at the clamp boundary; values are computed but ill-conditioned.
  bool near_singular() const { return near_singular_; }

 private:
  double u_, v_, rho_;
  double x1_ = 0.0, x2_ = 0.0;
  bool clamped_ = false;
  bool near_singular_ = false;
};

inline double copula_density(const CopulaPoint& p) {
  const double r = p.rho(), x1 = p.x1(), x2 = p.x2();
  const double s = 1.0 - r * r;
  const double q = r * r * (x1 * x1 + x2 * x2) - 2.0 * r * x1 * x2;
  return std::exp(-q / (2.0 * s)) / std::sqrt(s);
}

/// Conditional CDF P(U <= u | V = v) of the Gaussian copula.
inline double h_function(const CopulaPoint& p) {
  const double r = p.rho();
  return std_normal_cdf((p.x1() - r * p.x2()) / std::sqrt(1.0 - r * r));
}

/// Which derivative of the Pi entry to evaluate.
enum class Partial { du, dv, drho, du2, dv2, drho2, dudv };

inline const char* to_string(Partial which) {
  switch (which) {
    case Partial::du: return "du";
    case Partial::dv: return "dv";
    case Partial::drho: return "drho";
    case Partial::du2: return "du2";
    case Partial::dv2: return "dv2";
    case Partial::drho2: return "drho2";
    case Partial::dudv: return "dudv";
  }
  return "unknown";
}

/// The Pi entry g = dc/dv and all of its partials at one point.
/// du2 is the third-order d^3 c / dv du^2 entry of the Kronecker assembly.
struct PiDerivatives {
  double value = 0.0;
  double du = 0.0, dv = 0.0, drho = 0.0;
  double du2 = 0.0, dv2 = 0.0, drho2 = 0.0, dudv = 0.0;
};

/// Analytic evaluation of g(u, v, rho) = dc/dv and its partials.
///
/// Work happens in normal-score space. With L = ln c and A = dL/dx2 the entry is
/// g = c * A / phi(x2); derivatives in u and v pick up the Jacobians
/// dx/du = 1 / phi(x) and d(1/phi)/dx = x / phi.
inline PiDerivatives pi_derivatives(const CopulaPoint& p) {
  const double r = p.rho(), x1 = p.x1(), x2 = p.x2();
  const double r2 = r * r;
  const double s = 1.0 - r2;
  const double sum_sq = x1 * x1 + x2 * x2;
  const double q = r2 * sum_sq - 2.0 * r * x1 * x2;
  const double c = std::exp(-q / (2.0 * s)) / std::sqrt(s);
  const double phi1 = std_normal_pdf(x1);
  const double psi = 1.0 / std_normal_pdf(x2);
  const double cpsi = c * psi;

  // Log-density derivatives in (x1, x2).
  const double A = r * (x1 - r * x2) / s;   // dL/dx2
  const double L1 = r * (x2 - r * x1) / s;  // dL/dx1
  const double A1 = r / s;                  // dA/dx1
  const double A2 = -r2 / s;                // dA/dx2
  const double L11 = -r2 / s;

  // F(x1, x2) = c A psi and its x-derivatives.
  const double F1 = cpsi * (L1 * A + A1);
  const double F11 = cpsi * (L1 * L1 * A + 2.0 * L1 * A1 + L11 * A);
  const double B = A * A + A2 + x2 * A;
  const double F2 = cpsi * B;
  const double B1 = 2.0 * A * A1 + x2 * A1;
  const double B2 = 2.0 * A * A2 + A + x2 * A2;
  const double F22 = cpsi * ((A + x2) * B + B2);
  const double F12 = cpsi * (L1 * B + B1);

  // Correlation derivatives at fixed (x1, x2).
  const double q_r = 2.0 * r * sum_sq - 2.0 * x1 * x2;
  const double q_rr = 2.0 * sum_sq;
  const double L_r = r / s - q_r / (2.0 * s) - r * q / (s * s);
  const double L_rr = (1.0 + r2) / (s * s) - q_rr / (2.0 * s) - r * q_r / (s * s) -
                      (q + r * q_r) / (s * s) - 4.0 * r2 * q / (s * s * s);
  const double N = x1 * (1.0 + r2) - 2.0 * r * x2;
  const double A_r = N / (s * s);
  const double A_rr = (2.0 * r * x1 - 2.0 * x2) / (s * s) + 4.0 * r * N / (s * s * s);

  PiDerivatives out;
  out.value = cpsi * A;
  out.du = F1 / phi1;
  out.du2 = (F11 + x1 * F1) / (phi1 * phi1);
  out.dv = F2 * psi;
  out.dv2 = (F22 + x2 * F2) * psi * psi;
  out.dudv = F12 * psi / phi1;
  out.drho = cpsi * (L_r * A + A_r);
  out.drho2 = cpsi * (L_r * L_r * A + 2.0 * L_r * A_r + L_rr * A + A_rr);
  return out;
}

/// Signed dc/dv of the copula density: -c * rho * (rho x2 - x1) / ((1 - rho^2) phi(x2)).
inline double pi_entry(const CopulaPoint& p) {
  const double r = p.rho();
  return -copula_density(p) * r * (r * p.x2() - p.x1()) /
         ((1.0 - r * r) * std_normal_pdf(p.x2()));
}

inline double partials(const CopulaPoint& p, Partial which) {
  const PiDerivatives d = pi_derivatives(p);
  switch (which) {
    case Partial::du: return d.du;
    case Partial::dv: return d.dv;
    case Partial::drho: return d.drho;
    case Partial::du2: return d.du2;
    case Partial::dv2: return d.dv2;
    case Partial::drho2: return d.drho2;
    case Partial::dudv: return d.dudv;
  }
  throw ContractError("partials: unsupported derivative selector");
}

}  // namespace ccpde
