#pragma once

// The Pi matrix of pairwise copula driver-derivatives and the conditional
// portfolio probability P(p|D) = -w^T Pi D built from it.
//
// Pi_ij depends only on (u_i, d_j, rho_ij), so every derivative tensor of Pi is
// diagonal in its differentiation index and is stored as an n x m slice.

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "copula.hpp"
#include "errors.hpp"

namespace ccpde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct PortfolioSpec {
  VectorXd weights;

  explicit PortfolioSpec(VectorXd w) : weights(std::move(w)) {
    if (weights.size() < 1) throw ContractError("PortfolioSpec: need at least one constituent");
    if (!weights.allFinite()) throw ContractError("PortfolioSpec: non-finite weight");
  }
  static PortfolioSpec equal(Eigen::Index n) {
    if (n < 1) throw ContractError("PortfolioSpec: need at least one constituent");
    return PortfolioSpec(VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
  }
  Eigen::Index n() const { return weights.size(); }
};

/// PIT-transformed lag-1 driver values; each entry is a probability.
struct DriverState {
  VectorXd d;

  explicit DriverState(VectorXd values) : d(std::move(values)) {
    if (d.size() < 1) throw ContractError("DriverState: need at least one driver");
    for (Eigen::Index j = 0; j < d.size(); ++j) Prob{d(j)};
  }
  Eigen::Index m() const { return d.size(); }

  /// Jeffrey weights rescaled to sum to one. Off by default everywhere.
  DriverState normalized() const {
    const double total = d.sum();
    if (!(total > 0.0)) throw ContractError("DriverState: cannot normalize a zero vector");
    return DriverState(d / total);
  }
};

/// Constituent-driver correlations, n x m.
struct RhoMatrix {
  MatrixXd rho;

  explicit RhoMatrix(MatrixXd values) : rho(std::move(values)) {
    for (Eigen::Index i = 0; i < rho.rows(); ++i)
      for (Eigen::Index j = 0; j < rho.cols(); ++j) Corr{rho(i, j)};
  }
};

struct PiSystem {
  MatrixXd pi;
  MatrixXd dPi_da, dPi_dD, dPi_drho;
  MatrixXd d2Pi_da2, d2Pi_dD2, d2Pi_dadD, d2Pi_drho2;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> near_singular;

  Eigen::Index n() const { return pi.rows(); }
  Eigen::Index m() const { return pi.cols(); }
};

inline PiSystem build(const VectorXd& u, const DriverState& d, const RhoMatrix& rho) {
  const Eigen::Index n = u.size(), m = d.m();
  if (n < 1 || rho.rho.rows() != n || rho.rho.cols() != m)
    throw ContractError("build: dimension mismatch between u (" + std::to_string(n) +
                        "), d (" + std::to_string(m) + ") and rho (" +
                        std::to_string(rho.rho.rows()) + "x" + std::to_string(rho.rho.cols()) +
                        ")");
  PiSystem sys;
  for (MatrixXd* slice : {&sys.pi, &sys.dPi_da, &sys.dPi_dD, &sys.dPi_drho, &sys.d2Pi_da2,
                          &sys.d2Pi_dD2, &sys.d2Pi_dadD, &sys.d2Pi_drho2})
    slice->resize(n, m);
  sys.near_singular.resize(n, m);

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const Corr r(rho.rho(i, j));
      const CopulaPoint pt(Prob(u(i)), Prob(d.d(j)), r);
      const PiDerivatives g = pi_derivatives(pt);
      const double values[] = {g.value, g.du, g.dv, g.drho, g.du2, g.dv2, g.dudv, g.drho2};
      for (double v : values)
        if (!std::isfinite(v))
          throw NumericError("build: non-finite Pi entry at (" + std::to_string(i) + ", " +
                             std::to_string(j) + ")");
      sys.pi(i, j) = g.value;
      sys.dPi_da(i, j) = g.du;
      sys.dPi_dD(i, j) = g.dv;
      sys.dPi_drho(i, j) = g.drho;
      sys.d2Pi_da2(i, j) = g.du2;
      sys.d2Pi_dD2(i, j) = g.dv2;
      sys.d2Pi_dadD(i, j) = g.dudv;
      sys.d2Pi_drho2(i, j) = g.drho2;
      sys.near_singular(i, j) = r.near_singular();
    }
  }
  return sys;
}

inline void check_dims(const PortfolioSpec& ps, const PiSystem& sys, const DriverState& d) {
  if (ps.n() != sys.n() || d.m() != sys.m())
    throw ContractError("dimension mismatch: weights " + std::to_string(ps.n()) + ", drivers " +
                        std::to_string(d.m()) + ", system " + std::to_string(sys.n()) + "x" +
                        std::to_string(sys.m()));
}

/// P(p|D) = -w^T Pi d. This minus is the only sign source; Pi holds the signed dc/dv.
inline double conditional_prob(const PortfolioSpec& ps, const PiSystem& sys, const DriverState& d) {
  check_dims(ps, sys, d);
  return -ps.weights.dot(sys.pi * d.d);
}

/// Term-by-term double sum of w_i d_j times the closed-form dc/dv expression,
/// evaluated without going through pi_entry. Equals +w^T Pi d, so
/// conditional_prob == -conditional_prob_double_sum.
inline double conditional_prob_double_sum(const PortfolioSpec& ps, const VectorXd& u,
                                          const DriverState& d, const RhoMatrix& rho) {
  const Eigen::Index n = u.size(), m = d.m();
  if (ps.n() != n || rho.rho.rows() != n || rho.rho.cols() != m)
    throw ContractError("conditional_prob_double_sum: dimension mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x1 = std_normal_quantile(u(i));
    for (Eigen::Index j = 0; j < m; ++j) {
      const double x2 = std_normal_quantile(d.d(j));
      const double r = Corr(rho.rho(i, j)).clamped();
      const double s = 1.0 - r * r;
      const double e =
          std::exp(-(r * r * (x1 * x1 + x2 * x2) - 2.0 * r * x1 * x2) / (2.0 * s));
      const double dphi = std_normal_pdf(x2);
      const double bracket = 2.0 * r * r * x2 / dphi - 2.0 * r * x1 / dphi;
      total += -ps.weights(i) * d.d(j) * e * bracket / (2.0 * std::pow(s, 1.5));
    }
  }
  return total;
}

/// First partials of P(p|D). dP_dp is the derivative along a common move of all
/// constituent arguments; drivers are exogenous to correlation (dD/drho = 0).
struct FirstPartials {
  double dP_dp = 0.0;
  VectorXd dP_dD;
  MatrixXd dP_drho;
};

inline FirstPartials first_partials(const PortfolioSpec& ps, const PiSystem& sys,
                                    const DriverState& d) {
  check_dims(ps, sys, d);
  const VectorXd& w = ps.weights;
  FirstPartials out;
  out.dP_dp = -w.dot(sys.dPi_da * d.d);
  out.dP_dD = -(sys.dPi_dD.array().rowwise() * d.d.transpose().array() + sys.pi.array())
                   .matrix()
                   .transpose() *
              w;
  const Eigen::ArrayXXd weighted = sys.dPi_drho.array().colwise() * w.array();
  out.dP_drho = -(weighted.rowwise() * d.d.transpose().array()).matrix();
  return out;
}

/// Second partials. Mixed constituent terms vanish because Pi_ij only sees a_i,
/// and the driver Hessian is diagonal for the same reason, so dD2 is an m-vector.
struct SecondPartials {
  double d2P_dp2 = 0.0;
  VectorXd d2P_dD2;
  VectorXd d2P_dpdD;
  MatrixXd d2P_drho2;
};

inline SecondPartials second_partials(const PortfolioSpec& ps, const PiSystem& sys,
                                      const DriverState& d) {
  check_dims(ps, sys, d);
  const VectorXd& w = ps.weights;
  const auto drow = d.d.transpose().array();
  SecondPartials out;
  out.d2P_dp2 = -w.dot(sys.d2Pi_da2 * d.d);
  out.d2P_dD2 =
      -((sys.d2Pi_dD2.array().rowwise() * drow) + 2.0 * sys.dPi_dD.array()).matrix().transpose() *
      w;
  out.d2P_dpdD =
      -(sys.dPi_da.array() + sys.d2Pi_dadD.array().rowwise() * drow).matrix().transpose() * w;
  const Eigen::ArrayXXd weighted = sys.d2Pi_drho2.array().colwise() * w.array();
  out.d2P_drho2 = -(weighted.rowwise() * drow).matrix();
  return out;
}

/// D^T (d^2 Pi / da^2) (Sigma_p w): entry j is d_j * sum_i d^3C(a_i, D_j)/dD_j da_i^2 * x_i.
/// Only the block-diagonal third-order entries are nonzero, so no dense tensor is formed.
inline VectorXd kron_assemble(const PortfolioSpec& ps, const PiSystem& sys, const DriverState& d,
                              const VectorXd& sigma_p_w) {
  check_dims(ps, sys, d);
  if (sigma_p_w.size() != sys.n())
    throw ContractError("kron_assemble: Sigma_p w has length " +
                        std::to_string(sigma_p_w.size()) + ", expected " +
                        std::to_string(sys.n()));
  return (sys.d2Pi_da2.transpose() * sigma_p_w).cwiseProduct(d.d);
}

}  // namespace ccpde
