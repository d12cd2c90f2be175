#pragma once

// Residuals of the conditional risk-neutral PDE system: the drift residual
// Delta (per driver), the no-Brownian condition (dPi/drho) D = 0, and the
// weight-factored linear system for Sigma_p w.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "pi_system.hpp"

namespace ccpde {

struct VolParams {
  double sigma_p = 0.0;  // portfolio volatility
  VectorXd Sigma_p;      // diagonal of the constituent variance matrix (may be empty)
  MatrixXd Sigma_D;      // driver covariance, m x m
  VectorXd mu_D;         // driver drifts, m
  VectorXd mu_rho, sigma_rho;  // correlation GBM parameters, n*m (row-major i*m + j)

  static VolParams zeros(Eigen::Index n, Eigen::Index m) {
    VolParams vp;
    vp.Sigma_p = VectorXd::Zero(n);
    vp.Sigma_D = MatrixXd::Zero(m, m);
    vp.mu_D = VectorXd::Zero(m);
    vp.mu_rho = VectorXd::Zero(n * m);
    vp.sigma_rho = VectorXd::Zero(n * m);
    return vp;
  }
};

/// How the scalar sigma_p^2 d2P/dp2 term is shared across the m driver equations.
enum class Broadcast { uniform, driver_proportional };

struct ResidualOptions {
  Broadcast broadcast = Broadcast::uniform;
};

struct ResidualReport {
  VectorXd delta;  // per-driver drift residual
  double delta_norm = 0.0;
  VectorXd brownian;  // per-constituent (dPi/drho) d
  double brownian_norm = 0.0;
  MatrixXd per_pair;  // w_i * R_ij; column sums reproduce delta
};

namespace detail {

inline double psd_tolerance(const MatrixXd& a) { return 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff()); }

}  // namespace detail

/// Principal (symmetric) square root of a symmetric PSD matrix.
inline MatrixXd principal_sqrt(const MatrixXd& a) {
  if (a.rows() != a.cols()) throw ContractError("principal_sqrt: matrix is not square");
  if (a.size() == 0) return a;
  if (!(a - a.transpose()).isZero(detail::psd_tolerance(a)))
    throw ContractError("principal_sqrt: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(a);
  const VectorXd lambda = eig.eigenvalues();
  if (lambda.minCoeff() < -detail::psd_tolerance(a))
    throw ContractError("Sigma_D is not positive semidefinite (eigenvalue " +
                        std::to_string(lambda.minCoeff()) + ")");
  const VectorXd root = lambda.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

inline VectorXd broadcast_weights(const DriverState& d, Broadcast mode) {
  const Eigen::Index m = d.m();
  if (mode == Broadcast::driver_proportional) {
    const double total = d.d.cwiseAbs().sum();
    if (total > 0.0) return d.d.cwiseAbs() / total;
  }
  return VectorXd::Constant(m, 1.0 / static_cast<double>(m));
}

inline void check_vol_params(const VolParams& vp, Eigen::Index m) {
  if (vp.Sigma_D.rows() != m || vp.Sigma_D.cols() != m || vp.mu_D.size() != m)
    throw ContractError("VolParams: driver parameters do not match m = " + std::to_string(m));
  if (!(vp.sigma_p >= 0.0)) throw ContractError("VolParams: sigma_p must be >= 0");
}

/// Drift residual from the second partials of P(p|D):
///   Delta_j = 1/2 (beta_j sigma_p^2 P_pp + (Sigma_D P_DD)_j) + sigma_p (S P_pD)_j - mu_D,j P
/// where S is the principal square root of Sigma_D and beta the broadcast weights.
inline VectorXd drift_residual(const PortfolioSpec& ps, const PiSystem& sys, const DriverState& d,
                               const VolParams& vp, const ResidualOptions& opt = {}) {
  check_dims(ps, sys, d);
  check_vol_params(vp, d.m());
  const MatrixXd S = principal_sqrt(vp.Sigma_D);
  const SecondPartials sp = second_partials(ps, sys, d);
  const double P = conditional_prob(ps, sys, d);
  const VectorXd beta = broadcast_weights(d, opt.broadcast);
  return 0.5 * (beta * (vp.sigma_p * vp.sigma_p * sp.d2P_dp2) + vp.Sigma_D * sp.d2P_dD2) +
         vp.sigma_p * (S * sp.d2P_dpdD) - vp.mu_D * P;
}

/// The same residual before contraction with w: an n x m matrix R with
/// Delta = R^T w. Built directly from the Pi slices, independent of second_partials.
inline MatrixXd weightless_pde_residual(const PiSystem& sys, const DriverState& d,
                                        const VolParams& vp, const ResidualOptions& opt = {}) {
  const Eigen::Index n = sys.n(), m = sys.m();
  if (d.m() != m) throw ContractError("weightless_pde_residual: driver count mismatch");
  check_vol_params(vp, m);
  const MatrixXd S = principal_sqrt(vp.Sigma_D);
  const VectorXd beta = broadcast_weights(d, opt.broadcast);
  const double var_p = vp.sigma_p * vp.sigma_p;

  MatrixXd R(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    double curvature_a = 0.0, level = 0.0;
    VectorXd curvature_D(m), mixed(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      curvature_a += sys.d2Pi_da2(i, k) * d.d(k);
      level += sys.pi(i, k) * d.d(k);
      curvature_D(k) = sys.d2Pi_dD2(i, k) * d.d(k) + 2.0 * sys.dPi_dD(i, k);
      mixed(k) = sys.dPi_da(i, k) + sys.d2Pi_dadD(i, k) * d.d(k);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      double diffusion = 0.5 * beta(j) * var_p * curvature_a;
      for (Eigen::Index k = 0; k < m; ++k)
        diffusion += 0.5 * vp.Sigma_D(j, k) * curvature_D(k) + vp.sigma_p * S(j, k) * mixed(k);
      R(i, j) = -diffusion + vp.mu_D(j) * level;
    }
  }
  return R;
}

/// Residual of the no-Brownian condition: one entry per constituent.
inline VectorXd brownian_condition_residual(const PortfolioSpec& ps, const PiSystem& sys,
                                            const DriverState& d) {
  check_dims(ps, sys, d);
  return sys.dPi_drho * d.d;
}

inline ResidualReport evaluate_residuals(const PortfolioSpec& ps, const PiSystem& sys,
                                         const DriverState& d, const VolParams& vp,
                                         const ResidualOptions& opt = {}) {
  ResidualReport rep;
  rep.delta = drift_residual(ps, sys, d, vp, opt);
  rep.delta_norm = rep.delta.norm();
  rep.brownian = brownian_condition_residual(ps, sys, d);
  rep.brownian_norm = rep.brownian.norm();
  rep.per_pair = weightless_pde_residual(sys, d, vp, opt).array().colwise() * ps.weights.array();
  return rep;
}

// ---------------------------------------------------------------------------
// Implied Sigma_p w.

/// One date's inputs to the weight-factored system.
struct ImpliedSnapshot {
  PiSystem sys;
  DriverState d;
  MatrixXd Sigma_D;
  VectorXd mu_D;
};

/// Stacked linear system A x + b = 0 in x = Sigma_p w, m rows per snapshot.
///   A_ji = 1/2 d_j d2Pi_da2_ij + sum_k S_jk (dPi_da_ik + d2Pi_dadD_ik d_k)
///   b_j  = 1/2 sum_k Sigma_D,jk sum_i (d2Pi_dD2_ik d_k + 2 dPi_dD_ik) - mu_D,j sum_i (Pi d)_i
struct ImpliedSystem {
  MatrixXd A;
  VectorXd b;
};

inline ImpliedSystem implied_system(const std::vector<ImpliedSnapshot>& snaps) {
  if (snaps.empty()) throw ContractError("implied_system: no snapshots");
  const Eigen::Index n = snaps.front().sys.n();
  Eigen::Index rows = 0;
  for (const auto& s : snaps) {
    if (s.sys.n() != n) throw ContractError("implied_system: constituent count differs");
    if (s.d.m() != s.sys.m() || s.Sigma_D.rows() != s.sys.m() || s.Sigma_D.cols() != s.sys.m() ||
        s.mu_D.size() != s.sys.m())
      throw ContractError("implied_system: driver dimensions differ");
    rows += s.sys.m();
  }
  ImpliedSystem out{MatrixXd::Zero(rows, n), VectorXd::Zero(rows)};
  const PortfolioSpec unit(VectorXd::Ones(n));
  Eigen::Index r0 = 0;
  for (const auto& s : snaps) {
    const Eigen::Index m = s.sys.m();
    const MatrixXd S = principal_sqrt(s.Sigma_D);
    const auto drow = s.d.d.transpose().array();
    const MatrixXd mixed = (s.sys.dPi_da.array() + s.sys.d2Pi_dadD.array().rowwise() * drow).matrix();
    const MatrixXd curvature_D =
        (s.sys.d2Pi_dD2.array().rowwise() * drow + 2.0 * s.sys.dPi_dD.array()).matrix();

    // kron_assemble is linear in x; its matrix has columns d_j d2Pi_da2_ij.
    MatrixXd curvature_a(m, n);
    for (Eigen::Index i = 0; i < n; ++i)
      curvature_a.col(i) = kron_assemble(unit, s.sys, s.d, VectorXd::Unit(n, i));

    out.A.middleRows(r0, m) = 0.5 * curvature_a + S * mixed.transpose();
    out.b.segment(r0, m) = 0.5 * s.Sigma_D * curvature_D.colwise().sum().transpose() -
                           s.mu_D * (s.sys.pi * s.d.d).sum();
    r0 += m;
  }
  return out;
}

struct ImpliedSolution {
  VectorXd x;  // Sigma_p w
  Eigen::Index rank = 0;
  bool rank_deficient = false;
  bool degenerate = false;  // A and b vanish, nothing is identified
  double residual_norm = 0.0;
};

/// Least-squares x minimising ||A x + b||; minimum-norm when A is rank deficient.
inline ImpliedSolution implied_solve(const ImpliedSystem& sys) {
  ImpliedSolution out;
  const Eigen::Index n = sys.A.cols();
  const double scale = std::max(sys.A.cwiseAbs().maxCoeff(), sys.b.cwiseAbs().maxCoeff());
  if (!(scale > 0.0)) {
    out.x = VectorXd::Zero(n);
    out.degenerate = true;
    out.rank_deficient = true;
    return out;
  }
  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(sys.A);
  cod.setThreshold(1e-12);
  out.rank = cod.rank();
  out.rank_deficient = out.rank < n;
  out.degenerate = out.rank == 0;
  out.x = cod.solve(-sys.b);
  out.residual_norm = (sys.A * out.x + sys.b).norm();
  return out;
}

inline ImpliedSolution implied_solve(const std::vector<ImpliedSnapshot>& snaps) {
  return implied_solve(implied_system(snaps));
}

/// Given diagonal constituent variances, w = Sigma_p^-1 x.
inline VectorXd implied_weights(const VectorXd& x, const VectorXd& Sigma_p_diag) {
  if (x.size() != Sigma_p_diag.size()) throw ContractError("implied_weights: size mismatch");
  if ((Sigma_p_diag.array() <= 0.0).any())
    throw ContractError("implied_weights: variances must be positive");
  return x.cwiseQuotient(Sigma_p_diag);
}

/// Given weights, sigma_i^2 = x_i / w_i.
inline VectorXd implied_variances(const VectorXd& x, const VectorXd& w) {
  if (x.size() != w.size()) throw ContractError("implied_variances: size mismatch");
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w(i) == 0.0)
      throw NumericError("implied_variances: zero weight for constituent " + std::to_string(i));
  return x.cwiseQuotient(w);
}

}  // namespace ccpde
