#pragma once

// Pathwise check of the Ito expansion of P(p|D) along simulated trajectories.

#include <algorithm>
#include <cmath>

#include "pi_system.hpp"
#include "simulator.hpp"

namespace ccpde {

/// Simulated paths plus what is needed to map them onto copula arguments: the
/// portfolio coordinate shifts every constituent argument, u_i = u0_i + (p - p0).
struct ItoTrajectory {
  PathSet paths;
  ItoParams params;
  VectorXd u0;  // n
};

inline ItoTrajectory make_trajectory(const ItoParams& params, const VectorXd& u0,
                                     std::size_t n_paths, unsigned workers = 0) {
  if (params.nm() != u0.size() * params.m())
    throw ContractError("make_trajectory: rho0 must have n*m entries");
  return ItoTrajectory{simulate(params, n_paths, workers), params, u0};
}

namespace detail {

struct StateView {
  VectorXd u;
  VectorXd d;
  MatrixXd rho;
};

inline StateView state_at(const ItoTrajectory& tr, std::size_t step, std::size_t path) {
  const Eigen::Index n = tr.u0.size(), m = tr.params.m();
  StateView s{VectorXd(n), VectorXd(m), MatrixXd(n, m)};
  const double shift = tr.paths.p_at(step, path) - tr.params.p0;
  for (Eigen::Index i = 0; i < n; ++i) s.u(i) = std::clamp(tr.u0(i) + shift, 0.0, 1.0);
  for (Eigen::Index j = 0; j < m; ++j) s.d(j) = std::clamp(tr.paths.D_at(step, j, path), 0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) s.rho(i, j) = tr.paths.rho_at(step, i * m + j, path);
  return s;
}

}  // namespace detail

/// Mean over steps and paths of |dP_observed - dP_predicted|, where the
/// prediction is the Ito expansion
///   P_p dp + P_D . dD + P_rho : drho
///   + [1/2 P_pp sigma_p^2 + 1/2 sum_j P_DjDj (sigma_j D_j)^2 + 1/2 sum P_rr (sigma_r rho)^2] dt
/// using the simulator's independent portfolio, driver and correlation noises.
inline double ito_consistency(const PortfolioSpec& ps, const ItoTrajectory& tr) {
  const ItoParams& ip = tr.params;
  const Eigen::Index n = tr.u0.size(), m = ip.m();
  if (ps.n() != n) throw ContractError("ito_consistency: weight count does not match u0");
  if (tr.paths.steps < 10) throw ContractError("ito_consistency: path too short (< 10 steps)");
  const double dt = ip.dt;

  double total = 0.0;
  for (std::size_t path = 0; path < tr.paths.paths; ++path) {
    detail::StateView cur = detail::state_at(tr, 0, path);
    DriverState d(cur.d);
    PiSystem sys = build(cur.u, d, RhoMatrix(cur.rho));
    double P = conditional_prob(ps, sys, d);
    for (std::size_t step = 1; step <= tr.paths.steps; ++step) {
      const FirstPartials fp = first_partials(ps, sys, d);
      const SecondPartials sp = second_partials(ps, sys, d);

      const detail::StateView next = detail::state_at(tr, step, path);
      const double dp = tr.paths.p_at(step, path) - tr.paths.p_at(step - 1, path);
      double predicted = fp.dP_dp * dp + fp.dP_dD.dot(next.d - cur.d) +
                         (fp.dP_drho.array() * (next.rho - cur.rho).array()).sum();
      double ito = 0.5 * sp.d2P_dp2 * ip.sigma_p * ip.sigma_p;
      for (Eigen::Index j = 0; j < m; ++j) {
        const double vol = ip.sigma_D(j) * cur.d(j);
        ito += 0.5 * sp.d2P_dD2(j) * vol * vol;
      }
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
          const double vol = ip.sigma_rho(i * m + j) * cur.rho(i, j);
          ito += 0.5 * sp.d2P_drho2(i, j) * vol * vol;
        }
      predicted += ito * dt;

      d = DriverState(next.d);
      sys = build(next.u, d, RhoMatrix(next.rho));
      const double P_next = conditional_prob(ps, sys, d);
      total += std::abs((P_next - P) - predicted);
      P = P_next;
      cur = next;
    }
  }
  return total / static_cast<double>(tr.paths.steps * tr.paths.paths);
}

}  // namespace ccpde
