#pragma once

// Euler-Maruyama simulation of the portfolio, driver and correlation processes:
//   dp   = mu_p dt + sigma_p dW_p
//   dD   = mu_D D dt + sigma_D D dW_D      (W_D correlated through corr_D)
//   drho = mu_rho rho dt + sigma_rho rho dW_rho
// plus the closed-form GBM covariances and a synthetic market generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "copula.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "table.hpp"

namespace ccpde {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ItoParams {
  double p0 = 0.0, mu_p = 0.0, sigma_p = 0.0;
  VectorXd D0, mu_D, sigma_D;  // m
  MatrixXd corr_D;             // m x m, unit diagonal
  VectorXd rho0, mu_rho, sigma_rho;  // n*m, row-major (i*m + j)
  double dt = 1.0 / 252.0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;

  Eigen::Index m() const { return D0.size(); }
  Eigen::Index nm() const { return rho0.size(); }
  double horizon() const { return dt * static_cast<double>(steps); }
};

/// Simulated paths, including the initial state at step 0.
struct PathSet {
  std::size_t steps = 0, paths = 0;
  Eigen::Index m = 0, nm = 0;
  std::vector<double> p;    // (steps+1) x paths
  std::vector<double> D;    // (steps+1) x m x paths
  std::vector<double> rho;  // (steps+1) x nm x paths

  double p_at(std::size_t step, std::size_t path) const { return p[step * paths + path]; }
  double D_at(std::size_t step, Eigen::Index j, std::size_t path) const {
    return D[(step * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)) * paths + path];
  }
  double rho_at(std::size_t step, Eigen::Index k, std::size_t path) const {
    return rho[(step * static_cast<std::size_t>(nm) + static_cast<std::size_t>(k)) * paths + path];
  }

  bool operator==(const PathSet&) const = default;
};

/// SplitMix64 finaliser; used to derive independent per-path seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Generator for substream `stream` of `seed`; independent of worker layout.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

/// Lower-triangular factor of a correlation matrix, validating symmetry, unit
/// diagonal and positive semidefiniteness.
inline MatrixXd correlation_factor(const MatrixXd& corr) {
  const Eigen::Index m = corr.rows();
  if (corr.cols() != m) throw ContractError("corr_D is not square");
  for (Eigen::Index j = 0; j < m; ++j)
    if (std::abs(corr(j, j) - 1.0) > 1e-12) throw ContractError("corr_D must have unit diagonal");
  if (!(corr - corr.transpose()).isZero(1e-12)) throw ContractError("corr_D is not symmetric");
  if (m == 0) return corr;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(corr);
  const double lo = eig.eigenvalues().minCoeff();
  if (lo < -1e-12)
    throw ContractError("corr_D is not positive semidefinite (eigenvalue " + std::to_string(lo) +
                        ")");
  Eigen::LLT<MatrixXd> llt(corr);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  // Singular but PSD: a tiny ridge keeps the factor lower-triangular.
  Eigen::LLT<MatrixXd> ridge(corr + 1e-12 * MatrixXd::Identity(m, m));
  if (ridge.info() != Eigen::Success) throw NumericError("corr_D factorisation failed");
  return ridge.matrixL();
}

inline void validate(const ItoParams& ip) {
  const Eigen::Index m = ip.m(), nm = ip.nm();
  if (ip.mu_D.size() != m || ip.sigma_D.size() != m || ip.corr_D.rows() != m)
    throw ContractError("ItoParams: driver parameters must all have length m");
  if (ip.mu_rho.size() != nm || ip.sigma_rho.size() != nm)
    throw ContractError("ItoParams: correlation parameters must all have length n*m");
  if (!(ip.dt > 0.0)) throw ContractError("ItoParams: dt must be positive");
  if (ip.sigma_p < 0.0 || (ip.sigma_D.array() < 0.0).any() || (ip.sigma_rho.array() < 0.0).any())
    throw ContractError("ItoParams: volatilities must be non-negative");
  for (Eigen::Index k = 0; k < nm; ++k) Corr{ip.rho0(k)};
}

/// Reflect a correlation back inside [-(1-eps), 1-eps].
inline double reflect_corr(double r) {
  constexpr double bound = 1.0 - kCorrEps;
  for (int pass = 0; pass < 4 && std::abs(r) > bound; ++pass)
    r = r > bound ? 2.0 * bound - r : -2.0 * bound - r;
  return std::clamp(r, -bound, bound);
}

/// Euler-Maruyama paths. Path k draws from substream k of params.seed, so the
/// result does not depend on `workers`.
inline PathSet simulate(const ItoParams& params, std::size_t n_paths, unsigned workers = 0) {
  validate(params);
  const MatrixXd L = correlation_factor(params.corr_D);
  const Eigen::Index m = params.m(), nm = params.nm();
  const std::size_t steps = params.steps;
  const double dt = params.dt, sdt = std::sqrt(dt);

  PathSet ps;
  ps.steps = steps;
  ps.paths = n_paths;
  ps.m = m;
  ps.nm = nm;
  ps.p.assign((steps + 1) * n_paths, 0.0);
  ps.D.assign((steps + 1) * static_cast<std::size_t>(m) * n_paths, 0.0);
  ps.rho.assign((steps + 1) * static_cast<std::size_t>(nm) * n_paths, 0.0);

  const auto mD = static_cast<std::size_t>(m), mR = static_cast<std::size_t>(nm);
  parallel_for(
      n_paths,
      [&](std::size_t path) {
        std::mt19937_64 rng = substream(params.seed, path);
        std::normal_distribution<double> normal;
        double p = params.p0;
        VectorXd D = params.D0, rho = params.rho0, z(m), zc(m);
        auto store = [&](std::size_t step) {
          ps.p[step * n_paths + path] = p;
          for (std::size_t j = 0; j < mD; ++j) ps.D[(step * mD + j) * n_paths + path] = D(j);
          for (std::size_t k = 0; k < mR; ++k) ps.rho[(step * mR + k) * n_paths + path] = rho(k);
        };
        store(0);
        for (std::size_t step = 1; step <= steps; ++step) {
          const double zp = normal(rng);
          for (Eigen::Index j = 0; j < m; ++j) z(j) = normal(rng);
          zc.noalias() = L * z;
          p += params.mu_p * dt + params.sigma_p * sdt * zp;
          for (Eigen::Index j = 0; j < m; ++j)
            D(j) += D(j) * (params.mu_D(j) * dt + params.sigma_D(j) * sdt * zc(j));
          for (Eigen::Index k = 0; k < nm; ++k) {
            const double zr = normal(rng);
            rho(k) = reflect_corr(rho(k) + rho(k) * (params.mu_rho(k) * dt +
                                                     params.sigma_rho(k) * sdt * zr));
          }
          store(step);
        }
      },
      workers);
  return ps;
}

/// Driver covariance Cov(D^k, D^q) = e^{(mu_k + mu_q)(t-1)} (e^{rho sigma_k sigma_q t} - 1),
/// evaluated exactly as written (the (t-1) factor follows the lag-1 convention).
inline double gbm_covariance(double mu_k, double mu_q, double rho_kq, double sigma_k,
                             double sigma_q, double t) {
  if (!(t >= 0.0)) throw ContractError("gbm_covariance: t must be >= 0");
  return std::exp((mu_k + mu_q) * (t - 1.0)) * std::expm1(rho_kq * sigma_k * sigma_q * t);
}

/// Constituent covariance: e^{(mu_v + mu_z) t} (e^{sigma_v sigma_z t} - 1) on the
/// diagonal and zero between distinct constituents.
inline double constituent_covariance(std::size_t v, std::size_t z, double mu_v, double mu_z,
                                     double sigma_v, double sigma_z, double t) {
  if (!(t >= 0.0)) throw ContractError("constituent_covariance: t must be >= 0");
  if (v != z) return 0.0;
  return std::exp((mu_v + mu_z) * t) * std::expm1(sigma_v * sigma_z * t);
}

// ---------------------------------------------------------------------------
// Synthetic market.

struct Jump {
  std::size_t row = 0;     // date index in the emitted table
  std::size_t column = 0;  // constituent index
  double size_sd = 10.0;   // jump size in units of the constituent's return sd
};

struct SyntheticSpec {
  std::size_t n = 2, m = 2;
  std::size_t steps = 500;   // emitted dates
  VectorXd mu_D, sigma_D;    // annualised driver drift / vol (defaults 0.05 / 0.2)
  MatrixXd corr_D;           // default identity
  MatrixXd loadings;         // n x m, default all ones
  double noise = 0.2;        // idiosyncratic sd relative to the per-period driver sd
  double dt = 1.0 / 252.0;
  std::uint64_t seed = 0;
  std::string start_date = "2000-01-03";
  std::vector<Jump> jumps;
};

struct SyntheticMarket {
  ReturnTable table;  // columns A1..An then D1..Dm
  std::vector<std::string> constituents, drivers;
  MatrixXd loadings;
  MatrixXd true_rho;  // corr(a_{i,t}, r_{j,t-1})
};

/// Driver returns are the relative Euler increments of one simulated driver path;
/// constituent i at date t is sum_j loadings_ij r_{j,t-1} plus independent noise.
inline SyntheticMarket gen_synthetic_market(SyntheticSpec spec) {
  if (spec.n < 1 || spec.m < 1) throw ContractError("gen_synthetic_market: n and m must be >= 1");
  const auto n = static_cast<Eigen::Index>(spec.n), m = static_cast<Eigen::Index>(spec.m);
  if (spec.mu_D.size() == 0) spec.mu_D = VectorXd::Constant(m, 0.05);
  if (spec.sigma_D.size() == 0) spec.sigma_D = VectorXd::Constant(m, 0.2);
  if (spec.corr_D.size() == 0) spec.corr_D = MatrixXd::Identity(m, m);
  if (spec.loadings.size() == 0) spec.loadings = MatrixXd::Ones(n, m);
  if (spec.loadings.rows() != n || spec.loadings.cols() != m)
    throw ContractError("gen_synthetic_market: loadings must be n x m");
  if (spec.noise < 0.0) throw ContractError("gen_synthetic_market: noise must be >= 0");

  ItoParams ip;
  ip.D0 = VectorXd::Ones(m);
  ip.mu_D = spec.mu_D;
  ip.sigma_D = spec.sigma_D;
  ip.corr_D = spec.corr_D;
  ip.rho0 = ip.mu_rho = ip.sigma_rho = VectorXd();
  ip.dt = spec.dt;
  ip.steps = spec.steps + 1;
  ip.seed = spec.seed;
  const PathSet path = simulate(ip, 1, 1);

  const auto T = static_cast<Eigen::Index>(spec.steps);
  MatrixXd r(T + 1, m);  // r.row(k) is the driver return over step k+1
  for (Eigen::Index k = 0; k <= T; ++k)
    for (Eigen::Index j = 0; j < m; ++j)
      r(k, j) = path.D_at(static_cast<std::size_t>(k) + 1, j, 0) /
                    path.D_at(static_cast<std::size_t>(k), j, 0) -
                1.0;

  const VectorXd per_period_sd = spec.sigma_D * std::sqrt(spec.dt);
  const double noise_sd = spec.noise * per_period_sd.mean();
  std::mt19937_64 rng = substream(spec.seed, 0xC0FFEEULL);
  std::normal_distribution<double> normal;

  SyntheticMarket out;
  out.loadings = spec.loadings;
  ReturnTable& t = out.table;
  t.values.resize(T, n + m);
  for (Eigen::Index i = 0; i < n; ++i) out.constituents.push_back("A" + std::to_string(i + 1));
  for (Eigen::Index j = 0; j < m; ++j) out.drivers.push_back("D" + std::to_string(j + 1));
  t.names = out.constituents;
  t.names.insert(t.names.end(), out.drivers.begin(), out.drivers.end());
  for (Eigen::Index k = 0; k < T; ++k) {
    t.dates.push_back(iso_date_plus(spec.start_date, static_cast<int>(k)));
    for (Eigen::Index i = 0; i < n; ++i)
      t.values(k, i) = spec.loadings.row(i).dot(r.row(k)) + noise_sd * normal(rng);
    t.values.row(k).tail(m) = r.row(k + 1);
  }

  // Population moments of one-period returns.
  const MatrixXd cov_r = per_period_sd.asDiagonal() * spec.corr_D * per_period_sd.asDiagonal();
  const MatrixXd cov_ar = spec.loadings * cov_r;
  const VectorXd var_a =
      (spec.loadings * cov_r * spec.loadings.transpose()).diagonal().array() + noise_sd * noise_sd;
  out.true_rho.resize(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      out.true_rho(i, j) = cov_ar(i, j) / std::sqrt(var_a(i) * cov_r(j, j));

  for (const Jump& jp : spec.jumps) {
    if (jp.row >= spec.steps || jp.column >= spec.n)
      throw ContractError("gen_synthetic_market: jump outside the table");
    t.values(static_cast<Eigen::Index>(jp.row), static_cast<Eigen::Index>(jp.column)) +=
        jp.size_sd * std::sqrt(var_a(static_cast<Eigen::Index>(jp.column)));
  }
  return out;
}

}  // namespace ccpde
