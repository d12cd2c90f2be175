#pragma once

// Rolling-window estimation on return tables and the per-date residual series.
//
// At row t a constituent window covers rows [t-N+1, t] and the paired driver
// window covers rows [t-N, t-1], so drivers always enter with a one-row lag.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "copula.hpp"
#include "errors.hpp"
#include "pi_system.hpp"
#include "residuals.hpp"
#include "stats.hpp"
#include "table.hpp"

namespace ccpde {

enum class PitMethod { empirical_rank, gaussian_fit };

inline const char* to_string(PitMethod m) {
  return m == PitMethod::empirical_rank ? "empirical-rank" : "gaussian-fit";
}

struct WindowConfig {
  std::size_t length = 60;
  PitMethod pit = PitMethod::empirical_rank;
  std::size_t min_periods = 60;  // shorter, expanding windows are used until length is reached
  double annualization = 252.0;

  void validate() const {
    if (length < 20) throw ContractError("WindowConfig: length must be >= 20");
    if (min_periods < 2 || min_periods > length)
      throw ContractError("WindowConfig: min_periods must lie in [2, length]");
    if (!(annualization > 0.0)) throw ContractError("WindowConfig: annualization must be > 0");
  }
};

struct DateEstimate {
  std::size_t row = 0;
  std::string date;
  std::size_t window = 0;  // observations in the window
  VectorXd u;              // constituent PIT at t, n
  VectorXd d;              // driver PIT at t-1, m
  MatrixXd rho;            // n x m, clamped; 0 where undefined
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> defined;
  VectorXd mu_a, sigma_a;  // annualised constituent moments over the constituent window
  VectorXd mu_D, sigma_D;  // annualised driver moments over the driver window
  MatrixXd Sigma_D;        // annualised driver covariance
};

namespace detail {

inline std::vector<double> column_slice(const ReturnTable& t, Eigen::Index col, std::size_t lo,
                                        std::size_t hi) {
  std::vector<double> out;
  out.reserve(hi - lo);
  for (std::size_t r = lo; r < hi; ++r) out.push_back(t.values(static_cast<Eigen::Index>(r), col));
  return out;
}

inline double pit_value(std::span<const double> window, double value, PitMethod method) {
  if (method == PitMethod::empirical_rank)
    return stats::rank_of(window, value) / static_cast<double>(window.size() + 1);
  const double sd = stats::stddev(window);
  if (!(sd > 0.0)) return 0.5;
  return std_normal_cdf((value - stats::mean(window)) / sd);
}

inline std::vector<Eigen::Index> resolve(const ReturnTable& t, const std::vector<std::string>& names) {
  std::vector<Eigen::Index> out;
  for (const auto& n : names) out.push_back(t.column(n));
  return out;
}

}  // namespace detail

inline std::vector<DateEstimate> rolling_estimates(const ReturnTable& table, const WindowConfig& wc,
                                                   const std::vector<std::string>& constituents,
                                                   const std::vector<std::string>& drivers) {
  wc.validate();
  if (constituents.empty() || drivers.empty())
    throw ContractError("rolling_estimates: need at least one constituent and one driver");
  const auto ci = detail::resolve(table, constituents);
  const auto di = detail::resolve(table, drivers);
  const auto n = static_cast<Eigen::Index>(ci.size()), m = static_cast<Eigen::Index>(di.size());
  const auto T = static_cast<std::size_t>(table.rows());
  if (T <= wc.min_periods)
    throw DataError("rolling_estimates: " + std::to_string(T) + " rows cannot fill a window of " +
                    std::to_string(wc.min_periods));
  const double ann = wc.annualization;

  std::vector<DateEstimate> out;
  for (std::size_t t = wc.min_periods; t < T; ++t) {
    const std::size_t N = std::min(wc.length, t);
    DateEstimate e;
    e.row = t;
    e.date = table.dates[t];
    e.window = N;
    e.u.resize(n);
    e.d.resize(m);
    e.mu_a.resize(n);
    e.sigma_a.resize(n);
    e.mu_D.resize(m);
    e.sigma_D.resize(m);
    e.rho = MatrixXd::Zero(n, m);
    e.defined.setConstant(n, m, false);

    std::vector<std::vector<double>> a_win(static_cast<std::size_t>(n)), d_win(static_cast<std::size_t>(m));
    std::vector<bool> a_ok(static_cast<std::size_t>(n)), d_ok(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& w = a_win[static_cast<std::size_t>(i)];
      w = detail::column_slice(table, ci[static_cast<std::size_t>(i)], t + 1 - N, t + 1);
      const double sd = stats::stddev(w);
      a_ok[static_cast<std::size_t>(i)] = sd > 0.0;
      e.mu_a(i) = stats::mean(w) * ann;
      e.sigma_a(i) = sd * std::sqrt(ann);
      e.u(i) = detail::pit_value(w, w.back(), wc.pit);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      auto& w = d_win[static_cast<std::size_t>(j)];
      w = detail::column_slice(table, di[static_cast<std::size_t>(j)], t - N, t);
      const double sd = stats::stddev(w);
      d_ok[static_cast<std::size_t>(j)] = sd > 0.0;
      e.mu_D(j) = stats::mean(w) * ann;
      e.sigma_D(j) = sd * std::sqrt(ann);
      e.d(j) = detail::pit_value(w, w.back(), wc.pit);
    }
    e.Sigma_D.resize(m, m);
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index k = 0; k <= j; ++k) {
        const auto& x = d_win[static_cast<std::size_t>(j)];
        const auto& y = d_win[static_cast<std::size_t>(k)];
        const double mx = stats::mean(x), my = stats::mean(y);
        double s = 0.0;
        for (std::size_t r = 0; r < N; ++r) s += (x[r] - mx) * (y[r] - my);
        e.Sigma_D(j, k) = e.Sigma_D(k, j) = s / static_cast<double>(N - 1) * ann;
      }
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) {
        if (!a_ok[static_cast<std::size_t>(i)] || !d_ok[static_cast<std::size_t>(j)]) continue;
        const double r =
            stats::pearson(a_win[static_cast<std::size_t>(i)], d_win[static_cast<std::size_t>(j)]);
        if (std::isnan(r)) continue;
        e.rho(i, j) = Corr(r).clamped();
        e.defined(i, j) = true;
      }
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Residual series.

struct FlagConfig {
  double k = 5.0;              // multiplier on the MAD
  std::size_t baseline = 250;  // trailing dates in the MAD baseline
  std::size_t min_baseline = 60;  // no flags until this much history exists
};

struct ResidualConfig {
  WindowConfig window;
  FlagConfig flags;
  ResidualOptions residual;
  /// Pinned driver/portfolio parameters; realised window estimates when empty.
  std::optional<VolParams> pinned;
};

struct ResidualPoint {
  std::size_t row = 0;
  std::string date;
  MatrixXd deviation;  // w_i R_ij, the pair's share of Delta_j; NaN where undefined
  MatrixXd mismatch;   // observed minus first-order predicted change of the pair term; NaN if unavailable
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> flag;
  VectorXd delta;
  double delta_norm = 0.0;
  VectorXd brownian;
  double brownian_norm = 0.0;
  double conditional_prob = 0.0;
  double realized_vol = 0.0;
  bool event = false;
  bool degenerate = false;  // no pair had a defined correlation
};

struct SkippedDate {
  std::string date;
  std::string reason;
};

struct ResidualSeries {
  std::vector<std::string> constituents, drivers;
  std::vector<ResidualPoint> points;
  std::vector<SkippedDate> skipped;
  std::vector<std::string> warnings;
};

/// Re-applies the MAD rule to a finished series (e.g. with a different k).
inline void apply_flags(ResidualSeries& rs, const FlagConfig& fc) {
  if (rs.points.empty()) return;
  const Eigen::Index n = rs.points.front().deviation.rows(), m = rs.points.front().deviation.cols();
  for (auto& p : rs.points) {
    p.flag.setConstant(n, m, false);
    p.event = false;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      std::vector<double> history;
      for (auto& p : rs.points) {
        const double v = p.deviation(i, j);
        if (std::isnan(v)) continue;
        if (history.size() >= fc.min_baseline) {
          const std::size_t lo = history.size() > fc.baseline ? history.size() - fc.baseline : 0;
          std::span<const double> base(history.data() + lo, history.size() - lo);
          double med = 0.0;
          const double spread = stats::mad(base, &med);
          if (std::abs(v - med) > fc.k * spread) {
            p.flag(i, j) = true;
            p.event = true;
          }
        }
        history.push_back(v);
      }
    }
}

inline ResidualSeries residual_series(const ReturnTable& table, const ResidualConfig& cfg,
                                      const PortfolioSpec& ps,
                                      const std::vector<std::string>& constituents,
                                      const std::vector<std::string>& drivers) {
  if (ps.n() != static_cast<Eigen::Index>(constituents.size()))
    throw ContractError("residual_series: weight count does not match constituents");
  const auto n = static_cast<Eigen::Index>(constituents.size());
  const auto m = static_cast<Eigen::Index>(drivers.size());
  if (cfg.pinned) check_vol_params(*cfg.pinned, m);

  ResidualSeries rs;
  rs.constituents = constituents;
  rs.drivers = drivers;
  for (std::size_t t = 0; t < std::min<std::size_t>(cfg.window.min_periods,
                                                     static_cast<std::size_t>(table.rows()));
       ++t)
    rs.skipped.push_back({table.dates[t], "insufficient history"});

  const auto estimates = rolling_estimates(table, cfg.window, constituents, drivers);
  const auto ci = detail::resolve(table, constituents);
  const double ann = cfg.window.annualization;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // Pair terms of the previous date, for the time-derivative mismatch.
  std::optional<PiSystem> prev_sys;
  VectorXd prev_u, prev_d;
  MatrixXd prev_rho;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> prev_defined;

  for (const DateEstimate& e : estimates) {
    ResidualPoint pt;
    pt.row = e.row;
    pt.date = e.date;

    std::vector<double> port;
    for (std::size_t r = e.row + 1 - e.window; r <= e.row; ++r) {
      double v = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        v += ps.weights(i) * table.values(static_cast<Eigen::Index>(r), ci[static_cast<std::size_t>(i)]);
      port.push_back(v);
    }
    pt.realized_vol = stats::stddev(port) * std::sqrt(ann);

    VolParams vp;
    if (cfg.pinned) {
      vp = *cfg.pinned;
    } else {
      vp = VolParams::zeros(n, m);
      vp.sigma_p = pt.realized_vol;
      vp.Sigma_p = e.sigma_a.cwiseProduct(e.sigma_a);
      vp.Sigma_D = e.Sigma_D;
      vp.mu_D = e.mu_D;
    }

    const DriverState d(e.d);
    const PiSystem sys = build(e.u, d, RhoMatrix(e.rho));
    const ResidualReport rep = evaluate_residuals(ps, sys, d, vp, cfg.residual);
    pt.delta = rep.delta;
    pt.delta_norm = rep.delta_norm;
    pt.brownian = rep.brownian;
    pt.brownian_norm = rep.brownian_norm;
    pt.conditional_prob = conditional_prob(ps, sys, d);
    pt.deviation = rep.per_pair;
    pt.mismatch = MatrixXd::Constant(n, m, nan);
    pt.degenerate = !e.defined.any();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) {
        if (!e.defined(i, j)) {
          pt.deviation(i, j) = nan;
          continue;
        }
        if (!prev_sys || !prev_defined(i, j)) continue;
        const double w = ps.weights(i);
        const double now = -w * sys.pi(i, j) * e.d(j);
        const double before = -w * prev_sys->pi(i, j) * prev_d(j);
        const double predicted =
            -w * (prev_sys->dPi_da(i, j) * prev_d(j) * (e.u(i) - prev_u(i)) +
                  (prev_sys->dPi_dD(i, j) * prev_d(j) + prev_sys->pi(i, j)) * (e.d(j) - prev_d(j)) +
                  prev_sys->dPi_drho(i, j) * prev_d(j) * (e.rho(i, j) - prev_rho(i, j)));
        pt.mismatch(i, j) = (now - before) - predicted;
      }
    prev_sys = sys;
    prev_u = e.u;
    prev_d = e.d;
    prev_rho = e.rho;
    prev_defined = e.defined;
    if (pt.degenerate) rs.warnings.push_back(e.date + ": no defined constituent-driver pair");
    rs.points.push_back(std::move(pt));
  }
  apply_flags(rs, cfg.flags);
  return rs;
}

struct PeriodSum {
  MatrixXd per_pair;  // undefined values are skipped
  double total = 0.0;
  std::size_t dates = 0;
};

/// Sums per-pair deviations over dates in [from, to] (ISO strings, inclusive).
inline PeriodSum sum_series(const ResidualSeries& rs, const std::string& from, const std::string& to) {
  PeriodSum out;
  const auto n = static_cast<Eigen::Index>(rs.constituents.size());
  const auto m = static_cast<Eigen::Index>(rs.drivers.size());
  out.per_pair = MatrixXd::Zero(n, m);
  for (const auto& p : rs.points) {
    if (p.date < from || p.date > to) continue;
    ++out.dates;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        if (!std::isnan(p.deviation(i, j))) out.per_pair(i, j) += p.deviation(i, j);
  }
  if (out.dates == 0) throw DataError("sum_series: no dates in [" + from + ", " + to + "]");
  out.total = out.per_pair.sum();
  return out;
}

}  // namespace ccpde
