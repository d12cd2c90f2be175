#pragma once

// Driver subset selection by minimising a residual loss, and the revision signal.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pipeline.hpp"
#include "stats.hpp"

namespace ccpde {

enum class SearchMode { exhaustive, greedy };
enum class SelectionLoss { mean_abs_delta, mean_sq_delta, sum_abs_deviation };

inline const char* to_string(SearchMode s) { return s == SearchMode::exhaustive ? "exhaustive" : "greedy"; }

inline const char* to_string(SelectionLoss l) {
  switch (l) {
    case SelectionLoss::mean_abs_delta: return "mean-abs-delta";
    case SelectionLoss::mean_sq_delta: return "mean-sq-delta";
    case SelectionLoss::sum_abs_deviation: return "sum-abs-deviation";
  }
  return "?";
}

inline constexpr double kMaxExhaustiveSubsets = 1e5;

struct SelectionProblem {
  std::vector<std::string> candidates;
  std::vector<std::string> constituents;
  std::size_t m = 1;
  std::string from = "0000-01-01", to = "9999-12-31";  // inclusive objective window
  SearchMode search = SearchMode::exhaustive;
  SelectionLoss loss = SelectionLoss::mean_abs_delta;
};

struct EvaluatedSubset {
  std::vector<std::string> drivers;
  double loss = 0.0;
};

struct SelectionResult {
  std::vector<std::string> chosen;
  double loss = 0.0;
  std::vector<EvaluatedSubset> marginal;  // one singleton loss per candidate
  std::vector<EvaluatedSubset> audit;     // every subset evaluated, in order
};

/// Number of m-subsets of M, as a double so large cases do not overflow.
inline double choose(std::size_t M, std::size_t m) {
  if (m > M) return 0.0;
  double c = 1.0;
  for (std::size_t k = 1; k <= m; ++k) c = c * static_cast<double>(M - m + k) / static_cast<double>(k);
  return std::round(c);
}

/// Loss of a residual series restricted to dates in [from, to]. Degenerate dates are skipped.
inline double series_loss(const ResidualSeries& rs, SelectionLoss loss, const std::string& from,
                          const std::string& to) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& p : rs.points) {
    if (p.date < from || p.date > to || p.degenerate) continue;
    switch (loss) {
      case SelectionLoss::mean_abs_delta: acc += p.delta_norm; break;
      case SelectionLoss::mean_sq_delta: acc += p.delta.squaredNorm() / static_cast<double>(p.delta.size()); break;
      case SelectionLoss::sum_abs_deviation:
        for (Eigen::Index k = 0; k < p.deviation.size(); ++k)
          if (!std::isnan(p.deviation.data()[k])) acc += std::abs(p.deviation.data()[k]);
        break;
    }
    ++count;
  }
  if (count == 0) throw DataError("selection: objective window [" + from + ", " + to + "] is empty");
  return loss == SelectionLoss::sum_abs_deviation ? acc : acc / static_cast<double>(count);
}

inline double subset_loss(const SelectionProblem& prob, const ReturnTable& table, const ResidualConfig& cfg,
                          const PortfolioSpec& ps, const std::vector<std::string>& drivers) {
  return series_loss(residual_series(table, cfg, ps, prob.constituents, drivers), prob.loss, prob.from,
                     prob.to);
}

namespace detail {

inline std::vector<std::string> sorted_names(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

/// Strictly better: lower loss, or equal loss and lexicographically smaller name list.
inline bool better(double loss, const std::vector<std::string>& names, double best_loss,
                   const std::vector<std::string>& best_names) {
  if (loss != best_loss) return loss < best_loss;
  return sorted_names(names) < sorted_names(best_names);
}

}  // namespace detail

struct SearchResult {
  std::vector<std::string> chosen;
  double loss = 0.0;
  std::vector<EvaluatedSubset> audit;
};

/// Subset search over any loss callable `eval(names) -> double`. Exhaustive visits the
/// combinations in lexicographic index order; greedy adds the best remaining name per round.
template <class Eval>
SearchResult search_subsets(const std::vector<std::string>& candidates, std::size_t m, SearchMode mode,
                            Eval&& eval) {
  const std::size_t M = candidates.size();
  if (m < 1 || m > M) throw ContractError("search_subsets: need 1 <= m <= M");
  SearchResult res;
  auto evaluate = [&](const std::vector<std::string>& names) {
    const double l = eval(names);
    res.audit.push_back({names, l});
    return l;
  };
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::string> best_set;
  if (mode == SearchMode::exhaustive) {
    std::vector<std::size_t> idx(m);
    for (std::size_t k = 0; k < m; ++k) idx[k] = k;
    while (true) {
      std::vector<std::string> names;
      for (auto k : idx) names.push_back(candidates[k]);
      const double l = evaluate(names);
      if (best_set.empty() || detail::better(l, names, best, best_set)) {
        best = l;
        best_set = names;
      }
      std::size_t pos = m;
      while (pos > 0 && idx[pos - 1] == M - m + pos - 1) --pos;
      if (pos == 0) break;
      ++idx[pos - 1];
      for (std::size_t k = pos; k < m; ++k) idx[k] = idx[k - 1] + 1;
    }
  } else {
    std::vector<bool> used(M, false);
    for (std::size_t round = 0; round < m; ++round) {
      double round_best = std::numeric_limits<double>::infinity();
      std::vector<std::string> round_set;
      std::size_t pick = M;
      for (std::size_t c = 0; c < M; ++c) {
        if (used[c]) continue;
        auto names = best_set;
        names.push_back(candidates[c]);
        const double l = evaluate(names);
        if (round_set.empty() || detail::better(l, names, round_best, round_set)) {
          round_best = l;
          round_set = names;
          pick = c;
        }
      }
      used[pick] = true;
      best = round_best;
      best_set = round_set;
    }
  }
  res.chosen = std::move(best_set);
  res.loss = best;
  return res;
}

inline SelectionResult select(const SelectionProblem& prob, const ReturnTable& table, const ResidualConfig& cfg,
                              const PortfolioSpec& ps) {
  const std::size_t M = prob.candidates.size();
  if (prob.m < 1) throw ContractError("select: m must be >= 1");
  if (prob.m > M)
    throw ContractError("select: m = " + std::to_string(prob.m) + " exceeds " + std::to_string(M) +
                        " candidates");
  for (const auto& c : prob.candidates)
    if (!table.has_column(c)) throw DataError("select: candidate '" + c + "' not in table");
  if (prob.search == SearchMode::exhaustive && choose(M, prob.m) > kMaxExhaustiveSubsets)
    throw ContractError("select: exhaustive search over " + std::to_string(choose(M, prob.m)) +
                        " subsets exceeds the limit; use greedy");

  SelectionResult res;
  for (const auto& c : prob.candidates) res.marginal.push_back({{c}, subset_loss(prob, table, cfg, ps, {c})});
  auto found = search_subsets(prob.candidates, prob.m, prob.search, [&](const std::vector<std::string>& d) {
    return subset_loss(prob, table, cfg, ps, d);
  });
  res.chosen = std::move(found.chosen);
  res.loss = found.loss;
  res.audit = std::move(found.audit);
  return res;
}

// Revision signal.

struct RevisionPolicy {
  std::size_t trailing = 5;     // dates in the trailing mean of |Delta|
  double quantile = 0.95;       // of the expanding history of trailing means
  std::size_t consecutive = 5;  // h
  std::size_t baseline = 250;   // minimum series length
};

struct RevisionPoint {
  std::string date;
  double trailing_mean = 0.0;
  double threshold = 0.0;
};

struct RevisionResult {
  bool revise = false;
  std::vector<RevisionPoint> run;  // the terminal exceedance run; empty when revise is false
};

/// Evaluated at the end of the series: true when each of the last h trailing means
/// exceeds the chosen quantile of all trailing means before it.
inline RevisionResult revision_signal(const ResidualSeries& rs, const RevisionPolicy& pol = {}) {
  if (pol.trailing < 1 || pol.consecutive < 1) throw ContractError("revision_signal: bad policy");
  if (!(pol.quantile > 0.0 && pol.quantile < 1.0))
    throw ContractError("revision_signal: quantile must lie in (0, 1)");
  std::vector<const ResidualPoint*> pts;
  for (const auto& p : rs.points)
    if (!p.degenerate) pts.push_back(&p);
  const std::size_t need = std::max(pol.baseline, pol.trailing + pol.consecutive + 1);
  if (pts.size() < need)
    throw DataError("revision_signal: " + std::to_string(pts.size()) + " dates, need " + std::to_string(need));

  std::vector<double> tm;
  double window = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    window += pts[k]->delta_norm;
    if (k >= pol.trailing) window -= pts[k - pol.trailing]->delta_norm;
    if (k + 1 >= pol.trailing) tm.push_back(window / static_cast<double>(pol.trailing));
  }

  RevisionResult out;
  const std::size_t T = tm.size();
  std::vector<RevisionPoint> run;
  for (std::size_t k = T - pol.consecutive; k < T; ++k) {
    const double q = stats::quantile(std::vector<double>(tm.begin(), tm.begin() + static_cast<std::ptrdiff_t>(k)),
                                     pol.quantile);
    if (!(tm[k] > q)) return out;
    run.push_back({pts[k + pol.trailing - 1]->date, tm[k], q});
  }
  out.revise = true;
  out.run = std::move(run);
  return out;
}

}  // namespace ccpde
