#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <random>

#include "ccpde/selection.hpp"
#include "ccpde/simulator.hpp"

using namespace ccpde;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Fixture {
  SyntheticMarket mk;
  SelectionProblem prob;
  PortfolioSpec ps = PortfolioSpec::equal(2);
  ResidualConfig cfg;
};

// Two constituents, five candidate drivers, loadings on D2 and D4 only.
Fixture fixture(std::uint64_t seed, std::size_t m = 2) {
  SyntheticSpec spec;
  spec.n = 2;
  spec.m = 5;
  spec.steps = 320;
  spec.seed = seed;
  spec.loadings = MatrixXd::Zero(2, 5);
  spec.loadings.col(1).setConstant(1.0);
  spec.loadings.col(3).setConstant(0.7);
  Fixture f{gen_synthetic_market(spec), {}, PortfolioSpec::equal(2), {}};
  f.prob.candidates = f.mk.drivers;
  f.prob.constituents = f.mk.constituents;
  f.prob.m = m;
  return f;
}

std::vector<std::string> names_of(const std::vector<std::string>& all, unsigned mask) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < all.size(); ++k)
    if (mask & (1u << k)) out.push_back(all[k]);
  return out;
}

ResidualPoint point_with_norm(std::size_t k, double norm) {
  ResidualPoint p;
  p.row = k;
  p.date = iso_date_plus("2001-01-01", static_cast<int>(k));
  p.delta = VectorXd::Constant(1, norm);
  p.delta_norm = norm;
  return p;
}

ResidualSeries norms_series(const std::vector<double>& v) {
  ResidualSeries rs;
  for (std::size_t k = 0; k < v.size(); ++k) rs.points.push_back(point_with_norm(k, v[k]));
  return rs;
}

std::vector<double> null_norms(std::size_t T, std::uint64_t seed, double log_sd = 0.5) {
  std::mt19937_64 rng(seed);
  std::lognormal_distribution<double> dist(0.0, log_sd);
  std::vector<double> v(T);
  for (auto& x : v) x = dist(rng);
  return v;
}

}  // namespace

TEST(Choose, SmallValues) {
  EXPECT_EQ(choose(5, 2), 10.0);
  EXPECT_EQ(choose(8, 0), 1.0);
  EXPECT_EQ(choose(3, 4), 0.0);
  EXPECT_EQ(choose(30, 15), 155117520.0);
}

TEST(Select, FullSetWhenMEqualsM) {
  auto f = fixture(1, 5);
  const auto res = select(f.prob, f.mk.table, f.cfg, f.ps);
  EXPECT_EQ(res.chosen, f.mk.drivers);
  EXPECT_EQ(res.audit.size(), 1u);
  EXPECT_DOUBLE_EQ(res.loss, subset_loss(f.prob, f.mk.table, f.cfg, f.ps, f.mk.drivers));
}

TEST(Select, ExhaustiveMatchesIndependentEnumeration) {
  for (std::uint64_t seed : {2u, 3u}) {
    for (SelectionLoss loss : {SelectionLoss::mean_abs_delta, SelectionLoss::sum_abs_deviation}) {
      auto f = fixture(seed);
      f.prob.loss = loss;
      const auto res = select(f.prob, f.mk.table, f.cfg, f.ps);
      EXPECT_EQ(res.audit.size(), 10u);

      // Oracle: walk every bitmask with two bits set and keep the smallest loss.
      double best = std::numeric_limits<double>::infinity();
      std::vector<std::string> arg;
      for (unsigned mask = 0; mask < 32u; ++mask) {
        if (std::popcount(mask) != 2) continue;
        const auto names = names_of(f.mk.drivers, mask);
        const double l = subset_loss(f.prob, f.mk.table, f.cfg, f.ps, names);
        if (l < best) {
          best = l;
          arg = names;
        }
      }
      EXPECT_EQ(res.chosen, arg);
      EXPECT_NEAR(res.loss, best, 1e-12 * std::max(1.0, best));
    }
  }
}

TEST(Select, ReportedLossReevaluates) {
  auto f = fixture(4);
  f.prob.loss = SelectionLoss::mean_sq_delta;
  const auto res = select(f.prob, f.mk.table, f.cfg, f.ps);
  const double again = subset_loss(f.prob, f.mk.table, f.cfg, f.ps, res.chosen);
  EXPECT_NEAR(res.loss, again, 1e-12 * std::max(1.0, again));
  for (const auto& e : res.audit)
    EXPECT_NEAR(e.loss, subset_loss(f.prob, f.mk.table, f.cfg, f.ps, e.drivers), 1e-12 * std::max(1.0, e.loss));
}

TEST(Select, MarginalsAreSingletonLosses) {
  auto f = fixture(5);
  const auto res = select(f.prob, f.mk.table, f.cfg, f.ps);
  ASSERT_EQ(res.marginal.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(res.marginal[k].drivers, std::vector<std::string>{f.mk.drivers[k]});
    EXPECT_DOUBLE_EQ(res.marginal[k].loss, subset_loss(f.prob, f.mk.table, f.cfg, f.ps, {f.mk.drivers[k]}));
  }
}

TEST(Select, Deterministic) {
  auto f = fixture(6);
  const auto a = select(f.prob, f.mk.table, f.cfg, f.ps), b = select(f.prob, f.mk.table, f.cfg, f.ps);
  EXPECT_EQ(a.chosen, b.chosen);
  EXPECT_EQ(a.loss, b.loss);
  ASSERT_EQ(a.audit.size(), b.audit.size());
  for (std::size_t k = 0; k < a.audit.size(); ++k) EXPECT_EQ(a.audit[k].loss, b.audit[k].loss);
}

TEST(Select, ObjectiveWindowRestrictsDates) {
  auto f = fixture(7, 1);
  const auto rs = residual_series(f.mk.table, f.cfg, f.ps, f.mk.constituents, {"D3"});
  f.prob.from = rs.points[50].date;
  f.prob.to = rs.points[99].date;
  double acc = 0.0;
  for (std::size_t k = 50; k < 100; ++k) acc += rs.points[k].delta_norm;
  EXPECT_NEAR(subset_loss(f.prob, f.mk.table, f.cfg, f.ps, {"D3"}), acc / 50.0, 1e-12);
}

TEST(Select, GreedySingleRoundEqualsExhaustive) {
  auto f = fixture(8, 1);
  const auto ex = select(f.prob, f.mk.table, f.cfg, f.ps);
  f.prob.search = SearchMode::greedy;
  const auto gr = select(f.prob, f.mk.table, f.cfg, f.ps);
  EXPECT_EQ(ex.chosen, gr.chosen);
  EXPECT_EQ(ex.loss, gr.loss);
}

TEST(Select, GreedyExtendsPreviousRound) {
  auto f = fixture(9, 3);
  f.prob.search = SearchMode::greedy;
  const auto res = select(f.prob, f.mk.table, f.cfg, f.ps);
  EXPECT_EQ(res.audit.size(), 5u + 4u + 3u);
  EXPECT_EQ(res.chosen.size(), 3u);
  // The first two chosen names are the greedy m = 2 answer.
  f.prob.m = 2;
  const auto two = select(f.prob, f.mk.table, f.cfg, f.ps);
  EXPECT_EQ(std::vector<std::string>(res.chosen.begin(), res.chosen.begin() + 2), two.chosen);
}

// Monotone submodular losses: L(S) = -g(sum of weights in S) for increasing concave g,
// including the modular case g(x) = x. The global optimum is the m heaviest names.
TEST(SearchSubsetsProperty, GreedyMatchesExhaustiveOnSubmodularLosses) {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> wdist(0.0, 1.0);
  std::uniform_int_distribution<int> Mdist(2, 8);
  const std::vector<std::function<double(double)>> concave = {
      [](double x) { return x; }, [](double x) { return std::sqrt(x); }, [](double x) { return std::log1p(x); }};
  for (int trial = 0; trial < 200; ++trial) {
    const auto M = static_cast<std::size_t>(Mdist(rng));
    std::vector<std::string> names;
    std::map<std::string, double> w;
    for (std::size_t k = 0; k < M; ++k) {
      names.push_back("C" + std::to_string(k));
      w[names.back()] = wdist(rng);
    }
    const auto& g = concave[static_cast<std::size_t>(trial) % concave.size()];
    auto loss = [&](const std::vector<std::string>& s) {
      double acc = 0.0;
      for (const auto& n : s) acc += w[n];
      return -g(acc);
    };
    const std::size_t m = 1 + static_cast<std::size_t>(trial) % M;
    const auto ex = search_subsets(names, m, SearchMode::exhaustive, loss);
    const auto gr = search_subsets(names, m, SearchMode::greedy, loss);
    EXPECT_EQ(detail::sorted_names(ex.chosen), detail::sorted_names(gr.chosen)) << "trial " << trial;
    EXPECT_NEAR(ex.loss, gr.loss, 1e-12);
    EXPECT_EQ(ex.audit.size(), static_cast<std::size_t>(choose(M, m)));
  }
}

TEST(SearchSubsets, ExhaustiveVisitsLexicographicOrder) {
  std::vector<std::string> seen;
  search_subsets({"a", "b", "c", "d"}, 2, SearchMode::exhaustive, [&](const std::vector<std::string>& s) {
    seen.push_back(s[0] + s[1]);
    return 0.0;
  });
  EXPECT_EQ(seen, (std::vector<std::string>{"ab", "ac", "ad", "bc", "bd", "cd"}));
}

TEST(Select, TieBreakIsLexicographic) {
  EXPECT_TRUE(detail::better(1.0, {"D2", "D1"}, 1.0, {"D3", "D1"}));
  EXPECT_FALSE(detail::better(1.0, {"D3", "D1"}, 1.0, {"D1", "D2"}));
  EXPECT_TRUE(detail::better(0.5, {"D9"}, 1.0, {"D1"}));
}

TEST(Select, Errors) {
  auto f = fixture(10, 6);
  EXPECT_THROW(select(f.prob, f.mk.table, f.cfg, f.ps), ContractError);
  f.prob.m = 0;
  EXPECT_THROW(select(f.prob, f.mk.table, f.cfg, f.ps), ContractError);
  f.prob.m = 1;
  f.prob.from = "1990-01-01";
  f.prob.to = "1990-02-01";
  EXPECT_THROW(select(f.prob, f.mk.table, f.cfg, f.ps), DataError);
  f.prob.from = "0000-01-01";
  f.prob.to = "9999-12-31";
  f.prob.candidates.push_back("ZZ");
  EXPECT_THROW(select(f.prob, f.mk.table, f.cfg, f.ps), DataError);

  SelectionProblem big;
  for (int k = 0; k < 30; ++k) big.candidates.push_back("D1");
  big.constituents = {"A1", "A2"};
  big.m = 15;
  EXPECT_THROW(select(big, f.mk.table, f.cfg, f.ps), ContractError);
}

TEST(Revision, NullSeriesDoesNotSignal) {
  int fired = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) fired += revision_signal(norms_series(null_norms(400, seed))).revise;
  EXPECT_EQ(fired, 0);
}

TEST(Revision, FalseSignalHasEmptyRun) {
  const auto r = revision_signal(norms_series(null_norms(400, 21)));
  EXPECT_FALSE(r.revise);
  EXPECT_TRUE(r.run.empty());
}

namespace {

// Dates after the shift until the signal first fires; 0 if it never does.
std::size_t detection_delay(std::uint64_t seed, double log_sd, const RevisionPolicy& pol) {
  auto v = null_norms(400, seed, log_sd);
  const std::size_t shift = 300;
  for (std::size_t k = shift; k < v.size(); ++k) v[k] *= 2.0;
  for (std::size_t end = shift + 1; end <= v.size(); ++end) {
    const auto r = revision_signal(norms_series({v.begin(), v.begin() + static_cast<std::ptrdiff_t>(end)}), pol);
    if (r.revise) {
      EXPECT_EQ(r.run.size(), pol.consecutive);
      for (const auto& p : r.run) EXPECT_GT(p.trailing_mean, p.threshold);
      return end - shift;
    }
  }
  return 0;
}

}  // namespace

TEST(Revision, DoublingRegimeFiresWithinTwoH) {
  const RevisionPolicy pol;
  for (std::uint64_t seed = 30; seed < 50; ++seed) {
    const auto delay = detection_delay(seed, 0.25, pol);
    EXPECT_GT(delay, 0u) << "seed " << seed;
    EXPECT_LE(delay, 2 * pol.consecutive) << "seed " << seed;
  }
}

// With a noisier null the trailing mean of the doubled series can still dip under the
// threshold, which restarts the run of h exceedances.
TEST(Revision, DoublingRegimeUnderNoisierNull) {
  const RevisionPolicy pol;
  int within = 0;
  for (std::uint64_t seed = 30; seed < 40; ++seed) {
    const auto delay = detection_delay(seed, 0.5, pol);
    EXPECT_GT(delay, 0u) << "seed " << seed;
    EXPECT_LE(delay, 3 * pol.consecutive) << "seed " << seed;
    within += delay <= 2 * pol.consecutive;
  }
  EXPECT_GE(within, 9);
}

TEST(Revision, InsufficientHistoryThrows) {
  EXPECT_THROW(revision_signal(norms_series(null_norms(249, 1))), DataError);
  RevisionPolicy pol;
  pol.baseline = 0;
  EXPECT_THROW(revision_signal(norms_series(null_norms(10, 1)), pol), DataError);
  pol.quantile = 1.0;
  EXPECT_THROW(revision_signal(norms_series(null_norms(300, 1)), pol), ContractError);
}

TEST(Revision, DegeneratePointsAreIgnored) {
  auto rs = norms_series(null_norms(260, 2));
  for (std::size_t k = 0; k < 20; ++k) rs.points[k].degenerate = true;
  EXPECT_THROW(revision_signal(rs), DataError);
}
