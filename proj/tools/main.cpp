// ccpde-cli: synthetic generation, rolling estimation, residual series, driver
// selection, implied solves and the Ito consistency check, each writing CSV or JSON
// artifacts plus a manifest.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "ccpde/ccpde.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace ccpde;

namespace {

// ---------------------------------------------------------------------------
// Files.

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericError("sha256 failed");
  std::ostringstream os;
  for (unsigned int k = 0; k < len; ++k) os << std::hex << std::setw(2) << std::setfill('0') << int(md[k]);
  return os.str();
}

/// Relative inputs that do not exist here are looked up under $CCPDE_DATA_DIR.
fs::path resolve_input(const std::string& given) {
  fs::path p(given);
  if (p.is_relative() && !fs::exists(p))
    if (const char* dir = std::getenv("CCPDE_DATA_DIR"); dir && *dir)
      if (fs::exists(fs::path(dir) / p)) return fs::path(dir) / p;
  if (!fs::exists(p))
    throw DataError("input '" + given + "' not found (relative paths are also tried under $CCPDE_DATA_DIR)");
  return p;
}

void write_atomic(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw DataError("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, p);
}

std::string num(double v) { return std::isnan(v) ? "NA" : format_double(v); }

// ---------------------------------------------------------------------------
// Runs: inputs are hashed, outputs collected, and the manifest lists both.

struct Run {
  std::string command;
  const CLI::App* sub = nullptr;
  json inputs = json::array();
  json outputs = json::array();
  json extra = json::object();

  ReturnTable load_table(const std::string& given, MissingPolicy policy) {
    const fs::path p = resolve_input(given);
    const std::string bytes = read_file(p);
    inputs.push_back({{"path", given}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
    std::istringstream in(bytes);
    auto res = parse_returns(in, {policy});
    for (auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
    if (!res.warnings.empty()) extra["load_warnings"] = res.warnings;
    return std::move(res.table);
  }

  json load_json(const std::string& given) {
    const fs::path p = resolve_input(given);
    const std::string bytes = read_file(p);
    inputs.push_back({{"path", given}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
    try {
      return json::parse(bytes);
    } catch (const json::parse_error& e) {
      throw DataError("'" + given + "' is not valid JSON: " + e.what());
    }
  }

  void emit(const fs::path& p, const std::string& content) {
    write_atomic(p, content);
    outputs.push_back({{"path", p.generic_string()}, {"sha256", sha256_hex(content)}});
  }

  json config_echo() const {
    json cfg = json::object();
    for (const CLI::Option* opt : sub->get_options()) {
      if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
      const auto& name = opt->get_lnames().front();
      if (opt->count() > 0) {
        std::string joined;
        for (const auto& r : opt->results()) joined += (joined.empty() ? "" : ",") + r;
        cfg[name] = joined;
      } else {
        cfg[name] = opt->get_default_str();
      }
    }
    return cfg;
  }

  void write_manifest(const fs::path& p) {
    json m;
    m["tool"] = "ccpde-cli";
    m["version"] = kVersion;
    m["command"] = command;
    m["config"] = config_echo();
    m["inputs"] = inputs;
    for (auto& [k, v] : extra.items()) m[k] = v;
    m["outputs"] = outputs;
    write_atomic(p, m.dump(2) + "\n");
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

PortfolioSpec parse_weights(const std::string& spec, std::size_t n) {
  if (spec == "equal") return PortfolioSpec::equal(static_cast<Eigen::Index>(n));
  const auto parts = split_list(spec);
  if (parts.size() != n)
    throw ContractError("--weights has " + std::to_string(parts.size()) + " values for " + std::to_string(n) +
                        " constituents");
  Eigen::VectorXd w(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    double v = 0.0;
    if (!detail::parse_number(parts[k], v)) throw ContractError("--weights: '" + parts[k] + "' is not a number");
    w(static_cast<Eigen::Index>(k)) = v;
  }
  return PortfolioSpec(w);
}

std::vector<std::string> default_constituents(const ReturnTable& t, const std::vector<std::string>& drivers) {
  std::vector<std::string> out;
  for (const auto& n : t.names)
    if (std::find(drivers.begin(), drivers.end(), n) == drivers.end()) out.push_back(n);
  return out;
}

// ---------------------------------------------------------------------------
// Shared option groups.

struct WindowOpts {
  std::size_t length = 60, min_periods = 60;
  std::string pit = "empirical-rank";
  double annualization = 252.0;
  std::string missing = "strict";

  void add(CLI::App* s) {
    s->add_option("--window", length, "Rolling window length in rows")->capture_default_str();
    s->add_option("--min-periods", min_periods, "Rows required before the first estimate")->capture_default_str();
    s->add_option("--pit", pit, "Probability integral transform")
        ->check(CLI::IsMember({"empirical-rank", "gaussian-fit"}))
        ->capture_default_str();
    s->add_option("--annualization", annualization, "Periods per year")->capture_default_str();
    s->add_option("--missing", missing, "Blank or non-numeric cells")
        ->check(CLI::IsMember({"strict", "drop-row"}))
        ->capture_default_str();
  }
  WindowConfig config() const {
    WindowConfig wc;
    wc.length = length;
    wc.min_periods = std::min(min_periods, length);
    wc.pit = pit == "gaussian-fit" ? PitMethod::gaussian_fit : PitMethod::empirical_rank;
    wc.annualization = annualization;
    wc.validate();
    return wc;
  }
  MissingPolicy policy() const { return missing == "drop-row" ? MissingPolicy::drop_row : MissingPolicy::strict; }
};

struct SeriesOpts {
  WindowOpts window;
  std::string in, weights = "equal", broadcast = "uniform";
  std::vector<std::string> drivers, constituents;
  double k = 5.0;
  std::size_t baseline = 250, min_baseline = 60;

  void add(CLI::App* s, bool with_drivers = true) {
    s->add_option("--in", in, "Returns CSV")->required();
    if (with_drivers) s->add_option("--drivers", drivers, "Driver columns")->delimiter(',')->required();
    s->add_option("--constituents", constituents, "Constituent columns (default: all non-driver columns)")
        ->delimiter(',');
    s->add_option("--weights", weights, "'equal' or a comma list, one per constituent")->capture_default_str();
    s->add_option("--k", k, "MAD flag multiplier")->capture_default_str();
    s->add_option("--baseline", baseline, "Trailing values in the MAD baseline")->capture_default_str();
    s->add_option("--min-baseline", min_baseline, "Values required before flags are raised")
        ->capture_default_str();
    s->add_option("--broadcast", broadcast, "Portfolio curvature split across drivers")
        ->check(CLI::IsMember({"uniform", "driver-proportional"}))
        ->capture_default_str();
    window.add(s);
  }
  ResidualConfig config() const {
    ResidualConfig cfg;
    cfg.window = window.config();
    if (!(k > 0.0)) throw ContractError("--k must be positive");
    cfg.flags = {k, baseline, min_baseline};
    cfg.residual.broadcast = broadcast == "driver-proportional" ? Broadcast::driver_proportional : Broadcast::uniform;
    return cfg;
  }
};

std::string pair_csv(const ResidualSeries& rs, bool mismatch) {
  std::ostringstream os;
  os << (mismatch ? "date,constituent,driver,value\n" : "date,constituent,driver,value,flag\n");
  for (const auto& p : rs.points)
    for (std::size_t i = 0; i < rs.constituents.size(); ++i)
      for (std::size_t j = 0; j < rs.drivers.size(); ++j) {
        const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
        os << p.date << ',' << rs.constituents[i] << ',' << rs.drivers[j] << ','
           << num(mismatch ? p.mismatch(ii, jj) : p.deviation(ii, jj));
        if (!mismatch) os << ',' << (p.flag(ii, jj) ? 1 : 0);
        os << '\n';
      }
  return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands.

struct GenOpts {
  std::size_t n = 2, m = 2, steps = 500;
  std::uint64_t seed = 0;
  double noise = 0.2, dt = 1.0 / 252.0, mu_D = 0.05, sigma_D = 0.2, corr = 0.0;
  std::vector<double> loadings;
  std::vector<std::string> jumps;
  std::string start = "2000-01-03", out;
};

void run_gen(Run& run, const GenOpts& o) {
  SyntheticSpec spec;
  spec.n = o.n;
  spec.m = o.m;
  spec.steps = o.steps;
  spec.seed = o.seed;
  spec.noise = o.noise;
  spec.dt = o.dt;
  spec.start_date = o.start;
  const auto m = static_cast<Eigen::Index>(o.m), n = static_cast<Eigen::Index>(o.n);
  spec.mu_D = Eigen::VectorXd::Constant(m, o.mu_D);
  spec.sigma_D = Eigen::VectorXd::Constant(m, o.sigma_D);
  spec.corr_D = Eigen::MatrixXd::Constant(m, m, o.corr);
  spec.corr_D.diagonal().setOnes();
  if (!o.loadings.empty()) {
    if (o.loadings.size() != o.n * o.m)
      throw ContractError("--loadings needs n*m = " + std::to_string(o.n * o.m) + " values (row-major)");
    spec.loadings = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        o.loadings.data(), n, m);
  }
  for (const auto& j : o.jumps) {
    std::size_t row = 0, col = 0;
    double size = 0.0;
    char c1 = 0, c2 = 0;
    std::istringstream is(j);
    if (!(is >> row >> c1 >> col >> c2 >> size) || c1 != ':' || c2 != ':' || !is.eof())
      throw ContractError("--jump expects row:column:size_sd, got '" + j + "'");
    spec.jumps.push_back({row, col, size});
  }
  const auto mk = gen_synthetic_market(spec);
  const fs::path out(o.out);
  run.emit(out, to_csv(mk.table));

  json truth;
  truth["constituents"] = mk.constituents;
  truth["drivers"] = mk.drivers;
  auto rows = [](const Eigen::MatrixXd& a) {
    json r = json::array();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
      r.push_back(row);
    }
    return r;
  };
  truth["loadings"] = rows(mk.loadings);
  truth["true_rho"] = rows(mk.true_rho);
  json jumps = json::array();
  for (const auto& j : spec.jumps)
    jumps.push_back({{"date", mk.table.dates.at(j.row)}, {"column", mk.constituents.at(j.column)}, {"size_sd", j.size_sd}});
  truth["jumps"] = jumps;
  fs::path tp = out;
  tp += ".truth.json";
  run.emit(tp, truth.dump(2) + "\n");
  fs::path mp = out;
  mp += ".manifest.json";
  run.write_manifest(mp);
}

void run_estimate(Run& run, const SeriesOpts& o, const std::string& out) {
  const auto table = run.load_table(o.in, o.window.policy());
  const auto cons = o.constituents.empty() ? default_constituents(table, o.drivers) : o.constituents;
  const auto est = rolling_estimates(table, o.window.config(), cons, o.drivers);
  std::ostringstream pairs, marg;
  pairs << "date,constituent,driver,u,d,rho,defined\n";
  marg << "date,series,role,mu,sigma\n";
  for (const auto& e : est) {
    for (std::size_t i = 0; i < cons.size(); ++i)
      for (std::size_t j = 0; j < o.drivers.size(); ++j) {
        const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
        pairs << e.date << ',' << cons[i] << ',' << o.drivers[j] << ',' << num(e.u(ii)) << ',' << num(e.d(jj)) << ','
              << (e.defined(ii, jj) ? num(e.rho(ii, jj)) : "NA") << ',' << (e.defined(ii, jj) ? 1 : 0) << '\n';
      }
    for (std::size_t i = 0; i < cons.size(); ++i)
      marg << e.date << ',' << cons[i] << ",constituent," << num(e.mu_a(static_cast<Eigen::Index>(i))) << ','
           << num(e.sigma_a(static_cast<Eigen::Index>(i))) << '\n';
    for (std::size_t j = 0; j < o.drivers.size(); ++j)
      marg << e.date << ',' << o.drivers[j] << ",driver," << num(e.mu_D(static_cast<Eigen::Index>(j))) << ','
           << num(e.sigma_D(static_cast<Eigen::Index>(j))) << '\n';
  }
  const fs::path dir(out);
  run.emit(dir / "estimates.csv", pairs.str());
  run.emit(dir / "marginals.csv", marg.str());
  run.write_manifest(dir / "manifest.json");
}

ResidualSeries compute_series(Run& run, const SeriesOpts& o, std::vector<std::string>& cons) {
  const auto table = run.load_table(o.in, o.window.policy());
  cons = o.constituents.empty() ? default_constituents(table, o.drivers) : o.constituents;
  return residual_series(table, o.config(), parse_weights(o.weights, cons.size()), cons, o.drivers);
}

void run_residuals(Run& run, const SeriesOpts& o, const std::string& out) {
  std::vector<std::string> cons;
  const auto rs = compute_series(run, o, cons);
  std::ostringstream dates, delta, skipped;
  dates << "date,delta_norm,brownian_norm,conditional_prob,realized_vol,event,degenerate\n";
  delta << "date,driver,value\n";
  skipped << "date,reason\n";
  for (const auto& p : rs.points) {
    dates << p.date << ',' << num(p.delta_norm) << ',' << num(p.brownian_norm) << ',' << num(p.conditional_prob)
          << ',' << num(p.realized_vol) << ',' << (p.event ? 1 : 0) << ',' << (p.degenerate ? 1 : 0) << '\n';
    for (std::size_t j = 0; j < rs.drivers.size(); ++j)
      delta << p.date << ',' << rs.drivers[j] << ',' << num(p.delta(static_cast<Eigen::Index>(j))) << '\n';
  }
  for (const auto& s : rs.skipped) skipped << s.date << ',' << s.reason << '\n';
  const fs::path dir(out);
  run.emit(dir / "pairs.csv", pair_csv(rs, false));
  run.emit(dir / "mismatch.csv", pair_csv(rs, true));
  run.emit(dir / "dates.csv", dates.str());
  run.emit(dir / "delta.csv", delta.str());
  run.emit(dir / "skipped.csv", skipped.str());
  std::size_t events = 0;
  for (const auto& p : rs.points) events += p.event;
  run.extra["summary"] = {{"dates", rs.points.size()}, {"skipped", rs.skipped.size()}, {"event_dates", events}};
  if (!rs.warnings.empty()) run.extra["warnings"] = rs.warnings;
  run.write_manifest(dir / "manifest.json");
}

void run_sum(Run& run, const SeriesOpts& o, const std::string& from, const std::string& to, const std::string& out) {
  std::vector<std::string> cons;
  const auto rs = compute_series(run, o, cons);
  const auto s = sum_series(rs, from, to);
  std::ostringstream os;
  os << "constituent,driver,value\n";
  for (std::size_t i = 0; i < cons.size(); ++i)
    for (std::size_t j = 0; j < rs.drivers.size(); ++j)
      os << cons[i] << ',' << rs.drivers[j] << ',' << num(s.per_pair(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))
         << '\n';
  const fs::path dir(out);
  run.emit(dir / "sum.csv", os.str());
  run.extra["summary"] = {{"from", from}, {"to", to}, {"dates", s.dates}, {"total", s.total}};
  run.write_manifest(dir / "manifest.json");
}

struct SelectOpts {
  SeriesOpts series;
  std::vector<std::string> candidates;
  std::size_t m = 2;
  std::string from = "0000-01-01", to = "9999-12-31", search = "exhaustive", loss = "mean-abs-delta", out;
};

void run_select(Run& run, const SelectOpts& o) {
  const auto table = run.load_table(o.series.in, o.series.window.policy());
  SelectionProblem prob;
  prob.candidates = o.candidates;
  prob.constituents = o.series.constituents.empty() ? default_constituents(table, o.candidates) : o.series.constituents;
  prob.m = o.m;
  prob.from = o.from;
  prob.to = o.to;
  prob.search = o.search == "greedy" ? SearchMode::greedy : SearchMode::exhaustive;
  prob.loss = o.loss == "mean-sq-delta"       ? SelectionLoss::mean_sq_delta
              : o.loss == "sum-abs-deviation" ? SelectionLoss::sum_abs_deviation
                                              : SelectionLoss::mean_abs_delta;
  const auto res =
      select(prob, table, o.series.config(), parse_weights(o.series.weights, prob.constituents.size()));
  json j;
  j["chosen"] = res.chosen;
  j["loss"] = res.loss;
  j["loss_kind"] = to_string(prob.loss);
  j["search"] = to_string(prob.search);
  json marg = json::array();
  for (const auto& e : res.marginal) marg.push_back({{"driver", e.drivers.front()}, {"loss", e.loss}});
  j["marginal"] = marg;
  json trail = json::array();
  for (const auto& e : res.audit) trail.push_back({{"drivers", e.drivers}, {"loss", e.loss}});
  j["trail"] = trail;
  const fs::path dir(o.out);
  run.emit(dir / "selection.json", j.dump(2) + "\n");
  run.extra["proxy"] = "driver set chosen by minimising the Delta loss; a proxy for common-cause screening";
  run.write_manifest(dir / "manifest.json");
}

Eigen::VectorXd vec_of(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw DataError(what + " must hold numbers");
    v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  }
  return v;
}

Eigen::MatrixXd mat_of(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw DataError(what + " must be an array of rows");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = vec_of(j[r], what);
    if (row.size() != a.cols()) throw DataError(what + " rows differ in length");
    a.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return a;
}

json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void run_implied(Run& run, const std::string& system, const std::string& weights, const std::string& variances,
                 const std::string& out) {
  const json doc = run.load_json(system);
  if (!doc.contains("snapshots") || !doc["snapshots"].is_array() || doc["snapshots"].empty())
    throw DataError("'" + system + "' needs a non-empty \"snapshots\" array");
  std::vector<ImpliedSnapshot> snaps;
  std::size_t idx = 0;
  for (const auto& s : doc["snapshots"]) {
    const std::string at = "snapshots[" + std::to_string(idx++) + "].";
    for (const char* key : {"u", "d", "rho", "Sigma_D", "mu_D"})
      if (!s.contains(key)) throw DataError(at + key + " is missing");
    try {
      const DriverState d(vec_of(s["d"], at + "d"));
      snaps.push_back({build(vec_of(s["u"], at + "u"), d, RhoMatrix(mat_of(s["rho"], at + "rho"))), d,
                       mat_of(s["Sigma_D"], at + "Sigma_D"), vec_of(s["mu_D"], at + "mu_D")});
    } catch (const ContractError& err) {
      throw DataError(at.substr(0, at.size() - 1) + ": " + err.what());
    }
  }
  const auto sol = implied_solve(snaps);
  const auto n = sol.x.size();
  json j;
  j["x"] = to_json(sol.x);
  j["rank"] = sol.rank;
  j["rank_deficient"] = sol.rank_deficient;
  j["degenerate"] = sol.degenerate;
  j["residual_norm"] = sol.residual_norm;
  if (!variances.empty()) {
    const auto parts = split_list(variances);
    Eigen::VectorXd v(n);
    if (static_cast<Eigen::Index>(parts.size()) != n) throw ContractError("--variances needs one value per constituent");
    for (Eigen::Index k = 0; k < n; ++k)
      if (!detail::parse_number(parts[static_cast<std::size_t>(k)], v(k)))
        throw ContractError("--variances: '" + parts[static_cast<std::size_t>(k)] + "' is not a number");
    j["weights"] = to_json(implied_weights(sol.x, v));
  } else {
    j["variances"] = to_json(implied_variances(sol.x, parse_weights(weights, static_cast<std::size_t>(n)).weights));
  }
  const fs::path dir(out);
  run.emit(dir / "implied.json", j.dump(2) + "\n");
  run.write_manifest(dir / "manifest.json");
}

struct SimCheckOpts {
  std::vector<double> dts{1e-2, 5e-3, 2.5e-3};
  std::size_t paths = 64;
  std::uint64_t seed = 1;
  double horizon = 0.5;
  std::string out;
};

void run_simulate_check(Run& run, const SimCheckOpts& o) {
  if (o.dts.size() < 2) throw ContractError("--dt needs at least two levels");
  const Eigen::VectorXd u0 = (Eigen::VectorXd(2) << 0.4, 0.6).finished();
  json levels = json::array();
  std::vector<double> lx, ly;
  for (double dt : o.dts) {
    if (!(dt > 0.0)) throw ContractError("--dt values must be positive");
    ItoParams ip;
    ip.mu_p = 0.05;
    ip.sigma_p = 0.1;
    ip.D0 = (Eigen::VectorXd(2) << 0.5, 0.6).finished();
    ip.mu_D = (Eigen::VectorXd(2) << 0.02, -0.01).finished();
    ip.sigma_D = (Eigen::VectorXd(2) << 0.2, 0.15).finished();
    ip.corr_D = (Eigen::MatrixXd(2, 2) << 1.0, 0.3, 0.3, 1.0).finished();
    ip.rho0 = (Eigen::VectorXd(4) << 0.3, -0.2, 0.5, 0.4).finished();
    ip.mu_rho = Eigen::VectorXd::Zero(4);
    ip.sigma_rho = Eigen::VectorXd::Constant(4, 0.2);
    ip.dt = dt;
    ip.steps = static_cast<std::size_t>(std::llround(o.horizon / dt));
    ip.seed = o.seed;
    const double e = ito_consistency(PortfolioSpec::equal(2), make_trajectory(ip, u0, o.paths));
    levels.push_back({{"dt", dt}, {"steps", ip.steps}, {"mean_abs_error", e}});
    lx.push_back(std::log(dt));
    ly.push_back(std::log(e));
  }
  const double mx = stats::mean(lx), my = stats::mean(ly);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < lx.size(); ++k) {
    sxy += (lx[k] - mx) * (ly[k] - my);
    sxx += (lx[k] - mx) * (lx[k] - mx);
  }
  json j;
  j["levels"] = levels;
  j["loglog_slope"] = sxy / sxx;
  const fs::path dir(o.out);
  run.emit(dir / "simulate_check.json", j.dump(2) + "\n");
  run.write_manifest(dir / "manifest.json");
}

int fail(int code, const std::string& kind, const std::string& message) {
  json rec{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  std::cerr << rec.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional copula PDE residuals: generation, estimation, residuals, selection, implied solves",
               "ccpde-cli"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "key=value config file; subcommand keys go under [subcommand] sections");
  app.require_subcommand(1);

  GenOpts gen;
  auto* g = app.add_subcommand("gen", "Write a synthetic market of constituents driven by lagged drivers");
  g->add_option("--n", gen.n, "Constituents")->capture_default_str();
  g->add_option("--m", gen.m, "Drivers")->capture_default_str();
  g->add_option("--steps", gen.steps, "Dates")->capture_default_str();
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("--noise", gen.noise, "Idiosyncratic sd relative to the driver sd")->capture_default_str();
  g->add_option("--dt", gen.dt, "Period length in years")->capture_default_str();
  g->add_option("--mu-D", gen.mu_D, "Annual driver drift")->capture_default_str();
  g->add_option("--sigma-D", gen.sigma_D, "Annual driver volatility")->capture_default_str();
  g->add_option("--corr", gen.corr, "Pairwise driver correlation")->capture_default_str();
  g->add_option("--loadings", gen.loadings, "n*m loadings, row-major (default all ones)")->delimiter(',');
  g->add_option("--jump", gen.jumps, "Jump as row:column:size_sd (repeatable)");
  g->add_option("--start-date", gen.start, "First date")->capture_default_str();
  g->add_option("--out", gen.out, "Output CSV")->required();

  SeriesOpts est;
  std::string est_out;
  auto* e = app.add_subcommand("estimate", "Rolling PIT values, correlations and marginal moments");
  est.add(e);
  e->add_option("--out", est_out, "Output directory")->required();

  SeriesOpts res;
  std::string res_out;
  auto* r = app.add_subcommand("residuals", "Per-pair deviation series with MAD flags");
  res.add(r);
  r->add_option("--out", res_out, "Output directory")->required();

  SeriesOpts sum;
  std::string sum_out, sum_from, sum_to;
  auto* s = app.add_subcommand("sum", "Per-pair deviations summed over a date range");
  sum.add(s);
  s->add_option("--from", sum_from, "First date (inclusive)")->required();
  s->add_option("--to", sum_to, "Last date (inclusive)")->required();
  s->add_option("--out", sum_out, "Output directory")->required();

  SelectOpts sel;
  auto* sl = app.add_subcommand("select", "Choose m drivers from candidates by minimising the Delta loss");
  sel.series.add(sl, false);
  sl->add_option("--candidates", sel.candidates, "Candidate driver columns")->delimiter(',')->required();
  sl->add_option("--m", sel.m, "Drivers to choose")->capture_default_str();
  sl->add_option("--from", sel.from, "Objective window start")->capture_default_str();
  sl->add_option("--to", sel.to, "Objective window end")->capture_default_str();
  sl->add_option("--search", sel.search, "Search mode")
      ->check(CLI::IsMember({"exhaustive", "greedy"}))
      ->capture_default_str();
  sl->add_option("--loss", sel.loss, "Loss over the window")
      ->check(CLI::IsMember({"mean-abs-delta", "mean-sq-delta", "sum-abs-deviation"}))
      ->capture_default_str();
  sl->add_option("--out", sel.out, "Output directory")->required();

  std::string sys_file, imp_weights = "equal", imp_vars, imp_out;
  auto* im = app.add_subcommand("implied", "Solve the weight-factored system for Sigma_p w");
  im->add_option("--system", sys_file, "JSON with a \"snapshots\" array")->required();
  auto* wopt = im->add_option("--weights", imp_weights, "'equal' or a comma list; reports variances")
                   ->capture_default_str();
  im->add_option("--variances", imp_vars, "Comma list of constituent variances; reports weights")->excludes(wopt);
  im->add_option("--out", imp_out, "Output directory")->required();

  SimCheckOpts sc;
  auto* sk = app.add_subcommand("simulate-check", "Pathwise Ito consistency of dP over several step sizes");
  sk->add_option("--dt", sc.dts, "Step sizes")->delimiter(',')->capture_default_str();
  sk->add_option("--paths", sc.paths, "Paths per level")->capture_default_str();
  sk->add_option("--seed", sc.seed, "Random seed")->capture_default_str();
  sk->add_option("--horizon", sc.horizon, "Simulated years")->capture_default_str();
  sk->add_option("--out", sc.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ok) {
    return app.exit(ok);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return fail(2, "usage", err.what());
  }

  Run run;
  for (auto* sub : app.get_subcommands()) {
    run.command = sub->get_name();
    run.sub = sub;
  }
  try {
    if (const auto* cfg = app.get_config_ptr(); cfg && cfg->count() > 0)
      for (const auto& path : cfg->results()) {
        const std::string bytes = read_file(path);
        run.inputs.push_back(
            {{"path", path}, {"role", "config"}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
      }
    if (g->parsed()) run_gen(run, gen);
    else if (e->parsed()) run_estimate(run, est, est_out);
    else if (r->parsed()) run_residuals(run, res, res_out);
    else if (s->parsed()) run_sum(run, sum, sum_from, sum_to, sum_out);
    else if (sl->parsed()) run_select(run, sel);
    else if (im->parsed()) run_implied(run, sys_file, imp_weights, imp_vars, imp_out);
    else if (sk->parsed()) run_simulate_check(run, sc);
  } catch (const ContractError& err) {
    return fail(2, "usage", err.what());
  } catch (const DataError& err) {
    return fail(1, "data", err.what());
  } catch (const NumericError& err) {
    return fail(1, "numeric", err.what());
  } catch (const std::exception& err) {
    return fail(1, "internal", err.what());
  }
  return 0;
}
