#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "json.hpp"

#include "ccpde/ccpde.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ccpde;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
  int code = -1;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("ccpde_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  Outcome run(const std::string& args, const std::string& env = "") {
    const fs::path err = dir / "stderr.txt";
    const std::string cmd =
        "cd '" + dir.string() + "' && " + env + " '" CCPDE_CLI "' " + args + " >/dev/null 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }
};

std::string sha256(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::string hex;
  char buf[3];
  for (unsigned k = 0; k < len; ++k) {
    std::snprintf(buf, sizeof buf, "%02x", md[k]);
    hex += buf;
  }
  return hex;
}

json error_record(const std::string& err) {
  const auto pos = err.rfind("{\"error\"");
  if (pos == std::string::npos) return {};
  return json::parse(err.substr(pos));
}

}  // namespace

TEST_F(Cli, GenThenResidualsIsByteDeterministic) {
  ASSERT_EQ(run("gen --n 2 --m 2 --steps 500 --seed 7 --out data.csv").code, 0);
  ASSERT_EQ(run("residuals --in data.csv --drivers D1,D2 --out rs").code, 0);
  ASSERT_EQ(run("gen --n 2 --m 2 --steps 500 --seed 7 --out data2.csv").code, 0);
  ASSERT_EQ(run("residuals --in data2.csv --drivers D1,D2 --out rs2").code, 0);
  EXPECT_EQ(slurp(dir / "data.csv"), slurp(dir / "data2.csv"));
  for (const char* f : {"pairs.csv", "mismatch.csv", "dates.csv", "delta.csv", "skipped.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "rs" / f)) << f;
    EXPECT_EQ(slurp(dir / "rs" / f), slurp(dir / "rs2" / f)) << f;
  }
  EXPECT_TRUE(fs::exists(dir / "rs" / "manifest.json"));
  const auto rows = slurp(dir / "rs" / "pairs.csv");
  EXPECT_EQ(rows.substr(0, rows.find('\n')), "date,constituent,driver,value,flag");
}

TEST_F(Cli, ManifestListsEveryOutputWithItsHash) {
  ASSERT_EQ(run("gen --steps 300 --seed 1 --out data.csv").code, 0);
  ASSERT_EQ(run("residuals --in data.csv --drivers D1,D2 --out rs").code, 0);
  const json m = json::parse(slurp(dir / "rs" / "manifest.json"));
  EXPECT_EQ(m["command"], "residuals");
  EXPECT_EQ(m["version"], kVersion);
  EXPECT_EQ(m["config"]["k"], "5");
  EXPECT_EQ(m["config"]["drivers"], "D1,D2");
  ASSERT_EQ(m["inputs"].size(), 1u);
  EXPECT_EQ(m["inputs"][0]["sha256"], sha256(slurp(dir / "data.csv")));

  std::set<std::string> listed;
  for (const auto& o : m["outputs"]) {
    const std::string p = o["path"];
    listed.insert(fs::path(p).filename().string());
    EXPECT_EQ(o["sha256"], sha256(slurp(dir / p))) << p;
  }
  for (const auto& entry : fs::directory_iterator(dir / "rs")) {
    const auto name = entry.path().filename().string();
    if (name != "manifest.json") {
      EXPECT_TRUE(listed.count(name)) << "orphan " << name;
    }
  }

  const json g = json::parse(slurp(dir / "data.csv.manifest.json"));
  EXPECT_EQ(g["outputs"].size(), 2u);
}

// The date carries a flag on some pair; under rank PIT the jumping constituent itself
// only reaches the top rank of its window, so its own pairs need not stand out.
TEST_F(Cli, JumpDateIsFlagged) {
  ASSERT_EQ(run("gen --n 2 --m 2 --steps 600 --seed 3 --jump 400:0:10 --out data.csv").code, 0);
  ASSERT_EQ(run("residuals --in data.csv --drivers D1,D2 --out rs").code, 0);
  const json truth = json::parse(slurp(dir / "data.csv.truth.json"));
  const std::string jump_date = truth["jumps"][0]["date"];
  std::istringstream in(slurp(dir / "rs" / "pairs.csv"));
  std::string line;
  bool flagged = false;
  while (std::getline(in, line))
    if (line.rfind(jump_date + ",", 0) == 0 && line.back() == '1') flagged = true;
  EXPECT_TRUE(flagged) << jump_date;
}

TEST_F(Cli, ImpliedRecoversForwardVariances) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> X(-2.0, 2.0), R(-0.8, 0.8), V(0.01, 0.2);
  const Eigen::Index n = 3, m = 2;
  const VectorXd var_true = (VectorXd(n) << 0.04, 0.09, 0.0625).finished();
  const VectorXd x_star = var_true / static_cast<double>(n);  // equal weights

  std::vector<ImpliedSnapshot> snaps;
  std::vector<VectorXd> us;
  std::vector<MatrixXd> rhos;
  for (int s = 0; s < 3; ++s) {
    VectorXd u(n), d(m);
    MatrixXd rho(n, m);
    for (Eigen::Index i = 0; i < n; ++i) u(i) = std_normal_cdf(X(rng));
    for (Eigen::Index j = 0; j < m; ++j) d(j) = std_normal_cdf(X(rng));
    for (Eigen::Index k = 0; k < rho.size(); ++k) rho.data()[k] = R(rng);
    MatrixXd L = MatrixXd::Zero(m, m);
    for (Eigen::Index k = 0; k < L.size(); ++k) L.data()[k] = V(rng);
    const DriverState ds(d);
    us.push_back(u);
    rhos.push_back(rho);
    snaps.push_back({build(u, ds, RhoMatrix(rho)), ds, L * L.transpose() + 0.01 * MatrixXd::Identity(m, m),
                     VectorXd::Zero(m)});
  }
  // Choose drifts so that x_star solves the system exactly.
  const auto base = implied_system(snaps);
  const VectorXd target = base.A * x_star + base.b;
  json doc;
  Eigen::Index r0 = 0;
  for (std::size_t k = 0; k < snaps.size(); ++k) {
    auto& s = snaps[k];
    s.mu_D = target.segment(r0, m) / (s.sys.pi * s.d.d).sum();
    r0 += m;
    json snap;
    snap["u"] = std::vector<double>(us[k].data(), us[k].data() + n);
    snap["d"] = std::vector<double>(s.d.d.data(), s.d.d.data() + m);
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> row;
      for (Eigen::Index j = 0; j < m; ++j) row.push_back(rhos[k](i, j));
      snap["rho"].push_back(row);
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      std::vector<double> row;
      for (Eigen::Index j = 0; j < m; ++j) row.push_back(s.Sigma_D(i, j));
      snap["Sigma_D"].push_back(row);
    }
    snap["mu_D"] = std::vector<double>(s.mu_D.data(), s.mu_D.data() + m);
    doc["snapshots"].push_back(snap);
  }
  std::ofstream(dir / "system.json") << doc.dump(2);

  ASSERT_EQ(run("implied --system system.json --weights equal --out imp").code, 0);
  const json out = json::parse(slurp(dir / "imp" / "implied.json"));
  ASSERT_EQ(out["variances"].size(), 3u);
  for (Eigen::Index i = 0; i < n; ++i)
    EXPECT_NEAR(out["variances"][static_cast<std::size_t>(i)].get<double>(), var_true(i), 1e-6 * var_true(i));
  EXPECT_FALSE(out["rank_deficient"].get<bool>());

  ASSERT_EQ(run("implied --system system.json --variances 0.04,0.09,0.0625 --out imp2").code, 0);
  const json w = json::parse(slurp(dir / "imp2" / "implied.json"));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w["weights"][i].get<double>(), 1.0 / 3.0, 1e-6);
}

TEST_F(Cli, OtherSubcommandsWriteTheirArtifacts) {
  ASSERT_EQ(run("gen --n 2 --m 3 --steps 300 --seed 2 --loadings 1,0,0,1,0,0 --out data.csv").code, 0);
  ASSERT_EQ(run("estimate --in data.csv --drivers D1,D2 --out est").code, 0);
  EXPECT_TRUE(fs::exists(dir / "est" / "estimates.csv"));
  EXPECT_TRUE(fs::exists(dir / "est" / "marginals.csv"));

  ASSERT_EQ(run("sum --in data.csv --drivers D1 --from 2000-04-01 --to 2000-06-30 --out sum").code, 0);
  const json sm = json::parse(slurp(dir / "sum" / "manifest.json"));
  EXPECT_GT(sm["summary"]["dates"].get<int>(), 0);

  ASSERT_EQ(run("select --in data.csv --constituents A1,A2 --candidates D1,D2,D3 --m 1 --out sel").code, 0);
  const json sel = json::parse(slurp(dir / "sel" / "selection.json"));
  EXPECT_EQ(sel["chosen"].size(), 1u);
  EXPECT_EQ(sel["trail"].size(), 3u);
  EXPECT_TRUE(json::parse(slurp(dir / "sel" / "manifest.json")).contains("proxy"));

  ASSERT_EQ(run("simulate-check --dt 0.02,0.01 --paths 4 --out sim").code, 0);
  const json sim = json::parse(slurp(dir / "sim" / "simulate_check.json"));
  EXPECT_EQ(sim["levels"].size(), 2u);
}

TEST_F(Cli, ConfigFileIsOverriddenByFlags) {
  ASSERT_EQ(run("gen --steps 300 --seed 4 --out data.csv").code, 0);
  std::ofstream(dir / "run.cfg") << "[residuals]\nk=3\ndrivers=D1,D2\n";
  ASSERT_EQ(run("--config run.cfg residuals --in data.csv --out a").code, 0);
  ASSERT_EQ(run("--config run.cfg residuals --in data.csv --k 4 --out b").code, 0);
  const json a = json::parse(slurp(dir / "a" / "manifest.json"));
  const json b = json::parse(slurp(dir / "b" / "manifest.json"));
  EXPECT_EQ(a["config"]["k"], "3");
  EXPECT_EQ(b["config"]["k"], "4");
  EXPECT_EQ(a["inputs"][0]["path"], "run.cfg");
}

TEST_F(Cli, DataDirectoryFromEnvironment) {
  fs::create_directories(dir / "store");
  ASSERT_EQ(run("gen --steps 200 --seed 4 --out store/data.csv").code, 0);
  EXPECT_EQ(run("residuals --in data.csv --drivers D1,D2 --out rs").code, 1);
  EXPECT_EQ(run("residuals --in data.csv --drivers D1,D2 --out rs", "CCPDE_DATA_DIR=store").code, 0);
}

TEST_F(Cli, ExitCodesAndErrorRecords) {
  auto o = run("residuals --in data.csv --drivers D1 --no-such-flag --out x");
  EXPECT_EQ(o.code, 2);
  EXPECT_EQ(error_record(o.err)["error"]["kind"], "usage");

  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("").code, 2);

  o = run("residuals --in missing.csv --drivers D1 --out x");
  EXPECT_EQ(o.code, 1);
  const json rec = error_record(o.err);
  EXPECT_EQ(rec["error"]["kind"], "data");
  EXPECT_NE(rec["error"]["message"].get<std::string>().find("missing.csv"), std::string::npos);

  std::ofstream(dir / "bad.csv") << "date,A1,D1\n2020-01-01,0.1,oops\n";
  o = run("residuals --in bad.csv --drivers D1 --out x");
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("line 2"), std::string::npos);

  ASSERT_EQ(run("gen --steps 200 --out data.csv").code, 0);
  EXPECT_EQ(run("residuals --in data.csv --drivers D9 --out x").code, 1);
  EXPECT_EQ(run("select --in data.csv --candidates D1,D2 --m 3 --out x").code, 2);
  EXPECT_EQ(run("residuals --in data.csv --drivers D1,D2 --weights 1,2,3 --out x").code, 2);

  std::ofstream(dir / "sys.json") << R"({"snapshots": [{"u": [0.5]}]})";
  o = run("implied --system sys.json --out x");
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("snapshots[0].d is missing"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "x" / "implied.json"));
}

TEST_F(Cli, HelpAndVersionExitZero) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("--version").code, 0);
  EXPECT_EQ(run("residuals --help").code, 0);
}
