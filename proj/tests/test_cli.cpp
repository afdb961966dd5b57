#include "helpers.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string workdir() {
  static std::string dir = [] {
    char tmpl[] = "/tmp/locmix_cli_XXXXXX";
    char* d = mkdtemp(tmpl);
    REQUIRE(d != nullptr);
    return std::string(d);
  }();
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string write_file(const std::string& name, const std::string& content) {
  std::string path = workdir() + "/" + name;
  std::ofstream f(path, std::ios::binary);
  f << content;
  return path;
}

CliResult run_cli(const std::string& args, const std::string& env = "") {
  std::string so = workdir() + "/stdout.txt";
  std::string se = workdir() + "/stderr.txt";
  std::string cmd = env + (env.empty() ? "" : " ") + LOCMIX_BIN_PATH + " " + args + " > " + so +
                    " 2> " + se;
  int rc = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = slurp(so);
  r.err = slurp(se);
  return r;
}

const std::string kPair = R"({"type":"hardcore","n":2,"edges":[[0,1]],"lambda":1.0})";
const std::string kRing6 =
    R"({"type":"hardcore","n":6,"edges":[[0,1],[1,2],[2,3],[3,4],[4,5],[5,0]],"lambda":0.5})";
const std::string kProduct = R"({"type":"product","bias":[0.2,-0.3,0.4]})";
const std::string kGrid =
    R"({"type":"grid","potential":"gaussian","mu":1.0,"interval":[-8,8],"m":97})";

}  // namespace

TEST_CASE("analyze reports the spectrum of a hard pair", "[cli]") {
  std::string model = write_file("pair.json", kPair);
  CliResult r = run_cli("analyze --model " + model + " --chain glauber --seed 7");
  REQUIRE(r.code == 0);
  json d = json::parse(r.out);
  CHECK(d["command"] == "analyze");
  CHECK(d["version"] == "0.1.0");
  CHECK(d["seed"] == 7);
  CHECK(d["config_hash"].get<std::string>().size() == 16);
  CHECK(d["model"]["type"] == "hardcore");
  CHECK(d["model"]["n"] == 2);
  CHECK(d["model"]["states"] == 3);
  CHECK(d["gap"].get<double>() == Catch::Approx(0.25).margin(1e-12));
  CHECK(d["eigenvalues_top"][0].get<double>() == Catch::Approx(1.0).margin(1e-10));
  CHECK(d["mlsi_upper"].get<double>() >= d["gap"].get<double>() - 1e-10);
  REQUIRE(d["tmix"].size() == 3);
  for (const auto& row : d["tmix"]) {
    CHECK(row["t"].get<int>() >= 1);
    CHECK(row["ratio"].get<double>() <= 1.0);
    CHECK(row["fact_bound"].get<double>() > 0);
  }
}

TEST_CASE("zero coupling gives the product gap", "[cli]") {
  std::string model = write_file("free3.json", R"({"type":"ising","J":[[0,0,0],[0,0,0],[0,0,0]]})");
  CliResult r = run_cli("analyze --model " + model + " --chain glauber --seed 3");
  REQUIRE(r.code == 0);
  json d = json::parse(r.out);
  CHECK(d["gap"].get<double>() == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("malformed model files name the parse position", "[cli]") {
  std::string model = write_file("broken.json", R"({"type":"hardcore","n":2,"edges":[[0,1]],)");
  CliResult r = run_cli("analyze --model " + model + " --chain glauber --seed 3");
  CHECK(r.code == 2);
  CHECK(r.err.find("parse error") != std::string::npos);
  CHECK(r.err.find("column") != std::string::npos);
}

TEST_CASE("stochastic commands require a seed", "[cli]") {
  std::string model = write_file("pair2.json", kPair);
  CliResult r = run_cli("analyze --model " + model);
  CHECK(r.code == 2);
  CHECK(r.err.find("--seed") != std::string::npos);
}

TEST_CASE("unique-regime influence certificate carries the budget claim", "[cli]") {
  std::string model = write_file("ring6.json", kRing6);
  CliResult r = run_cli("certify --model " + model + " --kind si-pinnings --seed 5");
  REQUIRE(r.code == 0);
  json d = json::parse(r.out);
  CHECK(d["claim_source"] == "144/delta");
  const json& c = d["certificate"];
  CHECK(c["kind"] == "SI-pinnings");
  CHECK(c["pass"] == true);
  double delta = 1.0 - 0.5 / 4.0;
  CHECK(c["claimed"].get<double>() == Catch::Approx(144.0 / delta).margin(1e-9));
  CHECK(c["constant"].get<double>() < c["claimed"].get<double>());
}

TEST_CASE("certificates are reproducible run to run", "[cli]") {
  std::string model = write_file("prod.json", kProduct);
  std::string args = "certify --model " + model + " --kind ent-stab-H --seed 8";
  CliResult a = run_cli(args);
  CliResult b = run_cli(args);
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(a.out == b.out);
  json d = json::parse(a.out);
  CHECK(d["certificate"]["constant"].get<double>() >= 1.0 - 1e-9);
}

TEST_CASE("unknown certificate kinds are config errors", "[cli]") {
  std::string model = write_file("ring6b.json", kRing6);
  CliResult r = run_cli("certify --model " + model + " --kind frobnicate --seed 1");
  CHECK(r.code == 2);
  CHECK(r.err.find("frobnicate") != std::string::npos);
}

TEST_CASE("negative-fields paths conserve the mean weights", "[cli]") {
  std::string model = write_file("ring6c.json", kRing6);
  CliResult r =
      run_cli("simulate --model " + model + " --scheme nf --horizon 2 --paths 2000 --seed 9");
  REQUIRE(r.code == 0);
  json d = json::parse(r.out);
  CHECK(d["scheme"] == "nf");
  CHECK(d["paths"] == 2000);
  CHECK(d["horizon"].get<double>() == Catch::Approx(2.0));
  const json& m = d["martingale"];
  CHECK(m["pass"] == true);
  CHECK(m["max_dev"].get<double>() <= m["allowance"].get<double>());
  for (const auto& ev : d["first_path_events"]) {
    CHECK(ev["kind"] == "pin");
    CHECK(ev["time"].get<double>() >= 0.0);
  }
}

TEST_CASE("interaction-norm pipeline passes on a norm-1/4 coupling", "[cli]") {
  std::string model = write_file("sk2.json", R"({"type":"ising","J":[[0.125,0.125],[0.125,0.125]]})");
  CliResult r = run_cli("pipeline --model " + model + " --name theorem-sk --seed 11");
  REQUIRE(r.code == 0);
  json d = json::parse(r.out);
  CHECK(d["report"]["pipeline"] == "interaction-norm");
  for (const auto& ing : d["report"]["ingredients"]) CHECK(ing["pass"] == true);
}

TEST_CASE("over-threshold fugacity aborts the occupancy pipeline", "[cli]") {
  std::string model = write_file(
      "hot6.json",
      R"({"type":"hardcore","n":6,"edges":[[0,1],[1,2],[2,3],[3,4],[4,5],[5,0]],"lambda":9.0})");
  CliResult r = run_cli("pipeline --model " + model + " --name hardcore --seed 5");
  CHECK(r.code == 3);
  CHECK(r.err.find("uniqueness") != std::string::npos);
}

TEST_CASE("reports are byte-identical for a fixed config and seed", "[cli]") {
  std::string model = write_file("ring6d.json", kRing6);
  std::string args = "analyze --model " + model + " --chain l-glauber --l 2 --seed 42";
  CliResult a = run_cli(args);
  CliResult b = run_cli(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CliResult c = run_cli("analyze --model " + model + " --chain l-glauber --l 2 --seed 43");
  REQUIRE(c.code == 0);
  json da = json::parse(a.out), dc = json::parse(c.out);
  CHECK(da["config_hash"] != dc["config_hash"]);
}

TEST_CASE("thread budget does not change report bytes", "[cli]") {
  std::string model = write_file("ring6e.json", kRing6);
  std::string args = "analyze --model " + model + " --chain glauber --seed 6";
  CliResult a = run_cli(args, "LOCMIX_THREADS=1");
  CliResult b = run_cli(args, "LOCMIX_THREADS=2");
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(a.out == b.out);
}

TEST_CASE("the identity suite passes end to end", "[cli]") {
  CliResult r = run_cli("verify");
  REQUIRE(r.code == 0);
  json d = json::parse(r.out);
  CHECK(d["pass"] == true);
  REQUIRE(d["checks"].size() == 10);
  for (const auto& c : d["checks"]) CHECK(c["pass"] == true);
}

TEST_CASE("config files merge under explicit flags", "[cli]") {
  std::string model = write_file("ring6f.json", kRing6);
  std::string cfg = write_file(
      "cfg.json",
      R"({"model":")" + model + R"(","chain":"glauber","seed":77,"budget":{"restarts":5}})");
  CliResult a = run_cli("analyze --config " + cfg);
  REQUIRE(a.code == 0);
  json da = json::parse(a.out);
  CHECK(da["seed"] == 77);
  CHECK(da["mlsi_restarts"] == 5);
  CliResult b = run_cli("analyze --config " + cfg + " --seed 41");
  REQUIRE(b.code == 0);
  json db = json::parse(b.out);
  CHECK(db["seed"] == 41);
  CHECK(da["gap"] == db["gap"]);
}

TEST_CASE("chains and models must agree", "[cli]") {
  std::string cube = write_file("ring6g.json", kRing6);
  std::string grid = write_file("grid.json", kGrid);
  CHECK(run_cli("analyze --model " + cube + " --chain rgd --seed 1").code == 2);
  CHECK(run_cli("analyze --model " + grid + " --chain glauber --seed 1").code == 2);
  CHECK(run_cli("certify --model " + grid + " --kind si-pinnings --seed 1").code == 2);
}

TEST_CASE("resampling pipeline certifies the gaussian rate", "[cli]") {
  std::string model = write_file("grid2.json", kGrid);
  CliResult r = run_cli("pipeline --model " + model + " --name rgo --eta 1.0 --seed 25");
  REQUIRE(r.code == 0);
  json d = json::parse(r.out);
  const json& rep = d["report"];
  CHECK(rep["pipeline"] == "rgo");
  CHECK(rep["bound"].get<double>() == Catch::Approx(0.5).margin(1e-12));
  CHECK(rep["gap"].get<double>() == Catch::Approx(0.5).margin(1e-3));
  CHECK(rep["kl_decay_pass"] == true);
  CHECK(rep["pass"] == true);
}

TEST_CASE("reports copy to the out file verbatim", "[cli]") {
  std::string model = write_file("pair3.json", kPair);
  std::string out = workdir() + "/report_copy.json";
  CliResult r = run_cli("analyze --model " + model + " --chain glauber --seed 4 --out " + out);
  REQUIRE(r.code == 0);
  CHECK(slurp(out) == r.out);
}
