#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "denma/cli.hpp"
#include "denma/io.hpp"
#include "denma/simgen.hpp"
#include "denma/spline.hpp"

using namespace denma;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Exit status of the installed executable, to check the process boundary too.
int exec_status(const std::string& args) {
  const std::string cmd = std::string(DENMA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

fs::path scratch() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / ("denma_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string read(const fs::path& p) { return io::read_file(p); }

const std::vector<std::string> kShort = {"--iter", "1500", "--burnin", "500"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// simulate -> fit shared by the cases below.
const fs::path& fitted_run() {
  static const fs::path run = [] {
    const auto sim = scratch() / "sim";
    REQUIRE(cli({"simulate", "--out", sim.string()}).code == 0);
    const auto dir = scratch() / "run1";
    const auto r = cli(with({"fit", "--data", (sim / "data.csv").string(), "--preset", "M1", "--seed", "7", "--out",
                             dir.string()},
                            kShort));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return dir;
  }();
  return run;
}

}  // namespace

TEST_CASE("simulate writes a dataset that fit accepts") {
  const auto& run = fitted_run();
  for (const char* f : {"data.csv", "spec.cfg", "knots.csv", "draws.csv", "placebo_draws.csv", "diagnostics.txt",
                        "observations.csv", "manifest.txt"}) {
    CHECK_MESSAGE(fs::exists(run / f), f);
  }
  CHECK(fs::exists(scratch() / "sim" / "truth.txt"));
  CHECK(fs::exists(scratch() / "sim" / "scenario.cfg"));
  CHECK(read(run / "data.csv") == read(scratch() / "sim" / "data.csv"));
  const auto truth = parse_truth(read(scratch() / "sim" / "truth.txt"));
  // Knots placed by the fit are the generator's knots.
  const auto knots = parse_knots(read(run / "knots.csv"));
  CHECK(knots.at("drugA").knots == truth.knots.at("drugA").knots);
  const auto diag = read(run / "diagnostics.txt");
  CHECK(diag.find("DIC = ") != std::string::npos);
  CHECK(diag.find("max_rhat") != std::string::npos);
  const auto manifest = read(run / "manifest.txt");
  CHECK(manifest.find("sha256.draws.csv") != std::string::npos);
  CHECK(manifest.find("seed = 7") != std::string::npos);
}

TEST_CASE("a fit is reproducible byte for byte") {
  const auto& run1 = fitted_run();
  const auto run2 = scratch() / "run2";
  REQUIRE(cli(with({"fit", "--data", (run1 / "data.csv").string(), "--preset", "M1", "--seed", "7", "--out",
                    run2.string()},
                   kShort))
              .code == 0);
  for (const char* f : {"draws.csv", "placebo_draws.csv", "diagnostics.txt", "knots.csv", "observations.csv"}) {
    CHECK_MESSAGE(read(run1 / f) == read(run2 / f), f);
  }
  const auto c1 = cli({"curves", "--run", run1.string(), "--agent", "drugA"});
  const auto c2 = cli({"curves", "--run", run2.string(), "--agent", "drugA"});
  CHECK(c1.code == 0);
  CHECK(c1.out == c2.out);
  CHECK(c1.out.starts_with("agent,dose,median,lo95,hi95\n"));

  const auto run3 = scratch() / "run3";
  REQUIRE(cli(with({"fit", "--data", (run1 / "data.csv").string(), "--seed", "8", "--out", run3.string()}, kShort))
              .code == 0);
  CHECK(read(run1 / "draws.csv") != read(run3 / "draws.csv"));
}

TEST_CASE("post-processing commands") {
  const auto run = fitted_run().string();
  SUBCASE("curves on both scales, all agents by default") {
    const auto all = cli({"curves", "--run", run});
    REQUIRE(all.code == 0);
    CHECK(std::count(all.out.begin(), all.out.end(), '\n') == 1 + 3 * 100);
    const auto lor = cli({"curves", "--run", run, "--agent", "drugB", "--scale", "logor", "--grid", "0,10,20"});
    REQUIRE(lor.code == 0);
    CHECK(lor.out.find("drugB,0,0,0,0\n") != std::string::npos);
    const auto out = scratch() / "curve.csv";
    CHECK(cli({"curves", "--run", run, "--agent", "drugC", "--out", out.string()}).code == 0);
    CHECK(read(out).starts_with("agent,dose"));
  }
  SUBCASE("extrapolation is refused unless asked for") {
    CHECK(cli({"curves", "--run", run, "--agent", "drugA", "--grid", "0,100"}).code == kExitValidation);
    CHECK(cli({"curves", "--run", run, "--agent", "drugA", "--grid", "0,100", "--allow-extrapolation"}).code == 0);
    CHECK(cli({"curves", "--run", run, "--agent", "nosuch"}).code == kExitValidation);
  }
  SUBCASE("rank without a common dose scale") {
    const auto r = cli({"rank", "--run", run, "--dose", "20"});
    CHECK(r.code == kExitValidation);
    CHECK(r.err.find("MissingEquivalence") != std::string::npos);
    const auto eq = scratch() / "eq.csv";
    io::write_file(eq, "agent,factor\ndrugA,1\ndrugB,1\ndrugC,1\n");
    const auto ok = cli({"rank", "--run", run, "--dose", "20", "--equivalence", eq.string()});
    REQUIRE(ok.code == 0);
    CHECK(ok.out.starts_with("agent,rank,probability\n"));
    CHECK(cli({"rank", "--run", run, "--doses", "drugA=20"}).code == 0);
  }
  SUBCASE("dic") {
    const auto out = scratch() / "obs.csv";
    const auto r = cli({"dic", "--run", run, "--out", out.string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.starts_with("DIC = "));
    CHECK(read(out).starts_with("study,arm,agent,dose,dbar,dplug,leverage,dres\n"));
  }
  SUBCASE("validate") {
    const auto r = cli({"validate", "--data", (fs::path(run) / "data.csv").string()});
    CHECK(r.code == 0);
    CHECK_FALSE(r.out.empty());
  }
}

TEST_CASE("run directory checks") {
  CHECK(cli({"dic", "--run", (scratch() / "absent").string()}).code == kExitRunDir);
  const auto copy = scratch() / "tampered";
  fs::copy(fitted_run(), copy, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  CHECK(cli({"dic", "--run", copy.string()}).code == 0);
  auto draws = read(copy / "draws.csv");
  draws[draws.size() - 2] = draws[draws.size() - 2] == '1' ? '2' : '1';
  io::write_file(copy / "draws.csv", draws);
  const auto r = cli({"dic", "--run", copy.string()});
  CHECK(r.code == kExitRunDir);
  CHECK(r.err.find("StaleManifest") != std::string::npos);
}

TEST_CASE("exit codes") {
  const auto dir = scratch();
  io::write_file(dir / "bad.csv", "study_id,agent,dose,events,n\nS1,placebo,0,5,4\n");
  CHECK(cli({"validate", "--data", (dir / "bad.csv").string()}).code == kExitParse);
  CHECK(cli({"fit", "--out", "x"}).code == kExitParse);
  CHECK(cli({"fit", "--data", (dir / "nope.csv").string(), "--out", (dir / "o").string()}).code == kExitParse);

  // M2 needs a risk-of-bias column.
  const auto data = (fitted_run() / "data.csv").string();
  const auto m2 = cli(with({"fit", "--data", data, "--preset", "M2", "--out", (dir / "m2").string()}, kShort));
  CHECK(m2.code == kExitValidation);
  CHECK(m2.err.find("rob") != std::string::npos);

  // M4 with a var_logor column that leaves a study blank.
  const auto sim = generate(default_scenario());
  std::string csv = "study_id,agent,dose,events,n,var_logor\n";
  for (const auto& s : sim.dataset.studies) {
    for (const auto& a : s.arms) {
      csv += s.id + "," + a.agent + "," + io::format_double(a.dose) + "," + std::to_string(a.events) + "," +
             std::to_string(a.sample_size) + "," + (s.id == "S3" ? "" : "0.05") + "\n";
    }
  }
  io::write_file(dir / "m4.csv", csv);
  const auto m4 = cli(with({"fit", "--data", (dir / "m4.csv").string(), "--preset", "M4", "--out",
                            (dir / "m4").string()},
                           kShort));
  CHECK(m4.code == kExitValidation);
  CHECK(m4.err.find("var_logor") != std::string::npos);

  CHECK(cli({"fit", "--data", data, "--preset", "M9", "--out", (dir / "m9").string()}).code == kExitValidation);
  CHECK(exec_status("validate --data " + (dir / "bad.csv").string()) == kExitParse);
  CHECK(exec_status("dic --run " + (dir / "absent").string()) == kExitRunDir);
  CHECK(exec_status("--version") == 0);
}

TEST_CASE("knot percentile flag") {
  const auto data = (fitted_run() / "data.csv").string();
  const auto dir = scratch() / "knots";
  REQUIRE(cli(with({"fit", "--data", data, "--knot-percentiles", "10,20,30", "--out", dir.string()},
                   {"--iter", "300", "--burnin", "100"}))
              .code == 0);
  const auto knots = parse_knots(read(dir / "knots.csv"));
  // drugA arm doses from the generator: percentile oracle on the same multiset.
  std::vector<double> doses;
  for (const auto& s : parse_dataset(read(dir / "data.csv")).studies)
    for (const auto& a : s.arms)
      if (a.agent == "drugA") doses.push_back(a.dose);
  CHECK(knots.at("drugA").knots == place_knots(doses, std::vector<double>{0.1, 0.2, 0.3}, "drugA").knots);
  CHECK(read(dir / "spec.cfg").find("0.1,0.2,0.3") != std::string::npos);
}

TEST_CASE("M4 covariate curves at low and high variance") {
  Scenario sc = default_scenario();
  sc.covariate = "var_logor";
  sc.covariate_low = 0.027;
  sc.covariate_high = 0.95;
  sc.covariate_effect = 0.01;
  const auto dir = scratch() / "m4sim";
  io::write_file(scratch() / "m4.cfg", emit_scenario(sc));
  REQUIRE(cli({"simulate", "--scenario", (scratch() / "m4.cfg").string(), "--out", dir.string()}).code == 0);
  const auto run = scratch() / "m4run";
  REQUIRE(cli(with({"fit", "--data", (dir / "data.csv").string(), "--preset", "M4", "--out", run.string()}, kShort))
              .code == 0);
  const auto low = scratch() / "low.csv", high = scratch() / "high.csv";
  REQUIRE(cli({"curves", "--run", run.string(), "--agent", "drugA", "--covariate-value", "0.027", "--out",
               low.string()})
              .code == 0);
  REQUIRE(cli({"curves", "--run", run.string(), "--agent", "drugA", "--covariate-value", "0.95", "--out",
               high.string()})
              .code == 0);
  CHECK(read(low) != read(high));
  // Both curves start at the same placebo response.
  CHECK(read(low).substr(0, read(low).find('\n', 30)) == read(high).substr(0, read(high).find('\n', 30)));
}
