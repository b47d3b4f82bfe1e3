#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "denma/dataset.hpp"
#include "denma/error.hpp"
#include "denma/io.hpp"
#include "denma/simgen.hpp"

using namespace denma;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::Io;
}

const char* kTwoRow =
    "study_id,agent,dose,events,n\n"
    "S1,placebo,0,40,100\n"
    "S1,drugA,20,55,100\n";

}  // namespace

TEST_CASE("minimal file parses into one study with two arms") {
  const auto d = parse_dataset(kTwoRow);
  REQUIRE(d.studies.size() == 1);
  const auto& s = d.studies[0];
  CHECK(s.id == "S1");
  REQUIRE(s.arms.size() == 2);
  CHECK(s.arms[0].agent == "placebo");
  CHECK(s.arms[0].events == 40);
  CHECK(s.arms[1].agent == "drugA");
  CHECK(s.arms[1].dose == 20.0);
  CHECK(s.arms[1].events == 55);
  CHECK(s.arms[1].sample_size == 100);
  REQUIRE(d.agents.size() == 1);
  CHECK(d.agents[0].id == "drugA");
}

TEST_CASE("events above n names the offending row") {
  const char* text =
      "study_id,agent,dose,events,n\n"
      "S1,placebo,0,40,100\n"
      "S1,drugA,20,120,100\n";
  try {
    parse_dataset(text);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EventsExceedN);
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
}

TEST_CASE("ingestion errors") {
  CHECK(code_of([] { parse_dataset("study_id,agent,dose,events\nS1,placebo,0,1\n"); }) == ErrorCode::MissingColumn);
  CHECK(code_of([] { parse_dataset("study_id,agent,dose,events,n\nS1,placebo,0,1,10\nS1,drugA,abc,1,10\n"); }) ==
        ErrorCode::NonNumericDose);
  CHECK(code_of([] { parse_dataset("study_id,agent,dose,events,n\nS1,placebo,0,1,10\nS1,drugA,10,x,10\n"); }) ==
        ErrorCode::NonNumericValue);
  CHECK(code_of([] {
          parse_dataset("study_id,agent,dose,events,n\nS1,placebo,0,1,10\nS1,drugA,10,1,10\nS1,drugA,10,2,10\n");
        }) == ErrorCode::DuplicateArm);
  // placebo must carry dose 0 and active agents a positive dose
  CHECK(code_of([] { parse_dataset("study_id,agent,dose,events,n\nS1,placebo,5,1,10\nS1,drugA,10,1,10\n"); }) ==
        ErrorCode::InvalidArm);
  CHECK(code_of([] { parse_dataset("study_id,agent,dose,events,n\nS1,placebo,0,1,10\nS1,drugA,0,1,10\n"); }) ==
        ErrorCode::InvalidArm);
  // a single-arm study is not a comparison
  CHECK(code_of([] { parse_dataset("study_id,agent,dose,events,n\nS1,drugA,10,1,10\n"); }) == ErrorCode::InvalidArm);
}

TEST_CASE("simulated dataset round-trips through emit and parse") {
  Scenario sc = default_scenario();
  sc.studies = 4;
  sc.covariate = "year";
  sc.covariate_low = 2000;
  sc.covariate_high = 2020;
  const auto sim = generate(sc);
  REQUIRE(sim.dataset.studies.size() == 4);
  const auto again = parse_dataset(emit_dataset(sim.dataset));
  CHECK(again == sim.dataset);
  CHECK(emit_dataset(again) == emit_dataset(sim.dataset));
}

TEST_CASE("network report") {
  SUBCASE("single placebo-controlled study flags the one-dose agent") {
    const auto r = validate_network(parse_dataset(kTwoRow));
    CHECK(r.components.size() == 1);
    REQUIRE(r.flags.size() == 1);
    CHECK(r.flags[0].find("1 distinct dose") != std::string::npos);
  }
  SUBCASE("two studies with no shared node are two components") {
    const auto d = parse_dataset(
        "study_id,agent,dose,events,n\n"
        "S1,drugA,10,5,50\nS1,drugB,20,6,50\n"
        "S2,drugC,10,5,50\nS2,drugD,20,6,50\n");
    const auto r = validate_network(d);
    CHECK(r.components.size() == 2);
    CHECK_FALSE(r.connected());
  }
  SUBCASE("default simulation is connected with no flags") {
    const auto r = validate_network(generate(default_scenario()).dataset);
    CHECK(r.connected());
    CHECK(r.flags.empty());
    for (const auto& d : r.dose_counts) CHECK(d.distinct_doses == 3);
  }
}

TEST_CASE("reference arm selection") {
  auto study = [](const char* text) { return parse_dataset(text).studies.at(0); };
  CHECK(select_reference_arm(study("study_id,agent,dose,events,n\nS,drugA,20,5,50\nS,placebo,0,5,50\n")) == 1);
  CHECK(select_reference_arm(study("study_id,agent,dose,events,n\nS,drugB,50,5,50\nS,drugA,20,5,50\n")) == 1);
  CHECK(select_reference_arm(study("study_id,agent,dose,events,n\nS,drugB,20,5,50\nS,drugA,20,5,50\n")) == 1);
  // equivalence scale changes which dose is smaller
  EquivalenceTable t;
  t.factors = {{"drugA", 10.0}, {"drugB", 1.0}};
  const auto s = study("study_id,agent,dose,events,n\nS,drugA,20,5,50\nS,drugB,50,5,50\n");
  CHECK(select_reference_arm(s) == 0);
  CHECK(select_reference_arm(s, &t) == 1);
  // deterministic
  CHECK(select_reference_arm(s, &t) == select_reference_arm(s, &t));
}

TEST_CASE("dose harmonization") {
  const auto d = parse_dataset(
      "study_id,agent,dose,events,n\n"
      "S1,placebo,0,10,50\nS1,drugA,25,20,50\nS1,drugB,10,15,50\n");
  EquivalenceTable t;
  t.factors = {{"drugA", 2.0}, {"drugB", 1.0}};
  const auto h = harmonize_doses(d, t);
  CHECK(h.harmonized);
  CHECK(h.studies[0].arms[0].dose == 0.0);
  CHECK(h.studies[0].arms[1].dose == 50.0);
  CHECK(h.studies[0].arms[1].original_dose == 25.0);
  CHECK(h.studies[0].arms[1].events == 20);
  CHECK(h.studies[0].arms[1].sample_size == 50);

  EquivalenceTable partial;
  partial.factors = {{"drugA", 2.0}};
  try {
    harmonize_doses(d, partial);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingEquivalence);
    CHECK(std::string(e.what()).find("drugB") != std::string::npos);
  }
}

TEST_CASE("equivalence table parsing") {
  const auto t = parse_equivalence("agent,factor,class\nfluoxetine,1,ssri\nparoxetine,1,ssri\nvenlafaxine,0.5,snri\n");
  CHECK(t.factor("venlafaxine") == 0.5);
  CHECK(t.classes.at("paroxetine") == "ssri");
  CHECK(code_of([] { parse_equivalence("agent,factor\ndrugA,2\n"); }) == ErrorCode::ParseFailure);
  CHECK(code_of([] { parse_equivalence("agent,factor\ndrugA,-1\n"); }) == ErrorCode::NonNumericValue);
}

TEST_CASE("covariate centring") {
  const auto d = parse_dataset(
      "study_id,agent,dose,events,n,year\n"
      "S1,placebo,0,10,50,2005\nS1,drugA,10,12,50,2005\n"
      "S2,placebo,0,10,50,2010\nS2,drugA,10,12,50,2010\n"
      "S3,placebo,0,10,50,2015\nS3,drugA,10,12,50,2015\n");
  CHECK(center_covariate(d, "year", 2010) == std::vector<double>{-5, 0, 5});
  CHECK(center_covariate(d, "year", 0) == std::vector<double>{2005, 2010, 2015});
  CHECK(code_of([&] { center_covariate(d, "rob", 0); }) == ErrorCode::MissingCovariate);
}

TEST_CASE("variance of the log odds ratio") {
  // Independent closed form for a 2x2 table.
  auto oracle = [](double a, double b, double c, double dd) { return 1 / a + 1 / b + 1 / c + 1 / dd; };
  CHECK(log_or_variance(40, 100, 55, 100) == doctest::Approx(oracle(40, 60, 55, 45)).epsilon(1e-14));
  CHECK(log_or_variance(0, 20, 5, 20) == doctest::Approx(oracle(0.5, 20.5, 5.5, 15.5)).epsilon(1e-14));

  const auto d = parse_dataset(
      "study_id,agent,dose,events,n\n"
      "S1,placebo,0,40,100\nS1,drugA,10,45,100\nS1,drugA,20,55,100\n");
  const auto v = with_var_logor(d);
  CHECK(v.studies[0].covariates.at("var_logor") == doctest::Approx(oracle(40, 60, 55, 45)).epsilon(1e-14));
}
