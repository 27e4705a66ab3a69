#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ordtox/data_io.hpp"
#include "ordtox/errors.hpp"
#include "ordtox/predictive.hpp"

using namespace ordtox;

namespace {

TrialDataset cohorts_1_to_5() { return drop_cohorts(load_bundled("afm11"), {"6"}); }

const SummaryRow& row(const std::vector<SummaryRow>& rows, const std::string& name) {
  const auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& r) { return r.parameter == name; });
  REQUIRE(it != rows.end());
  return *it;
}

void check_distribution(const GradeDistribution& g) {
  const double total = std::accumulate(g.probs.begin(), g.probs.end(), 0.0);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  for (int k = 0; k < 6; ++k) {
    CHECK(g.probs[k] >= 0);
    CHECK(g.probs[k] <= 1);
    CHECK(g.mcse[k] >= 0);
  }
  CHECK(g.p_dlt == doctest::Approx(g.probs[3] + g.probs[4] + g.probs[5]).epsilon(1e-12));
}

}  // namespace

TEST_CASE("cohort 6 scenario") {
  const Scenario scenario{cohorts_1_to_5(), {{"15*", 0, 130}, {"16*", 130, 400}}};
  const auto pred = predict_scenario(scenario, HyperPriors{}, McmcConfig{});
  REQUIRE(pred.predictions.size() == 2);
  const auto& g15 = pred.predictions[0].grades;
  check_distribution(g15);
  check_distribution(pred.predictions[1].grades);
  CHECK(g15.draws == 10000);
  CHECK(g15.p_fatal() > 0.16 - 2 * g15.p_fatal_mcse());
  CHECK(std::abs(g15.p_fatal() - 0.17) <= 0.05);

  CHECK(std::abs(row(pred.summary, "mu").median - 5.167) < 0.12);
  CHECK(std::abs(row(pred.summary, "r0").median - 1.407) < 0.08);
  CHECK(std::abs(row(pred.summary, "mtd[15*]").median - 173.2) < 25);
  CHECK(pred.predictions[0].mtd.parameter == "mtd[15*]");
  // Hyperparameters and the two hypothetical rows only.
  CHECK(pred.summary.size() == 6);

  SUBCASE("the decision report reproduces the scenario on the same seed") {
    const std::vector<Candidate> c{{0, 130}, {130, 400}};
    const auto report = dose_decision_report(cohorts_1_to_5(), HyperPriors{}, McmcConfig{}, c);
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[0].candidate == Candidate{0, 130});
    CHECK(report.rows[0].grades.probs == g15.probs);
    CHECK(report.rows[1].grades.probs == pred.predictions[1].grades.probs);
    CHECK(report.draws == 10000);
  }
}

TEST_CASE("vanishing dose gives grade 0") {
  const Scenario scenario{cohorts_1_to_5(), {{"tiny", 0, 0.001}}};
  const auto pred = predict_scenario(scenario, HyperPriors{}, McmcConfig{});
  CHECK(pred.predictions[0].grades.probs[0] >= 0.999);
}

TEST_CASE("decision report: monotone in dose, conditioning lowers risk, low dose is safe") {
  const std::vector<Candidate> c{{0, 400}, {0, 2}, {0, 130}, {0, 20}, {0, 60}, {130, 400}, {0, 1000}};
  const auto report = dose_decision_report(cohorts_1_to_5(), HyperPriors{}, McmcConfig{}, c);
  REQUIRE(report.rows.size() == c.size());
  for (std::size_t k = 1; k < report.rows.size(); ++k) {
    const auto& a = report.rows[k - 1].candidate;
    const auto& b = report.rows[k].candidate;
    CHECK((a.dose < b.dose || (a.dose == b.dose && a.okdose <= b.okdose)));
  }
  std::vector<const CandidateReport*> unconditioned;
  for (const auto& r : report.rows) {
    check_distribution(r.grades);
    if (r.candidate.okdose == 0) unconditioned.push_back(&r);
  }
  for (std::size_t k = 1; k < unconditioned.size(); ++k) {
    for (int g = 1; g <= 5; ++g) {
      auto tail = [&](const CandidateReport* r) {
        return std::accumulate(r->grades.probs.begin() + g, r->grades.probs.end(), 0.0);
      };
      CHECK(tail(unconditioned[k - 1]) <= tail(unconditioned[k]) + 1e-12);
    }
  }
  auto find = [&](double ok, double dose) {
    return std::find_if(report.rows.begin(), report.rows.end(),
                        [&](const CandidateReport& r) { return r.candidate == Candidate{ok, dose}; })
        ->grades;
  };
  const auto plain = find(0, 400), stepped = find(130, 400);
  CHECK(stepped.p_dlt <= plain.p_dlt + 2 * std::hypot(plain.p_dlt_mcse, stepped.p_dlt_mcse));
  const auto low = find(0, 2);
  CHECK(low.p_fatal() < 0.05);
  CHECK(low.p_fatal() == 0.0);  // regression pin for the default seed
}

TEST_CASE("unconditioned hypotheticals leave the posterior unchanged") {
  const auto base = cohorts_1_to_5();
  McmcConfig config;
  const auto without = summarize(run_chains(base, HyperPriors{}, config));
  const Scenario scenario{base, {{"a", 0, 130}, {"b", 0, 400}}};
  const auto with = predict_scenario(scenario, HyperPriors{}, config).summary;
  for (const char* name : {"mu", "cv", "r0"}) {
    const auto& x = row(without, name);
    const auto& y = row(with, name);
    CHECK(std::abs(x.median - y.median) <= 2 * std::hypot(x.mcse, y.mcse));
  }
}

TEST_CASE("scenario and candidate validation") {
  const auto base = cohorts_1_to_5();
  CHECK_THROWS_AS((Scenario{base, {{"a", 0, 0}}}.check()), ValidationError);
  CHECK_THROWS_AS((Scenario{base, {{"a", 130, 130}}}.check()), ValidationError);
  CHECK_THROWS_AS((Scenario{base, {{"a", -1, 130}}}.check()), ValidationError);
  CHECK_THROWS_AS((Scenario{base, {{"a", 0, 1}, {"a", 0, 2}}}.check()), ValidationError);
  CHECK_THROWS_AS((Scenario{base, {{"3", 0, 1}}}.check()), ValidationError);  // clashes with patient 3
  CHECK_THROWS_AS((Scenario{base, {{"", 0, 1}}}.check()), ValidationError);
  CHECK_NOTHROW((Scenario{base, {{"15*", 0, 130}, {"16*", 130, 400}}}.check()));

  CHECK(parse_candidate("130") == Candidate{0, 130});
  CHECK(parse_candidate("130:400") == Candidate{130, 400});
  CHECK(parse_candidate("0.001") == Candidate{0, 0.001});
  for (const char* bad : {"", "abc", "130:", ":400", "400:130", "-5", "0", "1:2:3"}) {
    CHECK_THROWS_AS(parse_candidate(bad), ValidationError);
  }
  CHECK_THROWS_AS(dose_decision_report(base, HyperPriors{}, McmcConfig{}, {}), ValidationError);
}
