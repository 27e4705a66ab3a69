#include "ordtox/predictive.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "ordtox/errors.hpp"

namespace ordtox {

namespace {

void check_doses(const std::string& what, double okdose, double dose) {
  if (!std::isfinite(dose) || !(dose > 0)) throw ValidationError(what + ": dose must be > 0");
  if (!std::isfinite(okdose) || okdose < 0) throw ValidationError(what + ": okdose must be >= 0");
  if (okdose > 0 && !(okdose < dose)) throw ValidationError(what + ": okdose must be below dose");
}

double indicator_mcse(const ChainDraws& indicator, double p) {
  if (p <= 0 || p >= 1) return 0.0;
  const double ess = detail::geyer_ess(indicator);
  return std::sqrt(p * (1 - p) / ess);
}

}  // namespace

void Scenario::check() const {
  std::set<std::string> labels;
  for (const auto& p : base.patients) labels.insert(std::to_string(p.patient_id));
  for (const auto& h : hypotheticals) {
    if (h.label.empty()) throw ValidationError("hypothetical patients need a label");
    check_doses("hypothetical " + h.label, h.okdose, h.dose);
    if (!labels.insert(h.label).second) throw ValidationError("duplicate label " + h.label);
  }
}

GradeDistribution grade_distribution(const PosteriorSamples& samples, std::string_view label,
                                     double dose) {
  const std::size_t pm = samples.index(mtd_name(label));
  const std::size_t pr = samples.index(ratio_name(label));
  const std::size_t chains = samples.chain_count();
  const std::size_t n = samples.draws_per_chain();

  std::array<ChainDraws, 6> by_grade;
  ChainDraws dlt(chains, std::vector<double>(n, 0.0));
  for (auto& g : by_grade) g.assign(chains, std::vector<double>(n, 0.0));
  std::array<std::size_t, 6> counts{};
  std::size_t dlt_count = 0;
  for (std::size_t c = 0; c < chains; ++c) {
    const auto mtd = samples.draws(c, pm);
    const auto r = samples.draws(c, pr);
    for (std::size_t t = 0; t < n; ++t) {
      const int g = ladder_grade(dose, mtd[t], r[t]);
      by_grade[g][c][t] = 1.0;
      ++counts[g];
      if (g >= 3) {
        dlt[c][t] = 1.0;
        ++dlt_count;
      }
    }
  }

  GradeDistribution out;
  out.draws = chains * n;
  const double total = static_cast<double>(out.draws);
  for (int g = 0; g < 6; ++g) {
    out.probs[g] = static_cast<double>(counts[g]) / total;
    out.mcse[g] = indicator_mcse(by_grade[g], out.probs[g]);
  }
  out.p_dlt = static_cast<double>(dlt_count) / total;
  out.p_dlt_mcse = indicator_mcse(dlt, out.p_dlt);
  return out;
}

namespace {

std::vector<SummaryRow> restricted_rows(const PosteriorSamples& samples) {
  auto rows = summarize(samples);
  std::erase_if(rows, [](const SummaryRow& r) {
    return r.group != "hyperparameters" && r.group != "hypothetical";
  });
  return rows;
}

}  // namespace

ScenarioPrediction predict_scenario(const Scenario& scenario, const HyperPriors& priors,
                                    const McmcConfig& config) {
  scenario.check();
  std::vector<Hypothetical> latent;
  for (const auto& h : scenario.hypotheticals) latent.push_back({h.label, h.okdose});

  ScenarioPrediction out;
  out.samples = run_chains(PosteriorModel(scenario.base, std::move(latent)), priors, config);
  out.summary = restricted_rows(out.samples);
  for (const auto& h : scenario.hypotheticals) {
    HypotheticalPrediction p;
    p.patient = h;
    p.grades = grade_distribution(out.samples, h.label, h.dose);
    const auto name = mtd_name(h.label);
    p.mtd = *std::find_if(out.summary.begin(), out.summary.end(),
                          [&](const SummaryRow& r) { return r.parameter == name; });
    out.predictions.push_back(std::move(p));
  }
  return out;
}

DecisionReport dose_decision_report(const TrialDataset& base, const HyperPriors& priors,
                                    const McmcConfig& config, std::span<const Candidate> candidates) {
  if (candidates.empty()) throw ValidationError("at least one candidate dose is required");
  std::vector<double> okdoses;
  for (const auto& c : candidates) {
    check_doses("candidate", c.okdose, c.dose);
    if (std::find(okdoses.begin(), okdoses.end(), c.okdose) == okdoses.end()) okdoses.push_back(c.okdose);
  }
  auto group_label = [&](double okdose) {
    const auto k = std::find(okdoses.begin(), okdoses.end(), okdose) - okdoses.begin();
    return "h" + std::to_string(k + 1);
  };

  std::vector<Hypothetical> latent;
  for (double ok : okdoses) latent.push_back({group_label(ok), ok});
  const auto samples = run_chains(PosteriorModel(base, std::move(latent)), priors, config);

  DecisionReport report;
  report.fingerprint = samples.fingerprint();
  report.draws = samples.total_draws();
  report.summary = restricted_rows(samples);
  for (const auto& c : candidates) {
    report.rows.push_back({c, grade_distribution(samples, group_label(c.okdose), c.dose)});
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const auto& a, const auto& b) {
    if (a.candidate.dose != b.candidate.dose) return a.candidate.dose < b.candidate.dose;
    return a.candidate.okdose < b.candidate.okdose;
  });
  return report;
}

Candidate parse_candidate(std::string_view token) {
  auto number = [&](std::string_view text) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
      throw ValidationError("bad candidate dose '" + std::string(token) + "'");
    }
    return v;
  };
  Candidate c;
  if (const auto colon = token.find(':'); colon != std::string_view::npos) {
    c.okdose = number(token.substr(0, colon));
    c.dose = number(token.substr(colon + 1));
  } else {
    c.dose = number(token);
  }
  check_doses("candidate '" + std::string(token) + "'", c.okdose, c.dose);
  return c;
}

}  // namespace ordtox
