#pragma once

// What-if predictions: fit a restricted ledger together with hypothetical
// patients whose grades are unobserved, then read off the distribution of
// the grade each would experience at a candidate dose.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "ordtox/diagnostics.hpp"
#include "ordtox/model.hpp"
#include "ordtox/sampler.hpp"

namespace ordtox {

struct HypotheticalPatient {
  std::string label;
  double okdose = 0.0;  // > 0: conditioned on no toxicity at this dose
  double dose = 0.0;

  bool operator==(const HypotheticalPatient&) const = default;
};

struct Scenario {
  TrialDataset base;
  std::vector<HypotheticalPatient> hypotheticals;

  /// Throws ValidationError on bad doses, duplicate or empty labels.
  void check() const;
};

struct GradeDistribution {
  std::array<double, 6> probs{};
  std::array<double, 6> mcse{};
  std::size_t draws = 0;

  /// P(grade >= 3) and P(grade = 5) with their Monte Carlo standard errors.
  double p_dlt = 0.0;
  double p_dlt_mcse = 0.0;
  double p_fatal() const { return probs[5]; }
  double p_fatal_mcse() const { return mcse[5]; }
};

/// Empirical distribution of ladder_grade(dose, mtd[label], r[label]) over
/// the retained draws. MCSEs use the effective sample size of each
/// indicator series.
GradeDistribution grade_distribution(const PosteriorSamples& samples, std::string_view label,
                                     double dose);

struct HypotheticalPrediction {
  HypotheticalPatient patient;
  GradeDistribution grades;
  SummaryRow mtd;
};

struct ScenarioPrediction {
  std::vector<HypotheticalPrediction> predictions;
  /// Hyperparameter rows followed by one row per hypothetical MTD.
  std::vector<SummaryRow> summary;
  PosteriorSamples samples;
};

ScenarioPrediction predict_scenario(const Scenario& scenario, const HyperPriors& priors,
                                    const McmcConfig& config);

struct Candidate {
  double okdose = 0.0;
  double dose = 0.0;
  bool operator==(const Candidate&) const = default;
};

struct CandidateReport {
  Candidate candidate;
  GradeDistribution grades;
};

struct DecisionReport {
  std::vector<CandidateReport> rows;  // sorted by dose, then okdose
  std::vector<SummaryRow> summary;
  std::string fingerprint;
  std::size_t draws = 0;
};

/// One fit over `base` plus one latent hypothetical per distinct conditioning
/// okdose (in order of first appearance). Candidates sharing an okdose are
/// scored on the same (mtd, r) draws, so P(grade >= g) is monotone in dose
/// among them.
DecisionReport dose_decision_report(const TrialDataset& base, const HyperPriors& priors,
                                    const McmcConfig& config, std::span<const Candidate> candidates);

/// Parses "130" (okdose 0) or "130:400" (okdose 130, dose 400).
Candidate parse_candidate(std::string_view token);

}  // namespace ordtox
