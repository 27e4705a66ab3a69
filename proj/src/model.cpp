#include "ordtox/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ordtox/errors.hpp"

namespace ordtox {

ToxicityGrade::ToxicityGrade(int value) : value_(value) {
  if (value < 0 || value > kMax) {
    throw std::invalid_argument("toxicity grade must be in 0..5, got " + std::to_string(value));
  }
}

void HyperPriors::check() const {
  auto finite = [](double x) { return std::isfinite(x); };
  if (!finite(mu_lo) || !finite(mu_hi) || !(mu_lo < mu_hi)) {
    throw ValidationError("mu_lo < mu_hi required");
  }
  if (!finite(cv_mean)) throw ValidationError("cv_mean must be finite");
  if (!finite(cv_prec) || !(cv_prec > 0)) throw ValidationError("cv_prec > 0 required");
  if (!finite(r0_lo) || !finite(r0_hi) || !(r0_lo >= 1.0) || !(r0_lo <= r0_hi)) {
    throw ValidationError("1 <= r0_lo <= r0_hi required");
  }
  if (!finite(r_prec) || !(r_prec > 0)) throw ValidationError("r_prec > 0 required");
}

double cv_to_tau(double cv) {
  if (!std::isfinite(cv) || !(cv > 0)) {
    throw std::domain_error("cv must be finite and > 0");
  }
  return 1.0 / std::log1p(cv * cv);
}

bool Interval::empty() const noexcept {
  if (lo < hi) return false;
  return !(lo == hi && lo_closed && hi_closed);
}

bool Interval::contains(double x) const noexcept {
  const bool above = lo_closed ? x >= lo : x > lo;
  const bool below = hi_closed ? x <= hi : x < hi;
  return above && below;
}

std::array<double, 5> ratio_cutpoints(double r) {
  return {1.0 / (r * r), 1.0 / r, 1.0, r, r * r};
}

int ladder_grade(double dose, double mtd, double r) {
  const double ratio = dose / mtd;
  const auto cuts = ratio_cutpoints(r);
  for (int i = 0; i < 5; ++i) {
    if (ratio <= cuts[i]) return i;
  }
  return 5;
}

ToxicityGrade grade_at_dose(double dose, double mtd, double r) {
  if (!std::isfinite(dose) || !std::isfinite(mtd) || !std::isfinite(r)) {
    throw std::invalid_argument("grade_at_dose: non-finite input");
  }
  if (dose < 0 || !(mtd > 0)) throw std::invalid_argument("grade_at_dose: need dose >= 0, mtd > 0");
  if (!(r > 1)) throw std::invalid_argument("grade_at_dose: ratio must exceed 1");
  return ToxicityGrade(ladder_grade(dose, mtd, r));
}

double ratio_threshold(double dose, double cut) {
  if (dose == 0) return 0.0;
  double m = dose / cut;
  // fl(dose / m) is nonincreasing in m; walk to the exact crossing.
  while (!(dose / m <= cut)) m = std::nextafter(m, kInf);
  for (double prev = std::nextafter(m, 0.0); prev > 0 && dose / prev <= cut;
       prev = std::nextafter(m, 0.0)) {
    m = prev;
  }
  return m;
}

namespace {

void raise_lower(Interval& iv, double lo) {
  if (lo > iv.lo || (lo == iv.lo && !iv.lo_closed)) {
    iv.lo = lo;
    iv.lo_closed = true;
  }
}

void lower_upper(Interval& iv, double hi) {
  if (hi < iv.hi || (hi == iv.hi && iv.hi_closed)) {
    iv.hi = hi;
    iv.hi_closed = false;
  }
}

}  // namespace

double min_ratio(const Evidence& evidence) noexcept { return evidence.grade ? 1.0 : 0.0; }

Interval censoring_region(const Evidence& evidence, double r) {
  if (!(r > min_ratio(evidence)) || !std::isfinite(r)) {
    throw std::invalid_argument("censoring_region: ratio out of range");
  }
  Interval iv{0.0, kInf, false, false};
  const auto cuts = ratio_cutpoints(r);
  if (evidence.okdose > 0) raise_lower(iv, ratio_threshold(evidence.okdose, cuts[0]));
  if (!evidence.grade) return iv;

  // grade g  <=>  aedose / mtd in (cuts[g-1], cuts[g]]
  const int g = evidence.grade->value();
  if (g < 5) raise_lower(iv, ratio_threshold(evidence.aedose, cuts[g]));
  if (g > 0) lower_upper(iv, ratio_threshold(evidence.aedose, cuts[g - 1]));
  return iv;
}

bool satisfies(const Evidence& evidence, double mtd, double r) {
  if (!(mtd > 0) || !(r > min_ratio(evidence))) return false;
  if (evidence.okdose > 0 && ladder_grade(evidence.okdose, mtd, r) != 0) return false;
  if (evidence.grade && ladder_grade(evidence.aedose, mtd, r) != evidence.grade->value()) {
    return false;
  }
  return true;
}

Interval mtd_support_interval(const PatientRecord& record, double r) {
  return censoring_region(Evidence::from(record), r);
}

double r_feasible_upper(const PatientRecord& record) {
  const int g = record.grade.value();
  if (record.okdose <= 0 || g <= 1) return kInf;
  const double span = record.aedose / record.okdose;
  if (g == 5) return std::pow(span, 0.25);
  return std::pow(span, 1.0 / (g - 1));
}

double normal_log_density(double x, double mean, double precision) {
  const double d = x - mean;
  return 0.5 * std::log(precision / (2.0 * std::numbers::pi)) - 0.5 * precision * d * d;
}

double log_posterior(const LatentState& state, std::span<const Evidence> evidence,
                     const HyperPriors& priors) {
  constexpr double kNegInf = -kInf;
  const std::size_t n = evidence.size();
  if (state.mtd.size() != n || state.r.size() != n) {
    throw std::invalid_argument("log_posterior: state size does not match evidence");
  }
  if (!(state.mu >= priors.mu_lo && state.mu <= priors.mu_hi)) return kNegInf;
  if (!std::isfinite(state.cv) || state.cv == 0 || (priors.truncate_cv && state.cv < 0)) {
    return kNegInf;
  }
  if (!(state.r0 >= priors.r0_lo && state.r0 <= priors.r0_hi)) return kNegInf;

  double lp = -std::log(priors.mu_hi - priors.mu_lo);
  lp += normal_log_density(state.cv, priors.cv_mean, priors.cv_prec);
  if (priors.r0_hi > priors.r0_lo) lp -= std::log(priors.r0_hi - priors.r0_lo);

  const double tau = 1.0 / std::log1p(state.cv * state.cv);
  const double log_r0 = std::log(state.r0);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = state.mtd[i];
    const double r = state.r[i];
    if (!(m > 0) || !(r > 0) || !std::isfinite(m) || !std::isfinite(r)) return kNegInf;
    if (!satisfies(evidence[i], m, r)) return kNegInf;
    const double log_r = std::log(r);
    const double log_m = std::log(m);
    lp += normal_log_density(log_r, log_r0, priors.r_prec) - log_r;
    lp += normal_log_density(log_m, state.mu, tau) - log_m;
  }
  return lp;
}

double log_posterior(const LatentState& state, const TrialDataset& data, const HyperPriors& priors) {
  std::vector<Evidence> evidence;
  evidence.reserve(data.size());
  for (const auto& p : data.patients) evidence.push_back(Evidence::from(p));
  return log_posterior(state, evidence, priors);
}

}  // namespace ordtox
