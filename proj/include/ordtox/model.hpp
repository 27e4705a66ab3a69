#pragma once

// Latent-MTD model for ordinal toxicity: each patient i has a maximum
// tolerated dose MTD_i and a ratio r_i; the grade-g threshold doses form the
// geometric ladder MTD_i * r_i^(g-3), g = 1..5. Observations censor MTD_i.

#include <array>
#include <compare>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ordtox {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// CTCAE grade, 0 (none) to 5 (fatal).
class ToxicityGrade {
 public:
  static constexpr int kMax = 5;

  constexpr ToxicityGrade() = default;
  /// Throws std::invalid_argument outside 0..5.
  explicit ToxicityGrade(int value);

  constexpr int value() const noexcept { return value_; }
  constexpr auto operator<=>(const ToxicityGrade&) const = default;

 private:
  int value_ = 0;
};

/// One row of the trial ledger. okdose == 0 means no dose was shown non-toxic.
struct PatientRecord {
  int patient_id = 0;
  std::string cohort;
  double okdose = 0.0;  // ng/kg/week
  double aedose = 0.0;  // ng/kg/week
  ToxicityGrade grade;

  bool operator==(const PatientRecord&) const = default;
};

struct TrialDataset {
  std::vector<PatientRecord> patients;

  std::size_t size() const noexcept { return patients.size(); }
  bool empty() const noexcept { return patients.empty(); }
};

struct HyperPriors {
  double mu_lo = 2.9;  // log ng/kg/week
  double mu_hi = 7.5;
  double cv_mean = 0.5;
  double cv_prec = 36.0;
  double r0_lo = 1.0;
  double r0_hi = 5.0;
  double r_prec = 50.0;  // precision of log r_i about log r0
  bool truncate_cv = true;

  /// Throws ValidationError naming the first broken bound. r0_lo == r0_hi
  /// is accepted and pins r0 to a point.
  void check() const;

  bool operator==(const HyperPriors&) const = default;
};

/// tau = 1 / ln(cv^2 + 1). Throws std::domain_error for cv <= 0 or non-finite.
double cv_to_tau(double cv);

struct LatentState {
  double mu = 0.0;
  double cv = 0.0;
  double r0 = 1.0;
  std::vector<double> mtd;
  std::vector<double> r;

  double tau() const { return cv_to_tau(cv); }
};

struct Interval {
  double lo = 0.0;
  double hi = kInf;
  bool lo_closed = true;
  bool hi_closed = false;

  bool empty() const noexcept;
  bool contains(double x) const noexcept;

  bool operator==(const Interval&) const = default;
};

/// Censoring evidence attached to one latent patient. A patient without an
/// observed grade (a hypothetical) is constrained only through okdose.
struct Evidence {
  double okdose = 0.0;
  double aedose = 0.0;
  std::optional<ToxicityGrade> grade;

  static Evidence from(const PatientRecord& record) {
    return {record.okdose, record.aedose, record.grade};
  }
};

/// Cutpoints (r^-2, r^-1, 1, r, r^2) on the dose/MTD ratio scale.
std::array<double, 5> ratio_cutpoints(double r);

/// Index of the first cutpoint of r that dose/mtd does not exceed (5 if it
/// exceeds them all). For r > 1 this is grade_at_dose without the checks;
/// for r <= 1 the ladder collapses and only grades 0 and 5 occur.
int ladder_grade(double dose, double mtd, double r);

/// Grade at `dose` for a patient with the given MTD and ratio. A dose
/// exactly on a threshold maps to the lower grade.
/// Requires dose >= 0, mtd > 0, r > 1, all finite.
ToxicityGrade grade_at_dose(double dose, double mtd, double r);

/// Smallest mtd with fl(dose / mtd) <= cut. Exact inverse of the ratio test
/// used by ladder_grade, so intervals and grades agree bit-for-bit at
/// boundaries.
double ratio_threshold(double dose, double cut);

/// Ratios must exceed this: 1 when a grade is observed (the cutpoints must
/// increase strictly), 0 when the grade is unobserved and merely computed.
double min_ratio(const Evidence& evidence) noexcept;

/// Set of mtd consistent with the evidence at ratio r > min_ratio. Always of
/// the form [lo, hi) (lo open when it is 0). May be empty.
Interval censoring_region(const Evidence& evidence, double r);

/// True iff r > min_ratio and (mtd, r) reproduces the evidence.
bool satisfies(const Evidence& evidence, double mtd, double r);

/// censoring_region for an observed record.
Interval mtd_support_interval(const PatientRecord& record, double r);

/// sup{r > 1 : mtd_support_interval(record, r) nonempty}.
double r_feasible_upper(const PatientRecord& record);

/// Log posterior density (up to a constant) of `state` given the evidence.
/// Returns -inf on any violated censoring constraint or out-of-range prior.
double log_posterior(const LatentState& state, std::span<const Evidence> evidence,
                     const HyperPriors& priors);
double log_posterior(const LatentState& state, const TrialDataset& data,
                     const HyperPriors& priors);

/// Log density of a normal with the given mean and precision.
double normal_log_density(double x, double mean, double precision);

}  // namespace ordtox
