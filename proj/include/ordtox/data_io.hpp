#pragma once

// Trial ledgers (CSV), run configuration (JSON) and the artifact files
// written by the command-line tool.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ordtox/diagnostics.hpp"
#include "ordtox/model.hpp"
#include "ordtox/predictive.hpp"
#include "ordtox/sampler.hpp"

namespace ordtox {

inline constexpr std::string_view kTrialHeader = "patient_id,cohort,okdose,aedose,grade";

/// Shortest decimal text that parses back to exactly `x`.
std::string format_double(double x);

// ---------------------------------------------------------------------------
// Trial ledgers

struct Violation {
  int patient_id = 0;
  std::string message;

  std::string to_string() const;
  bool operator==(const Violation&) const = default;
};

/// Every broken record invariant and every repeated id. Empty iff the
/// dataset is valid. Row order does not affect the multiset returned.
std::vector<Violation> validate(const TrialDataset& dataset);

/// Throws ValidationError listing all violations, if any.
void require_valid(const TrialDataset& dataset);

/// Structural parse only: header, field count and field syntax. Errors are
/// ValidationError with the 1-based line number.
TrialDataset parse_trial(std::string_view text);

/// Reads and parses a file without checking record invariants. Throws
/// IoError ("cannot read ...") when the file is unreadable.
TrialDataset read_trial(const std::filesystem::path& path);

/// read_trial, then rejects datasets with no patients or any violation.
TrialDataset load_trial(const std::filesystem::path& path);

std::string format_trial(const TrialDataset& dataset);
void save_trial(const TrialDataset& dataset, const std::filesystem::path& path);

/// ORDTOX_DATA_DIR if set, else the directory the build was configured with.
std::filesystem::path bundled_data_dir();

/// True if `name` is a bundled dataset ("afm11").
bool has_bundled(std::string_view name);

/// Throws IoError for unknown names.
TrialDataset load_bundled(std::string_view name);

/// Copy without the patients whose cohort label is listed.
TrialDataset drop_cohorts(const TrialDataset& dataset, const std::vector<std::string>& cohorts);

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  HyperPriors priors;
  McmcConfig mcmc;

  bool operator==(const RunConfig&) const = default;
};

/// Applies the keys of a flat JSON object on top of `base`. Keys:
/// mu_lo mu_hi cv_mean cv_prec r0_lo r0_hi r_prec truncate_cv chains adapt
/// burnin retained thin seed. Unknown keys and wrong types are
/// ValidationErrors, as are results failing HyperPriors/McmcConfig::check.
RunConfig apply_config(const nlohmann::json& object, const RunConfig& base = {});

RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json config_to_json(const RunConfig& config);

// ---------------------------------------------------------------------------
// Artifacts

inline constexpr std::string_view kSamplesHeader = "chain,iteration,parameter,value";
inline constexpr std::string_view kSummaryHeader =
    "parameter,group,lower95,median,upper95,mean,sd,sseff,psrf,mcse,central_lower95,"
    "central_upper95";
inline constexpr std::string_view kDensitiesHeader =
    "parameter,pool_okdose,pool_aedose,pool_grade,bandwidth,draws,log_dose,density";
inline constexpr std::string_view kPredictionHeader = "label,okdose,dose,grade,probability,mcse";

/// Long format, chain-major then iteration (1-based), then parameter order.
void write_samples_csv(std::ostream& out, const PosteriorSamples& samples);

struct SampleTable {
  std::vector<std::string> parameters;
  /// chains[c][p][t]
  std::vector<std::vector<std::vector<double>>> chains;
};
SampleTable read_samples_csv(std::istream& in);

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
std::vector<SummaryRow> read_summary_csv(std::istream& in);

void write_densities_csv(std::ostream& out, const std::vector<DensityCurve>& curves);
std::vector<DensityCurve> read_densities_csv(std::istream& in);

struct PredictionRow {
  std::string label;
  double okdose = 0;
  double dose = 0;
  int grade = 0;
  double probability = 0;
  double mcse = 0;
  bool operator==(const PredictionRow&) const = default;
};

void write_prediction_csv(std::ostream& out, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_prediction_csv(std::istream& in);

/// Plain-text convergence report: per-parameter psrf and SSeff, worst cases,
/// acceptance rates per chain.
void write_diagnostics(std::ostream& out, const PosteriorSamples& samples,
                       const std::vector<SummaryRow>& rows);

/// Writes `content` to `path` through a temporary file and a rename.
void write_file(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace ordtox
