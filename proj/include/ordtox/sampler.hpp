#pragma once

// Metropolis-within-Gibbs sampler for the latent-MTD model: exact truncated
// lognormal Gibbs updates for each MTD_i, adaptive random-walk Metropolis for
// log r_i, mu, cv and r0, plus a joint shift of r0 and all r_i.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ordtox/model.hpp"
#include "ordtox/random.hpp"

namespace ordtox {

inline constexpr std::uint64_t kDefaultSeed = 20181031;

struct McmcConfig {
  std::size_t chains = 4;
  std::size_t adapt_iters = 1000;
  std::size_t burnin_iters = 4000;
  std::size_t retained_per_chain = 2500;
  std::size_t thin = 10;
  std::uint64_t seed = kDefaultSeed;

  void check() const;
  std::size_t retained_total() const { return chains * retained_per_chain; }

  bool operator==(const McmcConfig&) const = default;
};

/// A latent patient whose grade is unobserved. okdose > 0 conditions on no
/// toxicity at that dose.
struct Hypothetical {
  std::string label;
  double okdose = 0.0;
};

/// Everything the posterior conditions on: observed patients followed by
/// hypothetical ones.
class PosteriorModel {
 public:
  PosteriorModel() = default;
  explicit PosteriorModel(TrialDataset data, std::vector<Hypothetical> hypotheticals = {});

  const TrialDataset& data() const noexcept { return data_; }
  const std::vector<Hypothetical>& hypotheticals() const noexcept { return hypotheticals_; }
  std::span<const Evidence> evidence() const noexcept { return evidence_; }
  /// Patient ids as text, then hypothetical labels.
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t latent_count() const noexcept { return evidence_.size(); }

 private:
  TrialDataset data_;
  std::vector<Hypothetical> hypotheticals_;
  std::vector<Evidence> evidence_;
  std::vector<std::string> labels_;
};

struct AcceptCounter {
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
  double rate() const { return proposed ? static_cast<double>(accepted) / proposed : 0.0; }
};

/// Proposal scales (on the transformed scales) and acceptance bookkeeping.
struct Tuning {
  double mu_scale = 0.3;
  double cv_scale = 0.5;  // logit scale
  double r0_scale = 0.5;  // logit scale
  double shift_scale = 0.1;  // joint log shift of r0 and every r_i
  std::vector<double> r_scale;  // log scale, one per latent patient
  double cv_cap = 10.0;

  AcceptCounter mu, cv, r0, r, shift;

  static Tuning initial(std::size_t latent_count);
  void reset_counters() { mu = cv = r0 = r = shift = {}; }
};

/// Deterministic feasible starting point. Throws InfeasibleError naming the
/// first patient whose evidence cannot be met by a ratio comfortably above 1.
LatentState initialize_state(const PosteriorModel& model, const HyperPriors& priors);
LatentState initialize_state(const TrialDataset& data, const HyperPriors& priors);

/// One full sweep: Gibbs for every MTD_i, then random-walk Metropolis on
/// each log r_i, mu, cv, r0, and a joint shift of log r0 with all log r_i.
/// When `adapt_step` is nonzero, proposal scales take a
/// Robbins-Monro step toward 0.44 acceptance with gain adapt_step^-0.6.
LatentState mcmc_step(const LatentState& state, const PosteriorModel& model,
                      const HyperPriors& priors, Tuning& tuning, Rng& rng,
                      std::size_t adapt_step = 0);

struct AcceptanceRates {
  double mu = 0, cv = 0, r0 = 0, r = 0, shift = 0;
};

/// Retained draws, parameter-major per chain. Immutable once produced.
class PosteriorSamples {
 public:
  PosteriorSamples() = default;
  /// chains[c][p] holds the retained draws of parameter p in chain c.
  /// Parameters are mu, cv, tau, r0, then mtd and r for each latent patient
  /// of `model`.
  PosteriorSamples(PosteriorModel model, std::vector<std::vector<std::vector<double>>> chains,
                   McmcConfig config, HyperPriors priors,
                   std::vector<AcceptanceRates> acceptance = {});

  const std::vector<std::string>& parameters() const noexcept { return parameters_; }
  const std::vector<std::string>& latent_labels() const noexcept { return model_.labels(); }
  const PosteriorModel& model() const noexcept { return model_; }
  std::size_t chain_count() const noexcept { return chains_.size(); }
  std::size_t draws_per_chain() const noexcept;
  std::size_t total_draws() const noexcept { return chain_count() * draws_per_chain(); }

  /// Throws std::out_of_range for unknown names.
  std::size_t index(std::string_view parameter) const;
  bool has(std::string_view parameter) const;
  std::span<const double> draws(std::size_t chain, std::size_t parameter) const;
  std::vector<std::vector<double>> per_chain(std::string_view parameter) const;
  std::vector<double> pooled(std::string_view parameter) const;

  /// Rebuild the full latent state of one retained draw.
  LatentState state_at(std::size_t chain, std::size_t draw) const;

  const McmcConfig& config() const noexcept { return config_; }
  const HyperPriors& priors() const noexcept { return priors_; }
  const std::string& fingerprint() const noexcept { return fingerprint_; }
  const std::vector<AcceptanceRates>& acceptance() const noexcept { return acceptance_; }

 private:
  PosteriorModel model_;
  std::vector<std::string> parameters_;
  std::vector<std::vector<std::vector<double>>> chains_;
  McmcConfig config_;
  HyperPriors priors_;
  std::string fingerprint_;
  std::vector<AcceptanceRates> acceptance_;
};

std::string mtd_name(std::string_view label);
std::string ratio_name(std::string_view label);

/// Hex FNV-1a digest of the model inputs.
std::string model_fingerprint(const PosteriorModel& model);

/// Runs config.chains independent chains (in parallel) and merges them.
/// Output depends only on (model, priors, config).
PosteriorSamples run_chains(const PosteriorModel& model, const HyperPriors& priors,
                            const McmcConfig& config);
PosteriorSamples run_chains(const TrialDataset& data, const HyperPriors& priors,
                            const McmcConfig& config);

}  // namespace ordtox
