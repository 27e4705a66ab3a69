#pragma once

// Posterior summaries, convergence diagnostics and density curves.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ordtox/model.hpp"
#include "ordtox/sampler.hpp"

namespace ordtox {

using ChainDraws = std::vector<std::vector<double>>;

/// Shortest closed interval [x_(j), x_(j+m-1)] over the sorted draws holding
/// m = ceil(mass * n) of them; ties go to the smallest j.
/// Throws std::invalid_argument for fewer than 10 draws or mass outside (0, 1].
Interval hpd_interval(std::span<const double> draws, double mass);

/// Equal-tailed interval from type-7 quantiles.
Interval central_interval(std::span<const double> draws, double mass);

/// Type-7 (linear interpolation) quantile of already-sorted values.
double sorted_quantile(std::span<const double> sorted, double p);

/// Classic (unsplit) Gelman-Rubin potential scale reduction factor.
/// Returns 1 when every draw is identical, +inf when chains are internally
/// constant but differ from each other. Requires >= 2 chains of equal
/// length >= 100.
double psrf(const ChainDraws& chains);

/// Sum over chains of n / tau_hat, with tau_hat from Geyer's initial positive
/// sequence; capped at the total number of draws. A constant chain counts
/// as one effective draw. Same preconditions as psrf.
double effective_sample_size(const ChainDraws& chains);

namespace detail {
/// effective_sample_size without the chain-count and length preconditions.
double geyer_ess(const ChainDraws& chains);
}  // namespace detail

struct SummaryRow {
  std::string parameter;
  std::string group;
  double lower95 = 0;  // HPD
  double median = 0;
  double upper95 = 0;  // HPD
  double mean = 0;
  double sd = 0;
  double sseff = 0;
  double psrf = 0;
  double mcse = 0;
  double central_lower95 = 0;
  double central_upper95 = 0;
};

/// Rows for mu, cv, tau, r0 and then each latent MTD in ledger order. With
/// `pooled`, observed patients sharing (okdose, aedose, grade) collapse into
/// one row named mtd[a,b,...]. psrf is NaN with fewer than 2 chains or 2
/// draws per chain; mcse = sd / sqrt(sseff).
std::vector<SummaryRow> summarize(const PosteriorSamples& samples, bool pooled = false);

struct PoolKey {
  double okdose = 0;
  double aedose = 0;
  int grade = 0;
  bool operator==(const PoolKey&) const = default;
};

struct DensityCurve {
  std::string parameter;
  std::vector<double> log_grid;
  std::vector<double> density;
  double bandwidth = 0;
  std::size_t draw_count = 0;
  std::optional<PoolKey> pool_key;
};

/// Gaussian KDE of log(draws) with Silverman's bandwidth on a 512-point grid
/// spanning [min - 3h, max + 3h]. Requires >= 100 positive draws.
DensityCurve kde_density(std::string parameter, std::span<const double> draws);

/// Curves for every latent MTD. With `pooled`, equivalent observed patients
/// share one curve built from their concatenated draws.
std::vector<DensityCurve> density_curves(const PosteriorSamples& samples, bool pooled);

/// Trapezoidal integral of a curve over its grid.
double trapezoid_mass(const DensityCurve& curve);

}  // namespace ordtox
