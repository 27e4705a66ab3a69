#pragma once

#include <cstdint>

#include "ordtox/model.hpp"
#include "ordtox/random.hpp"

namespace ordtox {

double normal_cdf(double z);
/// Inverse standard normal CDF for p in (0, 1).
double normal_quantile(double p);

/// Draw from N(0,1) conditioned on [a, b] by inverting the CDF between
/// Phi(a) and Phi(b), working in whichever tail keeps the CDF values small.
/// When the slab carries no representable mass the endpoint nearer the
/// mode is returned and the tail-fallback counter is bumped.
double sample_truncated_std_normal(double a, double b, Rng& rng);

/// Draw from LogNormal(mu, precision tau) conditioned on `region`.
/// The result always lies in `region`. Throws std::invalid_argument when the
/// region is empty or tau <= 0.
double sample_truncated_lognormal(double mu, double tau, const Interval& region, Rng& rng);

/// Number of tail fallbacks taken by this process so far.
std::uint64_t tail_fallback_count() noexcept;

}  // namespace ordtox
