#include "ordtox/truncated.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>

namespace ordtox {

namespace {
std::atomic<std::uint64_t> g_tail_fallbacks{0};
}

std::uint64_t tail_fallback_count() noexcept { return g_tail_fallbacks.load(); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0 && p < 1)) throw std::domain_error("normal_quantile: p must be in (0, 1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double Rng::normal() { return normal_quantile(uniform()); }

double sample_truncated_std_normal(double a, double b, Rng& rng) {
  if (!(a <= b)) throw std::invalid_argument("truncated normal: empty slab");
  // Work in the lower tail so Phi stays well away from 1.
  const bool flip = a > 0;
  const double lo = flip ? -b : a;
  const double hi = flip ? -a : b;
  const double p_lo = normal_cdf(lo);
  const double p_hi = normal_cdf(hi);
  const double u = rng.uniform();
  if (p_hi > p_lo) {
    double p = p_lo + u * (p_hi - p_lo);
    if (p > 0 && p < 1) {
      const double z = std::clamp(normal_quantile(p), lo, hi);
      return flip ? -z : z;
    }
  }
  const auto seen = g_tail_fallbacks.fetch_add(1);
  if (seen < 10) {
    std::clog << "ordtox: truncated normal slab [" << a << ", " << b
              << "] has no representable mass; using nearer endpoint"
              << (seen == 9 ? " (further messages suppressed)\n" : "\n");
  }
  return flip ? a : b;
}

double sample_truncated_lognormal(double mu, double tau, const Interval& region, Rng& rng) {
  if (region.empty()) throw std::invalid_argument("truncated lognormal: empty region");
  if (!(tau > 0) || !std::isfinite(mu)) throw std::invalid_argument("truncated lognormal: bad parameters");
  const double sigma = 1.0 / std::sqrt(tau);
  const double a = region.lo > 0 ? (std::log(region.lo) - mu) / sigma : -kInf;
  const double b = std::isfinite(region.hi) ? (std::log(region.hi) - mu) / sigma : kInf;
  double x = std::exp(mu + sigma * sample_truncated_std_normal(a, b, rng));
  // Guard against rounding at the edges of a half-open region.
  if (!region.contains(x)) {
    if (x <= region.lo) {
      x = region.lo_closed ? region.lo : std::nextafter(region.lo, kInf);
    } else {
      x = region.hi_closed ? region.hi : std::nextafter(region.hi, 0.0);
    }
  }
  return x;
}

}  // namespace ordtox
