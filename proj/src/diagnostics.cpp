#include "ordtox/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace ordtox {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kGridPoints = 512;

std::vector<double> sorted_copy(std::span<const double> draws) {
  std::vector<double> v(draws.begin(), draws.end());
  std::sort(v.begin(), v.end());
  return v;
}

Interval hpd_sorted(std::span<const double> x, double mass) {
  const std::size_t n = x.size();
  auto m = static_cast<std::size_t>(std::ceil(mass * static_cast<double>(n) - 1e-9));
  m = std::clamp<std::size_t>(m, 1, n);
  std::size_t best = 0;
  double width = x[m - 1] - x[0];
  for (std::size_t j = 1; j + m <= n; ++j) {
    const double w = x[j + m - 1] - x[j];
    if (w < width) {
      width = w;
      best = j;
    }
  }
  return {x[best], x[best + m - 1], true, true};
}

void check_chains(const ChainDraws& chains) {
  if (chains.size() < 2) throw std::invalid_argument("need at least 2 chains");
  for (const auto& c : chains) {
    if (c.size() != chains.front().size()) throw std::invalid_argument("chains differ in length");
  }
  if (chains.front().size() < 100) throw std::invalid_argument("need at least 100 draws per chain");
}

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance_of(std::span<const double> x, double mean) {
  if (x.size() < 2) return 0.0;
  double ss = 0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size() - 1);
}

bool constant(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

double psrf_unchecked(const ChainDraws& chains) {
  if (std::all_of(chains.begin(), chains.end(), [](const auto& c) { return constant(c); })) {
    const bool same = std::all_of(chains.begin(), chains.end(),
                                  [&](const auto& c) { return c.front() == chains.front().front(); });
    return same ? 1.0 : std::numeric_limits<double>::infinity();
  }
  const double m = static_cast<double>(chains.size());
  const double n = static_cast<double>(chains.front().size());
  std::vector<double> means;
  double within = 0;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    within += variance_of(c, means.back());
  }
  within /= m;
  const double grand = mean_of(means);
  double between = 0;  // B / n
  for (double mu : means) between += (mu - grand) * (mu - grand);
  between /= (m - 1);
  const double pooled = (n - 1) / n * within + between;
  return std::sqrt(pooled / within);
}

}  // namespace

double sorted_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

Interval hpd_interval(std::span<const double> draws, double mass) {
  if (draws.size() < 10) throw std::invalid_argument("hpd_interval: need at least 10 draws");
  if (!(mass > 0 && mass <= 1)) throw std::invalid_argument("hpd_interval: mass must be in (0, 1]");
  const auto x = sorted_copy(draws);
  return hpd_sorted(x, mass);
}

Interval central_interval(std::span<const double> draws, double mass) {
  const auto x = sorted_copy(draws);
  const double tail = 0.5 * (1.0 - mass);
  return {sorted_quantile(x, tail), sorted_quantile(x, 1.0 - tail), true, true};
}

double psrf(const ChainDraws& chains) {
  check_chains(chains);
  return psrf_unchecked(chains);
}

double detail::geyer_ess(const ChainDraws& chains) {
  double total = 0;
  std::size_t draws = 0;
  for (const auto& x : chains) {
    const std::size_t n = x.size();
    draws += n;
    if (n == 0) continue;
    if (constant(x)) {
      total += 1.0;
      continue;
    }
    const double mu = mean_of(x);
    auto autocov = [&](std::size_t lag) {
      double s = 0;
      for (std::size_t t = 0; t + lag < n; ++t) s += (x[t] - mu) * (x[t + lag] - mu);
      return s / static_cast<double>(n);
    };
    const double gamma0 = autocov(0);
    // tau = -1 + 2 * sum of the initial positive pair sums.
    double tau = -1.0;
    for (std::size_t lag = 0; lag + 1 < n; lag += 2) {
      const double pair = (autocov(lag) + autocov(lag + 1)) / gamma0;
      if (!(pair > 0)) break;
      tau += 2.0 * pair;
    }
    const double dn = static_cast<double>(n);
    total += tau > 1.0 / dn ? dn / tau : dn;
  }
  return std::min(total, static_cast<double>(draws));
}

double effective_sample_size(const ChainDraws& chains) {
  check_chains(chains);
  return detail::geyer_ess(chains);
}

// ---------------------------------------------------------------------------

namespace {

struct PoolGroup {
  PoolKey key;
  std::vector<std::size_t> members;  // latent indices
};

std::vector<PoolGroup> pool_groups(const PosteriorModel& model, bool pooled) {
  std::vector<PoolGroup> groups;
  const auto& patients = model.data().patients;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    const PoolKey key{patients[i].okdose, patients[i].aedose, patients[i].grade.value()};
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const PoolGroup& g) { return pooled && g.key == key; });
    if (it == groups.end()) {
      groups.push_back({key, {i}});
    } else {
      it->members.push_back(i);
    }
  }
  return groups;
}

std::string pooled_name(const PosteriorModel& model, const std::vector<std::size_t>& members) {
  std::string inner;
  for (std::size_t k = 0; k < members.size(); ++k) {
    if (k) inner += ',';
    inner += model.labels()[members[k]];
  }
  return mtd_name(inner);
}

ChainDraws concatenated(const PosteriorSamples& samples, const std::vector<std::string>& names) {
  ChainDraws out(samples.chain_count());
  for (const auto& name : names) {
    const std::size_t p = samples.index(name);
    for (std::size_t c = 0; c < samples.chain_count(); ++c) {
      const auto d = samples.draws(c, p);
      out[c].insert(out[c].end(), d.begin(), d.end());
    }
  }
  return out;
}

SummaryRow summary_row(std::string name, std::string group, const ChainDraws& chains) {
  std::vector<double> all;
  for (const auto& c : chains) all.insert(all.end(), c.begin(), c.end());
  std::sort(all.begin(), all.end());

  SummaryRow row;
  row.parameter = std::move(name);
  row.group = std::move(group);
  const Interval hpd = hpd_sorted(all, 0.95);
  row.lower95 = hpd.lo;
  row.upper95 = hpd.hi;
  row.median = sorted_quantile(all, 0.5);
  row.mean = mean_of(all);
  row.sd = std::sqrt(variance_of(all, row.mean));
  row.central_lower95 = sorted_quantile(all, 0.025);
  row.central_upper95 = sorted_quantile(all, 0.975);
  row.sseff = detail::geyer_ess(chains);
  row.psrf = chains.size() >= 2 && chains.front().size() >= 2 ? psrf_unchecked(chains) : kNaN;
  row.mcse = row.sd / std::sqrt(row.sseff);
  return row;
}

}  // namespace

std::vector<SummaryRow> summarize(const PosteriorSamples& samples, bool pooled) {
  std::vector<SummaryRow> rows;
  for (const char* name : {"mu", "cv", "tau", "r0"}) {
    rows.push_back(summary_row(name, "hyperparameters", samples.per_chain(name)));
  }
  const auto& model = samples.model();
  for (const auto& group : pool_groups(model, pooled)) {
    std::vector<std::string> names;
    for (std::size_t i : group.members) names.push_back(mtd_name(model.labels()[i]));
    const auto name = group.members.size() == 1 ? names.front() : pooled_name(model, group.members);
    const auto& cohort = model.data().patients[group.members.front()].cohort;
    rows.push_back(summary_row(name, "cohort " + cohort, concatenated(samples, names)));
  }
  for (std::size_t i = model.data().size(); i < model.latent_count(); ++i) {
    const auto name = mtd_name(model.labels()[i]);
    rows.push_back(summary_row(name, "hypothetical", samples.per_chain(name)));
  }
  return rows;
}

// ---------------------------------------------------------------------------

DensityCurve kde_density(std::string parameter, std::span<const double> draws) {
  if (draws.size() < 100) throw std::invalid_argument("kde_density: need at least 100 draws");
  std::vector<double> x;
  x.reserve(draws.size());
  for (double d : draws) {
    if (!(d > 0)) throw std::invalid_argument("kde_density: draws must be positive");
    x.push_back(std::log(d));
  }
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  const double mean = mean_of(x);
  const double sd = std::sqrt(variance_of(x, mean));
  const double iqr = sorted_quantile(x, 0.75) - sorted_quantile(x, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0)) spread = std::max(sd, iqr / 1.34);
  double h = 0.9 * spread * std::pow(n, -0.2);
  if (!(h > 0)) h = 1e-6 * std::max(1.0, std::abs(mean));

  DensityCurve curve;
  curve.parameter = std::move(parameter);
  curve.bandwidth = h;
  curve.draw_count = x.size();
  const double lo = x.front() - 3 * h;
  const double hi = x.back() + 3 * h;
  const double step = (hi - lo) / static_cast<double>(kGridPoints - 1);
  const double norm = 1.0 / (n * h * std::sqrt(2.0 * std::numbers::pi));
  curve.log_grid.resize(kGridPoints);
  curve.density.resize(kGridPoints);
  for (std::size_t k = 0; k < kGridPoints; ++k) {
    const double g = lo + step * static_cast<double>(k);
    // Kernels beyond 8h contribute below 1e-14 relative.
    const auto first = std::lower_bound(x.begin(), x.end(), g - 8 * h);
    const auto last = std::upper_bound(first, x.end(), g + 8 * h);
    double s = 0;
    for (auto it = first; it != last; ++it) {
      const double z = (g - *it) / h;
      s += std::exp(-0.5 * z * z);
    }
    curve.log_grid[k] = g;
    curve.density[k] = s * norm;
  }
  return curve;
}

std::vector<DensityCurve> density_curves(const PosteriorSamples& samples, bool pooled) {
  std::vector<DensityCurve> curves;
  const auto& model = samples.model();
  for (const auto& group : pool_groups(model, pooled)) {
    std::vector<std::string> names;
    for (std::size_t i : group.members) names.push_back(mtd_name(model.labels()[i]));
    std::vector<double> all;
    for (const auto& name : names) {
      const auto d = samples.pooled(name);
      all.insert(all.end(), d.begin(), d.end());
    }
    const auto name = group.members.size() == 1 ? names.front() : pooled_name(model, group.members);
    auto curve = kde_density(name, all);
    if (pooled) curve.pool_key = group.key;
    curves.push_back(std::move(curve));
  }
  for (std::size_t i = model.data().size(); i < model.latent_count(); ++i) {
    const auto name = mtd_name(model.labels()[i]);
    curves.push_back(kde_density(name, samples.pooled(name)));
  }
  return curves;
}

double trapezoid_mass(const DensityCurve& curve) {
  double s = 0;
  for (std::size_t k = 1; k < curve.log_grid.size(); ++k) {
    s += 0.5 * (curve.density[k] + curve.density[k - 1]) * (curve.log_grid[k] - curve.log_grid[k - 1]);
  }
  return s;
}

}  // namespace ordtox
