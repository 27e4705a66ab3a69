#include "ordtox/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ordtox/errors.hpp"
#include "ordtox/truncated.hpp"

namespace ordtox {

void McmcConfig::check() const {
  if (chains < 1 || adapt_iters < 1 || burnin_iters < 1 || retained_per_chain < 1 || thin < 1) {
    throw ValidationError("MCMC counts (chains, adapt, burnin, retained, thin) must all be >= 1");
  }
}

PosteriorModel::PosteriorModel(TrialDataset data, std::vector<Hypothetical> hypotheticals)
    : data_(std::move(data)), hypotheticals_(std::move(hypotheticals)) {
  for (const auto& p : data_.patients) {
    evidence_.push_back(Evidence::from(p));
    labels_.push_back(std::to_string(p.patient_id));
  }
  for (const auto& h : hypotheticals_) {
    if (!(h.okdose >= 0) || !std::isfinite(h.okdose)) {
      throw ValidationError("hypothetical " + h.label + ": okdose must be finite and >= 0");
    }
    evidence_.push_back(Evidence{h.okdose, 0.0, std::nullopt});
    labels_.push_back(h.label);
  }
  auto sorted = labels_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("patient ids and hypothetical labels must be unique");
  }
}

Tuning Tuning::initial(std::size_t latent_count) {
  Tuning t;
  t.r_scale.assign(latent_count, 0.1);
  return t;
}

std::string mtd_name(std::string_view label) { return "mtd[" + std::string(label) + "]"; }
std::string ratio_name(std::string_view label) { return "r[" + std::string(label) + "]"; }

std::string model_fingerprint(const PosteriorModel& model) {
  std::ostringstream text;
  text.precision(17);
  for (const auto& p : model.data().patients) {
    text << p.patient_id << ',' << p.cohort << ',' << p.okdose << ',' << p.aedose << ','
         << p.grade.value() << '\n';
  }
  for (const auto& h : model.hypotheticals()) text << '*' << h.label << ',' << h.okdose << '\n';
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text.str()) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

// ---------------------------------------------------------------------------
// Initialization

LatentState initialize_state(const PosteriorModel& model, const HyperPriors& priors) {
  priors.check();
  const auto& patients = model.data().patients;
  const auto evidence = model.evidence();
  const std::size_t n = evidence.size();

  double min_upper = kInf;
  for (const auto& p : patients) {
    const double upper = r_feasible_upper(p);
    if (!(0.95 * upper > 1.0)) {
      throw InfeasibleError("patient " + std::to_string(p.patient_id) +
                                ": censoring evidence needs a cutpoint ratio below " +
                                std::to_string(upper),
                            p.patient_id);
    }
    min_upper = std::min(min_upper, upper);
  }

  LatentState s;
  const double r0_top = std::max(priors.r0_lo, std::min(min_upper, priors.r0_hi));
  s.r0 = std::clamp(0.5 * (priors.r0_lo + r0_top), priors.r0_lo, priors.r0_hi);
  s.r.assign(n, s.r0);
  s.mtd.assign(n, 0.0);

  double log_sum = 0.0;
  std::size_t bounded = 0;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    s.r[i] = std::min(s.r0, 0.95 * r_feasible_upper(patients[i]));
    const Interval region = censoring_region(evidence[i], s.r[i]);
    if (region.empty()) {
      throw InfeasibleError("patient " + std::to_string(patients[i].patient_id) +
                                ": no MTD consistent with the record at the starting ratio",
                            patients[i].patient_id);
    }
    double lo = region.lo;
    double hi = region.hi;
    if (!std::isfinite(hi)) hi = 10.0 * lo;
    if (lo == 0.0) lo = hi / 10.0;
    double m = std::sqrt(lo * hi);
    if (!region.contains(m)) m = region.lo_closed ? region.lo : std::sqrt(region.lo * region.hi);
    s.mtd[i] = m;
    log_sum += std::log(m);
    ++bounded;
  }

  s.mu = bounded ? log_sum / static_cast<double>(bounded) : 0.5 * (priors.mu_lo + priors.mu_hi);
  s.mu = std::clamp(s.mu, priors.mu_lo, priors.mu_hi);
  s.cv = priors.cv_mean > 0 ? priors.cv_mean : 0.5;

  for (std::size_t i = patients.size(); i < n; ++i) {
    const Interval region = censoring_region(evidence[i], s.r[i]);
    s.mtd[i] = region.lo > 0 ? std::sqrt(region.lo * 10.0 * region.lo) : std::exp(s.mu);
  }

  if (!std::isfinite(log_posterior(s, evidence, priors))) {
    throw InfeasibleError("starting state is infeasible", 0);
  }
  return s;
}

LatentState initialize_state(const TrialDataset& data, const HyperPriors& priors) {
  return initialize_state(PosteriorModel(data), priors);
}

// ---------------------------------------------------------------------------
// One sweep

namespace {

constexpr double kTargetAccept = 0.44;

double logit(double p) { return std::log(p) - std::log1p(-p); }
double logistic(double y) { return 1.0 / (1.0 + std::exp(-y)); }

bool accept(double log_ratio, Rng& rng) {
  return log_ratio >= 0 || std::log(rng.uniform()) < log_ratio;
}

void adapt(double& scale, bool accepted, std::size_t step) {
  if (step == 0) return;
  const double gain = std::pow(static_cast<double>(step), -0.6);
  scale *= std::exp(gain * ((accepted ? 1.0 : 0.0) - kTargetAccept));
  scale = std::clamp(scale, 1e-4, 1e3);
}

// Bounds of the cv proposal domain.
std::pair<double, double> cv_domain(const HyperPriors& priors, double cap) {
  return {priors.truncate_cv ? 0.0 : -cap, cap};
}

}  // namespace

LatentState mcmc_step(const LatentState& state, const PosteriorModel& model,
                      const HyperPriors& priors, Tuning& tuning, Rng& rng, std::size_t adapt_step) {
  const auto evidence = model.evidence();
  const std::size_t n = evidence.size();
  LatentState s = state;
  double tau = 1.0 / std::log1p(s.cv * s.cv);

  // (a) Gibbs: each MTD_i from its lognormal conditional on the censoring region.
  for (std::size_t i = 0; i < n; ++i) {
    s.mtd[i] = sample_truncated_lognormal(s.mu, tau, censoring_region(evidence[i], s.r[i]), rng);
  }

  // (b) log r_i random walk, MTD_i held fixed.
  double log_r0 = std::log(s.r0);
  for (std::size_t i = 0; i < n; ++i) {
    const double lr = std::log(s.r[i]);
    const double lr_new = lr + tuning.r_scale[i] * rng.normal();
    const double r_new = std::exp(lr_new);
    bool ok = false;
    if (satisfies(evidence[i], s.mtd[i], r_new)) {
      const double d_old = lr - log_r0;
      const double d_new = lr_new - log_r0;
      ok = accept(-0.5 * priors.r_prec * (d_new * d_new - d_old * d_old), rng);
    }
    if (ok) s.r[i] = r_new;
    ++tuning.r.proposed;
    tuning.r.accepted += ok;
    adapt(tuning.r_scale[i], ok, adapt_step);
  }

  // Sufficient statistics of log MTD and log r.
  double sum_lm = 0, sum_lm2 = 0, sum_lr = 0, sum_lr2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lm = std::log(s.mtd[i]);
    const double lr = std::log(s.r[i]);
    sum_lm += lm;
    sum_lm2 += lm * lm;
    sum_lr += lr;
    sum_lr2 += lr * lr;
  }
  const double dn = static_cast<double>(n);
  auto sq_dev = [dn](double sum, double sum2, double centre) {
    return std::max(0.0, sum2 - 2.0 * centre * sum + dn * centre * centre);
  };

  // (c1) mu
  {
    const double mu_new = s.mu + tuning.mu_scale * rng.normal();
    bool ok = false;
    if (mu_new >= priors.mu_lo && mu_new <= priors.mu_hi) {
      const double delta = -0.5 * tau * (sq_dev(sum_lm, sum_lm2, mu_new) - sq_dev(sum_lm, sum_lm2, s.mu));
      ok = accept(delta, rng);
    }
    if (ok) s.mu = mu_new;
    ++tuning.mu.proposed;
    tuning.mu.accepted += ok;
    adapt(tuning.mu_scale, ok, adapt_step);
  }

  // (c2) cv on a logit scale over its bounded domain
  {
    const auto [lo, hi] = cv_domain(priors, tuning.cv_cap);
    const double width = hi - lo;
    const double y = logit((s.cv - lo) / width);
    const double y_new = y + tuning.cv_scale * rng.normal();
    const double cv_new = lo + width * logistic(y_new);
    bool ok = false;
    if (cv_new > lo && cv_new < hi && cv_new != 0.0) {
      const double tau_new = 1.0 / std::log1p(cv_new * cv_new);
      const double s2 = sq_dev(sum_lm, sum_lm2, s.mu);
      const auto log_jac = [lo, hi](double c) { return std::log(c - lo) + std::log(hi - c); };
      const double delta = 0.5 * dn * (std::log(tau_new) - std::log(tau)) - 0.5 * (tau_new - tau) * s2 +
                           normal_log_density(cv_new, priors.cv_mean, priors.cv_prec) -
                           normal_log_density(s.cv, priors.cv_mean, priors.cv_prec) +
                           log_jac(cv_new) - log_jac(s.cv);
      ok = accept(delta, rng);
      if (ok) {
        s.cv = cv_new;
        tau = tau_new;
      }
    }
    ++tuning.cv.proposed;
    tuning.cv.accepted += ok;
    adapt(tuning.cv_scale, ok, adapt_step);
  }

  // (c3) r0 on a logit scale over [r0_lo, r0_hi]
  if (priors.r0_hi > priors.r0_lo) {
    const double lo = priors.r0_lo;
    const double hi = priors.r0_hi;
    const double y = logit((s.r0 - lo) / (hi - lo));
    const double y_new = y + tuning.r0_scale * rng.normal();
    const double r0_new = lo + (hi - lo) * logistic(y_new);
    bool ok = false;
    if (r0_new > lo && r0_new < hi) {
      const double lr0_new = std::log(r0_new);
      const auto log_jac = [lo, hi](double x) { return std::log(x - lo) + std::log(hi - x); };
      const double delta = -0.5 * priors.r_prec *
                               (sq_dev(sum_lr, sum_lr2, lr0_new) - sq_dev(sum_lr, sum_lr2, log_r0)) +
                           log_jac(r0_new) - log_jac(s.r0);
      ok = accept(delta, rng);
      if (ok) {
        s.r0 = r0_new;
        log_r0 = lr0_new;
      }
    }
    ++tuning.r0.proposed;
    tuning.r0.accepted += ok;
    adapt(tuning.r0_scale, ok, adapt_step);

    // (d) Shift log r0 and every log r_i together. The r_i prior terms are
    // unchanged, leaving the uniform prior's Jacobian r0'/r0 and feasibility.
    const double delta = tuning.shift_scale * rng.normal();
    const double factor = std::exp(delta);
    const double r0_shift = s.r0 * factor;
    bool shifted = false;
    if (r0_shift >= lo && r0_shift <= hi) {
      bool feasible = true;
      for (std::size_t i = 0; i < n && feasible; ++i) {
        feasible = satisfies(evidence[i], s.mtd[i], s.r[i] * factor);
      }
      shifted = feasible && accept(delta, rng);
    }
    if (shifted) {
      s.r0 = r0_shift;
      for (auto& r : s.r) r *= factor;
    }
    ++tuning.shift.proposed;
    tuning.shift.accepted += shifted;
    adapt(tuning.shift_scale, shifted, adapt_step);
  }

  return s;
}

// ---------------------------------------------------------------------------
// Samples container

PosteriorSamples::PosteriorSamples(PosteriorModel model,
                                   std::vector<std::vector<std::vector<double>>> chains,
                                   McmcConfig config, HyperPriors priors,
                                   std::vector<AcceptanceRates> acceptance)
    : model_(std::move(model)),
      chains_(std::move(chains)),
      config_(config),
      priors_(priors),
      fingerprint_(model_fingerprint(model_)),
      acceptance_(std::move(acceptance)) {
  parameters_ = {"mu", "cv", "tau", "r0"};
  for (const auto& label : model_.labels()) parameters_.push_back(mtd_name(label));
  for (const auto& label : model_.labels()) parameters_.push_back(ratio_name(label));
  for (const auto& chain : chains_) {
    if (chain.size() != parameters_.size()) throw std::invalid_argument("PosteriorSamples: ragged chain");
    for (const auto& series : chain) {
      if (series.size() != chains_.front().front().size()) {
        throw std::invalid_argument("PosteriorSamples: ragged draws");
      }
    }
  }
}

std::size_t PosteriorSamples::draws_per_chain() const noexcept {
  return chains_.empty() || chains_.front().empty() ? 0 : chains_.front().front().size();
}

std::size_t PosteriorSamples::index(std::string_view parameter) const {
  const auto it = std::find(parameters_.begin(), parameters_.end(), parameter);
  if (it == parameters_.end()) throw std::out_of_range("unknown parameter: " + std::string(parameter));
  return static_cast<std::size_t>(it - parameters_.begin());
}

bool PosteriorSamples::has(std::string_view parameter) const {
  return std::find(parameters_.begin(), parameters_.end(), parameter) != parameters_.end();
}

std::span<const double> PosteriorSamples::draws(std::size_t chain, std::size_t parameter) const {
  return chains_.at(chain).at(parameter);
}

std::vector<std::vector<double>> PosteriorSamples::per_chain(std::string_view parameter) const {
  const std::size_t p = index(parameter);
  std::vector<std::vector<double>> out;
  for (const auto& chain : chains_) out.push_back(chain[p]);
  return out;
}

std::vector<double> PosteriorSamples::pooled(std::string_view parameter) const {
  const std::size_t p = index(parameter);
  std::vector<double> out;
  out.reserve(total_draws());
  for (const auto& chain : chains_) out.insert(out.end(), chain[p].begin(), chain[p].end());
  return out;
}

LatentState PosteriorSamples::state_at(std::size_t chain, std::size_t draw) const {
  const auto& c = chains_.at(chain);
  LatentState s;
  s.mu = c[0].at(draw);
  s.cv = c[1][draw];
  s.r0 = c[3][draw];
  const std::size_t n = model_.latent_count();
  for (std::size_t i = 0; i < n; ++i) {
    s.mtd.push_back(c[4 + i][draw]);
    s.r.push_back(c[4 + n + i][draw]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Chain driver

namespace {

struct ChainResult {
  std::vector<std::vector<double>> series;
  AcceptanceRates acceptance;
};

ChainResult run_one_chain(const PosteriorModel& model, const HyperPriors& priors,
                          const McmcConfig& config, std::size_t chain) {
  Rng rng(stream_seed(config.seed, chain));
  const std::size_t n = model.latent_count();
  const auto evidence = model.evidence();
  LatentState state = initialize_state(model, priors);
  Tuning tuning = Tuning::initial(n);

  for (std::size_t t = 1; t <= config.adapt_iters; ++t) {
    state = mcmc_step(state, model, priors, tuning, rng, t);
  }
  tuning.reset_counters();
  for (std::size_t t = 0; t < config.burnin_iters; ++t) {
    state = mcmc_step(state, model, priors, tuning, rng);
  }

  ChainResult out;
  out.series.assign(4 + 2 * n, {});
  for (auto& s : out.series) s.reserve(config.retained_per_chain);
  for (std::size_t k = 0; k < config.retained_per_chain; ++k) {
    for (std::size_t t = 0; t < config.thin; ++t) {
      state = mcmc_step(state, model, priors, tuning, rng);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!satisfies(evidence[i], state.mtd[i], state.r[i])) {
        throw std::logic_error("sampler produced a state violating the censoring of " +
                               model.labels()[i]);
      }
    }
    out.series[0].push_back(state.mu);
    out.series[1].push_back(state.cv);
    out.series[2].push_back(cv_to_tau(state.cv));
    out.series[3].push_back(state.r0);
    for (std::size_t i = 0; i < n; ++i) {
      out.series[4 + i].push_back(state.mtd[i]);
      out.series[4 + n + i].push_back(state.r[i]);
    }
  }
  out.acceptance = {tuning.mu.rate(), tuning.cv.rate(), tuning.r0.rate(), tuning.r.rate(),
                    tuning.shift.rate()};
  return out;
}

}  // namespace

PosteriorSamples run_chains(const PosteriorModel& model, const HyperPriors& priors,
                            const McmcConfig& config) {
  config.check();
  priors.check();
  // Surface infeasibility before spawning workers.
  (void)initialize_state(model, priors);

  std::vector<ChainResult> results(config.chains);
  std::vector<std::exception_ptr> errors(config.chains);
  {
    std::vector<std::jthread> workers;
    for (std::size_t c = 0; c < config.chains; ++c) {
      workers.emplace_back([&, c] {
        try {
          results[c] = run_one_chain(model, priors, config, c);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<std::vector<std::vector<double>>> chains;
  std::vector<AcceptanceRates> acceptance;
  for (auto& r : results) {
    chains.push_back(std::move(r.series));
    acceptance.push_back(r.acceptance);
  }
  return PosteriorSamples(model, std::move(chains), config, priors, std::move(acceptance));
}

PosteriorSamples run_chains(const TrialDataset& data, const HyperPriors& priors,
                            const McmcConfig& config) {
  return run_chains(PosteriorModel(data), priors, config);
}

}  // namespace ordtox
