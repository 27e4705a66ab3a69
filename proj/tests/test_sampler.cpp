#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ordtox/data_io.hpp"
#include "ordtox/errors.hpp"
#include "ordtox/sampler.hpp"
#include "ordtox/truncated.hpp"

using namespace ordtox;

namespace {

PatientRecord rec(int id, double ok, double ae, int g) { return {id, "x", ok, ae, ToxicityGrade(g)}; }

TrialDataset dataset(std::initializer_list<PatientRecord> rows) { return TrialDataset{rows}; }

double mean(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double sd(const std::vector<double>& x) {
  const double m = mean(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

double ks_uniform(std::vector<double> x, double lo, double hi) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = std::clamp((x[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
  }
  return d;
}

McmcConfig small_config(std::uint64_t seed = 1) {
  McmcConfig c;
  c.chains = 2;
  c.adapt_iters = 200;
  c.burnin_iters = 200;
  c.retained_per_chain = 200;
  c.thin = 2;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("rng streams and uniform range") {
  Rng a(stream_seed(5, 0)), b(stream_seed(5, 1)), c(stream_seed(5, 0));
  CHECK(a.bits() != b.bits());
  Rng d(stream_seed(5, 0));
  CHECK(c.bits() == d.bits());
  Rng u(9);
  for (int k = 0; k < 100000; ++k) {
    const double x = u.uniform();
    REQUIRE(x > 0);
    REQUIRE(x < 1);
  }
}

TEST_CASE("standard normal draws have unit moments") {
  Rng rng(42);
  std::vector<double> x(200000);
  for (auto& v : x) v = rng.normal();
  CHECK(std::abs(mean(x)) < 0.01);
  CHECK(sd(x) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("normal quantile inverts the cdf") {
  for (double p : {1e-300, 1e-12, 0.001, 0.3, 0.5, 0.9, 1 - 1e-12}) {
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-9));
  }
}

TEST_CASE("truncated standard normal on [1, 2] matches the analytic mean") {
  Rng rng(3);
  std::vector<double> x(200000);
  for (auto& v : x) {
    v = sample_truncated_std_normal(1, 2, rng);
    REQUIRE(v >= 1);
    REQUIRE(v <= 2);
  }
  auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI); };
  const double expected = (phi(1) - phi(2)) / (normal_cdf(2) - normal_cdf(1));
  CHECK(mean(x) == doctest::Approx(expected).epsilon(0.005));
}

TEST_CASE("truncated lognormal: untruncated median") {
  Rng rng(1);
  std::vector<double> x(100000);
  for (auto& v : x) v = sample_truncated_lognormal(0, 1, Interval{0, kInf, false, false}, rng);
  std::nth_element(x.begin(), x.begin() + x.size() / 2, x.end());
  CHECK(std::abs(x[x.size() / 2] - 1.0) < 0.02);
}

TEST_CASE("truncated lognormal: band draws stay inside and match a rejection oracle") {
  const Interval band{180 / 1.3, 180, true, false};
  Rng rng(2);
  std::vector<double> x(100000);
  std::size_t outside = 0;
  for (auto& v : x) {
    v = sample_truncated_lognormal(5.0, 1.3, band, rng);
    outside += !band.contains(v);
  }
  CHECK(outside == 0);

  // Oracle: draw from the untruncated lognormal, keep what lands in the band.
  std::mt19937_64 gen(99);
  std::normal_distribution<double> z(5.0, 1 / std::sqrt(1.3));
  std::vector<double> y;
  while (y.size() < 100000) {
    const double v = std::exp(z(gen));
    if (band.contains(v)) y.push_back(v);
  }
  const double se = std::sqrt(sd(x) * sd(x) / x.size() + sd(y) * sd(y) / y.size());
  CHECK(std::abs(mean(x) - mean(y)) < 3 * se);
}

TEST_CASE("truncated lognormal: far tails and errors") {
  Rng rng(4);
  const Interval far{1e30, kInf, true, false};
  for (int k = 0; k < 100; ++k) CHECK(far.contains(sample_truncated_lognormal(0, 1, far, rng)));
  const Interval tiny{0, 1e-30, false, false};
  for (int k = 0; k < 100; ++k) CHECK(tiny.contains(sample_truncated_lognormal(0, 1, tiny, rng)));
  const Interval sliver{100, std::nextafter(100.0, kInf), true, false};
  CHECK(sample_truncated_lognormal(0, 1, sliver, rng) == 100.0);
  CHECK(tail_fallback_count() > 0);
  CHECK_THROWS_AS(sample_truncated_lognormal(0, 1, Interval{5, 5, true, false}, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_truncated_lognormal(0, 0, Interval{}, rng), std::invalid_argument);
}

TEST_CASE("initialize_state") {
  const HyperPriors priors;
  SUBCASE("bundled data gives a feasible start") {
    const auto data = load_bundled("afm11");
    const auto s = initialize_state(data, priors);
    CHECK(std::isfinite(log_posterior(s, data, priors)));
    CHECK(s.cv == priors.cv_mean);
    CHECK(s.r0 >= priors.r0_lo);
    CHECK(s.r0 <= priors.r0_hi);
  }
  SUBCASE("single no-toxicity patient") {
    const auto s = initialize_state(dataset({rec(1, 100, 100, 0)}), priors);
    const double r = s.r[0];
    CHECK(s.mtd[0] >= 100 * r * r);
    CHECK(s.mtd[0] <= 10 * 100 * r * r * (1 + 1e-12));
  }
  SUBCASE("contrived infeasible record names the patient") {
    try {
      initialize_state(dataset({rec(1, 2, 2, 0), rec(7, 100, 101, 5)}), priors);
      FAIL("expected InfeasibleError");
    } catch (const InfeasibleError& e) {
      CHECK(e.patient_id() == 7);
      CHECK(std::string(e.what()).find("7") != std::string::npos);
    }
  }
}

TEST_CASE("mcmc_step keeps tight bands feasible") {
  // Patients whose supports are narrow bands.
  const PosteriorModel model(dataset({rec(1, 60, 130, 3), rec(2, 100, 120, 3), rec(3, 0.7, 2, 2)}));
  const HyperPriors priors;
  auto state = initialize_state(model, priors);
  auto tuning = Tuning::initial(model.latent_count());
  Rng rng(8);
  std::size_t violations = 0;
  for (std::size_t k = 1; k <= 10000; ++k) {
    state = mcmc_step(state, model, priors, tuning, rng, k <= 1000 ? k : 0);
    for (std::size_t i = 0; i < 3; ++i) violations += !satisfies(model.evidence()[i], state.mtd[i], state.r[i]);
  }
  CHECK(violations == 0);
  CHECK(std::isfinite(log_posterior(state, model.evidence(), priors)));
}

TEST_CASE("no data recovers the priors") {
  const auto samples = run_chains(TrialDataset{}, HyperPriors{}, McmcConfig{});
  const auto mu = samples.pooled("mu");
  const auto r0 = samples.pooled("r0");
  const auto cv = samples.pooled("cv");
  CHECK(mu.size() == 10000);
  CHECK(std::abs(mean(mu) - 5.2) < 0.05);
  CHECK(std::abs(sd(mu) - 4.6 / std::sqrt(12.0)) < 0.05);
  CHECK(std::abs(mean(r0) - 3.0) < 0.05);
  CHECK(ks_uniform(mu, 2.9, 7.5) < 0.02);
  CHECK(ks_uniform(r0, 1.0, 5.0) < 0.02);
  // cv ~ N(0.5, sd 1/6) truncated at 0 (mass below 0 is ~0.13%).
  CHECK(std::abs(mean(cv) - 0.5) < 0.01);
  CHECK(std::abs(sd(cv) - 1 / 6.0) < 0.01);
}

TEST_CASE("run_chains on the bundled data") {
  const auto data = load_bundled("afm11");
  const auto samples = run_chains(data, HyperPriors{}, McmcConfig{});
  CHECK(samples.total_draws() == 10000);
  CHECK(samples.chain_count() == 4);
  CHECK(samples.parameters().size() == 4 + 2 * data.size());
  CHECK(samples.parameters()[4] == "mtd[1]");
  CHECK(samples.parameters()[4 + data.size()] == "r[1]");

  SUBCASE("acceptance rates after adaptation") {
    for (const auto& a : samples.acceptance()) {
      for (double rate : {a.mu, a.cv, a.r0, a.r, a.shift}) {
        CHECK(rate >= 0.1);
        CHECK(rate <= 0.6);
      }
    }
  }
  SUBCASE("every retained draw is feasible and tau matches cv") {
    std::size_t violations = 0;
    for (std::size_t c = 0; c < samples.chain_count(); ++c) {
      for (std::size_t t = 0; t < samples.draws_per_chain(); ++t) {
        const auto s = samples.state_at(c, t);
        violations += !std::isfinite(log_posterior(s, data, HyperPriors{}));
        violations += samples.draws(c, samples.index("tau"))[t] != cv_to_tau(s.cv);
      }
    }
    CHECK(violations == 0);
  }
  SUBCASE("mu median") {
    auto mu = samples.pooled("mu");
    std::nth_element(mu.begin(), mu.begin() + mu.size() / 2, mu.end());
    CHECK(std::abs(mu[mu.size() / 2] - 5.033) < 0.10);
  }
}

TEST_CASE("determinism and chain independence") {
  const auto data = load_bundled("afm11");
  const auto a = run_chains(data, HyperPriors{}, small_config(5));
  const auto b = run_chains(data, HyperPriors{}, small_config(5));
  const auto c = run_chains(data, HyperPriors{}, small_config(6));
  auto four = small_config(5);
  four.chains = 4;
  const auto d = run_chains(data, HyperPriors{}, four);
  for (std::size_t p = 0; p < a.parameters().size(); ++p) {
    for (std::size_t ch = 0; ch < 2; ++ch) {
      const auto x = a.draws(ch, p), y = b.draws(ch, p), z = d.draws(ch, p);
      REQUIRE(std::equal(x.begin(), x.end(), y.begin(), y.end()));
      // A chain's path depends only on (seed, chain index), not on how many run.
      REQUIRE(std::equal(x.begin(), x.end(), z.begin(), z.end()));
    }
  }
  const auto x = a.draws(0, 0), y = c.draws(0, 0);
  CHECK_FALSE(std::equal(x.begin(), x.end(), y.begin(), y.end()));
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("configuration and model checks") {
  McmcConfig c;
  CHECK_NOTHROW(c.check());
  c.thin = 0;
  CHECK_THROWS_AS(c.check(), ValidationError);
  CHECK_THROWS_AS(PosteriorModel(dataset({rec(1, 2, 2, 0)}), {{"1", 0}}), ValidationError);
  CHECK_THROWS_AS(run_chains(dataset({rec(1, 2, 2, 0), rec(7, 100, 101, 5)}), HyperPriors{}, small_config()),
                  InfeasibleError);
}

TEST_CASE("PosteriorSamples lookups") {
  const auto s = run_chains(dataset({rec(1, 2, 2, 0)}), HyperPriors{}, small_config());
  CHECK(s.has("mtd[1]"));
  CHECK_FALSE(s.has("mtd[2]"));
  CHECK_THROWS_AS(s.index("nope"), std::out_of_range);
  CHECK(s.pooled("mu").size() == 400);
  CHECK(s.per_chain("mu").size() == 2);
  CHECK(mtd_name("15*") == "mtd[15*]");
  CHECK(ratio_name("3") == "r[3]");
}
