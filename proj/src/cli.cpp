#include "ordtox/cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>

#include <pthread.h>

#include "ordtox/data_io.hpp"
#include "ordtox/errors.hpp"
#include "ordtox/predictive.hpp"
#include "ordtox/service.hpp"

namespace ordtox {

namespace {

struct CommonOptions {
  std::string data;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

TrialDataset load_data(const std::string& path) {
  return path.empty() ? load_bundled("afm11") : load_trial(path);
}

RunConfig load_run_config(const CommonOptions& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) c.mcmc.seed = *o.seed;
  return c;
}

void print_rows(std::ostream& out, const std::vector<SummaryRow>& rows) {
  std::size_t width = 9;
  for (const auto& r : rows) width = std::max(width, r.parameter.size());
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %10s %10s %10s %10s %8s %7s\n", static_cast<int>(width), "parameter",
                "lower95", "median", "upper95", "mean", "sseff", "psrf");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %10.3f %10.3f %10.3f %10.3f %8.0f %7.4f\n", static_cast<int>(width),
                  r.parameter.c_str(), r.lower95, r.median, r.upper95, r.mean, r.sseff, r.psrf);
    out << buf;
  }
}

/// Renders every file first so that a failure leaves the directory untouched.
void write_outputs(const std::string& dir, const std::vector<std::pair<std::string, std::string>>& files) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  for (const auto& [name, content] : files) write_file(std::filesystem::path(dir) / name, content);
}

template <typename F>
std::string render(F&& writer) {
  std::ostringstream s;
  writer(s);
  return s.str();
}

int cmd_fit(const CommonOptions& o, std::ostream& out) {
  const auto data = load_data(o.data);
  const auto config = load_run_config(o);
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = run_chains(data, config.priors, config.mcmc);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto rows = summarize(samples, false);
  const auto curves = density_curves(samples, true);

  write_outputs(o.out, {{"samples.csv", render([&](auto& s) { write_samples_csv(s, samples); })},
                        {"summary.csv", render([&](auto& s) { write_summary_csv(s, rows); })},
                        {"densities.csv", render([&](auto& s) { write_densities_csv(s, curves); })},
                        {"diagnostics.txt", render([&](auto& s) { write_diagnostics(s, samples, rows); })}});
  print_rows(out, rows);
  char buf[128];
  std::snprintf(buf, sizeof buf, "\n%zu draws in %.2f s; wrote %s\n", samples.total_draws(), seconds, o.out.c_str());
  out << buf;
  return kExitOk;
}

std::vector<Candidate> parse_doses(const std::string& list) {
  std::vector<Candidate> out;
  std::stringstream ss(list);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) out.push_back(parse_candidate(token));
  }
  if (out.empty()) throw ValidationError("--doses: no doses given");
  return out;
}

struct ScenarioFile {
  std::vector<std::string> drop_cohorts;
  std::vector<HypotheticalPatient> hypotheticals;
};

// {"drop_cohorts": ["6"], "hypotheticals": [{"label": "15*", "okdose": 0, "dose": 130}, ...]}
ScenarioFile load_scenario(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  ScenarioFile s;
  try {
    for (const auto& key : j.items()) {
      if (key.key() != "drop_cohorts" && key.key() != "hypotheticals") {
        throw ValidationError(path + ": unknown key '" + key.key() + "'");
      }
    }
    for (const auto& c : j.value("drop_cohorts", nlohmann::json::array())) {
      s.drop_cohorts.push_back(c.is_string() ? c.get<std::string>() : c.dump());
    }
    for (const auto& h : j.at("hypotheticals")) {
      s.hypotheticals.push_back({h.at("label").get<std::string>(), h.value("okdose", 0.0), h.at("dose").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  if (s.hypotheticals.empty()) throw ValidationError(path + ": no hypotheticals");
  return s;
}

void add_rows(std::vector<PredictionRow>& rows, const std::string& label, double okdose, double dose,
              const GradeDistribution& g) {
  for (int k = 0; k < 6; ++k) rows.push_back({label, okdose, dose, k, g.probs[k], g.mcse[k]});
}

void print_predictions(std::ostream& out, const std::vector<PredictionRow>& rows) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %10s %10s  %s\n", "label", "okdose", "dose",
                "P(grade 0..5) (mcse)");
  out << buf;
  for (std::size_t i = 0; i + 5 < rows.size(); i += 6) {
    std::snprintf(buf, sizeof buf, "%-8s %10g %10g ", rows[i].label.c_str(), rows[i].okdose, rows[i].dose);
    out << buf;
    for (std::size_t k = 0; k < 6; ++k) {
      std::snprintf(buf, sizeof buf, " %.3f(%.3f)", rows[i + k].probability, rows[i + k].mcse);
      out << buf;
    }
    out << '\n';
  }
}

int cmd_predict(const CommonOptions& o, std::vector<std::string> drop, const std::string& doses,
                const std::string& scenario_path, std::ostream& out) {
  if (doses.empty() == scenario_path.empty()) throw ValidationError("give exactly one of --doses or --scenario");
  auto data = load_data(o.data);
  const auto config = load_run_config(o);

  std::vector<PredictionRow> rows;
  std::vector<SummaryRow> summary;
  if (!scenario_path.empty()) {
    auto file = load_scenario(scenario_path);
    drop.insert(drop.end(), file.drop_cohorts.begin(), file.drop_cohorts.end());
    const Scenario scenario{drop_cohorts(data, drop), std::move(file.hypotheticals)};
    const auto pred = predict_scenario(scenario, config.priors, config.mcmc);
    for (const auto& p : pred.predictions) add_rows(rows, p.patient.label, p.patient.okdose, p.patient.dose, p.grades);
    summary = pred.summary;
  } else {
    const auto candidates = parse_doses(doses);
    const auto report = dose_decision_report(drop_cohorts(data, drop), config.priors, config.mcmc, candidates);
    // Latent labels follow the order in which conditioning okdoses first appear.
    std::vector<double> okdoses;
    for (const auto& c : candidates) {
      if (std::find(okdoses.begin(), okdoses.end(), c.okdose) == okdoses.end()) okdoses.push_back(c.okdose);
    }
    for (const auto& r : report.rows) {
      const auto k = std::find(okdoses.begin(), okdoses.end(), r.candidate.okdose) - okdoses.begin();
      add_rows(rows, "h" + std::to_string(k + 1), r.candidate.okdose, r.candidate.dose, r.grades);
    }
    summary = report.summary;
  }

  write_outputs(o.out, {{"prediction.csv", render([&](auto& s) { write_prediction_csv(s, rows); })},
                        {"restricted_summary.csv", render([&](auto& s) { write_summary_csv(s, summary); })}});
  print_rows(out, summary);
  out << '\n';
  print_predictions(out, rows);
  out << "\nwrote " << o.out << '\n';
  return kExitOk;
}

int cmd_validate(const std::string& path, std::ostream& out) {
  const auto data = path.empty() ? read_trial(bundled_data_dir() / "afm11.csv") : read_trial(path);
  if (data.empty()) {
    out << "no patients\n";
    return kExitValidation;
  }
  const auto violations = validate(data);
  for (const auto& v : violations) out << v.to_string() << '\n';
  if (!violations.empty()) return kExitValidation;
  out << "ok: " << data.size() << " patients\n";
  return kExitOk;
}

int cmd_summarize(const std::string& dir, std::ostream& out) {
  const auto path = std::filesystem::path(dir) / "summary.csv";
  std::istringstream in(read_file(path));
  print_rows(out, read_summary_csv(in));
  return kExitOk;
}

int cmd_serve(const std::string& host, int port, const std::string& data_dir, const std::string& state_dir,
              const std::string& preload, std::ostream& out, std::ostream& err) {
  if (!data_dir.empty()) ::setenv("ORDTOX_DATA_DIR", data_dir.c_str(), 1);
  ServiceOptions options;
  if (!state_dir.empty()) options.state_dir = state_dir;

  // Route SIGINT/SIGTERM to a watcher thread; server threads inherit the mask.
  sigset_t signals, previous;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, &previous);
  struct RestoreMask {
    sigset_t mask;
    ~RestoreMask() { pthread_sigmask(SIG_SETMASK, &mask, nullptr); }
  } restore{previous};

  SessionStore store(options);
  HttpServer server(store);
  const int bound = server.bind(host, port);

  if (!preload.empty()) {
    const auto created = store.handle({"POST", "/sessions", {}, nlohmann::json{{"dataset", preload}}.dump()});
    if (created.status != 201) throw ValidationError("cannot preload '" + preload + "': " + created.body.value("error", ""));
    const auto id = created.body["id"].get<std::string>();
    store.handle({"POST", "/sessions/" + id + "/fit", {}, ""});
    out << "session " << id << " (" << preload << ")\n";
  }
  out << "listening on http://" << host << ':' << bound << std::endl;

  std::atomic<bool> done{false};
  std::thread watcher([&] {
    const timespec tick{0, 100'000'000};
    while (!done) {
      if (sigtimedwait(&signals, nullptr, &tick) > 0) {
        server.stop();
        return;
      }
    }
  });
  server.run();
  done = true;
  watcher.join();
  err << "shutting down\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian latent-MTD toxicity modelling for dose-finding trials", "ordtox"};
  app.require_subcommand(1);

  CommonOptions fit_opts;
  auto* fit = app.add_subcommand("fit", "fit the model and write samples, summary, densities, diagnostics");
  fit->add_option("--data", fit_opts.data, "trial CSV (default: bundled afm11)");
  fit->add_option("--config", fit_opts.config, "JSON config");
  fit->add_option("--seed", fit_opts.seed, "random seed (default 20181031)");
  fit->add_option("--out", fit_opts.out, "output directory")->required();

  CommonOptions pred_opts;
  std::vector<std::string> drop;
  std::string doses, scenario;
  auto* predict = app.add_subcommand("predict", "grade distributions for hypothetical patients");
  predict->add_option("--data", pred_opts.data, "trial CSV (default: bundled afm11)");
  predict->add_option("--config", pred_opts.config, "JSON config");
  predict->add_option("--seed", pred_opts.seed, "random seed (default 20181031)");
  predict->add_option("--out", pred_opts.out, "output directory")->required();
  predict->add_option("--drop-cohort", drop, "cohort label to remove (repeatable)");
  predict->add_option("--doses", doses, "comma list of DOSE or OKDOSE:DOSE");
  predict->add_option("--scenario", scenario, "scenario JSON");

  std::string validate_path;
  auto* val = app.add_subcommand("validate", "check a trial CSV");
  val->add_option("--data", validate_path, "trial CSV (default: bundled afm11)");

  std::string summary_dir;
  auto* summ = app.add_subcommand("summarize", "print summary.csv from a fit output directory");
  summ->add_option("--in", summary_dir, "fit output directory")->required();

  std::string host = "127.0.0.1", data_dir, state_dir, preload;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port (0 picks a free one)");
  serve->add_option("--data-dir", data_dir, "bundled dataset directory");
  serve->add_option("--state-dir", state_dir, "persist sessions here");
  serve->add_option("--preload", preload, "create and fit a session on this bundled dataset");

  std::vector<const char*> argv{"ordtox"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }

  try {
    if (*fit) return cmd_fit(fit_opts, out);
    if (*predict) return cmd_predict(pred_opts, drop, doses, scenario, out);
    if (*val) return cmd_validate(validate_path, out);
    if (*summ) return cmd_summarize(summary_dir, out);
    if (*serve) return cmd_serve(host, port, data_dir, state_dir, preload, out, err);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const InfeasibleError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInfeasible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitValidation;
}

}  // namespace ordtox
