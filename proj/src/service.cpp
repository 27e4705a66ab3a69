#include "ordtox/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>
#include <regex>

#include "ordtox/errors.hpp"

namespace ordtox {

using nlohmann::json;

namespace {

struct ApiError : std::runtime_error {
  ApiError(int status, const std::string& what, json extra = json::object())
      : std::runtime_error(what), status(status), extra(std::move(extra)) {}
  int status;
  json extra;
};

ApiResponse error_response(int status, const std::string& message, json extra = json::object()) {
  json body = std::move(extra);
  body["error"] = message;
  return {status, std::move(body)};
}

json parse_body(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ApiError(400, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ApiError(400, "request body must be a JSON object");
  return j;
}

double number_field(const json& obj, const char* key, std::optional<double> fallback = std::nullopt) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    if (fallback) return *fallback;
    throw ApiError(400, std::string("missing field '") + key + "'");
  }
  if (!it->is_number()) throw ApiError(400, std::string("field '") + key + "' must be a number");
  return it->get<double>();
}

int int_field(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ApiError(400, std::string("missing field '") + key + "'");
  if (!it->is_number_integer()) throw ApiError(400, std::string("field '") + key + "' must be an integer");
  const auto v = it->get<std::int64_t>();
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ApiError(400, std::string("field '") + key + "' out of range");
  }
  return static_cast<int>(v);
}

bool flag(const std::map<std::string, std::string>& query, const std::string& key) {
  const auto it = query.find(key);
  return it != query.end() && (it->second == "true" || it->second == "1" || it->second == "yes");
}

json to_json(const PatientRecord& p) {
  return {{"patient_id", p.patient_id},
          {"cohort", p.cohort},
          {"okdose", p.okdose},
          {"aedose", p.aedose},
          {"grade", p.grade.value()}};
}

PatientRecord record_from_json(const json& j) {
  PatientRecord p;
  p.patient_id = int_field(j, "patient_id");
  const auto cohort = j.find("cohort");
  if (cohort == j.end() || !cohort->is_string()) throw ApiError(400, "field 'cohort' must be a string");
  p.cohort = cohort->get<std::string>();
  p.okdose = number_field(j, "okdose");
  p.aedose = number_field(j, "aedose");
  const int g = int_field(j, "grade");
  if (g < 0 || g > ToxicityGrade::kMax) throw ApiError(400, "field 'grade' must be 0..5");
  p.grade = ToxicityGrade(g);
  return p;
}

json ledger_json(const TrialDataset& ledger) {
  json rows = json::array();
  for (const auto& p : ledger.patients) rows.push_back(to_json(p));
  return rows;
}

json violations_json(const std::vector<Violation>& violations) {
  json out = json::array();
  for (const auto& v : violations) {
    out.push_back({{"patient_id", v.patient_id}, {"message", v.message}, {"text", v.to_string()}});
  }
  return out;
}

// NaN and infinities become null.
json real(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json to_json(const SummaryRow& r) {
  return {{"parameter", r.parameter},
          {"group", r.group},
          {"lower95", real(r.lower95)},
          {"median", real(r.median)},
          {"upper95", real(r.upper95)},
          {"mean", real(r.mean)},
          {"sd", real(r.sd)},
          {"sseff", real(r.sseff)},
          {"psrf", real(r.psrf)},
          {"mcse", real(r.mcse)},
          {"central_lower95", real(r.central_lower95)},
          {"central_upper95", real(r.central_upper95)}};
}

json rows_json(const std::vector<SummaryRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) out.push_back(to_json(r));
  return out;
}

json to_json(const DensityCurve& c) {
  json j{{"parameter", c.parameter},
         {"bandwidth", c.bandwidth},
         {"draws", c.draw_count},
         {"log_dose", c.log_grid},
         {"density", c.density}};
  if (c.pool_key) {
    j["pool_key"] = {{"okdose", c.pool_key->okdose}, {"aedose", c.pool_key->aedose}, {"grade", c.pool_key->grade}};
  } else {
    j["pool_key"] = nullptr;
  }
  return j;
}

json to_json(const CandidateReport& r) {
  const auto& g = r.grades;
  return {{"okdose", r.candidate.okdose},
          {"dose", r.candidate.dose},
          {"probabilities", g.probs},
          {"mcse", g.mcse},
          {"p_dlt", g.p_dlt},
          {"p_dlt_mcse", g.p_dlt_mcse},
          {"p_fatal", g.p_fatal()},
          {"p_fatal_mcse", g.p_fatal_mcse()},
          {"draws", g.draws}};
}

std::string new_session_id() {
  static std::mutex m;
  static std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lock(m);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(gen()));
  return buf;
}

bool valid_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

}  // namespace

std::string to_string(FitStatus status) {
  switch (status) {
    case FitStatus::idle: return "idle";
    case FitStatus::running: return "running";
    case FitStatus::done: return "done";
    case FitStatus::failed: return "failed";
  }
  return "unknown";
}

std::string ledger_snapshot(const TrialDataset& ledger) { return model_fingerprint(PosteriorModel(ledger)); }

struct SessionStore::Session {
  std::mutex mu;
  std::condition_variable fit_finished;
  std::string id;
  TrialDataset ledger;
  RunConfig config;
  FitStatus status = FitStatus::idle;
  std::string failure;
  int failure_patient = 0;
  std::string running_snapshot;
  std::shared_ptr<const FitResult> last_fit;
  std::thread worker;

  std::string snapshot() const { return ledger_snapshot(ledger); }
  bool stale() const { return last_fit && last_fit->snapshot != snapshot(); }

  const FitResult& completed_fit() const {
    if (!last_fit) {
      throw ApiError(409, "no completed fit; POST /sessions/" + id + "/fit first", {{"status", to_string(status)}});
    }
    return *last_fit;
  }
};

SessionStore::SessionStore(ServiceOptions options) : options_(std::move(options)) {
  if (options_.state_dir) restore();
}

SessionStore::~SessionStore() {
  std::vector<std::thread> workers;
  {
    std::unique_lock lock(mutex_);
    for (auto& [id, s] : sessions_) {
      std::lock_guard guard(s->mu);
      if (s->worker.joinable()) workers.push_back(std::move(s->worker));
    }
  }
  for (auto& w : workers) w.join();
}

std::size_t SessionStore::session_count() const {
  std::shared_lock lock(mutex_);
  return sessions_.size();
}

std::shared_ptr<SessionStore::Session> SessionStore::find(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ApiError(404, "unknown session '" + id + "'");
  return it->second;
}

std::shared_ptr<SessionStore::Session> SessionStore::add_session(std::string id, TrialDataset ledger,
                                                                 RunConfig config) {
  auto s = std::make_shared<Session>();
  s->id = id;
  s->ledger = std::move(ledger);
  s->config = config;
  std::unique_lock lock(mutex_);
  sessions_[std::move(id)] = s;
  return s;
}

void SessionStore::persist(const Session& s) const {
  if (!options_.state_dir) return;
  const json dump{{"id", s.id}, {"patients", ledger_json(s.ledger)}, {"config", config_to_json(s.config)}};
  std::error_code ec;
  std::filesystem::create_directories(*options_.state_dir, ec);
  write_file(*options_.state_dir / (s.id + ".json"), dump.dump(2) + "\n");
}

void SessionStore::restore() {
  std::error_code ec;
  if (!std::filesystem::is_directory(*options_.state_dir, ec)) return;
  for (const auto& entry : std::filesystem::directory_iterator(*options_.state_dir, ec)) {
    if (entry.path().extension() != ".json") continue;
    try {
      const auto j = json::parse(read_file(entry.path()));
      const auto id = j.at("id").get<std::string>();
      if (!valid_id(id)) throw ValidationError("bad session id");
      TrialDataset ledger;
      for (const auto& row : j.at("patients")) ledger.patients.push_back(record_from_json(row));
      require_valid(ledger);
      add_session(id, std::move(ledger), apply_config(j.value("config", json::object()), options_.defaults));
    } catch (const std::exception& e) {
      std::clog << "ordtox: skipping " << entry.path().string() << ": " << e.what() << '\n';
    }
  }
}

bool SessionStore::wait_for_fit(const std::string& id, std::chrono::milliseconds timeout) {
  std::shared_ptr<Session> s;
  try {
    s = find(id);
  } catch (const ApiError&) {
    return false;
  }
  std::unique_lock lock(s->mu);
  return s->fit_finished.wait_for(lock, timeout, [&] { return s->status != FitStatus::running; });
}

ApiResponse SessionStore::handle(const ApiRequest& req) {
  static const std::regex session_path(R"(^/sessions/([^/]+)(/[a-z]+)?/?$)");
  try {
    if (req.path == "/health" && req.method == "GET") {
      return {200, {{"status", "ok"}, {"sessions", session_count()}}};
    }
    if ((req.path == "/sessions" || req.path == "/sessions/") && req.method == "POST") {
      return create_session(parse_body(req.body));
    }
    std::smatch m;
    if (std::regex_match(req.path, m, session_path)) {
      const auto s = find(m[1].str());
      const std::string tail = m[2].str();
      const bool get = req.method == "GET";
      const bool post = req.method == "POST";
      if (tail.empty() && get) return get_session(*s);
      if (tail == "/patients" && get) return get_session(*s);
      if (tail == "/patients" && post) return add_patient(*s, parse_body(req.body));
      if (tail == "/fit" && post) return start_fit(s, parse_body(req.body));
      if (tail == "/fit" && get) return fit_status(*s);
      if (tail == "/summary" && get) return summary(*s, req);
      if (tail == "/densities" && get) return densities(*s, req);
      if (tail == "/whatif" && post) return whatif(*s, parse_body(req.body));
    }
    return error_response(404, "no route for " + req.method + " " + req.path);
  } catch (const ApiError& e) {
    return error_response(e.status, e.what(), e.extra);
  } catch (const ValidationError& e) {
    return error_response(400, e.what());
  } catch (const InfeasibleError& e) {
    return error_response(400, e.what(), {{"patient_id", e.patient_id()}});
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

ApiResponse SessionStore::create_session(const json& body) {
  TrialDataset ledger;
  if (const auto it = body.find("dataset"); it != body.end() && !it->is_null()) {
    if (!it->is_string()) throw ApiError(400, "field 'dataset' must be a string");
    const auto name = it->get<std::string>();
    if (!has_bundled(name)) throw ApiError(404, "unknown dataset '" + name + "'");
    ledger = load_bundled(name);
  }
  if (const auto it = body.find("drop_cohorts"); it != body.end()) {
    std::vector<std::string> cohorts;
    if (!it->is_array()) throw ApiError(400, "field 'drop_cohorts' must be an array");
    for (const auto& c : *it) {
      if (c.is_string()) {
        cohorts.push_back(c.get<std::string>());
      } else if (c.is_number_integer()) {
        cohorts.push_back(std::to_string(c.get<std::int64_t>()));
      } else {
        throw ApiError(400, "cohort labels must be strings");
      }
    }
    ledger = drop_cohorts(ledger, cohorts);
  }
  const auto config = apply_config(body.value("config", json::object()), options_.defaults);
  const auto s = add_session(new_session_id(), std::move(ledger), config);
  std::lock_guard lock(s->mu);
  persist(*s);
  return {201, {{"id", s->id}, {"patient_count", s->ledger.size()}, {"snapshot", s->snapshot()}}};
}

ApiResponse SessionStore::get_session(Session& s) {
  std::lock_guard lock(s.mu);
  return {200,
          {{"id", s.id},
           {"patients", ledger_json(s.ledger)},
           {"patient_count", s.ledger.size()},
           {"snapshot", s.snapshot()},
           {"config", config_to_json(s.config)},
           {"fit_status", to_string(s.status)},
           {"stale", s.stale()}}};
}

ApiResponse SessionStore::add_patient(Session& s, const json& body) {
  const auto record = record_from_json(body);
  std::lock_guard lock(s.mu);
  TrialDataset next = s.ledger;
  next.patients.push_back(record);
  const auto violations = validate(next);
  if (!violations.empty()) {
    std::string msg = violations.front().to_string();
    return error_response(400, msg, {{"violations", violations_json(violations)}});
  }
  s.ledger = std::move(next);
  persist(s);
  return {201,
          {{"patients", ledger_json(s.ledger)},
           {"patient_count", s.ledger.size()},
           {"snapshot", s.snapshot()},
           {"stale", s.stale()}}};
}

ApiResponse SessionStore::start_fit(const std::shared_ptr<Session>& s, const json& body) {
  std::lock_guard lock(s->mu);
  if (s->status == FitStatus::running) {
    throw ApiError(409, "a fit is already running for this session", {{"status", "running"}});
  }
  const auto config = apply_config(body.value("config", json::object()), s->config);
  if (s->worker.joinable()) s->worker.join();  // finished; it no longer needs the lock

  s->status = FitStatus::running;
  s->failure.clear();
  s->failure_patient = 0;
  s->running_snapshot = s->snapshot();
  s->worker = std::thread([s, ledger = s->ledger, config, snapshot = s->running_snapshot] {
    std::shared_ptr<FitResult> result;
    std::string failure;
    int patient = 0;
    try {
      const auto t0 = std::chrono::steady_clock::now();
      auto r = std::make_shared<FitResult>();
      r->snapshot = snapshot;
      r->config = config;
      r->samples = run_chains(PosteriorModel(ledger), config.priors, config.mcmc);
      r->summary = summarize(r->samples, false);
      r->pooled_summary = summarize(r->samples, true);
      if (r->samples.total_draws() >= 100) {
        r->densities = density_curves(r->samples, false);
        r->pooled_densities = density_curves(r->samples, true);
      }
      r->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result = std::move(r);
    } catch (const InfeasibleError& e) {
      failure = e.what();
      patient = e.patient_id();
    } catch (const std::exception& e) {
      failure = e.what();
    }
    {
      std::lock_guard guard(s->mu);
      if (result) {
        s->last_fit = std::move(result);
        s->status = FitStatus::done;
      } else {
        s->status = FitStatus::failed;
        s->failure = failure;
        s->failure_patient = patient;
      }
    }
    s->fit_finished.notify_all();
  });
  return {202, {{"status", "running"}, {"snapshot", s->running_snapshot}}};
}

ApiResponse SessionStore::fit_status(Session& s) {
  std::lock_guard lock(s.mu);
  json body{{"status", to_string(s.status)}, {"stale", s.stale()}, {"ledger_snapshot", s.snapshot()}};
  if (s.status == FitStatus::running) body["snapshot"] = s.running_snapshot;
  if (s.status == FitStatus::failed) {
    body["reason"] = s.failure;
    body["patient_id"] = s.failure_patient ? json(s.failure_patient) : json(nullptr);
  }
  if (s.last_fit) {
    body["fit"] = {{"snapshot", s.last_fit->snapshot},
                   {"seconds", s.last_fit->seconds},
                   {"draws", s.last_fit->samples.total_draws()},
                   {"config", config_to_json(s.last_fit->config)}};
  }
  return {200, std::move(body)};
}

ApiResponse SessionStore::summary(Session& s, const ApiRequest& req) {
  std::shared_ptr<const FitResult> fit;
  bool stale = false;
  {
    std::lock_guard lock(s.mu);
    s.completed_fit();
    fit = s.last_fit;
    stale = s.stale();
  }
  const bool pooled = flag(req.query, "pooled");
  return {200,
          {{"snapshot", fit->snapshot},
           {"stale", stale},
           {"pooled", pooled},
           {"rows", rows_json(pooled ? fit->pooled_summary : fit->summary)}}};
}

ApiResponse SessionStore::densities(Session& s, const ApiRequest& req) {
  std::shared_ptr<const FitResult> fit;
  bool stale = false;
  {
    std::lock_guard lock(s.mu);
    s.completed_fit();
    fit = s.last_fit;
    stale = s.stale();
  }
  const bool pooled = flag(req.query, "pooled");
  const auto& curves = pooled ? fit->pooled_densities : fit->densities;
  json out = json::array();
  const auto param = req.query.find("parameter");
  for (const auto& c : curves) {
    if (param == req.query.end() || param->second.empty() || c.parameter == param->second) out.push_back(to_json(c));
  }
  if (param != req.query.end() && !param->second.empty() && out.empty()) {
    throw ApiError(404, "no density for parameter '" + param->second + "'");
  }
  return {200, {{"snapshot", fit->snapshot}, {"stale", stale}, {"pooled", pooled}, {"curves", std::move(out)}}};
}

ApiResponse SessionStore::whatif(Session& s, const json& body) {
  const auto it = body.find("candidates");
  if (it == body.end() || !it->is_array() || it->empty()) {
    throw ApiError(400, "field 'candidates' must be a non-empty array");
  }
  std::vector<Candidate> candidates;
  for (const auto& c : *it) {
    if (!c.is_object()) throw ApiError(400, "each candidate must be an object {okdose, dose}");
    candidates.push_back({number_field(c, "okdose", 0.0), number_field(c, "dose")});
  }
  const auto refit = body.find("refit");
  if (refit != body.end() && !refit->is_boolean()) throw ApiError(400, "field 'refit' must be true or false");
  const bool force = refit != body.end() && refit->get<bool>();

  TrialDataset ledger;
  RunConfig config;
  bool fit_stale = false;
  {
    std::lock_guard lock(s.mu);
    if (!force) {
      if (s.status == FitStatus::running) {
        throw ApiError(409, "a fit is running; wait for it or set refit", {{"status", "running"}});
      }
      s.completed_fit();
      if (s.stale()) {
        throw ApiError(409, "fit is stale: the ledger changed after the last fit; refit or set refit",
                       {{"stale", true}});
      }
    }
    fit_stale = s.stale();
    ledger = s.ledger;
    config = s.last_fit ? s.last_fit->config : s.config;
  }
  const auto report = dose_decision_report(ledger, config.priors, config.mcmc, candidates);
  json rows = json::array();
  for (const auto& r : report.rows) rows.push_back(to_json(r));
  return {200,
          {{"snapshot", ledger_snapshot(ledger)},
           {"fingerprint", report.fingerprint},
           {"stale", fit_stale},
           {"refit", force},
           {"draws", report.draws},
           {"candidates", std::move(rows)},
           {"summary", rows_json(report.summary)}}};
}

// ---------------------------------------------------------------------------

HttpServer::HttpServer(SessionStore& store) : store_(store), server_(std::make_unique<httplib::Server>()) {
  // httplib's default SO_REUSEPORT would let a second server share a busy port.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    ApiRequest api{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) api.query.emplace(k, v);
    const auto out = store_.handle(api);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  server_->Get(".*", dispatch);
  server_->Post(".*", dispatch);
  server_->Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::run() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

}  // namespace ordtox
