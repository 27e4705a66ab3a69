#pragma once

// Session-scoped trial monitoring API. SessionStore holds the state and
// answers transport-neutral requests; HttpServer exposes it over HTTP.
//
//   GET  /health
//   POST /sessions                        {"dataset"?, "drop_cohorts"?, "config"?}
//   GET  /sessions/{id}
//   POST /sessions/{id}/patients          {"patient_id","cohort","okdose","aedose","grade"}
//   POST /sessions/{id}/fit               {"config"?}
//   GET  /sessions/{id}/fit
//   GET  /sessions/{id}/summary?pooled=
//   GET  /sessions/{id}/densities?parameter=&pooled=
//   POST /sessions/{id}/whatif            {"candidates":[{"okdose","dose"}], "refit"?}

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ordtox/data_io.hpp"

namespace httplib {
class Server;
}

namespace ordtox {

struct ApiRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

struct ServiceOptions {
  /// When set, ledgers and configs are written here and restored on start.
  std::optional<std::filesystem::path> state_dir;
  RunConfig defaults;
};

enum class FitStatus { idle, running, done, failed };
std::string to_string(FitStatus status);

struct FitResult {
  std::string snapshot;
  RunConfig config;
  PosteriorSamples samples;
  std::vector<SummaryRow> summary;
  std::vector<SummaryRow> pooled_summary;
  std::vector<DensityCurve> densities;
  std::vector<DensityCurve> pooled_densities;
  double seconds = 0;
};

/// Hash identifying a ledger's contents.
std::string ledger_snapshot(const TrialDataset& ledger);

class SessionStore {
 public:
  explicit SessionStore(ServiceOptions options = {});
  ~SessionStore();
  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  /// Routes one request. Never throws.
  ApiResponse handle(const ApiRequest& request);

  /// Blocks until the session has no running fit or the timeout passes.
  /// Returns false on timeout or unknown id.
  bool wait_for_fit(const std::string& id, std::chrono::milliseconds timeout);

  std::size_t session_count() const;

 private:
  struct Session;

  std::shared_ptr<Session> find(const std::string& id) const;
  std::shared_ptr<Session> add_session(std::string id, TrialDataset ledger, RunConfig config);
  void persist(const Session& session) const;
  void restore();

  ApiResponse create_session(const nlohmann::json& body);
  ApiResponse get_session(Session& s);
  ApiResponse add_patient(Session& s, const nlohmann::json& body);
  ApiResponse start_fit(const std::shared_ptr<Session>& s, const nlohmann::json& body);
  ApiResponse fit_status(Session& s);
  ApiResponse summary(Session& s, const ApiRequest& request);
  ApiResponse densities(Session& s, const ApiRequest& request);
  ApiResponse whatif(Session& s, const nlohmann::json& body);

  ServiceOptions options_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

/// HTTP front end for a SessionStore.
class HttpServer {
 public:
  explicit HttpServer(SessionStore& store);
  ~HttpServer();

  /// Binds to host:port (port 0 picks a free one). Returns the bound port.
  /// Throws IoError if the port is unavailable.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  void run();
  void stop();

 private:
  SessionStore& store_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace ordtox
