#include <doctest.h>
#include <httplib.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <thread>

#include "ordtox/errors.hpp"
#include "ordtox/service.hpp"

using namespace ordtox;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

ApiResponse call(SessionStore& store, const std::string& method, const std::string& path, const json& body = nullptr,
                 std::map<std::string, std::string> query = {}) {
  return store.handle({method, path, std::move(query), body.is_null() ? "" : body.dump()});
}

std::string create(SessionStore& store, const json& body) {
  const auto r = call(store, "POST", "/sessions", body);
  REQUIRE(r.status == 201);
  return r.body.at("id").get<std::string>();
}

json fast_config() { return {{"chains", 2}, {"adapt", 100}, {"burnin", 200}, {"retained", 200}, {"thin", 1}}; }

json fit_and_wait(SessionStore& store, const std::string& id, const json& body = json::object()) {
  const auto start = call(store, "POST", "/sessions/" + id + "/fit", body);
  REQUIRE(start.status == 202);
  REQUIRE(store.wait_for_fit(id, 120s));
  return call(store, "GET", "/sessions/" + id + "/fit").body;
}

const json& row(const json& rows, const std::string& name) {
  const auto it = std::find_if(rows.begin(), rows.end(), [&](const json& r) { return r.at("parameter") == name; });
  REQUIRE(it != rows.end());
  return *it;
}

json patient(int id, const std::string& cohort, double ok, double ae, int grade) {
  return {{"patient_id", id}, {"cohort", cohort}, {"okdose", ok}, {"aedose", ae}, {"grade", grade}};
}

}  // namespace

TEST_CASE("sessions") {
  SessionStore store;
  const auto health = call(store, "GET", "/health");
  CHECK(health.status == 200);
  CHECK(health.body["status"] == "ok");

  const auto a = call(store, "POST", "/sessions", {{"dataset", "afm11"}});
  CHECK(a.status == 201);
  CHECK(a.body["patient_count"] == 17);
  const auto b = call(store, "POST", "/sessions", json::object());
  CHECK(b.body["patient_count"] == 0);
  CHECK(call(store, "POST", "/sessions", {{"dataset", "nope"}}).status == 404);
  CHECK(call(store, "POST", "/sessions", {{"dataset", "afm11"}, {"drop_cohorts", {"6"}}}).body["patient_count"] == 14);
  CHECK(call(store, "POST", "/sessions", {{"config", {{"mu_lo", 9}}}}).status == 400);
  CHECK(store.session_count() == 3);
  CHECK(a.body["id"] != b.body["id"]);

  const auto got = call(store, "GET", "/sessions/" + a.body["id"].get<std::string>());
  CHECK(got.status == 200);
  CHECK(got.body["patients"].size() == 17);
  CHECK(got.body["patients"][16] == patient(17, "6", 0, 130, 5));
  CHECK(got.body["fit_status"] == "idle");
  CHECK(got.body["stale"] == false);
}

TEST_CASE("adding patients") {
  SessionStore store;
  const auto id = create(store, {{"dataset", "afm11"}, {"config", fast_config()}});
  const auto before = call(store, "GET", "/sessions/" + id).body["snapshot"];
  fit_and_wait(store, id);

  const auto added = call(store, "POST", "/sessions/" + id + "/patients", patient(18, "C7", 60, 60, 0));
  CHECK(added.status == 201);
  CHECK(added.body["patient_count"] == 18);
  CHECK(added.body["snapshot"] != before);
  CHECK(added.body["stale"] == true);
  CHECK(call(store, "GET", "/sessions/" + id + "/fit").body["stale"] == true);

  const auto dup = call(store, "POST", "/sessions/" + id + "/patients", patient(17, "C7", 60, 60, 0));
  CHECK(dup.status == 400);
  CHECK(dup.body["error"] == "patient 17: duplicate patient_id");

  const auto bad = call(store, "POST", "/sessions/" + id + "/patients", patient(19, "C7", 60, 20, 3));
  CHECK(bad.status == 400);
  CHECK(bad.body["error"] == "patient 19: okdose > aedose");
  CHECK(bad.body["violations"][0]["message"] == "okdose > aedose");
  CHECK(bad.body["violations"][0]["patient_id"] == 19);

  CHECK(call(store, "POST", "/sessions/" + id + "/patients", {{"patient_id", 20}}).status == 400);
  CHECK(call(store, "POST", "/sessions/" + id + "/patients", patient(21, "C7", 1, 2, 9)).status == 400);
  // Rejected rows leave the ledger untouched.
  CHECK(call(store, "GET", "/sessions/" + id).body["patient_count"] == 18);
}

TEST_CASE("fitting the bundled trial") {
  SessionStore store;
  const auto id = create(store, {{"dataset", "afm11"}});
  CHECK(call(store, "GET", "/sessions/" + id + "/fit").body["status"] == "idle");
  CHECK(call(store, "GET", "/sessions/" + id + "/summary").status == 409);

  const auto start = call(store, "POST", "/sessions/" + id + "/fit");
  CHECK(start.status == 202);
  CHECK(start.body["status"] == "running");
  const auto again = call(store, "POST", "/sessions/" + id + "/fit");
  const auto status = call(store, "GET", "/sessions/" + id + "/fit").body["status"];
  // The fit may already be done on a fast machine; a second start conflicts only while running.
  if (status == "running") CHECK(again.status == 409);
  REQUIRE(store.wait_for_fit(id, 120s));

  const auto fit = call(store, "GET", "/sessions/" + id + "/fit").body;
  CHECK(fit["status"] == "done");
  CHECK(fit["stale"] == false);
  CHECK(fit["fit"]["draws"] == 10000);
  CHECK(fit["fit"]["snapshot"] == fit["ledger_snapshot"]);

  const auto summary = call(store, "GET", "/sessions/" + id + "/summary").body;
  const auto& rows = summary["rows"];
  CHECK(rows.size() == 21);
  CHECK(std::abs(row(rows, "mu")["median"].get<double>() - 5.033) < 0.10);
  CHECK(std::abs(row(rows, "cv")["median"].get<double>() - 1.069) < 0.12);
  CHECK(std::abs(row(rows, "tau")["median"].get<double>() - 1.312) < 0.25);
  CHECK(std::abs(row(rows, "r0")["median"].get<double>() - 1.330) < 0.06);
  CHECK(std::abs(row(rows, "mtd[17]")["median"].get<double>() - 50.2) < 7);
  for (const auto& r : rows) CHECK(r["psrf"].get<double>() < 1.1);

  const auto pooled = call(store, "GET", "/sessions/" + id + "/summary", nullptr, {{"pooled", "true"}}).body;
  CHECK(pooled["pooled"] == true);
  CHECK(pooled["rows"].size() < rows.size());

  SUBCASE("densities") {
    const auto all = call(store, "GET", "/sessions/" + id + "/densities").body["curves"];
    CHECK(all.size() == 17);
    const auto one = call(store, "GET", "/sessions/" + id + "/densities", nullptr, {{"parameter", "mtd[12]"}});
    CHECK(one.status == 200);
    REQUIRE(one.body["curves"].size() == 1);
    CHECK(one.body["curves"][0]["log_dose"].size() == one.body["curves"][0]["density"].size());
    CHECK(call(store, "GET", "/sessions/" + id + "/densities", nullptr, {{"parameter", "mu"}}).status == 404);
    CHECK(call(store, "GET", "/sessions/" + id + "/densities", nullptr, {{"pooled", "1"}}).body["curves"].size() ==
          12);
  }
}

TEST_CASE("infeasible ledger fails the fit and names the patient") {
  SessionStore store;
  const auto id = create(store, {{"config", fast_config()}});
  call(store, "POST", "/sessions/" + id + "/patients", patient(1, "a", 2, 2, 0));
  call(store, "POST", "/sessions/" + id + "/patients", patient(7, "a", 100, 101, 5));
  const auto fit = fit_and_wait(store, id);
  CHECK(fit["status"] == "failed");
  CHECK(fit["patient_id"] == 7);
  CHECK(fit["reason"].get<std::string>().find("7") != std::string::npos);
  CHECK(call(store, "GET", "/sessions/" + id + "/summary").status == 409);
}

TEST_CASE("what-if on cohorts 1-5") {
  SessionStore store;
  const auto id = create(store, {{"dataset", "afm11"}, {"drop_cohorts", {"6"}}});
  const json body{{"candidates", {{{"okdose", 0}, {"dose", 130}}, {{"dose", 0.001}}, {{"okdose", 130}, {"dose", 400}}}}};
  CHECK(call(store, "POST", "/sessions/" + id + "/whatif", body).status == 409);  // no fit yet
  fit_and_wait(store, id);

  const auto r = call(store, "POST", "/sessions/" + id + "/whatif", body);
  REQUIRE(r.status == 200);
  CHECK(r.body["draws"] == 10000);
  CHECK(r.body["refit"] == false);
  const auto& cands = r.body["candidates"];
  REQUIRE(cands.size() == 3);
  // Rows come back sorted by dose.
  CHECK(cands[0]["dose"] == 0.001);
  CHECK(cands[0]["probabilities"][0].get<double>() >= 0.999);
  const auto& at130 = cands[1];
  CHECK(at130["okdose"] == 0);
  const double p5 = at130["p_fatal"].get<double>();
  CHECK(p5 > 0.16 - 2 * at130["p_fatal_mcse"].get<double>());
  CHECK(std::abs(p5 - 0.17) <= 0.05);
  double total = 0;
  for (const auto& p : at130["probabilities"]) total += p.get<double>();
  CHECK(total == doctest::Approx(1.0));

  call(store, "POST", "/sessions/" + id + "/patients", patient(15, "6", 0, 130, 5));
  const auto stale = call(store, "POST", "/sessions/" + id + "/whatif", body);
  CHECK(stale.status == 409);
  CHECK(stale.body["stale"] == true);

  const auto forced = call(store, "POST", "/sessions/" + id + "/whatif", {{"candidates", body["candidates"]}, {"refit", true}});
  CHECK(forced.status == 200);
  CHECK(forced.body["refit"] == true);
  CHECK(forced.body["stale"] == true);
  CHECK(forced.body["snapshot"] != r.body["snapshot"]);

  CHECK(call(store, "POST", "/sessions/" + id + "/whatif", {{"candidates", json::array()}}).status == 400);
  CHECK(call(store, "POST", "/sessions/" + id + "/whatif", {{"candidates", {{{"dose", -1}}}}, {"refit", true}}).status ==
        400);
}

TEST_CASE("request errors") {
  SessionStore store;
  CHECK(call(store, "GET", "/sessions/zzz").status == 404);
  CHECK(call(store, "GET", "/sessions/zzz/fit").status == 404);
  CHECK(call(store, "GET", "/nowhere").status == 404);
  CHECK(call(store, "DELETE", "/health").status == 404);
  const auto bad = store.handle({"POST", "/sessions", {}, "{not json"});
  CHECK(bad.status == 400);
  CHECK(bad.body.contains("error"));
  const auto id = create(store, json::object());
  CHECK(store.handle({"POST", "/sessions/" + id + "/patients", {}, "[1,2"}).status == 400);
  CHECK(call(store, "POST", "/sessions/" + id + "/fit", {{"config", {{"bogus", 1}}}}).status == 400);
  CHECK(call(store, "GET", "/sessions/" + id + "/unknown").status == 404);
}

TEST_CASE("state directory persistence") {
  const auto dir = std::filesystem::temp_directory_path() / ("ordtox_state_" + std::to_string(std::random_device{}()));
  std::string id;
  {
    SessionStore store({dir, {}});
    id = create(store, {{"dataset", "afm11"}, {"config", {{"seed", 99}}}});
    call(store, "POST", "/sessions/" + id + "/patients", patient(18, "C7", 60, 60, 0));
  }
  write_file(dir / "junk.json", "{broken");
  {
    SessionStore store({dir, {}});
    CHECK(store.session_count() == 1);
    const auto s = call(store, "GET", "/sessions/" + id).body;
    CHECK(s["patient_count"] == 18);
    CHECK(s["patients"][17] == patient(18, "C7", 60, 60, 0));
    CHECK(s["config"]["seed"] == 99);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("sessions fitted concurrently stay isolated") {
  SessionStore store;
  const auto cfg = fast_config();
  const auto a = create(store, {{"dataset", "afm11"}, {"config", cfg}});
  const auto b = create(store, {{"dataset", "afm11"}, {"drop_cohorts", {"5", "6"}}, {"config", cfg}});
  CHECK(call(store, "POST", "/sessions/" + a + "/fit").status == 202);
  CHECK(call(store, "POST", "/sessions/" + b + "/fit").status == 202);
  std::thread writer([&] {
    for (int k = 0; k < 20; ++k) call(store, "POST", "/sessions/" + b + "/patients", patient(100 + k, "x", 5, 5, 0));
  });
  writer.join();
  REQUIRE(store.wait_for_fit(a, 120s));
  REQUIRE(store.wait_for_fit(b, 120s));
  const auto ra = call(store, "GET", "/sessions/" + a + "/summary").body;
  const auto rb = call(store, "GET", "/sessions/" + b + "/summary").body;
  CHECK(ra["rows"].size() == 21);
  CHECK(ra["stale"] == false);
  CHECK(rb["rows"].size() == 13);  // 9 patients at fit start
  CHECK(rb["stale"] == true);
  CHECK(call(store, "GET", "/sessions/" + a).body["patient_count"] == 17);
  CHECK(call(store, "GET", "/sessions/" + b).body["patient_count"] == 29);

  // Same ledger and config on a fresh store reproduces session a exactly.
  SessionStore other;
  const auto c = create(other, {{"dataset", "afm11"}, {"config", cfg}});
  fit_and_wait(other, c);
  CHECK(call(other, "GET", "/sessions/" + c + "/summary").body["rows"] == ra["rows"]);
}

TEST_CASE("HTTP transport") {
  SessionStore store;
  HttpServer server(store);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread loop([&] { server.run(); });

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(json::parse(health->body)["status"] == "ok");

  auto created = client.Post("/sessions", R"({"dataset":"afm11"})", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto id = json::parse(created->body)["id"].get<std::string>();
  auto missing = client.Get("/sessions/" + id + "/densities?parameter=mtd%5B12%5D");
  REQUIRE(missing);
  CHECK(missing->status == 409);
  auto preflight = client.Options("/sessions");
  REQUIRE(preflight);
  CHECK(preflight->status == 204);
  CHECK(preflight->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);

  {
    HttpServer clash(store);
    CHECK_THROWS_AS(clash.bind("127.0.0.1", port), IoError);
  }
  server.stop();
  loop.join();
}
