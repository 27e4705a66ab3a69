#include "ordtox/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "ordtox/errors.hpp"
#include "ordtox/truncated.hpp"

#ifndef ORDTOX_DEFAULT_DATA_DIR
#define ORDTOX_DEFAULT_DATA_DIR "data"
#endif

namespace ordtox {

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view chomp(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

std::string at_line(std::size_t line, const std::string& what) {
  return "line " + std::to_string(line) + ": " + what;
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

/// Line-oriented CSV reader that checks the header and field counts.
class CsvReader {
 public:
  CsvReader(std::istream& in, std::string_view header) : in_(in) {
    std::string line;
    if (!std::getline(in_, line) || chomp(line) != header) {
      throw ValidationError(at_line(1, "expected header '" + std::string(header) + "'"));
    }
    line_no_ = 1;
    width_ = split(header).size();
  }

  /// Next non-blank row, or false at end of input.
  bool next(std::vector<std::string_view>& fields) {
    while (std::getline(in_, line_)) {
      ++line_no_;
      const auto text = chomp(line_);
      if (text.find_first_not_of(" \t") == std::string_view::npos) continue;
      fields = split(text);
      if (fields.size() != width_) {
        fail("expected " + std::to_string(width_) + " fields, found " + std::to_string(fields.size()));
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError(at_line(line_no_, what));
  }

  double number(std::string_view field, std::string_view name) const {
    double v = 0;
    if (!parse_number(field, v)) fail("bad " + std::string(name) + " '" + std::string(field) + "'");
    return v;
  }

  template <typename T>
  T integer(std::string_view field, std::string_view name) const {
    T v = 0;
    if (!parse_number(field, v)) fail("bad " + std::string(name) + " '" + std::string(field) + "'");
    return v;
  }

 private:
  std::istream& in_;
  std::string line_;
  std::size_t line_no_ = 0;
  std::size_t width_ = 0;
};

bool cohort_ok(const std::string& cohort) {
  return !cohort.empty() && cohort.find_first_of(",\"\r\n") == std::string::npos;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------

std::string Violation::to_string() const {
  return "patient " + std::to_string(patient_id) + ": " + message;
}

std::vector<Violation> validate(const TrialDataset& dataset) {
  std::vector<Violation> out;
  std::map<int, int> seen;
  for (const auto& p : dataset.patients) {
    auto add = [&](std::string msg) { out.push_back({p.patient_id, std::move(msg)}); };
    if (p.patient_id <= 0) add("patient_id must be positive");
    if (seen[p.patient_id]++ > 0) add("duplicate patient_id");
    if (!cohort_ok(p.cohort)) add("cohort label must be non-empty without commas or quotes");
    if (!std::isfinite(p.okdose) || p.okdose < 0) add("okdose must be >= 0");
    if (!std::isfinite(p.aedose) || !(p.aedose > 0)) add("aedose must be > 0");
    if (p.okdose > p.aedose) {
      add("okdose > aedose");
    } else if (p.grade.value() == 0 && p.okdose != p.aedose) {
      add("grade 0 requires okdose = aedose");
    } else if (p.grade.value() > 0 && !(p.okdose < p.aedose)) {
      add("grade > 0 requires okdose < aedose");
    }
  }
  return out;
}

void require_valid(const TrialDataset& dataset) {
  const auto violations = validate(dataset);
  if (violations.empty()) return;
  std::string msg = "invalid dataset:";
  for (const auto& v : violations) msg += "\n  " + v.to_string();
  throw ValidationError(msg);
}

TrialDataset parse_trial(std::string_view text) {
  std::istringstream in{std::string(text)};
  CsvReader csv(in, kTrialHeader);
  TrialDataset out;
  std::vector<std::string_view> f;
  while (csv.next(f)) {
    PatientRecord p;
    p.patient_id = csv.integer<int>(f[0], "patient_id");
    p.cohort = std::string(f[1]);
    p.okdose = csv.number(f[2], "okdose");
    p.aedose = csv.number(f[3], "aedose");
    const int g = csv.integer<int>(f[4], "grade");
    if (g < 0 || g > ToxicityGrade::kMax) csv.fail("grade must be 0..5, got " + std::string(f[4]));
    p.grade = ToxicityGrade(g);
    out.patients.push_back(std::move(p));
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out.flush()) throw IoError("cannot write " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot write " + path.string() + ": " + ec.message());
}

TrialDataset read_trial(const std::filesystem::path& path) {
  try {
    return parse_trial(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

TrialDataset load_trial(const std::filesystem::path& path) {
  auto data = read_trial(path);
  if (data.empty()) throw ValidationError(path.string() + ": no patients");
  require_valid(data);
  return data;
}

std::string format_trial(const TrialDataset& dataset) {
  std::string out(kTrialHeader);
  out += '\n';
  for (const auto& p : dataset.patients) {
    out += std::to_string(p.patient_id) + ',' + p.cohort + ',' + format_double(p.okdose) + ',' +
           format_double(p.aedose) + ',' + std::to_string(p.grade.value()) + '\n';
  }
  return out;
}

void save_trial(const TrialDataset& dataset, const std::filesystem::path& path) {
  write_file(path, format_trial(dataset));
}

std::filesystem::path bundled_data_dir() {
  if (const char* env = std::getenv("ORDTOX_DATA_DIR"); env && *env) return env;
  return ORDTOX_DEFAULT_DATA_DIR;
}

bool has_bundled(std::string_view name) {
  const bool safe = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  });
  if (!safe) return false;
  std::error_code ec;
  return std::filesystem::is_regular_file(bundled_data_dir() / (std::string(name) + ".csv"), ec);
}

TrialDataset load_bundled(std::string_view name) {
  if (!has_bundled(name)) throw IoError("unknown dataset '" + std::string(name) + "'");
  return load_trial(bundled_data_dir() / (std::string(name) + ".csv"));
}

TrialDataset drop_cohorts(const TrialDataset& dataset, const std::vector<std::string>& cohorts) {
  TrialDataset out;
  for (const auto& p : dataset.patients) {
    if (std::find(cohorts.begin(), cohorts.end(), p.cohort) == cohorts.end()) out.patients.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double json_number(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) throw ValidationError("config: '" + key + "' must be a number");
  return v.get<double>();
}

std::uint64_t json_count(const nlohmann::json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  throw ValidationError("config: '" + key + "' must be a non-negative integer");
}

}  // namespace

RunConfig apply_config(const nlohmann::json& object, const RunConfig& base) {
  if (object.is_null()) return base;
  if (!object.is_object()) throw ValidationError("config must be a JSON object");
  RunConfig c = base;
  auto& p = c.priors;
  auto& m = c.mcmc;
  const std::map<std::string, double*> reals{
      {"mu_lo", &p.mu_lo},     {"mu_hi", &p.mu_hi}, {"cv_mean", &p.cv_mean}, {"cv_prec", &p.cv_prec},
      {"r0_lo", &p.r0_lo},     {"r0_hi", &p.r0_hi}, {"r_prec", &p.r_prec}};
  const std::map<std::string, std::size_t*> counts{{"chains", &m.chains},
                                                   {"adapt", &m.adapt_iters},
                                                   {"burnin", &m.burnin_iters},
                                                   {"retained", &m.retained_per_chain},
                                                   {"thin", &m.thin}};
  for (const auto& [key, value] : object.items()) {
    if (auto it = reals.find(key); it != reals.end()) {
      *it->second = json_number(value, key);
    } else if (auto jt = counts.find(key); jt != counts.end()) {
      *jt->second = static_cast<std::size_t>(json_count(value, key));
    } else if (key == "seed") {
      m.seed = json_count(value, key);
    } else if (key == "truncate_cv") {
      if (!value.is_boolean()) throw ValidationError("config: 'truncate_cv' must be true or false");
      p.truncate_cv = value.get<bool>();
    } else {
      throw ValidationError("config: unknown key '" + key + "'");
    }
  }
  p.check();
  m.check();
  return c;
}

RunConfig parse_config(std::string_view json_text) {
  const auto text = std::string(json_text);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return {};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return apply_config(j);
}

RunConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

nlohmann::json config_to_json(const RunConfig& c) {
  const auto& p = c.priors;
  const auto& m = c.mcmc;
  return {{"mu_lo", p.mu_lo},       {"mu_hi", p.mu_hi},
          {"cv_mean", p.cv_mean},   {"cv_prec", p.cv_prec},
          {"r0_lo", p.r0_lo},       {"r0_hi", p.r0_hi},
          {"r_prec", p.r_prec},     {"truncate_cv", p.truncate_cv},
          {"chains", m.chains},     {"adapt", m.adapt_iters},
          {"burnin", m.burnin_iters}, {"retained", m.retained_per_chain},
          {"thin", m.thin},         {"seed", m.seed}};
}

// ---------------------------------------------------------------------------

void write_samples_csv(std::ostream& out, const PosteriorSamples& samples) {
  out << kSamplesHeader << '\n';
  const auto& names = samples.parameters();
  std::string buf;
  for (std::size_t c = 0; c < samples.chain_count(); ++c) {
    const std::string chain = std::to_string(c + 1) + ',';
    for (std::size_t t = 0; t < samples.draws_per_chain(); ++t) {
      const std::string iter = std::to_string(t + 1) + ',';
      buf.clear();
      for (std::size_t p = 0; p < names.size(); ++p) {
        buf += chain;
        buf += iter;
        buf += names[p];
        buf += ',';
        buf += format_double(samples.draws(c, p)[t]);
        buf += '\n';
      }
      out << buf;
    }
  }
}

SampleTable read_samples_csv(std::istream& in) {
  // Parameter names may contain commas (pooled labels never appear here, but
  // guard anyway): the value is the last field, chain and iteration the first two.
  std::string line;
  if (!std::getline(in, line) || chomp(line) != kSamplesHeader) {
    throw ValidationError(at_line(1, "expected header '" + std::string(kSamplesHeader) + "'"));
  }
  SampleTable table;
  std::map<std::string, std::size_t, std::less<>> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = chomp(line);
    if (text.empty()) continue;
    const auto c1 = text.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : text.find(',', c1 + 1);
    const auto c3 = text.rfind(',');
    if (c2 == std::string_view::npos || c3 <= c2) throw ValidationError(at_line(line_no, "malformed row"));
    std::size_t chain = 0, iter = 0;
    double value = 0;
    if (!parse_number(text.substr(0, c1), chain) || chain == 0 ||
        !parse_number(text.substr(c1 + 1, c2 - c1 - 1), iter) || iter == 0 ||
        !parse_number(text.substr(c3 + 1), value)) {
      throw ValidationError(at_line(line_no, "malformed row"));
    }
    const auto name = text.substr(c2 + 1, c3 - c2 - 1);
    auto it = index.find(name);
    if (it == index.end()) {
      it = index.emplace(std::string(name), table.parameters.size()).first;
      table.parameters.emplace_back(name);
      for (auto& ch : table.chains) ch.emplace_back();
    }
    if (table.chains.size() < chain) table.chains.resize(chain, std::vector<std::vector<double>>(table.parameters.size()));
    auto& series = table.chains[chain - 1][it->second];
    if (series.size() + 1 != iter) throw ValidationError(at_line(line_no, "iterations out of order"));
    series.push_back(value);
  }
  return table;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    out << '"' << r.parameter << "\"," << r.group;
    for (double v : {r.lower95, r.median, r.upper95, r.mean, r.sd, r.sseff, r.psrf, r.mcse,
                     r.central_lower95, r.central_upper95}) {
      out << ',' << format_double(v);
    }
    out << '\n';
  }
}

std::vector<SummaryRow> read_summary_csv(std::istream& in) {
  // The parameter is quoted because pooled names contain commas.
  std::string line;
  if (!std::getline(in, line) || chomp(line) != kSummaryHeader) {
    throw ValidationError(at_line(1, "expected header '" + std::string(kSummaryHeader) + "'"));
  }
  std::vector<SummaryRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = chomp(line);
    if (text.empty()) continue;
    if (text.size() < 2 || text.front() != '"') throw ValidationError(at_line(line_no, "malformed row"));
    const auto close = text.find('"', 1);
    if (close == std::string_view::npos || close + 1 >= text.size() || text[close + 1] != ',') {
      throw ValidationError(at_line(line_no, "malformed row"));
    }
    SummaryRow r;
    r.parameter = std::string(text.substr(1, close - 1));
    const auto f = split(text.substr(close + 2));
    if (f.size() != 11) throw ValidationError(at_line(line_no, "expected 12 fields"));
    r.group = std::string(f[0]);
    double* targets[] = {&r.lower95, &r.median, &r.upper95, &r.mean,
                         &r.sd,      &r.sseff,  &r.psrf,    &r.mcse,
                         &r.central_lower95, &r.central_upper95};
    for (std::size_t k = 0; k < 10; ++k) {
      if (!parse_number(f[k + 1], *targets[k])) throw ValidationError(at_line(line_no, "bad number"));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_densities_csv(std::ostream& out, const std::vector<DensityCurve>& curves) {
  out << kDensitiesHeader << '\n';
  for (const auto& c : curves) {
    std::string prefix = '"' + c.parameter + "\",";
    if (c.pool_key) {
      prefix += format_double(c.pool_key->okdose) + ',' + format_double(c.pool_key->aedose) + ',' +
                std::to_string(c.pool_key->grade) + ',';
    } else {
      prefix += ",,,";
    }
    prefix += format_double(c.bandwidth) + ',' + std::to_string(c.draw_count) + ',';
    for (std::size_t k = 0; k < c.log_grid.size(); ++k) {
      out << prefix << format_double(c.log_grid[k]) << ',' << format_double(c.density[k]) << '\n';
    }
  }
}

std::vector<DensityCurve> read_densities_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || chomp(line) != kDensitiesHeader) {
    throw ValidationError(at_line(1, "expected header '" + std::string(kDensitiesHeader) + "'"));
  }
  std::vector<DensityCurve> curves;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = chomp(line);
    if (text.empty()) continue;
    const auto close = text.size() > 1 && text.front() == '"' ? text.find('"', 1) : std::string_view::npos;
    if (close == std::string_view::npos || close + 1 >= text.size()) {
      throw ValidationError(at_line(line_no, "malformed row"));
    }
    const auto name = text.substr(1, close - 1);
    const auto f = split(text.substr(close + 2));
    if (f.size() != 7) throw ValidationError(at_line(line_no, "expected 8 fields"));
    if (curves.empty() || curves.back().parameter != name) {
      DensityCurve c;
      c.parameter = std::string(name);
      if (!f[0].empty()) {
        PoolKey key;
        if (!parse_number(f[0], key.okdose) || !parse_number(f[1], key.aedose) ||
            !parse_number(f[2], key.grade)) {
          throw ValidationError(at_line(line_no, "bad pool key"));
        }
        c.pool_key = key;
      }
      if (!parse_number(f[3], c.bandwidth) || !parse_number(f[4], c.draw_count)) {
        throw ValidationError(at_line(line_no, "bad number"));
      }
      curves.push_back(std::move(c));
    }
    double x = 0, d = 0;
    if (!parse_number(f[5], x) || !parse_number(f[6], d)) throw ValidationError(at_line(line_no, "bad number"));
    curves.back().log_grid.push_back(x);
    curves.back().density.push_back(d);
  }
  return curves;
}

void write_prediction_csv(std::ostream& out, const std::vector<PredictionRow>& rows) {
  out << kPredictionHeader << '\n';
  for (const auto& r : rows) {
    out << r.label << ',' << format_double(r.okdose) << ',' << format_double(r.dose) << ',' << r.grade
        << ',' << format_double(r.probability) << ',' << format_double(r.mcse) << '\n';
  }
}

std::vector<PredictionRow> read_prediction_csv(std::istream& in) {
  CsvReader csv(in, kPredictionHeader);
  std::vector<PredictionRow> rows;
  std::vector<std::string_view> f;
  while (csv.next(f)) {
    PredictionRow r;
    r.label = std::string(f[0]);
    r.okdose = csv.number(f[1], "okdose");
    r.dose = csv.number(f[2], "dose");
    r.grade = csv.integer<int>(f[3], "grade");
    r.probability = csv.number(f[4], "probability");
    r.mcse = csv.number(f[5], "mcse");
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_diagnostics(std::ostream& out, const PosteriorSamples& samples,
                       const std::vector<SummaryRow>& rows) {
  const auto& cfg = samples.config();
  out << "chains " << cfg.chains << ", adapt " << cfg.adapt_iters << ", burnin " << cfg.burnin_iters
      << ", retained " << cfg.retained_per_chain << " per chain (thin " << cfg.thin << "), seed "
      << cfg.seed << '\n';
  out << "model " << samples.fingerprint() << ", " << samples.total_draws() << " retained draws\n\n";

  std::size_t width = 9;
  for (const auto& r : rows) width = std::max(width, r.parameter.size());
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s %10s %10s\n", static_cast<int>(width), "parameter", "psrf", "sseff");
  out << buf;
  const SummaryRow* worst_psrf = nullptr;
  const SummaryRow* worst_ess = nullptr;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %10.4f %10.0f\n", static_cast<int>(width), r.parameter.c_str(),
                  r.psrf, r.sseff);
    out << buf;
    if (!std::isnan(r.psrf) && (!worst_psrf || r.psrf > worst_psrf->psrf)) worst_psrf = &r;
    if (!worst_ess || r.sseff < worst_ess->sseff) worst_ess = &r;
  }
  out << '\n';
  if (worst_psrf) out << "max psrf  " << format_double(worst_psrf->psrf) << " (" << worst_psrf->parameter << ")\n";
  if (worst_ess) out << "min sseff " << format_double(worst_ess->sseff) << " (" << worst_ess->parameter << ")\n";

  out << "\nacceptance rates (mu, cv, r0, r, shift)\n";
  for (std::size_t c = 0; c < samples.acceptance().size(); ++c) {
    const auto& a = samples.acceptance()[c];
    std::snprintf(buf, sizeof buf, "chain %zu: %.3f %.3f %.3f %.3f %.3f\n", c + 1, a.mu, a.cv, a.r0, a.r,
                  a.shift);
    out << buf;
  }
  out << "\ntruncated-normal tail fallbacks: " << tail_fallback_count() << '\n';
}

}  // namespace ordtox
