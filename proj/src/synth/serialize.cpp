#include <fstream>
#include <sstream>

#include "uniclin/error.hpp"
#include "uniclin/hash.hpp"
#include "uniclin/synth/cohort.hpp"

namespace uniclin::synth {
namespace {

using nlohmann::json;

constexpr const char* kSchema = "uniclin.cohort";
constexpr int kCohortVersion = 1;

json patient_to_json(const PatientRecord& p) {
  json hadms = json::array();
  for (const auto& h : p.hadms) {
    json icus = json::array();
    for (const auto& s : h.icus) {
      json events = json::array();
      for (const auto& e : s.events) events.push_back(json::array({e.time, e.channel, e.value}));
      icus.push_back({{"icu_id", s.icu_id},
                      {"in_time", s.in_time},
                      {"out_time", s.out_time},
                      {"events", std::move(events)},
                      {"latent", s.latent_severity}});
    }
    hadms.push_back({{"hadm_id", h.hadm_id},
                     {"admit_time", h.admit_time},
                     {"discharge_time", h.discharge_time},
                     {"died_in_hadm", h.died_in_hadm},
                     {"death_time", h.death_time ? json(*h.death_time) : json(nullptr)},
                     {"phenotypes", h.phenotypes},
                     {"icus", std::move(icus)}});
  }
  return {{"patient_id", p.patient_id}, {"hadms", std::move(hadms)}};
}

PatientRecord patient_from_json(const json& j) {
  PatientRecord p;
  p.patient_id = j.at("patient_id").get<std::int64_t>();
  for (const auto& jh : j.at("hadms")) {
    HadmRecord h;
    h.hadm_id = jh.at("hadm_id").get<std::int64_t>();
    h.admit_time = jh.at("admit_time").get<double>();
    h.discharge_time = jh.at("discharge_time").get<double>();
    h.died_in_hadm = jh.at("died_in_hadm").get<bool>();
    if (!jh.at("death_time").is_null()) h.death_time = jh.at("death_time").get<double>();
    h.phenotypes = jh.at("phenotypes").get<std::vector<std::string>>();
    for (const auto& js : jh.at("icus")) {
      IcuStay s;
      s.icu_id = js.at("icu_id").get<std::int64_t>();
      s.in_time = js.at("in_time").get<double>();
      s.out_time = js.at("out_time").get<double>();
      for (const auto& e : js.at("events")) {
        s.events.push_back(
            {e.at(0).get<double>(), e.at(1).get<std::uint16_t>(), e.at(2).get<float>()});
      }
      s.latent_severity = js.at("latent").get<std::vector<float>>();
      h.icus.push_back(std::move(s));
    }
    p.hadms.push_back(std::move(h));
  }
  return p;
}

}  // namespace

std::string to_ndjson(const Cohort& cohort) {
  std::string out = json{{"schema", kSchema},
                         {"version", kCohortVersion},
                         {"seed", cohort.seed},
                         {"config_hash", hex64(fnv1a(to_json(cohort.config).dump()))},
                         {"config", to_json(cohort.config)}}
                        .dump();
  out += '\n';
  for (const auto& p : cohort.patients) {
    out += patient_to_json(p).dump();
    out += '\n';
  }
  return out;
}

Cohort from_ndjson(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Cohort cohort;
  try {
    if (!std::getline(in, line)) fail(ErrorKind::kSchema, "cohort: empty file");
    const json header = json::parse(line);
    if (header.value("schema", "") != kSchema) fail(ErrorKind::kSchema, "cohort: not a cohort file");
    if (header.at("version").get<int>() != kCohortVersion) {
      fail(ErrorKind::kSchema, "cohort: unsupported version " + header.at("version").dump());
    }
    cohort.seed = header.at("seed").get<std::uint64_t>();
    cohort.config = gen_config_from_json(header.at("config"));
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      cohort.patients.push_back(patient_from_json(json::parse(line)));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, std::string("cohort: ") + e.what());
  }
  return cohort;
}

void save_cohort(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
  out << to_ndjson(cohort);
  if (!out) fail(ErrorKind::kIo, "write failed: " + path);
}

Cohort load_cohort(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_ndjson(ss.str());
}

}  // namespace uniclin::synth
