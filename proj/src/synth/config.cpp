#include <algorithm>
#include <cmath>
#include <set>

#include "uniclin/error.hpp"
#include "uniclin/synth/cohort.hpp"

namespace uniclin::synth {

bool HadmRecord::has_phenotype(const std::string& name) const {
  return std::binary_search(phenotypes.begin(), phenotypes.end(), name);
}

GenConfig GenConfig::defaults() {
  GenConfig c;
  c.channels = {
      {"FiO2", 1.0, 0.30, 0.35, 0.40, 0.10, 1.0},
      {"Glucose", 2.0, 0.30, 0.35, 130.0, 30.0, 0.6},
      {"Sodium", 4.0, 0.30, 0.35, 139.0, 4.0, -0.3},
      {"Potassium", 4.0, 0.30, 0.35, 4.1, 0.5, 0.5},
      {"Magnesium", 8.0, 0.30, 0.35, 2.0, 0.25, -0.2},
      {"Hct", 6.0, 0.30, 0.35, 31.0, 5.0, -0.5},
      {"Chloride", 6.0, 0.30, 0.35, 104.0, 5.0, 0.3},
      {"pH Blood", 3.0, 0.30, 0.35, 7.38, 0.06, -0.8},
      {"Total CO2", 5.0, 0.30, 0.35, 24.0, 4.0, -0.6},
      {"Base Excess", 5.0, 0.30, 0.35, 0.0, 4.0, -0.8},
  };
  c.phenotypes = {
      {"CORONARY ARTERY DISEASE", 0.25, 0.2, 6, 0.9},
      {"PNEUMONIA", 0.20, 0.4, 0, 0.9},
      {"ITIS", 0.15, 0.1, 1, 0.8},
      {"SEPSIS", 0.18, 0.8, 7, -0.9},
      {"HEART FAILURE", 0.22, 0.5, 2, -0.8},
      {"CHEST PAIN", 0.15, -0.3, 3, 0.8},
      {"MYOCARDIAL INFARCTION", 0.12, 0.3, 3, -0.9},
      {"GASTROINTESTINAL BLEED", 0.12, 0.2, 5, -1.0},
      {"FEVER", 0.15, 0.3, 9, 0.8},
      {"AORTIC STENOSIS", 0.10, 0.2, 8, 0.9},
      {"RENAL FAILURE", 0.18, 0.5, 4, 1.0},
      {"UPPER GI BLEED", 0.10, 0.2, 5, -0.9},
      {"HYPOT", 0.15, 0.4, 8, -0.9},
      {"ALTERED MENTAL STATUS", 0.12, 0.3, 2, 0.9},
  };
  return c;
}

std::optional<std::size_t> GenConfig::channel_index(const std::string& name) const {
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].name == name) return c;
  }
  return std::nullopt;
}

void GenConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::kConfig, "gen config: " + msg); };
  if (n_patients < 1) bad("n_patients must be >= 1");
  if (channels.size() < 2) bad("need at least 2 channels");
  if (channels.size() > 65535) bad("too many channels");
  std::set<std::string> names;
  for (const auto& ch : channels) {
    if (ch.name.empty() || !names.insert(ch.name).second) bad("channel names must be unique");
    if (!(ch.base_gap_hours > 0.0) || !std::isfinite(ch.base_gap_hours)) {
      bad("channel " + ch.name + ": base_gap_hours must be positive");
    }
    for (double v : {ch.intensity_gain, ch.gap_jitter, ch.mean, ch.scale, ch.loading}) {
      if (!std::isfinite(v)) bad("channel " + ch.name + ": non-finite parameter");
    }
    if (ch.gap_jitter < 0.0 || !(ch.scale > 0.0)) bad("channel " + ch.name + ": bad jitter/scale");
  }
  std::set<std::string> pnames;
  for (const auto& p : phenotypes) {
    if (p.name.empty() || !pnames.insert(p.name).second) bad("phenotype names must be unique");
    if (!(p.prevalence > 0.0 && p.prevalence < 1.0)) bad("phenotype " + p.name + ": prevalence");
    if (p.channel >= channels.size()) bad("phenotype " + p.name + ": channel out of range");
    if (!std::isfinite(p.severity_coef) || !std::isfinite(p.offset)) {
      bad("phenotype " + p.name + ": non-finite parameter");
    }
  }
  for (double v : {cohort_span_hours, extra_hadm_rate, readmit_gap_mean_hours, second_icu_prob,
                   frailty_sd, hadm_severity_sd, latent_step_hours, reversion_per_hour,
                   stationary_sd, threshold_sd, mortality_rate, hazard_multiplier,
                   los_median_days, los_severity_coef, los_sigma, min_stay_hours,
                   observation_noise}) {
    if (!std::isfinite(v)) bad("non-finite parameter");
  }
  if (!(latent_step_hours > 0.0)) bad("latent_step_hours must be positive");
  if (!(min_stay_hours > 0.0) || !(los_median_days > 0.0)) bad("zero-length stays");
  if (cohort_span_hours < 0.0 || extra_hadm_rate < 0.0 || readmit_gap_mean_hours <= 0.0) {
    bad("admission schedule");
  }
  if (second_icu_prob < 0.0 || second_icu_prob > 1.0) bad("second_icu_prob");
  if (mortality_rate < 0.0 || hazard_multiplier < 0.0 || mortality_rate * hazard_multiplier > 1.0) {
    bad("mortality_rate * hazard_multiplier must lie in [0,1]");
  }
  if (reversion_per_hour < 0.0 || reversion_per_hour * latent_step_hours >= 1.0) {
    bad("reversion_per_hour");
  }
  if (frailty_sd < 0.0 || hadm_severity_sd < 0.0 || stationary_sd < 0.0 || threshold_sd < 0.0 ||
      los_sigma < 0.0 || observation_noise < 0.0) {
    bad("negative spread");
  }
}

namespace {

using nlohmann::json;

template <typename T>
void read(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  seen.insert(key);
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!seen.count(it.key())) fail(ErrorKind::kConfig, where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace

nlohmann::json to_json(const GenConfig& c) {
  json channels = json::array();
  for (const auto& ch : c.channels) {
    channels.push_back({{"name", ch.name},
                        {"base_gap_hours", ch.base_gap_hours},
                        {"intensity_gain", ch.intensity_gain},
                        {"gap_jitter", ch.gap_jitter},
                        {"mean", ch.mean},
                        {"scale", ch.scale},
                        {"loading", ch.loading}});
  }
  json phenos = json::array();
  for (const auto& p : c.phenotypes) {
    phenos.push_back({{"name", p.name},
                      {"prevalence", p.prevalence},
                      {"severity_coef", p.severity_coef},
                      {"channel", p.channel},
                      {"offset", p.offset}});
  }
  return {{"version", GenConfig::kVersion},
          {"n_patients", c.n_patients},
          {"channels", channels},
          {"phenotypes", phenos},
          {"cohort_span_hours", c.cohort_span_hours},
          {"extra_hadm_rate", c.extra_hadm_rate},
          {"readmit_gap_mean_hours", c.readmit_gap_mean_hours},
          {"second_icu_prob", c.second_icu_prob},
          {"frailty_sd", c.frailty_sd},
          {"hadm_severity_sd", c.hadm_severity_sd},
          {"latent_step_hours", c.latent_step_hours},
          {"reversion_per_hour", c.reversion_per_hour},
          {"stationary_sd", c.stationary_sd},
          {"threshold_sd", c.threshold_sd},
          {"mortality_rate", c.mortality_rate},
          {"hazard_multiplier", c.hazard_multiplier},
          {"los_median_days", c.los_median_days},
          {"los_severity_coef", c.los_severity_coef},
          {"los_sigma", c.los_sigma},
          {"min_stay_hours", c.min_stay_hours},
          {"observation_noise", c.observation_noise}};
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::kConfig, "gen config: expected an object");
  GenConfig c = GenConfig::defaults();
  try {
    std::set<std::string> seen;
    int version = GenConfig::kVersion;
    read(j, "version", version, seen);
    if (version != GenConfig::kVersion) {
      fail(ErrorKind::kSchema, "gen config: version " + std::to_string(version) +
                                   " (expected " + std::to_string(GenConfig::kVersion) + ")");
    }
    read(j, "n_patients", c.n_patients, seen);
    seen.insert("channels");
    if (auto it = j.find("channels"); it != j.end()) {
      c.channels.clear();
      for (const auto& e : *it) {
        ChannelSpec ch;
        std::set<std::string> s;
        read(e, "name", ch.name, s);
        read(e, "base_gap_hours", ch.base_gap_hours, s);
        read(e, "intensity_gain", ch.intensity_gain, s);
        read(e, "gap_jitter", ch.gap_jitter, s);
        read(e, "mean", ch.mean, s);
        read(e, "scale", ch.scale, s);
        read(e, "loading", ch.loading, s);
        reject_unknown(e, s, "gen config channel");
        c.channels.push_back(ch);
      }
    }
    seen.insert("phenotypes");
    if (auto it = j.find("phenotypes"); it != j.end()) {
      c.phenotypes.clear();
      for (const auto& e : *it) {
        PhenotypeSpec p;
        std::set<std::string> s;
        read(e, "name", p.name, s);
        read(e, "prevalence", p.prevalence, s);
        read(e, "severity_coef", p.severity_coef, s);
        read(e, "channel", p.channel, s);
        read(e, "offset", p.offset, s);
        reject_unknown(e, s, "gen config phenotype");
        c.phenotypes.push_back(p);
      }
    }
    read(j, "cohort_span_hours", c.cohort_span_hours, seen);
    read(j, "extra_hadm_rate", c.extra_hadm_rate, seen);
    read(j, "readmit_gap_mean_hours", c.readmit_gap_mean_hours, seen);
    read(j, "second_icu_prob", c.second_icu_prob, seen);
    read(j, "frailty_sd", c.frailty_sd, seen);
    read(j, "hadm_severity_sd", c.hadm_severity_sd, seen);
    read(j, "latent_step_hours", c.latent_step_hours, seen);
    read(j, "reversion_per_hour", c.reversion_per_hour, seen);
    read(j, "stationary_sd", c.stationary_sd, seen);
    read(j, "threshold_sd", c.threshold_sd, seen);
    read(j, "mortality_rate", c.mortality_rate, seen);
    read(j, "hazard_multiplier", c.hazard_multiplier, seen);
    read(j, "los_median_days", c.los_median_days, seen);
    read(j, "los_severity_coef", c.los_severity_coef, seen);
    read(j, "los_sigma", c.los_sigma, seen);
    read(j, "min_stay_hours", c.min_stay_hours, seen);
    read(j, "observation_noise", c.observation_noise, seen);
    reject_unknown(j, seen, "gen config");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("gen config: ") + e.what());
  }
  return c;
}

}  // namespace uniclin::synth
