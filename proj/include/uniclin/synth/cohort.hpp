#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace uniclin::synth {

// All times are fractional hours from the cohort epoch.

struct SignalEvent {
  double time = 0.0;
  std::uint16_t channel = 0;
  float value = 0.0f;

  bool operator==(const SignalEvent&) const = default;
};

struct IcuStay {
  std::int64_t icu_id = 0;
  double in_time = 0.0;
  double out_time = 0.0;
  std::vector<SignalEvent> events;  // sorted by (time, channel)
  // Hidden severity sampled every `latent_step_hours` from in_time. Only
  // oracles and diagnostics read this; encoders never see it.
  std::vector<float> latent_severity;

  double length_hours() const { return out_time - in_time; }
  bool operator==(const IcuStay&) const = default;
};

struct HadmRecord {
  std::int64_t hadm_id = 0;
  double admit_time = 0.0;
  double discharge_time = 0.0;
  bool died_in_hadm = false;
  std::optional<double> death_time;
  std::vector<std::string> phenotypes;  // sorted, unique
  std::vector<IcuStay> icus;            // ordered by in_time, non-overlapping

  bool has_phenotype(const std::string& name) const;
  bool operator==(const HadmRecord&) const = default;
};

struct PatientRecord {
  std::int64_t patient_id = 0;
  std::vector<HadmRecord> hadms;

  bool operator==(const PatientRecord&) const = default;
};

struct ChannelSpec {
  std::string name;
  double base_gap_hours = 4.0;  // median gap at zero severity
  double intensity_gain = 0.3;  // gap shrinks by exp(-gain * severity)
  double gap_jitter = 0.35;     // lognormal sd of each gap
  double mean = 0.0;
  double scale = 1.0;
  double loading = 0.0;  // severity coefficient in standardized units

  bool operator==(const ChannelSpec&) const = default;
};

struct PhenotypeSpec {
  std::string name;
  double prevalence = 0.1;
  double severity_coef = 0.0;  // log-odds per standardized admission severity
  std::size_t channel = 0;     // channel carrying the signature
  double offset = 0.0;         // standardized shift of that channel

  bool operator==(const PhenotypeSpec&) const = default;
};

struct GenConfig {
  static constexpr int kVersion = 1;

  std::size_t n_patients = 2000;
  std::vector<ChannelSpec> channels;
  std::vector<PhenotypeSpec> phenotypes;

  double cohort_span_hours = 17520.0;
  double extra_hadm_rate = 0.35;       // Poisson mean of readmissions
  double readmit_gap_mean_hours = 2000.0;
  double second_icu_prob = 0.15;

  double frailty_sd = 0.8;
  double hadm_severity_sd = 0.5;
  double latent_step_hours = 0.5;
  double reversion_per_hour = 0.1;
  double stationary_sd = 0.25;
  double threshold_sd = 0.1;

  double mortality_rate = 0.12;
  double hazard_multiplier = 1.0;

  double los_median_days = 3.0;
  double los_severity_coef = 0.35;
  double los_sigma = 1.0;
  double min_stay_hours = 4.0;

  double observation_noise = 0.6;

  static GenConfig defaults();
  // Throws a config error on degenerate settings.
  void validate() const;
  std::size_t k() const { return channels.size(); }
  std::optional<std::size_t> channel_index(const std::string& name) const;

  bool operator==(const GenConfig&) const = default;
};

nlohmann::json to_json(const GenConfig& config);
// Missing keys take defaults; unknown keys and version mismatches are errors.
GenConfig gen_config_from_json(const nlohmann::json& j);

struct Cohort {
  GenConfig config;
  std::uint64_t seed = 0;
  std::vector<PatientRecord> patients;

  bool operator==(const Cohort&) const = default;
};

Cohort generate_cohort(const GenConfig& config, std::uint64_t seed);

// Newline-delimited JSON: one header line, then one line per patient.
std::string to_ndjson(const Cohort& cohort);
Cohort from_ndjson(const std::string& text);
void save_cohort(const Cohort& cohort, const std::string& path);
Cohort load_cohort(const std::string& path);

struct GapQuantiles {
  std::string channel;
  std::size_t n_gaps = 0;
  double q25 = 0.0, median = 0.0, q75 = 0.0;
};

struct CohortStats {
  std::size_t n_patients = 0, n_hadms = 0, n_icus = 0, n_events = 0;
  double death_rate = 0.0;  // per HADM
  double icu_los_median_days = 0.0;
  double icu_los_mean_days = 0.0;
  std::vector<std::pair<std::string, double>> phenotype_rates;  // per HADM
  std::vector<GapQuantiles> gaps;
};

CohortStats cohort_stats(const Cohort& cohort);
nlohmann::json to_json(const CohortStats& stats);

}  // namespace uniclin::synth
