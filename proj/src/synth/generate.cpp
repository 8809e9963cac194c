#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "uniclin/error.hpp"
#include "uniclin/rng.hpp"
#include "uniclin/synth/cohort.hpp"

namespace uniclin::synth {
namespace {

enum Purpose : std::uint64_t { kLatent = 1, kTiming = 2, kNoise = 3, kPhenotype = 4 };

constexpr double kMinGapHours = 1.0 / 12.0;

double to_minute(double t) { return std::round(t * 60.0) / 60.0; }

struct LatentHadm {
  double severity = 0.0;  // admission-level mean the walk reverts to
  double peak_margin = -std::numeric_limits<double>::infinity();
};

float severity_at(const IcuStay& stay, double t, double step) {
  const auto& s = stay.latent_severity;
  auto n = static_cast<std::size_t>(std::max(0.0, (t - stay.in_time) / step));
  return s[std::min(n, s.size() - 1)];
}

// Intercept a such that mean(sigmoid(a + coef·z)) == target.
double calibrate_intercept(const std::vector<double>& z, double coef, double target) {
  auto rate = [&](double a) {
    double acc = 0.0;
    for (double v : z) acc += 1.0 / (1.0 + std::exp(-(a + coef * v)));
    return acc / static_cast<double>(z.size());
  };
  double lo = -30.0, hi = 30.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (rate(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void simulate_walk(IcuStay& stay, double mu, const GenConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const double dt = c.latent_step_hours;
  const double theta = c.reversion_per_hour;
  const double sigma = c.stationary_sd * std::sqrt(2.0 * theta);
  const auto steps = static_cast<std::size_t>(std::floor(stay.length_hours() / dt)) + 1;
  stay.latent_severity.resize(steps);
  double s = mu + c.stationary_sd * normal(rng);
  for (std::size_t n = 0; n < steps; ++n) {
    stay.latent_severity[n] = static_cast<float>(s);
    s += theta * dt * (mu - s) + sigma * std::sqrt(dt) * normal(rng);
  }
}

void emit_events(IcuStay& stay, const std::vector<double>& offsets, const GenConfig& c,
                 std::mt19937_64& timing, std::mt19937_64& noise) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  for (std::size_t ch = 0; ch < c.channels.size(); ++ch) {
    const ChannelSpec& spec = c.channels[ch];
    auto gap_at = [&](double t) {
      const double s = severity_at(stay, t, c.latent_step_hours);
      const double g = spec.base_gap_hours * std::exp(-spec.intensity_gain * s) *
                       std::exp(spec.gap_jitter * normal(timing));
      return std::max(g, kMinGapHours);
    };
    double t = stay.in_time + unit(timing) * gap_at(stay.in_time);
    while (t <= stay.out_time) {
      const double ts = std::clamp(to_minute(t), stay.in_time, stay.out_time);
      const double s = severity_at(stay, t, c.latent_step_hours);
      const double z = spec.loading * s + offsets[ch] + c.observation_noise * normal(noise);
      stay.events.push_back({ts, static_cast<std::uint16_t>(ch),
                             static_cast<float>(spec.mean + spec.scale * z)});
      t += gap_at(t);
    }
  }
  std::sort(stay.events.begin(), stay.events.end(), [](const SignalEvent& a, const SignalEvent& b) {
    return a.time != b.time ? a.time < b.time : a.channel < b.channel;
  });
}

}  // namespace

Cohort generate_cohort(const GenConfig& config, std::uint64_t seed) {
  config.validate();
  const GenConfig& c = config;
  Cohort cohort;
  cohort.config = config;
  cohort.seed = seed;
  cohort.patients.resize(c.n_patients);

  // Pass 1: admission skeleton and latent walks at planned lengths.
  std::vector<std::vector<LatentHadm>> latent(c.n_patients);
  std::vector<double> thresholds(c.n_patients);
  std::int64_t next_hadm = 100000, next_icu = 200000;
  for (std::size_t i = 0; i < c.n_patients; ++i) {
    auto rng = stream_rng(seed, kLatent, i);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;
    std::poisson_distribution<int> readmits(c.extra_hadm_rate);
    std::exponential_distribution<double> readmit_gap(1.0 / c.readmit_gap_mean_hours);

    PatientRecord& patient = cohort.patients[i];
    patient.patient_id = 10000 + static_cast<std::int64_t>(i);
    const double frailty = c.frailty_sd * normal(rng);
    const double threshold_noise = c.threshold_sd * normal(rng);
    const int n_hadm = 1 + (c.extra_hadm_rate > 0.0 ? readmits(rng) : 0);
    double clock = unit(rng) * c.cohort_span_hours;
    for (int h = 0; h < n_hadm; ++h) {
      HadmRecord hadm;
      hadm.hadm_id = next_hadm++;
      hadm.admit_time = clock;
      LatentHadm lat;
      lat.severity = frailty + c.hadm_severity_sd * normal(rng);
      const int n_icu = 1 + (unit(rng) < c.second_icu_prob ? 1 : 0);
      double t = clock + 0.5 + 11.5 * unit(rng);
      for (int q = 0; q < n_icu; ++q) {
        IcuStay stay;
        stay.icu_id = next_icu++;
        stay.in_time = t;
        const double days = std::exp(std::log(c.los_median_days) +
                                     c.los_severity_coef * lat.severity + c.los_sigma * normal(rng));
        stay.out_time = t + std::max(c.min_stay_hours, 24.0 * days);
        simulate_walk(stay, lat.severity, c, rng);
        hadm.icus.push_back(std::move(stay));
        t = hadm.icus.back().out_time + 12.0 + 60.0 * unit(rng);
      }
      hadm.discharge_time = hadm.icus.back().out_time + 6.0 + 90.0 * unit(rng);
      for (const IcuStay& stay : hadm.icus) {
        for (std::size_t n = 1; n < stay.latent_severity.size(); ++n) {
          lat.peak_margin = std::max(lat.peak_margin,
                                     static_cast<double>(stay.latent_severity[n]) - threshold_noise);
        }
      }
      clock = hadm.discharge_time + readmit_gap(rng);
      patient.hadms.push_back(std::move(hadm));
      latent[i].push_back(lat);
    }
    thresholds[i] = threshold_noise;
  }

  // A death ends the patient's record, so later admissions disappear. Pick
  // the shift whose surviving admissions die at the requested rate.
  auto outcome = [&](double shift) {
    std::size_t deaths = 0, kept = 0;
    for (const auto& per_patient : latent) {
      for (const auto& lat : per_patient) {
        ++kept;
        if (lat.peak_margin > shift) {
          ++deaths;
          break;
        }
      }
    }
    return std::pair{deaths, kept};
  };
  const double target = c.mortality_rate * c.hazard_multiplier;
  double shift = std::numeric_limits<double>::infinity();
  if (target > 0.0) {
    std::vector<double> candidates;
    for (const auto& per_patient : latent) {
      for (const auto& lat : per_patient) candidates.push_back(lat.peak_margin);
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    // Death rate falls as the shift rises; find the lowest candidate index
    // whose rate does not exceed the target, then take the closer neighbour.
    auto rate_at = [&](std::size_t i) {
      const double s = i == 0 ? -std::numeric_limits<double>::infinity() : candidates[i - 1];
      auto [d, k] = outcome(s);
      return static_cast<double>(d) / static_cast<double>(k);
    };
    std::size_t lo = 0, hi = candidates.size();
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (rate_at(mid) <= target) {
        hi = mid;
      } else {
        lo = mid + 1;
      }
    }
    std::size_t pick = lo;
    if (lo > 0 && std::abs(rate_at(lo - 1) - target) < std::abs(rate_at(lo) - target)) pick = lo - 1;
    shift = pick == 0 ? -std::numeric_limits<double>::infinity() : candidates[pick - 1];
  }

  std::vector<double> severities;
  for (const auto& per_patient : latent) {
    for (const auto& lat : per_patient) severities.push_back(lat.severity);
  }
  const auto n_hadms = severities.size();

  double sev_mean = 0.0, sev_sd = 0.0;
  for (double v : severities) sev_mean += v;
  sev_mean /= static_cast<double>(n_hadms);
  for (double v : severities) sev_sd += (v - sev_mean) * (v - sev_mean);
  sev_sd = std::sqrt(sev_sd / static_cast<double>(n_hadms));
  if (!(sev_sd > 0.0)) sev_sd = 1.0;
  std::vector<double> z(n_hadms);
  for (std::size_t h = 0; h < n_hadms; ++h) z[h] = (severities[h] - sev_mean) / sev_sd;
  std::vector<double> intercepts;
  for (const auto& p : c.phenotypes) {
    intercepts.push_back(calibrate_intercept(z, p.severity_coef, p.prevalence));
  }

  // Pass 2: deaths, phenotypes, observations.
  std::size_t flat = 0;
  for (std::size_t i = 0; i < c.n_patients; ++i) {
    PatientRecord& patient = cohort.patients[i];
    auto timing = stream_rng(seed, kTiming, i);
    auto noise = stream_rng(seed, kNoise, i);
    auto pheno_rng = stream_rng(seed, kPhenotype, i);
    std::uniform_real_distribution<double> unit;
    const double threshold_noise = thresholds[i];

    for (std::size_t h = 0; h < patient.hadms.size(); ++h, ++flat) {
      HadmRecord& hadm = patient.hadms[h];
      if (latent[i][h].peak_margin > shift) {
        bool found = false;
        for (std::size_t q = 0; q < hadm.icus.size() && !found; ++q) {
          IcuStay& stay = hadm.icus[q];
          for (std::size_t n = 1; n < stay.latent_severity.size(); ++n) {
            if (stay.latent_severity[n] - threshold_noise > shift) {
              const double when = stay.in_time + static_cast<double>(n) * c.latent_step_hours;
              stay.out_time = when;
              stay.latent_severity.resize(n + 1);
              hadm.icus.resize(q + 1);
              hadm.died_in_hadm = true;
              hadm.death_time = when;
              hadm.discharge_time = when;
              found = true;
              break;
            }
          }
        }
      }

      std::vector<double> offsets(c.channels.size(), 0.0);
      for (std::size_t p = 0; p < c.phenotypes.size(); ++p) {
        const double logit = intercepts[p] + c.phenotypes[p].severity_coef * z[flat];
        if (unit(pheno_rng) < 1.0 / (1.0 + std::exp(-logit))) {
          hadm.phenotypes.push_back(c.phenotypes[p].name);
          offsets[c.phenotypes[p].channel] += c.phenotypes[p].offset;
        }
      }
      std::sort(hadm.phenotypes.begin(), hadm.phenotypes.end());
      for (IcuStay& stay : hadm.icus) emit_events(stay, offsets, c, timing, noise);
      if (hadm.died_in_hadm) {
        flat += latent[i].size() - h;
        patient.hadms.resize(h + 1);
        break;
      }
    }
  }
  return cohort;
}

}  // namespace uniclin::synth
