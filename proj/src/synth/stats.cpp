#include <algorithm>
#include <map>

#include "uniclin/error.hpp"
#include "uniclin/quantile.hpp"
#include "uniclin/synth/cohort.hpp"

namespace uniclin::synth {

CohortStats cohort_stats(const Cohort& cohort) {
  if (cohort.patients.empty()) fail(ErrorKind::kUsage, "cohort_stats: empty cohort");
  const std::size_t k = cohort.config.k();
  CohortStats st;
  st.n_patients = cohort.patients.size();
  std::size_t deaths = 0;
  std::vector<double> los_days;
  std::vector<std::vector<double>> gaps(k);
  std::map<std::string, std::size_t> pheno_counts;
  for (const auto& p : cohort.config.phenotypes) pheno_counts[p.name] = 0;

  for (const auto& patient : cohort.patients) {
    for (const auto& hadm : patient.hadms) {
      ++st.n_hadms;
      if (hadm.died_in_hadm) ++deaths;
      for (const auto& name : hadm.phenotypes) ++pheno_counts[name];
      for (const auto& stay : hadm.icus) {
        ++st.n_icus;
        st.n_events += stay.events.size();
        los_days.push_back(stay.length_hours() / 24.0);
        std::vector<double> last(k, -1.0);
        for (const auto& e : stay.events) {
          if (e.channel >= k) continue;
          if (last[e.channel] >= 0.0) gaps[e.channel].push_back(e.time - last[e.channel]);
          last[e.channel] = e.time;
        }
      }
    }
  }
  st.death_rate = static_cast<double>(deaths) / static_cast<double>(st.n_hadms);
  std::sort(los_days.begin(), los_days.end());
  if (!los_days.empty()) {
    st.icu_los_median_days = quantile_sorted(los_days, 0.5);
    double sum = 0.0;
    for (double d : los_days) sum += d;
    st.icu_los_mean_days = sum / static_cast<double>(los_days.size());
  }
  for (const auto& p : cohort.config.phenotypes) {
    st.phenotype_rates.emplace_back(
        p.name, static_cast<double>(pheno_counts[p.name]) / static_cast<double>(st.n_hadms));
  }
  for (std::size_t c = 0; c < k; ++c) {
    GapQuantiles g;
    g.channel = cohort.config.channels[c].name;
    auto& v = gaps[c];
    std::sort(v.begin(), v.end());
    g.n_gaps = v.size();
    if (!v.empty()) {
      g.q25 = quantile_sorted(v, 0.25);
      g.median = quantile_sorted(v, 0.5);
      g.q75 = quantile_sorted(v, 0.75);
    }
    st.gaps.push_back(g);
  }
  return st;
}

nlohmann::json to_json(const CohortStats& st) {
  nlohmann::json phenos = nlohmann::json::object();
  for (const auto& [name, rate] : st.phenotype_rates) phenos[name] = rate;
  nlohmann::json gaps = nlohmann::json::array();
  for (const auto& g : st.gaps) {
    gaps.push_back({{"channel", g.channel},
                    {"n_gaps", g.n_gaps},
                    {"q25", g.q25},
                    {"median", g.median},
                    {"q75", g.q75}});
  }
  return {{"n_patients", st.n_patients},
          {"n_hadms", st.n_hadms},
          {"n_icus", st.n_icus},
          {"n_events", st.n_events},
          {"death_rate", st.death_rate},
          {"icu_los_median_days", st.icu_los_median_days},
          {"icu_los_mean_days", st.icu_los_mean_days},
          {"phenotype_rates", phenos},
          {"inter_event_hours", gaps}};
}

}  // namespace uniclin::synth
