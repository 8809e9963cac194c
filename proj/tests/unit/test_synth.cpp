#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "support/oracles.hpp"
#include "uniclin/error.hpp"
#include "uniclin/synth/cohort.hpp"
#include "uniclin/tasks/dataset.hpp"

using namespace uniclin;
using namespace uniclin::synth;

namespace {

const Cohort& default_cohort() {
  static const Cohort cohort = generate_cohort(GenConfig::defaults(), 7);
  return cohort;
}

GenConfig tiny(std::size_t n) {
  GenConfig c = GenConfig::defaults();
  c.n_patients = n;
  return c;
}

void expect_config_error(const GenConfig& c) {
  try {
    generate_cohort(c, 1);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
}

// Window-level features: mean of each channel's standardized values, or 0.
std::vector<double> channel_means(const tasks::Dataset& ds, std::size_t i, const GenConfig& cfg) {
  std::vector<double> sum(cfg.k(), 0.0);
  std::vector<int> n(cfg.k(), 0);
  for (const auto& e : ds.events(i)) {
    const auto& ch = cfg.channels[e.channel];
    sum[e.channel] += (e.value - ch.mean) / ch.scale;
    ++n[e.channel];
  }
  for (std::size_t c = 0; c < cfg.k(); ++c) sum[c] = n[c] ? sum[c] / n[c] : 0.0;
  return sum;
}

double observation_oracle_auroc(double noise) {
  GenConfig cfg = GenConfig::defaults();
  cfg.observation_noise = noise;
  const Cohort cohort = generate_cohort(cfg, 11);
  tasks::Dataset ds(cohort, {tasks::TaskSpec{}});
  std::vector<double> x;
  std::vector<int> y;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto f = channel_means(ds, i, cfg);
    x.insert(x.end(), f.begin(), f.end());
    y.push_back(ds.label(i, 0));
  }
  const auto w = testing::fit_logistic(x, y, cfg.k());
  std::vector<double> s;
  for (std::size_t i = 0; i < y.size(); ++i) {
    s.push_back(testing::logistic_score(w, &x[i * cfg.k()], cfg.k()));
  }
  return testing::pairwise_auroc(s, y);
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const Cohort a = generate_cohort(tiny(1), 42);
  const Cohort b = generate_cohort(tiny(1), 42);
  REQUIRE(a.patients.size() == 1);
  CHECK(a == b);
  CHECK(to_ndjson(a) == to_ndjson(b));
  const Cohort other = generate_cohort(tiny(1), 43);
  CHECK(to_ndjson(a) != to_ndjson(other));
}

TEST_CASE("zero hazard multiplier gives no deaths") {
  GenConfig c = tiny(300);
  c.hazard_multiplier = 0.0;
  const Cohort cohort = generate_cohort(c, 5);
  for (const auto& p : cohort.patients) {
    for (const auto& h : p.hadms) {
      CHECK_FALSE(h.died_in_hadm);
      CHECK(tasks::label_mor(h) == 0);
    }
  }
  CHECK(cohort_stats(cohort).death_rate == 0.0);
}

TEST_CASE("default cohort hits the mortality target") {
  const Cohort& cohort = default_cohort();
  std::size_t hadms = 0, deaths = 0;
  for (const auto& p : cohort.patients) {
    for (const auto& h : p.hadms) {
      ++hadms;
      deaths += h.died_in_hadm;
    }
  }
  const double rate = static_cast<double>(deaths) / static_cast<double>(hadms);
  CHECK(std::abs(rate - cohort.config.mortality_rate) <= 0.03);
}

TEST_CASE("hierarchy containment holds everywhere") {
  const Cohort& cohort = default_cohort();
  const std::size_t k = cohort.config.k();
  std::size_t violations = 0;
  for (const auto& p : cohort.patients) {
    violations += p.hadms.empty();
    for (const auto& h : p.hadms) {
      violations += !(h.admit_time < h.discharge_time);
      violations += h.died_in_hadm != h.death_time.has_value();
      if (h.death_time) {
        violations += !(*h.death_time > h.admit_time && *h.death_time <= h.discharge_time);
      }
      violations += !std::is_sorted(h.phenotypes.begin(), h.phenotypes.end());
      double prev_out = h.admit_time;
      for (const auto& s : h.icus) {
        violations += !(s.in_time < s.out_time);
        violations += !(s.in_time >= prev_out && s.out_time <= h.discharge_time);
        prev_out = s.out_time;
        for (std::size_t i = 0; i < s.events.size(); ++i) {
          const auto& e = s.events[i];
          violations += !(e.time >= s.in_time && e.time <= s.out_time);
          violations += e.channel >= k;
          violations += !std::isfinite(e.value);
          if (i > 0) {
            const auto& q = s.events[i - 1];
            violations += q.time > e.time || (q.time == e.time && q.channel >= e.channel);
          }
        }
      }
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("degenerate configs are rejected") {
  GenConfig no_channels = tiny(2);
  no_channels.channels.clear();
  no_channels.phenotypes.clear();
  expect_config_error(no_channels);

  GenConfig one_channel = tiny(2);
  one_channel.channels.resize(1);
  one_channel.phenotypes.clear();
  expect_config_error(one_channel);

  GenConfig zero_stays = tiny(2);
  zero_stays.min_stay_hours = 0.0;
  expect_config_error(zero_stays);

  GenConfig no_patients = tiny(0);
  expect_config_error(no_patients);

  GenConfig nan_gap = tiny(2);
  nan_gap.channels[0].base_gap_hours = std::nan("");
  expect_config_error(nan_gap);
}

TEST_CASE("cohort_stats counts a hand-built cohort") {
  Cohort c;
  c.config = tiny(1);
  PatientRecord p;
  HadmRecord h;
  h.admit_time = 0;
  h.discharge_time = 50;
  IcuStay s;
  s.in_time = 1;
  s.out_time = 30;
  s.events = {{2.0, 0, 1.0f}, {3.0, 1, 2.0f}, {5.0, 0, 3.0f}};
  h.icus.push_back(s);
  p.hadms.push_back(h);
  c.patients.push_back(p);
  const CohortStats st = cohort_stats(c);
  CHECK(st.n_events == 3);
  CHECK(st.n_icus == 1);
  CHECK(st.death_rate == 0.0);
  CHECK(st.gaps[0].n_gaps == 1);
  CHECK(st.gaps[0].median == doctest::Approx(3.0));
  CHECK(st.gaps[1].n_gaps == 0);

  Cohort empty;
  CHECK_THROWS_AS(cohort_stats(empty), Error);
}

TEST_CASE("median inter-event gaps match the configured base gaps") {
  const Cohort& cohort = default_cohort();
  const CohortStats st = cohort_stats(cohort);
  for (std::size_t c = 0; c < cohort.config.k(); ++c) {
    const double target = cohort.config.channels[c].base_gap_hours;
    INFO(st.gaps[c].channel);
    CHECK(std::abs(st.gaps[c].median - target) / target <= 0.20);
  }
}

TEST_CASE("phenotype prevalence matches the configured rates") {
  const CohortStats st = cohort_stats(default_cohort());
  const auto& specs = default_cohort().config.phenotypes;
  REQUIRE(st.phenotype_rates.size() == specs.size());
  for (std::size_t p = 0; p < specs.size(); ++p) {
    INFO(specs[p].name);
    CHECK(std::abs(st.phenotype_rates[p].second - specs[p].prevalence) <= 0.03);
  }
}

TEST_CASE("ndjson and config round-trip") {
  const Cohort a = generate_cohort(tiny(20), 3);
  const std::string text = to_ndjson(a);
  const Cohort b = from_ndjson(text);
  CHECK(a == b);
  CHECK(to_ndjson(b) == text);
  CHECK(std::count(text.begin(), text.end(), '\n') == 21);

  const auto j = to_json(GenConfig::defaults());
  CHECK(gen_config_from_json(j) == GenConfig::defaults());
  auto bad = j;
  bad["n_patiens"] = 3;
  CHECK_THROWS_AS(gen_config_from_json(bad), Error);
  auto future = j;
  future["version"] = 99;
  CHECK_THROWS_AS(gen_config_from_json(future), Error);
  CHECK_THROWS_AS(from_ndjson("{\"schema\":\"other\"}\n"), Error);
}

TEST_CASE("mortality is recoverable from the latent severity") {
  const Cohort& cohort = default_cohort();
  tasks::Dataset ds(cohort, {tasks::TaskSpec{}});
  const double step = cohort.config.latent_step_hours;
  std::vector<double> x;
  std::vector<int> y;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = ds.stay(i);
    const auto from = static_cast<std::size_t>((ds.samples()[i].index.ts - s.in_time) / step);
    const auto to = std::min(s.latent_severity.size(), from + static_cast<std::size_t>(24 / step));
    double mean = 0.0, peak = -1e9;
    for (std::size_t q = from; q < to; ++q) {
      mean += s.latent_severity[q];
      peak = std::max(peak, static_cast<double>(s.latent_severity[q]));
    }
    mean /= static_cast<double>(to - from);
    x.insert(x.end(), {mean, peak, s.latent_severity[to - 1]});
    y.push_back(ds.label(i, 0));
  }
  const auto w = testing::fit_logistic(x, y, 3);
  std::vector<double> scores;
  for (std::size_t i = 0; i < y.size(); ++i) scores.push_back(testing::logistic_score(w, &x[i * 3], 3));
  const double auc = testing::pairwise_auroc(scores, y);
  MESSAGE("latent oracle MOR AUROC " << auc);
  CHECK(auc > 0.9);
}

TEST_CASE("more observation noise never helps the observation oracle") {
  const double low = observation_oracle_auroc(0.3);
  const double mid = observation_oracle_auroc(1.0);
  const double high = observation_oracle_auroc(3.0);
  MESSAGE("observation oracle AUROC " << low << " " << mid << " " << high);
  CHECK(low >= mid);
  CHECK(mid >= high);
}
