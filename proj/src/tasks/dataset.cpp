#include "uniclin/tasks/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <sstream>

#include "uniclin/error.hpp"

namespace uniclin::tasks {
namespace {

struct HadmSplits {
  std::map<std::int64_t, Split> of;
  double val_start = std::numeric_limits<double>::infinity();
  double test_start = std::numeric_limits<double>::infinity();

  Split window_split(std::int64_t hadm_id, double ts) const {
    const Split s = of.at(hadm_id);
    if (s == Split::kTrain && ts >= val_start) return Split::kPurged;
    if (s == Split::kVal && ts >= test_start) return Split::kPurged;
    return s;
  }
};

HadmSplits assign_hadms(const synth::Cohort& cohort, std::array<double, 3> f) {
  for (double v : f) {
    if (!(v >= 0.0)) fail(ErrorKind::kUsage, "split fractions must be non-negative");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
    fail(ErrorKind::kUsage, "split fractions must sum to 1");
  }
  std::vector<std::pair<double, std::int64_t>> order;
  for (const auto& p : cohort.patients) {
    for (const auto& h : p.hadms) order.emplace_back(h.admit_time, h.hadm_id);
  }
  if (order.empty()) fail(ErrorKind::kUsage, "split_by_time: empty cohort");
  std::sort(order.begin(), order.end());
  const auto n = order.size();
  const auto n_train = std::min<std::size_t>(n, std::llround(f[0] * static_cast<double>(n)));
  const auto n_val =
      std::min<std::size_t>(n - n_train, std::llround(f[1] * static_cast<double>(n)));
  HadmSplits out;
  for (std::size_t i = 0; i < n; ++i) {
    const Split s = i < n_train ? Split::kTrain : i < n_train + n_val ? Split::kVal : Split::kTest;
    out.of[order[i].second] = s;
    if (s == Split::kVal) out.val_start = std::min(out.val_start, order[i].first);
    if (s == Split::kTest) out.test_start = std::min(out.test_start, order[i].first);
  }
  // With an empty val split, train still has to end before test begins.
  out.val_start = std::min(out.val_start, out.test_start);
  return out;
}

template <typename T>
void put(std::string& out, const T& v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
    case Split::kPurged:
      return "purged";
  }
  return "?";
}

DatasetSplit split_by_time(const synth::Cohort& cohort, std::array<double, 3> fractions,
                           double stride) {
  const HadmSplits hs = assign_hadms(cohort, fractions);
  DatasetSplit out;
  for (const auto& p : cohort.patients) {
    for (const auto& h : p.hadms) {
      for (const auto& stay : h.icus) {
        for (const Window& w : slide_windows(stay, stride)) {
          const SampleIndex idx{p.patient_id, h.hadm_id, stay.icu_id, w.ts};
          switch (hs.window_split(h.hadm_id, w.ts)) {
            case Split::kTrain:
              out.train.push_back(idx);
              break;
            case Split::kVal:
              out.val.push_back(idx);
              break;
            case Split::kTest:
              out.test.push_back(idx);
              break;
            case Split::kPurged:
              out.purged.push_back(idx);
              break;
          }
        }
      }
    }
  }
  return out;
}

std::vector<double> train_window_los_days(const synth::Cohort& cohort,
                                          std::array<double, 3> fractions, double stride) {
  const HadmSplits hs = assign_hadms(cohort, fractions);
  std::vector<double> out;
  for (const auto& p : cohort.patients) {
    for (const auto& h : p.hadms) {
      for (const auto& stay : h.icus) {
        for (const Window& w : slide_windows(stay, stride)) {
          if (hs.window_split(h.hadm_id, w.ts) == Split::kTrain) {
            out.push_back(stay.length_hours() / 24.0);
          }
        }
      }
    }
  }
  return out;
}

Dataset::Dataset(const synth::Cohort& cohort, std::vector<TaskSpec> tasks,
                 std::array<double, 3> fractions, double stride)
    : cohort_(&cohort), tasks_(std::move(tasks)) {
  const HadmSplits hs = assign_hadms(cohort, fractions);
  const auto& cfg = cohort.config;
  std::vector<std::string> universe;
  for (const auto& p : cfg.phenotypes) universe.push_back(p.name);
  std::vector<std::size_t> channel_of(tasks_.size(), 0);
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    const TaskSpec& task = tasks_[t];
    if (task.family == Family::kWbm) {
      auto c = cfg.channel_index(task.indicator);
      if (!c) fail(ErrorKind::kCatalog, "unknown WBM indicator '" + task.indicator + "'");
      channel_of[t] = *c;
    }
    if (task.family == Family::kPhenotype &&
        std::find(universe.begin(), universe.end(), task.phenotype) == universe.end()) {
      fail(ErrorKind::kCatalog, "unknown phenotype '" + task.phenotype + "'");
    }
  }

  for (std::size_t pi = 0; pi < cohort.patients.size(); ++pi) {
    const auto& p = cohort.patients[pi];
    for (std::size_t hi = 0; hi < p.hadms.size(); ++hi) {
      const auto& h = p.hadms[hi];
      for (std::size_t si = 0; si < h.icus.size(); ++si) {
        const auto& stay = h.icus[si];
        const double los_days = stay.length_hours() / 24.0;
        for (const Window& w : slide_windows(stay, stride)) {
          WindowSample s;
          s.index = {p.patient_id, h.hadm_id, stay.icu_id, w.ts};
          s.patient = static_cast<std::uint32_t>(pi);
          s.hadm = static_cast<std::uint32_t>(hi);
          s.icu = static_cast<std::uint32_t>(si);
          s.event_begin = w.event_begin;
          s.event_end = w.event_end;
          s.split = hs.window_split(h.hadm_id, w.ts);
          samples_.push_back(s);
          for (std::size_t t = 0; t < tasks_.size(); ++t) {
            const TaskSpec& task = tasks_[t];
            int y = kUndefined;
            switch (task.family) {
              case Family::kMor:
                y = label_mor(h);
                break;
              case Family::kDecom:
                y = label_decom(w.ts, h, task.window_hours);
                break;
              case Family::kLos:
                y = label_los(los_days, task.boundaries);
                break;
              case Family::kPhenotype:
                y = h.has_phenotype(task.phenotype) ? 1 : 0;
                break;
              case Family::kWbm:
                y = label_wbm(w.ts, stay, task.window_hours, channel_of[t], cfg.k());
                break;
            }
            labels_.push_back(static_cast<std::int16_t>(y));
          }
        }
      }
    }
  }
}

std::size_t Dataset::task_position(int task_id) const {
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    if (tasks_[t].task_id == task_id) return t;
  }
  fail(ErrorKind::kCatalog, "task " + std::to_string(task_id) + " not in dataset");
}

std::span<const synth::SignalEvent> Dataset::events(std::size_t i) const {
  const auto& s = samples_[i];
  const auto& ev = stay(i).events;
  return std::span<const synth::SignalEvent>(ev).subspan(s.event_begin,
                                                         s.event_end - s.event_begin);
}

const synth::IcuStay& Dataset::stay(std::size_t i) const {
  return hadm(i).icus[samples_[i].icu];
}

const synth::HadmRecord& Dataset::hadm(std::size_t i) const {
  const auto& s = samples_[i];
  return cohort_->patients[s.patient].hadms[s.hadm];
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (samples_[i].split == s) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::defined(Split s, std::size_t task_pos) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (samples_[i].split == s && label(i, task_pos) != kUndefined) out.push_back(i);
  }
  return out;
}

std::string Dataset::serialize() const {
  std::string out = "UCDS";
  put(out, static_cast<std::uint32_t>(kVersion));
  put(out, catalog_hash(tasks_));
  put(out, static_cast<std::uint32_t>(samples_.size()));
  put(out, static_cast<std::uint32_t>(tasks_.size()));
  for (const auto& s : samples_) put(out, s.index.patient_id);
  for (const auto& s : samples_) put(out, s.index.hadm_id);
  for (const auto& s : samples_) put(out, s.index.icu_id);
  for (const auto& s : samples_) put(out, s.index.ts);
  for (const auto& s : samples_) put(out, s.event_begin);
  for (const auto& s : samples_) put(out, s.event_end);
  for (const auto& s : samples_) put(out, static_cast<std::uint8_t>(s.split));
  for (auto y : labels_) put(out, y);
  return out;
}

std::string Dataset::manifest_csv() const {
  std::ostringstream os;
  os << "task_id,family,split,n_samples,n_defined,class_rates\n";
  for (std::size_t t = 0; t < tasks_.size(); ++t) {
    for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
      std::size_t n = 0, n_def = 0;
      std::vector<std::size_t> counts(tasks_[t].n_classes(), 0);
      for (std::size_t i = 0; i < samples_.size(); ++i) {
        if (samples_[i].split != sp) continue;
        ++n;
        const auto y = label(i, t);
        if (y == kUndefined) continue;
        ++n_def;
        ++counts[static_cast<std::size_t>(y)];
      }
      os << tasks_[t].task_id << ',' << to_string(tasks_[t].family) << ',' << to_string(sp) << ','
         << n << ',' << n_def << ',';
      for (std::size_t c = 0; c < counts.size(); ++c) {
        os << (c ? ";" : "")
           << (n_def ? static_cast<double>(counts[c]) / static_cast<double>(n_def) : 0.0);
      }
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace uniclin::tasks
