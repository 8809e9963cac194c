#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uniclin/synth/cohort.hpp"
#include "uniclin/tasks/catalog.hpp"

namespace uniclin::tasks {

inline constexpr double kWindowHours = 24.0;
inline constexpr std::int16_t kUndefined = -1;

struct SampleIndex {
  std::int64_t patient_id = 0;
  std::int64_t hadm_id = 0;
  std::int64_t icu_id = 0;
  double ts = 0.0;

  auto operator<=>(const SampleIndex&) const = default;
};

// One input window: events[event_begin, event_end) of its stay fall in
// [ts, ts + 24h).
struct Window {
  double ts = 0.0;
  std::uint32_t event_begin = 0;
  std::uint32_t event_end = 0;
};

std::vector<Window> slide_windows(const synth::IcuStay& stay, double stride_hours = 24.0);

// Labels use kUndefined where the record cannot decide them.
int label_mor(const synth::HadmRecord& hadm);
int label_decom(double ts, const synth::HadmRecord& hadm, double window_hours);
// Class index: number of boundaries strictly below the stay length, so a
// stay of exactly b days lands in the class that ends at b.
int label_los(double los_days, std::span<const int> boundaries);
int label_phenotype(const synth::HadmRecord& hadm, const std::string& name,
                    std::span<const std::string> universe);
int label_wbm(double ts, const synth::IcuStay& stay, double window_hours, std::size_t channel,
              std::size_t k);

enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2, kPurged = 3 };
std::string to_string(Split s);

struct DatasetSplit {
  std::vector<SampleIndex> train, val, test;
  std::vector<SampleIndex> purged;  // windows dropped to keep the time order strict
};

// HADMs ordered by admit time are cut at cumulative count fractions. A
// window of an earlier split whose ts reaches the next split's first admit
// is purged.
DatasetSplit split_by_time(const synth::Cohort& cohort,
                           std::array<double, 3> fractions = {0.7, 0.1, 0.2},
                           double stride_hours = 24.0);

struct WindowSample {
  SampleIndex index;
  std::uint32_t patient = 0, hadm = 0, icu = 0;  // positions in the cohort
  std::uint32_t event_begin = 0, event_end = 0;
  Split split = Split::kTrain;
};

class Dataset {
 public:
  static constexpr int kVersion = 1;

  Dataset(const synth::Cohort& cohort, std::vector<TaskSpec> tasks,
          std::array<double, 3> fractions = {0.7, 0.1, 0.2}, double stride_hours = 24.0);

  const synth::Cohort& cohort() const { return *cohort_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const std::vector<WindowSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  std::size_t task_position(int task_id) const;

  std::int16_t label(std::size_t sample, std::size_t task_pos) const {
    return labels_[sample * tasks_.size() + task_pos];
  }
  std::span<const synth::SignalEvent> events(std::size_t sample) const;
  const synth::IcuStay& stay(std::size_t sample) const;
  const synth::HadmRecord& hadm(std::size_t sample) const;

  // Sample positions of one split, in index order.
  std::vector<std::size_t> indices(Split s) const;
  // Positions in `s` whose label for the task is defined.
  std::vector<std::size_t> defined(Split s, std::size_t task_pos) const;

  // Columnar little-endian layout:
  //   "UCDS" | u32 version | u64 catalog_hash | u32 n_samples | u32 n_tasks |
  //   i64 patient_id[n] | i64 hadm_id[n] | i64 icu_id[n] | f64 ts[n] |
  //   u32 event_begin[n] | u32 event_end[n] | u8 split[n] |
  //   i16 labels[n * n_tasks] (sample-major)
  std::string serialize() const;
  // Per task and split: sample counts and class frequencies.
  std::string manifest_csv() const;

 private:
  const synth::Cohort* cohort_;
  std::vector<TaskSpec> tasks_;
  std::vector<WindowSample> samples_;
  std::vector<std::int16_t> labels_;
};

// LOS in days of every train-split window, the input to make_partition.
std::vector<double> train_window_los_days(const synth::Cohort& cohort,
                                          std::array<double, 3> fractions = {0.7, 0.1, 0.2},
                                          double stride_hours = 24.0);

}  // namespace uniclin::tasks
