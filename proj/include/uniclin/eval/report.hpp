#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniclin/eval/metrics.hpp"
#include "uniclin/tasks/catalog.hpp"

namespace uniclin::eval {

inline constexpr int kReportVersion = 1;

struct TaskResult {
  int task_id = 0;
  std::string family;
  std::string transfer_tag;
  std::string regime;
  std::uint64_t seed = 0;
  std::size_t n_samples = 0;  // few-shot sample count, 0 when not applicable
  std::size_t epochs = 0;
  std::string split;
  std::optional<double> auroc;
  // Binary: positives and negatives. Multi-class: smallest class count and
  // the remainder.
  std::size_t n_pos = 0, n_neg = 0;

  bool operator==(const TaskResult&) const = default;
};

// AUROC of one task from per-sample scores. Binary tasks take one score per
// sample; multi-class tasks take [n × n_classes] and are macro-averaged over
// one-vs-rest classes.
TaskResult score_task(const tasks::TaskSpec& task, std::span<const double> scores,
                      std::span<const int> labels);

inline constexpr const char* kMetricsHeader =
    "task_id,family,transfer_tag,regime,seed,n_samples,epochs,split,auroc,n_pos,n_neg";

// Undefined AUROC is an empty field. Doubles use 17 significant digits so the
// text parses back to the same value.
std::string to_csv(std::span<const TaskResult> results);
std::vector<TaskResult> results_from_csv(const std::string& text);
nlohmann::json to_json(std::span<const TaskResult> results);
std::vector<TaskResult> results_from_json(const nlohmann::json& j);

// Mean AUROC over the defined rows; empty when none is defined.
std::optional<double> mean_auroc(std::span<const TaskResult> results);

enum class GroupBy { kAll, kFamily };

struct GroupStats {
  std::string group;
  BoxStats stats;
};

// Box statistics of the defined AUROCs per group. Groups come out sorted.
std::vector<GroupStats> aggregate_distributions(std::span<const TaskResult> results, GroupBy by);

// The two seed orders for box plots: per-task means over seeds, and per-seed
// means over tasks.
std::vector<TaskResult> average_over_seeds(std::span<const TaskResult> results);
std::vector<double> per_seed_means(std::span<const TaskResult> results);

struct ReportRun {
  std::string run_id;
  nlohmann::json manifest;
  std::vector<TaskResult> results;
};

struct ReportOptions {
  bool svg = true;
};

// Writes report.csv, report.json and (optionally) SVG figures into `dir`.
// Returns the files written.
std::vector<std::filesystem::path> emit_report(std::span<const ReportRun> runs,
                                               const std::filesystem::path& dir,
                                               const ReportOptions& options);

}  // namespace uniclin::eval
