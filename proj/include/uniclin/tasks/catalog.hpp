#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace uniclin::tasks {

enum class Family { kMor, kDecom, kLos, kPhenotype, kWbm };
enum class TaskKind { kBinary, kMultiClass, kMultiLabelMember };
enum class SplitRole { kTrain, kTransfer };
enum class TransferTag {
  kNone,
  kParamInDomain,
  kParamOutDomain,
  kPartitionInDomain,
  kPartitionOutDomain,
  kLabelChoice
};

std::string to_string(Family f);
std::string to_string(TaskKind k);
std::string to_string(SplitRole r);
std::string to_string(TransferTag t);
Family family_from_string(const std::string& s);
TaskKind kind_from_string(const std::string& s);
SplitRole role_from_string(const std::string& s);
TransferTag tag_from_string(const std::string& s);

// Binary tasks answer with these two strings, in this order.
inline const std::vector<std::string>& binary_labels() {
  static const std::vector<std::string> labels{"no", "yes"};
  return labels;
}

struct TaskSpec {
  int task_id = 0;
  Family family = Family::kMor;
  TaskKind kind = TaskKind::kBinary;
  double window_hours = 0.0;    // Decom, WBM
  std::vector<int> boundaries;  // LOS, days
  std::string phenotype;        // Phenotype
  std::string indicator;        // WBM channel name
  std::vector<std::string> label_space;
  SplitRole role = SplitRole::kTrain;
  TransferTag tag = TransferTag::kNone;

  std::size_t n_classes() const { return label_space.size(); }
  bool operator==(const TaskSpec&) const = default;
};

// "0-1", "1-3", ..., "more" for boundaries [1,3,...].
std::vector<std::string> los_label_space(const std::vector<int>& boundaries);

inline constexpr double kDecomStep = 3.0;
inline constexpr double kWbmStep = 0.5;
bool on_decom_grid(double w);
bool on_wbm_grid(double w);

struct LosPartitionSpec {
  int n_classes = 2;
  std::vector<int> boundaries;  // empty: derive from LOS samples
  SplitRole role = SplitRole::kTrain;
  TransferTag tag = TransferTag::kNone;

  bool operator==(const LosPartitionSpec&) const = default;
};

struct CatalogConfig {
  static constexpr int kVersion = 1;

  bool mor = true, decom = true, los = true, phenotype = true, wbm = true;
  std::vector<double> decom_train, decom_transfer_in, decom_transfer_out;
  std::vector<LosPartitionSpec> los_partitions;
  std::vector<std::string> phenotype_train, phenotype_transfer;
  std::vector<double> wbm_train, wbm_transfer_in, wbm_transfer_out;
  std::vector<std::string> wbm_train_indicators, wbm_transfer_indicators;
  // Keep every n-th entry of the train window grids.
  int thinning = 1;

  // The complete task table, with its published LOS boundaries.
  static CatalogConfig paper();
  // Same families, LOS boundaries derived from the cohort, train grids
  // thinned by `thinning`.
  static CatalogConfig desk(int thinning = 3);

  bool operator==(const CatalogConfig&) const = default;
};

nlohmann::json to_json(const CatalogConfig& c);
CatalogConfig catalog_config_from_json(const nlohmann::json& j);

// Keeps indices 0, n, 2n, ... of `grid`.
std::vector<double> thin(const std::vector<double>& grid, int n);

// Boundaries are floor(LOS days) at ranks ceil(j·N/n), j=1..n−1, pushed up
// by one day on collision (an implicit boundary at 0 precedes the first).
std::vector<int> make_partition(int n_classes, std::span<const double> los_days);

// Ids run train tasks first, then transfer tasks, each in family order
// MOR, Decom, LOS, Phenotype, WBM. LOS partitions without explicit
// boundaries need `los_days`.
std::vector<TaskSpec> build_task_catalog(const CatalogConfig& config,
                                         std::span<const double> los_days = {});

nlohmann::json catalog_to_json(const std::vector<TaskSpec>& catalog);
std::vector<TaskSpec> catalog_from_json(const nlohmann::json& j);
std::uint64_t catalog_hash(const std::vector<TaskSpec>& catalog);

std::string describe(const TaskSpec& task);

}  // namespace uniclin::tasks
