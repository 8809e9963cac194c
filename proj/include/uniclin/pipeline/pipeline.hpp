#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniclin/eval/report.hpp"
#include "uniclin/synth/cohort.hpp"
#include "uniclin/tasks/catalog.hpp"
#include "uniclin/train/train.hpp"

namespace uniclin::pipeline {

enum class Scale { kDesk, kPaper };
std::string to_string(Scale s);
Scale scale_from_string(const std::string& s);

struct PipelineConfig {
  static constexpr int kVersion = 1;

  Scale scale = Scale::kDesk;
  std::uint64_t cohort_seed = 7;
  synth::GenConfig gen;
  tasks::CatalogConfig catalog;
  train::TrainConfig train;
  train::TransferConfig transfer;
  eval::ReportOptions report;
  // Artifact locations, relative to the output directory.
  std::string cohort_file = "cohort.ndjson";
  std::string catalog_file = "catalog.json";
  std::string dataset_file = "dataset.bin";
  std::string runs_dir = "runs";
  std::string report_dir = "report";

  bool operator==(const PipelineConfig& o) const;
};

PipelineConfig default_config(Scale scale);
nlohmann::json to_json(const PipelineConfig& c);
// Missing sections take the defaults of the config's scale.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
// Hash of the canonical JSON.
std::uint64_t config_hash(const PipelineConfig& c);

// Per-epoch record, loss of the first optimizer step, and provenance of one
// training or transfer run.
struct RunManifest {
  static constexpr int kVersion = 1;

  std::string command;  // "train" or "transfer"
  std::string run_id;   // hash of the run key, also the directory name
  std::string config_hash;
  nlohmann::json config;  // the whole pipeline config
  std::uint64_t seed = 0;
  std::string catalog_hash;
  std::string cohort_hash;
  std::vector<train::EpochLog> epochs;
  double step0_loss = 0.0;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_auroc;
  double wall_seconds = 0.0;
  std::vector<std::string> checkpoints;  // ids of checkpoints written or read
  std::string source_run;                // transfer: the pretrained run
  std::string metrics_hash;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

// Where a run's files live.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path checkpoint() const { return dir / "checkpoint.bin"; }
  std::filesystem::path metrics() const { return dir / "metrics.csv"; }
};

// Runtime knobs that never change results.
struct Context {
  std::filesystem::path out = ".";
  std::size_t threads = 1;
  bool force = false;  // re-execute runs whose manifest already exists
};

// metrics.csv: a "#" line with schema, version and config hash, then the
// metrics table.
std::string metrics_file_text(std::span<const eval::TaskResult> results, const std::string& config_hash);
std::vector<eval::TaskResult> read_metrics_file(const std::filesystem::path& path);

std::filesystem::path cmd_gen(const PipelineConfig& c, const Context& ctx);
// Catalog and dataset files; returns the catalog.
std::vector<tasks::TaskSpec> cmd_tasks(const PipelineConfig& c, const Context& ctx);
// One run directory per seed.
std::vector<RunPaths> cmd_train(const PipelineConfig& c, const Context& ctx);
std::vector<RunPaths> cmd_transfer(const PipelineConfig& c, const Context& ctx);
// Report over the given run directories, or every run under the runs dir.
std::vector<std::filesystem::path> cmd_report(const PipelineConfig& c, const Context& ctx,
                                              std::vector<std::filesystem::path> run_dirs = {});

struct ReproOutcome {
  std::filesystem::path replay_dir;
  std::size_t metric_diffs = 0;  // differing metrics.csv lines
  bool byte_identical = false;
};

// Re-executes the run of `manifest` in a scratch output directory and diffs
// its metrics.csv against the recorded one.
ReproOutcome cmd_repro(const std::filesystem::path& manifest, const Context& ctx);

// Train and transfer run ids for a config and seed.
std::string train_run_id(const PipelineConfig& c, std::uint64_t seed);
std::string transfer_run_id(const PipelineConfig& c, std::uint64_t seed);

}  // namespace uniclin::pipeline
