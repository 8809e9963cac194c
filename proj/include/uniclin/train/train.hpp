#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniclin/ad/checkpoint.hpp"
#include "uniclin/ad/tape.hpp"
#include "uniclin/adapter/adapter.hpp"
#include "uniclin/enc/encoder.hpp"
#include "uniclin/eval/report.hpp"
#include "uniclin/lm/model.hpp"
#include "uniclin/tasks/dataset.hpp"

namespace uniclin::train {

enum class Regime { kMtlUniversal, kMtlHeads, kStl };
std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct TrainConfig {
  static constexpr int kVersion = 1;

  Regime regime = Regime::kMtlHeads;
  enc::EncoderConfig encoder;
  adapter::AdapterConfig adapter;
  lm::LmConfig lm;  // vocab_size is taken from the vocabulary at run time
  std::vector<std::uint64_t> seeds{1, 2, 3};
  float lr = 1e-3f;
  float weight_decay = 0.0f;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;  // heads and STL
  std::vector<int> task_filter;  // empty: every train task

  // Universal decoder only. An epoch visits every train window once; each
  // batch of windows is asked `tasks_per_window` tasks.
  std::size_t encoder_warmup_epochs = 0;  // multi-head encoder training first
  std::size_t base_epochs = 4;            // base LM stage before it is frozen
  std::size_t lora_epochs = 4;
  std::size_t tasks_per_window = 4;
  float base_lr = 1e-3f;
  bool vocabulary_wide = false;

  // Caps on evaluated windows (0: all), subsampled deterministically.
  std::size_t max_val_windows = 300;
  std::size_t max_test_windows = 0;

  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

enum class TransferMode { kZeroShot, kFewShot };
enum class TransferInit { kPretrain, kScratch };
std::string to_string(TransferMode m);
std::string to_string(TransferInit i);

struct TransferConfig {
  static constexpr int kVersion = 1;

  TransferMode mode = TransferMode::kFewShot;
  std::vector<TransferInit> inits{TransferInit::kPretrain, TransferInit::kScratch};
  std::vector<std::size_t> n_samples{100, 200, 400, 800, 1600};
  std::vector<std::size_t> epoch_grid{1, 2, 5, 10, 20};
  std::vector<int> task_filter;  // empty: every transfer task
  float lr = 1e-3f;
  std::size_t batch_size = 32;
  std::size_t max_test_windows = 0;

  bool operator==(const TransferConfig&) const = default;
};

nlohmann::json to_json(const TransferConfig& c);
TransferConfig transfer_config_from_json(const nlohmann::json& j);

// Per-channel mean and standard deviation of every event inside a train
// window. Channels never seen get mean 0, sd 1.
enc::Normalizer fit_normalizer(const tasks::Dataset& data);

// Encoder inputs of every sample, built once. Windows without any event are
// marked unusable and skipped by every sampler and evaluator.
class InputCache {
 public:
  InputCache(const tasks::Dataset& data, const enc::Normalizer& norm);

  const enc::EncoderInput& at(std::size_t sample) const { return inputs_[sample]; }
  bool usable(std::size_t sample) const { return inputs_[sample].steps() > 0; }
  std::size_t unusable() const { return unusable_; }

 private:
  std::vector<enc::EncoderInput> inputs_;
  std::size_t unusable_ = 0;
};

// Usable samples of a split, optionally defined for a task, capped to `max`
// by a seeded draw that keeps index order.
std::vector<std::size_t> usable_samples(const tasks::Dataset& data, const InputCache& cache,
                                        tasks::Split split, std::optional<std::size_t> task_pos,
                                        std::size_t max, std::uint64_t seed);

// Shared encoder and one linear head per task: one logit for binary and
// multi-label member tasks, one per class for multi-class tasks.
class HeadsModel {
 public:
  HeadsModel(const enc::EncoderConfig& config, std::span<const tasks::TaskSpec> tasks,
             std::uint64_t seed);

  enc::Encoder& encoder() { return encoder_; }
  const enc::Encoder& encoder() const { return encoder_; }
  ad::ParamStore& heads() { return heads_; }
  const ad::ParamStore& heads() const { return heads_; }
  const std::vector<tasks::TaskSpec>& tasks() const { return tasks_; }
  std::size_t head_count() const { return tasks_.size(); }
  std::size_t feature_dim() const;

  // Adds a freshly initialized head; returns its position.
  std::size_t add_head(const tasks::TaskSpec& task, std::uint64_t seed);
  // Logits [B × Σ head widths], heads in task order.
  ad::Var forward(ad::Tape& tape, std::span<const enc::EncoderInput* const> inputs);
  std::size_t head_offset(std::size_t head) const { return offsets_[head]; }
  std::size_t head_width(std::size_t head) const;
  std::size_t total_width() const { return offsets_.back(); }

  void save(ad::Archive& archive) const;
  void load(const ad::Archive& archive);

 private:
  enc::Encoder encoder_;
  ad::ParamStore heads_;
  std::vector<tasks::TaskSpec> tasks_;
  std::vector<std::size_t> offsets_{0};
};

// Sum over heads of the mean loss over rows whose label is defined (binary
// cross-entropy for single-logit heads, softmax cross-entropy otherwise).
// `labels` is [B × heads]. Heads without a defined row contribute nothing.
ad::Var multi_head_loss(const HeadsModel& model, ad::Var logits, std::span<const int> labels);

// Windows asked the same task; with labels (indices into the task's label
// space) the prompts carry the ground truth.
struct PromptGroup {
  const tasks::TaskSpec* task = nullptr;
  std::vector<ad::Var> series;
  std::vector<int> labels;
};

// Row i of `logits` [B × V] restricted to candidates[i]; mean over rows of
// −log softmax at candidates[i][targets[i]].
ad::Var label_space_loss(ad::Var logits, std::span<const std::vector<int>> candidates,
                         std::span<const int> targets);

// Encoder, adapter and language model answering every task through prompts.
class UniversalModel {
 public:
  UniversalModel(const enc::EncoderConfig& enc_config, const adapter::AdapterConfig& ad_config,
                 lm::LmConfig lm_config, lm::Vocab vocab, std::uint64_t seed);

  enc::Encoder& encoder() { return encoder_; }
  adapter::Adapter& adapter() { return adapter_; }
  lm::LanguageModel& lm() { return lm_; }
  const lm::LanguageModel& lm() const { return lm_; }
  const lm::Vocab& vocab() const { return vocab_; }

  // Series tokens [t × D_lm] of one window.
  ad::Var series(ad::Tape& tape, const enc::EncoderInput& input);
  lm::PromptSegments segments(const tasks::TaskSpec& task, ad::Var series,
                              std::optional<std::string> ground_truth) const;
  // Label-position logits [Σ group sizes × V], groups in order. Each group's
  // task-only prefix is run once and shared by its windows.
  ad::Var label_logits(ad::Tape& tape, std::span<const PromptGroup> groups);
  // Mean over every prompt of the groups of −log p(ground truth), the
  // softmax taken over the task's label-space tokens.
  ad::Var loss(ad::Tape& tape, std::span<const PromptGroup> groups);
  // Encoder, adapter and LoRA tensors that receive gradients.
  std::vector<ad::Tensor*> tuning_params();

  void save(ad::Archive& archive) const;
  void load(const ad::Archive& archive);
  // Fingerprint over every weight of the model.
  std::uint64_t fingerprint() const;

 private:
  enc::Encoder encoder_;
  adapter::Adapter adapter_;
  lm::LanguageModel lm_;
  lm::Vocab vocab_;
};

struct EpochLog {
  std::string stage;
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> val_auroc;
};

struct TrainOutcome {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_auroc;
  double step0_loss = 0.0;
};

// Train tasks selected by the config filter, in catalog order.
std::vector<tasks::TaskSpec> select_train_tasks(const tasks::Dataset& data,
                                                const TrainConfig& config);

// Trains heads on the selected tasks and restores the epoch with the best
// validation mean AUROC.
TrainOutcome train_heads(HeadsModel& model, const tasks::Dataset& data, const InputCache& cache,
                         const TrainConfig& config, std::uint64_t seed);
// Optional encoder warm-up with per-task heads, base stage (base and encoder
// trained, LoRA off), then base frozen with LoRA on; restores the best
// LoRA-stage epoch.
TrainOutcome train_universal(UniversalModel& model, const tasks::Dataset& data,
                             const InputCache& cache, const TrainConfig& config,
                             std::uint64_t seed);

// One row per task over the given samples (rows whose label is undefined
// are skipped).
std::vector<eval::TaskResult> evaluate_heads(HeadsModel& model, const tasks::Dataset& data,
                                             const InputCache& cache,
                                             std::span<const std::size_t> samples);
std::vector<eval::TaskResult> evaluate_universal(UniversalModel& model,
                                                 const tasks::Dataset& data,
                                                 const InputCache& cache,
                                                 std::span<const tasks::TaskSpec> tasks,
                                                 std::span<const std::size_t> samples,
                                                 bool vocabulary_wide = false);

// Unique prompt texts (everything but the series) a universal run trains on.
std::vector<std::string> training_prompts(std::span<const tasks::TaskSpec> tasks,
                                          const lm::Vocab& vocab);

// Transfer-time view of a trained model. Heads transfer either reuses the
// nearest trained head (zero-shot, parameter transfer only) or adds a new one.
struct TransferSources {
  const HeadsModel* heads = nullptr;          // pretrain init for heads
  const UniversalModel* universal = nullptr;  // pretrain init for the decoder
};

// Few-shot: one run per (init, n) trained to the deepest grid point with
// results recorded at every grid point; epochs = 0 is the untouched model.
// Zero-shot: direct evaluation, one row per task. Heads zero-shot on a task
// whose label space differs from every trained head is a structural error.
std::vector<eval::TaskResult> run_transfer(const TransferConfig& transfer,
                                           const TrainConfig& train_config,
                                           const TransferSources& sources, bool universal,
                                           const tasks::Dataset& data, const InputCache& cache,
                                           std::span<const tasks::TaskSpec> tasks,
                                           std::uint64_t seed, std::size_t threads = 1);

// Head of `trained` usable for `task` without training: same family and label
// space, same indicator or phenotype, nearest window. Empty otherwise.
std::optional<std::size_t> nearest_head(std::span<const tasks::TaskSpec> trained,
                                        const tasks::TaskSpec& task);

}  // namespace uniclin::train
