#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniclin/ad/param_store.hpp"
#include "uniclin/ad/tape.hpp"
#include "uniclin/lm/vocab.hpp"

namespace uniclin::lm {

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_mult = 2;
  std::size_t max_len = 64;
  std::size_t lora_rank = 8;
  float lora_alpha = 16.0f;

  bool operator==(const LmConfig&) const = default;
};

nlohmann::json to_json(const LmConfig& c);
LmConfig lm_config_from_json(const nlohmann::json& j);

struct PromptSegments {
  std::string prefix;
  std::string task_description;
  // [t × D_lm] adapter output; an invalid Var means no series (t = 0).
  ad::Var ts_tokens;
  std::vector<std::string> label_space;
  std::optional<std::string> ground_truth;
};

enum class Segment : std::uint8_t { kText, kSeries };

struct FusedSequence {
  ad::Var embeds;                     // [T × D_lm]
  std::vector<int> token_ids;         // -1 at series positions
  std::vector<Segment> segments;
  std::vector<std::size_t> label_positions;
  // Rows before this index depend on the task only.
  std::size_t series_begin = 0;

  std::size_t length() const { return token_ids.size(); }
};

// Per-layer keys and values [P × D] of an already processed prefix.
struct PrefixCache {
  std::vector<ad::Var> keys, values;
  std::size_t length = 0;
};

// ⟨BOS⟩ prefix ∥ description ∥ ⟨TS⟩ ∥ series ∥ listing ∥ ⟨LBL⟩ [∥ label ∥ ⟨EOS⟩].
// `embed_table` is the LM token table on the same tape.
FusedSequence assemble_prompt(const PromptSegments& seg, const Vocab& vocab, ad::Var embed_table,
                              bool training);

// Decoder-only causal transformer. Base weights live in base(); LoRA deltas
// on the Q, K, V, O projections live in lora() with B initialized to zero.
class LanguageModel {
 public:
  LanguageModel(LmConfig config, std::uint64_t seed);

  const LmConfig& config() const { return config_; }
  ad::ParamStore& base() { return base_; }
  const ad::ParamStore& base() const { return base_; }
  ad::ParamStore& lora() { return lora_; }
  const ad::ParamStore& lora() const { return lora_; }

  void set_base_trainable(bool on) { base_.set_requires_grad(on); }
  void set_lora_enabled(bool on) { lora_enabled_ = on; }
  bool lora_enabled() const { return lora_enabled_; }

  ad::Var token_table(ad::Tape& tape) { return tape.param(base_.at("tok_embed")); }

  // Full logits [T × V] of one sequence.
  ad::Var logits(ad::Tape& tape, ad::Var embeds);
  // Logits at the given rows of each sequence, stacked in order
  // [Σ|positions_i| × V]. Sequences are processed as one stacked batch. If
  // `prefixes` is non-empty, sequence i continues prefixes[i] (null: none)
  // and its positions are relative to the continuation.
  ad::Var logits_at(ad::Tape& tape, std::span<const ad::Var> embeds,
                    std::span<const std::vector<std::size_t>> positions,
                    std::span<const PrefixCache* const> prefixes = {});

  // Runs a prefix once so several continuations can attend to it.
  PrefixCache encode_prefix(ad::Tape& tape, ad::Var prefix_embeds);
  // Several independent prefixes in one stacked pass.
  std::vector<PrefixCache> encode_prefixes(ad::Tape& tape, std::span<const ad::Var> prefix_embeds);

 private:
  ad::Var hidden(ad::Tape& tape, std::span<const ad::Var> embeds,
                 std::span<const PrefixCache* const> prefixes, PrefixCache* capture);
  ad::Var project(ad::Tape& tape, ad::Var x, std::size_t layer, const char* name);

  LmConfig config_;
  ad::ParamStore base_;
  ad::ParamStore lora_;
  bool lora_enabled_ = true;
};

struct Prediction {
  std::string label;
  std::size_t index = 0;       // into the label space; label space size if off-space
  std::vector<double> scores;  // softmax restricted to the label space
};

// Scores from one logits row. With `vocabulary_wide` the prediction is the
// arg-max over the whole vocabulary, which may fall outside the label space.
Prediction predict_label(std::span<const float> logits_row, std::span<const std::string> label_space,
                         const Vocab& vocab, bool vocabulary_wide = false);
// Reads the row at the sequence's label position from full [T × V] logits.
Prediction predict_label(ad::Var logits, const FusedSequence& fused,
                         std::span<const std::string> label_space, const Vocab& vocab,
                         bool vocabulary_wide = false);

}  // namespace uniclin::lm
