#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "uniclin/synth/cohort.hpp"
#include "uniclin/tasks/catalog.hpp"

namespace uniclin::lm {

inline constexpr const char* kBos = "<BOS>";
inline constexpr const char* kTs = "<TS>";
inline constexpr const char* kLbl = "<LBL>";
inline constexpr const char* kEos = "<EOS>";

// Word-level vocabulary over a closed lexicon. Words are separated by single
// spaces. A word missing from the lexicon is accepted only if it is a number
// made of digits and '.', which is spelled one character per token with the
// continuation pieces written "##c".
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> tokens);

  // Specials, digits and punctuation, then every word of every prompt the
  // catalog can produce plus all channel and phenotype names, sorted.
  static Vocab build(std::span<const tasks::TaskSpec> catalog, const synth::GenConfig& gen);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(const std::string& token) const;
  // Throws a tokenizer error for unknown tokens.
  int id(const std::string& token) const;

  int bos() const { return bos_; }
  int ts() const { return ts_; }
  int lbl() const { return lbl_; }
  int eos() const { return eos_; }

  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(std::span<const int> ids) const;

  // One token per line.
  std::string to_text() const;
  static Vocab from_text(const std::string& text);

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int bos_ = 0, ts_ = 0, lbl_ = 0, eos_ = 0;
};

// Fixed template strings with parameter slots.
std::string prompt_prefix();
std::string task_description(const tasks::TaskSpec& task);
std::string label_listing(std::span<const std::string> label_space);
std::string format_hours(double hours);

}  // namespace uniclin::lm
