#include "uniclin/lm/vocab.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "uniclin/error.hpp"

namespace uniclin::lm {
namespace {

bool is_number(const std::string& w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [](char c) {
           return (c >= '0' && c <= '9') || c == '.';
         });
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(' ', start), text.size());
    words.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return words;
}

const char* const kFixed[] = {kBos, kTs, kLbl, kEos, ".", ",", ":", "##."};

}  // namespace

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    if (t.empty() || t.find(' ') != std::string::npos || t.find('\n') != std::string::npos) {
      fail(ErrorKind::kTokenizer, "invalid vocab token '" + t + "'");
    }
    if (!index_.emplace(t, static_cast<int>(i)).second) {
      fail(ErrorKind::kTokenizer, "duplicate vocab token '" + t + "'");
    }
  }
  for (const char* special : {kBos, kTs, kLbl, kEos}) {
    if (!index_.count(special)) fail(ErrorKind::kTokenizer, std::string("vocab lacks ") + special);
  }
  bos_ = index_.at(kBos);
  ts_ = index_.at(kTs);
  lbl_ = index_.at(kLbl);
  eos_ = index_.at(kEos);
}

Vocab Vocab::build(std::span<const tasks::TaskSpec> catalog, const synth::GenConfig& gen) {
  std::vector<std::string> tokens(std::begin(kFixed), std::end(kFixed));
  for (char c = '0'; c <= '9'; ++c) {
    tokens.push_back(std::string(1, c));
    tokens.push_back(std::string("##") + c);
  }
  const std::set<std::string> fixed(tokens.begin(), tokens.end());
  std::set<std::string> words;
  auto add_text = [&](const std::string& text) {
    for (const auto& w : split_words(text)) {
      if (!w.empty() && !is_number(w) && !fixed.count(w)) words.insert(w);
    }
  };
  add_text(prompt_prefix());
  for (const auto& t : catalog) {
    add_text(task_description(t));
    add_text(label_listing(t.label_space));
    for (const auto& label : t.label_space) {
      if (label.find(' ') != std::string::npos) {
        fail(ErrorKind::kTokenizer, "label '" + label + "' is not a single word");
      }
      if (!fixed.count(label)) words.insert(label);
    }
  }
  for (const auto& ch : gen.channels) add_text(ch.name);
  for (const auto& ph : gen.phenotypes) add_text(ph.name);
  tokens.insert(tokens.end(), words.begin(), words.end());
  return Vocab(std::move(tokens));
}

std::optional<int> Vocab::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) fail(ErrorKind::kTokenizer, "token not in vocab: '" + token + "'");
  return it->second;
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
  std::vector<int> ids;
  if (text.empty()) return ids;
  for (const auto& w : split_words(text)) {
    if (w.empty()) fail(ErrorKind::kTokenizer, "empty word (double or edge space) in '" + text + "'");
    if (auto id = find(w)) {
      ids.push_back(*id);
    } else if (is_number(w)) {
      ids.push_back(this->id(std::string(1, w[0])));
      for (std::size_t i = 1; i < w.size(); ++i) ids.push_back(this->id("##" + std::string(1, w[i])));
    } else {
      fail(ErrorKind::kTokenizer, "word not in lexicon: '" + w + "'");
    }
  }
  return ids;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::string& t = token(ids[i]);
    if (t.size() > 2 && t.compare(0, 2, "##") == 0) {
      out += t.substr(2);
    } else {
      if (i > 0) out += ' ';
      out += t;
    }
  }
  return out;
}

std::string Vocab::to_text() const {
  std::string out;
  for (const auto& t : tokens_) out += t + "\n";
  return out;
}

Vocab Vocab::from_text(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) tokens.push_back(line);
  return Vocab(std::move(tokens));
}

std::string format_hours(double hours) {
  std::ostringstream os;
  os << hours;
  return os.str();
}

std::string prompt_prefix() { return "icu chart review ."; }

std::string task_description(const tasks::TaskSpec& t) {
  using tasks::Family;
  switch (t.family) {
    case Family::kMor:
      return "predict death before hospital discharge .";
    case Family::kDecom:
      return "predict death in the next " + format_hours(t.window_hours) + " hours .";
    case Family::kLos:
      return "predict total icu stay in days .";
    case Family::kPhenotype:
      return "predict diagnosis " + t.phenotype + " .";
    case Family::kWbm:
      return "predict a " + t.indicator + " measurement in the next " +
             format_hours(t.window_hours) + " hours .";
  }
  return "";
}

std::string label_listing(std::span<const std::string> labels) {
  std::string s = "options :";
  for (std::size_t i = 0; i < labels.size(); ++i) s += (i ? " , " : " ") + labels[i];
  return s + " .";
}

}  // namespace uniclin::lm
