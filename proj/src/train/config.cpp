#include <algorithm>
#include <cmath>

#include "uniclin/error.hpp"
#include "uniclin/rng.hpp"
#include "uniclin/train/train.hpp"

namespace uniclin::train {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::kMtlUniversal: return "mtl-universal";
    case Regime::kMtlHeads: return "mtl-heads";
    case Regime::kStl: return "stl";
  }
  return "";
}

Regime regime_from_string(const std::string& s) {
  for (Regime r : {Regime::kMtlUniversal, Regime::kMtlHeads, Regime::kStl}) {
    if (to_string(r) == s) return r;
  }
  fail(ErrorKind::kConfig, "unknown regime: " + s);
}

std::string to_string(TransferMode m) { return m == TransferMode::kZeroShot ? "zero-shot" : "few-shot"; }
std::string to_string(TransferInit i) { return i == TransferInit::kPretrain ? "pretrain" : "scratch"; }

namespace {

nlohmann::json adapter_json(const adapter::AdapterConfig& c) {
  return {{"d_lm", c.d_lm}, {"learned_bridge", c.learned_bridge}};
}

adapter::AdapterConfig adapter_from_json(const nlohmann::json& j) {
  adapter::AdapterConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "d_lm") c.d_lm = v.get<std::size_t>();
    else if (key == "learned_bridge") c.learned_bridge = v.get<bool>();
    else fail(ErrorKind::kConfig, "unknown adapter key: " + key);
  }
  return c;
}

void check_version(const nlohmann::json& j, int version, const char* what) {
  if (j.contains("version") && j.at("version").get<int>() != version) {
    fail(ErrorKind::kSchema, std::string(what) + " version mismatch");
  }
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
  return {{"version", TrainConfig::kVersion},
          {"regime", to_string(c.regime)},
          {"encoder", enc::to_json(c.encoder)},
          {"adapter", adapter_json(c.adapter)},
          {"lm", lm::to_json(c.lm)},
          {"seeds", c.seeds},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"task_filter", c.task_filter},
          {"encoder_warmup_epochs", c.encoder_warmup_epochs},
          {"base_epochs", c.base_epochs},
          {"lora_epochs", c.lora_epochs},
          {"tasks_per_window", c.tasks_per_window},
          {"base_lr", c.base_lr},
          {"vocabulary_wide", c.vocabulary_wide},
          {"max_val_windows", c.max_val_windows},
          {"max_test_windows", c.max_test_windows}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  check_version(j, TrainConfig::kVersion, "train config");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "version") continue;
    else if (key == "regime") c.regime = regime_from_string(v.get<std::string>());
    else if (key == "encoder") c.encoder = enc::encoder_config_from_json(v);
    else if (key == "adapter") c.adapter = adapter_from_json(v);
    else if (key == "lm") c.lm = lm::lm_config_from_json(v);
    else if (key == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
    else if (key == "lr") c.lr = v.get<float>();
    else if (key == "weight_decay") c.weight_decay = v.get<float>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "epochs") c.epochs = v.get<std::size_t>();
    else if (key == "task_filter") c.task_filter = v.get<std::vector<int>>();
    else if (key == "encoder_warmup_epochs") c.encoder_warmup_epochs = v.get<std::size_t>();
    else if (key == "base_epochs") c.base_epochs = v.get<std::size_t>();
    else if (key == "lora_epochs") c.lora_epochs = v.get<std::size_t>();
    else if (key == "tasks_per_window") c.tasks_per_window = v.get<std::size_t>();
    else if (key == "base_lr") c.base_lr = v.get<float>();
    else if (key == "vocabulary_wide") c.vocabulary_wide = v.get<bool>();
    else if (key == "max_val_windows") c.max_val_windows = v.get<std::size_t>();
    else if (key == "max_test_windows") c.max_test_windows = v.get<std::size_t>();
    else fail(ErrorKind::kConfig, "unknown train key: " + key);
  }
  if (c.regime == Regime::kStl && c.task_filter.size() != 1) {
    fail(ErrorKind::kConfig, "stl needs exactly one task in the filter");
  }
  if (c.batch_size == 0 || c.tasks_per_window == 0) fail(ErrorKind::kConfig, "batch sizes must be positive");
  return c;
}

nlohmann::json to_json(const TransferConfig& c) {
  std::vector<std::string> inits;
  for (auto i : c.inits) inits.push_back(to_string(i));
  return {{"version", TransferConfig::kVersion},
          {"mode", to_string(c.mode)},
          {"inits", inits},
          {"n_samples", c.n_samples},
          {"epoch_grid", c.epoch_grid},
          {"task_filter", c.task_filter},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"max_test_windows", c.max_test_windows}};
}

TransferConfig transfer_config_from_json(const nlohmann::json& j) {
  check_version(j, TransferConfig::kVersion, "transfer config");
  TransferConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "version") continue;
    else if (key == "mode") {
      const auto s = v.get<std::string>();
      if (s == "zero-shot") c.mode = TransferMode::kZeroShot;
      else if (s == "few-shot") c.mode = TransferMode::kFewShot;
      else fail(ErrorKind::kConfig, "unknown transfer mode: " + s);
    } else if (key == "inits") {
      c.inits.clear();
      for (const auto& s : v.get<std::vector<std::string>>()) {
        if (s == "pretrain") c.inits.push_back(TransferInit::kPretrain);
        else if (s == "scratch") c.inits.push_back(TransferInit::kScratch);
        else fail(ErrorKind::kConfig, "unknown transfer init: " + s);
      }
    } else if (key == "n_samples") c.n_samples = v.get<std::vector<std::size_t>>();
    else if (key == "epoch_grid") c.epoch_grid = v.get<std::vector<std::size_t>>();
    else if (key == "task_filter") c.task_filter = v.get<std::vector<int>>();
    else if (key == "lr") c.lr = v.get<float>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "max_test_windows") c.max_test_windows = v.get<std::size_t>();
    else fail(ErrorKind::kConfig, "unknown transfer key: " + key);
  }
  if (!std::is_sorted(c.epoch_grid.begin(), c.epoch_grid.end())) {
    fail(ErrorKind::kConfig, "epoch grid must be ascending");
  }
  return c;
}

enc::Normalizer fit_normalizer(const tasks::Dataset& data) {
  const std::size_t k = data.cohort().config.k();
  std::vector<double> sum(k, 0.0), sq(k, 0.0);
  std::vector<std::size_t> n(k, 0);
  for (std::size_t i : data.indices(tasks::Split::kTrain)) {
    for (const auto& e : data.events(i)) {
      sum[e.channel] += e.value;
      sq[e.channel] += static_cast<double>(e.value) * e.value;
      ++n[e.channel];
    }
  }
  enc::Normalizer norm = enc::Normalizer::identity(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (n[c] == 0) continue;
    const double mean = sum[c] / static_cast<double>(n[c]);
    const double var = std::max(0.0, sq[c] / static_cast<double>(n[c]) - mean * mean);
    norm.mean[c] = static_cast<float>(mean);
    norm.sd[c] = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;
  }
  return norm;
}

InputCache::InputCache(const tasks::Dataset& data, const enc::Normalizer& norm) {
  const std::size_t k = data.cohort().config.k();
  inputs_.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    inputs_.push_back(enc::make_input(data.events(i), data.samples()[i].index.ts, k, norm));
    unusable_ += inputs_.back().steps() == 0;
  }
}

std::vector<std::size_t> usable_samples(const tasks::Dataset& data, const InputCache& cache,
                                        tasks::Split split, std::optional<std::size_t> task_pos,
                                        std::size_t max, std::uint64_t seed) {
  std::vector<std::size_t> all = task_pos ? data.defined(split, *task_pos) : data.indices(split);
  std::erase_if(all, [&](std::size_t i) { return !cache.usable(i); });
  if (max == 0 || all.size() <= max) return all;
  auto rng = stream_rng(seed, 0x5ab5, task_pos.value_or(0xffff));
  std::vector<std::size_t> picked;
  std::sample(all.begin(), all.end(), std::back_inserter(picked), max, rng);
  return picked;
}

}  // namespace uniclin::train
