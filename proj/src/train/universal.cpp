#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "detail.hpp"
#include "uniclin/ad/adamw.hpp"
#include "uniclin/ad/ops.hpp"
#include "uniclin/error.hpp"
#include "uniclin/hash.hpp"
#include "uniclin/rng.hpp"
#include "uniclin/train/train.hpp"

namespace uniclin::train {

using ad::Tensor;
using ad::Var;

namespace {

lm::LmConfig sized(lm::LmConfig c, const lm::Vocab& vocab) {
  c.vocab_size = vocab.size();
  return c;
}

std::vector<Tensor*> concat_params(std::initializer_list<std::vector<Tensor*>> parts) {
  std::vector<Tensor*> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

UniversalModel::UniversalModel(const enc::EncoderConfig& enc_config,
                               const adapter::AdapterConfig& ad_config, lm::LmConfig lm_config,
                               lm::Vocab vocab, std::uint64_t seed)
    : encoder_(enc_config, splitmix64(seed ^ 0xe5c0de)),
      adapter_(ad_config, enc_config.k, enc_config.d, splitmix64(seed ^ 0xada)),
      lm_(sized(lm_config, vocab), splitmix64(seed ^ 0x11a)),
      vocab_(std::move(vocab)) {
  if (ad_config.d_lm != lm_.config().d_model) {
    fail(ErrorKind::kConfig, "adapter width does not match the LM width");
  }
}

Var UniversalModel::series(ad::Tape& tape, const enc::EncoderInput& input) {
  return adapter_.apply(tape, encoder_.encode(tape, input));
}

lm::PromptSegments UniversalModel::segments(const tasks::TaskSpec& task, Var series,
                                            std::optional<std::string> ground_truth) const {
  return {lm::prompt_prefix(), lm::task_description(task), series, task.label_space,
          std::move(ground_truth)};
}

Var UniversalModel::label_logits(ad::Tape& tape, std::span<const PromptGroup> groups) {
  Var table = lm_.token_table(tape);
  std::vector<Var> prefixes, rest;
  std::vector<std::vector<std::size_t>> positions;
  std::vector<std::size_t> owner;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& grp = groups[g];
    if (!grp.task || grp.series.empty()) fail(ErrorKind::kUsage, "empty prompt group");
    const bool training = !grp.labels.empty();
    if (training && grp.labels.size() != grp.series.size()) {
      fail(ErrorKind::kUsage, "one label per series in a training group");
    }
    std::size_t P = 0;
    for (std::size_t i = 0; i < grp.series.size(); ++i) {
      std::optional<std::string> gt;
      if (training) gt = grp.task->label_space.at(static_cast<std::size_t>(grp.labels[i]));
      auto f = lm::assemble_prompt(segments(*grp.task, grp.series[i], gt), vocab_, table, training);
      if (i == 0) {
        P = f.series_begin;
        prefixes.push_back(ad::slice_rows(f.embeds, 0, P));
      }
      const std::size_t lbl = f.label_positions.at(0);
      rest.push_back(ad::slice_rows(f.embeds, P, lbl + 1 - P));
      positions.push_back({lbl - P});
      owner.push_back(g);
    }
  }
  auto caches = lm_.encode_prefixes(tape, prefixes);
  std::vector<const lm::PrefixCache*> links;
  for (std::size_t g : owner) links.push_back(&caches[g]);
  return lm_.logits_at(tape, rest, positions, links);
}

Var label_space_loss(Var logits, std::span<const std::vector<int>> candidates,
                     std::span<const int> targets) {
  if (logits.rank() != 2 || logits.dim(0) != candidates.size() || targets.size() != candidates.size() ||
      candidates.empty()) {
    fail(ErrorKind::kShape, "label_space_loss: one candidate list and target per row");
  }
  const std::size_t B = logits.dim(0), V = logits.dim(1);
  auto lv = logits.value();
  std::vector<float> coef(B * V, 0.0f);
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& cand = candidates[b];
    const int y = targets[b];
    if (cand.empty() || y < 0 || static_cast<std::size_t>(y) >= cand.size()) {
      fail(ErrorKind::kUsage, "label_space_loss: target outside the candidates");
    }
    const float* row = lv.data() + b * V;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c : cand) mx = std::max(mx, static_cast<double>(row[c]));
    double z = 0.0;
    for (int c : cand) z += std::exp(row[c] - mx);
    const double logz = std::log(z) + mx;
    loss += inv * (logz - row[cand[static_cast<std::size_t>(y)]]);
    for (std::size_t j = 0; j < cand.size(); ++j) {
      coef[b * V + static_cast<std::size_t>(cand[j])] +=
          static_cast<float>(inv * (std::exp(row[cand[j]] - logz) - (static_cast<int>(j) == y)));
    }
  }
  const auto li = logits.id();
  return logits.tape().record({1}, {static_cast<float>(loss)}, {logits},
                              [li, coef = std::move(coef)](ad::Tape& t, std::uint32_t self) {
                                if (!t.requires_grad(li)) return;
                                const float g = t.grad(self)[0];
                                auto gl = t.grad(li);
                                for (std::size_t i = 0; i < coef.size(); ++i) gl[i] += g * coef[i];
                              });
}

Var UniversalModel::loss(ad::Tape& tape, std::span<const PromptGroup> groups) {
  std::vector<std::vector<int>> candidates;
  std::vector<int> targets;
  for (const auto& g : groups) {
    if (g.labels.size() != g.series.size()) fail(ErrorKind::kUsage, "loss needs a label per prompt");
    std::vector<int> ids;
    for (const auto& label : g.task->label_space) ids.push_back(vocab_.id(label));
    for (int y : g.labels) {
      candidates.push_back(ids);
      targets.push_back(y);
    }
  }
  return label_space_loss(label_logits(tape, groups), candidates, targets);
}

std::vector<Tensor*> UniversalModel::tuning_params() {
  return concat_params(
      {encoder_.params().trainable(), adapter_.params().trainable(), lm_.lora().trainable()});
}

void UniversalModel::save(ad::Archive& archive) const {
  archive.put("encoder", encoder_.params());
  archive.put("adapter", adapter_.params());
  archive.put("lm", lm_.base());
  archive.put("lora", lm_.lora());
  archive.manifest["vocab"] = vocab_.tokens();
  archive.manifest["encoder"] = enc::to_json(encoder_.config());
  archive.manifest["lm"] = lm::to_json(lm_.config());
}

void UniversalModel::load(const ad::Archive& archive) {
  if (!archive.manifest.contains("vocab") ||
      archive.manifest.at("vocab").get<std::vector<std::string>>() != vocab_.tokens()) {
    fail(ErrorKind::kSchema, "checkpoint vocabulary differs");
  }
  archive.get("encoder", encoder_.params());
  archive.get("adapter", adapter_.params());
  archive.get("lm", lm_.base());
  archive.get("lora", lm_.lora());
}

std::uint64_t UniversalModel::fingerprint() const {
  Fnv1a h;
  h.update_pod(ad::fingerprint(encoder_.params()));
  h.update_pod(ad::fingerprint(adapter_.params()));
  h.update_pod(ad::fingerprint(lm_.base()));
  h.update_pod(ad::fingerprint(lm_.lora()));
  return h.digest();
}

std::vector<eval::TaskResult> evaluate_universal(UniversalModel& model,
                                                 const tasks::Dataset& data,
                                                 const InputCache& cache,
                                                 std::span<const tasks::TaskSpec> task_list,
                                                 std::span<const std::size_t> samples,
                                                 bool vocabulary_wide) {
  const std::size_t V = model.vocab().size();
  std::vector<Tensor> series;
  series.reserve(samples.size());
  for (std::size_t i : samples) {
    ad::Tape tape(false);
    Var s = model.series(tape, cache.at(i));
    series.emplace_back(s.shape(), std::vector<float>(s.value().begin(), s.value().end()));
  }
  std::vector<eval::TaskResult> out;
  constexpr std::size_t kChunk = 64;
  for (const auto& task : task_list) {
    const std::size_t pos = data.task_position(task.task_id);
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < samples.size(); ++r) {
      if (data.label(samples[r], pos) >= 0) rows.push_back(r);
    }
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t s = 0; s < rows.size(); s += kChunk) {
      ad::Tape tape(false);
      PromptGroup grp{&task, {}, {}};
      const std::size_t e = std::min(rows.size(), s + kChunk);
      for (std::size_t r = s; r < e; ++r) grp.series.push_back(tape.constant(series[rows[r]]));
      auto logits = model.label_logits(tape, std::span<const PromptGroup>(&grp, 1)).value();
      for (std::size_t r = s; r < e; ++r) {
        auto pred = lm::predict_label(logits.subspan((r - s) * V, V), task.label_space,
                                      model.vocab(), vocabulary_wide);
        labels.push_back(data.label(samples[rows[r]], pos));
        if (task.kind == tasks::TaskKind::kMultiClass) {
          scores.insert(scores.end(), pred.scores.begin(), pred.scores.end());
        } else {
          scores.push_back(pred.scores.at(1));
        }
      }
    }
    auto res = eval::score_task(task, scores, labels);
    if (!samples.empty()) res.split = tasks::to_string(data.samples()[samples[0]].split);
    out.push_back(std::move(res));
  }
  return out;
}

std::vector<std::string> training_prompts(std::span<const tasks::TaskSpec> task_list,
                                          const lm::Vocab& vocab) {
  std::set<std::string> texts;
  for (const auto& t : task_list) {
    std::string text = std::string(lm::kBos) + " " + lm::prompt_prefix() + " " +
                       lm::task_description(t) + " " + lm::kTs + " " +
                       lm::label_listing(t.label_space) + " " + lm::kLbl;
    vocab.tokenize(text);
    for (const auto& label : t.label_space) texts.insert(text + " " + label + " " + lm::kEos);
  }
  return {texts.begin(), texts.end()};
}

namespace {

// One pass over the train windows in shuffled batches. Every batch is asked
// `tasks_per_window` tasks drawn uniformly without replacement; a window
// joins a task's group when its label is defined there. Returns the mean batch
// loss; `first_loss` receives the loss of the first batch.
double universal_epoch(UniversalModel& model, const tasks::Dataset& data, const InputCache& cache,
                       std::span<const tasks::TaskSpec> task_list,
                       std::span<const std::size_t> positions, std::vector<std::size_t> windows,
                       const TrainConfig& config, ad::AdamW& opt, std::mt19937_64& rng,
                       double* first_loss) {
  std::shuffle(windows.begin(), windows.end(), rng);
  std::vector<std::size_t> all(task_list.size());
  std::iota(all.begin(), all.end(), 0);
  const std::size_t per_window = std::min(config.tasks_per_window, task_list.size());
  double total = 0.0;
  std::size_t steps = 0;
  for (std::size_t s = 0; s < windows.size(); s += config.batch_size) {
    const std::size_t e = std::min(windows.size(), s + config.batch_size);
    std::vector<std::size_t> drawn;
    std::sample(all.begin(), all.end(), std::back_inserter(drawn), per_window, rng);
    ad::Tape tape;
    std::vector<std::optional<Var>> series(e - s);
    std::vector<PromptGroup> groups;
    for (std::size_t t : drawn) {
      PromptGroup grp{&task_list[t], {}, {}};
      for (std::size_t i = s; i < e; ++i) {
        const int y = data.label(windows[i], positions[t]);
        if (y < 0) continue;
        auto& sv = series[i - s];
        if (!sv) sv = model.series(tape, cache.at(windows[i]));
        grp.series.push_back(*sv);
        grp.labels.push_back(y);
      }
      if (!grp.labels.empty()) groups.push_back(std::move(grp));
    }
    if (groups.empty()) continue;
    Var loss = model.loss(tape, groups);
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) fail(ErrorKind::kNumeric, "non-finite training loss");
    if (first_loss && steps == 0) *first_loss = lv;
    tape.backward(loss);
    opt.step();
    total += lv;
    ++steps;
  }
  if (steps == 0) fail(ErrorKind::kUsage, "no train windows with a defined label");
  return total / static_cast<double>(steps);
}

}  // namespace

TrainOutcome train_universal(UniversalModel& model, const tasks::Dataset& data,
                             const InputCache& cache, const TrainConfig& config,
                             std::uint64_t seed) {
  const auto task_list = select_train_tasks(data, config);
  std::vector<std::size_t> positions;
  for (const auto& t : task_list) positions.push_back(data.task_position(t.task_id));
  std::vector<std::size_t> windows;
  for (std::size_t i : usable_samples(data, cache, tasks::Split::kTrain, std::nullopt, 0, seed)) {
    bool any = false;
    for (std::size_t p : positions) any |= data.label(i, p) >= 0;
    if (any) windows.push_back(i);
  }
  if (windows.empty()) fail(ErrorKind::kUsage, "no train windows with a defined label");
  const auto val_set = usable_samples(data, cache, tasks::Split::kVal, std::nullopt,
                                      config.max_val_windows, seed);
  TrainOutcome outcome;
  bool first = true;
  auto& lm = model.lm();

  if (config.encoder_warmup_epochs > 0) {
    TrainConfig warm = config;
    warm.regime = Regime::kMtlHeads;
    warm.epochs = config.encoder_warmup_epochs;
    HeadsModel heads(config.encoder, task_list, seed);
    const auto w = train_heads(heads, data, cache, warm, seed);
    auto dst = model.encoder().params().begin();
    for (const auto& [name, t] : heads.encoder().params()) {
      std::copy(t.values().begin(), t.values().end(), dst->second.values().begin());
      ++dst;
    }
    for (auto e : w.log) {
      e.stage = "encoder";
      outcome.log.push_back(e);
    }
  }

  if (config.base_epochs > 0) {
    lm.set_lora_enabled(false);
    lm.set_base_trainable(true);
    auto params = concat_params({model.encoder().params().trainable(),
                                 model.adapter().params().trainable(), lm.base().trainable()});
    ad::AdamW opt(params, {config.base_lr, 0.9f, 0.999f, 1e-8f, config.weight_decay});
    for (std::size_t epoch = 1; epoch <= config.base_epochs; ++epoch) {
      auto rng = stream_rng(seed, 0xba5e, epoch);
      const double loss = universal_epoch(model, data, cache, task_list, positions, windows, config, opt,
                                          rng, first ? &outcome.step0_loss : nullptr);
      first = false;
      outcome.log.push_back({"base", epoch, loss, std::nullopt});
    }
  }

  lm.set_base_trainable(false);
  lm.set_lora_enabled(true);
  auto params = model.tuning_params();
  ad::AdamW opt(params, {config.lr, 0.9f, 0.999f, 1e-8f, config.weight_decay});
  detail::Snapshot best(params);
  for (std::size_t epoch = 1; epoch <= config.lora_epochs; ++epoch) {
    auto rng = stream_rng(seed, 0x10a, epoch);
    const double loss = universal_epoch(model, data, cache, task_list, positions, windows, config, opt,
                                        rng, first ? &outcome.step0_loss : nullptr);
    first = false;
    EpochLog log{"lora", epoch, loss, std::nullopt};
    if (!val_set.empty()) {
      log.val_auroc = eval::mean_auroc(
          evaluate_universal(model, data, cache, task_list, val_set, config.vocabulary_wide));
    }
    if (detail::improves(log.val_auroc, outcome.best_val_auroc, outcome.best_epoch == 0)) {
      outcome.best_val_auroc = log.val_auroc;
      outcome.best_epoch = epoch;
      best.take(params);
    }
    outcome.log.push_back(log);
  }
  if (outcome.best_epoch != 0) best.restore(params);
  return outcome;
}

}  // namespace uniclin::train
