#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "uniclin/ad/adamw.hpp"
#include "uniclin/ad/ops.hpp"
#include "uniclin/error.hpp"
#include "uniclin/rng.hpp"
#include "detail.hpp"
#include "uniclin/train/train.hpp"

namespace uniclin::train {

using ad::Tensor;
using ad::Var;

namespace {

std::string head_name(int task_id, const char* part) {
  return "task" + std::to_string(task_id) + "." + part;
}

std::size_t width_of(const tasks::TaskSpec& t) {
  return t.kind == tasks::TaskKind::kMultiClass ? t.n_classes() : 1;
}

}  // namespace

HeadsModel::HeadsModel(const enc::EncoderConfig& config, std::span<const tasks::TaskSpec> tasks,
                       std::uint64_t seed)
    : encoder_(config, splitmix64(seed ^ 0xe5c0de)) {
  for (const auto& t : tasks) add_head(t, seed);
}

std::size_t HeadsModel::feature_dim() const {
  const auto& c = encoder_.config();
  return encoder_.out_steps() * c.k * c.d;
}

std::size_t HeadsModel::head_width(std::size_t head) const { return width_of(tasks_.at(head)); }

std::size_t HeadsModel::add_head(const tasks::TaskSpec& task, std::uint64_t seed) {
  if (heads_.contains(head_name(task.task_id, "w"))) {
    fail(ErrorKind::kUsage, "duplicate head for task " + std::to_string(task.task_id));
  }
  const std::size_t F = feature_dim(), C = width_of(task);
  auto rng = stream_rng(seed, 0x4ead, static_cast<std::uint64_t>(task.task_id));
  const float bound = 1.0f / std::sqrt(static_cast<float>(F));
  std::uniform_real_distribution<float> u(-bound, bound);
  std::vector<float> w(C * F);
  for (auto& x : w) x = u(rng);
  heads_.add(head_name(task.task_id, "w"), Tensor({C, F}, std::move(w), true));
  heads_.add(head_name(task.task_id, "b"), Tensor::zeros({C}, true));
  tasks_.push_back(task);
  offsets_.push_back(offsets_.back() + C);
  return tasks_.size() - 1;
}

Var HeadsModel::forward(ad::Tape& tape, std::span<const enc::EncoderInput* const> inputs) {
  if (inputs.empty()) fail(ErrorKind::kUsage, "heads forward on an empty batch");
  if (tasks_.empty()) fail(ErrorKind::kUsage, "model has no heads");
  const std::size_t F = feature_dim();
  std::vector<Var> rows;
  for (const auto* in : inputs) rows.push_back(ad::reshape(encoder_.encode(tape, *in), {1, F}));
  std::vector<Var> ws, bs;
  for (const auto& t : tasks_) {
    ws.push_back(tape.param(heads_.at(head_name(t.task_id, "w"))));
    bs.push_back(tape.param(heads_.at(head_name(t.task_id, "b"))));
  }
  Var x = rows.size() == 1 ? rows[0] : ad::concat_rows(rows);
  Var w = ws.size() == 1 ? ws[0] : ad::concat_rows(ws);
  Var b = bs.size() == 1 ? bs[0] : ad::concat_rows(bs);
  return ad::add_row(ad::matmul_nt(x, w), b);
}

void HeadsModel::save(ad::Archive& archive) const {
  archive.put("encoder", encoder_.params());
  archive.put("heads", heads_);
  std::vector<int> ids;
  for (const auto& t : tasks_) ids.push_back(t.task_id);
  archive.manifest["heads"] = ids;
  archive.manifest["encoder"] = enc::to_json(encoder_.config());
}

void HeadsModel::load(const ad::Archive& archive) {
  std::vector<int> ids;
  for (const auto& t : tasks_) ids.push_back(t.task_id);
  if (!archive.manifest.contains("heads") || archive.manifest.at("heads").get<std::vector<int>>() != ids) {
    fail(ErrorKind::kSchema, "checkpoint heads do not match the task list");
  }
  archive.get("encoder", encoder_.params());
  archive.get("heads", heads_);
}

Var multi_head_loss(const HeadsModel& model, Var logits, std::span<const int> labels) {
  const std::size_t H = model.head_count();
  if (logits.rank() != 2 || logits.dim(1) != model.total_width()) {
    fail(ErrorKind::kShape, "head logits do not match the head layout");
  }
  const std::size_t B = logits.dim(0), W = logits.dim(1);
  if (labels.size() != B * H) fail(ErrorKind::kShape, "head labels must be [B x heads]");
  auto lv = logits.value();
  std::vector<float> coef(B * W, 0.0f);
  double loss = 0.0;
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t off = model.head_offset(h), C = model.head_width(h);
    std::size_t n = 0;
    for (std::size_t b = 0; b < B; ++b) n += labels[b * H + h] >= 0;
    if (n == 0) continue;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t b = 0; b < B; ++b) {
      const int y = labels[b * H + h];
      if (y < 0) continue;
      const float* row = lv.data() + b * W + off;
      float* g = coef.data() + b * W + off;
      if (C == 1) {
        if (y > 1) fail(ErrorKind::kUsage, "binary head label out of range");
        const double x = row[0];
        loss += inv * (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))));
        g[0] = static_cast<float>(inv * (1.0 / (1.0 + std::exp(-x)) - y));
      } else {
        if (static_cast<std::size_t>(y) >= C) fail(ErrorKind::kUsage, "class label out of range");
        const float mx = *std::max_element(row, row + C);
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(static_cast<double>(row[c] - mx));
        const double logz = std::log(z) + mx;
        loss += inv * (logz - row[y]);
        for (std::size_t c = 0; c < C; ++c) {
          g[c] = static_cast<float>(inv * (std::exp(row[c] - logz) - (static_cast<int>(c) == y)));
        }
      }
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

std::vector<tasks::TaskSpec> select_train_tasks(const tasks::Dataset& data,
                                                const TrainConfig& config) {
  std::vector<tasks::TaskSpec> out;
  for (const auto& t : data.tasks()) {
    if (t.role != tasks::SplitRole::kTrain) continue;
    if (!config.task_filter.empty() &&
        std::find(config.task_filter.begin(), config.task_filter.end(), t.task_id) ==
            config.task_filter.end()) {
      continue;
    }
    out.push_back(t);
  }
  for (int id : config.task_filter) {
    bool found = false;
    for (const auto& t : out) found |= t.task_id == id;
    if (!found) fail(ErrorKind::kConfig, "task filter names no train task " + std::to_string(id));
  }
  if (out.empty()) fail(ErrorKind::kConfig, "no train tasks selected");
  if (config.regime == Regime::kStl && out.size() != 1) {
    fail(ErrorKind::kConfig, "stl needs exactly one task in the filter");
  }
  return out;
}

std::vector<eval::TaskResult> evaluate_heads(HeadsModel& model, const tasks::Dataset& data,
                                             const InputCache& cache,
                                             std::span<const std::size_t> samples) {
  const std::size_t H = model.head_count(), W = model.total_width();
  std::vector<float> logits;
  logits.reserve(samples.size() * W);
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < samples.size(); s += kChunk) {
    ad::Tape tape(false);
    std::vector<const enc::EncoderInput*> inputs;
    for (std::size_t i = s; i < std::min(samples.size(), s + kChunk); ++i) {
      inputs.push_back(&cache.at(samples[i]));
    }
    auto v = model.forward(tape, inputs).value();
    logits.insert(logits.end(), v.begin(), v.end());
  }
  std::vector<eval::TaskResult> out;
  for (std::size_t h = 0; h < H; ++h) {
    const auto& task = model.tasks()[h];
    const std::size_t pos = data.task_position(task.task_id);
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t r = 0; r < samples.size(); ++r) {
      const int y = data.label(samples[r], pos);
      if (y < 0) continue;
      labels.push_back(y);
      detail::append_head_scores(logits.data() + r * W + model.head_offset(h), model.head_width(h),
                                 scores);
    }
    auto res = eval::score_task(task, scores, labels);
    if (!samples.empty()) res.split = tasks::to_string(data.samples()[samples[0]].split);
    out.push_back(std::move(res));
  }
  return out;
}

TrainOutcome train_heads(HeadsModel& model, const tasks::Dataset& data, const InputCache& cache,
                         const TrainConfig& config, std::uint64_t seed) {
  const std::size_t H = model.head_count();
  std::vector<std::size_t> positions;
  for (const auto& t : model.tasks()) positions.push_back(data.task_position(t.task_id));

  std::vector<std::size_t> train_set;
  for (std::size_t i : usable_samples(data, cache, tasks::Split::kTrain, std::nullopt, 0, seed)) {
    bool any = false;
    for (std::size_t p : positions) any |= data.label(i, p) >= 0;
    if (any) train_set.push_back(i);
  }
  if (train_set.empty()) fail(ErrorKind::kUsage, "no train windows with a defined label");
  const auto val_set = usable_samples(data, cache, tasks::Split::kVal, std::nullopt,
                                      config.max_val_windows, seed);

  std::vector<Tensor*> params = model.encoder().params().trainable();
  for (Tensor* p : model.heads().trainable()) params.push_back(p);
  ad::AdamW opt(params, {config.lr, 0.9f, 0.999f, 1e-8f, config.weight_decay});

  TrainOutcome outcome;
  detail::Snapshot best(params);
  bool first_step = true;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    auto order = train_set;
    auto rng = stream_rng(seed, 0x7a1, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += config.batch_size) {
      const std::size_t e = std::min(order.size(), s + config.batch_size);
      std::vector<const enc::EncoderInput*> inputs;
      std::vector<int> labels;
      for (std::size_t i = s; i < e; ++i) {
        inputs.push_back(&cache.at(order[i]));
        for (std::size_t p : positions) labels.push_back(data.label(order[i], p));
      }
      ad::Tape tape;
      Var loss = multi_head_loss(model, model.forward(tape, inputs), labels);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) fail(ErrorKind::kNumeric, "non-finite training loss");
      if (first_step) outcome.step0_loss = lv / static_cast<double>(H);
      first_step = false;
      tape.backward(loss);
      opt.step();
      total += lv;
      ++batches;
    }
    EpochLog log{"heads", epoch, total / static_cast<double>(batches), std::nullopt};
    if (!val_set.empty()) log.val_auroc = eval::mean_auroc(evaluate_heads(model, data, cache, val_set));
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
