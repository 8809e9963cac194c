#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <thread>

#include "detail.hpp"
#include "uniclin/ad/adamw.hpp"
#include "uniclin/ad/ops.hpp"
#include "uniclin/error.hpp"
#include "uniclin/rng.hpp"
#include "uniclin/train/train.hpp"

namespace uniclin::train {

using ad::Tensor;
using ad::Var;

std::optional<std::size_t> nearest_head(std::span<const tasks::TaskSpec> trained,
                                        const tasks::TaskSpec& task) {
  std::optional<std::size_t> best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trained.size(); ++i) {
    const auto& t = trained[i];
    if (t.family != task.family || t.kind != task.kind || t.label_space != task.label_space ||
        t.boundaries != task.boundaries || t.phenotype != task.phenotype ||
        t.indicator != task.indicator) {
      continue;
    }
    const double gap = std::abs(t.window_hours - task.window_hours);
    if (gap < best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  return best;
}

namespace {

struct Cell {
  const tasks::TaskSpec* task = nullptr;
  TransferInit init = TransferInit::kPretrain;
  std::size_t n = 0;
};

std::vector<std::size_t> draw_shots(const tasks::Dataset& data, const InputCache& cache,
                                    const tasks::TaskSpec& task, std::size_t n, std::uint64_t seed) {
  auto pool = usable_samples(data, cache, tasks::Split::kTrain, data.task_position(task.task_id), 0,
                             seed);
  if (pool.size() <= n) return pool;
  auto rng = stream_rng(seed, 0x5407, static_cast<std::uint64_t>(task.task_id) * 100003u + n);
  std::vector<std::size_t> out;
  std::sample(pool.begin(), pool.end(), std::back_inserter(out), n, rng);
  return out;
}

eval::TaskResult stamp(eval::TaskResult r, const std::string& regime, std::uint64_t seed,
                       std::size_t n, std::size_t epochs) {
  r.regime = regime;
  r.seed = seed;
  r.n_samples = n;
  r.epochs = epochs;
  return r;
}

// Trains on `shots` up to the deepest grid point, calling `record(epoch)` at
// each grid point (epoch 0 before any step).
template <typename StepFn, typename RecordFn>
void tune(const TransferConfig& transfer, std::vector<std::size_t> shots, std::uint64_t seed,
          int task_id, StepFn step, RecordFn record) {
  const std::size_t deepest = transfer.epoch_grid.empty() ? 0 : transfer.epoch_grid.back();
  auto at_grid = [&](std::size_t e) {
    return std::find(transfer.epoch_grid.begin(), transfer.epoch_grid.end(), e) !=
           transfer.epoch_grid.end();
  };
  if (at_grid(0)) record(0);
  for (std::size_t epoch = 1; epoch <= deepest; ++epoch) {
    auto rng = stream_rng(seed, 0xf17e, static_cast<std::uint64_t>(task_id) * 1000u + epoch);
    std::shuffle(shots.begin(), shots.end(), rng);
    for (std::size_t s = 0; s < shots.size(); s += transfer.batch_size) {
      const std::size_t e = std::min(shots.size(), s + transfer.batch_size);
      step(std::span<const std::size_t>(shots.data() + s, e - s));
    }
    if (at_grid(epoch)) record(epoch);
  }
}

std::vector<eval::TaskResult> heads_cell(const TransferConfig& transfer,
                                         const TrainConfig& train_config,
                                         const TransferSources& sources,
                                         const tasks::Dataset& data, const InputCache& cache,
                                         const Cell& cell, std::span<const std::size_t> test,
                                         std::uint64_t seed) {
  const auto& task = *cell.task;
  const tasks::TaskSpec* one = &task;
  HeadsModel model(train_config.encoder, std::span<const tasks::TaskSpec>(one, 1),
                   splitmix64(seed ^ 0x5c7a7c4));
  if (cell.init == TransferInit::kPretrain) {
    if (!sources.heads) fail(ErrorKind::kUsage, "pretrain init needs a trained heads model");
    auto src = sources.heads->encoder().params().begin();
    for (auto& [name, tensor] : model.encoder().params()) {
      std::copy(src->second.values().begin(), src->second.values().end(), tensor.values().begin());
      ++src;
    }
  }
  const std::string regime = "heads-few-shot-" + to_string(cell.init);
  std::vector<Tensor*> params = model.encoder().params().trainable();
  for (Tensor* p : model.heads().trainable()) params.push_back(p);
  ad::AdamW opt(params, {transfer.lr, 0.9f, 0.999f, 1e-8f, 0.0f});
  const std::size_t pos = data.task_position(task.task_id);
  auto shots = draw_shots(data, cache, task, cell.n, seed);
  std::vector<eval::TaskResult> out;
  tune(
      transfer, shots, seed, task.task_id,
      [&](std::span<const std::size_t> batch) {
        std::vector<const enc::EncoderInput*> inputs;
        std::vector<int> labels;
        for (std::size_t i : batch) {
          inputs.push_back(&cache.at(i));
          labels.push_back(data.label(i, pos));
        }
        ad::Tape tape;
        Var loss = multi_head_loss(model, model.forward(tape, inputs), labels);
        tape.backward(loss);
        opt.step();
      },
      [&](std::size_t epoch) {
        auto r = evaluate_heads(model, data, cache, test);
        out.push_back(stamp(r.at(0), regime, seed, cell.n, epoch));
      });
  return out;
}

std::vector<eval::TaskResult> universal_cell(const TransferConfig& transfer,
                                             const TrainConfig& train_config,
                                             const TransferSources& sources,
                                             const tasks::Dataset& data, const InputCache& cache,
                                             const Cell& cell, std::span<const std::size_t> test,
                                             std::uint64_t seed) {
  const auto& task = *cell.task;
  if (!sources.universal) fail(ErrorKind::kUsage, "universal transfer needs a trained decoder");
  UniversalModel model = *sources.universal;
  if (cell.init == TransferInit::kScratch) {
    UniversalModel fresh(train_config.encoder, train_config.adapter, train_config.lm,
                         sources.universal->vocab(), splitmix64(seed ^ 0x5c7a7c4));
    model = std::move(fresh);
  }
  model.lm().set_base_trainable(false);
  model.lm().set_lora_enabled(true);
  const std::string regime = "universal-few-shot-" + to_string(cell.init);
  auto params = model.tuning_params();
  ad::AdamW opt(params, {transfer.lr, 0.9f, 0.999f, 1e-8f, 0.0f});
  const std::size_t pos = data.task_position(task.task_id);
  auto shots = draw_shots(data, cache, task, cell.n, seed);
  const tasks::TaskSpec* one = &task;
  std::vector<eval::TaskResult> out;
  tune(
      transfer, shots, seed, task.task_id,
      [&](std::span<const std::size_t> batch) {
        ad::Tape tape;
        PromptGroup grp{&task, {}, {}};
        for (std::size_t i : batch) {
          grp.series.push_back(model.series(tape, cache.at(i)));
          grp.labels.push_back(data.label(i, pos));
        }
        Var loss = model.loss(tape, std::span<const PromptGroup>(&grp, 1));
        tape.backward(loss);
        opt.step();
      },
      [&](std::size_t epoch) {
        auto r = evaluate_universal(model, data, cache, std::span<const tasks::TaskSpec>(one, 1),
                                    test, train_config.vocabulary_wide);
        out.push_back(stamp(r.at(0), regime, seed, cell.n, epoch));
      });
  return out;
}

// A trained head answering another task, scored against that task's labels.
eval::TaskResult score_head(HeadsModel& model, std::size_t head, const tasks::TaskSpec& task,
                            const tasks::Dataset& data, const InputCache& cache,
                            std::span<const std::size_t> samples) {
  const std::size_t pos = data.task_position(task.task_id), W = model.total_width();
  std::vector<double> scores;
  std::vector<int> labels;
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < samples.size(); s += kChunk) {
    ad::Tape tape(false);
    std::vector<const enc::EncoderInput*> inputs;
    const std::size_t e = std::min(samples.size(), s + kChunk);
    for (std::size_t i = s; i < e; ++i) inputs.push_back(&cache.at(samples[i]));
    auto v = model.forward(tape, inputs).value();
    for (std::size_t i = s; i < e; ++i) {
      detail::append_head_scores(v.data() + (i - s) * W + model.head_offset(head),
                                 model.head_width(head), scores);
      labels.push_back(data.label(samples[i], pos));
    }
  }
  auto r = eval::score_task(task, scores, labels);
  r.split = tasks::to_string(tasks::Split::kTest);
  return r;
}

}  // namespace

std::vector<eval::TaskResult> run_transfer(const TransferConfig& transfer,
                                           const TrainConfig& train_config,
                                           const TransferSources& sources, bool universal,
                                           const tasks::Dataset& data, const InputCache& cache,
                                           std::span<const tasks::TaskSpec> task_list,
                                           std::uint64_t seed, std::size_t threads) {
  std::vector<std::vector<std::size_t>> tests;
  for (const auto& t : task_list) {
    tests.push_back(usable_samples(data, cache, tasks::Split::kTest, data.task_position(t.task_id),
                                   transfer.max_test_windows, seed));
  }

  if (transfer.mode == TransferMode::kZeroShot) {
    std::vector<eval::TaskResult> out;
    for (std::size_t i = 0; i < task_list.size(); ++i) {
      const auto& task = task_list[i];
      if (universal) {
        if (!sources.universal) fail(ErrorKind::kUsage, "zero-shot needs a trained decoder");
        UniversalModel model = *sources.universal;
        auto r = evaluate_universal(model, data, cache, task_list.subspan(i, 1), tests[i],
                                    train_config.vocabulary_wide);
        out.push_back(stamp(r.at(0), "universal-zero-shot", seed, 0, 0));
        continue;
      }
      if (!sources.heads) fail(ErrorKind::kUsage, "zero-shot needs a trained heads model");
      auto head = nearest_head(sources.heads->tasks(), task);
      if (!head) {
        fail(ErrorKind::kStructural, "task " + std::to_string(task.task_id) +
                                         ": label space changed, no trained head can answer it");
      }
      HeadsModel model = *sources.heads;
      auto r = score_head(model, *head, task, data, cache, tests[i]);
      out.push_back(stamp(r, "heads-zero-shot", seed, 0, 0));
    }
    return out;
  }

  std::vector<Cell> cells;
  std::vector<std::size_t> cell_task;
  for (std::size_t i = 0; i < task_list.size(); ++i) {
    for (auto init : transfer.inits) {
      for (std::size_t n : transfer.n_samples) {
        cells.push_back({&task_list[i], init, n});
        cell_task.push_back(i);
      }
    }
  }
  std::vector<std::vector<eval::TaskResult>> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < cells.size(); c = next++) {
      try {
        const auto& test = tests[cell_task[c]];
        results[c] = universal
                         ? universal_cell(transfer, train_config, sources, data, cache, cells[c], test, seed)
                         : heads_cell(transfer, train_config, sources, data, cache, cells[c], test, seed);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, cells.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<eval::TaskResult> out;
  for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
  return out;
}

}  // namespace uniclin::train
