#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "support/gradcheck.hpp"
#include "uniclin/ad/adamw.hpp"
#include "uniclin/ad/ops.hpp"
#include "uniclin/error.hpp"
#include "uniclin/train/train.hpp"

using namespace uniclin;
using namespace uniclin::train;
using ad::Var;

namespace {

struct World {
  synth::GenConfig gen;
  synth::Cohort cohort;
  std::vector<tasks::TaskSpec> catalog;
  std::unique_ptr<tasks::Dataset> data;
  std::unique_ptr<InputCache> cache;
  std::optional<lm::Vocab> vocab;
};

const World& world() {
  static const World w = [] {
    World w;
    w.gen = synth::GenConfig::defaults();
    w.gen.n_patients = 160;
    w.cohort = synth::generate_cohort(w.gen, 11);
    auto los = tasks::train_window_los_days(w.cohort);
    w.catalog = tasks::build_task_catalog(tasks::CatalogConfig::desk(3), los);
    w.data = std::make_unique<tasks::Dataset>(w.cohort, w.catalog);
    w.cache = std::make_unique<InputCache>(*w.data, fit_normalizer(*w.data));
    w.vocab = lm::Vocab::build(w.catalog, w.gen);
    return w;
  }();
  return w;
}

const tasks::TaskSpec& first_of(tasks::Family f, tasks::SplitRole role) {
  for (const auto& t : world().catalog) {
    if (t.family == f && t.role == role) return t;
  }
  FAIL("no such task");
  return world().catalog.front();
}

// Ten usable train windows of a binary task, five of each class.
std::vector<std::size_t> balanced_ten(const tasks::TaskSpec& task) {
  const auto& w = world();
  const std::size_t pos = w.data->task_position(task.task_id);
  std::vector<std::size_t> neg, pos_;
  for (std::size_t i : usable_samples(*w.data, *w.cache, tasks::Split::kTrain, pos, 0, 1)) {
    (w.data->label(i, pos) ? pos_ : neg).push_back(i);
  }
  REQUIRE(neg.size() >= 5);
  REQUIRE(pos_.size() >= 5);
  std::vector<std::size_t> out(neg.begin(), neg.begin() + 5);
  out.insert(out.end(), pos_.begin(), pos_.begin() + 5);
  return out;
}

TrainConfig quick_config(Regime regime, std::vector<int> filter) {
  TrainConfig c;
  c.regime = regime;
  c.epochs = 1;
  c.base_epochs = 1;
  c.lora_epochs = 1;
  c.batch_size = 16;
  c.task_filter = std::move(filter);
  c.max_val_windows = 20;
  return c;
}

UniversalModel fresh_universal(const TrainConfig& c, std::uint64_t seed) {
  return UniversalModel(c.encoder, c.adapter, c.lm, *world().vocab, seed);
}

}  // namespace

TEST_CASE("label-space loss: value and gradient") {
  std::mt19937_64 rng(3);
  const std::vector<std::vector<int>> cand{{1, 4}, {0, 2, 5}, {3, 1}};
  const std::vector<int> targets{1, 2, 0};

  ad::Tape tape;
  ad::Tensor zeros = ad::Tensor::zeros({3, 6}, false);
  Var uniform = label_space_loss(tape.param(zeros), cand, targets);
  CHECK(uniform.value()[0] == doctest::Approx((2 * std::log(2.0) + std::log(3.0)) / 3).epsilon(1e-6));

  ad::Tensor x = testing::random_tensor({3, 6}, rng);
  Var loss = label_space_loss(tape.param(x), cand, targets);
  double oracle = 0.0;
  for (std::size_t b = 0; b < 3; ++b) {
    double z = 0.0;
    for (int c : cand[b]) z += std::exp(static_cast<double>(x.values()[b * 6 + c]));
    oracle += std::log(z) - x.values()[b * 6 + cand[b][targets[b]]];
  }
  CHECK(loss.value()[0] == doctest::Approx(oracle / 3).epsilon(1e-5));

  auto r = testing::grad_check({x}, [&](ad::Tape&, std::vector<Var>& v) {
    return label_space_loss(v[0], cand, targets);
  }, 5);
  CHECK(r.max_rel_err < 1e-3);

  ad::Tape t2;
  ad::Tensor y = testing::random_tensor({3, 6}, rng);
  y.set_requires_grad(true);
  t2.backward(label_space_loss(t2.param(y), cand, targets));
  for (std::size_t b = 0; b < 3; ++b) {
    for (int c = 0; c < 6; ++c) {
      const bool listed = std::find(cand[b].begin(), cand[b].end(), c) != cand[b].end();
      if (!listed) CHECK(y.grad()[b * 6 + c] == 0.0f);
    }
  }
  CHECK_THROWS_AS(label_space_loss(tape.param(x), cand, std::vector<int>{1, 3, 0}), Error);
}

TEST_CASE("multi-head loss: oracle value, finite differences, undefined rows") {
  tasks::TaskSpec bin, multi;
  bin.task_id = 1;
  bin.label_space = tasks::binary_labels();
  multi.task_id = 2;
  multi.kind = tasks::TaskKind::kMultiClass;
  multi.family = tasks::Family::kLos;
  multi.label_space = {"a", "b", "c"};
  std::vector<tasks::TaskSpec> ts{bin, multi};
  enc::EncoderConfig ec;
  HeadsModel model(ec, ts, 1);
  REQUIRE(model.total_width() == 4);

  std::mt19937_64 rng(9);
  ad::Tensor x = testing::random_tensor({3, 4}, rng);
  const std::vector<int> labels{1, 2, -1, 0, 0, -1};
  ad::Tape tape;
  Var loss = multi_head_loss(model, tape.param(x), labels);
  auto v = x.values();
  auto bce = [](double z, int y) { return std::log1p(std::exp(-z)) + (1 - y) * z; };
  auto ce = [&](std::size_t row, int y) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += std::exp(static_cast<double>(v[row * 4 + 1 + c]));
    return std::log(s) - v[row * 4 + 1 + y];
  };
  const double oracle = (bce(v[0], 1) + bce(v[8], 0)) / 2 + (ce(0, 2) + ce(1, 0)) / 2;
  CHECK(loss.value()[0] == doctest::Approx(oracle).epsilon(1e-5));

  auto r = testing::grad_check({x}, [&](ad::Tape&, std::vector<Var>& in) {
    return multi_head_loss(model, in[0], labels);
  }, 2);
  CHECK(r.max_rel_err < 1e-3);

  x.set_requires_grad(true);
  ad::Tape t2;
  t2.backward(multi_head_loss(model, t2.param(x), labels));
  CHECK(x.grad()[4] == 0.0f);
  for (int c = 1; c < 4; ++c) CHECK(x.grad()[8 + c] == 0.0f);
}

TEST_CASE("normalizer matches a direct recount over train windows") {
  const auto& w = world();
  auto norm = fit_normalizer(*w.data);
  const std::size_t k = w.gen.channels.size();
  std::vector<double> sum(k, 0.0), sq(k, 0.0);
  std::vector<std::size_t> n(k, 0);
  for (std::size_t i : w.data->indices(tasks::Split::kTrain)) {
    for (const auto& e : w.data->events(i)) {
      sum[e.channel] += e.value;
      sq[e.channel] += static_cast<double>(e.value) * e.value;
      ++n[e.channel];
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    REQUIRE(n[c] > 1);
    const double mean = sum[c] / n[c];
    const double sd = std::sqrt(std::max(0.0, sq[c] / n[c] - mean * mean));
    CHECK(norm.mean[c] == doctest::Approx(mean).epsilon(1e-4));
    CHECK(norm.sd[c] == doctest::Approx(sd).epsilon(1e-3));
  }
}

TEST_CASE("usable samples are sorted, capped and seeded") {
  const auto& w = world();
  auto all = usable_samples(*w.data, *w.cache, tasks::Split::kVal, std::nullopt, 0, 4);
  CHECK(std::is_sorted(all.begin(), all.end()));
  CHECK(all.size() <= w.data->indices(tasks::Split::kVal).size());
  auto a = usable_samples(*w.data, *w.cache, tasks::Split::kVal, std::nullopt, 7, 4);
  auto b = usable_samples(*w.data, *w.cache, tasks::Split::kVal, std::nullopt, 7, 4);
  CHECK(a.size() == 7);
  CHECK(a == b);
  CHECK(std::is_sorted(a.begin(), a.end()));
  const std::size_t pos = w.data->task_position(first_of(tasks::Family::kMor, tasks::SplitRole::kTrain).task_id);
  for (std::size_t i : usable_samples(*w.data, *w.cache, tasks::Split::kTrain, pos, 0, 1)) {
    CHECK(w.data->label(i, pos) >= 0);
    CHECK(w.cache->usable(i));
  }
}

TEST_CASE("train and transfer configs round-trip through json") {
  TrainConfig c;
  c.regime = Regime::kStl;
  c.task_filter = {3};
  c.seeds = {5, 6};
  c.lr = 3e-4f;
  c.encoder.kind = enc::EncoderKind::kGruD;
  CHECK(train_config_from_json(to_json(c)) == c);
  TransferConfig t;
  t.mode = TransferMode::kZeroShot;
  t.inits = {TransferInit::kScratch};
  t.epoch_grid = {0, 3};
  CHECK(transfer_config_from_json(to_json(t)) == t);

  auto j = to_json(c);
  j["version"] = 99;
  CHECK_THROWS_AS(train_config_from_json(j), Error);
  auto bad = to_json(c);
  bad["task_filter"] = nlohmann::json::array({1, 2});
  CHECK_THROWS_AS(train_config_from_json(bad), Error);
}

TEST_CASE("heads model has one head per selected train task") {
  const auto& w = world();
  TrainConfig c;
  auto tt = select_train_tasks(*w.data, c);
  std::size_t n_train = 0;
  for (const auto& t : w.catalog) n_train += t.role == tasks::SplitRole::kTrain;
  CHECK(tt.size() == n_train);
  HeadsModel m(c.encoder, tt, 1);
  CHECK(m.head_count() == n_train);

  c.regime = Regime::kStl;
  c.task_filter = {tt[0].task_id, tt[1].task_id};
  CHECK_THROWS_AS(select_train_tasks(*w.data, c), Error);
  c.task_filter = {first_of(tasks::Family::kDecom, tasks::SplitRole::kTransfer).task_id};
  CHECK_THROWS_AS(select_train_tasks(*w.data, c), Error);
}

TEST_CASE("single-task heads training reduces exactly to STL") {
  const auto& w = world();
  const int id = first_of(tasks::Family::kMor, tasks::SplitRole::kTrain).task_id;
  auto run = [&](Regime r) {
    auto c = quick_config(r, {id});
    c.epochs = 2;
    auto tt = select_train_tasks(*w.data, c);
    HeadsModel m(c.encoder, tt, 2);
    auto out = train_heads(m, *w.data, *w.cache, c, 2);
    auto test = usable_samples(*w.data, *w.cache, tasks::Split::kTest, std::nullopt, 0, 2);
    return std::pair(out, evaluate_heads(m, *w.data, *w.cache, test));
  };
  auto [mtl, mtl_res] = run(Regime::kMtlHeads);
  auto [stl, stl_res] = run(Regime::kStl);
  REQUIRE(mtl.log.size() == stl.log.size());
  for (std::size_t e = 0; e < mtl.log.size(); ++e) CHECK(mtl.log[e].loss == stl.log[e].loss);
  CHECK(mtl_res == stl_res);
}

TEST_CASE("STL overfits ten samples") {
  const auto& w = world();
  const auto& task = first_of(tasks::Family::kMor, tasks::SplitRole::kTrain);
  const std::size_t pos = w.data->task_position(task.task_id);
  auto ten = balanced_ten(task);
  HeadsModel m(enc::EncoderConfig{}, std::vector<tasks::TaskSpec>{task}, 3);
  std::vector<ad::Tensor*> params = m.encoder().params().trainable();
  for (auto* p : m.heads().trainable()) params.push_back(p);
  ad::AdamW opt(params, {3e-3f, 0.9f, 0.999f, 1e-8f, 0.0f});
  std::vector<const enc::EncoderInput*> inputs;
  std::vector<int> labels;
  for (std::size_t i : ten) {
    inputs.push_back(&w.cache->at(i));
    labels.push_back(w.data->label(i, pos));
  }
  double loss = 1e9;
  std::size_t steps = 0;
  while (steps < 200 && loss >= 0.05) {
    ad::Tape tape;
    Var l = multi_head_loss(m, m.forward(tape, inputs), labels);
    loss = l.value()[0];
    tape.backward(l);
    opt.step();
    ++steps;
  }
  CHECK(loss < 0.05);
}

TEST_CASE("universal decoder overfits ten samples with the base frozen") {
  const auto& w = world();
  const auto& task = first_of(tasks::Family::kMor, tasks::SplitRole::kTrain);
  const std::size_t pos = w.data->task_position(task.task_id);
  auto ten = balanced_ten(task);
  TrainConfig c;
  auto model = fresh_universal(c, 4);
  model.lm().set_base_trainable(false);
  model.lm().set_lora_enabled(true);
  const auto base_before = ad::fingerprint(model.lm().base());
  ad::AdamW opt(model.tuning_params(), {3e-3f, 0.9f, 0.999f, 1e-8f, 0.0f});
  double loss = 1e9;
  std::size_t steps = 0;
  while (steps < 200 && loss >= 0.05) {
    ad::Tape tape;
    PromptGroup g{&task, {}, {}};
    for (std::size_t i : ten) {
      g.series.push_back(model.series(tape, w.cache->at(i)));
      g.labels.push_back(w.data->label(i, pos));
    }
    Var l = model.loss(tape, std::span<const PromptGroup>(&g, 1));
    loss = l.value()[0];
    tape.backward(l);
    opt.step();
    ++steps;
  }
  CHECK(loss < 0.05);
  CHECK(ad::fingerprint(model.lm().base()) == base_before);
}

TEST_CASE("universal step-0 loss is near the uniform label-space loss") {
  const auto& w = world();
  TrainConfig c;
  std::vector<PromptGroup> groups;
  auto model = fresh_universal(c, 5);
  ad::Tape tape;
  double uniform = 0.0;
  std::size_t rows = 0;
  for (const auto& t : w.catalog) {
    if (t.role != tasks::SplitRole::kTrain) continue;
    const std::size_t pos = w.data->task_position(t.task_id);
    auto pool = usable_samples(*w.data, *w.cache, tasks::Split::kTrain, pos, 2, 1);
    if (pool.empty()) continue;
    PromptGroup g{&t, {}, {}};
    for (std::size_t i : pool) {
      g.series.push_back(model.series(tape, w.cache->at(i)));
      g.labels.push_back(w.data->label(i, pos));
      uniform += std::log(static_cast<double>(t.n_classes()));
      ++rows;
    }
    groups.push_back(std::move(g));
  }
  const double l = model.loss(tape, groups).value()[0];
  CHECK(std::abs(l - uniform / rows) < 0.1);

  auto cfg = quick_config(Regime::kMtlUniversal, {});
  cfg.batch_size = 8;
  cfg.tasks_per_window = 1;
  auto m2 = fresh_universal(cfg, 6);
  auto out = train_universal(m2, *w.data, *w.cache, cfg, 6);
  CHECK(out.step0_loss > std::log(2.0) - 0.1);
  CHECK(out.step0_loss < std::log(6.0) + 0.1);
}

TEST_CASE("universal training is deterministic per seed") {
  const auto& w = world();
  std::vector<int> filter;
  for (const auto& t : w.catalog) {
    if (t.role == tasks::SplitRole::kTrain && filter.size() < 4) filter.push_back(t.task_id);
  }
  auto cfg = quick_config(Regime::kMtlUniversal, filter);
  auto run = [&] {
    auto m = fresh_universal(cfg, 7);
    auto out = train_universal(m, *w.data, *w.cache, cfg, 7);
    return std::pair(out, m.fingerprint());
  };
  auto [a, fa] = run();
  auto [b, fb] = run();
  REQUIRE(a.log.size() == 2);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    CHECK(a.log[e].loss == b.log[e].loss);
    CHECK(a.log[e].val_auroc == b.log[e].val_auroc);
  }
  CHECK(a.step0_loss == b.step0_loss);
  CHECK(fa == fb);
}

TEST_CASE("universal checkpoint round-trips") {
  TrainConfig c;
  auto a = fresh_universal(c, 8);
  auto b = fresh_universal(c, 9);
  CHECK(a.fingerprint() != b.fingerprint());
  ad::Archive ar;
  a.save(ar);
  b.load(ad::Archive::deserialize(ar.serialize()));
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("transfer: zero-shot purity, epoch zero and grid size") {
  const auto& w = world();
  auto cfg = quick_config(Regime::kMtlUniversal, {});
  auto model = fresh_universal(cfg, 10);
  const auto before = model.fingerprint();
  std::vector<tasks::TaskSpec> target{first_of(tasks::Family::kDecom, tasks::SplitRole::kTransfer)};
  TransferConfig zero;
  zero.mode = TransferMode::kZeroShot;
  zero.max_test_windows = 40;
  TransferSources src{nullptr, &model};
  auto zs = run_transfer(zero, cfg, src, true, *w.data, *w.cache, target, 1);
  CHECK(model.fingerprint() == before);
  REQUIRE(zs.size() == 1);
  CHECK(zs[0].regime == "universal-zero-shot");

  TransferConfig few;
  few.inits = {TransferInit::kPretrain, TransferInit::kScratch};
  few.n_samples = {4, 8};
  few.epoch_grid = {0, 1, 2};
  few.batch_size = 4;
  few.max_test_windows = 40;
  auto grid = run_transfer(few, cfg, src, true, *w.data, *w.cache, target, 1, 2);
  CHECK(grid.size() == 2 * 2 * 3);
  CHECK(model.fingerprint() == before);
  std::set<std::tuple<std::string, std::size_t, std::size_t>> cells;
  for (const auto& r : grid) {
    cells.insert({r.regime, r.n_samples, r.epochs});
    if (r.regime == "universal-few-shot-pretrain" && r.epochs == 0) {
      CHECK(r.auroc == zs[0].auroc);
      CHECK(r.n_pos == zs[0].n_pos);
    }
  }
  CHECK(cells.size() == grid.size());

  auto again = run_transfer(few, cfg, src, true, *w.data, *w.cache, target, 1, 1);
  CHECK(again == grid);
}

TEST_CASE("heads transfer: nearest head, structural error, grid") {
  const auto& w = world();
  auto cfg = quick_config(Regime::kMtlHeads, {});
  auto tt = select_train_tasks(*w.data, cfg);
  HeadsModel heads(cfg.encoder, tt, 1);
  TransferSources src{&heads, nullptr};

  const auto& decom = first_of(tasks::Family::kDecom, tasks::SplitRole::kTransfer);
  auto near = nearest_head(heads.tasks(), decom);
  REQUIRE(near);
  for (const auto& t : heads.tasks()) {
    if (t.family == tasks::Family::kDecom) {
      CHECK(std::abs(t.window_hours - decom.window_hours) >=
            std::abs(heads.tasks()[*near].window_hours - decom.window_hours));
    }
  }

  TransferConfig zero;
  zero.mode = TransferMode::kZeroShot;
  zero.max_test_windows = 40;
  std::vector<tasks::TaskSpec> one{decom};
  auto zs = run_transfer(zero, cfg, src, false, *w.data, *w.cache, one, 1);
  REQUIRE(zs.size() == 1);
  CHECK(zs[0].regime == "heads-zero-shot");

  const tasks::TaskSpec* changed = nullptr;
  for (const auto& t : w.catalog) {
    if (t.role == tasks::SplitRole::kTransfer && !nearest_head(heads.tasks(), t)) changed = &t;
  }
  REQUIRE(changed);
  std::vector<tasks::TaskSpec> bad{*changed};
  try {
    run_transfer(zero, cfg, src, false, *w.data, *w.cache, bad, 1);
    FAIL("expected a structural error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kStructural);
  }

  TransferConfig few;
  few.n_samples = {5};
  few.epoch_grid = {0, 1, 3};
  few.max_test_windows = 40;
  auto grid = run_transfer(few, cfg, src, false, *w.data, *w.cache, one, 1);
  CHECK(grid.size() == 2 * 1 * 3);
}

TEST_CASE("training prompts never mention a held-out label or parameter") {
  const auto& w = world();
  std::vector<tasks::TaskSpec> train, held;
  for (const auto& t : w.catalog) (t.role == tasks::SplitRole::kTrain ? train : held).push_back(t);
  auto prompts = training_prompts(train, *w.vocab);
  REQUIRE(!prompts.empty());
  std::set<std::string> train_labels;
  for (const auto& t : train) train_labels.insert(t.label_space.begin(), t.label_space.end());

  auto tokens_of = [&](const std::string& s) { return w.vocab->tokenize(s); };
  auto contains = [](const std::vector<int>& hay, const std::vector<int>& needle) {
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
  };
  std::vector<std::vector<int>> prompt_tokens;
  for (const auto& p : prompts) prompt_tokens.push_back(tokens_of(p));

  std::size_t checked = 0, violations = 0;
  for (const auto& t : held) {
    std::vector<std::vector<int>> needles;
    for (const auto& l : t.label_space) {
      if (!train_labels.contains(l)) needles.push_back(tokens_of(l));
    }
    if (t.family == tasks::Family::kDecom || t.family == tasks::Family::kWbm ||
        t.family == tasks::Family::kPhenotype) {
      needles.push_back(tokens_of(lm::task_description(t)));
    }
    if (t.family == tasks::Family::kPhenotype) needles.push_back(tokens_of(t.phenotype));
    for (const auto& n : needles) {
      ++checked;
      for (const auto& p : prompt_tokens) violations += contains(p, n);
    }
  }
  CHECK(checked > 0);
  CHECK(violations == 0);
}

TEST_CASE("encoder warm-up hands the multi-head encoder to the universal model") {
  const auto& w = world();
  auto c = quick_config(Regime::kMtlUniversal, {1, 2, 3});
  c.encoder_warmup_epochs = 1;
  c.base_epochs = 0;
  c.lora_epochs = 0;
  auto model = fresh_universal(c, 6);
  const auto out = train_universal(model, *w.data, *w.cache, c, 6);
  REQUIRE(out.log.size() == 1);
  CHECK(out.log[0].stage == "encoder");

  auto hc = c;
  hc.regime = Regime::kMtlHeads;
  hc.epochs = 1;
  HeadsModel heads(c.encoder, select_train_tasks(*w.data, c), 6);
  const auto ho = train_heads(heads, *w.data, *w.cache, hc, 6);
  CHECK(ho.log[0].loss == out.log[0].loss);
  CHECK(ad::fingerprint(heads.encoder().params()) == ad::fingerprint(model.encoder().params()));
}
