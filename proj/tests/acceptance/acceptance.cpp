// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"
#include "support/oracles.hpp"
#include "uniclin/ad/adamw.hpp"
#include "uniclin/ad/ops.hpp"
#include "uniclin/adapter/adapter.hpp"
#include "uniclin/error.hpp"
#include "uniclin/eval/metrics.hpp"
#include "uniclin/pipeline/pipeline.hpp"

using namespace uniclin;
using tasks::Family;
using tasks::TransferTag;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

// 1 ---------------------------------------------------------------------------

Verdict kernel_correctness() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::string worst_op;
  std::size_t cases = 0;
  for (const auto& name : testing::op_names()) {
    for (int rep = 0; rep < 50; ++rep) {
      auto c = testing::make_op_case(name, rng);
      const auto r = testing::grad_check(c.inputs, c.build, rng());
      if (r.max_rel_err > worst) {
        worst = r.max_rel_err;
        worst_op = name;
      }
      ++cases;
    }
  }
  // The restricted softmax loss used by the universal decoder.
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t rows = testing::rand_dim(rng, 1, 5), vocab = testing::rand_dim(rng, 3, 9);
    std::vector<std::vector<int>> cand(rows);
    std::vector<int> target(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<int> all(vocab);
      for (std::size_t v = 0; v < vocab; ++v) all[v] = static_cast<int>(v);
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(2 + rng() % (vocab - 1));
      cand[i] = all;
      target[i] = static_cast<int>(rng() % all.size());
    }
    const auto r = testing::grad_check(
        {testing::random_tensor({rows, vocab}, rng, 2.0f)},
        [&](ad::Tape&, std::vector<ad::Var>& v) { return train::label_space_loss(v[0], cand, target); },
        rng());
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_op = "label_space_loss";
    }
    ++cases;
  }
  const double secs = seconds_since(start);
  return {worst < 1e-3 && secs < 60.0,
          fmt("%zu cases over %zu ops, worst rel err %.2e (%s), %.1f s", cases,
              testing::op_names().size() + 1, worst, worst_op.c_str(), secs)};
}

// 2 ---------------------------------------------------------------------------

std::vector<int> partition_oracle(int n, std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::vector<int> out;
  int prev = 0;
  for (int j = 1; j < n; ++j) {
    const double exact = static_cast<double>(j) * static_cast<double>(v.size()) / n;
    const auto rank = static_cast<std::size_t>(std::ceil(exact - 1e-12));
    int b = static_cast<int>(std::floor(v[rank - 1]));
    while (b <= prev) ++b;
    out.push_back(b);
    prev = b;
  }
  return out;
}

Verdict oracle_equivalence() {
  std::mt19937_64 rng(202);
  std::size_t auroc_bad = 0;
  for (int it = 0; it < 200; ++it) {
    const std::size_t n = 2 + rng() % 99;
    std::vector<double> s(n);
    std::vector<int> y(n);
    const int levels = 1 + static_cast<int>(rng() % 12);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % levels) / levels;
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    const auto fast = eval::auroc(s, y);
    auroc_bad += !fast || *fast != testing::pairwise_auroc(s, y);
  }

  std::size_t los_bad = 0, los_checked = 0;
  auto gen = synth::GenConfig::defaults();
  for (int it = 0; it < 100; ++it) {
    gen.n_patients = 40 + rng() % 80;
    const auto cohort = synth::generate_cohort(gen, rng());
    const auto los = tasks::train_window_los_days(cohort);
    const int n = 2 + static_cast<int>(rng() % 6);
    std::set<long long> distinct;
    for (double d : los) distinct.insert(static_cast<long long>(std::floor(d)));
    if (distinct.size() < static_cast<std::size_t>(n)) {
      try {
        tasks::make_partition(n, los);
        ++los_bad;
      } catch (const Error& e) {
        los_bad += e.kind() != ErrorKind::kPartition;
      }
      continue;
    }
    ++los_checked;
    los_bad += tasks::make_partition(n, los) != partition_oracle(n, los);
  }

  std::size_t adapter_bad = 0;
  for (int it = 0; it < 100; ++it) {
    const std::size_t t = 1 + rng() % 9, k = 1 + rng() % 9, d = 1 + rng() % 9;
    const std::size_t width = k * d + rng() % 9;
    ad::Tape tape(false);
    ad::Var x = tape.constant(testing::random_tensor({t, k, d}, rng));
    ad::Var e = adapter::unfold_pad(x, width);
    const auto ev = e.value();
    const auto xv = x.value();
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < k * d; ++j) adapter_bad += ev[i * width + j] != xv[i * k * d + j];
      for (std::size_t j = k * d; j < width; ++j) adapter_bad += ev[i * width + j] != 0.0f;
    }
    const auto back = adapter::refold(e, k, d).value();
    adapter_bad += !std::equal(back.begin(), back.end(), xv.begin(), xv.end());
  }
  return {auroc_bad == 0 && los_bad == 0 && adapter_bad == 0,
          fmt("AUROC mismatches %zu/200, LOS mismatches %zu/100 (%zu partitioned), adapter "
              "mismatches %zu/100",
              auroc_bad, los_bad, los_checked, adapter_bad)};
}

// Shared desk cohort -----------------------------------------------------------

struct Desk {
  pipeline::PipelineConfig config;
  synth::Cohort cohort;
  std::vector<tasks::TaskSpec> catalog;
  std::unique_ptr<tasks::Dataset> data;
  std::unique_ptr<train::InputCache> cache;
  std::unique_ptr<lm::Vocab> vocab;
  std::vector<tasks::TaskSpec> train_tasks;
};

const Desk& desk() {
  static const Desk d = [] {
    Desk d;
    d.config = pipeline::default_config(pipeline::Scale::kDesk);
    d.cohort = synth::generate_cohort(d.config.gen, d.config.cohort_seed);
    d.catalog = tasks::build_task_catalog(d.config.catalog, tasks::train_window_los_days(d.cohort));
    d.data = std::make_unique<tasks::Dataset>(d.cohort, d.catalog);
    d.cache = std::make_unique<train::InputCache>(*d.data, train::fit_normalizer(*d.data));
    d.vocab = std::make_unique<lm::Vocab>(lm::Vocab::build(d.catalog, d.config.gen));
    d.train_tasks = train::select_train_tasks(*d.data, d.config.train);
    return d;
  }();
  return d;
}

// 3 ---------------------------------------------------------------------------

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](float x, float y) {
           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
         });
}

Verdict structural_invariants() {
  const auto& d = desk();
  const auto& tc = d.config.train;
  std::mt19937_64 rng(303);

  // Zero-initialized LoRA: logits bitwise equal with and without it.
  std::size_t lora_bad = 0;
  {
    train::UniversalModel model(tc.encoder, tc.adapter, tc.lm, *d.vocab, 31);
    const auto test = train::usable_samples(*d.data, *d.cache, tasks::Split::kTest, std::nullopt, 8, 1);
    for (std::size_t i = 0; i < d.train_tasks.size(); i += 7) {
      for (std::size_t s : test) {
        auto run = [&](bool lora) {
          model.lm().set_lora_enabled(lora);
          ad::Tape tape(false);
          auto series = model.series(tape, d.cache->at(s));
          auto f = lm::assemble_prompt(model.segments(d.train_tasks[i], series, std::nullopt),
                                       model.vocab(), model.lm().token_table(tape), false);
          auto v = model.lm().logits(tape, f.embeds).value();
          return std::vector<float>(v.begin(), v.end());
        };
        lora_bad += !same_bits(run(true), run(false));
      }
    }
  }

  // Frozen base after 100 steps of LoRA-stage training; loss gradient only at
  // label positions.
  std::size_t frozen_bad = 0, mask_bad = 0;
  {
    train::UniversalModel model(tc.encoder, tc.adapter, tc.lm, *d.vocab, 32);
    model.lm().set_base_trainable(false);
    model.lm().set_lora_enabled(true);
    const auto base_before = ad::fingerprint(model.lm().base());
    const auto lora_before = ad::fingerprint(model.lm().lora());
    auto params = model.tuning_params();
    ad::AdamW opt(params, {1e-2f, 0.9f, 0.999f, 1e-8f, 0.0f});
    const auto pool = train::usable_samples(*d.data, *d.cache, tasks::Split::kTrain, std::nullopt, 0, 2);
    for (int step = 0; step < 100; ++step) {
      const auto& task = d.train_tasks[rng() % d.train_tasks.size()];
      const std::size_t pos = d.data->task_position(task.task_id);
      train::PromptGroup grp{&task, {}, {}};
      ad::Tape tape;
      while (grp.labels.size() < 4) {
        const std::size_t s = pool[rng() % pool.size()];
        const int y = d.data->label(s, pos);
        if (y < 0) continue;
        grp.series.push_back(model.series(tape, d.cache->at(s)));
        grp.labels.push_back(y);
      }
      tape.backward(model.loss(tape, std::span(&grp, 1)));
      opt.step();
    }
    frozen_bad += ad::fingerprint(model.lm().base()) != base_before;
    frozen_bad += ad::fingerprint(model.lm().lora()) == lora_before;

    for (int probe = 0; probe < 20; ++probe) {
      const auto& task = d.train_tasks[rng() % d.train_tasks.size()];
      ad::Tape tape;
      auto series = model.series(tape, d.cache->at(pool[rng() % pool.size()]));
      const std::string gt = task.label_space[rng() % task.label_space.size()];
      auto f = lm::assemble_prompt(model.segments(task, series, gt), model.vocab(),
                                   model.lm().token_table(tape), true);
      ad::Var lg = model.lm().logits(tape, f.embeds);
      const ad::Target target{f.label_positions.at(0),
                              static_cast<std::size_t>(model.vocab().id(gt))};
      tape.backward(ad::cross_entropy_at(lg, std::span(&target, 1)));
      const auto g = tape.grad_of(lg);
      const std::size_t V = model.vocab().size();
      for (std::size_t p = 0; p < f.length(); ++p) {
        if (p == f.label_positions[0]) continue;
        for (std::size_t j = 0; j < V; ++j) mask_bad += g[p * V + j] != 0.0f;
      }
    }
  }

  // Every admission sits in one split; labels monotone in the window size on
  // the full task grid.
  std::size_t leak = 0, mono = 0;
  {
    const auto full = tasks::build_task_catalog(tasks::CatalogConfig::paper(),
                                                tasks::train_window_los_days(d.cohort));
    tasks::Dataset ds(d.cohort, full);
    std::map<std::int64_t, std::set<int>> splits;
    for (const auto& s : ds.samples()) {
      if (s.split != tasks::Split::kPurged) splits[s.index.hadm_id].insert(static_cast<int>(s.split));
    }
    for (const auto& [h, set] : splits) leak += set.size() > 1;
    const auto split = tasks::split_by_time(d.cohort);
    std::map<std::int64_t, int> owner;
    for (const auto* part : {&split.train, &split.val, &split.test}) {
      const int id = static_cast<int>(part - &split.train);
      for (const auto& s : *part) {
        auto [it, fresh] = owner.emplace(s.hadm_id, id);
        leak += !fresh && it->second != id;
      }
    }

    std::map<std::string, std::vector<std::size_t>> chains;
    for (std::size_t t = 0; t < full.size(); ++t) {
      if (full[t].family == Family::kDecom) chains["decom"].push_back(t);
      if (full[t].family == Family::kWbm) chains["wbm " + full[t].indicator].push_back(t);
    }
    for (auto& [key, chain] : chains) {
      std::sort(chain.begin(), chain.end(),
                [&](std::size_t a, std::size_t b) { return full[a].window_hours < full[b].window_hours; });
      for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t a = 0; a + 1 < chain.size(); ++a) {
          const auto ya = ds.label(i, chain[a]);
          for (std::size_t b = a + 1; b < chain.size(); ++b) {
            const auto yb = ds.label(i, chain[b]);
            if (ya != tasks::kUndefined && yb != tasks::kUndefined) mono += ya > yb;
            if (ya == 1) mono += yb != 1;
          }
        }
      }
    }
  }
  const std::size_t total = lora_bad + frozen_bad + mask_bad + leak + mono;
  return {total == 0, fmt("violations: LoRA identity %zu, frozen base %zu, off-label gradient %zu, "
                          "admission leakage %zu, window monotonicity %zu",
                          lora_bad, frozen_bad, mask_bad, leak, mono)};
}

// 4 ---------------------------------------------------------------------------

Verdict catalog_fidelity() {
  const auto cat = tasks::build_task_catalog(tasks::CatalogConfig::paper());
  std::map<Family, int> n;
  for (const auto& t : cat) ++n[t.family];
  std::vector<double> engineered;
  const std::vector<std::pair<double, double>> blocks = {
      {0.2, 1.6}, {1.7, 3.5}, {3.6, 5.9}, {6.0, 9.8}, {9.9, 16.4}, {16.5, 40.0}};
  for (auto [lo, hi] : blocks) {
    for (int i = 0; i < 100; ++i) engineered.push_back(lo + (hi - lo) * i / 99.0);
  }
  const auto b6 = tasks::make_partition(6, engineered);
  const bool pass = cat.size() == 166 && n[Family::kMor] == 1 && n[Family::kDecom] == 40 &&
                    n[Family::kLos] == 6 && n[Family::kPhenotype] == 14 && n[Family::kWbm] == 105 &&
                    b6 == std::vector<int>{1, 3, 5, 9, 16} &&
                    cat[38].boundaries == std::vector<int>{1, 3, 5, 9, 16};
  std::string bs;
  for (int b : b6) bs += (bs.empty() ? "" : ",") + std::to_string(b);
  return {pass, fmt("%zu tasks: MOR %d, Decom %d, LOS %d, Phenotype %d, WBM %d; 6-class boundaries "
                    "[%s]; note: the summary table lists 135 WBM tasks, the enumeration gives 105",
                    cat.size(), n[Family::kMor], n[Family::kDecom], n[Family::kLos],
                    n[Family::kPhenotype], n[Family::kWbm], bs.c_str())};
}

// 5-8: trained models per seed ---------------------------------------------------

struct SeedRuns {
  std::map<std::string, double> heads_mean;  // encoder kind -> test mean AUROC
  double heads_seconds = 0.0;
  std::unique_ptr<train::HeadsModel> warp_heads;
  std::vector<eval::TaskResult> warp_results;
  std::unique_ptr<train::UniversalModel> universal;
  std::vector<eval::TaskResult> universal_results;
  double universal_seconds = 0.0;
};

std::vector<std::size_t> test_windows(std::uint64_t seed) {
  const auto& d = desk();
  return train::usable_samples(*d.data, *d.cache, tasks::Split::kTest, std::nullopt,
                               d.config.train.max_test_windows, seed);
}

SeedRuns& seed_runs(std::uint64_t seed, bool with_universal) {
  static std::map<std::uint64_t, SeedRuns> cache;
  auto& r = cache[seed];
  const auto& d = desk();
  const auto test = test_windows(seed);
  if (r.heads_mean.empty()) {
    for (auto kind : enc::kAllEncoderKinds) {
      const auto start = Clock::now();
      auto cfg = d.config.train;
      cfg.regime = train::Regime::kMtlHeads;
      cfg.encoder.kind = kind;
      auto model = std::make_unique<train::HeadsModel>(cfg.encoder, d.train_tasks, seed);
      train::train_heads(*model, *d.data, *d.cache, cfg, seed);
      auto res = train::evaluate_heads(*model, *d.data, *d.cache, test);
      r.heads_mean[enc::to_string(kind)] = eval::mean_auroc(res).value_or(std::nan(""));
      r.heads_seconds += seconds_since(start);
      if (kind == enc::EncoderKind::kWarpformer) {
        r.warp_heads = std::move(model);
        r.warp_results = std::move(res);
      }
      std::printf("  seed %llu heads %-12s %.4f\n", static_cast<unsigned long long>(seed),
                  enc::to_string(kind).c_str(), r.heads_mean[enc::to_string(kind)]);
      std::fflush(stdout);
    }
  }
  if (with_universal && !r.universal) {
    const auto start = Clock::now();
    const auto& cfg = d.config.train;
    r.universal = std::make_unique<train::UniversalModel>(cfg.encoder, cfg.adapter, cfg.lm, *d.vocab, seed);
    train::train_universal(*r.universal, *d.data, *d.cache, cfg, seed);
    r.universal_results = train::evaluate_universal(*r.universal, *d.data, *d.cache, d.train_tasks, test);
    r.universal_seconds = seconds_since(start);
    std::printf("  seed %llu universal %.4f (%.0f s)\n", static_cast<unsigned long long>(seed),
                eval::mean_auroc(r.universal_results).value_or(std::nan("")), r.universal_seconds);
    std::fflush(stdout);
  }
  return r;
}

const std::vector<std::uint64_t>& seeds() { return desk().config.train.seeds; }

// 5 ---------------------------------------------------------------------------

Verdict encoder_ordering() {
  std::map<std::string, std::vector<double>> per_kind;
  double secs = 0.0;
  for (auto seed : seeds()) {
    auto& r = seed_runs(seed, false);
    for (const auto& [k, v] : r.heads_mean) per_kind[k].push_back(v);
    secs += r.heads_seconds;
  }
  const double warp = mean(per_kind["warpformer"]), seft = mean(per_kind["seft"]);
  bool pass = warp - seft >= 0.03 && secs <= 15 * 60;
  std::string table;
  for (auto kind : enc::kAllEncoderKinds) {
    const auto name = enc::to_string(kind);
    const double m = mean(per_kind[name]);
    table += fmt(" %s %.4f", name.c_str(), m);
    if (kind != enc::EncoderKind::kWarpformer && kind != enc::EncoderKind::kSeft) {
      pass = pass && warp >= m && m >= seft;
    }
  }
  return {pass, fmt("mean over %zu seeds:%s; Warpformer - SEFT %.4f; %.0f s", seeds().size(),
                    table.c_str(), warp - seft, secs)};
}

// 6 ---------------------------------------------------------------------------

// Ten train tasks spread over the catalog, one per stride.
std::vector<tasks::TaskSpec> stl_subset() {
  const auto& tt = desk().train_tasks;
  std::vector<tasks::TaskSpec> out;
  for (std::size_t i = 0; i < 10; ++i) out.push_back(tt[i * tt.size() / 10]);
  return out;
}

Verdict universal_vs_heads() {
  const auto& d = desk();
  std::vector<double> uni, heads, stl, mtl_sub;
  for (auto seed : seeds()) {
    auto& r = seed_runs(seed, true);
    uni.push_back(eval::mean_auroc(r.universal_results).value_or(std::nan("")));
    heads.push_back(eval::mean_auroc(r.warp_results).value_or(std::nan("")));
    const auto test = test_windows(seed);
    std::vector<eval::TaskResult> stl_res, mtl_res;
    for (const auto& task : stl_subset()) {
      auto cfg = d.config.train;
      cfg.regime = train::Regime::kStl;
      cfg.task_filter = {task.task_id};
      std::vector<tasks::TaskSpec> one{task};
      train::HeadsModel m(cfg.encoder, one, seed);
      train::train_heads(m, *d.data, *d.cache, cfg, seed);
      auto res = train::evaluate_heads(m, *d.data, *d.cache, test);
      stl_res.insert(stl_res.end(), res.begin(), res.end());
      for (const auto& x : r.warp_results) {
        if (x.task_id == task.task_id) mtl_res.push_back(x);
      }
    }
    stl.push_back(eval::mean_auroc(stl_res).value_or(std::nan("")));
    mtl_sub.push_back(eval::mean_auroc(mtl_res).value_or(std::nan("")));
    std::printf("  seed %llu STL subset %.4f, MTL subset %.4f\n",
                static_cast<unsigned long long>(seed), stl.back(), mtl_sub.back());
    std::fflush(stdout);
  }
  const double gap_u = mean(uni) - mean(heads), gap_s = mean(mtl_sub) - mean(stl);
  return {std::abs(gap_u) <= 0.05 && std::abs(gap_s) <= 0.05,
          fmt("universal %.4f vs heads %.4f (gap %+.4f); MTL %.4f vs STL %.4f on 10 tasks (gap "
              "%+.4f)",
              mean(uni), mean(heads), gap_u, mean(mtl_sub), mean(stl), gap_s)};
}

// 7 ---------------------------------------------------------------------------

std::vector<tasks::TaskSpec> transfer_tasks(Family f, TransferTag tag) {
  std::vector<tasks::TaskSpec> out;
  for (const auto& t : desk().catalog) {
    if (t.role == tasks::SplitRole::kTransfer && t.family == f && t.tag == tag) out.push_back(t);
  }
  return out;
}

std::optional<double> cell(const std::vector<eval::TaskResult>& rs, int task, const std::string& regime,
                           std::size_t n, std::size_t epochs) {
  for (const auto& r : rs) {
    if (r.task_id == task && r.regime == regime && r.n_samples == n && r.epochs == epochs) return r.auroc;
  }
  return std::nullopt;
}

Verdict parameter_transfer() {
  const auto& d = desk();
  const auto targets = transfer_tasks(Family::kDecom, TransferTag::kParamInDomain);
  std::size_t held = 0, total = 0, lost_scratch = 0, lost_shallow = 0;
  std::vector<double> zs_all, scratch_best, shallow_best;
  for (auto seed : seeds()) {
    auto& r = seed_runs(seed, true);
    train::TransferConfig zero = d.config.transfer;
    zero.mode = train::TransferMode::kZeroShot;
    const auto zs = train::run_transfer(zero, d.config.train, {nullptr, r.universal.get()}, true,
                                        *d.data, *d.cache, targets, seed);
    train::TransferConfig few = d.config.transfer;
    few.mode = train::TransferMode::kFewShot;
    few.inits = {train::TransferInit::kPretrain, train::TransferInit::kScratch};
    few.n_samples = {100, 200};
    auto heads_cfg = d.config.train;
    heads_cfg.regime = train::Regime::kMtlHeads;
    const auto grid = train::run_transfer(few, heads_cfg, {r.warp_heads.get(), nullptr}, false,
                                          *d.data, *d.cache, targets, seed);
    for (const auto& t : targets) {
      const auto z = cell(zs, t.task_id, "universal-zero-shot", 0, 0);
      if (!z) continue;
      bool beats_scratch = true, beats_shallow = true;
      double sb = 0.0;
      for (std::size_t e : few.epoch_grid) {
        const auto s = cell(grid, t.task_id, "heads-few-shot-scratch", 100, e);
        if (s) {
          beats_scratch = beats_scratch && *z >= *s;
          sb = std::max(sb, *s);
        }
      }
      double pb = 0.0;
      for (std::size_t n : {100, 200}) {
        const auto p = cell(grid, t.task_id, "heads-few-shot-pretrain", n, 1);
        if (p) {
          beats_shallow = beats_shallow && *z >= *p;
          pb = std::max(pb, *p);
        }
      }
      zs_all.push_back(*z);
      scratch_best.push_back(sb);
      shallow_best.push_back(pb);
      held += beats_scratch && beats_shallow;
      lost_scratch += !beats_scratch;
      lost_shallow += !beats_shallow;
      ++total;
    }
  }
  const double frac = total ? static_cast<double>(held) / static_cast<double>(total) : 0.0;
  return {total > 0 && frac >= 0.8,
          fmt("holds on %zu/%zu task-seed pairs (%.0f%%); means: zero-shot %.4f, best scratch@100 "
              "%.4f, best shallow pretrain %.4f; below scratch on %zu, below shallow pretrain on %zu",
              held, total, 100.0 * frac, mean(zs_all), mean(scratch_best), mean(shallow_best),
              lost_scratch, lost_shallow)};
}

// 8 ---------------------------------------------------------------------------

Verdict label_choice() {
  const auto& d = desk();
  const auto targets = transfer_tasks(Family::kPhenotype, TransferTag::kLabelChoice);
  std::vector<double> uni, heads;
  const std::size_t deep = d.config.transfer.epoch_grid.back();
  for (auto seed : seeds()) {
    auto& r = seed_runs(seed, true);
    train::TransferConfig few = d.config.transfer;
    few.mode = train::TransferMode::kFewShot;
    few.inits = {train::TransferInit::kPretrain};
    few.n_samples = {100};
    const auto u = train::run_transfer(few, d.config.train, {nullptr, r.universal.get()}, true,
                                       *d.data, *d.cache, targets, seed);
    few.n_samples = {400};
    auto heads_cfg = d.config.train;
    heads_cfg.regime = train::Regime::kMtlHeads;
    const auto h = train::run_transfer(few, heads_cfg, {r.warp_heads.get(), nullptr}, false, *d.data,
                                       *d.cache, targets, seed);
    for (const auto& t : targets) {
      const auto a = cell(u, t.task_id, "universal-few-shot-pretrain", 100, deep);
      const auto b = cell(h, t.task_id, "heads-few-shot-pretrain", 400, deep);
      if (a && b) {
        uni.push_back(*a);
        heads.push_back(*b);
      }
    }
  }
  const double gap = mean(uni) - mean(heads);
  return {!uni.empty() && gap >= -0.02,
          fmt("%zu task-seed pairs; universal@100 %.4f vs pretrain heads@400 %.4f at %zu epochs "
              "(gap %+.4f)",
              uni.size(), mean(uni), mean(heads), deep, gap)};
}

// 9 ---------------------------------------------------------------------------

Verdict reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "uniclin-acceptance-repro";
  fs::remove_all(dir);
  pipeline::Context ctx{dir};
  auto c = pipeline::default_config(pipeline::Scale::kDesk);
  c.gen.n_patients = 200;
  c.train.seeds = {4};
  c.train.epochs = 2;
  c.train.encoder_warmup_epochs = 1;
  c.train.base_epochs = 1;
  c.train.lora_epochs = 2;
  c.transfer.n_samples = {50};
  c.transfer.epoch_grid = {1, 2};
  pipeline::cmd_gen(c, ctx);
  for (const auto& t : pipeline::cmd_tasks(c, ctx)) {
    if (t.role == tasks::SplitRole::kTransfer && t.task_id % 4 == 0) c.transfer.task_filter.push_back(t.task_id);
  }
  std::vector<fs::path> manifests;
  for (auto regime : {train::Regime::kMtlUniversal, train::Regime::kMtlHeads}) {
    c.train.regime = regime;
    for (const auto& p : pipeline::cmd_train(c, ctx)) manifests.push_back(p.manifest());
    for (const auto& p : pipeline::cmd_transfer(c, ctx)) manifests.push_back(p.manifest());
  }
  std::size_t identical = 0, diffs = 0;
  for (const auto& m : manifests) {
    const auto r = pipeline::cmd_repro(m, ctx);
    identical += r.byte_identical;
    diffs += r.metric_diffs;
  }
  return {identical == manifests.size(),
          fmt("%zu/%zu runs (universal and heads, train and transfer) byte-identical, %zu differing "
              "lines",
              identical, manifests.size(), diffs)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, kernel_correctness}, {2, oracle_equivalence}, {3, structural_invariants},
      {4, catalog_fidelity},   {5, encoder_ordering},   {6, universal_vs_heads},
      {7, parameter_transfer}, {8, label_choice},       {9, reproducibility}};
  int failed = 0;
  std::vector<std::string> lines;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = Clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    lines.push_back(fmt("criterion %d: %s  %s [%.0f s]", id, v.pass ? "PASS" : "FAIL",
                        v.detail.c_str(), seconds_since(start)));
    std::printf("%s\n", lines.back().c_str());
    std::fflush(stdout);
  }
  std::printf("\nsummary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  return failed;
}
