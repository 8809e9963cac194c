#include "uniclin/pipeline/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "uniclin/error.hpp"
#include "uniclin/hash.hpp"
#include "uniclin/tasks/dataset.hpp"

namespace uniclin::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kConfigSchema = "uniclin.pipeline";
constexpr const char* kManifestSchema = "uniclin.run";
constexpr const char* kMetricsSchema = "uniclin.metrics";

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "missing file: " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + p.parent_path().string() + ": " + ec.message());
  std::ofstream f(p, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot write " + p.string());
  f << text;
  if (!f) fail(ErrorKind::kIo, "write failed: " + p.string());
}

json parse_json(const std::string& text, const fs::path& origin) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, origin.string() + ": " + e.what());
  }
}

std::string hex_hash(std::string_view bytes) { return hex64(fnv1a(bytes)); }

json report_json(const eval::ReportOptions& r) { return {{"svg", r.svg}}; }

json epoch_json(const train::EpochLog& e) {
  return {{"stage", e.stage},
          {"epoch", e.epoch},
          {"loss", e.loss},
          {"val_auroc", e.val_auroc ? json(*e.val_auroc) : json(nullptr)}};
}

train::EpochLog epoch_from_json(const json& j) {
  train::EpochLog e;
  e.stage = j.at("stage").get<std::string>();
  e.epoch = j.at("epoch").get<std::size_t>();
  e.loss = j.at("loss").get<double>();
  if (!j.at("val_auroc").is_null()) e.val_auroc = j.at("val_auroc").get<double>();
  return e;
}

// Everything a train run depends on; seeds are listed per run, not here.
json train_key(const PipelineConfig& c, std::uint64_t seed) {
  json t = train::to_json(c.train);
  t.erase("seeds");
  return {{"gen", synth::to_json(c.gen)},
          {"cohort_seed", c.cohort_seed},
          {"catalog", tasks::to_json(c.catalog)},
          {"train", t},
          {"seed", seed}};
}

json transfer_key(const PipelineConfig& c, std::uint64_t seed) {
  json k = train_key(c, seed);
  k["transfer"] = train::to_json(c.transfer);
  return k;
}

std::string run_id_of(const char* command, const json& key) {
  return hex_hash(std::string(command) + key.dump());
}

// Cohort, catalog and encoder inputs as produced by gen and tasks.
struct Workspace {
  synth::Cohort cohort;
  std::string cohort_hash;
  std::vector<tasks::TaskSpec> catalog;
  std::string catalog_hash;
  std::unique_ptr<tasks::Dataset> data;
  std::unique_ptr<train::InputCache> cache;
};

std::vector<tasks::TaskSpec> build_catalog(const PipelineConfig& c, const synth::Cohort& cohort) {
  const auto los = tasks::train_window_los_days(cohort);
  return tasks::build_task_catalog(c.catalog, los);
}

Workspace open_workspace(const PipelineConfig& c, const Context& ctx) {
  Workspace w;
  const fs::path cohort_path = ctx.out / c.cohort_file;
  const std::string text = read_text(cohort_path);
  w.cohort = synth::from_ndjson(text);
  w.cohort_hash = hex_hash(text);
  if (!(w.cohort.config == c.gen) || w.cohort.seed != c.cohort_seed) {
    fail(ErrorKind::kSchema, cohort_path.string() + " was generated by another config; rerun gen");
  }
  const fs::path catalog_path = ctx.out / c.catalog_file;
  const json file = parse_json(read_text(catalog_path), catalog_path);
  w.catalog = tasks::catalog_from_json(file.at("catalog"));
  if (w.catalog != build_catalog(c, w.cohort)) {
    fail(ErrorKind::kSchema, catalog_path.string() + " does not match the config; rerun tasks");
  }
  w.catalog_hash = hex64(tasks::catalog_hash(w.catalog));
  w.data = std::make_unique<tasks::Dataset>(w.cohort, w.catalog);
  w.cache = std::make_unique<train::InputCache>(*w.data, train::fit_normalizer(*w.data));
  return w;
}

// Returns true when `dir` already holds a finished run for `key`.
bool finished(const RunPaths& paths, const json& key, const Context& ctx) {
  if (!fs::exists(paths.manifest())) return false;
  const json m = parse_json(read_text(paths.manifest()), paths.manifest());
  if (m.value("key", json()) != key) {
    fail(ErrorKind::kSchema, "config hash collision in " + paths.dir.string());
  }
  return !ctx.force && fs::exists(paths.metrics());
}

std::vector<std::uint64_t> seeds_of(const PipelineConfig& c) {
  if (c.train.seeds.empty()) fail(ErrorKind::kConfig, "no seeds configured");
  return c.train.seeds;
}

bool is_universal(const PipelineConfig& c) { return c.train.regime == train::Regime::kMtlUniversal; }

lm::Vocab vocab_of(const PipelineConfig& c, const Workspace& w) {
  return lm::Vocab::build(w.catalog, c.gen);
}

std::vector<eval::TaskResult> stamp(std::vector<eval::TaskResult> rs, const std::string& regime,
                                    std::uint64_t seed) {
  for (auto& r : rs) {
    r.regime = regime;
    r.seed = seed;
  }
  return rs;
}

void write_manifest(const RunPaths& paths, const RunManifest& m, const json& key) {
  json j = to_json(m);
  j["key"] = key;
  write_text(paths.manifest(), j.dump(2) + "\n");
}

void log_line(const std::string& s) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cout << s << std::endl;
}

// Runs fn(i) for i < n on up to `threads` workers; rethrows the first error
// in index order.
template <typename Fn>
void for_each_index(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::max<std::size_t>(1, std::min(threads, n));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

RunPaths train_one(const PipelineConfig& c, const Context& ctx, const Workspace& w,
                   std::uint64_t seed) {
  const json key = train_key(c, seed);
  const std::string id = run_id_of("train", key);
  RunPaths paths{ctx.out / c.runs_dir / id};
  if (finished(paths, key, ctx)) {
    log_line("train seed " + std::to_string(seed) + ": up to date (" + id + ")");
    return paths;
  }
  const auto start = std::chrono::steady_clock::now();
  const auto train_tasks = train::select_train_tasks(*w.data, c.train);
  const auto test = train::usable_samples(*w.data, *w.cache, tasks::Split::kTest, std::nullopt,
                                          c.train.max_test_windows, seed);
  const std::string chash = hex64(config_hash(c));
  ad::Archive archive;
  train::TrainOutcome outcome;
  std::vector<eval::TaskResult> results;
  if (is_universal(c)) {
    train::UniversalModel model(c.train.encoder, c.train.adapter, c.train.lm, vocab_of(c, w), seed);
    outcome = train::train_universal(model, *w.data, *w.cache, c.train, seed);
    results = train::evaluate_universal(model, *w.data, *w.cache, train_tasks, test,
                                        c.train.vocabulary_wide);
    model.save(archive);
  } else {
    train::HeadsModel model(c.train.encoder, train_tasks, seed);
    outcome = train::train_heads(model, *w.data, *w.cache, c.train, seed);
    results = train::evaluate_heads(model, *w.data, *w.cache, test);
    model.save(archive);
  }
  results = stamp(std::move(results), train::to_string(c.train.regime), seed);
  archive.manifest["schema_version"] = RunManifest::kVersion;
  archive.manifest["config_hash"] = chash;
  archive.manifest["run_id"] = id;
  const std::string bytes = archive.serialize();
  write_text(paths.checkpoint(), bytes);
  const std::string metrics = metrics_file_text(results, chash);
  write_text(paths.metrics(), metrics);

  RunManifest m;
  m.command = "train";
  m.run_id = id;
  m.config_hash = chash;
  m.config = to_json(c);
  m.seed = seed;
  m.catalog_hash = w.catalog_hash;
  m.cohort_hash = w.cohort_hash;
  m.epochs = outcome.log;
  m.step0_loss = outcome.step0_loss;
  m.best_epoch = outcome.best_epoch;
  m.best_val_auroc = outcome.best_val_auroc;
  m.checkpoints = {hex_hash(bytes)};
  m.metrics_hash = hex_hash(metrics);
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(paths, m, key);
  const auto mean = eval::mean_auroc(results);
  log_line("train seed " + std::to_string(seed) + ": test mean AUROC " +
           (mean ? std::to_string(*mean) : std::string("undefined")) + " (" + id + ")");
  return paths;
}

RunPaths transfer_one(const PipelineConfig& c, const Context& ctx, const Workspace& w,
                      std::uint64_t seed) {
  const json key = transfer_key(c, seed);
  const std::string id = run_id_of("transfer", key);
  RunPaths paths{ctx.out / c.runs_dir / id};
  if (finished(paths, key, ctx)) {
    log_line("transfer seed " + std::to_string(seed) + ": up to date (" + id + ")");
    return paths;
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<tasks::TaskSpec> targets;
  for (const auto& t : w.catalog) {
    if (t.role != tasks::SplitRole::kTransfer) continue;
    const auto& f = c.transfer.task_filter;
    if (!f.empty() && std::find(f.begin(), f.end(), t.task_id) == f.end()) continue;
    targets.push_back(t);
  }
  if (targets.empty()) fail(ErrorKind::kConfig, "no transfer tasks selected");

  const std::string source_id = train_run_id(c, seed);
  const RunPaths source{ctx.out / c.runs_dir / source_id};
  const bool needs_source =
      c.transfer.mode == train::TransferMode::kZeroShot ||
      std::find(c.transfer.inits.begin(), c.transfer.inits.end(), train::TransferInit::kPretrain) !=
          c.transfer.inits.end();
  std::optional<ad::Archive> archive;
  std::string source_ckpt;
  if (fs::exists(source.checkpoint())) {
    const std::string bytes = read_text(source.checkpoint());
    source_ckpt = hex_hash(bytes);
    archive = ad::Archive::deserialize(bytes);
  } else if (needs_source) {
    fail(ErrorKind::kIo, "missing file: " + source.checkpoint().string() + " (run train first)");
  }

  std::vector<eval::TaskResult> results;
  const auto train_tasks = train::select_train_tasks(*w.data, c.train);
  if (is_universal(c)) {
    train::UniversalModel model(c.train.encoder, c.train.adapter, c.train.lm, vocab_of(c, w), seed);
    if (archive) model.load(*archive);
    train::TransferSources src{nullptr, &model};
    results = train::run_transfer(c.transfer, c.train, src, true, *w.data, *w.cache, targets, seed,
                                  ctx.threads);
  } else {
    train::HeadsModel model(c.train.encoder, train_tasks, seed);
    if (archive) model.load(*archive);
    train::TransferSources src{&model, nullptr};
    results = train::run_transfer(c.transfer, c.train, src, false, *w.data, *w.cache, targets, seed,
                                  ctx.threads);
  }
  const std::string chash = hex64(config_hash(c));
  const std::string metrics = metrics_file_text(results, chash);
  write_text(paths.metrics(), metrics);
  RunManifest m;
  m.command = "transfer";
  m.run_id = id;
  m.config_hash = chash;
  m.config = to_json(c);
  m.seed = seed;
  m.catalog_hash = w.catalog_hash;
  m.cohort_hash = w.cohort_hash;
  if (!source_ckpt.empty()) {
    m.checkpoints = {source_ckpt};
    m.source_run = source_id;
  }
  m.metrics_hash = hex_hash(metrics);
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(paths, m, key);
  log_line("transfer seed " + std::to_string(seed) + ": " + std::to_string(results.size()) +
           " results (" + id + ")");
  return paths;
}

}  // namespace

std::string to_string(Scale s) { return s == Scale::kDesk ? "desk" : "paper"; }

Scale scale_from_string(const std::string& s) {
  if (s == "desk") return Scale::kDesk;
  if (s == "paper") return Scale::kPaper;
  fail(ErrorKind::kConfig, "unknown scale: " + s + " (expected desk or paper)");
}

bool PipelineConfig::operator==(const PipelineConfig& o) const { return to_json(*this) == to_json(o); }

PipelineConfig default_config(Scale scale) {
  PipelineConfig c;
  c.scale = scale;
  c.gen = synth::GenConfig::defaults();
  if (scale == Scale::kDesk) {
    c.gen.n_patients = 1000;
    c.catalog = tasks::CatalogConfig::desk(3);
    c.train.regime = train::Regime::kMtlUniversal;
    c.train.base_epochs = 4;
    c.train.encoder_warmup_epochs = 10;
    c.transfer.n_samples = {100, 200, 400};
    c.transfer.max_test_windows = 400;
  } else {
    c.catalog = tasks::CatalogConfig::paper();
    c.train.regime = train::Regime::kMtlUniversal;
    c.train.lr = 3e-4f;
    c.train.base_lr = 3e-4f;
    c.train.batch_size = 240;
    c.train.lm.d_model = 4096;
    c.train.lm.heads = 32;
    c.train.lm.lora_rank = 32;
    c.train.lm.lora_alpha = 64.0f;
    c.train.adapter.d_lm = 4096;
    c.transfer.lr = 3e-4f;
  }
  return c;
}

json to_json(const PipelineConfig& c) {
  return {{"schema", kConfigSchema},
          {"version", PipelineConfig::kVersion},
          {"scale", to_string(c.scale)},
          {"cohort_seed", c.cohort_seed},
          {"gen", synth::to_json(c.gen)},
          {"catalog", tasks::to_json(c.catalog)},
          {"train", train::to_json(c.train)},
          {"transfer", train::to_json(c.transfer)},
          {"report", report_json(c.report)},
          {"paths",
           {{"cohort", c.cohort_file},
            {"catalog", c.catalog_file},
            {"dataset", c.dataset_file},
            {"runs", c.runs_dir},
            {"report", c.report_dir}}}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorKind::kConfig, "pipeline config must be a JSON object");
  if (j.contains("schema") && j.at("schema") != kConfigSchema) {
    fail(ErrorKind::kSchema, "not a pipeline config");
  }
  if (j.contains("version") && j.at("version").get<int>() != PipelineConfig::kVersion) {
    fail(ErrorKind::kSchema, "pipeline config version mismatch");
  }
  try {
    PipelineConfig c = default_config(scale_from_string(j.value("scale", std::string("desk"))));
    for (const auto& [key, v] : j.items()) {
      if (key == "schema" || key == "version" || key == "scale") continue;
      else if (key == "cohort_seed") c.cohort_seed = v.get<std::uint64_t>();
      else if (key == "gen") c.gen = synth::gen_config_from_json(v);
      else if (key == "catalog") c.catalog = tasks::catalog_config_from_json(v);
      else if (key == "train") c.train = train::train_config_from_json(v);
      else if (key == "transfer") c.transfer = train::transfer_config_from_json(v);
      else if (key == "report") {
        for (const auto& [rk, rv] : v.items()) {
          if (rk == "svg") c.report.svg = rv.get<bool>();
          else fail(ErrorKind::kConfig, "unknown report key: " + rk);
        }
      } else if (key == "paths") {
        for (const auto& [pk, pv] : v.items()) {
          const auto s = pv.get<std::string>();
          if (pk == "cohort") c.cohort_file = s;
          else if (pk == "catalog") c.catalog_file = s;
          else if (pk == "dataset") c.dataset_file = s;
          else if (pk == "runs") c.runs_dir = s;
          else if (pk == "report") c.report_dir = s;
          else fail(ErrorKind::kConfig, "unknown paths key: " + pk);
        }
      } else {
        fail(ErrorKind::kConfig, "unknown pipeline key: " + key);
      }
    }
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("pipeline config: ") + e.what());
  }
}

PipelineConfig load_config(const fs::path& path) {
  return pipeline_config_from_json(parse_json(read_text(path), path));
}

std::uint64_t config_hash(const PipelineConfig& c) { return fnv1a(to_json(c).dump()); }

json to_json(const RunManifest& m) {
  json epochs = json::array();
  for (const auto& e : m.epochs) epochs.push_back(epoch_json(e));
  return {{"schema", kManifestSchema},
          {"version", RunManifest::kVersion},
          {"command", m.command},
          {"run_id", m.run_id},
          {"config_hash", m.config_hash},
          {"config", m.config},
          {"seed", m.seed},
          {"catalog_hash", m.catalog_hash},
          {"cohort_hash", m.cohort_hash},
          {"epochs", epochs},
          {"step0_loss", m.step0_loss},
          {"best_epoch", m.best_epoch},
          {"best_val_auroc", m.best_val_auroc ? json(*m.best_val_auroc) : json(nullptr)},
          {"wall_seconds", m.wall_seconds},
          {"checkpoints", m.checkpoints},
          {"source_run", m.source_run},
          {"metrics_hash", m.metrics_hash}};
}

RunManifest manifest_from_json(const json& j) {
  if (j.value("schema", "") != kManifestSchema) fail(ErrorKind::kSchema, "not a run manifest");
  if (j.at("version").get<int>() != RunManifest::kVersion) {
    fail(ErrorKind::kSchema, "run manifest version mismatch");
  }
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.run_id = j.at("run_id").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.catalog_hash = j.at("catalog_hash").get<std::string>();
    m.cohort_hash = j.at("cohort_hash").get<std::string>();
    for (const auto& e : j.at("epochs")) m.epochs.push_back(epoch_from_json(e));
    m.step0_loss = j.at("step0_loss").get<double>();
    m.best_epoch = j.at("best_epoch").get<std::size_t>();
    if (!j.at("best_val_auroc").is_null()) m.best_val_auroc = j.at("best_val_auroc").get<double>();
    m.wall_seconds = j.at("wall_seconds").get<double>();
    m.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    m.source_run = j.at("source_run").get<std::string>();
    m.metrics_hash = j.at("metrics_hash").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, std::string("run manifest: ") + e.what());
  }
}

std::string metrics_file_text(std::span<const eval::TaskResult> results,
                              const std::string& config_hash) {
  return "# schema=" + std::string(kMetricsSchema) + " version=" +
         std::to_string(eval::kReportVersion) + " config_hash=" + config_hash + "\n" +
         eval::to_csv(results);
}

std::vector<eval::TaskResult> read_metrics_file(const fs::path& path) {
  const std::string text = read_text(path);
  if (text.rfind("# schema=" + std::string(kMetricsSchema) + " version=" +
                     std::to_string(eval::kReportVersion) + " ",
                 0) != 0) {
    fail(ErrorKind::kSchema, path.string() + ": not a metrics file of this version");
  }
  return eval::results_from_csv(text.substr(text.find('\n') + 1));
}

std::string train_run_id(const PipelineConfig& c, std::uint64_t seed) {
  return run_id_of("train", train_key(c, seed));
}

std::string transfer_run_id(const PipelineConfig& c, std::uint64_t seed) {
  return run_id_of("transfer", transfer_key(c, seed));
}

fs::path cmd_gen(const PipelineConfig& c, const Context& ctx) {
  const auto cohort = synth::generate_cohort(c.gen, c.cohort_seed);
  const fs::path path = ctx.out / c.cohort_file;
  write_text(path, synth::to_ndjson(cohort));
  log_line("gen: " + std::to_string(cohort.patients.size()) + " patients -> " + path.string());
  return path;
}

std::vector<tasks::TaskSpec> cmd_tasks(const PipelineConfig& c, const Context& ctx) {
  const fs::path cohort_path = ctx.out / c.cohort_file;
  std::vector<tasks::TaskSpec> catalog;
  std::optional<synth::Cohort> cohort;
  if (c.scale == Scale::kPaper && !fs::exists(cohort_path)) {
    catalog = tasks::build_task_catalog(c.catalog);
  } else {
    cohort = synth::from_ndjson(read_text(cohort_path));
    if (!(cohort->config == c.gen) || cohort->seed != c.cohort_seed) {
      fail(ErrorKind::kSchema, cohort_path.string() + " was generated by another config; rerun gen");
    }
    catalog = build_catalog(c, *cohort);
  }
  const std::string chash = hex64(config_hash(c));
  json file{{"schema", "uniclin.catalog-file"},
            {"version", tasks::CatalogConfig::kVersion},
            {"config_hash", chash},
            {"catalog_hash", hex64(tasks::catalog_hash(catalog))},
            {"catalog", tasks::catalog_to_json(catalog)}};
  write_text(ctx.out / c.catalog_file, file.dump(2) + "\n");
  if (cohort) {
    tasks::Dataset data(*cohort, catalog);
    write_text(ctx.out / c.dataset_file, data.serialize());
    fs::path manifest = ctx.out / c.dataset_file;
    manifest.replace_extension(".csv");
    write_text(manifest, "# schema=uniclin.dataset-manifest version=" +
                             std::to_string(tasks::Dataset::kVersion) + " config_hash=" + chash +
                             "\n" + data.manifest_csv());
    log_line("tasks: " + std::to_string(catalog.size()) + " tasks, " + std::to_string(data.size()) +
             " windows");
  } else {
    log_line("tasks: " + std::to_string(catalog.size()) + " tasks (no cohort, catalog only)");
  }
  return catalog;
}

std::vector<RunPaths> cmd_train(const PipelineConfig& c, const Context& ctx) {
  const Workspace w = open_workspace(c, ctx);
  const auto seeds = seeds_of(c);
  std::vector<RunPaths> out(seeds.size());
  for_each_index(seeds.size(), ctx.threads,
                 [&](std::size_t i) { out[i] = train_one(c, ctx, w, seeds[i]); });
  return out;
}

std::vector<RunPaths> cmd_transfer(const PipelineConfig& c, const Context& ctx) {
  const Workspace w = open_workspace(c, ctx);
  std::vector<RunPaths> out;
  for (std::uint64_t seed : seeds_of(c)) out.push_back(transfer_one(c, ctx, w, seed));
  return out;
}

std::vector<fs::path> cmd_report(const PipelineConfig& c, const Context& ctx,
                                 std::vector<fs::path> run_dirs) {
  if (run_dirs.empty()) {
    const fs::path root = ctx.out / c.runs_dir;
    if (fs::exists(root)) {
      for (const auto& e : fs::directory_iterator(root)) {
        if (fs::exists(e.path() / "manifest.json")) run_dirs.push_back(e.path());
      }
    }
    std::sort(run_dirs.begin(), run_dirs.end());
  }
  if (run_dirs.empty()) fail(ErrorKind::kIo, "no runs found under " + (ctx.out / c.runs_dir).string());
  std::vector<eval::ReportRun> runs;
  for (const auto& d : run_dirs) {
    const RunPaths p{d};
    const json m = parse_json(read_text(p.manifest()), p.manifest());
    runs.push_back({m.value("run_id", d.filename().string()), m, read_metrics_file(p.metrics())});
  }
  auto files = eval::emit_report(runs, ctx.out / c.report_dir, c.report);
  const std::string stamp_line = "schema=uniclin.report version=" +
                                 std::to_string(eval::kReportVersion) +
                                 " config_hash=" + hex64(config_hash(c));
  for (const auto& f : files) {
    const std::string text = read_text(f);
    if (f.extension() == ".csv") {
      write_text(f, "# " + stamp_line + "\n" + text);
    } else if (f.extension() == ".json") {
      json j = parse_json(text, f);
      j["config_hash"] = hex64(config_hash(c));
      write_text(f, j.dump(2) + "\n");
    } else if (f.extension() == ".svg") {
      const auto at = text.find('>') + 1;
      write_text(f, text.substr(0, at) + "<!-- " + stamp_line + " -->" + text.substr(at));
    }
  }
  log_line("report: " + std::to_string(files.size()) + " files in " +
           (ctx.out / c.report_dir).string());
  return files;
}

ReproOutcome cmd_repro(const fs::path& manifest_path, const Context& ctx) {
  const json raw = parse_json(read_text(manifest_path), manifest_path);
  const RunManifest m = manifest_from_json(raw);
  PipelineConfig c = pipeline_config_from_json(m.config);
  c.train.seeds = {m.seed};
  const fs::path run_dir = manifest_path.parent_path();

  ReproOutcome outcome;
  outcome.replay_dir = ctx.out / ("repro-" + m.run_id);
  Context replay = ctx;
  replay.out = outcome.replay_dir;
  replay.force = true;
  std::error_code ec;
  fs::remove_all(outcome.replay_dir, ec);
  cmd_gen(c, replay);
  cmd_tasks(c, replay);
  if (m.command == "transfer" && !m.source_run.empty()) {
    const fs::path src = run_dir.parent_path() / m.source_run;
    const fs::path dst = replay.out / c.runs_dir / m.source_run;
    fs::create_directories(dst);
    for (const char* f : {"manifest.json", "checkpoint.bin", "metrics.csv"}) {
      fs::copy_file(src / f, dst / f, fs::copy_options::overwrite_existing, ec);
      if (ec) fail(ErrorKind::kIo, "cannot copy " + (src / f).string() + ": " + ec.message());
    }
    if (m.checkpoints.empty() || hex_hash(read_text(dst / "checkpoint.bin")) != m.checkpoints[0]) {
      fail(ErrorKind::kSchema, "source checkpoint of " + m.run_id + " changed since the run");
    }
  }
  std::vector<RunPaths> produced;
  if (m.command == "train") {
    produced = cmd_train(c, replay);
  } else if (m.command == "transfer") {
    produced = cmd_transfer(c, replay);
  } else {
    fail(ErrorKind::kSchema, "unknown run command: " + m.command);
  }
  const std::string before = read_text(run_dir / "metrics.csv");
  const std::string after = read_text(produced.at(0).metrics());
  outcome.byte_identical = before == after;
  std::istringstream a(before), b(after);
  std::string la, lb;
  while (true) {
    const bool ga = static_cast<bool>(std::getline(a, la));
    const bool gb = static_cast<bool>(std::getline(b, lb));
    if (!ga && !gb) break;
    if (ga != gb || la != lb) ++outcome.metric_diffs;
  }
  log_line("repro " + m.run_id + ": " + std::to_string(outcome.metric_diffs) + " metric diffs");
  return outcome;
}

}  // namespace uniclin::pipeline
