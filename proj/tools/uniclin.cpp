#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uniclin/error.hpp"
#include "uniclin/pipeline/pipeline.hpp"

namespace {

using namespace uniclin;
namespace pl = uniclin::pipeline;

struct Options {
  std::string config_path;
  std::string scale = "desk";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out = ".";
  bool force = false;
  std::optional<std::string> regime;
  std::optional<std::string> encoder;
  std::optional<std::size_t> epochs;
  std::optional<std::string> transfer_mode;
};

std::optional<std::uint64_t> env_number(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    fail(ErrorKind::kConfig, std::string(name) + " is not a number: " + v);
  }
}

pl::PipelineConfig resolve_config(const Options& o) {
  pl::PipelineConfig c = o.config_path.empty() ? pl::default_config(pl::scale_from_string(o.scale))
                                               : pl::load_config(o.config_path);
  const auto seed = o.seed ? o.seed : env_number("UNICLIN_SEED");
  if (seed) c.train.seeds = {*seed};
  if (o.regime) c.train.regime = train::regime_from_string(*o.regime);
  if (o.encoder) c.train.encoder.kind = enc::encoder_kind_from_string(*o.encoder);
  if (o.epochs) {
    if (c.train.regime == train::Regime::kMtlUniversal) c.train.lora_epochs = *o.epochs;
    else c.train.epochs = *o.epochs;
  }
  if (o.transfer_mode) {
    if (*o.transfer_mode == "zero-shot") c.transfer.mode = train::TransferMode::kZeroShot;
    else if (*o.transfer_mode == "few-shot") c.transfer.mode = train::TransferMode::kFewShot;
    else fail(ErrorKind::kConfig, "unknown transfer mode: " + *o.transfer_mode);
  }
  return c;
}

pl::Context resolve_context(const Options& o) {
  pl::Context ctx;
  ctx.out = o.out;
  ctx.force = o.force;
  const auto threads = o.threads ? std::optional<std::uint64_t>(*o.threads) : env_number("UNICLIN_THREADS");
  ctx.threads = threads ? static_cast<std::size_t>(*threads) : 1;
  if (ctx.threads == 0) fail(ErrorKind::kConfig, "threads must be positive");
  return ctx;
}

int report_error(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uniclin: synthetic ICU cohort, task catalog, encoders and a universal decoder"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "Pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--scale", o.scale, "Default config when --config is absent")
      ->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", o.seed, "Run a single seed (env UNICLIN_SEED)");
  app.add_option("--threads", o.threads, "Worker threads for seeds and transfer cells (env UNICLIN_THREADS)");
  app.add_option("--out", o.out, "Output directory");
  app.add_flag("--force", o.force, "Re-execute runs that already finished");
  app.add_option("--regime", o.regime, "mtl-universal, mtl-heads or stl");
  app.add_option("--encoder", o.encoder, "Encoder kind");
  app.add_option("--epochs", o.epochs, "Training epochs (LoRA stage for mtl-universal)");
  app.add_option("--transfer-mode", o.transfer_mode, "zero-shot or few-shot");

  auto* gen = app.add_subcommand("gen", "Generate the synthetic cohort");
  auto* tasks = app.add_subcommand("tasks", "Build the task catalog and window dataset");
  auto* train = app.add_subcommand("train", "Train one run per seed");
  auto* transfer = app.add_subcommand("transfer", "Transfer sweep on held-out tasks");
  auto* report = app.add_subcommand("report", "Tables and plots over finished runs");
  std::vector<std::string> run_dirs;
  report->add_option("runs", run_dirs, "Run directories (default: every run)");
  auto* repro = app.add_subcommand("repro", "Re-execute a run and diff its metrics");
  std::string manifest;
  repro->add_option("manifest", manifest, "manifest.json of the run")->required();
  auto* config = app.add_subcommand("config", "Print the resolved config");
  for (auto* sub : {gen, tasks, train, transfer, report, repro, config}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what());
  }

  try {
    const pl::Context ctx = resolve_context(o);
    if (*repro) {
      const auto r = pl::cmd_repro(manifest, ctx);
      std::cout << nlohmann::json{{"replay_dir", r.replay_dir.string()},
                                  {"metric_diffs", r.metric_diffs},
                                  {"byte_identical", r.byte_identical}}
                       .dump()
                << std::endl;
      return r.byte_identical ? 0 : 2;
    }
    const pl::PipelineConfig c = resolve_config(o);
    if (*config) {
      std::cout << pl::to_json(c).dump(2) << std::endl;
    } else if (*gen) {
      pl::cmd_gen(c, ctx);
    } else if (*tasks) {
      pl::cmd_tasks(c, ctx);
    } else if (*train) {
      pl::cmd_train(c, ctx);
    } else if (*transfer) {
      pl::cmd_transfer(c, ctx);
    } else if (*report) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      pl::cmd_report(c, ctx, dirs);
    }
    return 0;
  } catch (const Error& e) {
    return report_error(std::string(to_string(e.kind())), e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
}
