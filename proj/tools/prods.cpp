// Command-line driver for the selection pipeline.
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "prods/common.h"
#include "prods/pipeline.h"
#include "prods/planted_corpus.h"

namespace {

struct StageArgs {
  std::string config;
  bool force = false;
  std::size_t threads = 0;
  std::optional<std::uint64_t> seed;
};

void add_stage_options(CLI::App* cmd, StageArgs& args) {
  cmd->add_option("-c,--config", args.config, "pipeline config (TOML)")->required();
  cmd->add_flag("-f,--force", args.force, "re-run even if outputs are up to date");
  cmd->add_option("-j,--threads", args.threads, "worker threads (0 = all cores)");
  cmd->add_option("--seed", args.seed, "override every seed in the config");
}

prods::Pipeline make_pipeline(const StageArgs& args) {
  auto cfg = prods::PipelineConfig::load(args.config);
  if (args.seed) cfg.override_seeds(*args.seed);
  return prods::Pipeline(std::move(cfg), {args.force, args.threads});
}

void print_manifest(const prods::StageManifest& m) {
  std::cout << m.stage << (m.skipped ? " (up to date)" : "") << "  " << m.hash.substr(0, 12)
            << "  " << m.summary.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prods: preference-oriented data selection"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  StageArgs args;
  std::optional<prods::Stage> chosen;
  for (prods::Stage s : prods::all_stages()) {
    auto* cmd = app.add_subcommand(prods::to_string(s), "run the " + prods::to_string(s) + " stage");
    add_stage_options(cmd, args);
    cmd->callback([&chosen, s] { chosen = s; });
  }
  auto* run_all = app.add_subcommand("run-all", "run every stage in order");
  add_stage_options(run_all, args);

  prods::PlantedCorpusSpec fixture;
  std::string fixture_dir;
  std::size_t fixture_dim = 1024;
  auto* make_fixture =
      app.add_subcommand("make-fixture", "write a synthetic corpus with planted preferences");
  make_fixture->add_option("dir", fixture_dir, "output directory")->required();
  make_fixture->add_option("--train", fixture.n_train, "training samples");
  make_fixture->add_option("--app", fixture.n_app_aligned, "samples aligned with the app direction");
  make_fixture->add_option("--awy", fixture.n_awy_aligned, "samples aligned with the awy direction");
  make_fixture->add_option("--test", fixture.n_test, "test samples");
  make_fixture->add_option("--subtasks", fixture.n_subtasks, "subtask labels in the test set");
  make_fixture->add_option("--purity", fixture.style_purity, "share of style words in aligned responses");
  make_fixture->add_option("--seed", fixture.seed, "generator seed");
  make_fixture->add_option("--dim", fixture_dim, "projection dimension in the emitted config");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*make_fixture) {
      prods::write_planted_corpus(prods::make_planted_corpus(fixture), fixture_dir, fixture_dim);
      std::cout << "wrote " << fixture_dir << "\n";
      return 0;
    }
    auto pipeline = make_pipeline(args);
    if (*run_all) {
      for (const auto& m : pipeline.run_all()) print_manifest(m);
    } else {
      print_manifest(pipeline.run_stage(*chosen));
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return prods::exit_code_for(e);
  }
  return 0;
}
