#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "prods/config.h"

namespace prods {

enum class Stage {
  kWarmupSft,
  kWarmupDpo,
  kBuildPairs,
  kGrads,
  kScore,
  kSynthesize,
  kSelect,
  kEval,
  kReport,
};

/// All stages in dependency order.
const std::vector<Stage>& all_stages();
std::string to_string(Stage s);
Stage parse_stage(std::string_view name);

/// Provenance record written to <workdir>/<stage>/manifest.json.
struct StageManifest {
  std::string stage;
  nlohmann::json inputs = nlohmann::json::object();    // raw input name -> sha256
  nlohmann::json upstream = nlohmann::json::object();  // stage -> manifest hash
  nlohmann::json outputs = nlohmann::json::object();   // file name -> sha256
  nlohmann::json config = nlohmann::json::object();    // config sections the stage reads
  nlohmann::json summary = nlohmann::json::object();   // stage-specific figures
  double wall_time_s = 0.0;
  std::string hash;      // sha256 over everything above except wall time
  bool skipped = false;  // not serialized; true when the run was a no-op

  nlohmann::json to_json() const;
  static StageManifest from_json(const nlohmann::json& j);
  std::string compute_hash() const;
};

struct RunOptions {
  bool force = false;
  std::size_t threads = 0;  // 0: hardware concurrency
};

class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, RunOptions opts = {});

  /// Runs one stage. Re-running with unchanged inputs and config is a no-op
  /// unless opts.force is set.
  StageManifest run_stage(Stage s);

  /// Runs every stage in order, stopping at the first failure.
  std::vector<StageManifest> run_all();

  std::filesystem::path stage_dir(Stage s) const;
  const PipelineConfig& config() const { return cfg_; }

 private:
  struct Context;
  void execute(Stage s, Context& ctx);

  void warmup_sft(Context& ctx);
  void warmup_dpo(Context& ctx);
  void build_pairs(Context& ctx);
  void grads(Context& ctx);
  void score(Context& ctx);
  void synthesize(Context& ctx);
  void select(Context& ctx);
  void eval(Context& ctx);
  void report(Context& ctx);

  PipelineConfig cfg_;
  RunOptions opts_;
};

/// Exit code for an error kind: 2 config, 3 missing or stale artifact,
/// 4 judge failure, 5 numeric failure, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace prods
