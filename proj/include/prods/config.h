#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace prods {

/// Parses the TOML subset used by pipeline configs: [table] and [a.b]
/// headers, bare or quoted keys, and string, integer, float, boolean and
/// single-line array values. Returns nested JSON objects.
nlohmann::json parse_toml(std::string_view text);

struct PipelineConfig {
  struct Paths {
    std::filesystem::path train;
    std::filesystem::path test;
    std::filesystem::path workdir = "work";
    std::filesystem::path val_cmp;   // optional {"id","response"} JSONL
    std::filesystem::path val_base;  // optional; generated by the SFT model if empty
  } paths;

  struct Validation {
    double fraction = 0.1;
    std::size_t per_subtask = 0;  // 0: sample by fraction
    std::uint64_t seed = 0;
  } validation;

  struct Warm {
    double fraction = 0.05;
    double pairs_fraction = 0.05;
    std::size_t sft_epochs = 4;
    std::size_t dpo_epochs = 1;
    std::uint64_t seed = 0;
    double lr = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t max_gen_tokens = 64;
  } warm;

  struct Model {
    std::string vocab = "byte";         // byte | word
    std::string influence_at = "sft";   // sft | dpo
  } model;

  struct Projection {
    std::size_t dim = 8192;
    std::uint64_t seed = 0;
    std::string scale = "normalized";  // normalized | raw
  } projection;

  struct Dpo {
    double beta = 0.1;
  } dpo;

  struct Scoring {
    std::string kind = "cosine";        // cosine | mul
    std::string aggregation = "weight"; // weight | avg
    std::string pairs = "separate";     // separate | unified
    std::string weights = "normalized"; // normalized | raw
    std::size_t block_rows = 256;
  } scoring;

  struct Synthesis {
    std::string mode = "annealing";  // annealing | fixed
    double sigma = 0.1;
    std::uint64_t seed = 0;
    double t0 = 1.0;
    double cooling = 0.95;
    double t_end = 0.01;
    std::string return_mode = "best";  // best | last
    std::string acceptance = "joint";  // joint | per_coordinate
    std::size_t restarts = 1;
    bool clamp = true;
  } synthesis;

  struct Selection {
    std::vector<double> fractions{0.05, 0.10, 0.15, 0.20};
  } selection;

  struct Judge {
    std::string kind = "token-overlap";  // token-overlap | exact-match | length-heuristic | remote
    double threshold = 0.9;
    std::string url;
    std::string key;
    std::string model = "gpt-4";
    std::size_t max_inflight = 4;
    int retries = 4;
    bool cache = true;
    bool use_reference = true;  // judge against the test-set response when present
  } judge;

  struct Eval {
    double fraction = 0.0;            // 0: first selection fraction
    std::string baseline = "random";  // random | full
    std::size_t epochs = 4;
    double lr = 1e-2;
    std::uint64_t seed = 0;
    std::size_t max_gen_tokens = 64;
  } eval;

  /// Reads a TOML file, applies PRODS_<SECTION>_<KEY> environment overrides
  /// and validates. Relative paths resolve against the config file directory.
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;

  /// Throws kConfig on invalid values.
  void validate() const;
  /// Sets every seed to `seed`.
  void override_seeds(std::uint64_t seed);
  double eval_fraction() const;
};

/// Applies PRODS_<SECTION>_<KEY> environment variables to a parsed config.
void apply_env_overrides(nlohmann::json& j);

}  // namespace prods
