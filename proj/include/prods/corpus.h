#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prods/judge.h"

namespace prods {

/// One instruction-tuning record.
struct Triplet {
  std::string id;
  std::string instruction;
  std::optional<std::string> input;
  std::string response;
  std::optional<std::string> subtask;

  /// instruction, or instruction + "\n" + input when an input is present.
  std::string context() const;
};

enum class Direction { kApp, kAwy, kUnified };

std::string_view to_string(Direction d);
Direction parse_direction(std::string_view s);

struct PreferencePair {
  std::string id;
  std::string context;
  std::string preferred;
  std::string dispreferred;
  Direction direction = Direction::kUnified;
  std::optional<double> score_cmp;
  std::optional<double> score_base;
};

/// Throws kInvalidArgument if a pair breaks its invariants.
void validate_pair(const PreferencePair& pair);

using TextById = std::map<std::string, std::string>;

// Dataset JSONL. Records without "id" get "line-<k>" (1-based line number).
std::vector<Triplet> parse_dataset(std::string_view jsonl);
std::vector<Triplet> load_dataset(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& path,
                   const std::vector<Triplet>& data);

std::vector<PreferencePair> parse_pairs(std::string_view jsonl);
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& path,
                 const std::vector<PreferencePair>& pairs);

/// JSONL of {"id", "response"} records, as produced by generation stages.
TextById load_responses(const std::filesystem::path& path);
void write_responses(const std::filesystem::path& path, const TextById& texts);

/// Draws a validation subset from a test set. Without per_subtask this is
/// round(fraction * |test|) samples; with per_subtask = k it is exactly k per
/// subtask label. Output keeps the order of `test`.
std::vector<Triplet> build_validation_set(const std::vector<Triplet>& test,
                                          double fraction,
                                          std::optional<std::size_t> per_subtask,
                                          std::uint64_t seed);

/// Warm-up DPO pairs: ground truth is preferred over the model's own output
/// whenever the judge finds them inconsistent. Output follows `train` order.
std::vector<PreferencePair> build_warmup_dpo_pairs(
    const std::vector<Triplet>& train, const TextById& generated, Judge& judge);

struct SplitPairs {
  std::vector<PreferencePair> app;
  std::vector<PreferencePair> awy;
  std::vector<std::string> dropped;  // tied ids
};

/// Routes each validation context by comparing the judge scores of the
/// compared (cmp) and baseline (base) responses. Ties are dropped.
SplitPairs split_validation_pairs(const std::vector<Triplet>& contexts,
                                  const TextById& resp_cmp,
                                  const TextById& resp_base,
                                  const std::map<std::string, JudgeVerdict>& verdicts);

/// Single merged pair set: the higher-scored response is preferred.
std::vector<PreferencePair> unify_validation_pairs(
    const std::vector<Triplet>& contexts, const TextById& resp_cmp,
    const TextById& resp_base,
    const std::map<std::string, JudgeVerdict>& verdicts);

}  // namespace prods
