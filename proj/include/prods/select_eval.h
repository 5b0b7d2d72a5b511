#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "prods/corpus.h"
#include "prods/scoring.h"

namespace prods {

struct SelectionResult {
  double fraction = 0.0;
  std::vector<std::string> selected_ids;  // descending gamma
  double threshold = 0.0;                 // gamma of the last selected sample
  nlohmann::json manifest;
};

/// Top round(fraction * N) samples by gamma; equal scores are ordered by id.
SelectionResult select_topk(const DirectionScores& scores, double fraction);

nlohmann::json selection_to_json(const SelectionResult& s);
SelectionResult selection_from_json(const nlohmann::json& j);

enum class Outcome { kWin, kTie, kLose };
std::string to_string(Outcome o);

/// Outcome for system A given the verdict with A shown first (ab) and the
/// verdict with B shown first (ba). A wins with at least one win and no
/// loss across the two orders; one win and one loss is a tie.
Outcome pairwise_outcome(const JudgeVerdict& verdict_ab, const JudgeVerdict& verdict_ba);

struct MatchTally {
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t losses = 0;
  std::size_t total = 0;
  double winning_score = 1.0;  // (wins - losses) / total + 1
};

MatchTally winning_score(const std::vector<Outcome>& outcomes);

/// Two decimals, ties to even (e.g. "1.06").
std::string display_score(double value);

struct TranscriptEntry {
  std::string id;
  std::string order;  // "ab" or "ba"
  double score_a = 0.0;
  double score_b = 0.0;
};

void write_transcript(const std::filesystem::path& path,
                      const std::vector<TranscriptEntry>& entries);
std::vector<TranscriptEntry> read_transcript(const std::filesystem::path& path);

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [lo, hi]; non-finite values are skipped.
Histogram histogram(const std::vector<double>& values, double lo, double hi, std::size_t bins);

struct LengthStats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  std::size_t min = 0;
  std::size_t max = 0;
};

LengthStats length_stats(const std::vector<std::size_t>& lengths);

struct SelectionReport {
  nlohmann::json json;
  LengthStats full_lengths;
  LengthStats selected_lengths;
  Histogram full_length_hist;
  Histogram selected_length_hist;
};

/// Writes report.json, gamma_hist.csv and length_hist.csv into out_dir.
/// Response lengths are counted in whitespace tokens.
SelectionReport write_report(const SelectionResult& selection,
                             const std::vector<Triplet>& dataset,
                             const DirectionScores& scores,
                             const std::filesystem::path& out_dir,
                             const nlohmann::json& provenance, std::size_t bins = 20);

}  // namespace prods
