#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "prods/sketch.h"

namespace prods {

enum class CorrelationKind { kCosine, kMul };
enum class Aggregation { kWeight, kAvg };
enum class SynthesisMode { kAnnealing, kFixed, kUnified };

std::string to_string(CorrelationKind k);
std::string to_string(Aggregation a);
std::string to_string(SynthesisMode m);
CorrelationKind parse_correlation_kind(const std::string& s);
Aggregation parse_aggregation(const std::string& s);
SynthesisMode parse_synthesis_mode(const std::string& s);

/// What to do with all-zero training rows under cosine correlation.
enum class ZeroRowPolicy { kError, kSentinel };

/// Score assigned to samples that cannot be scored; never selected while
/// real-valued scores remain.
inline constexpr double kExcludedScore = -std::numeric_limits<double>::infinity();

struct CorrelationMatrix {
  std::size_t rows = 0;  // N (training)
  std::size_t cols = 0;  // L (validation)
  std::vector<double> values;
  CorrelationKind kind = CorrelationKind::kCosine;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  /// Training rows with zero norm (sentinel policy only); their entries are 0.
  std::vector<std::size_t> excluded_rows;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

struct CorrelationOptions {
  ZeroRowPolicy zero_train_rows = ZeroRowPolicy::kError;
  std::size_t block_rows = 256;
  std::size_t threads = 1;
};

/// cosine: <t_i, v_j> / (|t_i| |v_j|); mul: <t_i, v_j>.
CorrelationMatrix correlation(const GradientMatrix& train, const GradientMatrix& val,
                              CorrelationKind kind, const CorrelationOptions& opts = {});

/// weight: sum_j M_ij w_j with w_j = |v_j| / sum_k |v_k| (or w_j = |v_j| when
/// normalize_weights is false); avg: mean_j M_ij. Excluded rows score
/// kExcludedScore.
std::vector<double> direction_score(const CorrelationMatrix& m, const GradientMatrix& val,
                                    Aggregation aggregation, bool normalize_weights = true);

struct DirectionScores {
  std::vector<std::string> ids;
  std::vector<double> gamma_app;
  std::vector<double> gamma_awy;
  std::vector<double> gamma;
  std::vector<double> lambda;
  Aggregation aggregation = Aggregation::kWeight;
  SynthesisMode synthesis = SynthesisMode::kAnnealing;

  std::size_t size() const { return ids.size(); }
};

/// Ablation with one merged pair set: gamma = gamma_app = weighted cosine
/// score, gamma_awy = 0, lambda = 1.
DirectionScores unified_score(const GradientMatrix& train, const GradientMatrix& val_unified,
                              const CorrelationOptions& opts = {});

// Scores file: first line {"manifest": {...}}, then {"id", "gamma_app",
// "gamma_awy"} per sample. Excluded samples are written with null scores.
struct ScoresFile {
  nlohmann::json manifest;
  std::vector<std::string> ids;
  std::vector<double> gamma_app;
  std::vector<double> gamma_awy;
};

void write_scores(const std::filesystem::path& path, const ScoresFile& scores);
ScoresFile read_scores(const std::filesystem::path& path);

}  // namespace prods
