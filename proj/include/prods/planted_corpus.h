#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "prods/corpus.h"

namespace prods {

/// Synthetic instruction corpus with planted preference structure.
///
/// Responses are random walks over three word styles with fixed bigram
/// successor tables: a "rich" style, a "filler" style and a neutral style.
/// Training samples are app-aligned (rich), awy-aligned (filler) or neutral.
/// Test items carry a rich reference answer; for half of them the compared
/// response is rich and the baseline neutral (quality goes up), for the other
/// half the compared response is filler and the baseline rich (quality goes
/// down).
struct PlantedCorpusSpec {
  std::size_t n_train = 400;
  std::size_t n_app_aligned = 80;
  std::size_t n_awy_aligned = 80;
  std::size_t n_test = 120;
  std::size_t n_subtasks = 6;
  /// Share of style tokens in aligned responses; the rest are neutral.
  double style_purity = 0.7;
  std::uint64_t seed = 7;
};

struct PlantedCorpus {
  std::vector<Triplet> train;
  std::vector<Triplet> test;
  TextById resp_cmp;
  TextById resp_base;
  std::set<std::string> app_aligned;
  std::set<std::string> awy_aligned;
};

PlantedCorpus make_planted_corpus(const PlantedCorpusSpec& spec);

/// Writes train.jsonl, test.jsonl, val_cmp.jsonl, val_base.jsonl,
/// groups.json and a ready-to-run config.toml into dir.
void write_planted_corpus(const PlantedCorpus& corpus, const std::filesystem::path& dir,
                          std::size_t projection_dim = 1024);

}  // namespace prods
