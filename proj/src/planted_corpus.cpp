#include "prods/planted_corpus.h"

#include <cstdio>
#include <random>

#include "json.hpp"
#include "prods/common.h"

namespace prods {

namespace {

const std::vector<std::string> kRich = {
    "vivid",  "precise", "concrete", "specific", "nuanced", "detailed", "tangible", "crisp",
    "striking", "exact", "lucid",   "rigorous", "original", "textured", "careful", "grounded"};
const std::vector<std::string> kFiller = {
    "thing", "stuff", "nice",  "basically", "really",   "very",    "just",   "kind",
    "sort",  "okay",  "whatever", "generally", "somehow", "pretty", "quite", "lots"};
const std::vector<std::string> kNeutral = {
    "the",  "a",    "of",   "and",    "to",     "in",     "is",   "it",
    "that", "for",  "on",   "with",   "as",     "this",   "by",   "from",
    "at",   "be",   "are",  "was",    "system", "data",   "process", "result",
    "method", "value", "part", "point", "case", "time", "way", "work"};
const std::vector<std::string> kTopics = {
    "ocean", "city",   "forest", "river",  "music", "history", "science",  "market",
    "garden", "winter", "travel", "cooking", "energy", "health", "language", "planet",
    "school", "bridge", "island", "mountain"};
const std::vector<std::string> kVerbs = {"describe", "explain", "summarize",
                                         "discuss",  "write",   "outline"};

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : rng_(seed) {
    rich_next_ = successors(kRich.size(), 2);
    filler_next_ = successors(kFiller.size(), 2);
    neutral_next_ = successors(kNeutral.size(), 3);
  }

  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(rng_()) * n) >> 64);
  }
  double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  std::string instruction() {
    return kVerbs[below(kVerbs.size())] + " the " + kTopics[below(kTopics.size())];
  }

  /// Random walk mixing a style vocabulary (share `purity`) with neutral words.
  std::string walk(const std::vector<std::string>* style, double purity) {
    const std::size_t len = 8 + below(7);
    const auto& next = style == &kRich ? rich_next_ : filler_next_;
    std::string out;
    int prev_style = -1, prev_neutral = -1;
    for (std::size_t k = 0; k < len; ++k) {
      std::string w;
      if (style != nullptr && unit() < purity) {
        prev_style = prev_style < 0 ? static_cast<int>(below(style->size()))
                                    : next[prev_style][below(next[prev_style].size())];
        prev_neutral = -1;
        w = (*style)[prev_style];
      } else {
        prev_neutral = prev_neutral < 0
                           ? static_cast<int>(below(kNeutral.size()))
                           : neutral_next_[prev_neutral][below(neutral_next_[prev_neutral].size())];
        prev_style = -1;
        w = kNeutral[prev_neutral];
      }
      if (!out.empty()) out += ' ';
      out += w;
    }
    return out;
  }

 private:
  std::vector<std::vector<int>> successors(std::size_t n, std::size_t k) {
    std::vector<std::vector<int>> table(n);
    for (auto& row : table)
      for (std::size_t j = 0; j < k; ++j) row.push_back(static_cast<int>(below(n)));
    return table;
  }

  std::mt19937_64 rng_;
  std::vector<std::vector<int>> rich_next_, filler_next_, neutral_next_;
};

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%04zu", prefix, i);
  return buf;
}

}  // namespace

PlantedCorpus make_planted_corpus(const PlantedCorpusSpec& spec) {
  require(spec.n_app_aligned + spec.n_awy_aligned <= spec.n_train,
          "aligned groups exceed the training set");
  require(spec.n_subtasks >= 1, "need at least one subtask");
  Generator gen(spec.seed);
  PlantedCorpus c;

  // Random positions for the planted groups so ids carry no signal.
  const auto perm = sample_without_replacement(spec.n_train, spec.n_train, spec.seed ^ 0xA5A5);
  std::vector<int> group(spec.n_train, 0);
  for (std::size_t k = 0; k < spec.n_app_aligned; ++k) group[perm[k]] = 1;
  for (std::size_t k = 0; k < spec.n_awy_aligned; ++k) group[perm[spec.n_app_aligned + k]] = 2;

  for (std::size_t i = 0; i < spec.n_train; ++i) {
    Triplet t;
    t.id = numbered("train", i);
    t.instruction = gen.instruction();
    if (group[i] == 1) {
      t.response = gen.walk(&kRich, spec.style_purity);
      c.app_aligned.insert(t.id);
    } else if (group[i] == 2) {
      t.response = gen.walk(&kFiller, spec.style_purity);
      c.awy_aligned.insert(t.id);
    } else {
      t.response = gen.walk(nullptr, 0.0);
    }
    c.train.push_back(std::move(t));
  }

  for (std::size_t i = 0; i < spec.n_test; ++i) {
    Triplet t;
    t.id = numbered("test", i);
    t.instruction = gen.instruction();
    t.subtask = "task-" + std::to_string(i % spec.n_subtasks);
    t.response = gen.walk(&kRich, spec.style_purity);
    if (i % 2 == 0) {
      c.resp_cmp[t.id] = gen.walk(&kRich, spec.style_purity);
      c.resp_base[t.id] = gen.walk(nullptr, 0.0);
    } else {
      c.resp_cmp[t.id] = gen.walk(&kFiller, spec.style_purity);
      c.resp_base[t.id] = gen.walk(&kRich, spec.style_purity);
    }
    c.test.push_back(std::move(t));
  }
  return c;
}

void write_planted_corpus(const PlantedCorpus& corpus, const std::filesystem::path& dir,
                          std::size_t projection_dim) {
  std::filesystem::create_directories(dir);
  write_dataset(dir / "train.jsonl", corpus.train);
  write_dataset(dir / "test.jsonl", corpus.test);
  write_responses(dir / "val_cmp.jsonl", corpus.resp_cmp);
  write_responses(dir / "val_base.jsonl", corpus.resp_base);
  const nlohmann::json groups{
      {"app_aligned", std::vector<std::string>(corpus.app_aligned.begin(), corpus.app_aligned.end())},
      {"awy_aligned", std::vector<std::string>(corpus.awy_aligned.begin(), corpus.awy_aligned.end())}};
  write_file(dir / "groups.json", groups.dump(2) + "\n");
  const std::string config =
      "# Planted-preference corpus. Paths are relative to this file.\n"
      "[paths]\n"
      "train = \"train.jsonl\"\n"
      "test = \"test.jsonl\"\n"
      "val_cmp = \"val_cmp.jsonl\"\n"
      "val_base = \"val_base.jsonl\"\n"
      "workdir = \"work\"\n\n"
      "[validation]\n"
      "fraction = 0.5\n\n"
      "[model]\n"
      "vocab = \"word\"\n\n"
      "[projection]\n"
      "dim = " + std::to_string(projection_dim) + "\n\n"
      "[selection]\n"
      "fractions = [0.05, 0.10, 0.15, 0.20]\n\n"
      "[eval]\n"
      "fraction = 0.20\n";
  write_file(dir / "config.toml", config);
}

}  // namespace prods
