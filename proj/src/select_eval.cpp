#include "prods/select_eval.h"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "prods/common.h"

namespace prods {

using nlohmann::json;

SelectionResult select_topk(const DirectionScores& scores, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    fail(ErrorKind::kInvalidArgument, "selection fraction must be in (0, 1]");
  const std::size_t n = scores.ids.size();
  require(scores.gamma.size() == n, "select_topk: score and id lengths differ");
  for (double g : scores.gamma)
    if (std::isnan(g)) fail(ErrorKind::kNumeric, "select_topk: NaN score");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.gamma[a] != scores.gamma[b]) return scores.gamma[a] > scores.gamma[b];
    return scores.ids[a] < scores.ids[b];
  });
  SelectionResult out;
  out.fraction = fraction;
  const std::size_t k = fraction_count(fraction, n);
  for (std::size_t r = 0; r < k; ++r) out.selected_ids.push_back(scores.ids[order[r]]);
  out.threshold = k > 0 ? scores.gamma[order[k - 1]] : 0.0;
  out.manifest = {{"n", n}, {"k", k}, {"synthesis", to_string(scores.synthesis)}};
  return out;
}

json selection_to_json(const SelectionResult& s) {
  return {{"fraction", s.fraction},
          {"selected_ids", s.selected_ids},
          {"threshold", std::isfinite(s.threshold) ? json(s.threshold) : json(nullptr)},
          {"manifest", s.manifest}};
}

SelectionResult selection_from_json(const json& j) {
  SelectionResult s;
  s.fraction = j.at("fraction").get<double>();
  s.selected_ids = j.at("selected_ids").get<std::vector<std::string>>();
  s.threshold = j.at("threshold").is_null() ? kExcludedScore : j.at("threshold").get<double>();
  s.manifest = j.value("manifest", json::object());
  return s;
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::kWin: return "win";
    case Outcome::kTie: return "tie";
    case Outcome::kLose: return "lose";
  }
  return "tie";
}

Outcome pairwise_outcome(const JudgeVerdict& ab, const JudgeVerdict& ba) {
  int wins = 0, losses = 0;
  // In the ab order A is the first response; in ba it is the second.
  const std::pair<double, double> orders[] = {{ab.score_a, ab.score_b},
                                              {ba.score_b, ba.score_a}};
  for (auto [a, b] : orders) {
    if (a > b) ++wins;
    if (a < b) ++losses;
  }
  if (wins > 0 && losses == 0) return Outcome::kWin;
  if (wins == 0 && losses > 0) return Outcome::kLose;
  return Outcome::kTie;
}

MatchTally winning_score(const std::vector<Outcome>& outcomes) {
  require(!outcomes.empty(), "winning score needs at least one outcome");
  MatchTally t;
  for (Outcome o : outcomes) {
    if (o == Outcome::kWin) ++t.wins;
    if (o == Outcome::kTie) ++t.ties;
    if (o == Outcome::kLose) ++t.losses;
  }
  t.total = outcomes.size();
  t.winning_score = (static_cast<double>(t.wins) - static_cast<double>(t.losses)) /
                        static_cast<double>(t.total) +
                    1.0;
  return t;
}

std::string display_score(double value) {
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double hundredths = std::nearbyint(value * 100.0);
  std::fesetround(saved);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", hundredths / 100.0);
  return buf;
}

void write_transcript(const std::filesystem::path& path,
                      const std::vector<TranscriptEntry>& entries) {
  std::string out;
  for (const auto& e : entries)
    out += json{{"id", e.id}, {"order", e.order}, {"score_a", e.score_a}, {"score_b", e.score_b}}
               .dump() +
           "\n";
  write_file(path, out);
}

std::vector<TranscriptEntry> read_transcript(const std::filesystem::path& path) {
  std::vector<TranscriptEntry> out;
  const std::string text = read_file(path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) {
      const json j = json::parse(text.substr(pos, end - pos));
      out.push_back({j.at("id").get<std::string>(), j.at("order").get<std::string>(),
                     j.at("score_a").get<double>(), j.at("score_b").get<double>()});
    }
    pos = end + 1;
  }
  return out;
}

Histogram histogram(const std::vector<double>& values, double lo, double hi, std::size_t bins) {
  require(bins >= 1, "histogram needs at least one bin");
  if (!(hi > lo)) hi = lo + 1.0;
  Histogram h;
  h.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b)
    h.edges.push_back(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins));
  for (double v : values) {
    if (!std::isfinite(v) || v < lo || v > hi) continue;
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

LengthStats length_stats(const std::vector<std::size_t>& lengths) {
  LengthStats s;
  s.count = lengths.size();
  if (lengths.empty()) return s;
  auto sorted = lengths;
  std::sort(sorted.begin(), sorted.end());
  s.min = sorted.front();
  s.max = sorted.back();
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(s.count);
  const std::size_t m = s.count / 2;
  s.median = s.count % 2 ? static_cast<double>(sorted[m])
                         : 0.5 * static_cast<double>(sorted[m - 1] + sorted[m]);
  return s;
}

namespace {

json stats_json(const LengthStats& s) {
  return {{"count", s.count}, {"mean", s.mean}, {"median", s.median},
          {"min", s.min},     {"max", s.max}};
}

json hist_json(const Histogram& h) { return {{"edges", h.edges}, {"counts", h.counts}}; }

std::vector<double> to_doubles(const std::vector<std::size_t>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

SelectionReport write_report(const SelectionResult& selection,
                             const std::vector<Triplet>& dataset,
                             const DirectionScores& scores,
                             const std::filesystem::path& out_dir, const json& provenance,
                             std::size_t bins) {
  std::map<std::string, const Triplet*> by_id;
  for (const auto& t : dataset) by_id[t.id] = &t;

  std::vector<std::size_t> full_len, sel_len;
  for (const auto& t : dataset) full_len.push_back(word_tokens(t.response).size());
  for (const auto& id : selection.selected_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      fail(ErrorKind::kInvalidArgument, "selected id '" + id + "' not found in dataset");
    sel_len.push_back(word_tokens(it->second->response).size());
  }

  SelectionReport rep;
  rep.full_lengths = length_stats(full_len);
  rep.selected_lengths = length_stats(sel_len);
  const double max_len = static_cast<double>(std::max<std::size_t>(rep.full_lengths.max, 1));
  rep.full_length_hist = histogram(to_doubles(full_len), 0.0, max_len, bins);
  rep.selected_length_hist = histogram(to_doubles(sel_len), 0.0, max_len, bins);

  // Shared score range across the three series so the CSV columns align.
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const auto* v : {&scores.gamma, &scores.gamma_app, &scores.gamma_awy})
    for (double x : *v)
      if (std::isfinite(x)) {
        lo = any ? std::min(lo, x) : x;
        hi = any ? std::max(hi, x) : x;
        any = true;
      }
  const Histogram h_gamma = histogram(scores.gamma, lo, hi, bins);
  const Histogram h_app = histogram(scores.gamma_app, lo, hi, bins);
  const Histogram h_awy = histogram(scores.gamma_awy, lo, hi, bins);

  std::vector<std::size_t> order(scores.ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores.gamma[a] != scores.gamma[b]) return scores.gamma[a] > scores.gamma[b];
    return scores.ids[a] < scores.ids[b];
  });
  std::vector<std::string> top, bottom;
  for (std::size_t r = 0; r < std::min<std::size_t>(5, order.size()); ++r) {
    top.push_back(scores.ids[order[r]]);
    bottom.push_back(scores.ids[order[order.size() - 1 - r]]);
  }

  rep.json = {{"selection", selection_to_json(selection)},
              {"gamma_hist", hist_json(h_gamma)},
              {"gamma_app_hist", hist_json(h_app)},
              {"gamma_awy_hist", hist_json(h_awy)},
              {"length", {{"full", stats_json(rep.full_lengths)},
                          {"selected", stats_json(rep.selected_lengths)},
                          {"full_hist", hist_json(rep.full_length_hist)},
                          {"selected_hist", hist_json(rep.selected_length_hist)}}},
              {"top_ids", top},
              {"bottom_ids", bottom},
              {"provenance", provenance}};

  std::filesystem::create_directories(out_dir);
  write_file(out_dir / "report.json", rep.json.dump(2) + "\n");

  std::string csv = "bin_lo,bin_hi,gamma,gamma_app,gamma_awy\n";
  for (std::size_t b = 0; b < bins; ++b) {
    char line[160];
    std::snprintf(line, sizeof(line), "%.9g,%.9g,%zu,%zu,%zu\n", h_gamma.edges[b],
                  h_gamma.edges[b + 1], h_gamma.counts[b], h_app.counts[b], h_awy.counts[b]);
    csv += line;
  }
  write_file(out_dir / "gamma_hist.csv", csv);

  csv = "bin_lo,bin_hi,full,selected\n";
  for (std::size_t b = 0; b < bins; ++b) {
    char line[160];
    std::snprintf(line, sizeof(line), "%.9g,%.9g,%zu,%zu\n", rep.full_length_hist.edges[b],
                  rep.full_length_hist.edges[b + 1], rep.full_length_hist.counts[b],
                  rep.selected_length_hist.counts[b]);
    csv += line;
  }
  write_file(out_dir / "length_hist.csv", csv);
  return rep;
}

}  // namespace prods
