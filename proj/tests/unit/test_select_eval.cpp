#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "prods/common.h"
#include "prods/select_eval.h"
#include "test_support.h"

using namespace prods;
using namespace prods::testing;

namespace {

DirectionScores scored(const std::vector<double>& gamma) {
  DirectionScores s;
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "id%03zu", i);
    s.ids.push_back(buf);
  }
  s.gamma = gamma;
  s.gamma_app = gamma;
  s.gamma_awy.assign(gamma.size(), 0.0);
  s.lambda.assign(gamma.size(), 1.0);
  return s;
}

std::vector<Outcome> tally(std::size_t w, std::size_t t, std::size_t l) {
  std::vector<Outcome> o;
  o.insert(o.end(), w, Outcome::kWin);
  o.insert(o.end(), t, Outcome::kTie);
  o.insert(o.end(), l, Outcome::kLose);
  return o;
}

}  // namespace

TEST_CASE("top-k takes round(fraction * N) by descending score") {
  const auto s = scored({0.1, 0.9, 0.5, 0.7, 0.3});
  const auto r = select_topk(s, 0.4);
  CHECK(r.selected_ids == std::vector<std::string>{"id001", "id003"});
  CHECK(r.threshold == 0.7);
  const auto all = select_topk(s, 1.0);
  CHECK(all.selected_ids ==
        std::vector<std::string>{"id001", "id003", "id002", "id004", "id000"});
  CHECK_THROWS(select_topk(s, 0.0));
  CHECK_THROWS(select_topk(s, 1.5));
}

TEST_CASE("top-k count on a full-size training set") {
  std::mt19937_64 rng(1);
  const auto s = scored(random_vector(52002, rng));
  CHECK(select_topk(s, 0.05).selected_ids.size() == 2600);
}

TEST_CASE("ties break by id") {
  const auto s = scored({0.5, 0.5, 0.9, 0.5});
  CHECK(select_topk(s, 0.5).selected_ids == std::vector<std::string>{"id002", "id000"});
}

TEST_CASE("excluded samples are chosen last") {
  const auto s = scored({kExcludedScore, -5.0, kExcludedScore, -7.0});
  CHECK(select_topk(s, 0.5).selected_ids == std::vector<std::string>{"id001", "id003"});
  CHECK(select_topk(s, 1.0).selected_ids.back() == "id002");
  const auto nan = scored({0.1, std::nan("")});
  CHECK_THROWS(select_topk(nan, 0.5));
}

TEST_CASE("top-k agrees with a naive full-sort oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng() % 200;
    const auto s = scored(random_vector(n, rng));
    const double f = 0.05 * static_cast<double>(1 + rng() % 20);
    const auto got = select_topk(s, f);
    std::vector<std::pair<double, std::string>> all;
    for (std::size_t i = 0; i < n; ++i) all.push_back({-s.gamma[i], s.ids[i]});
    std::sort(all.begin(), all.end());
    const std::size_t k = fraction_count(f, n);
    std::set<std::string> want;
    for (std::size_t i = 0; i < k; ++i) want.insert(all[i].second);
    CHECK(std::set<std::string>(got.selected_ids.begin(), got.selected_ids.end()) == want);
    CHECK(got.selected_ids.size() == k);
    // Every selected score dominates every unselected one.
    std::set<std::string> chosen(got.selected_ids.begin(), got.selected_ids.end());
    double min_sel = 1e300, max_unsel = -1e300;
    for (std::size_t i = 0; i < n; ++i)
      (chosen.count(s.ids[i]) ? min_sel : max_unsel) =
          chosen.count(s.ids[i]) ? std::min(min_sel, s.gamma[i]) : std::max(max_unsel, s.gamma[i]);
    CHECK(min_sel >= max_unsel);
  }
}

TEST_CASE("selection is invariant under positive affine transforms") {
  std::mt19937_64 rng(3);
  auto s = scored(random_vector(100, rng));
  const auto before = select_topk(s, 0.2).selected_ids;
  for (double& g : s.gamma) g = 3.5 * g - 1.25;
  CHECK(select_topk(s, 0.2).selected_ids == before);
}

TEST_CASE("selection json round trip") {
  const auto r = select_topk(scored({0.3, 0.1, 0.2}), 1.0);
  const auto back = selection_from_json(selection_to_json(r));
  CHECK(back.selected_ids == r.selected_ids);
  CHECK(back.threshold == r.threshold);
  CHECK(back.fraction == 1.0);
}

TEST_CASE("pairwise outcome under the reversed-order protocol") {
  // Verdicts list the first-shown response first. In ba, A is shown second.
  CHECK(pairwise_outcome({8, 5, ""}, {4, 9, ""}) == Outcome::kWin);   // wins both
  CHECK(pairwise_outcome({8, 5, ""}, {9, 4, ""}) == Outcome::kTie);   // win + loss
  CHECK(pairwise_outcome({6, 6, ""}, {7, 7, ""}) == Outcome::kTie);   // equal both
  CHECK(pairwise_outcome({8, 5, ""}, {6, 6, ""}) == Outcome::kWin);   // win + tie
  CHECK(pairwise_outcome({5, 8, ""}, {9, 4, ""}) == Outcome::kLose);  // loses both
  CHECK(pairwise_outcome({6, 6, ""}, {9, 4, ""}) == Outcome::kLose);  // tie + loss
}

TEST_CASE("pairwise outcome is antisymmetric") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> sc(1, 10);
  for (int k = 0; k < 200; ++k) {
    const JudgeVerdict ab{double(sc(rng)), double(sc(rng)), ""};
    const JudgeVerdict ba{double(sc(rng)), double(sc(rng)), ""};
    const Outcome a = pairwise_outcome(ab, ba);
    const Outcome b = pairwise_outcome(ba, ab);  // same judgements, roles swapped
    if (a == Outcome::kWin) CHECK(b == Outcome::kLose);
    if (a == Outcome::kLose) CHECK(b == Outcome::kWin);
    if (a == Outcome::kTie) CHECK(b == Outcome::kTie);
  }
}

TEST_CASE("winning score matches the published tallies") {
  const auto t1 = winning_score(tally(74, 84, 60));
  CHECK(t1.total == 218);
  CHECK(t1.winning_score == doctest::Approx(1.0 + 14.0 / 218.0).epsilon(1e-15));
  CHECK(display_score(t1.winning_score) == "1.06");
  const auto t2 = winning_score(tally(73, 79, 66));
  CHECK(t2.winning_score == doctest::Approx(1.0321).epsilon(1e-4));
  CHECK(display_score(t2.winning_score) == "1.03");
}

TEST_CASE("winning score endpoints and invariants") {
  CHECK(winning_score(tally(10, 0, 0)).winning_score == 2.0);
  CHECK(winning_score(tally(0, 0, 10)).winning_score == 0.0);
  CHECK(winning_score(tally(0, 7, 0)).winning_score == 1.0);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    const auto t = winning_score(tally(rng() % 50, rng() % 50, 1 + rng() % 50));
    CHECK(t.wins + t.ties + t.losses == t.total);
    CHECK(t.winning_score ==
          doctest::Approx((double(t.wins) - double(t.losses)) / double(t.total) + 1.0));
  }
  CHECK_THROWS(winning_score({}));
}

TEST_CASE("display rounding is half-even on exact halves") {
  CHECK(display_score(1.125) == "1.12");
  CHECK(display_score(1.375) == "1.38");
  CHECK(display_score(2.0) == "2.00");
  // (72 - 59) / 218 + 1 rounds up to 1.06.
  CHECK(display_score(1.0 + 13.0 / 218.0) == "1.06");
}

TEST_CASE("transcript round trip") {
  auto dir = scratch_dir("transcript");
  const std::vector<TranscriptEntry> e{{"a", "ab", 7, 3}, {"a", "ba", 4, 8}};
  write_transcript(dir / "t.jsonl", e);
  const auto back = read_transcript(dir / "t.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].order == "ba");
  CHECK(back[1].score_b == 8.0);
}

TEST_CASE("histogram and length statistics") {
  const auto h = histogram({0.0, 0.1, 0.95, 1.0, std::nan(""), 5.0}, 0.0, 1.0, 4);
  CHECK(h.edges.size() == 5);
  CHECK(h.counts == std::vector<std::size_t>{2, 0, 0, 2});
  const auto s = length_stats({4, 1, 3, 2});
  CHECK(s.mean == 2.5);
  CHECK(s.median == 2.5);
  CHECK(s.min == 1);
  CHECK(s.max == 4);
}

TEST_CASE("report: full selection reproduces the full length distribution") {
  auto dir = scratch_dir("report-full");
  std::vector<Triplet> d;
  std::vector<double> gamma;
  for (int i = 0; i < 30; ++i) {
    d.push_back({"id" + std::to_string(100 + i), "q", std::nullopt,
                 std::string(static_cast<std::size_t>(1 + i % 7) * 2, 'w'), std::nullopt});
    std::string words;
    for (int k = 0; k <= i % 7; ++k) words += "w ";
    d.back().response = words;
    gamma.push_back(0.01 * i);
  }
  DirectionScores s;
  for (auto& t : d) s.ids.push_back(t.id);
  s.gamma = gamma;
  s.gamma_app = gamma;
  s.gamma_awy.assign(30, 0.0);
  s.lambda.assign(30, 1.0);
  const auto sel = select_topk(s, 1.0);
  const auto rep = write_report(sel, d, s, dir, {{"source", "test"}}, 10);
  CHECK(rep.full_length_hist.counts == rep.selected_length_hist.counts);
  CHECK(rep.full_lengths.mean == rep.selected_lengths.mean);
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(rep.json["provenance"]["source"] == "test");
  CHECK(rep.json["top_ids"][0] == "id129");
  CHECK(rep.json["bottom_ids"][0] == "id100");
}

TEST_CASE("report: short-response selection has a shorter mean length") {
  auto dir = scratch_dir("report-bimodal");
  std::vector<Triplet> d;
  DirectionScores s;
  for (int i = 0; i < 40; ++i) {
    const bool short_one = i % 2 == 0;
    std::string words;
    for (int k = 0; k < (short_one ? 3 : 30); ++k) words += "tok ";
    d.push_back({"s" + std::to_string(i), "q", std::nullopt, words, std::nullopt});
    s.ids.push_back(d.back().id);
    s.gamma.push_back(short_one ? 1.0 : -1.0);
  }
  s.gamma_app = s.gamma;
  s.gamma_awy.assign(40, 0.0);
  s.lambda.assign(40, 1.0);
  const auto rep = write_report(select_topk(s, 0.5), d, s, dir, {}, 20);
  CHECK(rep.selected_lengths.mean < rep.full_lengths.mean);
  CHECK(rep.selected_lengths.mean == 3.0);

  // Empty bins serialize as explicit zero counts.
  const std::string csv = read_file(dir / "length_hist.csv");
  CHECK(csv.rfind("bin_lo,bin_hi,full,selected\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);
  CHECK(csv.find(",0,0\n") != std::string::npos);
  const auto j = nlohmann::json::parse(read_file(dir / "report.json"));
  for (const auto& c : j["length"]["selected_hist"]["counts"]) CHECK(c.is_number_unsigned());

  SelectionResult bogus;
  bogus.selected_ids = {"missing"};
  CHECK_THROWS_WITH(write_report(bogus, d, s, dir, {}, 5), doctest::Contains("missing"));
}
