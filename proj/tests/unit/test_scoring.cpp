#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "prods/common.h"
#include "prods/scoring.h"
#include "test_support.h"

using namespace prods;
using namespace prods::testing;

namespace {

double naive_cell(const GradientMatrix& t, std::size_t i, const GradientMatrix& v, std::size_t j,
                  CorrelationKind kind) {
  double d = 0.0, nt = 0.0, nv = 0.0;
  for (std::size_t k = 0; k < t.dim; ++k) {
    d += t.data[i * t.dim + k] * v.data[j * v.dim + k];
    nt += t.data[i * t.dim + k] * t.data[i * t.dim + k];
    nv += v.data[j * v.dim + k] * v.data[j * v.dim + k];
  }
  return kind == CorrelationKind::kCosine ? d / (std::sqrt(nt) * std::sqrt(nv)) : d;
}

std::vector<double> naive_score(const GradientMatrix& t, const GradientMatrix& v,
                                CorrelationKind kind, Aggregation agg) {
  std::vector<double> norms(v.rows);
  double total = 0.0;
  for (std::size_t j = 0; j < v.rows; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < v.dim; ++k) s += v.data[j * v.dim + k] * v.data[j * v.dim + k];
    norms[j] = std::sqrt(s);
    total += norms[j];
  }
  std::vector<double> out(t.rows, 0.0);
  for (std::size_t i = 0; i < t.rows; ++i)
    for (std::size_t j = 0; j < v.rows; ++j) {
      const double w = agg == Aggregation::kWeight ? norms[j] / total : 1.0 / v.rows;
      out[i] += naive_cell(t, i, v, j, kind) * w;
    }
  return out;
}

std::vector<std::size_t> argsort(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] > v[b]; });
  return idx;
}

}  // namespace

TEST_CASE("enum parsing") {
  CHECK(parse_correlation_kind("cosine") == CorrelationKind::kCosine);
  CHECK(parse_correlation_kind("mul") == CorrelationKind::kMul);
  CHECK(parse_aggregation("avg") == Aggregation::kAvg);
  CHECK(parse_synthesis_mode("fixed") == SynthesisMode::kFixed);
  CHECK(to_string(SynthesisMode::kUnified) == "unified");
  CHECK_THROWS(parse_aggregation("median"));
}

TEST_CASE("self and antipodal cosine") {
  std::mt19937_64 rng(1);
  auto t = random_matrix(3, 10, rng, "t");
  GradientMatrix v = t;
  v.manifest.ids = {"v0", "v1", "v2"};
  for (std::size_t k = 0; k < 10; ++k) v.data[10 + k] = -t.data[10 + k];
  const auto m = correlation(t, v, CorrelationKind::kCosine);
  CHECK(m.at(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(m.at(1, 1) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(m.train_ids == t.manifest.ids);
  CHECK(m.val_ids == v.manifest.ids);
}

TEST_CASE("correlation matches the double-loop oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 64, l = 1 + rng() % 32, d = 1 + rng() % 24;
    const auto t = random_matrix(n, d, rng, "t");
    const auto v = random_matrix(l, d, rng, "v");
    for (auto kind : {CorrelationKind::kCosine, CorrelationKind::kMul}) {
      CorrelationOptions opts;
      opts.block_rows = 1 + rng() % 9;
      const auto m = correlation(t, v, kind, opts);
      REQUIRE(m.rows == n);
      REQUIRE(m.cols == l);
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < l; ++j) {
          worst = std::max(worst, std::abs(m.at(i, j) - naive_cell(t, i, v, j, kind)));
          if (kind == CorrelationKind::kCosine) {
            CHECK(m.at(i, j) <= 1.0 + 1e-9);
            CHECK(m.at(i, j) >= -1.0 - 1e-9);
          }
        }
      CHECK(worst < 1e-12);
    }
  }
}

TEST_CASE("parallel correlation equals serial bitwise") {
  std::mt19937_64 rng(3);
  const auto t = random_matrix(70, 16, rng), v = random_matrix(9, 16, rng);
  CorrelationOptions serial;
  serial.block_rows = 8;
  const auto a = correlation(t, v, CorrelationKind::kCosine, serial);
  for (std::size_t th : {2u, 5u}) {
    CorrelationOptions par = serial;
    par.threads = th;
    CHECK(correlation(t, v, CorrelationKind::kCosine, par).values == a.values);
  }
}

TEST_CASE("zero-norm rows") {
  std::mt19937_64 rng(4);
  auto t = random_matrix(4, 5, rng, "t");
  auto v = random_matrix(2, 5, rng, "v");
  std::fill_n(t.data.begin() + 10, 5, 0.0);  // row t2
  CHECK_THROWS_WITH(correlation(t, v, CorrelationKind::kCosine), doctest::Contains("'t2'"));
  CHECK_NOTHROW(correlation(t, v, CorrelationKind::kMul));

  CorrelationOptions opts;
  opts.zero_train_rows = ZeroRowPolicy::kSentinel;
  const auto m = correlation(t, v, CorrelationKind::kCosine, opts);
  CHECK(m.excluded_rows == std::vector<std::size_t>{2});
  const auto s = direction_score(m, v, Aggregation::kWeight);
  CHECK(s[2] == kExcludedScore);
  CHECK(std::isfinite(s[0]));

  std::fill_n(v.data.begin(), 5, 0.0);
  CHECK_THROWS_WITH(correlation(t, v, CorrelationKind::kCosine, opts), doctest::Contains("'v0'"));
}

TEST_CASE("direction score matches the summation oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 64, l = 1 + rng() % 32, d = 2 + rng() % 16;
    const auto t = random_matrix(n, d, rng, "t");
    const auto v = random_matrix(l, d, rng, "v");
    for (auto kind : {CorrelationKind::kCosine, CorrelationKind::kMul})
      for (auto agg : {Aggregation::kWeight, Aggregation::kAvg}) {
        const auto got = direction_score(correlation(t, v, kind), v, agg);
        const auto want = naive_score(t, v, kind, agg);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
      }
  }
}

TEST_CASE("single column and equal-norm special cases") {
  std::mt19937_64 rng(6);
  const auto t = random_matrix(6, 4, rng, "t");
  const auto v1 = random_matrix(1, 4, rng, "v");
  const auto m1 = correlation(t, v1, CorrelationKind::kCosine);
  const auto s1 = direction_score(m1, v1, Aggregation::kWeight);
  for (std::size_t i = 0; i < 6; ++i) CHECK(s1[i] == doctest::Approx(m1.at(i, 0)).epsilon(1e-15));

  auto v = random_matrix(4, 4, rng, "v");
  for (std::size_t j = 0; j < 4; ++j) {
    const double n = l2_norm(v.row(j));
    for (double& x : v.row(j)) x /= n;
  }
  const auto m = correlation(t, v, CorrelationKind::kCosine);
  const auto w = direction_score(m, v, Aggregation::kWeight);
  const auto a = direction_score(m, v, Aggregation::kAvg);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(w[i] - a[i]) < 1e-12);
}

TEST_CASE("raw weights scale the normalized score by the total norm") {
  std::mt19937_64 rng(7);
  const auto t = random_matrix(5, 6, rng), v = random_matrix(3, 6, rng);
  const auto m = correlation(t, v, CorrelationKind::kCosine);
  double total = 0.0;
  for (std::size_t j = 0; j < 3; ++j) total += l2_norm(v.row(j));
  const auto norm = direction_score(m, v, Aggregation::kWeight, true);
  const auto raw = direction_score(m, v, Aggregation::kWeight, false);
  for (std::size_t i = 0; i < 5; ++i) CHECK(raw[i] == doctest::Approx(norm[i] * total).epsilon(1e-12));
}

TEST_CASE("direction score is linear in M for fixed weights") {
  std::mt19937_64 rng(8);
  const auto t = random_matrix(7, 5, rng), v = random_matrix(4, 5, rng);
  auto m1 = correlation(t, v, CorrelationKind::kMul);
  auto m2 = m1;
  for (double& x : m2.values) x = std::sin(x);
  auto mix = m1;
  for (std::size_t k = 0; k < mix.values.size(); ++k) mix.values[k] = 2.0 * m1.values[k] - 0.5 * m2.values[k];
  const auto s1 = direction_score(m1, v, Aggregation::kWeight);
  const auto s2 = direction_score(m2, v, Aggregation::kWeight);
  const auto sm = direction_score(mix, v, Aggregation::kWeight);
  for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(sm[i] - (2.0 * s1[i] - 0.5 * s2[i])) < 1e-12);
}

TEST_CASE("ranking is invariant to positive rescaling of the validation gradients") {
  std::mt19937_64 rng(9);
  const auto t = random_matrix(30, 8, rng), v = random_matrix(5, 8, rng);
  const auto base = direction_score(correlation(t, v, CorrelationKind::kCosine), v, Aggregation::kWeight);
  auto scaled = v;
  for (double& x : scaled.data) x *= 37.5;
  const auto after =
      direction_score(correlation(t, scaled, CorrelationKind::kCosine), scaled, Aggregation::kWeight);
  CHECK(argsort(base) == argsort(after));
}

TEST_CASE("unified score") {
  std::mt19937_64 rng(10);
  const auto t = random_matrix(12, 6, rng, "t"), v = random_matrix(4, 6, rng, "v");
  const auto u = unified_score(t, v);
  const auto composed = direction_score(correlation(t, v, CorrelationKind::kCosine), v, Aggregation::kWeight);
  CHECK(u.gamma == composed);
  CHECK(u.gamma_app == composed);
  CHECK(u.synthesis == SynthesisMode::kUnified);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(u.gamma_awy[i] == 0.0);
    CHECK(u.lambda[i] == 1.0);
  }
  CHECK(u.ids == t.manifest.ids);
  GradientMatrix empty;
  empty.dim = 6;
  CHECK_THROWS(unified_score(t, empty));
}

TEST_CASE("dimension mismatch and id mismatch") {
  std::mt19937_64 rng(11);
  const auto t = random_matrix(3, 4, rng), v = random_matrix(2, 5, rng);
  CHECK_THROWS(correlation(t, v, CorrelationKind::kCosine));
  const auto v2 = random_matrix(2, 4, rng, "a");
  const auto m = correlation(t, v2, CorrelationKind::kCosine);
  auto other = v2;
  other.manifest.ids = {"x", "y"};
  CHECK_THROWS(direction_score(m, other, Aggregation::kAvg));
}

TEST_CASE("scores file round trip keeps excluded entries") {
  auto dir = scratch_dir("scores");
  ScoresFile s;
  s.manifest = {{"kind", "cosine"}};
  s.ids = {"a", "b", "c"};
  s.gamma_app = {0.25, kExcludedScore, -0.125};
  s.gamma_awy = {0.5, kExcludedScore, 0.1};
  write_scores(dir / "s.jsonl", s);
  const auto back = read_scores(dir / "s.jsonl");
  CHECK(back.manifest == s.manifest);
  CHECK(back.ids == s.ids);
  CHECK(back.gamma_app == s.gamma_app);
  CHECK(back.gamma_awy == s.gamma_awy);
  write_file(dir / "bad.jsonl", "{\"manifest\":{}}\n{\"id\":\"a\"}\n");
  CHECK_THROWS_WITH(read_scores(dir / "bad.jsonl"), doctest::Contains("line 2"));
}
