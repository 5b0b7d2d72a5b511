#include "prods/scoring.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "prods/common.h"

namespace prods {

using nlohmann::json;

std::string to_string(CorrelationKind k) { return k == CorrelationKind::kCosine ? "cosine" : "mul"; }
std::string to_string(Aggregation a) { return a == Aggregation::kWeight ? "weight" : "avg"; }
std::string to_string(SynthesisMode m) {
  switch (m) {
    case SynthesisMode::kAnnealing: return "annealing";
    case SynthesisMode::kFixed: return "fixed";
    case SynthesisMode::kUnified: return "unified";
  }
  return "annealing";
}

CorrelationKind parse_correlation_kind(const std::string& s) {
  if (s == "cosine" || s == "cos") return CorrelationKind::kCosine;
  if (s == "mul") return CorrelationKind::kMul;
  fail(ErrorKind::kConfig, "unknown correlation kind '" + s + "'");
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "weight") return Aggregation::kWeight;
  if (s == "avg") return Aggregation::kAvg;
  fail(ErrorKind::kConfig, "unknown aggregation '" + s + "'");
}

SynthesisMode parse_synthesis_mode(const std::string& s) {
  if (s == "annealing") return SynthesisMode::kAnnealing;
  if (s == "fixed") return SynthesisMode::kFixed;
  if (s == "unified") return SynthesisMode::kUnified;
  fail(ErrorKind::kConfig, "unknown synthesis mode '" + s + "'");
}

namespace {

std::vector<double> row_norms(const GradientMatrix& g) {
  std::vector<double> n(g.rows);
  for (std::size_t r = 0; r < g.rows; ++r) n[r] = l2_norm(g.row(r));
  return n;
}

}  // namespace

CorrelationMatrix correlation(const GradientMatrix& train, const GradientMatrix& val,
                              CorrelationKind kind, const CorrelationOptions& opts) {
  if (train.dim != val.dim)
    fail(ErrorKind::kInvalidArgument, "correlation: dimension mismatch (" +
                                          std::to_string(train.dim) + " vs " +
                                          std::to_string(val.dim) + ")");
  CorrelationMatrix m;
  m.rows = train.rows;
  m.cols = val.rows;
  m.kind = kind;
  m.train_ids = train.manifest.ids;
  m.val_ids = val.manifest.ids;
  m.values.assign(m.rows * m.cols, 0.0);

  const auto tn = row_norms(train);
  const auto vn = row_norms(val);
  std::vector<char> excluded(m.rows, 0);
  if (kind == CorrelationKind::kCosine) {
    for (std::size_t j = 0; j < m.cols; ++j)
      if (vn[j] == 0.0)
        fail(ErrorKind::kNumeric, "zero-norm validation gradient '" + m.val_ids[j] + "'");
    for (std::size_t i = 0; i < m.rows; ++i) {
      if (tn[i] != 0.0) continue;
      if (opts.zero_train_rows == ZeroRowPolicy::kError)
        fail(ErrorKind::kNumeric, "zero-norm training gradient '" + m.train_ids[i] + "'");
      excluded[i] = 1;
      m.excluded_rows.push_back(i);
    }
    if (!m.excluded_rows.empty())
      spdlog::warn("{} zero-norm training gradients excluded from scoring",
                   m.excluded_rows.size());
  }

  const std::size_t block = std::max<std::size_t>(1, opts.block_rows);
  const std::size_t n_blocks = (m.rows + block - 1) / block;
  parallel_for(n_blocks, opts.threads, [&](std::size_t b) {
    const std::size_t end = std::min(m.rows, (b + 1) * block);
    for (std::size_t i = b * block; i < end; ++i) {
      if (excluded[i]) continue;
      for (std::size_t j = 0; j < m.cols; ++j) {
        double v = dot(train.row(i), val.row(j));
        if (kind == CorrelationKind::kCosine) v = std::clamp(v / (tn[i] * vn[j]), -1.0, 1.0);
        m.values[i * m.cols + j] = v;
      }
    }
  });
  return m;
}

std::vector<double> direction_score(const CorrelationMatrix& m, const GradientMatrix& val,
                                    Aggregation aggregation, bool normalize_weights) {
  require(m.val_ids == val.manifest.ids, "direction_score: validation ids do not match");
  if (m.cols == 0) fail(ErrorKind::kInvalidArgument, "direction_score: empty validation set");
  std::vector<double> w(m.cols);
  if (aggregation == Aggregation::kWeight) {
    double total = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      w[j] = l2_norm(val.row(j));
      total += w[j];
    }
    if (total == 0.0)
      fail(ErrorKind::kNumeric, "direction_score: all validation gradients have zero norm");
    if (normalize_weights)
      for (double& x : w) x /= total;
  } else {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(m.cols));
  }
  std::vector<double> out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) s += m.at(i, j) * w[j];
    out[i] = s;
  }
  for (std::size_t i : m.excluded_rows) out[i] = kExcludedScore;
  return out;
}

DirectionScores unified_score(const GradientMatrix& train, const GradientMatrix& val_unified,
                              const CorrelationOptions& opts) {
  if (val_unified.rows == 0)
    fail(ErrorKind::kInvalidArgument, "unified scoring needs a nonempty validation set");
  const auto m = correlation(train, val_unified, CorrelationKind::kCosine, opts);
  DirectionScores s;
  s.ids = train.manifest.ids;
  s.gamma = direction_score(m, val_unified, Aggregation::kWeight);
  s.gamma_app = s.gamma;
  s.gamma_awy.assign(s.gamma.size(), 0.0);
  s.lambda.assign(s.gamma.size(), 1.0);
  s.aggregation = Aggregation::kWeight;
  s.synthesis = SynthesisMode::kUnified;
  return s;
}

namespace {

json score_value(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
double score_from(const json& j) { return j.is_null() ? kExcludedScore : j.get<double>(); }

}  // namespace

void write_scores(const std::filesystem::path& path, const ScoresFile& s) {
  require(s.ids.size() == s.gamma_app.size() && s.ids.size() == s.gamma_awy.size(),
          "scores: column lengths differ");
  std::string out = json{{"manifest", s.manifest}}.dump() + "\n";
  for (std::size_t i = 0; i < s.ids.size(); ++i)
    out += json{{"id", s.ids[i]},
                {"gamma_app", score_value(s.gamma_app[i])},
                {"gamma_awy", score_value(s.gamma_awy[i])}}
               .dump() +
           "\n";
  write_file(path, out);
}

ScoresFile read_scores(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  ScoresFile s;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    if (end > pos) {
      try {
        const json j = json::parse(text.substr(pos, end - pos));
        if (j.contains("manifest")) {
          s.manifest = j["manifest"];
        } else {
          s.ids.push_back(j.at("id").get<std::string>());
          s.gamma_app.push_back(score_from(j.at("gamma_app")));
          s.gamma_awy.push_back(score_from(j.at("gamma_awy")));
        }
      } catch (const json::exception& e) {
        fail(ErrorKind::kFormat, path.string() + " line " + std::to_string(line_no) + ": " +
                                     e.what());
      }
    }
    pos = end + 1;
  }
  return s;
}

}  // namespace prods
