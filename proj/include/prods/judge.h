#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace prods {

struct JudgeVerdict {
  double score_a = 1.0;
  double score_b = 1.0;
  std::string raw;
};

struct JudgeRequest {
  std::string context;
  std::string resp_a;
  std::string resp_b;
  std::optional<std::string> reference;
};

/// A pairwise response scorer. Scores lie in [1, 10].
class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string name() const = 0;
  virtual JudgeVerdict judge(const JudgeRequest& request) = 0;

  /// True when `candidate` is judged equivalent to `reference`. The default
  /// scores (reference, candidate) and accepts when the candidate is not
  /// rated below the reference.
  virtual bool consistent(std::string_view context, std::string_view reference,
                          std::string_view candidate);
};

/// Lowercased whitespace tokens.
std::vector<std::string> word_tokens(std::string_view text);

/// Multiset token F1 between two texts; 1 when both are empty.
double token_overlap(std::string_view a, std::string_view b);

// Local judges score each response against the reference (or the context
// when no reference is given). They are pure and swap-symmetric.

/// 10 on an exact match, otherwise 1 + 8 * overlap.
class ExactMatchJudge : public Judge {
 public:
  std::string name() const override { return "exact-match"; }
  JudgeVerdict judge(const JudgeRequest& request) override;
  bool consistent(std::string_view context, std::string_view reference,
                  std::string_view candidate) override;
};

/// 1 + 9 * overlap. Consistent when overlap >= threshold.
class TokenOverlapJudge : public Judge {
 public:
  explicit TokenOverlapJudge(double threshold = 0.9) : threshold_(threshold) {}
  std::string name() const override { return "token-overlap"; }
  JudgeVerdict judge(const JudgeRequest& request) override;
  bool consistent(std::string_view context, std::string_view reference,
                  std::string_view candidate) override;

 private:
  double threshold_;
};

/// Rewards token counts close to the reference's:
/// 1 + 9 * exp(-|len - ref_len| / max(ref_len, 1)).
class LengthHeuristicJudge : public Judge {
 public:
  std::string name() const override { return "length-heuristic"; }
  JudgeVerdict judge(const JudgeRequest& request) override;
};

struct RemoteJudgeConfig {
  std::string url;  // http://host:port/path
  std::string api_key;
  std::string model = "gpt-4";
  int max_retries = 4;
  std::chrono::milliseconds backoff{200};
  std::chrono::milliseconds backoff_cap{5000};
  std::chrono::seconds timeout{60};

  /// url and key from PRODS_JUDGE_URL / PRODS_JUDGE_KEY.
  static RemoteJudgeConfig from_env();
};

/// Chat-completions client. The prompt asks for a final line
/// "SCORES: <a> <b>".
class RemoteJudge : public Judge {
 public:
  explicit RemoteJudge(RemoteJudgeConfig cfg);
  std::string name() const override { return "remote:" + cfg_.model; }
  JudgeVerdict judge(const JudgeRequest& request) override;

 private:
  RemoteJudgeConfig cfg_;
  std::string scheme_host_port_;
  std::string path_;
};

std::string render_judge_prompt(const JudgeRequest& request);

/// Parses the "SCORES: <a> <b>" line. Throws kJudge when absent, non-numeric
/// or outside [1, 10].
JudgeVerdict parse_judge_scores(std::string_view text);

/// Memoizes another judge's verdicts in a JSONL file keyed by a content hash.
class CachingJudge : public Judge {
 public:
  CachingJudge(std::shared_ptr<Judge> inner, std::filesystem::path cache_file);
  std::string name() const override { return inner_->name(); }
  JudgeVerdict judge(const JudgeRequest& request) override;
  bool consistent(std::string_view context, std::string_view reference,
                  std::string_view candidate) override;
  std::size_t hits() const;

 private:
  std::shared_ptr<Judge> inner_;
  std::filesystem::path cache_file_;
  mutable std::mutex mu_;
  std::map<std::string, JudgeVerdict> cache_;
  std::size_t hits_ = 0;
};

std::shared_ptr<Judge> make_judge(std::string_view kind, double overlap_threshold,
                                  const RemoteJudgeConfig& remote);

JudgeVerdict judge_pairwise(std::string_view context, std::string_view resp_a,
                            std::string_view resp_b, Judge& judge,
                            std::optional<std::string> reference = std::nullopt);

/// Judges requests with at most max_inflight concurrent calls; results are
/// returned in request order.
std::vector<JudgeVerdict> judge_batch(Judge& judge,
                                      const std::vector<JudgeRequest>& requests,
                                      std::size_t max_inflight);

}  // namespace prods
