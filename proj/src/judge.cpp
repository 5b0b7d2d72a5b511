#include "prods/judge.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <unordered_map>

#include "httplib.h"
#include "json.hpp"
#include "prods/common.h"

namespace prods {

using nlohmann::json;

bool Judge::consistent(std::string_view context, std::string_view reference,
                       std::string_view candidate) {
  const JudgeVerdict v = judge({std::string(context), std::string(reference),
                                std::string(candidate), std::string(reference)});
  return v.score_b >= v.score_a;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double token_overlap(std::string_view a, std::string_view b) {
  const auto ta = word_tokens(a);
  const auto tb = word_tokens(b);
  if (ta.empty() && tb.empty()) return 1.0;
  if (ta.empty() || tb.empty()) return 0.0;
  std::unordered_map<std::string, long> counts;
  for (const auto& t : ta) ++counts[t];
  long common = 0;
  for (const auto& t : tb) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  return 2.0 * static_cast<double>(common) /
         static_cast<double>(ta.size() + tb.size());
}

namespace {

const std::string& reference_of(const JudgeRequest& r) {
  return r.reference ? *r.reference : r.context;
}

double exact_score(std::string_view resp, std::string_view ref) {
  if (resp == ref) return 10.0;
  return 1.0 + 8.0 * token_overlap(resp, ref);
}

double overlap_score(std::string_view resp, std::string_view ref) {
  return 1.0 + 9.0 * token_overlap(resp, ref);
}

double length_score(std::string_view resp, std::string_view ref) {
  const double len = static_cast<double>(word_tokens(resp).size());
  const double ref_len = static_cast<double>(word_tokens(ref).size());
  return 1.0 + 9.0 * std::exp(-std::abs(len - ref_len) / std::max(ref_len, 1.0));
}

}  // namespace

JudgeVerdict ExactMatchJudge::judge(const JudgeRequest& r) {
  const auto& ref = reference_of(r);
  return {exact_score(r.resp_a, ref), exact_score(r.resp_b, ref), "exact-match"};
}

bool ExactMatchJudge::consistent(std::string_view, std::string_view reference,
                                 std::string_view candidate) {
  return reference == candidate;
}

JudgeVerdict TokenOverlapJudge::judge(const JudgeRequest& r) {
  const auto& ref = reference_of(r);
  return {overlap_score(r.resp_a, ref), overlap_score(r.resp_b, ref), "token-overlap"};
}

bool TokenOverlapJudge::consistent(std::string_view, std::string_view reference,
                                   std::string_view candidate) {
  return token_overlap(reference, candidate) >= threshold_;
}

JudgeVerdict LengthHeuristicJudge::judge(const JudgeRequest& r) {
  const auto& ref = reference_of(r);
  return {length_score(r.resp_a, ref), length_score(r.resp_b, ref), "length-heuristic"};
}

RemoteJudgeConfig RemoteJudgeConfig::from_env() {
  RemoteJudgeConfig cfg;
  if (const char* url = std::getenv("PRODS_JUDGE_URL")) cfg.url = url;
  if (const char* key = std::getenv("PRODS_JUDGE_KEY")) cfg.api_key = key;
  return cfg;
}

RemoteJudge::RemoteJudge(RemoteJudgeConfig cfg) : cfg_(std::move(cfg)) {
  const auto scheme_end = cfg_.url.find("://");
  if (cfg_.url.empty() || scheme_end == std::string::npos)
    fail(ErrorKind::kConfig, "remote judge needs an absolute URL (PRODS_JUDGE_URL)");
  const auto path_start = cfg_.url.find('/', scheme_end + 3);
  scheme_host_port_ = cfg_.url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : cfg_.url.substr(path_start);
}

std::string render_judge_prompt(const JudgeRequest& r) {
  std::string p =
      "You are a helpful and precise assistant for checking the quality of "
      "answers.\n\n[Question]\n" +
      r.context + "\n\n";
  if (r.reference) p += "[Reference Answer]\n" + *r.reference + "\n\n";
  p += "[The Start of Assistant 1's Answer]\n" + r.resp_a +
       "\n[The End of Assistant 1's Answer]\n\n[The Start of Assistant 2's Answer]\n" +
       r.resp_b +
       "\n[The End of Assistant 2's Answer]\n\n"
       "Rate the helpfulness, relevance, accuracy and level of detail of each "
       "answer on a scale of 1 to 10, where higher is better. Explain briefly, "
       "then finish with a single line in exactly this format:\n"
       "SCORES: <score for Assistant 1> <score for Assistant 2>\n";
  return p;
}

JudgeVerdict parse_judge_scores(std::string_view text) {
  constexpr std::string_view kMarker = "SCORES:";
  const auto at = text.rfind(kMarker);
  if (at == std::string_view::npos)
    fail(ErrorKind::kJudge, "malformed judge output: no SCORES line");
  std::string_view rest = text.substr(at + kMarker.size());
  rest = rest.substr(0, rest.find('\n'));
  double vals[2];
  const char* p = rest.data();
  const char* end = rest.data() + rest.size();
  for (double& v : vals) {
    while (p < end && (*p == ' ' || *p == '\t' || *p == ',')) ++p;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || next == p)
      fail(ErrorKind::kJudge,
           "malformed judge output: unparseable scores '" + std::string(rest) + "'");
    p = next;
  }
  for (double v : vals)
    if (!(v >= 1.0 && v <= 10.0))
      fail(ErrorKind::kJudge, "malformed judge output: score outside [1, 10]");
  return {vals[0], vals[1], std::string(text)};
}

JudgeVerdict RemoteJudge::judge(const JudgeRequest& r) {
  const json body{{"model", cfg_.model},
                  {"messages", json::array({{{"role", "user"},
                                             {"content", render_judge_prompt(r)}}})},
                  {"temperature", 0}};
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!cfg_.api_key.empty())
    headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  std::string last_error;
  auto delay = cfg_.backoff;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay = std::min(delay * 2, cfg_.backoff_cap);
    }
    httplib::Client cli(scheme_host_port_);
    cli.set_connection_timeout(cfg_.timeout);
    cli.set_read_timeout(cfg_.timeout);
    auto res = cli.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      fail(ErrorKind::kJudge, "judge endpoint returned HTTP " + std::to_string(res->status));
    std::string content;
    try {
      const json reply = json::parse(res->body);
      content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      fail(ErrorKind::kJudge, "malformed judge output: unexpected response body");
    }
    return parse_judge_scores(content);
  }
  fail(ErrorKind::kJudge, "judge unreachable after " + std::to_string(cfg_.max_retries) +
                              " retries: " + last_error);
}

CachingJudge::CachingJudge(std::shared_ptr<Judge> inner, std::filesystem::path cache_file)
    : inner_(std::move(inner)), cache_file_(std::move(cache_file)) {
  if (!std::filesystem::exists(cache_file_)) return;
  const std::string text = read_file(cache_file_);
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) {
      const json j = json::parse(text.substr(pos, end - pos), nullptr, false);
      // A torn final line from an interrupted run is ignored.
      if (!j.is_discarded() && j.contains("key"))
        cache_[j["key"].get<std::string>()] = {j["score_a"].get<double>(),
                                               j["score_b"].get<double>(),
                                               j.value("raw", std::string())};
    }
    pos = end + 1;
  }
}

namespace {

std::string cache_key(const std::string& judge_name, const JudgeRequest& r) {
  json j{{"judge", judge_name},
         {"context", r.context},
         {"a", r.resp_a},
         {"b", r.resp_b},
         {"reference", r.reference ? json(*r.reference) : json(nullptr)}};
  return sha256_hex(j.dump());
}

}  // namespace

JudgeVerdict CachingJudge::judge(const JudgeRequest& r) {
  const std::string key = cache_key(inner_->name(), r);
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  JudgeVerdict v = inner_->judge(r);
  std::lock_guard<std::mutex> lock(mu_);
  cache_[key] = v;
  std::ofstream out(cache_file_, std::ios::app);
  out << json{{"key", key}, {"score_a", v.score_a}, {"score_b", v.score_b}, {"raw", v.raw}}
             .dump()
      << '\n';
  return v;
}

bool CachingJudge::consistent(std::string_view context, std::string_view reference,
                              std::string_view candidate) {
  // Local judges define consistency without scores; remote ones go through
  // the cached judge() path via the base implementation.
  if (dynamic_cast<RemoteJudge*>(inner_.get()) == nullptr)
    return inner_->consistent(context, reference, candidate);
  return Judge::consistent(context, reference, candidate);
}

std::size_t CachingJudge::hits() const {
  std::lock_guard<std::mutex> lock(mu_);
  return hits_;
}

std::shared_ptr<Judge> make_judge(std::string_view kind, double overlap_threshold,
                                  const RemoteJudgeConfig& remote) {
  if (kind == "exact-match") return std::make_shared<ExactMatchJudge>();
  if (kind == "token-overlap") return std::make_shared<TokenOverlapJudge>(overlap_threshold);
  if (kind == "length-heuristic") return std::make_shared<LengthHeuristicJudge>();
  if (kind == "remote") return std::make_shared<RemoteJudge>(remote);
  fail(ErrorKind::kConfig, "unknown judge kind '" + std::string(kind) + "'");
}

JudgeVerdict judge_pairwise(std::string_view context, std::string_view resp_a,
                            std::string_view resp_b, Judge& judge,
                            std::optional<std::string> reference) {
  JudgeVerdict v = judge.judge({std::string(context), std::string(resp_a),
                                std::string(resp_b), std::move(reference)});
  if (!(v.score_a >= 1.0 && v.score_a <= 10.0 && v.score_b >= 1.0 && v.score_b <= 10.0))
    fail(ErrorKind::kJudge, "judge returned a score outside [1, 10]");
  return v;
}

std::vector<JudgeVerdict> judge_batch(Judge& judge,
                                      const std::vector<JudgeRequest>& requests,
                                      std::size_t max_inflight) {
  std::vector<JudgeVerdict> out(requests.size());
  parallel_for(requests.size(), std::max<std::size_t>(1, max_inflight), [&](std::size_t i) {
    const auto& r = requests[i];
    out[i] = judge_pairwise(r.context, r.resp_a, r.resp_b, judge, r.reference);
  });
  return out;
}

}  // namespace prods
