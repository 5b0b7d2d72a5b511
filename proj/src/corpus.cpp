#include "prods/corpus.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "json.hpp"
#include "prods/common.h"

namespace prods {

using nlohmann::json;

std::string Triplet::context() const {
  if (input && !input->empty()) return instruction + "\n" + *input;
  return instruction;
}

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::kApp: return "app";
    case Direction::kAwy: return "awy";
    case Direction::kUnified: return "unified";
  }
  return "unified";
}

Direction parse_direction(std::string_view s) {
  if (s == "app") return Direction::kApp;
  if (s == "awy") return Direction::kAwy;
  if (s == "unified") return Direction::kUnified;
  fail(ErrorKind::kFormat, "unknown pair direction '" + std::string(s) + "'");
}

void validate_pair(const PreferencePair& pair) {
  require(pair.preferred != pair.dispreferred,
          "pair " + pair.id + ": preferred equals dispreferred");
  if (pair.score_cmp && pair.score_base) {
    if (pair.direction == Direction::kApp)
      require(*pair.score_cmp > *pair.score_base,
              "pair " + pair.id + ": app pair needs score_cmp > score_base");
    if (pair.direction == Direction::kAwy)
      require(*pair.score_cmp < *pair.score_base,
              "pair " + pair.id + ": awy pair needs score_cmp < score_base");
  }
}

namespace {

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) fn(line_no, line);
    pos = end + 1;
  }
}

json parse_line(std::string_view line, std::size_t line_no) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) fail(ErrorKind::kFormat, "not a JSON object");
    return j;
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat,
         "line " + std::to_string(line_no) + ": " + std::string(e.what()));
  } catch (const Error& e) {
    fail(ErrorKind::kFormat,
         "line " + std::to_string(line_no) + ": " + std::string(e.what()));
  }
}

std::string string_field(const json& j, const char* key, std::size_t line_no) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string())
    fail(ErrorKind::kFormat, "line " + std::to_string(line_no) +
                                 ": missing string field \"" + key + "\"");
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

std::string to_jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

}  // namespace

std::vector<Triplet> parse_dataset(std::string_view jsonl) {
  std::vector<Triplet> out;
  std::set<std::string> seen;
  for_each_line(jsonl, [&](std::size_t line_no, std::string_view line) {
    const json j = parse_line(line, line_no);
    Triplet t;
    t.id = j.contains("id") ? string_field(j, "id", line_no)
                            : "line-" + std::to_string(line_no);
    t.instruction = string_field(j, "instruction", line_no);
    t.response = string_field(j, "response", line_no);
    t.input = optional_string(j, "input");
    t.subtask = optional_string(j, "subtask");
    if (t.instruction.empty())
      fail(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": empty instruction");
    if (t.response.empty())
      fail(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": empty response");
    if (!seen.insert(t.id).second)
      fail(ErrorKind::kFormat,
           "line " + std::to_string(line_no) + ": duplicate id '" + t.id + "'");
    out.push_back(std::move(t));
  });
  return out;
}

std::vector<Triplet> load_dataset(const std::filesystem::path& path) {
  try {
    return parse_dataset(read_file(path));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kFormat) throw;
    fail(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
}

void write_dataset(const std::filesystem::path& path,
                   const std::vector<Triplet>& data) {
  std::vector<json> rows;
  rows.reserve(data.size());
  for (const auto& t : data) {
    json j{{"id", t.id}, {"instruction", t.instruction}, {"response", t.response}};
    if (t.input) j["input"] = *t.input;
    if (t.subtask) j["subtask"] = *t.subtask;
    rows.push_back(std::move(j));
  }
  write_file(path, to_jsonl(rows));
}

std::vector<PreferencePair> parse_pairs(std::string_view jsonl) {
  std::vector<PreferencePair> out;
  for_each_line(jsonl, [&](std::size_t line_no, std::string_view line) {
    const json j = parse_line(line, line_no);
    PreferencePair p;
    p.id = string_field(j, "id", line_no);
    p.context = string_field(j, "context", line_no);
    p.preferred = string_field(j, "preferred", line_no);
    p.dispreferred = string_field(j, "dispreferred", line_no);
    p.direction = parse_direction(string_field(j, "direction", line_no));
    if (j.contains("score_cmp") && !j["score_cmp"].is_null())
      p.score_cmp = j["score_cmp"].get<double>();
    if (j.contains("score_base") && !j["score_base"].is_null())
      p.score_base = j["score_base"].get<double>();
    validate_pair(p);
    out.push_back(std::move(p));
  });
  return out;
}

std::vector<PreferencePair> load_pairs(const std::filesystem::path& path) {
  return parse_pairs(read_file(path));
}

void write_pairs(const std::filesystem::path& path,
                 const std::vector<PreferencePair>& pairs) {
  std::vector<json> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) {
    json j{{"id", p.id},
           {"context", p.context},
           {"preferred", p.preferred},
           {"dispreferred", p.dispreferred},
           {"direction", std::string(to_string(p.direction))}};
    if (p.score_cmp) j["score_cmp"] = *p.score_cmp;
    if (p.score_base) j["score_base"] = *p.score_base;
    rows.push_back(std::move(j));
  }
  write_file(path, to_jsonl(rows));
}

TextById load_responses(const std::filesystem::path& path) {
  TextById out;
  for_each_line(read_file(path), [&](std::size_t line_no, std::string_view line) {
    const json j = parse_line(line, line_no);
    out[string_field(j, "id", line_no)] = string_field(j, "response", line_no);
  });
  return out;
}

void write_responses(const std::filesystem::path& path, const TextById& texts) {
  std::vector<json> rows;
  for (const auto& [id, text] : texts) rows.push_back({{"id", id}, {"response", text}});
  write_file(path, to_jsonl(rows));
}

std::vector<Triplet> build_validation_set(const std::vector<Triplet>& test,
                                          double fraction,
                                          std::optional<std::size_t> per_subtask,
                                          std::uint64_t seed) {
  std::vector<std::size_t> chosen;
  if (per_subtask) {
    require(*per_subtask >= 1, "per_subtask must be at least 1");
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (!test[i].subtask)
        fail(ErrorKind::kInvalidArgument,
             "per-subtask validation needs a subtask label on '" + test[i].id + "'");
      groups[*test[i].subtask].push_back(i);
    }
    std::uint64_t g = 0;
    for (const auto& [label, members] : groups) {
      if (members.size() < *per_subtask)
        fail(ErrorKind::kInvalidArgument,
             "subtask '" + label + "' has fewer than " +
                 std::to_string(*per_subtask) + " samples");
      const auto picks = sample_without_replacement(
          members.size(), *per_subtask, seed + 0x9E3779B97F4A7C15ULL * ++g);
      for (std::size_t p : picks) chosen.push_back(members[p]);
    }
  } else {
    require(fraction > 0.0 && fraction <= 1.0, "validation fraction must be in (0, 1]");
    chosen = sample_without_replacement(test.size(),
                                        fraction_count(fraction, test.size()), seed);
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<Triplet> out;
  out.reserve(chosen.size());
  for (std::size_t i : chosen) out.push_back(test[i]);
  return out;
}

std::vector<PreferencePair> build_warmup_dpo_pairs(const std::vector<Triplet>& train,
                                                   const TextById& generated,
                                                   Judge& judge) {
  std::set<std::string> ids;
  for (const auto& t : train) ids.insert(t.id);
  for (const auto& [id, _] : generated)
    if (!ids.count(id))
      fail(ErrorKind::kInvalidArgument, "generated response for unknown id '" + id + "'");

  std::vector<PreferencePair> out;
  for (const auto& t : train) {
    auto it = generated.find(t.id);
    if (it == generated.end()) continue;
    bool same = false;
    try {
      same = judge.consistent(t.context(), t.response, it->second);
    } catch (const Error& e) {
      fail(ErrorKind::kJudge, "judge failed on sample '" + t.id + "': " + e.what());
    }
    // An identical output cannot serve as a dispreferred response either.
    if (same || it->second == t.response) continue;
    PreferencePair p;
    p.id = t.id;
    p.context = t.context();
    p.preferred = t.response;
    p.dispreferred = it->second;
    p.direction = Direction::kUnified;
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

struct Scored {
  const Triplet* ctx;
  const std::string* cmp;
  const std::string* base;
  const JudgeVerdict* verdict;
};

std::vector<Scored> align_inputs(const std::vector<Triplet>& contexts,
                                 const TextById& resp_cmp, const TextById& resp_base,
                                 const std::map<std::string, JudgeVerdict>& verdicts) {
  std::vector<Scored> out;
  out.reserve(contexts.size());
  for (const auto& t : contexts) {
    auto c = resp_cmp.find(t.id);
    auto b = resp_base.find(t.id);
    auto v = verdicts.find(t.id);
    if (c == resp_cmp.end() || b == resp_base.end())
      fail(ErrorKind::kInvalidArgument, "missing response for id '" + t.id + "'");
    if (v == verdicts.end())
      fail(ErrorKind::kInvalidArgument, "missing verdict for id '" + t.id + "'");
    out.push_back({&t, &c->second, &b->second, &v->second});
  }
  return out;
}

}  // namespace

SplitPairs split_validation_pairs(const std::vector<Triplet>& contexts,
                                  const TextById& resp_cmp, const TextById& resp_base,
                                  const std::map<std::string, JudgeVerdict>& verdicts) {
  SplitPairs out;
  for (const auto& s : align_inputs(contexts, resp_cmp, resp_base, verdicts)) {
    const double sc = s.verdict->score_a;
    const double sb = s.verdict->score_b;
    if (sc == sb || *s.cmp == *s.base) {
      out.dropped.push_back(s.ctx->id);
      continue;
    }
    PreferencePair p;
    p.id = s.ctx->id;
    p.context = s.ctx->context();
    p.preferred = *s.cmp;
    p.dispreferred = *s.base;
    p.direction = sc > sb ? Direction::kApp : Direction::kAwy;
    p.score_cmp = sc;
    p.score_base = sb;
    (sc > sb ? out.app : out.awy).push_back(std::move(p));
  }
  if (!out.dropped.empty())
    spdlog::info("validation pairs: {} tied contexts dropped ({} app, {} awy)",
                 out.dropped.size(), out.app.size(), out.awy.size());
  return out;
}

std::vector<PreferencePair> unify_validation_pairs(
    const std::vector<Triplet>& contexts, const TextById& resp_cmp,
    const TextById& resp_base, const std::map<std::string, JudgeVerdict>& verdicts) {
  std::vector<PreferencePair> out;
  for (const auto& s : align_inputs(contexts, resp_cmp, resp_base, verdicts)) {
    const double sc = s.verdict->score_a;
    const double sb = s.verdict->score_b;
    if (sc == sb || *s.cmp == *s.base) continue;
    PreferencePair p;
    p.id = s.ctx->id;
    p.context = s.ctx->context();
    p.preferred = sc > sb ? *s.cmp : *s.base;
    p.dispreferred = sc > sb ? *s.base : *s.cmp;
    p.direction = Direction::kUnified;
    p.score_cmp = sc;
    p.score_base = sb;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace prods
