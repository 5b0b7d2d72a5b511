#include "prods/config.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>

#include "prods/common.h"

namespace prods {

using nlohmann::json;

// ---------------------------------------------------------------- TOML subset

namespace {

class TomlLine {
 public:
  TomlLine(std::string_view s, std::size_t line_no) : s_(s), line_no_(line_no) {}

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorKind::kConfig, "config line " + std::to_string(line_no_) + ": " + what);
  }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  bool at_end_or_comment() {
    skip_ws();
    return pos_ >= s_.size() || s_[pos_] == '#';
  }
  bool consume(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!consume(c)) error(std::string("expected '") + c + "'");
  }

  std::string key() {
    skip_ws();
    if (pos_ < s_.size() && (s_[pos_] == '"' || s_[pos_] == '\'')) return string_value();
    const std::size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
            s_[pos_] == '-'))
      ++pos_;
    if (pos_ == start) error("expected a key");
    return std::string(s_.substr(start, pos_ - start));
  }

  json value() {
    skip_ws();
    if (pos_ >= s_.size()) error("missing value");
    const char c = s_[pos_];
    if (c == '"' || c == '\'') return string_value();
    if (c == '[') return array_value();
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    return number_value();
  }

 private:
  std::string string_value() {
    const char quote = s_[pos_++];
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != quote) {
      char ch = s_[pos_++];
      if (quote == '"' && ch == '\\') {
        if (pos_ >= s_.size()) error("dangling escape");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': ch = '\n'; break;
          case 't': ch = '\t'; break;
          case '"': ch = '"'; break;
          case '\\': ch = '\\'; break;
          default: error(std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(ch);
    }
    if (pos_ >= s_.size()) error("unterminated string");
    ++pos_;
    return out;
  }

  json array_value() {
    ++pos_;
    json arr = json::array();
    if (consume(']')) return arr;
    while (true) {
      arr.push_back(value());
      if (consume(']')) return arr;
      expect(',');
      if (consume(']')) return arr;  // trailing comma
    }
  }

  json number_value() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) ||
                                s_[pos_] == '.' || s_[pos_] == '+' || s_[pos_] == '-' ||
                                s_[pos_] == '_'))
      ++pos_;
    std::string tok(s_.substr(start, pos_ - start));
    tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
    if (!tok.empty() && tok[0] == '+') tok.erase(0, 1);
    if (tok.empty()) error("expected a value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos;
    const char* b = tok.data();
    const char* e = tok.data() + tok.size();
    if (is_float) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || p != e) error("bad number '" + tok + "'");
      return v;
    }
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) error("bad value '" + tok + "'");
    return v;
  }

  std::string_view s_;
  std::size_t line_no_;
  std::size_t pos_ = 0;
};

}  // namespace

json parse_toml(std::string_view text) {
  json root = json::object();
  json* table = &root;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    TomlLine line(text.substr(pos, end - pos), line_no);
    pos = end + 1;
    if (line.at_end_or_comment()) {
      if (end == text.size()) break;
      continue;
    }
    if (line.consume('[')) {
      table = &root;
      do {
        const std::string k = line.key();
        if (!table->contains(k)) (*table)[k] = json::object();
        table = &(*table)[k];
        if (!table->is_object()) line.error("'" + k + "' is not a table");
      } while (line.consume('.'));
      line.expect(']');
    } else {
      const std::string k = line.key();
      line.expect('=');
      if (table->contains(k)) line.error("duplicate key '" + k + "'");
      (*table)[k] = line.value();
    }
    if (!line.at_end_or_comment()) line.error("unexpected trailing characters");
    if (end == text.size()) break;
  }
  return root;
}

// ---------------------------------------------------------------- config

namespace {

template <typename T>
void read(const json& sec, const char* key, T& out) {
  auto it = sec.find(key);
  if (it == sec.end()) return;
  try {
    if constexpr (std::is_same_v<T, std::filesystem::path>)
      out = it->get<std::string>();
    else if constexpr (std::is_same_v<T, double>)
      out = it->get<double>();  // integers are accepted for reals
    else if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_integer() || it->get<std::int64_t>() < 0)
        fail(ErrorKind::kConfig, std::string("'") + key + "' must be a nonnegative integer");
      out = it->get<T>();
    } else
      out = it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::kConfig, std::string("config key '") + key + "' has the wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  PipelineConfig c;
  const json defaults = c.to_json();
  for (const auto& [section, body] : j.items()) {
    if (!defaults.contains(section))
      fail(ErrorKind::kConfig, "unknown config section [" + section + "]");
    if (!body.is_object())
      fail(ErrorKind::kConfig, "config section [" + section + "] must be a table");
    for (const auto& [key, _] : body.items())
      if (!defaults[section].contains(key))
        fail(ErrorKind::kConfig, "unknown config key " + section + "." + key);
  }
  const json empty = json::object();
  auto sec = [&](const char* name) -> const json& {
    return j.contains(name) ? j.at(name) : empty;
  };

  const json& p = sec("paths");
  read(p, "train", c.paths.train);
  read(p, "test", c.paths.test);
  read(p, "workdir", c.paths.workdir);
  read(p, "val_cmp", c.paths.val_cmp);
  read(p, "val_base", c.paths.val_base);
  c.paths.train = resolve(c.paths.train, base_dir);
  c.paths.test = resolve(c.paths.test, base_dir);
  c.paths.workdir = resolve(c.paths.workdir, base_dir);
  c.paths.val_cmp = resolve(c.paths.val_cmp, base_dir);
  c.paths.val_base = resolve(c.paths.val_base, base_dir);

  const json& v = sec("validation");
  read(v, "fraction", c.validation.fraction);
  read(v, "per_subtask", c.validation.per_subtask);
  read(v, "seed", c.validation.seed);

  const json& w = sec("warm");
  read(w, "fraction", c.warm.fraction);
  read(w, "pairs_fraction", c.warm.pairs_fraction);
  read(w, "sft_epochs", c.warm.sft_epochs);
  read(w, "dpo_epochs", c.warm.dpo_epochs);
  read(w, "seed", c.warm.seed);
  read(w, "lr", c.warm.lr);
  read(w, "adam_beta1", c.warm.adam_beta1);
  read(w, "adam_beta2", c.warm.adam_beta2);
  read(w, "adam_eps", c.warm.adam_eps);
  read(w, "max_gen_tokens", c.warm.max_gen_tokens);

  const json& m = sec("model");
  read(m, "vocab", c.model.vocab);
  read(m, "influence_at", c.model.influence_at);

  const json& pr = sec("projection");
  read(pr, "dim", c.projection.dim);
  read(pr, "seed", c.projection.seed);
  read(pr, "scale", c.projection.scale);

  read(sec("dpo"), "beta", c.dpo.beta);

  const json& s = sec("scoring");
  read(s, "kind", c.scoring.kind);
  read(s, "aggregation", c.scoring.aggregation);
  read(s, "pairs", c.scoring.pairs);
  read(s, "weights", c.scoring.weights);
  read(s, "block_rows", c.scoring.block_rows);

  const json& sy = sec("synthesis");
  read(sy, "mode", c.synthesis.mode);
  read(sy, "sigma", c.synthesis.sigma);
  read(sy, "seed", c.synthesis.seed);
  read(sy, "t0", c.synthesis.t0);
  read(sy, "cooling", c.synthesis.cooling);
  read(sy, "t_end", c.synthesis.t_end);
  read(sy, "return_mode", c.synthesis.return_mode);
  read(sy, "acceptance", c.synthesis.acceptance);
  read(sy, "restarts", c.synthesis.restarts);
  read(sy, "clamp", c.synthesis.clamp);

  read(sec("selection"), "fractions", c.selection.fractions);

  const json& ju = sec("judge");
  read(ju, "kind", c.judge.kind);
  read(ju, "threshold", c.judge.threshold);
  read(ju, "url", c.judge.url);
  read(ju, "key", c.judge.key);
  read(ju, "model", c.judge.model);
  read(ju, "max_inflight", c.judge.max_inflight);
  read(ju, "retries", c.judge.retries);
  read(ju, "cache", c.judge.cache);
  read(ju, "use_reference", c.judge.use_reference);

  const json& e = sec("eval");
  read(e, "fraction", c.eval.fraction);
  read(e, "baseline", c.eval.baseline);
  read(e, "epochs", c.eval.epochs);
  read(e, "lr", c.eval.lr);
  read(e, "seed", c.eval.seed);
  read(e, "max_gen_tokens", c.eval.max_gen_tokens);

  c.validate();
  return c;
}

json PipelineConfig::to_json() const {
  return {
      {"paths", {{"train", paths.train.string()}, {"test", paths.test.string()},
                 {"workdir", paths.workdir.string()}, {"val_cmp", paths.val_cmp.string()},
                 {"val_base", paths.val_base.string()}}},
      {"validation", {{"fraction", validation.fraction}, {"per_subtask", validation.per_subtask},
                      {"seed", validation.seed}}},
      {"warm", {{"fraction", warm.fraction}, {"pairs_fraction", warm.pairs_fraction},
                {"sft_epochs", warm.sft_epochs}, {"dpo_epochs", warm.dpo_epochs},
                {"seed", warm.seed}, {"lr", warm.lr}, {"adam_beta1", warm.adam_beta1},
                {"adam_beta2", warm.adam_beta2}, {"adam_eps", warm.adam_eps},
                {"max_gen_tokens", warm.max_gen_tokens}}},
      {"model", {{"vocab", model.vocab}, {"influence_at", model.influence_at}}},
      {"projection", {{"dim", projection.dim}, {"seed", projection.seed},
                      {"scale", projection.scale}}},
      {"dpo", {{"beta", dpo.beta}}},
      {"scoring", {{"kind", scoring.kind}, {"aggregation", scoring.aggregation},
                   {"pairs", scoring.pairs}, {"weights", scoring.weights},
                   {"block_rows", scoring.block_rows}}},
      {"synthesis", {{"mode", synthesis.mode}, {"sigma", synthesis.sigma},
                     {"seed", synthesis.seed}, {"t0", synthesis.t0},
                     {"cooling", synthesis.cooling}, {"t_end", synthesis.t_end},
                     {"return_mode", synthesis.return_mode},
                     {"acceptance", synthesis.acceptance}, {"restarts", synthesis.restarts},
                     {"clamp", synthesis.clamp}}},
      {"selection", {{"fractions", selection.fractions}}},
      {"judge", {{"kind", judge.kind}, {"threshold", judge.threshold}, {"url", judge.url},
                 {"key", judge.key}, {"model", judge.model},
                 {"max_inflight", judge.max_inflight}, {"retries", judge.retries},
                 {"cache", judge.cache}, {"use_reference", judge.use_reference}}},
      {"eval", {{"fraction", eval.fraction}, {"baseline", eval.baseline},
                {"epochs", eval.epochs}, {"lr", eval.lr}, {"seed", eval.seed},
                {"max_gen_tokens", eval.max_gen_tokens}}},
  };
}

void PipelineConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::kConfig, what);
  };
  auto one_of = [&](const std::string& v, std::initializer_list<const char*> allowed,
                    const char* key) {
    for (const char* a : allowed)
      if (v == a) return;
    fail(ErrorKind::kConfig, std::string(key) + ": unsupported value '" + v + "'");
  };
  check(!selection.fractions.empty(), "selection.fractions must be nonempty");
  for (double f : selection.fractions)
    check(f > 0.0 && f <= 1.0, "selection fraction " + std::to_string(f) + " outside (0, 1]");
  check(validation.fraction > 0.0 && validation.fraction <= 1.0,
        "validation.fraction outside (0, 1]");
  check(warm.fraction > 0.0 && warm.fraction <= 1.0, "warm.fraction outside (0, 1]");
  check(warm.pairs_fraction > 0.0 && warm.pairs_fraction <= 1.0,
        "warm.pairs_fraction outside (0, 1]");
  check(warm.sft_epochs >= 1 && warm.dpo_epochs >= 1, "warm-up epochs must be at least 1");
  check(warm.lr >= 0.0 && eval.lr >= 0.0, "learning rates must be nonnegative");
  check(projection.dim >= 1, "projection.dim must be at least 1");
  check(dpo.beta > 0.0, "dpo.beta must be positive");
  check(synthesis.cooling > 0.0 && synthesis.cooling < 1.0, "synthesis.cooling outside (0, 1)");
  check(synthesis.t_end > 0.0 && synthesis.t_end < synthesis.t0, "need 0 < t_end < t0");
  check(synthesis.sigma > 0.0, "synthesis.sigma must be positive");
  check(synthesis.restarts >= 1, "synthesis.restarts must be at least 1");
  check(eval.fraction >= 0.0 && eval.fraction <= 1.0, "eval.fraction outside [0, 1]");
  check(eval.epochs >= 1, "eval.epochs must be at least 1");
  check(eval.fraction == 0.0 ||
            std::any_of(selection.fractions.begin(), selection.fractions.end(),
                        [&](double f) { return std::abs(f - eval.fraction) < 1e-12; }),
        "eval.fraction must be one of selection.fractions");
  one_of(model.vocab, {"byte", "word"}, "model.vocab");
  one_of(model.influence_at, {"sft", "dpo"}, "model.influence_at");
  one_of(projection.scale, {"normalized", "raw"}, "projection.scale");
  one_of(scoring.kind, {"cosine", "mul"}, "scoring.kind");
  one_of(scoring.aggregation, {"weight", "avg"}, "scoring.aggregation");
  one_of(scoring.pairs, {"separate", "unified"}, "scoring.pairs");
  one_of(scoring.weights, {"normalized", "raw"}, "scoring.weights");
  one_of(synthesis.mode, {"annealing", "fixed"}, "synthesis.mode");
  one_of(synthesis.return_mode, {"best", "last"}, "synthesis.return_mode");
  one_of(synthesis.acceptance, {"joint", "per_coordinate"}, "synthesis.acceptance");
  one_of(judge.kind, {"token-overlap", "exact-match", "length-heuristic", "remote"}, "judge.kind");
  one_of(eval.baseline, {"random", "full"}, "eval.baseline");
}

void PipelineConfig::override_seeds(std::uint64_t seed) {
  validation.seed = warm.seed = projection.seed = synthesis.seed = eval.seed = seed;
}

double PipelineConfig::eval_fraction() const {
  return eval.fraction > 0.0 ? eval.fraction : selection.fractions.front();
}

void apply_env_overrides(json& j) {
  const json defaults = PipelineConfig{}.to_json();
  for (const auto& [section, body] : defaults.items()) {
    for (const auto& [key, def] : body.items()) {
      const std::string var = "PRODS_" + upper(section) + "_" + upper(key);
      const char* raw = std::getenv(var.c_str());
      if (raw == nullptr) continue;
      std::string text = raw;
      if (def.is_array() && text.find('[') == std::string::npos) text = "[" + text + "]";
      json value;
      if (def.is_string()) {
        value = text;
      } else {
        try {
          value = parse_toml("v = " + text)["v"];
        } catch (const Error&) {
          fail(ErrorKind::kConfig, var + ": cannot parse '" + text + "'");
        }
      }
      j[section][key] = value;
    }
  }
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    fail(ErrorKind::kConfig, "config file not found: " + path.string());
  json j = parse_toml(read_file(path));
  apply_env_overrides(j);
  return from_json(j, std::filesystem::absolute(path).parent_path());
}

}  // namespace prods
