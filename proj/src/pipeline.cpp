#include "prods/pipeline.h"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>

#include "prods/common.h"
#include "prods/corpus.h"
#include "prods/grad_model.h"
#include "prods/judge.h"
#include "prods/scoring.h"
#include "prods/select_eval.h"
#include "prods/sketch.h"
#include "prods/synthesis.h"

namespace prods {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- stages

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> kStages = {
      Stage::kWarmupSft, Stage::kWarmupDpo,  Stage::kBuildPairs,
      Stage::kGrads,     Stage::kScore,      Stage::kSynthesize,
      Stage::kSelect,    Stage::kEval,       Stage::kReport};
  return kStages;
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kWarmupSft: return "warmup-sft";
    case Stage::kWarmupDpo: return "warmup-dpo";
    case Stage::kBuildPairs: return "build-pairs";
    case Stage::kGrads: return "grads";
    case Stage::kScore: return "score";
    case Stage::kSynthesize: return "synthesize";
    case Stage::kSelect: return "select";
    case Stage::kEval: return "eval";
    case Stage::kReport: return "report";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : all_stages())
    if (to_string(s) == name) return s;
  fail(ErrorKind::kConfig, "unknown stage '" + std::string(name) + "'");
}

namespace {

struct StageSpec {
  std::vector<Stage> upstream;
  std::vector<std::string> raw_inputs;  // keys into PipelineConfig::paths
  std::vector<std::string> sections;    // config sections the stage reads
};

StageSpec spec_of(Stage s) {
  switch (s) {
    case Stage::kWarmupSft:
      return {{}, {"train", "test", "val_cmp", "val_base"}, {"warm", "model"}};
    case Stage::kWarmupDpo:
      return {{Stage::kWarmupSft}, {"train"}, {"warm", "dpo", "judge"}};
    case Stage::kBuildPairs:
      return {{Stage::kWarmupSft}, {"test", "val_cmp", "val_base"},
              {"validation", "judge", "warm"}};
    case Stage::kGrads:
      return {{Stage::kWarmupSft, Stage::kWarmupDpo, Stage::kBuildPairs},
              {"train"}, {"projection", "model", "dpo"}};
    case Stage::kScore: return {{Stage::kGrads}, {}, {"scoring"}};
    case Stage::kSynthesize: return {{Stage::kScore}, {}, {"synthesis"}};
    case Stage::kSelect: return {{Stage::kSynthesize}, {}, {"selection"}};
    case Stage::kEval:
      return {{Stage::kWarmupSft, Stage::kSelect}, {"train", "test"},
              {"eval", "selection", "judge"}};
    case Stage::kReport:
      return {{Stage::kSynthesize, Stage::kSelect, Stage::kEval}, {"train"},
              {"selection", "eval"}};
  }
  return {};
}

fs::path manifest_path(const fs::path& dir) { return dir / "manifest.json"; }

std::optional<StageManifest> load_manifest(const fs::path& dir) {
  const fs::path p = manifest_path(dir);
  if (!fs::exists(p)) return std::nullopt;
  try {
    return StageManifest::from_json(json::parse(read_file(p)));
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, p.string() + ": " + e.what());
  }
}

std::string fraction_tag(double f) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", f);
  return buf;
}

void check_finite(const std::vector<double>& v, const std::string& what) {
  for (double x : v)
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity())
      fail(ErrorKind::kNumeric, what + ": NaN detected");
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

}  // namespace

json StageManifest::to_json() const {
  return {{"stage", stage},   {"inputs", inputs},   {"upstream", upstream},
          {"outputs", outputs}, {"config", config}, {"summary", summary},
          {"wall_time_s", wall_time_s}, {"hash", hash}};
}

StageManifest StageManifest::from_json(const json& j) {
  StageManifest m;
  m.stage = j.at("stage").get<std::string>();
  m.inputs = j.at("inputs");
  m.upstream = j.at("upstream");
  m.outputs = j.at("outputs");
  m.config = j.at("config");
  m.summary = j.value("summary", json::object());
  m.wall_time_s = j.value("wall_time_s", 0.0);
  m.hash = j.at("hash").get<std::string>();
  return m;
}

std::string StageManifest::compute_hash() const {
  const json body{{"stage", stage},     {"inputs", inputs}, {"upstream", upstream},
                  {"outputs", outputs}, {"config", config}, {"summary", summary}};
  return sha256_hex(body.dump());
}

int exit_code_for(const std::exception& e) {
  if (const auto* pe = dynamic_cast<const Error*>(&e)) {
    switch (pe->kind()) {
      case ErrorKind::kConfig: return 2;
      case ErrorKind::kMissingArtifact: return 3;
      case ErrorKind::kJudge: return 4;
      case ErrorKind::kNumeric: return 5;
      default: return 1;
    }
  }
  return 1;
}

// ---------------------------------------------------------------- pipeline

struct Pipeline::Context {
  Stage stage;
  fs::path dir;
  StageManifest manifest;
  std::map<Stage, StageManifest> upstream;
  std::vector<std::string> written;

  fs::path out(const std::string& name) {
    written.push_back(name);
    return dir / name;
  }
};

Pipeline::Pipeline(PipelineConfig cfg, RunOptions opts) : cfg_(std::move(cfg)), opts_(opts) {
  cfg_.validate();
  if (opts_.threads == 0) opts_.threads = default_threads();
}

fs::path Pipeline::stage_dir(Stage s) const { return cfg_.paths.workdir / to_string(s); }

StageManifest Pipeline::run_stage(Stage s) {
  const StageSpec spec = spec_of(s);
  Context ctx{s, stage_dir(s), {}, {}, {}};
  ctx.manifest.stage = to_string(s);

  for (Stage up : spec.upstream) {
    const fs::path dir = stage_dir(up);
    auto m = load_manifest(dir);
    if (!m)
      fail(ErrorKind::kMissingArtifact, "stage '" + to_string(s) + "' needs the output of '" +
                                            to_string(up) + "', which has not been run (missing " +
                                            manifest_path(dir).string() + ")");
    for (const auto& [name, sha] : m->outputs.items()) {
      const fs::path f = dir / name;
      if (!fs::exists(f))
        fail(ErrorKind::kMissingArtifact,
             "artifact " + f.string() + " of stage '" + to_string(up) + "' is missing; rerun '" +
                 to_string(up) + "'");
      if (sha256_file(f) != sha.get<std::string>())
        fail(ErrorKind::kMissingArtifact,
             "artifact " + f.string() + " of stage '" + to_string(up) +
                 "' is stale (hash mismatch with its manifest); rerun '" + to_string(up) + "'");
    }
    ctx.manifest.upstream[to_string(up)] = m->hash;
    ctx.upstream.emplace(up, std::move(*m));
  }

  const json paths = cfg_.to_json()["paths"];
  for (const auto& key : spec.raw_inputs) {
    const std::string p = paths[key].get<std::string>();
    if (p.empty()) continue;
    if (!fs::exists(p))
      fail(ErrorKind::kConfig, "input file paths." + key + " does not exist: " + p);
    ctx.manifest.inputs[key] = sha256_file(p);
  }
  const json full = cfg_.to_json();
  for (const auto& sec : spec.sections) ctx.manifest.config[sec] = full[sec];
  if (ctx.manifest.config.contains("judge")) ctx.manifest.config["judge"].erase("key");

  if (!opts_.force) {
    if (auto prev = load_manifest(ctx.dir);
        prev && prev->inputs == ctx.manifest.inputs && prev->upstream == ctx.manifest.upstream &&
        prev->config == ctx.manifest.config) {
      bool intact = true;
      for (const auto& [name, sha] : prev->outputs.items())
        intact = intact && fs::exists(ctx.dir / name) &&
                 sha256_file(ctx.dir / name) == sha.get<std::string>();
      if (intact) {
        spdlog::info("{}: inputs unchanged, nothing to do", to_string(s));
        prev->skipped = true;
        return *prev;
      }
    }
  }

  fs::create_directories(ctx.dir);
  fs::remove(manifest_path(ctx.dir));
  const auto t0 = std::chrono::steady_clock::now();
  spdlog::info("{}: running", to_string(s));
  execute(s, ctx);
  ctx.manifest.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& name : ctx.written) ctx.manifest.outputs[name] = sha256_file(ctx.dir / name);
  ctx.manifest.hash = ctx.manifest.compute_hash();
  write_file(manifest_path(ctx.dir), ctx.manifest.to_json().dump(2) + "\n");
  spdlog::info("{}: done in {:.2f}s", to_string(s), ctx.manifest.wall_time_s);
  return ctx.manifest;
}

std::vector<StageManifest> Pipeline::run_all() {
  std::vector<StageManifest> out;
  for (Stage s : all_stages()) {
    try {
      out.push_back(run_stage(s));
    } catch (const Error& e) {
      fail(e.kind(), "stage '" + to_string(s) + "' failed: " + e.what());
    }
  }
  return out;
}

void Pipeline::execute(Stage s, Context& ctx) {
  switch (s) {
    case Stage::kWarmupSft: return warmup_sft(ctx);
    case Stage::kWarmupDpo: return warmup_dpo(ctx);
    case Stage::kBuildPairs: return build_pairs(ctx);
    case Stage::kGrads: return grads(ctx);
    case Stage::kScore: return score(ctx);
    case Stage::kSynthesize: return synthesize(ctx);
    case Stage::kSelect: return select(ctx);
    case Stage::kEval: return eval(ctx);
    case Stage::kReport: return report(ctx);
  }
}

namespace {

TrainConfig warm_train_config(const PipelineConfig& cfg, std::size_t epochs) {
  TrainConfig t;
  t.lr = cfg.warm.lr;
  t.adam_beta1 = cfg.warm.adam_beta1;
  t.adam_beta2 = cfg.warm.adam_beta2;
  t.adam_eps = cfg.warm.adam_eps;
  t.epochs = epochs;
  t.seed = cfg.warm.seed;
  t.warm_fraction = cfg.warm.fraction;
  return t;
}

std::shared_ptr<Judge> pipeline_judge(const PipelineConfig& cfg, const fs::path& dir) {
  RemoteJudgeConfig remote = RemoteJudgeConfig::from_env();
  if (!cfg.judge.url.empty()) remote.url = cfg.judge.url;
  if (!cfg.judge.key.empty()) remote.api_key = cfg.judge.key;
  remote.model = cfg.judge.model;
  remote.max_retries = cfg.judge.retries;
  auto judge = make_judge(cfg.judge.kind, cfg.judge.threshold, remote);
  if (cfg.judge.kind == "remote" && cfg.judge.cache)
    return std::make_shared<CachingJudge>(judge, dir / "judge_cache.jsonl");
  return judge;
}

Vocab load_vocab(const fs::path& sft_dir) {
  return Vocab::from_json(read_json(sft_dir / "vocab.json"));
}

std::string generate_text(const ModelParams& model, const Vocab& vocab,
                          const std::string& context, std::size_t max_tokens) {
  const auto ctx = vocab.encode_context(context);
  return vocab.decode(generate_greedy(model, ctx, max_tokens, vocab.eos()));
}

DirectionScores read_gamma(const fs::path& path, json* manifest) {
  DirectionScores s;
  const std::string text = read_file(path);
  std::size_t pos = 0;
  auto num = [](const json& v) {
    return v.is_null() ? kExcludedScore : v.get<double>();
  };
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) {
      const json j = json::parse(text.substr(pos, end - pos));
      if (j.contains("manifest")) {
        if (manifest) *manifest = j["manifest"];
        s.synthesis = parse_synthesis_mode(j["manifest"].value("mode", "annealing"));
      } else {
        s.ids.push_back(j.at("id").get<std::string>());
        s.gamma_app.push_back(num(j.at("gamma_app")));
        s.gamma_awy.push_back(num(j.at("gamma_awy")));
        s.lambda.push_back(j.at("lambda").get<double>());
        s.gamma.push_back(num(j.at("gamma")));
      }
    }
    pos = end + 1;
  }
  return s;
}

}  // namespace

void Pipeline::warmup_sft(Context& ctx) {
  const auto train = load_dataset(cfg_.paths.train);
  Vocab vocab = Vocab::bytes();
  if (cfg_.model.vocab == "word") {
    std::vector<std::string> texts;
    for (const auto& t : train) {
      texts.push_back(t.context());
      texts.push_back(t.response);
    }
    if (!cfg_.paths.test.empty())
      for (const auto& t : load_dataset(cfg_.paths.test)) {
        texts.push_back(t.context());
        texts.push_back(t.response);
      }
    for (const auto* p : {&cfg_.paths.val_cmp, &cfg_.paths.val_base})
      if (!p->empty())
        for (auto& [_, text] : load_responses(*p)) texts.push_back(text);
    vocab = Vocab::words(texts);
  }
  const TrainConfig tc = warm_train_config(cfg_, cfg_.warm.sft_epochs);
  const auto result = prods::warmup_sft(ModelParams::zeros(vocab.size()), vocab, train, tc);

  write_file(ctx.out("vocab.json"), vocab.to_json().dump() + "\n");
  write_checkpoint(ctx.out("model.pmdl"), result.params,
                   {{"seed", tc.seed}, {"config", tc.to_json()}, {"stage", "warmup-sft"}});
  write_file(ctx.out("warm_ids.json"),
             json{{"ids", result.used_ids}, {"epoch_mean_loss", result.epoch_mean_loss}}.dump(2) +
                 "\n");
  ctx.manifest.summary = {{"vocab_size", vocab.size()},
                          {"warm_samples", result.used_ids.size()},
                          {"epoch_mean_loss", result.epoch_mean_loss}};
}

void Pipeline::warmup_dpo(Context& ctx) {
  const auto train = load_dataset(cfg_.paths.train);
  const fs::path sft_dir = stage_dir(Stage::kWarmupSft);
  const Vocab vocab = load_vocab(sft_dir);
  const ModelParams sft = read_checkpoint(sft_dir / "model.pmdl");
  auto judge = pipeline_judge(cfg_, ctx.dir);

  const std::size_t target = fraction_count(cfg_.warm.pairs_fraction, train.size());
  TextById generated;
  std::vector<PreferencePair> pairs;
  for (std::size_t i : sample_without_replacement(train.size(), train.size(),
                                                  cfg_.warm.seed ^ 0xD0D0D0D0ULL)) {
    if (pairs.size() >= target) break;
    const auto& t = train[i];
    const std::string gen = generate_text(sft, vocab, t.context(), cfg_.warm.max_gen_tokens);
    generated[t.id] = gen;
    auto got = build_warmup_dpo_pairs({t}, {{t.id, gen}}, *judge);
    for (auto& p : got) pairs.push_back(std::move(p));
  }
  if (pairs.size() < target)
    spdlog::warn("warmup-dpo: only {} inconsistent generations for a target of {}", pairs.size(),
                 target);
  const TrainConfig tc = warm_train_config(cfg_, cfg_.warm.dpo_epochs);
  const auto result = prods::warmup_dpo(sft, cfg_.dpo.beta, vocab, pairs, tc);

  write_responses(ctx.out("generated.jsonl"), generated);
  write_pairs(ctx.out("warm_pairs.jsonl"), pairs);
  write_checkpoint(ctx.out("policy.pmdl"), result.params,
                   {{"seed", tc.seed},
                    {"config", tc.to_json()},
                    {"beta", cfg_.dpo.beta},
                    {"reference_fingerprint", sft.fingerprint()},
                    {"stage", "warmup-dpo"}});
  ctx.manifest.summary = {{"pairs", pairs.size()},
                          {"generated", generated.size()},
                          {"epoch_mean_loss", result.epoch_mean_loss}};
}

void Pipeline::build_pairs(Context& ctx) {
  const auto test = load_dataset(cfg_.paths.test);
  const auto val = build_validation_set(
      test, cfg_.validation.fraction,
      cfg_.validation.per_subtask ? std::optional(cfg_.validation.per_subtask) : std::nullopt,
      cfg_.validation.seed);

  TextById cmp, base;
  if (!cfg_.paths.val_cmp.empty()) {
    cmp = load_responses(cfg_.paths.val_cmp);
  } else {
    for (const auto& t : val) cmp[t.id] = t.response;
  }
  if (!cfg_.paths.val_base.empty()) {
    base = load_responses(cfg_.paths.val_base);
  } else {
    const fs::path sft_dir = stage_dir(Stage::kWarmupSft);
    const Vocab vocab = load_vocab(sft_dir);
    const ModelParams sft = read_checkpoint(sft_dir / "model.pmdl");
    for (const auto& t : val)
      base[t.id] = generate_text(sft, vocab, t.context(), cfg_.warm.max_gen_tokens);
  }

  std::vector<JudgeRequest> requests;
  for (const auto& t : val) {
    if (!cmp.count(t.id) || !base.count(t.id))
      fail(ErrorKind::kInvalidArgument, "no compared/baseline response for validation id '" +
                                            t.id + "'");
    JudgeRequest r{t.context(), cmp[t.id], base[t.id], std::nullopt};
    if (cfg_.judge.use_reference) r.reference = t.response;
    requests.push_back(std::move(r));
  }
  auto judge = pipeline_judge(cfg_, ctx.dir);
  const auto verdict_list = judge_batch(*judge, requests, cfg_.judge.max_inflight);
  std::map<std::string, JudgeVerdict> verdicts;
  std::string transcript;
  for (std::size_t k = 0; k < val.size(); ++k) {
    verdicts[val[k].id] = verdict_list[k];
    transcript += json{{"id", val[k].id},
                       {"score_cmp", verdict_list[k].score_a},
                       {"score_base", verdict_list[k].score_b}}
                      .dump() +
                  "\n";
  }
  const auto split = split_validation_pairs(val, cmp, base, verdicts);
  const auto unified = unify_validation_pairs(val, cmp, base, verdicts);
  if (split.app.empty() && split.awy.empty())
    fail(ErrorKind::kInvalidArgument, "every validation pair tied; no preference signal");

  write_dataset(ctx.out("validation.jsonl"), val);
  TextById val_cmp, val_base;
  for (const auto& t : val) {
    val_cmp[t.id] = cmp[t.id];
    val_base[t.id] = base[t.id];
  }
  write_responses(ctx.out("responses_cmp.jsonl"), val_cmp);
  write_responses(ctx.out("responses_base.jsonl"), val_base);
  write_file(ctx.out("verdicts.jsonl"), transcript);
  write_pairs(ctx.out("pairs_app.jsonl"), split.app);
  write_pairs(ctx.out("pairs_awy.jsonl"), split.awy);
  write_pairs(ctx.out("pairs_unified.jsonl"), unified);
  ctx.manifest.summary = {{"validation", val.size()},
                          {"app", split.app.size()},
                          {"awy", split.awy.size()},
                          {"dropped_ties", split.dropped.size()},
                          {"unified", unified.size()}};
}

void Pipeline::grads(Context& ctx) {
  const auto train = load_dataset(cfg_.paths.train);
  const fs::path sft_dir = stage_dir(Stage::kWarmupSft);
  const fs::path pairs_dir = stage_dir(Stage::kBuildPairs);
  const Vocab vocab = load_vocab(sft_dir);
  const ModelParams sft = read_checkpoint(sft_dir / "model.pmdl");
  const ModelParams policy = read_checkpoint(stage_dir(Stage::kWarmupDpo) / "policy.pmdl");

  ProjectionSpec proj;
  proj.seed = cfg_.projection.seed;
  proj.input_dim = sft.param_count();
  proj.output_dim = cfg_.projection.dim;
  proj.scale = cfg_.projection.scale == "raw" ? 1.0 : 0.0;

  const ModelParams& influence = cfg_.model.influence_at == "dpo" ? policy : sft;
  std::vector<std::string> ids;
  std::vector<Sequence> seqs;
  for (const auto& t : train) {
    ids.push_back(t.id);
    seqs.push_back(encode_triplet(vocab, t));
  }
  const auto g_train = build_gradient_store(
      proj, ids, [&](std::size_t k) { return sft_loss_grad(influence, seqs[k]).grad; },
      LossKind::kSft, influence.fingerprint(), opts_.threads);
  write_store(ctx.out("train.pgrd"), g_train);

  const DpoConfig dpo{cfg_.dpo.beta, &sft, &policy};
  json rows = json::object();
  for (auto [file, out_name, kind] :
       {std::tuple{"pairs_app.jsonl", "app.pgrd", LossKind::kDpoApp},
        std::tuple{"pairs_awy.jsonl", "awy.pgrd", LossKind::kDpoAwy},
        std::tuple{"pairs_unified.jsonl", "unified.pgrd", LossKind::kDpoUnified}}) {
    const auto pairs = load_pairs(pairs_dir / file);
    std::vector<std::string> pair_ids;
    std::vector<EncodedPair> enc;
    for (const auto& p : pairs) {
      pair_ids.push_back(p.id);
      enc.push_back(encode_pair(vocab, p));
    }
    const auto g = build_gradient_store(
        proj, pair_ids, [&](std::size_t k) { return dpo_loss_grad(dpo, enc[k]).grad; }, kind,
        policy.fingerprint(), opts_.threads);
    write_store(ctx.out(out_name), g);
    rows[out_name] = g.rows;
  }
  rows["train.pgrd"] = g_train.rows;
  ctx.manifest.summary = {{"rows", rows}, {"projection", proj.to_json()}};
}

void Pipeline::score(Context& ctx) {
  const fs::path gdir = stage_dir(Stage::kGrads);
  const auto train = read_store(gdir / "train.pgrd");
  CorrelationOptions opts;
  opts.zero_train_rows = ZeroRowPolicy::kSentinel;
  opts.block_rows = cfg_.scoring.block_rows;
  opts.threads = opts_.threads;

  ScoresFile out;
  out.ids = train.manifest.ids;
  out.manifest = {{"pairs", cfg_.scoring.pairs},
                  {"kind", cfg_.scoring.kind},
                  {"aggregation", cfg_.scoring.aggregation},
                  {"weights", cfg_.scoring.weights},
                  {"train_fingerprint", train.manifest.model_fingerprint}};
  if (cfg_.scoring.pairs == "unified") {
    const auto uni = read_store(gdir / "unified.pgrd");
    const auto s = unified_score(train, uni, opts);
    out.gamma_app = s.gamma_app;
    out.gamma_awy = s.gamma_awy;
    out.manifest["l_unified"] = uni.rows;
  } else {
    const auto kind = parse_correlation_kind(cfg_.scoring.kind);
    const auto agg = parse_aggregation(cfg_.scoring.aggregation);
    const bool normalize = cfg_.scoring.weights == "normalized";
    auto direction = [&](const char* file, const char* label) {
      const auto val = read_store(gdir / file);
      out.manifest[std::string("l_") + label] = val.rows;
      if (val.rows == 0) {
        spdlog::warn("score: no {} validation pairs; that direction scores 0", label);
        return std::vector<double>(train.rows, 0.0);
      }
      return direction_score(correlation(train, val, kind, opts), val, agg, normalize);
    };
    out.gamma_app = direction("app.pgrd", "app");
    out.gamma_awy = direction("awy.pgrd", "awy");
  }
  check_finite(out.gamma_app, "score");
  check_finite(out.gamma_awy, "score");
  write_scores(ctx.out("scores.jsonl"), out);
  ctx.manifest.summary = out.manifest;
}

void Pipeline::synthesize(Context& ctx) {
  const ScoresFile in = read_scores(stage_dir(Stage::kScore) / "scores.jsonl");
  SynthesisResult res;
  if (in.manifest.value("pairs", std::string("separate")) == "unified") {
    auto& s = res.scores;
    s.ids = in.ids;
    s.gamma_app = in.gamma_app;
    s.gamma_awy = in.gamma_awy;
    s.gamma = in.gamma_app;
    s.lambda.assign(in.ids.size(), 1.0);
    s.synthesis = SynthesisMode::kUnified;
    res.manifest = {{"mode", "unified"}, {"n", in.ids.size()}};
  } else {
    AnnealConfig ac;
    ac.t0 = cfg_.synthesis.t0;
    ac.cooling = cfg_.synthesis.cooling;
    ac.t_end = cfg_.synthesis.t_end;
    ac.perturb_sigma = cfg_.synthesis.sigma;
    ac.seed = cfg_.synthesis.seed;
    ac.clamp = cfg_.synthesis.clamp;
    ac.restarts = cfg_.synthesis.restarts;
    ac.return_mode = cfg_.synthesis.return_mode == "last" ? AnnealReturn::kLastAccepted
                                                          : AnnealReturn::kBestSeen;
    ac.acceptance = cfg_.synthesis.acceptance == "per_coordinate"
                        ? AnnealAcceptance::kPerCoordinate
                        : AnnealAcceptance::kJoint;
    res = prods::synthesize(in.ids, in.gamma_app, in.gamma_awy,
                            parse_synthesis_mode(cfg_.synthesis.mode), ac, opts_.threads);
  }
  check_finite(res.scores.gamma, "synthesize");

  const auto& s = res.scores;
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  std::string text = json{{"manifest", res.manifest}}.dump() + "\n";
  for (std::size_t i = 0; i < s.ids.size(); ++i)
    text += json{{"id", s.ids[i]},
                 {"gamma_app", num(s.gamma_app[i])},
                 {"gamma_awy", num(s.gamma_awy[i])},
                 {"lambda", s.lambda[i]},
                 {"gamma", num(s.gamma[i])}}
                .dump() +
            "\n";
  write_file(ctx.out("gamma.jsonl"), text);
  json trace = res.manifest;
  trace["energies"] = res.trace.energies;
  trace["temperatures"] = res.trace.temperatures;
  write_file(ctx.out("synthesis.json"), trace.dump(2) + "\n");
  ctx.manifest.summary = res.manifest;
}

void Pipeline::select(Context& ctx) {
  const DirectionScores scores =
      read_gamma(stage_dir(Stage::kSynthesize) / "gamma.jsonl", nullptr);
  json index = json::array();
  for (double f : cfg_.selection.fractions) {
    const auto sel = select_topk(scores, f);
    const std::string name = "selection_" + fraction_tag(f) + ".json";
    write_file(ctx.out(name), selection_to_json(sel).dump(2) + "\n");
    index.push_back({{"fraction", f}, {"file", name}, {"count", sel.selected_ids.size()}});
  }
  write_file(ctx.out("selection.json"), index.dump(2) + "\n");
  ctx.manifest.summary = {{"selections", index}};
}

void Pipeline::eval(Context& ctx) {
  const auto train = load_dataset(cfg_.paths.train);
  const auto test = load_dataset(cfg_.paths.test);
  const Vocab vocab = load_vocab(stage_dir(Stage::kWarmupSft));
  const double fraction = cfg_.eval_fraction();
  const fs::path sel_file =
      stage_dir(Stage::kSelect) / ("selection_" + fraction_tag(fraction) + ".json");
  if (!fs::exists(sel_file))
    fail(ErrorKind::kConfig, "eval.fraction " + fraction_tag(fraction) +
                                 " is not one of selection.fractions");
  const auto sel = selection_from_json(read_json(sel_file));

  std::map<std::string, const Triplet*> by_id;
  for (const auto& t : train) by_id[t.id] = &t;
  std::vector<Triplet> chosen, baseline;
  for (const auto& id : sel.selected_ids) chosen.push_back(*by_id.at(id));
  if (cfg_.eval.baseline == "full") {
    baseline = train;
  } else {
    for (std::size_t i :
         sample_without_replacement(train.size(), chosen.size(), cfg_.eval.seed ^ 0xE7A1ULL))
      baseline.push_back(train[i]);
  }
  if (chosen.empty()) fail(ErrorKind::kInvalidArgument, "eval: empty selection");

  TrainConfig tc;
  tc.lr = cfg_.eval.lr;
  tc.epochs = cfg_.eval.epochs;
  tc.seed = cfg_.eval.seed;
  tc.warm_fraction = 1.0;
  const auto zero = ModelParams::zeros(vocab.size());
  const ModelParams model_a = prods::warmup_sft(zero, vocab, chosen, tc).params;
  const ModelParams model_b = prods::warmup_sft(zero, vocab, baseline, tc).params;

  TextById resp_a, resp_b;
  std::vector<JudgeRequest> requests;
  for (const auto& t : test) {
    resp_a[t.id] = generate_text(model_a, vocab, t.context(), cfg_.eval.max_gen_tokens);
    resp_b[t.id] = generate_text(model_b, vocab, t.context(), cfg_.eval.max_gen_tokens);
    std::optional<std::string> ref;
    if (cfg_.judge.use_reference) ref = t.response;
    requests.push_back({t.context(), resp_a[t.id], resp_b[t.id], ref});
    requests.push_back({t.context(), resp_b[t.id], resp_a[t.id], ref});
  }
  auto judge = pipeline_judge(cfg_, ctx.dir);
  const auto verdicts = judge_batch(*judge, requests, cfg_.judge.max_inflight);

  // Fold in id order so the tally does not depend on file order.
  std::map<std::string, std::size_t> order;
  for (std::size_t k = 0; k < test.size(); ++k) order[test[k].id] = k;
  std::vector<Outcome> outcomes;
  std::vector<TranscriptEntry> transcript;
  for (const auto& [id, k] : order) {
    const auto& ab = verdicts[2 * k];
    const auto& ba = verdicts[2 * k + 1];
    outcomes.push_back(pairwise_outcome(ab, ba));
    transcript.push_back({id, "ab", ab.score_a, ab.score_b});
    transcript.push_back({id, "ba", ba.score_a, ba.score_b});
  }
  const MatchTally tally = winning_score(outcomes);

  write_responses(ctx.out("responses_selected.jsonl"), resp_a);
  write_responses(ctx.out("responses_baseline.jsonl"), resp_b);
  write_transcript(ctx.out("transcript.jsonl"), transcript);
  const json result{{"fraction", fraction},
                    {"baseline", cfg_.eval.baseline},
                    {"wins", tally.wins},
                    {"ties", tally.ties},
                    {"losses", tally.losses},
                    {"total", tally.total},
                    {"winning_score", tally.winning_score},
                    {"display", display_score(tally.winning_score)}};
  write_file(ctx.out("eval.json"), result.dump(2) + "\n");
  ctx.manifest.summary = result;
}

void Pipeline::report(Context& ctx) {
  const auto train = load_dataset(cfg_.paths.train);
  json gamma_manifest;
  const DirectionScores scores =
      read_gamma(stage_dir(Stage::kSynthesize) / "gamma.jsonl", &gamma_manifest);
  const double fraction = cfg_.eval_fraction();
  const auto sel = selection_from_json(read_json(
      stage_dir(Stage::kSelect) / ("selection_" + fraction_tag(fraction) + ".json")));
  const json eval = read_json(stage_dir(Stage::kEval) / "eval.json");

  // Hash chain back to the raw inputs.
  json chain = json::object();
  for (Stage s : all_stages()) {
    if (s == Stage::kReport) break;
    if (auto m = load_manifest(stage_dir(s)))
      chain[to_string(s)] = {{"hash", m->hash}, {"inputs", m->inputs}, {"upstream", m->upstream}};
  }
  const json provenance{{"stages", chain}, {"synthesis", gamma_manifest}, {"eval", eval}};

  const fs::path out_dir = ctx.dir;
  write_report(sel, train, scores, out_dir, provenance);
  for (const char* name : {"report.json", "gamma_hist.csv", "length_hist.csv"})
    ctx.out(name);
  ctx.manifest.summary = {{"fraction", fraction}, {"selected", sel.selected_ids.size()}};
}

}  // namespace prods
