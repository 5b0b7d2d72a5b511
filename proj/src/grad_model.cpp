#include "prods/grad_model.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "binary_io.h"
#include "prods/common.h"

namespace prods {

using nlohmann::json;

// ---------------------------------------------------------------- Vocab

Vocab Vocab::bytes() {
  Vocab v;
  v.mode_ = Mode::kByte;
  v.tokens_.reserve(259);
  for (int b = 0; b < 256; ++b) v.tokens_.emplace_back(1, static_cast<char>(b));
  v.tokens_.insert(v.tokens_.end(), {"<bos>", "<eos>", "<unk>"});
  v.bos_ = 256;
  v.eos_ = 257;
  v.unk_ = 258;
  return v;
}

Vocab Vocab::words(const std::vector<std::string>& texts) {
  std::vector<std::string> words;
  for (const auto& t : texts)
    for (auto& w : word_tokens(t)) words.push_back(std::move(w));
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  Vocab v;
  v.mode_ = Mode::kWord;
  v.tokens_ = {"<bos>", "<eos>", "<unk>"};
  v.tokens_.insert(v.tokens_.end(), words.begin(), words.end());
  v.bos_ = 0;
  v.eos_ = 1;
  v.unk_ = 2;
  return v;
}

std::vector<Token> Vocab::encode(std::string_view text) const {
  std::vector<Token> out;
  if (mode_ == Mode::kByte) {
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(c);
    return out;
  }
  const auto first = tokens_.begin() + 3;
  for (const auto& w : word_tokens(text)) {
    auto it = std::lower_bound(first, tokens_.end(), w);
    out.push_back(it != tokens_.end() && *it == w
                      ? static_cast<Token>(it - tokens_.begin())
                      : unk_);
  }
  return out;
}

std::vector<Token> Vocab::encode_context(std::string_view text) const {
  std::vector<Token> out{bos_};
  const auto body = encode(text);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::vector<Token> Vocab::encode_response(std::string_view text) const {
  auto out = encode(text);
  out.push_back(eos_);
  return out;
}

std::string Vocab::decode(std::span<const Token> tokens) const {
  std::string out;
  for (Token t : tokens) {
    if (t == bos_ || t == eos_ || t == unk_ || t >= tokens_.size()) continue;
    if (mode_ == Mode::kWord && !out.empty()) out.push_back(' ');
    out += tokens_[t];
  }
  return out;
}

json Vocab::to_json() const {
  if (mode_ == Mode::kByte) return {{"mode", "byte"}};
  return {{"mode", "word"},
          {"words", std::vector<std::string>(tokens_.begin() + 3, tokens_.end())}};
}

Vocab Vocab::from_json(const json& j) {
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "byte") return bytes();
  if (mode != "word") fail(ErrorKind::kFormat, "unknown vocab mode '" + mode + "'");
  Vocab v;
  v.mode_ = Mode::kWord;
  v.tokens_ = {"<bos>", "<eos>", "<unk>"};
  for (const auto& w : j.at("words")) v.tokens_.push_back(w.get<std::string>());
  if (!std::is_sorted(v.tokens_.begin() + 3, v.tokens_.end()))
    fail(ErrorKind::kFormat, "vocab words must be sorted");
  v.bos_ = 0;
  v.eos_ = 1;
  v.unk_ = 2;
  return v;
}

// ---------------------------------------------------------------- model

ModelParams ModelParams::zeros(std::size_t vocab_size) {
  require(vocab_size >= 1, "vocabulary must be nonempty");
  return {vocab_size, std::vector<double>(vocab_size * vocab_size, 0.0)};
}

std::string ModelParams::fingerprint() const { return sha256_hex(std::span(weights)); }

Sequence encode_triplet(const Vocab& vocab, const Triplet& t) {
  return {vocab.encode_context(t.context()), vocab.encode_response(t.response)};
}

EncodedPair encode_pair(const Vocab& vocab, const PreferencePair& p) {
  return {vocab.encode_context(p.context), vocab.encode_response(p.preferred),
          vocab.encode_response(p.dispreferred)};
}

namespace {

void check_tokens(const ModelParams& params, std::span<const Token> context,
                  std::span<const Token> response) {
  require(!context.empty(), "sequence needs at least one context token");
  require(!response.empty(), "response must be nonempty");
  for (auto s : {context, response})
    for (Token t : s)
      if (t >= params.vocab_size)
        fail(ErrorKind::kInvalidArgument,
             "token id " + std::to_string(t) + " out of range for V=" +
                 std::to_string(params.vocab_size));
}

/// Fills probs with softmax(row) and returns log-sum-exp of the row.
double softmax_row(std::span<const double> row, std::vector<double>& probs) {
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  probs.resize(row.size());
  for (std::size_t k = 0; k < row.size(); ++k) {
    probs[k] = std::exp(row[k] - mx);
    sum += probs[k];
  }
  for (double& p : probs) p /= sum;
  return mx + std::log(sum);
}

/// Adds coeff * d/dW log P(response | context) to grad (if non-null) and
/// returns the log-probability.
double logprob_accumulate(const ModelParams& params, std::span<const Token> context,
                          std::span<const Token> response, double coeff,
                          std::vector<double>* grad) {
  check_tokens(params, context, response);
  const std::size_t V = params.vocab_size;
  std::vector<double> probs;
  double lp = 0.0;
  Token prev = context.back();
  for (Token tok : response) {
    const auto row = params.row(prev);
    const double lse = softmax_row(row, probs);
    lp += row[tok] - lse;
    if (grad != nullptr) {
      double* g = grad->data() + static_cast<std::size_t>(prev) * V;
      for (std::size_t k = 0; k < V; ++k) g[k] -= coeff * probs[k];
      g[tok] += coeff;
    }
    prev = tok;
  }
  return lp;
}

double log_sigmoid(double z) {
  // log(1 / (1 + e^-z)) without overflow
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

double seq_logprob(const ModelParams& params, std::span<const Token> context,
                   std::span<const Token> response) {
  return logprob_accumulate(params, context, response, 0.0, nullptr);
}

LossGrad sft_loss_grad(const ModelParams& params, const Sequence& sample) {
  LossGrad out{0.0, std::vector<double>(params.param_count(), 0.0)};
  out.loss = -logprob_accumulate(params, sample.context, sample.response, -1.0, &out.grad);
  return out;
}

LossGrad sft_loss_grad(const ModelParams& params, std::span<const Sequence> batch) {
  require(!batch.empty(), "SFT batch must be nonempty");
  LossGrad out{0.0, std::vector<double>(params.param_count(), 0.0)};
  for (const auto& s : batch)
    out.loss -= logprob_accumulate(params, s.context, s.response, -1.0, &out.grad);
  return out;
}

LossGrad dpo_loss_grad(const DpoConfig& cfg, const EncodedPair& pair) {
  return dpo_loss_grad(cfg, std::span(&pair, 1));
}

LossGrad dpo_loss_grad(const DpoConfig& cfg, std::span<const EncodedPair> batch) {
  require(!batch.empty(), "DPO batch must be nonempty");
  require(cfg.beta > 0.0, "DPO beta must be positive");
  require(cfg.policy != nullptr && cfg.reference != nullptr,
          "DPO needs policy and reference parameters");
  require(cfg.policy->vocab_size == cfg.reference->vocab_size,
          "policy and reference vocabularies differ");
  const ModelParams& pol = *cfg.policy;
  const ModelParams& ref = *cfg.reference;
  LossGrad out{0.0, std::vector<double>(pol.param_count(), 0.0)};
  std::vector<double> g_w(pol.param_count()), g_l(pol.param_count());
  for (const auto& p : batch) {
    std::fill(g_w.begin(), g_w.end(), 0.0);
    std::fill(g_l.begin(), g_l.end(), 0.0);
    const double pw = logprob_accumulate(pol, p.context, p.preferred, 1.0, &g_w);
    const double pl = logprob_accumulate(pol, p.context, p.dispreferred, 1.0, &g_l);
    const double rw = seq_logprob(ref, p.context, p.preferred);
    const double rl = seq_logprob(ref, p.context, p.dispreferred);
    const double z = cfg.beta * ((pw - rw) - (pl - rl));
    out.loss -= log_sigmoid(z);
    // dL/dz = -sigmoid(-z)
    const double c = -sigmoid(-z) * cfg.beta;
    for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += c * (g_w[k] - g_l[k]);
  }
  return out;
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  require(lr >= 0.0, "learning rate must be nonnegative");
  require(epochs >= 1, "epochs must be at least 1");
  require(warm_fraction > 0.0 && warm_fraction <= 1.0, "warm_fraction must be in (0, 1]");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
          "Adam betas must be in [0, 1)");
  require(adam_eps > 0.0, "Adam eps must be positive");
}

json TrainConfig::to_json() const {
  return {{"lr", lr},         {"adam_beta1", adam_beta1}, {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps}, {"epochs", epochs},     {"seed", seed},
          {"warm_fraction", warm_fraction}};
}

Adam::Adam(std::size_t n, const TrainConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<double>& params, std::span<const double> grad) {
  require(grad.size() == params.size(), "Adam: gradient length mismatch");
  ++t_;
  const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    m_[k] = b1 * m_[k] + (1.0 - b1) * grad[k];
    v_[k] = b2 * v_[k] + (1.0 - b2) * grad[k] * grad[k];
    params[k] -= cfg_.lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + cfg_.adam_eps);
  }
}

namespace {

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) fail(ErrorKind::kNumeric, std::string(what) + ": non-finite value");
}

}  // namespace

WarmupResult warmup_sft(const ModelParams& model, const Vocab& vocab,
                        const std::vector<Triplet>& train, const TrainConfig& cfg) {
  cfg.validate();
  require(model.vocab_size == vocab.size(), "model and vocabulary sizes differ");
  const std::size_t n_warm = fraction_count(cfg.warm_fraction, train.size());
  if (n_warm == 0) fail(ErrorKind::kInvalidArgument, "SFT warm-up subset is empty");

  WarmupResult out;
  out.params = model;
  std::vector<Sequence> warm;
  for (std::size_t i : sample_without_replacement(train.size(), n_warm, cfg.seed)) {
    warm.push_back(encode_triplet(vocab, train[i]));
    out.used_ids.push_back(train[i].id);
  }
  Adam adam(out.params.param_count(), cfg);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    double total = 0.0;
    for (std::size_t i : sample_without_replacement(warm.size(), warm.size(), cfg.seed + e + 1)) {
      const auto lg = sft_loss_grad(out.params, warm[i]);
      total += lg.loss;
      adam.step(out.params.weights, lg.grad);
    }
    out.epoch_mean_loss.push_back(total / static_cast<double>(warm.size()));
  }
  check_finite(out.params.weights, "SFT warm-up");
  return out;
}

WarmupResult warmup_dpo(const ModelParams& reference, double beta, const Vocab& vocab,
                        const std::vector<PreferencePair>& pairs, const TrainConfig& cfg) {
  cfg.validate();
  require(reference.vocab_size == vocab.size(), "model and vocabulary sizes differ");
  if (pairs.empty()) fail(ErrorKind::kInvalidArgument, "DPO warm-up pair list is empty");

  WarmupResult out;
  out.params = reference;
  std::vector<EncodedPair> encoded;
  for (const auto& p : pairs) {
    encoded.push_back(encode_pair(vocab, p));
    out.used_ids.push_back(p.id);
  }
  const DpoConfig dpo{beta, &reference, &out.params};
  Adam adam(out.params.param_count(), cfg);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    double total = 0.0;
    for (std::size_t i :
         sample_without_replacement(encoded.size(), encoded.size(), cfg.seed + e + 1)) {
      const auto lg = dpo_loss_grad(dpo, encoded[i]);
      total += lg.loss;
      adam.step(out.params.weights, lg.grad);
    }
    out.epoch_mean_loss.push_back(total / static_cast<double>(encoded.size()));
  }
  check_finite(out.params.weights, "DPO warm-up");
  return out;
}

std::vector<Token> generate_greedy(const ModelParams& params, std::span<const Token> context,
                                   std::size_t max_tokens, Token eos) {
  require(!context.empty(), "generation needs a context token");
  std::vector<Token> out;
  Token prev = context.back();
  for (std::size_t k = 0; k < max_tokens; ++k) {
    const auto row = params.row(prev);
    const Token next = static_cast<Token>(std::max_element(row.begin(), row.end()) - row.begin());
    if (next == eos) break;
    out.push_back(next);
    prev = next;
  }
  return out;
}

// ---------------------------------------------------------------- checkpoint

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                      json manifest) {
  manifest["fingerprint"] = params.fingerprint();
  std::string out;
  out.append("PMDL", 4);
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint32_t>(params.vocab_size));
  out.append(reinterpret_cast<const char*>(params.weights.data()),
             params.weights.size() * sizeof(double));
  const std::string m = manifest.dump();
  detail::put(out, static_cast<std::uint64_t>(m.size()));
  out += m;
  write_file(path, out);
}

ModelParams read_checkpoint(const std::filesystem::path& path, json* manifest) {
  const std::string bytes = read_file(path);
  detail::Reader r(bytes, path.string());
  if (r.take(4) != "PMDL") fail(ErrorKind::kFormat, path.string() + ": bad checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    fail(ErrorKind::kFormat, path.string() + ": unsupported checkpoint version " +
                                 std::to_string(version));
  ModelParams p = ModelParams::zeros(r.get<std::uint32_t>());
  const auto payload = r.take(p.weights.size() * sizeof(double));
  std::memcpy(p.weights.data(), payload.data(), payload.size());
  const auto mlen = r.get<std::uint64_t>();
  const json m = json::parse(r.take(mlen));
  if (r.remaining() != 0) fail(ErrorKind::kFormat, path.string() + ": trailing bytes");
  if (m.value("fingerprint", std::string()) != p.fingerprint())
    fail(ErrorKind::kFormat, path.string() + ": fingerprint does not match weights");
  if (manifest != nullptr) *manifest = m;
  return p;
}

}  // namespace prods
