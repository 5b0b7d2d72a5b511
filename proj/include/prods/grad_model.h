#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "prods/corpus.h"

namespace prods {

using Token = std::uint32_t;

/// Token inventory of the bigram model. Byte mode has 256 byte tokens
/// followed by BOS, EOS, UNK; word mode has BOS, EOS, UNK followed by the
/// sorted distinct lowercased words of a corpus.
class Vocab {
 public:
  enum class Mode { kByte, kWord };

  static Vocab bytes();
  static Vocab words(const std::vector<std::string>& texts);

  Mode mode() const { return mode_; }
  std::size_t size() const { return tokens_.size(); }
  Token bos() const { return bos_; }
  Token eos() const { return eos_; }
  Token unk() const { return unk_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<Token> encode(std::string_view text) const;
  /// BOS followed by the text tokens.
  std::vector<Token> encode_context(std::string_view text) const;
  /// Text tokens followed by EOS.
  std::vector<Token> encode_response(std::string_view text) const;
  /// Drops special tokens.
  std::string decode(std::span<const Token> tokens) const;

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

 private:
  Mode mode_ = Mode::kByte;
  std::vector<std::string> tokens_;
  Token bos_ = 0, eos_ = 0, unk_ = 0;
};

/// Bigram next-token logit table W (V x V, row = previous token).
struct ModelParams {
  std::size_t vocab_size = 0;
  std::vector<double> weights;

  static ModelParams zeros(std::size_t vocab_size);
  std::size_t param_count() const { return weights.size(); }
  std::span<const double> row(Token prev) const {
    return {weights.data() + static_cast<std::size_t>(prev) * vocab_size, vocab_size};
  }
  /// SHA-256 over the weight bytes.
  std::string fingerprint() const;
};

/// Context and response token streams of one sample.
struct Sequence {
  std::vector<Token> context;
  std::vector<Token> response;
};

Sequence encode_triplet(const Vocab& vocab, const Triplet& t);

struct EncodedPair {
  std::vector<Token> context;
  std::vector<Token> preferred;
  std::vector<Token> dispreferred;
};

EncodedPair encode_pair(const Vocab& vocab, const PreferencePair& p);

/// Sum of log P(response_k | previous token) over response positions. The
/// previous token of the first response position is the last context token,
/// so the context must be nonempty.
double seq_logprob(const ModelParams& params, std::span<const Token> context,
                   std::span<const Token> response);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // length V*V
};

/// Response-only cross entropy, summed over tokens and samples.
LossGrad sft_loss_grad(const ModelParams& params, std::span<const Sequence> batch);
LossGrad sft_loss_grad(const ModelParams& params, const Sequence& sample);

struct DpoConfig {
  double beta = 0.1;
  const ModelParams* reference = nullptr;
  const ModelParams* policy = nullptr;
};

/// -sum log sigmoid(beta * ((lp_pol(w) - lp_ref(w)) - (lp_pol(l) - lp_ref(l)))),
/// with the gradient taken w.r.t. the policy only.
LossGrad dpo_loss_grad(const DpoConfig& cfg, std::span<const EncodedPair> batch);
LossGrad dpo_loss_grad(const DpoConfig& cfg, const EncodedPair& pair);

struct TrainConfig {
  double lr = 1e-2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 4;
  std::uint64_t seed = 0;
  double warm_fraction = 0.05;

  void validate() const;
  nlohmann::json to_json() const;
};

class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& cfg);
  void step(std::vector<double>& params, std::span<const double> grad);

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

struct WarmupResult {
  ModelParams params;
  std::vector<double> epoch_mean_loss;
  std::vector<std::string> used_ids;
};

/// SFT warm-up: samples round(warm_fraction * N) triplets under the seed and
/// runs per-sample Adam steps for cfg.epochs epochs.
WarmupResult warmup_sft(const ModelParams& model, const Vocab& vocab,
                        const std::vector<Triplet>& train, const TrainConfig& cfg);

/// DPO warm-up of a policy initialised from `reference`. All pairs are used,
/// in a seeded order, for cfg.epochs epochs.
WarmupResult warmup_dpo(const ModelParams& reference, double beta, const Vocab& vocab,
                        const std::vector<PreferencePair>& pairs,
                        const TrainConfig& cfg);

/// Greedy decoding from the last context token until EOS or max_tokens.
std::vector<Token> generate_greedy(const ModelParams& params,
                                   std::span<const Token> context,
                                   std::size_t max_tokens, Token eos);

// Checkpoint: "PMDL", u32 version, u32 V, V*V f64 little-endian, u64 manifest
// length, manifest JSON (seed, config, fingerprint, optional vocab).
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                      nlohmann::json manifest);
ModelParams read_checkpoint(const std::filesystem::path& path,
                            nlohmann::json* manifest = nullptr);

}  // namespace prods
