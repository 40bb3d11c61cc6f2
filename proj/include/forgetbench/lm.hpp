#ifndef FORGETBENCH_LM_HPP
#define FORGETBENCH_LM_HPP

// Decoder-only character transformer: token + position embeddings, pre-norm
// blocks with causal multi-head attention and a GELU MLP, final layer norm and
// an output projection tied to the token embedding.
//
// Every sequence is fed as [BOS, x_1, ..., x_{n-1}] and scored on
// [x_1, ..., x_n], so P_1 = log p(x_1 | BOS) and a sequence of n tokens has n
// scored positions.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "json.hpp"

#include "forgetbench/corpus.hpp"
#include "forgetbench/params.hpp"

namespace fb {

struct LmConfig {
  int vocab_size = 40;
  int context_length = 64;
  int embed_dim = 64;
  int num_layers = 2;
  int num_heads = 2;
  int mlp_ratio = 4;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const LmConfig&) const = default;
};

struct OptimizerConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  int epochs = 1;
  /// Sequences per packed batch.
  int batch_size = 8;
  /// Global-norm clipping threshold; 0 disables clipping.
  double grad_clip = 0.0;
  /// Cosine decay of the learning rate to 10% over the run.
  bool cosine_decay = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Adaptive-moment state for decoupled-weight-decay updates.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  bool operator==(const AdamState&) const = default;
};

struct LanguageModel {
  LmConfig config;
  ParamVector params;
  AdamState training_state;
};

std::shared_ptr<const ParamLayout> make_layout(const LmConfig& config);

/// Random initialization from config.seed.
LanguageModel init_model(const LmConfig& config);

/// One AdamW update in place. Returns the L2 norm of the parameter change.
double adamw_step(ParamVector& params, AdamState& state, std::span<const double> grad,
                  const OptimizerConfig& opt, double learning_rate);

/// Several token sequences laid end to end; attention never crosses a segment.
struct PackedBatch {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<std::size_t> positions;
  std::vector<std::size_t> segment_start;
  /// Offsets into inputs/targets where each sequence starts, plus the end.
  std::vector<std::size_t> offsets;
};

PackedBatch pack_sequences(const LmConfig& config, std::span<const std::vector<int>> sequences);

/// Logits [tokens, vocab] for a packed batch.
Tensor forward_logits(const ParamBinding& params, const LmConfig& config,
                      std::span<const int> inputs, std::span<const std::size_t> positions,
                      std::span<const std::size_t> segment_start);

/// log p(target_i | prefix) for every packed position, shape [tokens].
Tensor forward_log_probs(const ParamBinding& params, const LmConfig& config,
                         const PackedBatch& batch);

struct TokenLogProbs {
  /// P_t = log p(x_t | x_<t) for t = 1..n.
  std::vector<double> per_token;
  double sequence_total = 0.0;
};

TokenLogProbs token_log_probs(const LanguageModel& model, const TokenSequence& x);
/// Evaluates all sequences in one packed forward pass.
std::vector<TokenLogProbs> token_log_probs_batched(const LanguageModel& model,
                                                   std::span<const TokenSequence> xs);
/// Scores tokens under an arbitrary parameter vector with the model's layout.
std::vector<double> token_log_probs_at(const LmConfig& config,
                                       const std::shared_ptr<const ParamLayout>& layout,
                                       std::span<const double> theta, std::span<const int> tokens);
/// Row t holds the gradient of P_{t+1} with respect to theta.
std::vector<std::vector<double>> token_log_prob_gradients_at(
    const LmConfig& config, const std::shared_ptr<const ParamLayout>& layout,
    std::span<const double> theta, std::span<const int> tokens);

/// Next-token logits after BOS + prefix.
std::vector<double> next_token_logits(const LanguageModel& model, std::span<const int> prefix);
/// Teacher-forced logits for every position of BOS + tokens[0..n-1]: row t
/// predicts tokens[t].
std::vector<std::vector<double>> teacher_forced_logits(const LanguageModel& model,
                                                       std::span<const int> tokens);
/// Lowest index among the maximal logits.
int argmax_token(std::span<const double> logits);

/// Greedy continuation of `prefix` (possibly empty). Stops after max_new
/// tokens, on EOS (not emitted), or when the context window is full.
std::vector<int> greedy_continuation(const LanguageModel& model, std::span<const int> prefix,
                                     std::size_t max_new);
/// Prefix followed by its greedy continuation. Prefix must be non-empty.
TokenSequence greedy_decode(const LanguageModel& model, const TokenSequence& prefix,
                            std::size_t max_new);

/// Mean per-token negative log-likelihood of the sequences.
double mean_nll(const LanguageModel& model, std::span<const TokenSequence> xs);

struct TrainResult {
  LanguageModel model;
  /// Token-weighted mean training NLL of each epoch.
  std::vector<double> epoch_loss;
};

/// Minimizes mean token NLL over the stream (duplicates included).
TrainResult train(const std::vector<TokenSequence>& stream, const LmConfig& config,
                  const OptimizerConfig& optimizer);
TrainResult train(const Corpus& corpus, const LmConfig& config, const OptimizerConfig& optimizer);
/// Continues training an existing model (its optimizer state is reused).
TrainResult continue_training(LanguageModel model, const std::vector<TokenSequence>& stream,
                              const OptimizerConfig& optimizer);

inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const LanguageModel& model, const std::filesystem::path& path);
LanguageModel load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const LmConfig& config);
LmConfig lm_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const OptimizerConfig& config);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

}  // namespace fb

#endif  // FORGETBENCH_LM_HPP
