#ifndef FORGETBENCH_UNLEARN_HPP
#define FORGETBENCH_UNLEARN_HPP

// Gradient-ascent style unlearning with early stopping on extraction likelihood
// and memorization accuracy, plus update-count efficiency accounting.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "forgetbench/corpus.hpp"
#include "forgetbench/lm.hpp"
#include "forgetbench/mrd.hpp"

namespace fb {

enum class UnlearnMethod { sga, cga, graddiff, npo, po };
std::string_view to_string(UnlearnMethod m);
UnlearnMethod unlearn_method_from_string(std::string_view s);

enum class WeightingScheme { mrd_proportional, inverse_mrd_proportional, uniform };
std::string_view to_string(WeightingScheme w);
/// Accepts the full names and the short forms "mrd" and "inverse".
WeightingScheme weighting_from_string(std::string_view s);

enum class UpdateRule { adamw, sgd };
std::string_view to_string(UpdateRule r);
UpdateRule update_rule_from_string(std::string_view s);

/// Reduction of the ascended negative log-likelihood over a sequence's tokens.
enum class NllReduction { token_mean, sequence_sum };

/// How the per-update cost C is measured.
enum class CostModel { flops, seconds };

struct UnlearnConfig {
  UnlearnMethod method = UnlearnMethod::sga;
  double learning_rate = 5e-5;
  int max_steps = 200;
  /// Forget samples drawn per update.
  int batch_size = 1;
  /// Retain samples per update for the regularized methods.
  int retain_batch_size = 4;
  /// Steps between MRD refreshes; 0 means max_steps / 4.
  int mrd_refresh_interval = 0;
  WeightingScheme weighting = WeightingScheme::mrd_proportional;
  double retain_weight = 1.0;
  double npo_beta = 0.1;
  UpdateRule update_rule = UpdateRule::sgd;
  NllReduction reduction = NllReduction::sequence_sum;
  double weight_decay = 0.0;
  CostModel cost_model = CostModel::flops;
  /// MRD settings used by curriculum sampling.
  EstimatorConfig mrd;
  std::uint64_t seed = 0;

  void validate() const;
  int refresh_interval() const;
};

/// Bars fixed from the model before unlearning; immutable afterwards.
class EarlyStopThresholds {
 public:
  EarlyStopThresholds(double el_bar, double ma_bar, int n_gram);
  double el_bar() const { return el_bar_; }
  double ma_bar() const { return ma_bar_; }
  int n_gram() const { return n_gram_; }
  bool operator==(const EarlyStopThresholds&) const = default;

 private:
  double el_bar_;
  double ma_bar_;
  int n_gram_;
};

/// Mean EL_n and MA of the model over the samples.
EarlyStopThresholds freeze_thresholds(const LanguageModel& model, std::span<const TokenSequence> samples,
                                      int n_gram = 1);

/// EL_n(x) < el_bar and MA(x) < ma_bar under the current model.
bool early_stop_check(const LanguageModel& model, const TokenSequence& x,
                      const EarlyStopThresholds& thresholds);

struct SamplingWeights {
  std::vector<double> per_sample;
};

/// Normalized weights from strictly positive MRD values.
SamplingWeights compute_weights(std::span<const double> mrd_values, WeightingScheme scheme);

struct UnlearnStep {
  std::size_t step = 0;
  std::vector<std::size_t> sample_ids;
  double loss = 0.0;
  double forget_loss = 0.0;
  double retain_loss = 0.0;
  double update_norm = 0.0;
  double cost = 0.0;
  /// Flags after this update, aligned with UnlearnRunLog::sample_ids.
  std::vector<bool> forgotten;
};

struct WeightRefresh {
  std::size_t step = 0;
  std::vector<double> mrd;
  std::vector<double> weights;
  bool fell_back_to_uniform = false;
};

enum class StopReason { constraint_met, budget_exhausted };
std::string_view to_string(StopReason r);

struct UnlearnRunLog {
  UnlearnMethod method = UnlearnMethod::sga;
  std::vector<std::size_t> sample_ids;
  std::vector<UnlearnStep> steps;
  /// Flags before the first update.
  std::vector<bool> initially_forgotten;
  /// Update index (1-based) at which each sample was first flagged; 0 if already
  /// flagged at the start, nullopt if never.
  std::vector<std::optional<std::size_t>> flagged_at;
  /// Times each sample was drawn.
  std::vector<std::size_t> draws;
  /// Status of each sample under the final model, ignoring flag history.
  std::vector<bool> final_status;
  std::vector<WeightRefresh> refreshes;
  StopReason stop_reason = StopReason::budget_exhausted;
  CostModel cost_model = CostModel::flops;
  double per_update_cost = 0.0;
  double mrd_overhead_seconds = 0.0;
  double wall_seconds = 0.0;

  std::size_t total_updates() const { return steps.size(); }
  /// Samples flagged after at most `updates` updates.
  std::size_t forgotten_within(std::size_t updates) const;
};

struct UnlearnResult {
  LanguageModel model;
  UnlearnRunLog log;
};

struct RejectionExample {
  /// The forget sample whose continuation is checked for early stopping.
  TokenSequence original;
  std::vector<int> prompt;
  std::vector<int> target;
};

UnlearnResult run_sga(const LanguageModel& model, std::span<const TokenSequence> forget,
                      const UnlearnConfig& config, const EarlyStopThresholds& thresholds);
UnlearnResult run_cga(const LanguageModel& model, std::span<const TokenSequence> forget,
                      const UnlearnConfig& config, const EarlyStopThresholds& thresholds);
UnlearnResult run_graddiff(const LanguageModel& model, std::span<const TokenSequence> forget,
                           std::span<const TokenSequence> retain, const UnlearnConfig& config,
                           const EarlyStopThresholds& thresholds);
UnlearnResult run_npo(const LanguageModel& model, const LanguageModel& reference,
                      std::span<const TokenSequence> forget, std::span<const TokenSequence> retain,
                      const UnlearnConfig& config, const EarlyStopThresholds& thresholds);
UnlearnResult run_po(const LanguageModel& model, std::span<const RejectionExample> forget,
                     std::span<const TokenSequence> retain, const UnlearnConfig& config,
                     const EarlyStopThresholds& thresholds);

/// NPO forget term (2 / beta) * log(1 + exp(beta * log_ratio)).
double npo_loss(double log_ratio, double beta);

/// Pairs each forget sample with a target; prompts are the first half of the sample.
std::vector<RejectionExample> make_rejection_examples(std::span<const TokenSequence> forget,
                                                      const std::vector<int>& target);
/// JSON list of {"prompt", "target"} strings, matched to forget samples by prompt prefix.
std::vector<RejectionExample> load_rejection_fixtures(const std::filesystem::path& path,
                                                      std::span<const TokenSequence> forget,
                                                      const Vocab& vocab);

struct Efficiency {
  std::size_t M = 0;
  double C = 0.0;
  double E = 0.0;
};
Efficiency efficiency_report(const UnlearnRunLog& log);

nlohmann::json to_json(const UnlearnConfig& c);
UnlearnConfig unlearn_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EarlyStopThresholds& t);
EarlyStopThresholds thresholds_from_json(const nlohmann::json& j);
nlohmann::json to_json(const UnlearnStep& s);
nlohmann::json run_summary_json(const UnlearnRunLog& log);
/// One JSON line per update followed by a summary record.
void write_run_log(const std::filesystem::path& path, const UnlearnRunLog& log);

}  // namespace fb

#endif  // FORGETBENCH_UNLEARN_HPP
