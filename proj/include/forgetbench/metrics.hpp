#ifndef FORGETBENCH_METRICS_HPP
#define FORGETBENCH_METRICS_HPP

// Memorization, extraction and membership metrics. Every score lies in [0, 1].

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "forgetbench/corpus.hpp"
#include "forgetbench/lm.hpp"

namespace fb {

/// The queries the metrics need from a model.
class TextModel {
 public:
  virtual ~TextModel() = default;
  /// Row t holds the next-token logits after BOS + tokens[0..t-1].
  virtual std::vector<std::vector<double>> teacher_forced_logits(std::span<const int> tokens) const = 0;
  /// Greedy continuation; stops on EOS (not emitted), after max_new tokens or at the context limit.
  virtual std::vector<int> greedy_continuation(std::span<const int> prefix, std::size_t max_new) const = 0;
  /// log p(x_t | x_<t) for every token.
  virtual std::vector<double> token_log_probs(std::span<const int> tokens) const = 0;
};

class LmTextModel final : public TextModel {
 public:
  explicit LmTextModel(const LanguageModel& model) : model_(&model) {}
  std::vector<std::vector<double>> teacher_forced_logits(std::span<const int> tokens) const override;
  std::vector<int> greedy_continuation(std::span<const int> prefix, std::size_t max_new) const override;
  std::vector<double> token_log_probs(std::span<const int> tokens) const override;

 private:
  const LanguageModel* model_;
};

/// Fraction of t = 1..T-1 where the argmax after x_1..x_t equals x_{t+1}.
double memorization_accuracy(const TextModel& model, const TokenSequence& x);

/// Fraction of the n-grams of `a` (with repeats) that occur among the n-grams of `b`.
double ngram_overlap(std::span<const int> a, std::span<const int> b, int n);
double ngram_overlap(const TokenSequence& a, const TokenSequence& b, int n);

inline constexpr int kDefaultElN = 1;
inline constexpr double kDefaultMinKFraction = 0.2;

/// Mean over t = 1..T-n of the n-gram overlap between the greedy continuation of
/// x_<t (at most |x_>=t| tokens) and x_>=t. Continuations shorter than n score 0.
double extraction_likelihood(const TextModel& model, const TokenSequence& x, int n = kDefaultElN);

/// LCS(reference, hypothesis) / |reference|.
double rouge_l_recall(std::span<const int> reference, std::span<const int> hypothesis);
double rouge_l_recall(const TokenSequence& reference, const TokenSequence& hypothesis);

struct QaPair {
  std::vector<int> prompt;
  std::vector<int> answer;
};

/// First floor(T/2) tokens (at least one) as prompt, the rest as answer.
QaPair qa_pair(const TokenSequence& x);
std::vector<QaPair> qa_pairs(std::span<const TokenSequence> xs);

/// Whether the greedy continuation of the prompt reproduces the answer exactly.
bool reproduces_answer(const TextModel& model, const QaPair& pair);
/// 1 - fraction of prompts whose greedy continuation equals the answer.
double unlearning_accuracy(const TextModel& model, std::span<const QaPair> pairs);
/// Rouge-L recall of the answer against the greedy continuation of the prompt.
double answer_rouge_l(const TextModel& model, const QaPair& pair);

/// Mean of the ceil(k_fraction * n) lowest values.
double min_k_score(std::span<const double> log_probs, double k_fraction);
/// P(nonmember score > member score) + P(tie) / 2.
double membership_auc(std::span<const double> member_scores, std::span<const double> nonmember_scores);
double min_k_prob_mia(const TextModel& model, std::span<const TokenSequence> members,
                      std::span<const TokenSequence> nonmembers,
                      double k_fraction = kDefaultMinKFraction);

struct SplitMetrics {
  std::size_t count = 0;
  double ma = 0.0;
  double el = 0.0;
  double rouge_l = 0.0;
  double ua = 0.0;
};

struct MetricsOptions {
  int el_n = kDefaultElN;
  double k_fraction = kDefaultMinKFraction;
};

SplitMetrics evaluate_split(const TextModel& model, std::span<const TokenSequence> xs,
                            const MetricsOptions& options = {});

struct MetricsReport {
  MetricsOptions options;
  SplitMetrics forget;
  SplitMetrics retain;
  SplitMetrics heldout;
  /// Forget set as members, held-out set as non-members.
  double mia_auc = 0.0;

  /// 1 - forget Rouge-L recall.
  double rr() const { return 1.0 - forget.rouge_l; }
  /// Unweighted mean of UA, MIA and RR.
  double completeness_avg() const { return (forget.ua + mia_auc + rr()) / 3.0; }
};

/// Retain and held-out utility only.
MetricsReport utility_report(const TextModel& model, std::span<const TokenSequence> retain,
                             std::span<const TokenSequence> heldout, const MetricsOptions& options = {});
MetricsReport metrics_report(const TextModel& model, const Corpus& corpus,
                             const MetricsOptions& options = {});

nlohmann::json to_json(const SplitMetrics& m);
SplitMetrics split_metrics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

/// Column names and one row of the flattened report.
std::vector<std::string> metrics_csv_header();
std::vector<double> metrics_csv_row(const MetricsReport& r);

}  // namespace fb

#endif  // FORGETBENCH_METRICS_HPP
