#ifndef FORGETBENCH_TESTS_SUPPORT_HPP
#define FORGETBENCH_TESTS_SUPPORT_HPP

// Shared fixtures: analytic scorers, scripted text models and small models.

#include <cstdint>
#include <string>
#include <vector>

#include "forgetbench/corpus.hpp"
#include "forgetbench/lm.hpp"
#include "forgetbench/metrics.hpp"
#include "forgetbench/mrd.hpp"

namespace fb::testing {

/// P_t(theta) = c_t + b_t . theta + 0.5 theta^T A_t theta, with A_t symmetric.
/// Scores as many positions as there are terms, whatever the sequence.
class QuadraticScorer final : public TokenScorer {
 public:
  struct Term {
    double c = 0.0;
    std::vector<double> b;
    std::vector<std::vector<double>> A;
  };
  QuadraticScorer(std::vector<double> theta, std::vector<Term> terms);

  std::span<const double> parameters() const override { return theta_; }
  std::vector<double> log_probs(std::span<const double> theta, const TokenSequence& x) const override;
  std::vector<std::vector<double>> log_prob_gradients(std::span<const double> theta,
                                                      const TokenSequence& x) const override;
  double trace(std::size_t t) const;
  const std::vector<Term>& terms() const { return terms_; }

 private:
  std::vector<double> theta_;
  std::vector<Term> terms_;
};

/// Random symmetric matrix with eigenvalues in [lo, hi].
std::vector<std::vector<double>> random_spd(std::size_t d, double lo, double hi, std::uint64_t seed);

/// Always predicts the next token of the first stored sequence sharing the
/// prefix, and EOS when none does.
class ScriptedModel final : public TextModel {
 public:
  ScriptedModel(std::vector<std::vector<int>> memorized, std::size_t vocab);
  std::vector<std::vector<double>> teacher_forced_logits(std::span<const int> tokens) const override;
  std::vector<int> greedy_continuation(std::span<const int> prefix, std::size_t max_new) const override;
  std::vector<double> token_log_probs(std::span<const int> tokens) const override;

 private:
  int next(std::span<const int> prefix) const;
  std::vector<double> logits_after(std::span<const int> prefix) const;
  std::vector<std::vector<int>> memorized_;
  std::size_t vocab_;
};

/// Each sequence gets the same fixed log-probability for every token.
class ConstantScoreModel final : public TextModel {
 public:
  explicit ConstantScoreModel(std::vector<std::pair<std::vector<int>, double>> scores);
  std::vector<std::vector<double>> teacher_forced_logits(std::span<const int> tokens) const override;
  std::vector<int> greedy_continuation(std::span<const int> prefix, std::size_t max_new) const override;
  std::vector<double> token_log_probs(std::span<const int> tokens) const override;

 private:
  std::vector<std::pair<std::vector<int>, double>> scores_;
};

TokenSequence sequence(const std::string& text, std::size_t id = 0);

/// Two-layer transformer small enough for exhaustive finite differences.
LmConfig tiny_lm_config(std::uint64_t seed = 3);

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t parameters = 0;
};
/// Builds a random network from `seed` (a tiny transformer or a random
/// composition of elementwise and matrix operations) and compares every
/// reverse-mode partial with a central difference of step h.
GradientCheck check_random_network(std::uint64_t seed, double h = 1e-5);

/// A model trained until it reproduces the handful of given strings.
LanguageModel memorizing_model(const std::vector<std::string>& texts, std::uint64_t seed = 1);

}  // namespace fb::testing

#endif  // FORGETBENCH_TESTS_SUPPORT_HPP
