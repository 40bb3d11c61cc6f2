#ifndef FORGETBENCH_MRD_HPP
#define FORGETBENCH_MRD_HPP

// Memory Removal Difficulty: how much a sample's per-token log-likelihoods move,
// relative to their size, when the parameters receive Gaussian noise.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "forgetbench/corpus.hpp"
#include "forgetbench/lm.hpp"
#include "forgetbench/params.hpp"

namespace fb {

/// Per-token log-likelihood P_t(theta) and its gradients, queried at arbitrary theta.
class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  /// The reference point theta at which MRD is measured.
  virtual std::span<const double> parameters() const = 0;
  std::size_t dimension() const { return parameters().size(); }
  virtual std::vector<double> log_probs(std::span<const double> theta,
                                        const TokenSequence& x) const = 0;
  /// Row t is the gradient of the t-th scored log-likelihood.
  virtual std::vector<std::vector<double>> log_prob_gradients(std::span<const double> theta,
                                                              const TokenSequence& x) const = 0;
};

/// Scores sequences with a language model; the model must outlive the scorer.
class LmScorer final : public TokenScorer {
 public:
  explicit LmScorer(const LanguageModel& model) : model_(&model) {}
  std::span<const double> parameters() const override { return model_->params.values; }
  std::vector<double> log_probs(std::span<const double> theta,
                                const TokenSequence& x) const override;
  std::vector<std::vector<double>> log_prob_gradients(std::span<const double> theta,
                                                      const TokenSequence& x) const override;

 private:
  const LanguageModel* model_;
};

enum class MrdEstimator { naive, monte_carlo, hessian_approx };
std::string_view to_string(MrdEstimator e);
MrdEstimator mrd_estimator_from_string(std::string_view s);

/// What happens to scored positions with |P_t| below the floor.
enum class FloorPolicy { exclude, error };

/// Where the outer absolute value sits in the Monte-Carlo average.
enum class MrdForm {
  /// mean_k |sum_t Delta_t(delta_k)|: the per-draw computation.
  per_draw_absolute,
  /// |mean_k sum_t Delta_t(delta_k)|: absolute value of the expectation.
  absolute_of_mean,
};
std::string_view to_string(MrdForm f);
MrdForm mrd_form_from_string(std::string_view s);

inline constexpr double kDefaultPFloor = 1e-8;
inline constexpr double kDefaultSigma = 1e-5;
inline constexpr int kDefaultMonteCarloDraws = 200;
inline constexpr int kDefaultProbes = 64;
inline constexpr double kDefaultFdStep = 1e-4;

struct MrdEstimate {
  double value = 0.0;
  MrdEstimator estimator = MrdEstimator::monte_carlo;
  double sigma = 0.0;
  /// Monte-Carlo repetitions; 0 for other estimators.
  int K = 0;
  double std_error = 0.0;
  std::uint64_t seed = 0;
  std::size_t excluded_positions = 0;
  /// Hutchinson provenance for hessian_approx.
  int probes = 0;
  double fd_step = 0.0;
};

struct TraceEstimate {
  /// Estimated Tr(H_t) per scored position.
  std::vector<double> per_token;
  std::vector<double> per_token_std_error;
  /// Raw probe values, probes x positions.
  std::vector<std::vector<double>> probe_values;
  int probes = 0;
  double fd_step = 0.0;
  std::uint64_t seed = 0;
};

/// |sum_t (P_t(theta) - P_t(theta + delta))| for one given perturbation.
double mrd_naive(const TokenScorer& scorer, const TokenSequence& x, const Perturbation& delta);

struct MonteCarloOptions {
  double sigma = kDefaultSigma;
  int K = kDefaultMonteCarloDraws;
  std::uint64_t seed = 0;
  double p_floor = kDefaultPFloor;
  FloorPolicy floor = FloorPolicy::exclude;
  MrdForm form = MrdForm::per_draw_absolute;
  /// Evaluate each draw at +delta and -delta and average the two relative sums.
  bool antithetic = false;
};

/// Relative-change MRD averaged over K seeded Gaussian draws; draw k uses
/// derive_seed(seed, k).
MrdEstimate mrd_monte_carlo(const TokenScorer& scorer, const TokenSequence& x,
                            const MonteCarloOptions& options);

/// Hutchinson estimate of Tr(H_t) per position from central differences of
/// gradients along Rademacher probes.
TraceEstimate hutchinson_trace(const TokenScorer& scorer, const TokenSequence& x, int probes,
                               double fd_step, std::uint64_t seed);

/// |(sigma^2 / 2) * sum_t Tr(H_t) / P_t(theta)|.
MrdEstimate mrd_hessian_approx(const TokenScorer& scorer, const TokenSequence& x, double sigma,
                               const TraceEstimate& trace, double p_floor = kDefaultPFloor,
                               FloorPolicy floor = FloorPolicy::exclude);

struct EstimatorConfig {
  MrdEstimator kind = MrdEstimator::monte_carlo;
  double sigma = kDefaultSigma;
  int K = kDefaultMonteCarloDraws;
  int probes = kDefaultProbes;
  double fd_step = kDefaultFdStep;
  std::uint64_t master_seed = 0;
  double p_floor = kDefaultPFloor;
  FloorPolicy floor = FloorPolicy::exclude;
  MrdForm form = MrdForm::per_draw_absolute;
  bool antithetic = false;
  /// Samples estimated concurrently by rank_by_mrd; results do not depend on it.
  int workers = 1;
};

/// Runs the configured estimator with seeds derived from (master_seed, sample_id).
MrdEstimate estimate_mrd(const TokenScorer& scorer, const TokenSequence& x,
                         const EstimatorConfig& config);

struct RankedSample {
  std::size_t sample_id = 0;
  MrdEstimate estimate;
};

/// Descending by MRD value, ties by ascending sample id.
std::vector<RankedSample> rank_by_mrd(const TokenScorer& scorer,
                                      std::span<const TokenSequence> samples,
                                      const EstimatorConfig& config);

nlohmann::json to_json(const RankedSample& r);
RankedSample ranked_sample_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EstimatorConfig& c);
EstimatorConfig estimator_config_from_json(const nlohmann::json& j);

/// JSON lines: {sample_id, estimator, value, std_error, sigma, K, excluded_positions, ...}.
void write_mrd_report(const std::filesystem::path& path, std::span<const RankedSample> rows);
std::vector<RankedSample> read_mrd_report(const std::filesystem::path& path);

}  // namespace fb

#endif  // FORGETBENCH_MRD_HPP
