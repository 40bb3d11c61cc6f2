#ifndef FORGETBENCH_EXPERIMENTS_HPP
#define FORGETBENCH_EXPERIMENTS_HPP

// Seeded end-to-end pipelines shared by the command-line runner and the
// acceptance suite, plus result-bundle persistence.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "forgetbench/corpus.hpp"
#include "forgetbench/lm.hpp"
#include "forgetbench/metrics.hpp"
#include "forgetbench/mrd.hpp"
#include "forgetbench/unlearn.hpp"

namespace fb {

inline constexpr const char* kVersion = "0.1.0";

struct SensitivityConfig {
  std::vector<int> ks{10, 25, 50, 100, 200};
  int repeats = 20;
  std::vector<double> sigma_multipliers{1, 2, 3, 4};
  /// Samples used for the K sweep (and the first ones of the sigma sweep).
  int k_sweep_samples = 5;
  int sigma_sweep_samples = 20;
};

struct CompareConfig {
  int seeds = 5;
  std::vector<UnlearnMethod> methods{UnlearnMethod::sga, UnlearnMethod::cga, UnlearnMethod::graddiff,
                                     UnlearnMethod::npo, UnlearnMethod::po};
  std::vector<WeightingScheme> weightings{WeightingScheme::mrd_proportional,
                                          WeightingScheme::inverse_mrd_proportional};
};

struct ExperimentConfig {
  std::string kind;
  std::optional<std::filesystem::path> corpus_path;
  std::optional<std::filesystem::path> checkpoint_path;
  std::optional<std::filesystem::path> fixtures_path;
  /// Rejection target used when no fixtures file is given.
  std::string rejection_target = "i cannot say.";
  CorpusSpec corpus = CorpusSpec::standard();
  LmConfig lm;
  OptimizerConfig optimizer;
  UnlearnConfig unlearn;
  EstimatorConfig mrd;
  MetricsOptions metrics;
  SensitivityConfig sensitivity;
  CompareConfig compare;
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";

  /// Propagates the master seed to every component.
  void apply_seed(std::uint64_t master);
  void validate() const;
};

/// Toy-scale defaults that train to MA >= 0.9 in about a minute on one core.
ExperimentConfig default_experiment_config();
/// Fields present in `j` override `base`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig base);
nlohmann::json to_json(const ExperimentConfig& c);

/// Version and floating-point environment.
nlohmann::json environment_fingerprint();

/// Output directory holding a config snapshot and the result tables.
class ResultBundle {
 public:
  ResultBundle(std::filesystem::path dir, const nlohmann::json& config_snapshot);
  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }
  void write_json(const std::string& name, const nlohmann::json& value) const;
  void write_csv(const std::string& name, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) const;

 private:
  std::filesystem::path dir_;
};

/// Shortest round-tripping decimal form.
std::string format_number(double v);

Corpus load_or_generate_corpus(const ExperimentConfig& c);
/// Loads the configured checkpoint or trains a model from scratch.
LanguageModel load_or_train_model(const ExperimentConfig& c, const Corpus& corpus);

/// Mean MA over the samples.
double mean_memorization_accuracy(const LanguageModel& model, std::span<const TokenSequence> xs);

// ---- MRD estimators side by side -------------------------------------------

struct MrdComparisonRow {
  std::size_t sample_id = 0;
  MrdEstimate monte_carlo;
  MrdEstimate hessian_approx;
};
struct MrdComparison {
  std::vector<MrdComparisonRow> rows;
  double spearman = 0.0;
};
MrdComparison compare_estimators(const TokenScorer& scorer, std::span<const TokenSequence> xs,
                                 const EstimatorConfig& base);

// ---- characteristics --------------------------------------------------------

struct TierSummary {
  std::string axis;
  std::string tier;
  std::size_t count = 0;
  double mean = 0.0;
  double std_error = 0.0;
};

struct DirectionTest {
  std::string axis;
  /// Tier expected to have the larger mean.
  std::string larger;
  std::string smaller;
  double mean_larger = 0.0;
  double mean_smaller = 0.0;
  /// One-sided Welch p-value on raw MRD values.
  double p_value = 1.0;
  /// One-sided Welch p-value after dividing each value by the mean of its
  /// stratum on the other construction axis.
  double p_value_stratified = 1.0;
  bool direction_holds() const { return mean_larger > mean_smaller; }
};

struct CharacteristicsReport {
  std::vector<std::size_t> sample_ids;
  std::vector<double> mrd;
  std::vector<TierSummary> tiers;
  /// frequency: low > high; complexity: high > low.
  DirectionTest frequency;
  DirectionTest complexity;
  /// Derived post-training label; reported only.
  DirectionTest generation_probability;
};
CharacteristicsReport characteristics(const LanguageModel& model, std::span<const TokenSequence> xs,
                                      const EstimatorConfig& estimator);

// ---- estimator sensitivity --------------------------------------------------

struct KSweepRow {
  int K = 0;
  /// Standard deviation across repeats, averaged over samples.
  double std_dev = 0.0;
};
struct SensitivityReport {
  std::vector<KSweepRow> k_sweep;
  std::vector<double> sigma_multipliers;
  /// Pairwise Spearman correlation of the sample rankings across multipliers.
  std::vector<std::vector<double>> sigma_spearman;
  double std_at(int K) const;
  double min_sigma_spearman() const;
};
SensitivityReport sensitivity(const TokenScorer& scorer, std::span<const TokenSequence> xs,
                              const EstimatorConfig& base, const SensitivityConfig& config);

// ---- per-sample unlearning --------------------------------------------------

struct PerSampleRow {
  std::size_t sample_id = 0;
  double mrd = 0.0;
  std::size_t updates = 0;
  bool initially_forgotten = false;
  StopReason stop_reason = StopReason::budget_exhausted;
  /// Mean absolute parameter change after the run.
  double mean_abs_change = 0.0;
};
/// Unlearns each sample on its own with SGA and records updates and parameter change.
std::vector<PerSampleRow> per_sample_unlearning(const LanguageModel& model,
                                                std::span<const TokenSequence> xs,
                                                const UnlearnConfig& config,
                                                const EarlyStopThresholds& thresholds,
                                                const EstimatorConfig& estimator);

// ---- method comparison ------------------------------------------------------

struct CompareRow {
  std::uint64_t seed = 0;
  UnlearnMethod method = UnlearnMethod::sga;
  /// Only meaningful for CGA.
  WeightingScheme weighting = WeightingScheme::uniform;
  std::optional<std::string> failure;
  std::size_t M = 0;
  double C = 0.0;
  double E = 0.0;
  StopReason stop_reason = StopReason::budget_exhausted;
  std::size_t forgotten = 0;
  std::vector<std::optional<std::size_t>> flagged_at;
  MetricsReport metrics;
};

/// Forget set and retain set for one comparison seed.
ForgetRetainSplit comparison_split(const Corpus& corpus, std::uint64_t seed);

UnlearnResult run_method(const LanguageModel& model, const Corpus& corpus,
                         std::span<const TokenSequence> forget, std::span<const TokenSequence> retain,
                         UnlearnMethod method, const UnlearnConfig& config,
                         const EarlyStopThresholds& thresholds,
                         const std::vector<RejectionExample>* rejection = nullptr);

std::vector<CompareRow> compare_methods(const LanguageModel& model, const Corpus& corpus,
                                        const ExperimentConfig& config,
                                        const EarlyStopThresholds& thresholds, bool with_metrics);

struct CgaSgaSummary {
  double median_m_sga = 0.0;
  double median_m_cga = 0.0;
  /// Median over seeds of samples flagged within the SGA median budget.
  double median_forgotten_sga = 0.0;
  double median_forgotten_cga = 0.0;
  bool passes() const {
    return median_m_cga < median_m_sga && median_forgotten_cga >= median_forgotten_sga;
  }
};
/// Uses the CGA rows with the given weighting.
CgaSgaSummary summarize_cga_vs_sga(const std::vector<CompareRow>& rows, WeightingScheme weighting);

std::vector<std::string> compare_csv_header();
std::vector<std::string> compare_csv_row(const CompareRow& r);

}  // namespace fb

#endif  // FORGETBENCH_EXPERIMENTS_HPP
