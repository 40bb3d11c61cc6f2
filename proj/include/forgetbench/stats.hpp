#ifndef FORGETBENCH_STATS_HPP
#define FORGETBENCH_STATS_HPP

#include <cstddef>
#include <span>
#include <vector>

namespace fb::stats {

double mean(std::span<const double> xs);

/// Unbiased (n-1) sample standard deviation; 0 for fewer than two values.
double stddev(std::span<const double> xs);

double median(std::span<const double> xs);

/// stddev / |mean|.
double coefficient_of_variation(std::span<const double> xs);

/// 1-based ranks, ties receive the average of the ranks they span.
std::vector<double> ranks(std::span<const double> xs);

double pearson(std::span<const double> xs, std::span<const double> ys);

/// Pearson correlation of average ranks. Returns 0 when either side is constant.
double spearman(std::span<const double> xs, std::span<const double> ys);

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  /// max_i |y_i - fit_i| / |y_i|
  double max_relative_residual = 0.0;
};

LinearFit linear_fit(std::span<const double> xs, std::span<const double> ys);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  /// One-sided p-value for mean(a) > mean(b).
  double p_greater = 1.0;
};

/// Welch's unequal-variance t test.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace fb::stats

#endif  // FORGETBENCH_STATS_HPP
