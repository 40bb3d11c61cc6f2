#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "forgetbench/error.hpp"
#include "forgetbench/mrd.hpp"
#include "forgetbench/rng.hpp"
#include "forgetbench/stats.hpp"
#include "support.hpp"

namespace fb {
namespace {

using testing::QuadraticScorer;

const TokenSequence kAny = testing::sequence("x");

// P_t(theta) = -(1 + theta^T theta) for every position.
QuadraticScorer negative_norm_surrogate(std::vector<double> theta, std::size_t positions) {
  const std::size_t d = theta.size();
  QuadraticScorer::Term term;
  term.c = -1.0;
  term.b.assign(d, 0.0);
  term.A.assign(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i) term.A[i][i] = -2.0;
  return QuadraticScorer(std::move(theta), std::vector<QuadraticScorer::Term>(positions, term));
}

QuadraticScorer diagonal_surrogate(std::vector<double> diag, std::vector<double> theta) {
  QuadraticScorer::Term term;
  term.b.assign(diag.size(), 0.0);
  term.A.assign(diag.size(), std::vector<double>(diag.size(), 0.0));
  for (std::size_t i = 0; i < diag.size(); ++i) term.A[i][i] = diag[i];
  return QuadraticScorer(std::move(theta), {term});
}

MonteCarloOptions mc(double sigma, int K, std::uint64_t seed) {
  MonteCarloOptions o;
  o.sigma = sigma;
  o.K = K;
  o.seed = seed;
  return o;
}

TEST(MrdNaive, ZeroPerturbationIsZero) {
  const auto s = negative_norm_surrogate({0.3, -0.2, 0.5}, 4);
  Perturbation zero;
  zero.delta.assign(3, 0.0);
  EXPECT_EQ(mrd_naive(s, kAny, zero), 0.0);
}

TEST(MrdNaive, SymmetricInSwappedEndpoints) {
  const std::vector<double> theta{0.3, -0.2, 0.5};
  const auto delta = gaussian_perturbation(3, 0.1, 4);
  std::vector<double> moved = theta;
  for (std::size_t i = 0; i < 3; ++i) moved[i] += delta.delta[i];
  Perturbation back = delta;
  for (double& v : back.delta) v = -v;
  const double forward = mrd_naive(negative_norm_surrogate(theta, 3), kAny, delta);
  const double reverse = mrd_naive(negative_norm_surrogate(moved, 3), kAny, back);
  EXPECT_NEAR(forward, reverse, 1e-12);
}

TEST(MrdNaive, EqualsTwoPassDifference) {
  const auto model = init_model(testing::tiny_lm_config());
  const LmScorer scorer(model);
  TokenSequence x;
  x.tokens = {2, 5, 3, 6};
  const auto delta = gaussian_perturbation(scorer.dimension(), 1e-3, 8);
  const auto before = token_log_probs(model, x).sequence_total;
  LanguageModel moved = model;
  moved.params = apply_perturbation(model.params, delta, 1.0);
  const auto after = token_log_probs(moved, x).sequence_total;
  EXPECT_NEAR(mrd_naive(scorer, x, delta), std::abs(before - after), 1e-12);
}

TEST(MrdNaive, DimensionMismatch) {
  const auto s = negative_norm_surrogate({0.1, 0.2}, 1);
  EXPECT_THROW(mrd_naive(s, kAny, gaussian_perturbation(5, 0.1, 1)), ContractViolation);
}

TEST(MrdMonteCarlo, Defaults) {
  const EstimatorConfig c;
  EXPECT_DOUBLE_EQ(c.sigma, 1e-5);
  EXPECT_EQ(c.K, 200);
  EXPECT_EQ(c.probes, 64);
  EXPECT_DOUBLE_EQ(c.fd_step, 1e-4);
  EXPECT_DOUBLE_EQ(c.p_floor, 1e-8);
}

TEST(MrdMonteCarlo, RejectsBadArguments) {
  const auto s = negative_norm_surrogate({0.1}, 1);
  EXPECT_THROW(mrd_monte_carlo(s, kAny, mc(0.0, 10, 1)), InvalidArgument);
  EXPECT_THROW(mrd_monte_carlo(s, kAny, mc(0.1, 0, 1)), InvalidArgument);
}

TEST(MrdMonteCarlo, SingleDrawMatchesNaiveWhenReferenceIsOne) {
  // P_t(theta0) = 1, so the relative sum equals the absolute one.
  QuadraticScorer::Term term;
  term.c = 1.0;
  term.b = {0.5, -1.0, 2.0};
  term.A = testing::random_spd(3, 0.1, 1.0, 3);
  const QuadraticScorer s({0.0, 0.0, 0.0}, {term});
  const auto est = mrd_monte_carlo(s, kAny, mc(0.2, 1, 77));
  const auto delta = gaussian_perturbation(3, 0.2, derive_seed(77, 0));
  EXPECT_DOUBLE_EQ(est.value, mrd_naive(s, kAny, delta));
  EXPECT_EQ(est.K, 1);
}

TEST(MrdMonteCarlo, MatchesBruteForceExpectation) {
  const std::vector<double> theta{0.3, -0.1, 0.4, 0.2, -0.5};
  const auto s = negative_norm_surrogate(theta, 1);
  const double sigma = 0.1;
  const auto est = mrd_monte_carlo(s, kAny, mc(sigma, 200, 2024));
  // Independent generator for the reference expectation.
  std::mt19937_64 gen(12345);
  std::normal_distribution<double> normal(0.0, sigma);
  double norm2 = 0.0;
  for (double v : theta) norm2 += v * v;
  double total = 0.0;
  const int draws = 1000000;
  for (int k = 0; k < draws; ++k) {
    double lin = 0.0, quad = 0.0;
    for (double v : theta) {
      const double d = normal(gen);
      lin += 2.0 * v * d;
      quad += d * d;
    }
    total += std::abs(lin + quad) / (1.0 + norm2);
  }
  const double expected = total / draws;
  EXPECT_GT(est.std_error, 0.0);
  EXPECT_LE(std::abs(est.value - expected), 3.0 * est.std_error);
}

TEST(MrdMonteCarlo, DeterministicAndNonNegative) {
  const auto model = init_model(testing::tiny_lm_config());
  const LmScorer scorer(model);
  TokenSequence x;
  x.tokens = {2, 3, 4, 5};
  const auto a = mrd_monte_carlo(scorer, x, mc(1e-3, 20, 5));
  const auto b = mrd_monte_carlo(scorer, x, mc(1e-3, 20, 5));
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.std_error, b.std_error);
  EXPECT_GE(a.value, 0.0);
  EXPECT_GE(a.std_error, 0.0);
  EXPECT_EQ(a.estimator, MrdEstimator::monte_carlo);
}

TEST(MrdMonteCarlo, VanishesWithSigma) {
  const auto model = init_model(testing::tiny_lm_config());
  const LmScorer scorer(model);
  for (const auto& tokens : {std::vector<int>{2, 3, 4}, std::vector<int>{6, 5, 4, 3, 2}}) {
    TokenSequence x;
    x.tokens = tokens;
    EXPECT_LT(mrd_monte_carlo(scorer, x, mc(1e-7, 20, 1)).value, mrd_monte_carlo(scorer, x, mc(1e-4, 20, 1)).value);
  }
}

TEST(MrdMonteCarlo, FloorExcludesOrRejectsDegeneratePositions) {
  QuadraticScorer::Term good, bad;
  good.c = -0.5;
  good.b = {1.0, 1.0};
  bad.c = 0.0;
  bad.b = {1.0, -1.0};
  const QuadraticScorer s({0.0, 0.0}, {good, bad, good});
  auto o = mc(0.1, 10, 3);
  const auto est = mrd_monte_carlo(s, kAny, o);
  EXPECT_EQ(est.excluded_positions, 1u);
  EXPECT_TRUE(std::isfinite(est.value));
  o.floor = FloorPolicy::error;
  try {
    mrd_monte_carlo(s, kAny, o);
    FAIL() << "expected a degenerate-token error";
  } catch (const DegenerateToken& e) {
    EXPECT_EQ(e.position(), 2u);
  }
}

TEST(HutchinsonTrace, DiagonalQuadratic) {
  const auto s = diagonal_surrogate({1, 2, 3, 4, 5}, {0.1, 0.2, 0.3, 0.4, 0.5});
  const auto tr = hutchinson_trace(s, kAny, 1000, 1e-4, 9);
  ASSERT_EQ(tr.per_token.size(), 1u);
  EXPECT_NEAR(tr.per_token[0] / 15.0, 1.0, 0.05);
  EXPECT_EQ(tr.probes, 1000);
}

TEST(HutchinsonTrace, IdentityHessianIsExactPerProbe) {
  const auto s = diagonal_surrogate(std::vector<double>(10, 1.0), std::vector<double>(10, 0.3));
  const auto tr = hutchinson_trace(s, kAny, 16, 1e-4, 2);
  for (const auto& row : tr.probe_values) EXPECT_NEAR(row[0], 10.0, 1e-8);
}

TEST(HutchinsonTrace, DoublingProbesShrinksSpreadBySqrtTwo) {
  QuadraticScorer::Term term;
  term.b.assign(8, 0.0);
  term.A = testing::random_spd(8, 0.5, 4.0, 17);
  const QuadraticScorer s(std::vector<double>(8, 0.1), {term});
  auto spread = [&](int probes) {
    std::vector<double> v;
    for (int r = 0; r < 50; ++r) v.push_back(hutchinson_trace(s, kAny, probes, 1e-4, derive_seed(probes, r)).per_token[0]);
    return stats::stddev(v);
  };
  const double ratio = spread(16) / spread(32);
  EXPECT_GT(ratio, std::sqrt(2.0) * 0.7);
  EXPECT_LT(ratio, std::sqrt(2.0) * 1.4);
}

TEST(HutchinsonTrace, RejectsBadArguments) {
  const auto s = diagonal_surrogate({1.0}, {0.0});
  EXPECT_THROW(hutchinson_trace(s, kAny, 0, 1e-4, 1), InvalidArgument);
  EXPECT_THROW(hutchinson_trace(s, kAny, 4, 0.0, 1), InvalidArgument);
}

class NanGradientScorer final : public TokenScorer {
 public:
  std::span<const double> parameters() const override { return theta_; }
  std::vector<double> log_probs(std::span<const double>, const TokenSequence&) const override {
    return {-1.0, -1.0};
  }
  std::vector<std::vector<double>> log_prob_gradients(std::span<const double>, const TokenSequence&) const override {
    return {{1.0, 1.0}, {std::numeric_limits<double>::quiet_NaN(), 0.0}};
  }

 private:
  std::vector<double> theta_{0.0, 0.0};
};

TEST(HutchinsonTrace, NonFiniteGradientNamesPositionAndProbe) {
  try {
    hutchinson_trace(NanGradientScorer(), kAny, 3, 1e-4, 1);
    FAIL() << "expected a numerical failure";
  } catch (const NumericalFailure& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("position 2"), std::string::npos) << what;
    EXPECT_NE(what.find("probe 0"), std::string::npos) << what;
  }
}

TEST(MrdHessianApprox, FlatCurvatureIsZero) {
  const auto s = diagonal_surrogate({0.0, 0.0}, {0.1, 0.2});
  TraceEstimate tr;
  tr.per_token = {0.0};
  tr.probes = 1;
  EXPECT_EQ(mrd_hessian_approx(s, kAny, 1e-3, tr).value, 0.0);
}

TEST(MrdHessianApprox, QuadraticInSigma) {
  const auto s = negative_norm_surrogate({0.2, 0.1}, 3);
  const auto tr = hutchinson_trace(s, kAny, 4, 1e-4, 3);
  const double a = mrd_hessian_approx(s, kAny, 1e-3, tr).value;
  const double b = mrd_hessian_approx(s, kAny, 2e-3, tr).value;
  EXPECT_GT(a, 0.0);
  EXPECT_DOUBLE_EQ(b, 4.0 * a);
}

TEST(MrdHessianApprox, AgreesWithMonteCarloOnSurrogate) {
  // Stationary point: the first-order term vanishes for every draw.
  const auto stationary = negative_norm_surrogate(std::vector<double>(20, 0.0), 3);
  const auto tr = hutchinson_trace(stationary, kAny, 8, 1e-4, 5);
  const double approx = mrd_hessian_approx(stationary, kAny, 1e-3, tr).value;
  const double mc_value = mrd_monte_carlo(stationary, kAny, mc(1e-3, 1000, 6)).value;
  EXPECT_LE(std::abs(mc_value - approx) / approx, 0.10);
  // Away from it, antithetic pairs cancel the odd terms.
  QuadraticScorer::Term term;
  term.c = -2.0;
  term.b.assign(20, 0.3);
  term.A = testing::random_spd(20, 0.5, 2.0, 8);
  const QuadraticScorer moving(std::vector<double>(20, 0.0), {term, term});
  auto o = mc(1e-3, 1000, 7);
  o.antithetic = true;
  o.form = MrdForm::absolute_of_mean;
  const double a2 = mrd_hessian_approx(moving, kAny, 1e-3, hutchinson_trace(moving, kAny, 64, 1e-4, 3)).value;
  double exact_trace = 0.0;
  for (std::size_t t = 0; t < 2; ++t) exact_trace += moving.trace(t) / -2.0;
  EXPECT_NEAR(a2, std::abs(0.5e-6 * exact_trace), 0.1 * a2);
  EXPECT_LE(std::abs(mrd_monte_carlo(moving, kAny, o).value - a2) / a2, 0.10);
}

TEST(RankByMrd, SingletonAndOrderIndependence) {
  const auto model = init_model(testing::tiny_lm_config());
  const LmScorer scorer(model);
  std::vector<TokenSequence> xs;
  for (std::size_t i = 0; i < 6; ++i) {
    TokenSequence x;
    x.sample_id = 10 + i;
    x.tokens = {2 + static_cast<int>(i % 5), 3, 4 + static_cast<int>(i % 3), 5};
    xs.push_back(x);
  }
  EstimatorConfig c;
  c.sigma = 1e-3;
  c.K = 10;
  c.master_seed = 4;
  EXPECT_EQ(rank_by_mrd(scorer, std::span(xs).first(1), c).size(), 1u);
  const auto a = rank_by_mrd(scorer, xs, c);
  std::vector<TokenSequence> reversed(xs.rbegin(), xs.rend());
  c.workers = 3;
  const auto b = rank_by_mrd(scorer, reversed, c);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].sample_id, b[i].sample_id);
    EXPECT_EQ(a[i].estimate.value, b[i].estimate.value);
    if (i) EXPECT_GE(a[i - 1].estimate.value, a[i].estimate.value);
  }
  EXPECT_THROW(rank_by_mrd(scorer, std::span<const TokenSequence>{}, c), InvalidArgument);
}

TEST(RankByMrd, TiesBreakBySampleId) {
  // Constant log-likelihoods: every sample has MRD exactly zero.
  QuadraticScorer::Term flat;
  flat.c = -1.0;
  const QuadraticScorer s({0.1, 0.2}, {flat, flat});
  std::vector<TokenSequence> xs(3);
  xs[0].sample_id = 9;
  xs[1].sample_id = 2;
  xs[2].sample_id = 5;
  EstimatorConfig c;
  c.K = 5;
  const auto r = rank_by_mrd(s, xs, c);
  EXPECT_EQ(r[0].estimate.value, 0.0);
  EXPECT_EQ(r[0].sample_id, 2u);
  EXPECT_EQ(r[1].sample_id, 5u);
  EXPECT_EQ(r[2].sample_id, 9u);
}

TEST(RankByMrd, ErrorsNameTheSample) {
  QuadraticScorer::Term bad;
  bad.b = {1.0};
  const QuadraticScorer s({0.0}, {bad});
  std::vector<TokenSequence> xs(1);
  xs[0].sample_id = 31;
  EstimatorConfig c;
  c.floor = FloorPolicy::error;
  try {
    rank_by_mrd(s, xs, c);
    FAIL() << "expected an error";
  } catch (const DegenerateToken& e) {
    EXPECT_NE(std::string(e.what()).find("sample 31"), std::string::npos);
  }
}

TEST(MrdReport, RoundTrips) {
  const auto path = std::filesystem::temp_directory_path() / "forgetbench_mrd_report.jsonl";
  RankedSample r;
  r.sample_id = 4;
  r.estimate.value = 0.125;
  r.estimate.std_error = 0.01;
  r.estimate.sigma = 1e-5;
  r.estimate.K = 200;
  r.estimate.seed = 99;
  r.estimate.excluded_positions = 2;
  const std::vector<RankedSample> rows{r};
  write_mrd_report(path, rows);
  const auto back = read_mrd_report(path);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].sample_id, 4u);
  EXPECT_EQ(back[0].estimate.value, 0.125);
  EXPECT_EQ(back[0].estimate.K, 200);
  EXPECT_EQ(back[0].estimate.excluded_positions, 2u);
  std::filesystem::remove(path);
  EXPECT_THROW(read_mrd_report(path), LoadError);
}

TEST(EstimatorConfig, JsonRoundTrip) {
  EstimatorConfig c;
  c.kind = MrdEstimator::hessian_approx;
  c.sigma = 3e-4;
  c.probes = 12;
  c.form = MrdForm::absolute_of_mean;
  c.antithetic = true;
  const auto back = estimator_config_from_json(to_json(c));
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.sigma, c.sigma);
  EXPECT_EQ(back.probes, c.probes);
  EXPECT_EQ(back.form, c.form);
  EXPECT_EQ(back.antithetic, c.antithetic);
}

}  // namespace
}  // namespace fb
