// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.
//
//   acceptance [--checkpoint PATH --corpus PATH] [N ...]
//
// With numbers, only those criteria run. A checkpoint and corpus saved by
// `forgetbench train` skip the training step.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "forgetbench/error.hpp"
#include "forgetbench/experiments.hpp"
#include "forgetbench/rng.hpp"
#include "forgetbench/stats.hpp"
#include "forgetbench/tensor.hpp"
#include "support.hpp"

namespace fb {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Detail {
 public:
  template <class T>
  Detail& operator()(const std::string& key, const T& value) {
    if (out_.tellp() > 0) out_ << ' ';
    out_ << key << '=' << value;
    return *this;
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

struct Shared {
  ExperimentConfig config;
  Corpus corpus;
  LanguageModel model;
  EarlyStopThresholds thresholds;
};

std::optional<std::filesystem::path> g_checkpoint, g_corpus;

const Shared& shared() {
  static std::unique_ptr<Shared> s;
  if (!s) {
    auto c = default_experiment_config();
    c.corpus_path = g_corpus;
    c.checkpoint_path = g_checkpoint;
    if (const char* w = std::getenv("FB_WORKERS")) c.mrd.workers = std::max(1, std::atoi(w));
    const auto t0 = std::chrono::steady_clock::now();
    auto corpus = load_or_generate_corpus(c);
    auto model = load_or_train_model(c, corpus);
    const auto th = freeze_thresholds(model, corpus.training_samples(), c.metrics.el_n);
    std::cerr << "shared model ready in "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
    s = std::make_unique<Shared>(Shared{c, std::move(corpus), std::move(model), th});
  }
  return *s;
}

bool trace_identical(const UnlearnResult& a, const UnlearnResult& b) {
  if (a.log.steps.size() != b.log.steps.size()) return false;
  for (std::size_t s = 0; s < a.log.steps.size(); ++s) {
    const auto& x = a.log.steps[s];
    const auto& y = b.log.steps[s];
    if (x.sample_ids != y.sample_ids || x.forget_loss != y.forget_loss || x.update_norm != y.update_norm)
      return false;
  }
  return a.model.params.values == b.model.params.values && a.log.flagged_at == b.log.flagged_at;
}

std::vector<TokenSequence> not_initially_forgotten(std::span<const TokenSequence> xs, std::size_t count,
                                                   const Shared& s) {
  std::vector<TokenSequence> out;
  for (const auto& x : xs) {
    if (out.size() == count) break;
    if (!early_stop_check(s.model, x, s.thresholds)) out.push_back(x);
  }
  return out;
}

// ---- criteria ---------------------------------------------------------------

Outcome gradient_correctness() {
  double worst = 0.0;
  std::uint64_t worst_seed = 0;
  std::size_t params = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = testing::check_random_network(1000 + seed, 1e-5);
    params += r.parameters;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_seed = 1000 + seed;
    }
  }
  return {worst <= 1e-4, Detail()("networks", 50)("parameters", params)("max_rel_err", worst)("worst_seed", worst_seed).str()};
}

Outcome quadratic_form() {
  const std::size_t d = 50;
  const double sigma = 0.1;
  const int draws = 10000;
  const auto A = testing::random_spd(d, 0.5, 3.0, 77);
  std::vector<double> flat;
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    trace += A[i][i];
    flat.insert(flat.end(), A[i].begin(), A[i].end());
  }
  // Direct quadratic form, and the same quantity from engine gradients of 0.5 theta^T A theta.
  auto layout = std::make_shared<ParamLayout>();
  layout->add("theta", {d, 1});
  auto grad_at = [&](const std::vector<double>& theta) {
    const ParamBinding p(theta, layout);
    const auto f = scale(sum(mul(p["theta"], matmul(Tensor::constant({d, d}, flat), p["theta"]))), 0.5);
    return forward_backward(f, p).gradient.values;
  };
  const std::vector<double> theta0(d, 0.3);
  const auto g0 = grad_at(theta0);
  double direct = 0.0, engine = 0.0;
  for (int k = 0; k < draws; ++k) {
    const auto delta = gaussian_perturbation(d, sigma, derive_seed(2024, k)).delta;
    std::vector<double> shifted = theta0;
    for (std::size_t i = 0; i < d; ++i) shifted[i] += delta[i];
    const auto g = grad_at(shifted);
    for (std::size_t i = 0; i < d; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < d; ++j) row += A[i][j] * delta[j];
      direct += delta[i] * row;
      engine += delta[i] * (g[i] - g0[i]);
    }
  }
  const double expected = sigma * sigma * trace;
  const double e1 = std::abs(direct / draws - expected) / expected;
  const double e2 = std::abs(engine / draws - expected) / expected;
  return {e1 <= 0.05 && e2 <= 0.05,
          Detail()("d", d)("draws", draws)("sigma2_trace", expected)("rel_err_direct", e1)("rel_err_engine", e2).str()};
}

Outcome second_order_validity() {
  using testing::QuadraticScorer;
  const TokenSequence any;
  const std::size_t d = 30;
  const double sigma = 1e-3;
  // Stationary surrogate with exactly known curvature.
  QuadraticScorer::Term flat_term;
  flat_term.c = -1.5;
  flat_term.A = testing::random_spd(d, 0.5, 2.0, 31);
  for (auto& row : flat_term.A)
    for (double& v : row) v = -v;
  const QuadraticScorer stationary(std::vector<double>(d, 0.0), {flat_term, flat_term, flat_term});
  TraceEstimate exact;
  for (std::size_t t = 0; t < 3; ++t) exact.per_token.push_back(stationary.trace(t));
  exact.probes = 1;
  const double approx1 = mrd_hessian_approx(stationary, any, sigma, exact).value;
  MonteCarloOptions o;
  o.sigma = sigma;
  o.K = 1000;
  o.seed = 41;
  const double mc1 = mrd_monte_carlo(stationary, any, o).value;
  const double err1 = std::abs(mc1 - approx1) / approx1;
  // Surrogate with a nonzero first-order term, estimated with antithetic draws.
  QuadraticScorer::Term moving_term;
  moving_term.c = -2.0;
  moving_term.b.assign(d, 0.3);
  moving_term.A = testing::random_spd(d, 0.5, 2.0, 32);
  const QuadraticScorer moving(std::vector<double>(d, 0.0), {moving_term, moving_term});
  TraceEstimate exact2;
  for (std::size_t t = 0; t < 2; ++t) exact2.per_token.push_back(moving.trace(t));
  exact2.probes = 1;
  const double approx2 = mrd_hessian_approx(moving, any, sigma, exact2).value;
  o.antithetic = true;
  o.form = MrdForm::absolute_of_mean;
  o.seed = 42;
  const double mc2 = mrd_monte_carlo(moving, any, o).value;
  const double err2 = std::abs(mc2 - approx2) / approx2;
  // Trained model: rankings of the two estimators over 20 forget samples.
  const auto& s = shared();
  EstimatorConfig base = s.config.mrd;
  base.sigma = sigma;
  base.K = 200;
  const LmScorer scorer(s.model);
  const auto cmp = compare_estimators(scorer, std::span(s.corpus.forget).first(20), base);
  const bool pass = err1 <= 0.10 && err2 <= 0.10 && cmp.spearman >= 0.8;
  return {pass, Detail()("stationary_rel_err", err1)("antithetic_rel_err", err2)("lm_sigma", sigma)(
                    "lm_spearman", cmp.spearman)("lm_samples", cmp.rows.size())
                    .str()};
}

Outcome mrd_vs_updates() {
  const auto& s = shared();
  std::vector<double> rhos, length_rhos;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto split = comparison_split(s.corpus, seed);
    const auto chosen = not_initially_forgotten(split.forget, 10, s);
    UnlearnConfig uc = s.config.unlearn;
    uc.seed = derive_seed(uc.seed, seed);
    EstimatorConfig ec = s.config.mrd;
    ec.master_seed = derive_seed(ec.master_seed, seed);
    const auto rows = per_sample_unlearning(s.model, chosen, uc, s.thresholds, ec);
    std::vector<double> mrd, updates, length;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      mrd.push_back(rows[i].mrd);
      updates.push_back(static_cast<double>(rows[i].updates));
      length.push_back(static_cast<double>(chosen[i].tokens.size()));
    }
    rhos.push_back(stats::spearman(mrd, updates));
    length_rhos.push_back(stats::spearman(length, updates));
    per_seed << (seed ? "," : "") << rhos.back();
  }
  const double med = stats::median(rhos);
  return {med <= -0.6, Detail()("median_spearman", med)("per_seed", per_seed.str())(
                           "median_spearman_length_updates", stats::median(length_rhos))
                           .str()};
}

Outcome parameter_change_spread() {
  const auto& s = shared();
  const auto chosen = not_initially_forgotten(s.corpus.training_samples(), 20, s);
  const auto rows = per_sample_unlearning(s.model, chosen, s.config.unlearn, s.thresholds, s.config.mrd);
  std::vector<double> change;
  std::size_t stopped = 0;
  for (const auto& r : rows) {
    change.push_back(r.mean_abs_change);
    stopped += r.stop_reason == StopReason::constraint_met;
  }
  const double cv = stats::coefficient_of_variation(change);
  return {rows.size() == 20 && cv > 0.1,
          Detail()("samples", rows.size())("cv", cv)("forgotten", stopped)(
              "min", *std::min_element(change.begin(), change.end()))(
              "max", *std::max_element(change.begin(), change.end()))
              .str()};
}

Outcome characteristic_directions() {
  const auto& s = shared();
  const auto r = characteristics(s.model, s.corpus.training_samples(), s.config.mrd);
  std::size_t smallest = r.sample_ids.size();
  for (const auto& t : r.tiers)
    if (t.axis == "frequency" || t.axis == "complexity") smallest = std::min(smallest, t.count);
  const auto& f = r.frequency;
  const auto& c = r.complexity;
  const auto& g = r.generation_probability;
  const bool pass = smallest >= 20 && f.direction_holds() && f.p_value_stratified < 0.05 &&
                    c.direction_holds() && c.p_value_stratified < 0.05;
  return {pass, Detail()("min_tier", smallest)("freq_low", f.mean_larger)("freq_high", f.mean_smaller)(
                    "freq_p", f.p_value)("freq_p_stratified", f.p_value_stratified)("cx_high", c.mean_larger)(
                    "cx_low", c.mean_smaller)("cx_p", c.p_value)("cx_p_stratified", c.p_value_stratified)(
                    "genprob_" + g.larger, g.mean_larger)("genprob_" + g.smaller, g.mean_smaller)
                    .str()};
}

Outcome cga_vs_sga() {
  const auto& s = shared();
  ExperimentConfig c = s.config;
  c.compare.seeds = 5;
  c.compare.methods = {UnlearnMethod::sga, UnlearnMethod::cga};
  c.compare.weightings = {WeightingScheme::mrd_proportional};
  const auto rows = compare_methods(s.model, s.corpus, c, s.thresholds, false);
  for (const auto& r : rows)
    if (r.failure) return {false, "run failed: " + *r.failure};
  const auto sum = summarize_cga_vs_sga(rows, WeightingScheme::mrd_proportional);
  return {sum.passes(), Detail()("forget_size", s.corpus.forget.size())("median_M_sga", sum.median_m_sga)(
                            "median_M_cga", sum.median_m_cga)("forgotten_sga", sum.median_forgotten_sga)(
                            "forgotten_cga", sum.median_forgotten_cga)
                            .str()};
}

Outcome estimator_sensitivity() {
  const auto& s = shared();
  const LmScorer scorer(s.model);
  SensitivityConfig sc = s.config.sensitivity;
  sc.repeats = 20;
  sc.sigma_multipliers = {1, 2, 3, 4};
  if (std::find(sc.ks.begin(), sc.ks.end(), 10) == sc.ks.end()) sc.ks.push_back(10);
  if (std::find(sc.ks.begin(), sc.ks.end(), 100) == sc.ks.end()) sc.ks.push_back(100);
  const auto r = sensitivity(scorer, s.corpus.forget, s.config.mrd, sc);
  const double ratio = r.std_at(10) / r.std_at(100);
  const bool shrinks = r.std_at(100) < r.std_at(10);
  const bool near = ratio >= std::sqrt(10.0) / 2.0 && ratio <= 2.0 * std::sqrt(10.0);
  const double rho = r.min_sigma_spearman();
  return {shrinks && near && rho >= 0.9, Detail()("std_K10", r.std_at(10))("std_K100", r.std_at(100))(
                                             "ratio", ratio)("sqrt10", std::sqrt(10.0))("min_sigma_spearman", rho)
                                             .str()};
}

Outcome metric_suite() {
  using testing::sequence;
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  // One memorized model per sequence.
  for (const std::string text : {"the cat sat on the mat.", "a dog ran far away.", "birds sing at dawn."}) {
    const auto x = sequence(text);
    const testing::ScriptedModel scripted({x.tokens}, Vocab::standard().size());
    const testing::ScriptedModel eos_only({}, Vocab::standard().size());
    const auto lm = testing::memorizing_model({text}, 5);
    const LmTextModel trained(lm);
    expect(memorization_accuracy(scripted, x) == 1.0, "MA scripted " + text);
    expect(memorization_accuracy(trained, x) == 1.0, "MA trained " + text);
    expect(extraction_likelihood(scripted, x, 1) == 1.0, "EL memorized " + text);
    expect(extraction_likelihood(trained, x, 1) == 1.0, "EL trained " + text);
    expect(extraction_likelihood(eos_only, x, 1) == 0.0, "EL eos " + text);
  }
  const auto abcde = sequence("abcde");
  expect(rouge_l_recall(abcde, sequence("ace")) == 0.6, "rouge abcde/ace");
  expect(rouge_l_recall(sequence("ace"), abcde) == 1.0, "rouge subsequence");
  expect(rouge_l_recall(abcde, sequence("xyz")) == 0.0, "rouge disjoint");
  const std::vector<double> same{-1.0, -1.0, -1.0}, low{-5.0, -4.0}, high{-1.0, -0.5};
  expect(membership_auc(same, same) == 0.5, "auc ties");
  expect(membership_auc(low, high) == 1.0, "auc separated");
  expect(membership_auc(high, low) == 0.0, "auc reversed");
  std::string joined;
  for (const auto& f : failed) joined += (joined.empty() ? "" : ",") + f;
  return {failed.empty(), failed.empty() ? "all exact" : "failed: " + joined};
}

Outcome reduction_identities() {
  const auto& s = shared();
  const std::span<const TokenSequence> forget = std::span(s.corpus.forget).first(5);
  const std::span<const TokenSequence> retain = std::span(s.corpus.retain).first(8);
  const EarlyStopThresholds never(0.0, 0.0, 1);
  UnlearnConfig c = s.config.unlearn;
  c.max_steps = 25;
  c.learning_rate = 1e-4;
  c.mrd_refresh_interval = 5;
  c.mrd.K = 4;
  c.seed = 99;
  c.method = UnlearnMethod::sga;
  const auto sga = run_sga(s.model, forget, c, never);
  c.method = UnlearnMethod::graddiff;
  c.retain_weight = 0.0;
  const bool graddiff = trace_identical(run_graddiff(s.model, forget, retain, c, never), sga);
  c.retain_weight = 1.0;
  c.method = UnlearnMethod::cga;
  c.weighting = WeightingScheme::uniform;
  const bool cga = trace_identical(run_cga(s.model, forget, c, never), sga);
  double npo_err = 0.0;
  for (double beta : {0.05, 0.1, 0.5, 1.0}) {
    c.method = UnlearnMethod::npo;
    c.npo_beta = beta;
    c.max_steps = 1;
    const auto r = run_npo(s.model, s.model, forget.first(1), retain, c, never);
    npo_err = std::max(npo_err, std::abs(r.log.steps.front().forget_loss - 2.0 / beta * std::log(2.0)));
  }
  return {graddiff && cga && npo_err <= 1e-9,
          Detail()("graddiff0_eq_sga", graddiff)("uniform_cga_eq_sga", cga)("steps", sga.log.steps.size())(
              "npo_initial_err", npo_err)
              .str()};
}

Outcome complexity_scaling() {
  const auto& s = shared();
  const LmScorer scorer(s.model);
  const auto training = s.corpus.training_samples();
  const auto longest = *std::max_element(training.begin(), training.end(), [](const auto& a, const auto& b) {
    return a.tokens.size() < b.tokens.size();
  });
  auto seconds = [&](const TokenSequence& x, int K) {
    MonteCarloOptions o;
    o.K = K;
    o.seed = 7;
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)mrd_monte_carlo(scorer, x, o);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  std::vector<double> ks, tk;
  for (int K : {50, 100, 200, 400, 800}) {
    ks.push_back(K);
    tk.push_back(seconds(longest, K));
  }
  std::vector<double> ns, tn;
  const std::size_t max_n = longest.tokens.size();
  for (std::size_t n = max_n / 5; n <= max_n; n += max_n / 5) {
    TokenSequence x = longest;
    x.tokens.resize(n);
    ns.push_back(static_cast<double>(n));
    tn.push_back(seconds(x, 200));
  }
  const auto fk = stats::linear_fit(ks, tk);
  const auto fn = stats::linear_fit(ns, tn);
  const bool pass = fk.slope > 0 && fn.slope > 0 && fk.max_relative_residual <= 0.25 &&
                    fn.max_relative_residual <= 0.25;
  return {pass, Detail()("K_residual", fk.max_relative_residual)("K_slope_s", fk.slope)(
                    "n_residual", fn.max_relative_residual)("n_slope_s", fn.slope)("n_max", max_n)
                    .str()};
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace fb

int main(int argc, char** argv) {
  using namespace fb;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--checkpoint" && i + 1 < argc) {
      g_checkpoint = argv[++i];
    } else if (a == "--corpus" && i + 1 < argc) {
      g_corpus = argv[++i];
    } else {
      only.insert(std::atoi(a.c_str()));
    }
  }
  const std::vector<Criterion> criteria{
      {1, "gradient_correctness", gradient_correctness},
      {2, "quadratic_form_identity", quadratic_form},
      {3, "second_order_approximation", second_order_validity},
      {4, "mrd_predicts_updates", mrd_vs_updates},
      {5, "parameter_change_spread", parameter_change_spread},
      {6, "characteristic_directions", characteristic_directions},
      {7, "cga_vs_sga", cga_vs_sga},
      {8, "estimator_sensitivity", estimator_sensitivity},
      {9, "metric_suite", metric_suite},
      {10, "reduction_identities", reduction_identities},
      {11, "complexity_scaling", complexity_scaling},
  };
  std::cout << std::setprecision(4);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " ("
              << std::fixed << std::setprecision(1) << secs << " s)" << std::defaultfloat
              << std::setprecision(4) << std::endl;
  }
  return failures ? 1 : 0;
}
