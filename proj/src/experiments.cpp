#include "forgetbench/experiments.hpp"

#include <algorithm>
#include <cfloat>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include "forgetbench/error.hpp"
#include "forgetbench/rng.hpp"
#include "forgetbench/stats.hpp"

namespace fb {

using nlohmann::json;

void ExperimentConfig::apply_seed(std::uint64_t master) {
  seed = master;
  lm.seed = derive_seed(master, 10);
  optimizer.seed = derive_seed(master, 11);
  unlearn.seed = derive_seed(master, 12);
  mrd.master_seed = derive_seed(master, 13);
  unlearn.mrd.master_seed = derive_seed(master, 14);
}

void ExperimentConfig::validate() const {
  lm.validate();
  optimizer.validate();
  unlearn.validate();
  for (const auto* e : {&mrd, &unlearn.mrd}) {
    if (!(e->sigma > 0.0)) throw InvalidArgument("config: mrd sigma must be > 0");
    if (e->K < 1) throw InvalidArgument("config: mrd K must be >= 1");
    if (e->probes < 1) throw InvalidArgument("config: mrd probes must be >= 1");
    if (!(e->fd_step > 0.0)) throw InvalidArgument("config: mrd fd_step must be > 0");
    if (!(e->p_floor >= 0.0)) throw InvalidArgument("config: mrd p_floor must be >= 0");
  }
  if (metrics.el_n < 1) throw InvalidArgument("config: metrics el_n must be >= 1");
  if (!(metrics.k_fraction > 0.0 && metrics.k_fraction <= 1.0))
    throw InvalidArgument("config: metrics k_fraction must lie in (0, 1]");
  if (sensitivity.ks.empty()) throw InvalidArgument("config: sensitivity ks is empty");
  for (int k : sensitivity.ks)
    if (k < 1) throw InvalidArgument("config: sensitivity K values must be >= 1");
  if (sensitivity.repeats < 2) throw InvalidArgument("config: sensitivity repeats must be >= 2");
  if (sensitivity.sigma_multipliers.size() < 2)
    throw InvalidArgument("config: at least two sigma multipliers are required");
  for (double m : sensitivity.sigma_multipliers)
    if (!(m > 0.0)) throw InvalidArgument("config: sigma multipliers must be > 0");
  if (sensitivity.k_sweep_samples < 1 || sensitivity.sigma_sweep_samples < 2)
    throw InvalidArgument("config: sensitivity sample counts too small");
  if (compare.seeds < 1) throw InvalidArgument("config: compare seeds must be >= 1");
  if (compare.methods.empty()) throw InvalidArgument("config: compare methods is empty");
  for (const auto& [name, p] : {std::pair{"corpus_path", corpus_path},
                                {"checkpoint_path", checkpoint_path},
                                {"fixtures_path", fixtures_path}})
    if (p && !std::filesystem::exists(*p))
      throw InvalidArgument(std::string("config: ") + name + " '" + p->string() + "' does not exist");
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.lm.embed_dim = 32;
  c.optimizer.learning_rate = 3e-3;
  c.optimizer.epochs = 100;
  c.optimizer.batch_size = 8;
  c.optimizer.cosine_decay = true;
  c.unlearn.learning_rate = 3e-5;
  c.unlearn.max_steps = 3000;
  c.unlearn.mrd_refresh_interval = 10;
  c.unlearn.mrd.K = 20;
  c.apply_seed(0);
  return c;
}

namespace {

template <class T, class ToJson, class FromJson>
T merged(const T& base, const json& patch, ToJson to, FromJson from) {
  json j = to(base);
  j.merge_patch(patch);
  return from(j);
}

json metrics_options_json(const MetricsOptions& m) {
  return {{"el_n", m.el_n}, {"k_fraction", m.k_fraction}};
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j, ExperimentConfig c) {
  if (!j.is_object()) throw InvalidArgument("config: expected a JSON object");
  if (j.contains("seed")) c.apply_seed(j.at("seed").get<std::uint64_t>());
  c.kind = j.value("kind", c.kind);
  auto path = [&](const char* key, std::optional<std::filesystem::path>& dst) {
    if (j.contains(key) && !j.at(key).is_null()) dst = j.at(key).get<std::string>();
  };
  path("corpus_path", c.corpus_path);
  path("checkpoint_path", c.checkpoint_path);
  path("fixtures_path", c.fixtures_path);
  c.rejection_target = j.value("rejection_target", c.rejection_target);
  if (j.contains("corpus"))
    c.corpus = merged(c.corpus, j.at("corpus"), [](const CorpusSpec& s) { return to_json(s); },
                      corpus_spec_from_json);
  if (j.contains("lm"))
    c.lm = merged(c.lm, j.at("lm"), [](const LmConfig& x) { return to_json(x); }, lm_config_from_json);
  if (j.contains("optimizer"))
    c.optimizer = merged(c.optimizer, j.at("optimizer"),
                         [](const OptimizerConfig& x) { return to_json(x); }, optimizer_config_from_json);
  if (j.contains("unlearn"))
    c.unlearn = merged(c.unlearn, j.at("unlearn"), [](const UnlearnConfig& x) { return to_json(x); },
                       unlearn_config_from_json);
  if (j.contains("mrd"))
    c.mrd = merged(c.mrd, j.at("mrd"), [](const EstimatorConfig& x) { return to_json(x); },
                   estimator_config_from_json);
  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    c.metrics.el_n = m.value("el_n", c.metrics.el_n);
    c.metrics.k_fraction = m.value("k_fraction", c.metrics.k_fraction);
  }
  if (j.contains("sensitivity")) {
    const auto& s = j.at("sensitivity");
    c.sensitivity.ks = s.value("ks", c.sensitivity.ks);
    c.sensitivity.repeats = s.value("repeats", c.sensitivity.repeats);
    c.sensitivity.sigma_multipliers = s.value("sigma_multipliers", c.sensitivity.sigma_multipliers);
    c.sensitivity.k_sweep_samples = s.value("k_sweep_samples", c.sensitivity.k_sweep_samples);
    c.sensitivity.sigma_sweep_samples = s.value("sigma_sweep_samples", c.sensitivity.sigma_sweep_samples);
  }
  if (j.contains("compare")) {
    const auto& s = j.at("compare");
    c.compare.seeds = s.value("seeds", c.compare.seeds);
    if (s.contains("methods")) {
      c.compare.methods.clear();
      for (const auto& m : s.at("methods")) c.compare.methods.push_back(unlearn_method_from_string(m.get<std::string>()));
    }
    if (s.contains("weightings")) {
      c.compare.weightings.clear();
      for (const auto& w : s.at("weightings")) c.compare.weightings.push_back(weighting_from_string(w.get<std::string>()));
    }
  }
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  return c;
}

json to_json(const ExperimentConfig& c) {
  auto opt_path = [](const std::optional<std::filesystem::path>& p) {
    return p ? json(p->string()) : json(nullptr);
  };
  json methods = json::array(), weightings = json::array();
  for (auto m : c.compare.methods) methods.push_back(to_string(m));
  for (auto w : c.compare.weightings) weightings.push_back(to_string(w));
  return {{"kind", c.kind},
          {"corpus_path", opt_path(c.corpus_path)},
          {"checkpoint_path", opt_path(c.checkpoint_path)},
          {"fixtures_path", opt_path(c.fixtures_path)},
          {"rejection_target", c.rejection_target},
          {"corpus", to_json(c.corpus)},
          {"lm", to_json(c.lm)},
          {"optimizer", to_json(c.optimizer)},
          {"unlearn", to_json(c.unlearn)},
          {"mrd", to_json(c.mrd)},
          {"metrics", metrics_options_json(c.metrics)},
          {"sensitivity",
           {{"ks", c.sensitivity.ks},
            {"repeats", c.sensitivity.repeats},
            {"sigma_multipliers", c.sensitivity.sigma_multipliers},
            {"k_sweep_samples", c.sensitivity.k_sweep_samples},
            {"sigma_sweep_samples", c.sensitivity.sigma_sweep_samples}}},
          {"compare", {{"seeds", c.compare.seeds}, {"methods", methods}, {"weightings", weightings}}},
          {"seed", c.seed},
          {"out", c.out.string()}};
}

json environment_fingerprint() {
  return {{"version", kVersion},
          {"float", "ieee754 binary64"},
          {"flt_eval_method", FLT_EVAL_METHOD},
          {"rounding", "to-nearest"},
          {"compiler", __VERSION__}};
}

ResultBundle::ResultBundle(std::filesystem::path dir, const json& config_snapshot) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  write_json("config.json", {{"config", config_snapshot}, {"environment", environment_fingerprint()}});
}

void ResultBundle::write_json(const std::string& name, const json& value) const {
  std::ofstream out(path(name));
  if (!out) throw InvalidArgument("cannot write " + path(name).string());
  out << value.dump(2) << '\n';
}

void ResultBundle::write_csv(const std::string& name, const std::vector<std::string>& header,
                             const std::vector<std::vector<std::string>>& rows) const {
  std::ofstream out(path(name));
  if (!out) throw InvalidArgument("cannot write " + path(name).string());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

Corpus load_or_generate_corpus(const ExperimentConfig& c) {
  if (c.corpus_path) return load_corpus(*c.corpus_path);
  return generate_corpus(c.corpus, c.seed);
}

LanguageModel load_or_train_model(const ExperimentConfig& c, const Corpus& corpus) {
  if (c.checkpoint_path) return load_checkpoint(*c.checkpoint_path);
  return train(corpus, c.lm, c.optimizer).model;
}

double mean_memorization_accuracy(const LanguageModel& model, std::span<const TokenSequence> xs) {
  if (xs.empty()) throw InvalidArgument("mean_memorization_accuracy: no samples");
  const LmTextModel view(model);
  double s = 0.0;
  for (const auto& x : xs) s += memorization_accuracy(view, x);
  return s / static_cast<double>(xs.size());
}

MrdComparison compare_estimators(const TokenScorer& scorer, std::span<const TokenSequence> xs,
                                 const EstimatorConfig& base) {
  EstimatorConfig mc = base, approx = base;
  mc.kind = MrdEstimator::monte_carlo;
  approx.kind = MrdEstimator::hessian_approx;
  MrdComparison out;
  std::vector<double> a, b;
  for (const auto& x : xs) {
    MrdComparisonRow row{x.sample_id, estimate_mrd(scorer, x, mc), estimate_mrd(scorer, x, approx)};
    a.push_back(row.monte_carlo.value);
    b.push_back(row.hessian_approx.value);
    out.rows.push_back(std::move(row));
  }
  out.spearman = xs.size() >= 2 ? stats::spearman(a, b) : 0.0;
  return out;
}

namespace {

std::vector<double> stratum_normalized(std::span<const double> values,
                                       const std::vector<std::string>& strata) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc[strata[i]].first += values[i];
    ++acc[strata[i]].second;
  }
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& [s, n] = acc[strata[i]];
    out[i] = values[i] / (s / static_cast<double>(n));
  }
  return out;
}

DirectionTest direction_test(std::string axis, std::string larger, std::string smaller,
                             std::span<const double> values, const std::vector<std::string>& tier,
                             const std::vector<std::string>& strata) {
  DirectionTest t{std::move(axis), std::move(larger), std::move(smaller)};
  const auto norm = stratum_normalized(values, strata);
  std::vector<double> hi, lo, hi_n, lo_n;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (tier[i] == t.larger) {
      hi.push_back(values[i]);
      hi_n.push_back(norm[i]);
    } else if (tier[i] == t.smaller) {
      lo.push_back(values[i]);
      lo_n.push_back(norm[i]);
    }
  }
  if (hi.size() < 2 || lo.size() < 2) return t;
  t.mean_larger = stats::mean(hi);
  t.mean_smaller = stats::mean(lo);
  t.p_value = stats::welch_t_test(hi, lo).p_greater;
  t.p_value_stratified = stats::welch_t_test(hi_n, lo_n).p_greater;
  return t;
}

}  // namespace

CharacteristicsReport characteristics(const LanguageModel& model, std::span<const TokenSequence> xs,
                                      const EstimatorConfig& estimator) {
  if (xs.size() < 4) throw InvalidArgument("characteristics: need at least 4 samples");
  CharacteristicsReport r;
  const LmScorer scorer(model);
  for (const auto& e : rank_by_mrd(scorer, xs, estimator)) {
    r.sample_ids.push_back(e.sample_id);
    r.mrd.push_back(e.estimate.value);
  }
  std::map<std::size_t, const TokenSequence*> by_id;
  for (const auto& x : xs) by_id[x.sample_id] = &x;

  std::vector<double> gen_prob;
  for (std::size_t id : r.sample_ids) {
    double p = 0.0;
    const auto lp = token_log_probs(model, *by_id[id]).per_token;
    for (double v : lp) p += std::exp(v);
    gen_prob.push_back(p / static_cast<double>(lp.size()));
  }
  const double avg_prob = stats::mean(gen_prob);

  std::vector<std::string> freq, cx, rare, gp;
  for (std::size_t i = 0; i < r.sample_ids.size(); ++i) {
    const auto& labels = by_id[r.sample_ids[i]]->labels;
    freq.emplace_back(to_string(labels.frequency));
    cx.emplace_back(to_string(labels.complexity));
    rare.emplace_back(labels.rare_token ? "yes" : "no");
    gp.emplace_back(gen_prob[i] > avg_prob ? "high" : "low");
  }
  auto summarize = [&](const std::string& axis, const std::vector<std::string>& tier) {
    std::map<std::string, std::vector<double>> groups;
    for (std::size_t i = 0; i < tier.size(); ++i) groups[tier[i]].push_back(r.mrd[i]);
    for (const auto& [name, v] : groups)
      r.tiers.push_back({axis, name, v.size(), stats::mean(v),
                         stats::stddev(v) / std::sqrt(static_cast<double>(v.size()))});
  };
  summarize("frequency", freq);
  summarize("complexity", cx);
  summarize("rare_token", rare);
  summarize("generation_probability", gp);
  r.frequency = direction_test("frequency", "low", "high", r.mrd, freq, cx);
  r.complexity = direction_test("complexity", "high", "low", r.mrd, cx, freq);
  r.generation_probability = direction_test("generation_probability", "high", "low", r.mrd, gp, cx);
  return r;
}

double SensitivityReport::std_at(int K) const {
  for (const auto& row : k_sweep)
    if (row.K == K) return row.std_dev;
  throw InvalidArgument("sensitivity: K = " + std::to_string(K) + " was not swept");
}

double SensitivityReport::min_sigma_spearman() const {
  double m = 1.0;
  for (std::size_t i = 0; i < sigma_spearman.size(); ++i)
    for (std::size_t j = 0; j < sigma_spearman.size(); ++j)
      if (i != j) m = std::min(m, sigma_spearman[i][j]);
  return m;
}

SensitivityReport sensitivity(const TokenScorer& scorer, std::span<const TokenSequence> xs,
                              const EstimatorConfig& base, const SensitivityConfig& config) {
  if (xs.empty()) throw InvalidArgument("sensitivity: no samples");
  SensitivityReport r;
  const auto nk = std::min<std::size_t>(xs.size(), static_cast<std::size_t>(config.k_sweep_samples));
  for (int K : config.ks) {
    double total = 0.0;
    for (std::size_t i = 0; i < nk; ++i) {
      std::vector<double> values;
      for (int rep = 0; rep < config.repeats; ++rep) {
        MonteCarloOptions o;
        o.sigma = base.sigma;
        o.K = K;
        o.seed = derive_seed(base.master_seed, xs[i].sample_id, 0x5e75 + static_cast<std::uint64_t>(rep));
        o.p_floor = base.p_floor;
        o.floor = base.floor;
        o.form = base.form;
        o.antithetic = base.antithetic;
        values.push_back(mrd_monte_carlo(scorer, xs[i], o).value);
      }
      total += stats::stddev(values);
    }
    r.k_sweep.push_back({K, total / static_cast<double>(nk)});
  }

  const auto ns = std::min<std::size_t>(xs.size(), static_cast<std::size_t>(config.sigma_sweep_samples));
  r.sigma_multipliers = config.sigma_multipliers;
  std::vector<std::vector<double>> values;
  for (double m : config.sigma_multipliers) {
    EstimatorConfig e = base;
    e.kind = MrdEstimator::monte_carlo;
    e.sigma = base.sigma * m;
    std::vector<double> v;
    for (std::size_t i = 0; i < ns; ++i) v.push_back(estimate_mrd(scorer, xs[i], e).value);
    values.push_back(std::move(v));
  }
  const std::size_t nm = values.size();
  r.sigma_spearman.assign(nm, std::vector<double>(nm, 1.0));
  for (std::size_t a = 0; a < nm; ++a)
    for (std::size_t b = a + 1; b < nm; ++b)
      r.sigma_spearman[a][b] = r.sigma_spearman[b][a] = stats::spearman(values[a], values[b]);
  return r;
}

std::vector<PerSampleRow> per_sample_unlearning(const LanguageModel& model,
                                                std::span<const TokenSequence> xs,
                                                const UnlearnConfig& config,
                                                const EarlyStopThresholds& thresholds,
                                                const EstimatorConfig& estimator) {
  const LmScorer scorer(model);
  std::vector<PerSampleRow> rows;
  for (const auto& x : xs) {
    PerSampleRow row;
    row.sample_id = x.sample_id;
    row.mrd = estimate_mrd(scorer, x, estimator).value;
    const auto result = run_sga(model, std::span(&x, 1), config, thresholds);
    row.updates = result.log.total_updates();
    row.initially_forgotten = result.log.initially_forgotten.front();
    row.stop_reason = result.log.stop_reason;
    double change = 0.0;
    for (std::size_t i = 0; i < model.params.values.size(); ++i)
      change += std::abs(result.model.params.values[i] - model.params.values[i]);
    row.mean_abs_change = change / static_cast<double>(model.params.values.size());
    rows.push_back(row);
  }
  return rows;
}

ForgetRetainSplit comparison_split(const Corpus& corpus, std::uint64_t seed) {
  return split_forget_retain(corpus.training_samples(), corpus.spec.forget_fraction,
                             derive_seed(corpus.seed, 0xc0de, seed));
}

UnlearnResult run_method(const LanguageModel& model, const Corpus& corpus,
                         std::span<const TokenSequence> forget, std::span<const TokenSequence> retain,
                         UnlearnMethod method, const UnlearnConfig& config,
                         const EarlyStopThresholds& thresholds,
                         const std::vector<RejectionExample>* rejection) {
  UnlearnConfig c = config;
  c.method = method;
  switch (method) {
    case UnlearnMethod::sga: return run_sga(model, forget, c, thresholds);
    case UnlearnMethod::cga: return run_cga(model, forget, c, thresholds);
    case UnlearnMethod::graddiff: return run_graddiff(model, forget, retain, c, thresholds);
    case UnlearnMethod::npo: return run_npo(model, model, forget, retain, c, thresholds);
    case UnlearnMethod::po: {
      if (rejection) return run_po(model, *rejection, retain, c, thresholds);
      const auto examples = make_rejection_examples(forget, corpus.vocab.tokenize("i cannot say."));
      return run_po(model, examples, retain, c, thresholds);
    }
  }
  throw ContractViolation("run_method: unknown method");
}

std::vector<CompareRow> compare_methods(const LanguageModel& model, const Corpus& corpus,
                                        const ExperimentConfig& config,
                                        const EarlyStopThresholds& thresholds, bool with_metrics) {
  std::vector<CompareRow> rows;
  for (int s = 0; s < config.compare.seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    const auto split = comparison_split(corpus, seed);
    std::vector<RejectionExample> rejection;
    if (config.fixtures_path)
      rejection = load_rejection_fixtures(*config.fixtures_path, split.forget, corpus.vocab);
    else
      rejection = make_rejection_examples(split.forget, corpus.vocab.tokenize(config.rejection_target));
    UnlearnConfig uc = config.unlearn;
    uc.seed = derive_seed(config.unlearn.seed, seed);
    for (auto method : config.compare.methods) {
      std::vector<WeightingScheme> schemes{WeightingScheme::uniform};
      if (method == UnlearnMethod::cga) schemes = config.compare.weightings;
      for (auto w : schemes) {
        CompareRow row;
        row.seed = seed;
        row.method = method;
        row.weighting = w;
        if (method == UnlearnMethod::cga) uc.weighting = w;
        try {
          auto result = run_method(model, corpus, split.forget, split.retain, method, uc, thresholds, &rejection);
          row.M = result.log.total_updates();
          row.C = result.log.per_update_cost;
          row.E = row.M ? efficiency_report(result.log).E : 0.0;
          row.stop_reason = result.log.stop_reason;
          row.flagged_at = result.log.flagged_at;
          row.forgotten = result.log.forgotten_within(row.M);
          if (with_metrics) {
            const LmTextModel view(result.model);
            auto& m = row.metrics;
            m.options = config.metrics;
            m.forget = evaluate_split(view, split.forget, config.metrics);
            m.retain = evaluate_split(view, split.retain, config.metrics);
            m.heldout = evaluate_split(view, corpus.heldout, config.metrics);
            m.mia_auc = min_k_prob_mia(view, split.forget, corpus.heldout, config.metrics.k_fraction);
          }
        } catch (const std::exception& e) {
          row.failure = e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

CgaSgaSummary summarize_cga_vs_sga(const std::vector<CompareRow>& rows, WeightingScheme weighting) {
  std::vector<const CompareRow*> sga, cga;
  for (const auto& r : rows) {
    if (r.failure) continue;
    if (r.method == UnlearnMethod::sga) sga.push_back(&r);
    if (r.method == UnlearnMethod::cga && r.weighting == weighting) cga.push_back(&r);
  }
  if (sga.empty() || cga.empty()) throw InvalidArgument("summarize_cga_vs_sga: missing SGA or CGA rows");
  auto median_m = [](const std::vector<const CompareRow*>& v) {
    std::vector<double> m;
    for (const auto* r : v) m.push_back(static_cast<double>(r->M));
    return stats::median(m);
  };
  CgaSgaSummary s;
  s.median_m_sga = median_m(sga);
  s.median_m_cga = median_m(cga);
  const auto budget = static_cast<std::size_t>(std::floor(s.median_m_sga));
  auto forgotten = [budget](const std::vector<const CompareRow*>& v) {
    std::vector<double> f;
    for (const auto* r : v) {
      std::size_t n = 0;
      for (const auto& at : r->flagged_at) n += at && *at <= budget;
      f.push_back(static_cast<double>(n));
    }
    return stats::median(f);
  };
  s.median_forgotten_sga = forgotten(sga);
  s.median_forgotten_cga = forgotten(cga);
  return s;
}

std::vector<std::string> compare_csv_header() {
  std::vector<std::string> h{"seed", "method", "weighting", "failure", "M", "C", "E", "stop_reason", "forgotten"};
  for (auto& c : metrics_csv_header()) h.push_back(c);
  return h;
}

std::vector<std::string> compare_csv_row(const CompareRow& r) {
  std::vector<std::string> row{std::to_string(r.seed),
                               std::string(to_string(r.method)),
                               r.method == UnlearnMethod::cga ? std::string(to_string(r.weighting)) : "",
                               r.failure ? "\"" + *r.failure + "\"" : "",
                               std::to_string(r.M),
                               format_number(r.C),
                               format_number(r.E),
                               std::string(to_string(r.stop_reason)),
                               std::to_string(r.forgotten)};
  for (double v : metrics_csv_row(r.metrics)) row.push_back(format_number(v));
  return row;
}

}  // namespace fb
