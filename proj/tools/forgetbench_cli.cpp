// forgetbench: command-line experiment runner.
//
//   forgetbench <verb> [--config PATH] [--seed N] [--out DIR] [--method NAME]
//                      [--weighting mrd|inverse] [--corpus PATH] [--checkpoint PATH]
//
// Verbs: train, mrd, unlearn, evaluate, characteristics, sensitivity, compare, diffvar.
// FB_WORKERS sets the number of MRD worker threads.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"

#include "forgetbench/error.hpp"
#include "forgetbench/experiments.hpp"
#include "forgetbench/stats.hpp"

using namespace fb;
using nlohmann::json;

namespace {

constexpr int kExitInvalidConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitCheckFailed = 4;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> method;
  std::optional<std::string> weighting;
  std::optional<std::string> corpus;
  std::optional<std::string> checkpoint;
};

ExperimentConfig resolve_config(const std::string& verb, const Flags& f) {
  ExperimentConfig c = default_experiment_config();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw InvalidArgument("cannot open config '" + f.config + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw InvalidArgument("config '" + f.config + "': " + e.what());
    }
    try {
      c = experiment_config_from_json(j, c);
    } catch (const json::exception& e) {
      throw InvalidArgument("config '" + f.config + "': " + e.what());
    }
  }
  c.kind = verb;
  if (f.seed) c.apply_seed(*f.seed);
  if (f.out) c.out = *f.out;
  if (f.method) c.unlearn.method = unlearn_method_from_string(*f.method);
  if (f.weighting) c.unlearn.weighting = weighting_from_string(*f.weighting);
  if (f.corpus) c.corpus_path = *f.corpus;
  if (f.checkpoint) c.checkpoint_path = *f.checkpoint;
  if (const char* w = std::getenv("FB_WORKERS")) {
    const int n = std::atoi(w);
    if (n < 1) throw InvalidArgument("FB_WORKERS must be a positive integer");
    c.mrd.workers = c.unlearn.mrd.workers = n;
  }
  c.validate();
  return c;
}

std::string num(double v) { return format_number(v); }

struct Setup {
  Corpus corpus;
  LanguageModel model;
};

Setup setup(const ExperimentConfig& c, const ResultBundle& bundle) {
  Setup s{load_or_generate_corpus(c), {}};
  if (!c.corpus_path) save_corpus(s.corpus, bundle.path("corpus.json"));
  s.model = load_or_train_model(c, s.corpus);
  return s;
}

int cmd_train(const ExperimentConfig& c, const ResultBundle& bundle) {
  const Corpus corpus = load_or_generate_corpus(c);
  if (!c.corpus_path) save_corpus(corpus, bundle.path("corpus.json"));
  const auto result = train(corpus, c.lm, c.optimizer);
  save_checkpoint(result.model, bundle.path("model.ckpt"));
  std::vector<std::vector<std::string>> rows;
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    rows.push_back({std::to_string(e + 1), num(result.epoch_loss[e])});
  bundle.write_csv("loss.csv", {"epoch", "loss"}, rows);
  const auto samples = corpus.training_samples();
  const double ma = mean_memorization_accuracy(result.model, samples);
  bundle.write_json("summary.json", {{"epochs", result.epoch_loss.size()},
                                     {"final_loss", result.epoch_loss.back()},
                                     {"final_ma", ma},
                                     {"parameters", result.model.params.values.size()}});
  std::cout << "trained " << result.model.params.values.size() << " parameters, final MA " << ma << '\n';
  return 0;
}

int cmd_mrd(const ExperimentConfig& c, const ResultBundle& bundle) {
  const auto s = setup(c, bundle);
  const LmScorer scorer(s.model);
  const auto cmp = compare_estimators(scorer, s.corpus.forget, c.mrd);
  std::vector<std::vector<std::string>> rows;
  std::vector<RankedSample> ranked;
  for (const auto& r : cmp.rows) {
    rows.push_back({std::to_string(r.sample_id), num(r.monte_carlo.value), num(r.monte_carlo.std_error),
                    num(r.hessian_approx.value), num(r.hessian_approx.std_error),
                    std::to_string(r.monte_carlo.excluded_positions)});
    ranked.push_back({r.sample_id, r.monte_carlo});
  }
  bundle.write_csv("mrd.csv",
                   {"sample_id", "monte_carlo", "monte_carlo_se", "hessian_approx", "hessian_approx_se",
                    "excluded_positions"},
                   rows);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.estimate.value > b.estimate.value;
  });
  write_mrd_report(bundle.path("mrd_report.jsonl"), ranked);
  bundle.write_json("summary.json", {{"samples", cmp.rows.size()},
                                     {"spearman_mc_approx", cmp.spearman},
                                     {"spearman_at_least_0.8", cmp.spearman >= 0.8}});
  std::cout << "spearman(monte_carlo, hessian_approx) = " << cmp.spearman << " over " << cmp.rows.size()
            << " samples\n";
  return 0;
}

int cmd_unlearn(const ExperimentConfig& c, const ResultBundle& bundle) {
  const auto s = setup(c, bundle);
  const auto thresholds = freeze_thresholds(s.model, s.corpus.training_samples(), c.metrics.el_n);
  std::vector<RejectionExample> rejection;
  if (c.fixtures_path)
    rejection = load_rejection_fixtures(*c.fixtures_path, s.corpus.forget, s.corpus.vocab);
  else
    rejection = make_rejection_examples(s.corpus.forget, s.corpus.vocab.tokenize(c.rejection_target));
  const auto result = run_method(s.model, s.corpus, s.corpus.forget, s.corpus.retain, c.unlearn.method,
                                 c.unlearn, thresholds, &rejection);
  save_checkpoint(result.model, bundle.path("unlearned.ckpt"));
  write_run_log(bundle.path("run_log.jsonl"), result.log);

  const LmScorer scorer(s.model);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < s.corpus.forget.size(); ++i) {
    const auto& x = s.corpus.forget[i];
    const auto& at = result.log.flagged_at[i];
    rows.push_back({std::to_string(x.sample_id), num(estimate_mrd(scorer, x, c.mrd).value),
                    at ? std::to_string(*at) : "", std::to_string(result.log.draws[i]),
                    result.log.initially_forgotten[i] ? "1" : "0"});
  }
  bundle.write_csv("per_sample.csv", {"sample_id", "mrd", "flagged_at", "draws", "initially_forgotten"}, rows);
  json summary = run_summary_json(result.log);
  summary["thresholds"] = to_json(thresholds);
  bundle.write_json("summary.json", summary);
  const auto eff = efficiency_report(result.log);
  std::cout << to_string(c.unlearn.method) << ": " << to_string(result.log.stop_reason) << ", M=" << eff.M
            << " C=" << eff.C << " E=" << eff.E << '\n';
  return 0;
}

int cmd_evaluate(const ExperimentConfig& c, const ResultBundle& bundle) {
  const auto s = setup(c, bundle);
  const LmTextModel view(s.model);
  const auto report = metrics_report(view, s.corpus, c.metrics);
  bundle.write_json("metrics.json", to_json(report));
  std::vector<std::string> row;
  for (double v : metrics_csv_row(report)) row.push_back(num(v));
  bundle.write_csv("metrics.csv", metrics_csv_header(), {row});
  std::cout << "forget MA " << report.forget.ma << ", UA " << report.forget.ua << ", MIA " << report.mia_auc
            << ", RR " << report.rr() << '\n';
  return 0;
}

json direction_json(const DirectionTest& t) {
  return {{"axis", t.axis},         {"larger", t.larger},
          {"smaller", t.smaller},   {"mean_larger", t.mean_larger},
          {"mean_smaller", t.mean_smaller}, {"p_value", t.p_value},
          {"p_value_stratified", t.p_value_stratified}, {"direction_holds", t.direction_holds()}};
}

int cmd_characteristics(const ExperimentConfig& c, const ResultBundle& bundle) {
  const auto s = setup(c, bundle);
  const auto samples = s.corpus.training_samples();
  const auto r = characteristics(s.model, samples, c.mrd);
  std::vector<std::vector<std::string>> tiers, values;
  for (const auto& t : r.tiers)
    tiers.push_back({t.axis, t.tier, std::to_string(t.count), num(t.mean), num(t.std_error)});
  bundle.write_csv("tiers.csv", {"axis", "tier", "count", "mean_mrd", "std_error"}, tiers);
  for (std::size_t i = 0; i < r.sample_ids.size(); ++i) {
    const auto& l = s.corpus.find(r.sample_ids[i]).labels;
    values.push_back({std::to_string(r.sample_ids[i]), num(r.mrd[i]), std::string(to_string(l.frequency)),
                      std::string(to_string(l.complexity)), l.rare_token ? "1" : "0"});
  }
  bundle.write_csv("mrd.csv", {"sample_id", "mrd", "frequency", "complexity", "rare_token"}, values);
  bundle.write_json("summary.json", {{"frequency", direction_json(r.frequency)},
                                     {"complexity", direction_json(r.complexity)},
                                     {"generation_probability", direction_json(r.generation_probability)}});
  for (const auto* t : {&r.frequency, &r.complexity, &r.generation_probability})
    std::cout << t->axis << ": " << t->larger << " " << t->mean_larger << " vs " << t->smaller << " "
              << t->mean_smaller << " (p=" << t->p_value << ", stratified p=" << t->p_value_stratified << ")\n";
  return 0;
}

int cmd_sensitivity(const ExperimentConfig& c, const ResultBundle& bundle) {
  const auto s = setup(c, bundle);
  const LmScorer scorer(s.model);
  const auto r = sensitivity(scorer, s.corpus.training_samples(), c.mrd, c.sensitivity);
  std::vector<std::vector<std::string>> k_rows, s_rows;
  for (const auto& row : r.k_sweep) k_rows.push_back({std::to_string(row.K), num(row.std_dev)});
  bundle.write_csv("k_sweep.csv", {"K", "std"}, k_rows);
  std::vector<std::string> header{"multiplier"};
  for (double m : r.sigma_multipliers) header.push_back(num(m));
  for (std::size_t i = 0; i < r.sigma_spearman.size(); ++i) {
    std::vector<std::string> row{num(r.sigma_multipliers[i])};
    for (double v : r.sigma_spearman[i]) row.push_back(num(v));
    s_rows.push_back(row);
  }
  bundle.write_csv("sigma_spearman.csv", header, s_rows);

  json summary{{"min_sigma_spearman", r.min_sigma_spearman()}};
  bool ok = r.min_sigma_spearman() >= 0.9;
  const auto& ks = c.sensitivity.ks;
  if (std::find(ks.begin(), ks.end(), 10) != ks.end() && std::find(ks.begin(), ks.end(), 100) != ks.end()) {
    const double ratio = r.std_at(10) / r.std_at(100);
    const bool decreasing = r.std_at(100) < r.std_at(10);
    const bool near_sqrt10 = ratio >= std::sqrt(10.0) / 2.0 && ratio <= 2.0 * std::sqrt(10.0);
    summary["std_ratio_10_over_100"] = ratio;
    summary["std_100_below_std_10"] = decreasing;
    summary["ratio_within_factor_2_of_sqrt10"] = near_sqrt10;
    ok = ok && decreasing && near_sqrt10;
  }
  summary["pass"] = ok;
  bundle.write_json("summary.json", summary);
  std::cout << summary.dump() << '\n';
  return ok ? 0 : kExitCheckFailed;
}

int cmd_compare(const ExperimentConfig& c, const ResultBundle& bundle) {
  const auto s = setup(c, bundle);
  const auto thresholds = freeze_thresholds(s.model, s.corpus.training_samples(), c.metrics.el_n);
  const auto rows = compare_methods(s.model, s.corpus, c, thresholds, true);
  std::vector<std::vector<std::string>> table;
  json runs = json::array();
  for (const auto& r : rows) {
    table.push_back(compare_csv_row(r));
    runs.push_back({{"seed", r.seed},
                    {"method", to_string(r.method)},
                    {"weighting", to_string(r.weighting)},
                    {"failure", r.failure ? json(*r.failure) : json(nullptr)},
                    {"M", r.M},
                    {"C", r.C},
                    {"E", r.E},
                    {"stop_reason", to_string(r.stop_reason)},
                    {"forgotten", r.forgotten},
                    {"metrics", r.failure ? json(nullptr) : to_json(r.metrics)}});
  }
  bundle.write_csv("compare.csv", compare_csv_header(), table);
  bundle.write_json("compare.json", runs);

  json summary = json::object();
  bool ok = true;
  const bool has_sga = std::find(c.compare.methods.begin(), c.compare.methods.end(), UnlearnMethod::sga) !=
                       c.compare.methods.end();
  const bool has_cga = std::find(c.compare.methods.begin(), c.compare.methods.end(), UnlearnMethod::cga) !=
                       c.compare.methods.end();
  if (has_sga && has_cga) {
    for (auto w : c.compare.weightings) {
      const auto cs = summarize_cga_vs_sga(rows, w);
      summary[std::string(to_string(w))] = {{"median_m_sga", cs.median_m_sga},
                                            {"median_m_cga", cs.median_m_cga},
                                            {"median_forgotten_sga", cs.median_forgotten_sga},
                                            {"median_forgotten_cga", cs.median_forgotten_cga},
                                            {"pass", cs.passes()}};
      if (w == WeightingScheme::mrd_proportional) ok = cs.passes();
    }
  }
  summary["pass"] = ok;
  bundle.write_json("summary.json", summary);
  std::cout << summary.dump() << '\n';
  return ok ? 0 : kExitCheckFailed;
}

int cmd_diffvar(const ExperimentConfig& c, const ResultBundle& bundle) {
  const auto s = setup(c, bundle);
  const auto thresholds = freeze_thresholds(s.model, s.corpus.training_samples(), c.metrics.el_n);
  auto rows = per_sample_unlearning(s.model, s.corpus.forget, c.unlearn, thresholds, c.mrd);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.mean_abs_change > b.mean_abs_change; });
  std::vector<std::vector<std::string>> table;
  std::vector<double> change;
  for (const auto& r : rows) {
    table.push_back({std::to_string(r.sample_id), num(r.mean_abs_change), num(r.mrd), std::to_string(r.updates),
                     r.initially_forgotten ? "1" : "0", std::string(to_string(r.stop_reason))});
    change.push_back(r.mean_abs_change);
  }
  bundle.write_csv("diffvar.csv",
                   {"sample_id", "mean_abs_change", "mrd", "updates", "initially_forgotten", "stop_reason"}, table);
  const double mean = stats::mean(change);
  const double cv = mean > 0.0 ? stats::stddev(change) / mean : 0.0;
  bundle.write_json("summary.json", {{"samples", rows.size()}, {"cv", cv}, {"cv_above_0.1", cv > 0.1}});
  std::cout << "coefficient of variation " << cv << " over " << rows.size() << " samples\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forgetbench: memorization-removal difficulty and unlearning experiments"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Flags flags;

  const std::map<std::string, int (*)(const ExperimentConfig&, const ResultBundle&)> verbs{
      {"train", cmd_train},
      {"mrd", cmd_mrd},
      {"unlearn", cmd_unlearn},
      {"evaluate", cmd_evaluate},
      {"characteristics", cmd_characteristics},
      {"sensitivity", cmd_sensitivity},
      {"compare", cmd_compare},
      {"diffvar", cmd_diffvar}};
  const std::map<std::string, std::string> help{
      {"train", "train a model and write model.ckpt and loss.csv"},
      {"mrd", "estimate MRD of every forget sample with both estimators"},
      {"unlearn", "unlearn the forget set with one method"},
      {"evaluate", "completeness and utility metrics of a checkpoint"},
      {"characteristics", "per-tier MRD summary"},
      {"sensitivity", "K and sigma sweeps of the Monte-Carlo estimator"},
      {"compare", "paired-seed comparison of all methods"},
      {"diffvar", "per-sample parameter change after unlearning"}};
  for (const auto& [name, fn] : verbs) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", flags.config, "JSON config document")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "master seed");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--method", flags.method, "sga|cga|graddiff|npo|po");
    sub->add_option("--weighting", flags.weighting, "mrd|inverse|uniform");
    sub->add_option("--corpus", flags.corpus, "corpus JSON instead of generating one");
    sub->add_option("--checkpoint", flags.checkpoint, "checkpoint instead of training");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalidConfig;
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    const ExperimentConfig config = resolve_config(verb, flags);
    const ResultBundle bundle(config.out, to_json(config));
    return verbs.at(verb)(config, bundle);
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kExitInvalidConfig;
  } catch (const LoadError& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kExitInvalidConfig;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DegenerateToken& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
