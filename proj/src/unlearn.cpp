#include "forgetbench/unlearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>

#include "forgetbench/error.hpp"
#include "forgetbench/metrics.hpp"
#include "forgetbench/rng.hpp"
#include "forgetbench/stats.hpp"

namespace fb {

using nlohmann::json;

std::string_view to_string(UnlearnMethod m) {
  switch (m) {
    case UnlearnMethod::sga: return "sga";
    case UnlearnMethod::cga: return "cga";
    case UnlearnMethod::graddiff: return "graddiff";
    case UnlearnMethod::npo: return "npo";
    case UnlearnMethod::po: return "po";
  }
  return "?";
}

UnlearnMethod unlearn_method_from_string(std::string_view s) {
  for (auto m : {UnlearnMethod::sga, UnlearnMethod::cga, UnlearnMethod::graddiff,
                 UnlearnMethod::npo, UnlearnMethod::po})
    if (s == to_string(m)) return m;
  throw InvalidArgument("unknown unlearning method '" + std::string(s) + "'");
}

std::string_view to_string(WeightingScheme w) {
  switch (w) {
    case WeightingScheme::mrd_proportional: return "mrd_proportional";
    case WeightingScheme::inverse_mrd_proportional: return "inverse_mrd_proportional";
    case WeightingScheme::uniform: return "uniform";
  }
  return "?";
}

WeightingScheme weighting_from_string(std::string_view s) {
  if (s == "mrd" || s == "mrd_proportional") return WeightingScheme::mrd_proportional;
  if (s == "inverse" || s == "inverse_mrd_proportional")
    return WeightingScheme::inverse_mrd_proportional;
  if (s == "uniform") return WeightingScheme::uniform;
  throw InvalidArgument("unknown weighting scheme '" + std::string(s) + "'");
}

std::string_view to_string(UpdateRule r) { return r == UpdateRule::adamw ? "adamw" : "sgd"; }

UpdateRule update_rule_from_string(std::string_view s) {
  if (s == "adamw") return UpdateRule::adamw;
  if (s == "sgd") return UpdateRule::sgd;
  throw InvalidArgument("unknown update rule '" + std::string(s) + "'");
}

std::string_view to_string(StopReason r) {
  return r == StopReason::constraint_met ? "constraint_met" : "budget_exhausted";
}

void UnlearnConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("unlearn: learning_rate must be > 0");
  if (max_steps < 1) throw InvalidArgument("unlearn: max_steps must be >= 1");
  if (batch_size < 1) throw InvalidArgument("unlearn: batch_size must be >= 1");
  if (retain_batch_size < 1) throw InvalidArgument("unlearn: retain_batch_size must be >= 1");
  if (mrd_refresh_interval < 0) throw InvalidArgument("unlearn: mrd_refresh_interval must be >= 0");
  if (!(retain_weight >= 0.0)) throw InvalidArgument("unlearn: retain_weight must be >= 0");
  if (!(npo_beta > 0.0)) throw InvalidArgument("unlearn: npo_beta must be > 0");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("unlearn: weight_decay must be >= 0");
}

int UnlearnConfig::refresh_interval() const {
  return mrd_refresh_interval > 0 ? mrd_refresh_interval : std::max(1, max_steps / 4);
}

EarlyStopThresholds::EarlyStopThresholds(double el_bar, double ma_bar, int n_gram)
    : el_bar_(el_bar), ma_bar_(ma_bar), n_gram_(n_gram) {
  if (n_gram < 1) throw InvalidArgument("thresholds: n_gram must be >= 1");
}

EarlyStopThresholds freeze_thresholds(const LanguageModel& model,
                                      std::span<const TokenSequence> samples, int n_gram) {
  if (samples.empty()) throw InvalidArgument("freeze_thresholds: no samples");
  const LmTextModel view(model);
  double el = 0.0, ma = 0.0;
  for (const auto& x : samples) {
    el += extraction_likelihood(view, x, n_gram);
    ma += memorization_accuracy(view, x);
  }
  const auto n = static_cast<double>(samples.size());
  return {el / n, ma / n, n_gram};
}

bool early_stop_check(const LanguageModel& model, const TokenSequence& x,
                      const EarlyStopThresholds& thresholds) {
  const LmTextModel view(model);
  if (!(memorization_accuracy(view, x) < thresholds.ma_bar())) return false;
  return extraction_likelihood(view, x, thresholds.n_gram()) < thresholds.el_bar();
}

SamplingWeights compute_weights(std::span<const double> mrd_values, WeightingScheme scheme) {
  if (mrd_values.empty()) throw InvalidArgument("compute_weights: no MRD values");
  SamplingWeights w;
  w.per_sample.resize(mrd_values.size());
  for (std::size_t i = 0; i < mrd_values.size(); ++i) {
    const double v = mrd_values[i];
    if (!std::isfinite(v) || v < 0.0)
      throw InvalidArgument("compute_weights: MRD value " + std::to_string(v) + " at index " +
                            std::to_string(i));
    if (v == 0.0 && scheme != WeightingScheme::uniform)
      throw DegenerateWeights("compute_weights: MRD of sample at index " + std::to_string(i) +
                              " is zero");
    switch (scheme) {
      case WeightingScheme::mrd_proportional: w.per_sample[i] = v; break;
      case WeightingScheme::inverse_mrd_proportional: w.per_sample[i] = 1.0 / v; break;
      case WeightingScheme::uniform: w.per_sample[i] = 1.0; break;
    }
  }
  double total = 0.0;
  for (double p : w.per_sample) total += p;
  for (double& p : w.per_sample) p /= total;
  return w;
}

std::size_t UnlearnRunLog::forgotten_within(std::size_t updates) const {
  std::size_t n = 0;
  for (const auto& f : flagged_at) n += f && *f <= updates;
  return n;
}

double npo_loss(double log_ratio, double beta) {
  const double z = beta * log_ratio;
  const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  return 2.0 / beta * softplus;
}

namespace {

struct Term {
  double value = 0.0;
  std::vector<double> grad;
  std::size_t tokens = 0;
};

/// Sum of log p over the packed sequences (positions >= skip[i] of sequence i) and its gradient.
Term sum_log_probs(const LanguageModel& model, const std::vector<std::vector<int>>& seqs,
                   const std::vector<std::size_t>& skip = {}) {
  const auto batch = pack_sequences(model.config, seqs);
  ParamBinding binding(model.params);
  Tensor lp = forward_log_probs(binding, model.config, batch);
  Term t;
  if (!skip.empty()) {
    std::vector<double> mask(lp.size(), 0.0);
    for (std::size_t i = 0; i < seqs.size(); ++i)
      for (std::size_t p = batch.offsets[i] + skip[i]; p < batch.offsets[i + 1]; ++p) mask[p] = 1.0;
    for (double m : mask) t.tokens += m > 0.0;
    lp = mul(lp, Tensor::constant(lp.shape(), std::move(mask)));
  } else {
    t.tokens = lp.size();
  }
  auto vg = forward_backward(sum(lp), binding);
  t.value = vg.value;
  t.grad = std::move(vg.gradient.values);
  return t;
}

using ForgetTerm = std::function<Term(const LanguageModel&, std::size_t)>;

std::size_t draw(std::span<const double> weights, CounterRng& rng) {
  const bool uniform = std::all_of(weights.begin(), weights.end(),
                                   [&](double w) { return w == weights.front(); });
  if (uniform) return static_cast<std::size_t>(rng.below(weights.size()));
  const double u = rng.uniform();
  double c = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    c += weights[i];
    last = i;
    if (u < c) return i;
  }
  return last;
}

struct LoopSpec {
  std::span<const TokenSequence> check;
  std::span<const TokenSequence> retain;
  ForgetTerm forget_term;
  bool curriculum = false;
  bool uses_retain = false;
};

UnlearnResult run_loop(const LanguageModel& initial, const UnlearnConfig& cfg,
                       const EarlyStopThresholds& thresholds, const LoopSpec& spec) {
  cfg.validate();
  if (spec.check.empty()) throw InvalidArgument("unlearn: forget set is empty");
  const bool use_retain = spec.uses_retain && cfg.retain_weight > 0.0;
  if (use_retain && spec.retain.empty()) throw InvalidArgument("unlearn: retain set is empty");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();

  UnlearnResult result{initial, {}};
  LanguageModel& model = result.model;
  model.training_state = AdamState{};
  UnlearnRunLog& log = result.log;
  log.method = cfg.method;
  log.cost_model = cfg.cost_model;
  const std::size_t nf = spec.check.size();
  for (const auto& x : spec.check) log.sample_ids.push_back(x.sample_id);
  log.draws.assign(nf, 0);
  log.flagged_at.assign(nf, std::nullopt);

  std::vector<bool> flags(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    flags[i] = early_stop_check(model, spec.check[i], thresholds);
    if (flags[i]) log.flagged_at[i] = 0;
  }
  log.initially_forgotten = flags;
  auto all_flagged = [&] { return std::all_of(flags.begin(), flags.end(), [](bool f) { return f; }); };

  OptimizerConfig opt;
  opt.learning_rate = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;
  CounterRng forget_rng(derive_seed(cfg.seed, 1));
  CounterRng retain_rng(derive_seed(cfg.seed, 2));
  std::vector<double> weights(nf, 1.0 / static_cast<double>(nf));
  const auto m = static_cast<std::size_t>(cfg.refresh_interval());
  const auto d = static_cast<double>(model.params.dimension());
  double cost_total = 0.0;

  for (std::size_t step = 0; step < static_cast<std::size_t>(cfg.max_steps) && !all_flagged(); ++step) {
    if (spec.curriculum && step % m == 0) {
      const auto t0 = clock::now();
      WeightRefresh refresh;
      refresh.step = step;
      if (cfg.weighting == WeightingScheme::uniform) {
        refresh.mrd.assign(nf, 0.0);
      } else {
        const LmScorer scorer(model);
        for (const auto& x : spec.check) refresh.mrd.push_back(estimate_mrd(scorer, x, cfg.mrd).value);
      }
      try {
        weights = compute_weights(refresh.mrd, cfg.weighting).per_sample;
      } catch (const DegenerateWeights&) {
        weights.assign(nf, 1.0 / static_cast<double>(nf));
        refresh.fell_back_to_uniform = true;
      }
      refresh.weights = weights;
      log.refreshes.push_back(std::move(refresh));
      log.mrd_overhead_seconds += std::chrono::duration<double>(clock::now() - t0).count();
    }

    const auto t0 = clock::now();
    UnlearnStep rec;
    rec.step = step;
    std::vector<double> grad(model.params.dimension(), 0.0);
    std::size_t tokens = 0;
    const auto b = static_cast<std::size_t>(cfg.batch_size);
    try {
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t i = draw(weights, forget_rng);
        ++log.draws[i];
        rec.sample_ids.push_back(spec.check[i].sample_id);
        Term t = spec.forget_term(model, i);
        rec.forget_loss += t.value / static_cast<double>(b);
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += t.grad[p] / static_cast<double>(b);
        tokens += t.tokens;
      }
      if (use_retain) {
        std::vector<std::vector<int>> seqs;
        for (int k = 0; k < cfg.retain_batch_size; ++k)
          seqs.push_back(spec.retain[retain_rng.below(spec.retain.size())].tokens);
        Term t = sum_log_probs(model, seqs);
        const double nt = static_cast<double>(t.tokens);
        rec.retain_loss = -t.value / nt;
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] -= cfg.retain_weight * t.grad[p] / nt;
        tokens += t.tokens;
      }
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("unlearning step " + std::to_string(step) + ": " + e.what());
    }
    rec.loss = rec.forget_loss + cfg.retain_weight * (use_retain ? rec.retain_loss : 0.0);
    if (!std::isfinite(rec.loss))
      throw NumericalFailure("unlearning step " + std::to_string(step) + ": loss is not finite");

    if (cfg.update_rule == UpdateRule::adamw) {
      rec.update_norm = adamw_step(model.params, model.training_state, grad, opt, cfg.learning_rate);
    } else {
      double sq = 0.0;
      for (std::size_t p = 0; p < grad.size(); ++p) {
        const double delta = -cfg.learning_rate * (grad[p] + cfg.weight_decay * model.params.values[p]);
        model.params.values[p] += delta;
        sq += delta * delta;
      }
      rec.update_norm = std::sqrt(sq);
    }
    rec.cost = cfg.cost_model == CostModel::flops
                   ? 6.0 * d * static_cast<double>(tokens)
                   : std::chrono::duration<double>(clock::now() - t0).count();
    cost_total += rec.cost;

    for (std::size_t i = 0; i < nf; ++i) {
      if (flags[i]) continue;
      if (early_stop_check(model, spec.check[i], thresholds)) {
        flags[i] = true;
        log.flagged_at[i] = step + 1;
      }
    }
    rec.forgotten = flags;
    log.steps.push_back(std::move(rec));
  }

  log.stop_reason = all_flagged() ? StopReason::constraint_met : StopReason::budget_exhausted;
  log.per_update_cost = log.steps.empty() ? 0.0 : cost_total / static_cast<double>(log.steps.size());
  for (const auto& x : spec.check) log.final_status.push_back(early_stop_check(model, x, thresholds));
  log.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();
  return result;
}

/// Ascent on the token-mean NLL of one sequence, expressed as a loss to minimize.
ForgetTerm ascent_term(std::span<const TokenSequence> forget, NllReduction reduction) {
  return [forget, reduction](const LanguageModel& model, std::size_t i) {
    Term t = sum_log_probs(model, {forget[i].tokens});
    const double n = reduction == NllReduction::token_mean ? static_cast<double>(t.tokens) : 1.0;
    t.value /= n;
    for (double& g : t.grad) g /= n;
    return t;
  };
}

}  // namespace

UnlearnResult run_sga(const LanguageModel& model, std::span<const TokenSequence> forget,
                      const UnlearnConfig& config, const EarlyStopThresholds& thresholds) {
  return run_loop(model, config, thresholds, {forget, {}, ascent_term(forget, config.reduction), false, false});
}

UnlearnResult run_cga(const LanguageModel& model, std::span<const TokenSequence> forget,
                      const UnlearnConfig& config, const EarlyStopThresholds& thresholds) {
  return run_loop(model, config, thresholds, {forget, {}, ascent_term(forget, config.reduction), true, false});
}

UnlearnResult run_graddiff(const LanguageModel& model, std::span<const TokenSequence> forget,
                           std::span<const TokenSequence> retain, const UnlearnConfig& config,
                           const EarlyStopThresholds& thresholds) {
  return run_loop(model, config, thresholds, {forget, retain, ascent_term(forget, config.reduction), false, true});
}

UnlearnResult run_npo(const LanguageModel& model, const LanguageModel& reference,
                      std::span<const TokenSequence> forget, std::span<const TokenSequence> retain,
                      const UnlearnConfig& config, const EarlyStopThresholds& thresholds) {
  if (!(*model.params.layout == *reference.params.layout))
    throw ContractViolation("run_npo: reference model has a different layout");
  std::vector<double> ref_total;
  for (const auto& x : forget) ref_total.push_back(token_log_probs(reference, x).sequence_total);
  const double beta = config.npo_beta;
  ForgetTerm term = [forget, ref_total, beta](const LanguageModel& m, std::size_t i) {
    Term t = sum_log_probs(m, {forget[i].tokens});
    const double r = t.value - ref_total[i];
    const double scale = 2.0 / (1.0 + std::exp(-beta * r));
    for (double& g : t.grad) g *= scale;
    t.value = npo_loss(r, beta);
    return t;
  };
  return run_loop(model, config, thresholds, {forget, retain, term, false, true});
}

UnlearnResult run_po(const LanguageModel& model, std::span<const RejectionExample> forget,
                     std::span<const TokenSequence> retain, const UnlearnConfig& config,
                     const EarlyStopThresholds& thresholds) {
  std::vector<TokenSequence> originals;
  for (const auto& ex : forget) {
    if (ex.prompt.empty() || ex.target.empty())
      throw InvalidArgument("run_po: sample " + std::to_string(ex.original.sample_id) +
                            " lacks a prompt or rejection target");
    originals.push_back(ex.original);
  }
  ForgetTerm term = [forget](const LanguageModel& m, std::size_t i) {
    std::vector<int> seq = forget[i].prompt;
    seq.insert(seq.end(), forget[i].target.begin(), forget[i].target.end());
    Term t = sum_log_probs(m, {seq}, {forget[i].prompt.size()});
    const double n = static_cast<double>(t.tokens);
    t.value = -t.value / n;
    for (double& g : t.grad) g = -g / n;
    return t;
  };
  return run_loop(model, config, thresholds, {originals, retain, term, false, true});
}

std::vector<RejectionExample> make_rejection_examples(std::span<const TokenSequence> forget,
                                                      const std::vector<int>& target) {
  std::vector<RejectionExample> out;
  for (const auto& x : forget) out.push_back({x, qa_pair(x).prompt, target});
  return out;
}

std::vector<RejectionExample> load_rejection_fixtures(const std::filesystem::path& path,
                                                      std::span<const TokenSequence> forget,
                                                      const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw LoadError("rejection fixtures: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("rejection fixtures " + path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw LoadError("rejection fixtures " + path.string() + ": expected a list");
  std::vector<std::pair<std::vector<int>, std::vector<int>>> fixtures;
  for (std::size_t k = 0; k < doc.size(); ++k) {
    try {
      fixtures.emplace_back(vocab.tokenize(doc[k].at("prompt").get<std::string>()),
                            vocab.tokenize(doc[k].at("target").get<std::string>()));
    } catch (const std::exception& e) {
      throw LoadError("rejection fixtures " + path.string() + " entry " + std::to_string(k) + ": " +
                      e.what());
    }
  }
  std::vector<RejectionExample> out;
  for (const auto& x : forget) {
    const auto it = std::find_if(fixtures.begin(), fixtures.end(), [&](const auto& f) {
      return !f.first.empty() && f.first.size() < x.tokens.size() &&
             std::equal(f.first.begin(), f.first.end(), x.tokens.begin());
    });
    if (it == fixtures.end())
      throw InvalidArgument("rejection fixtures: no prompt matches forget sample " +
                            std::to_string(x.sample_id));
    out.push_back({x, it->first, it->second});
  }
  return out;
}

Efficiency efficiency_report(const UnlearnRunLog& log) {
  if (log.steps.empty()) throw InvalidArgument("efficiency_report: run performed no updates");
  Efficiency e;
  e.M = log.steps.size();
  e.C = log.per_update_cost;
  e.E = 1.0 / (static_cast<double>(e.M) * e.C);
  return e;
}

json to_json(const UnlearnConfig& c) {
  return {{"method", to_string(c.method)},
          {"learning_rate", c.learning_rate},
          {"max_steps", c.max_steps},
          {"batch_size", c.batch_size},
          {"retain_batch_size", c.retain_batch_size},
          {"mrd_refresh_interval", c.refresh_interval()},
          {"weighting", to_string(c.weighting)},
          {"retain_weight", c.retain_weight},
          {"npo_beta", c.npo_beta},
          {"update_rule", to_string(c.update_rule)},
          {"reduction", c.reduction == NllReduction::token_mean ? "token_mean" : "sequence_sum"},
          {"weight_decay", c.weight_decay},
          {"cost_model", c.cost_model == CostModel::flops ? "flops" : "seconds"},
          {"mrd", to_json(c.mrd)},
          {"seed", c.seed}};
}

UnlearnConfig unlearn_config_from_json(const json& j) {
  UnlearnConfig c;
  if (j.contains("method")) c.method = unlearn_method_from_string(j.at("method").get<std::string>());
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.retain_batch_size = j.value("retain_batch_size", c.retain_batch_size);
  c.mrd_refresh_interval = j.value("mrd_refresh_interval", c.mrd_refresh_interval);
  if (j.contains("weighting")) c.weighting = weighting_from_string(j.at("weighting").get<std::string>());
  c.retain_weight = j.value("retain_weight", c.retain_weight);
  c.npo_beta = j.value("npo_beta", c.npo_beta);
  if (j.contains("update_rule"))
    c.update_rule = update_rule_from_string(j.at("update_rule").get<std::string>());
  if (j.contains("reduction")) {
    const auto s = j.at("reduction").get<std::string>();
    if (s == "token_mean") c.reduction = NllReduction::token_mean;
    else if (s == "sequence_sum") c.reduction = NllReduction::sequence_sum;
    else throw InvalidArgument("unknown NLL reduction '" + s + "'");
  }
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("cost_model")) {
    const auto s = j.at("cost_model").get<std::string>();
    if (s == "flops") c.cost_model = CostModel::flops;
    else if (s == "seconds") c.cost_model = CostModel::seconds;
    else throw InvalidArgument("unknown cost model '" + s + "'");
  }
  if (j.contains("mrd")) c.mrd = estimator_config_from_json(j.at("mrd"));
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

json to_json(const EarlyStopThresholds& t) {
  return {{"el_bar", t.el_bar()}, {"ma_bar", t.ma_bar()}, {"n_gram", t.n_gram()}};
}

EarlyStopThresholds thresholds_from_json(const json& j) {
  return {j.at("el_bar").get<double>(), j.at("ma_bar").get<double>(), j.at("n_gram").get<int>()};
}

json to_json(const UnlearnStep& s) {
  return {{"step", s.step},
          {"sample_ids", s.sample_ids},
          {"loss", s.loss},
          {"forget_loss", s.forget_loss},
          {"retain_loss", s.retain_loss},
          {"update_norm", s.update_norm},
          {"cost", s.cost},
          {"forgotten", s.forgotten}};
}

json run_summary_json(const UnlearnRunLog& log) {
  json flagged = json::array();
  for (const auto& f : log.flagged_at) flagged.push_back(f ? json(*f) : json(nullptr));
  json refreshes = json::array();
  for (const auto& r : log.refreshes)
    refreshes.push_back({{"step", r.step}, {"mrd", r.mrd}, {"weights", r.weights},
                         {"fell_back_to_uniform", r.fell_back_to_uniform}});
  json s = {{"method", to_string(log.method)},
            {"sample_ids", log.sample_ids},
            {"M", log.total_updates()},
            {"C", log.per_update_cost},
            {"cost_model", log.cost_model == CostModel::flops ? "flops" : "seconds"},
            {"stop_reason", to_string(log.stop_reason)},
            {"initially_forgotten", log.initially_forgotten},
            {"flagged_at", flagged},
            {"draws", log.draws},
            {"final_status", log.final_status},
            {"refreshes", refreshes},
            {"mrd_overhead_seconds", log.mrd_overhead_seconds},
            {"wall_seconds", log.wall_seconds}};
  s["E"] = log.steps.empty() ? json(nullptr) : json(efficiency_report(log).E);
  return s;
}

void write_run_log(const std::filesystem::path& path, const UnlearnRunLog& log) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("write_run_log: cannot open " + path.string());
  for (const auto& s : log.steps) out << to_json(s).dump() << '\n';
  out << json{{"summary", run_summary_json(log)}}.dump() << '\n';
}

}  // namespace fb
