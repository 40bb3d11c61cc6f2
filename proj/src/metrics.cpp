#include "forgetbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "forgetbench/error.hpp"

namespace fb {

using nlohmann::json;

std::vector<std::vector<double>> LmTextModel::teacher_forced_logits(std::span<const int> tokens) const {
  return fb::teacher_forced_logits(*model_, tokens);
}

std::vector<int> LmTextModel::greedy_continuation(std::span<const int> prefix,
                                                  std::size_t max_new) const {
  return fb::greedy_continuation(*model_, prefix, max_new);
}

std::vector<double> LmTextModel::token_log_probs(std::span<const int> tokens) const {
  return token_log_probs_at(model_->config, model_->params.layout, model_->params.values, tokens);
}

namespace {

std::vector<int> predictions(const TextModel& model, std::span<const int> tokens) {
  const auto rows = model.teacher_forced_logits(tokens);
  std::vector<int> pred(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) pred[t] = argmax_token(rows[t]);
  return pred;
}

}  // namespace

double memorization_accuracy(const TextModel& model, const TokenSequence& x) {
  const std::size_t T = x.size();
  if (T < 2) throw InvalidArgument("memorization_accuracy: sequence needs at least 2 tokens");
  const auto pred = predictions(model, x.tokens);
  std::size_t hits = 0;
  for (std::size_t t = 1; t < T; ++t) hits += pred[t] == x.tokens[t];
  return static_cast<double>(hits) / static_cast<double>(T - 1);
}

double ngram_overlap(std::span<const int> a, std::span<const int> b, int n) {
  if (n < 1) throw InvalidArgument("ngram_overlap: n must be >= 1");
  const auto un = static_cast<std::size_t>(n);
  if (a.size() < un)
    throw InvalidArgument("ngram_overlap: sequence of length " + std::to_string(a.size()) +
                          " has no " + std::to_string(n) + "-grams");
  std::set<std::vector<int>> grams_b;
  for (std::size_t i = 0; i + un <= b.size(); ++i)
    grams_b.emplace(b.begin() + static_cast<std::ptrdiff_t>(i), b.begin() + static_cast<std::ptrdiff_t>(i + un));
  std::size_t hits = 0;
  const std::size_t total = a.size() - un + 1;
  for (std::size_t i = 0; i < total; ++i)
    hits += grams_b.contains(std::vector<int>(a.begin() + static_cast<std::ptrdiff_t>(i),
                                              a.begin() + static_cast<std::ptrdiff_t>(i + un)));
  return static_cast<double>(hits) / static_cast<double>(total);
}

double ngram_overlap(const TokenSequence& a, const TokenSequence& b, int n) {
  return ngram_overlap(std::span<const int>(a.tokens), std::span<const int>(b.tokens), n);
}

double extraction_likelihood(const TextModel& model, const TokenSequence& x, int n) {
  if (n < 1) throw InvalidArgument("extraction_likelihood: n must be >= 1");
  const std::size_t T = x.size();
  const auto un = static_cast<std::size_t>(n);
  if (T <= un)
    throw InvalidArgument("extraction_likelihood: sequence length " + std::to_string(T) +
                          " must exceed n = " + std::to_string(n));
  const std::span<const int> tokens(x.tokens);
  // Greedy decoding from x_<t follows the teacher-forced argmax as long as it
  // agrees with x; continuations only need generating from the first mismatch.
  const auto pred = predictions(model, tokens);
  std::vector<std::size_t> first_miss(T + 1, T);
  for (std::size_t j = T; j-- > 0;) first_miss[j] = pred[j] != tokens[j] ? j : first_miss[j + 1];
  std::map<std::size_t, std::vector<int>> tails;

  double total = 0.0;
  for (std::size_t t = 0; t < T - un; ++t) {
    const std::size_t j = first_miss[t];
    std::vector<int> generated(tokens.begin() + static_cast<std::ptrdiff_t>(t),
                               tokens.begin() + static_cast<std::ptrdiff_t>(j));
    if (j < T) {
      auto it = tails.find(j);
      if (it == tails.end())
        it = tails.emplace(j, model.greedy_continuation(tokens.first(j), T - j)).first;
      generated.insert(generated.end(), it->second.begin(), it->second.end());
    }
    if (generated.size() >= un) total += ngram_overlap(generated, tokens.subspan(t), n);
  }
  return total / static_cast<double>(T - un);
}

double rouge_l_recall(std::span<const int> reference, std::span<const int> hypothesis) {
  if (reference.empty()) throw InvalidArgument("rouge_l_recall: empty reference");
  std::vector<std::size_t> prev(hypothesis.size() + 1, 0), cur(hypothesis.size() + 1, 0);
  for (int r : reference) {
    for (std::size_t h = 0; h < hypothesis.size(); ++h)
      cur[h + 1] = r == hypothesis[h] ? prev[h] + 1 : std::max(prev[h + 1], cur[h]);
    std::swap(prev, cur);
  }
  return static_cast<double>(prev.back()) / static_cast<double>(reference.size());
}

double rouge_l_recall(const TokenSequence& reference, const TokenSequence& hypothesis) {
  return rouge_l_recall(std::span<const int>(reference.tokens), std::span<const int>(hypothesis.tokens));
}

QaPair qa_pair(const TokenSequence& x) {
  if (x.size() < 2) throw InvalidArgument("qa_pair: sequence needs at least 2 tokens");
  const std::size_t cut = std::max<std::size_t>(1, x.size() / 2);
  return {{x.tokens.begin(), x.tokens.begin() + static_cast<std::ptrdiff_t>(cut)},
          {x.tokens.begin() + static_cast<std::ptrdiff_t>(cut), x.tokens.end()}};
}

std::vector<QaPair> qa_pairs(std::span<const TokenSequence> xs) {
  std::vector<QaPair> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(qa_pair(x));
  return out;
}

bool reproduces_answer(const TextModel& model, const QaPair& pair) {
  return model.greedy_continuation(pair.prompt, pair.answer.size()) == pair.answer;
}

double unlearning_accuracy(const TextModel& model, std::span<const QaPair> pairs) {
  if (pairs.empty()) throw InvalidArgument("unlearning_accuracy: no pairs");
  std::size_t hits = 0;
  for (const auto& p : pairs) hits += reproduces_answer(model, p);
  return 1.0 - static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double answer_rouge_l(const TextModel& model, const QaPair& pair) {
  return rouge_l_recall(pair.answer, model.greedy_continuation(pair.prompt, pair.answer.size()));
}

double min_k_score(std::span<const double> log_probs, double k_fraction) {
  if (!(k_fraction > 0.0 && k_fraction <= 1.0))
    throw InvalidArgument("min_k_score: k_fraction must lie in (0, 1]");
  if (log_probs.empty()) throw InvalidArgument("min_k_score: no tokens");
  std::vector<double> v(log_probs.begin(), log_probs.end());
  const double want = std::ceil(k_fraction * static_cast<double>(v.size()) - 1e-9);
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, v.size());
  const auto end = v.begin() + static_cast<std::ptrdiff_t>(k);
  std::partial_sort(v.begin(), end, v.end());
  double s = 0.0;
  for (auto it = v.begin(); it != end; ++it) s += *it;
  return s / static_cast<double>(k);
}

double membership_auc(std::span<const double> member_scores, std::span<const double> nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty())
    throw InvalidArgument("membership_auc: both members and non-members are required");
  std::vector<double> members(member_scores.begin(), member_scores.end());
  std::sort(members.begin(), members.end());
  double wins = 0.0;
  for (double s : nonmember_scores) {
    const auto lo = std::lower_bound(members.begin(), members.end(), s);
    const auto hi = std::upper_bound(lo, members.end(), s);
    wins += static_cast<double>(lo - members.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(members.size()) * static_cast<double>(nonmember_scores.size()));
}

double min_k_prob_mia(const TextModel& model, std::span<const TokenSequence> members,
                      std::span<const TokenSequence> nonmembers, double k_fraction) {
  if (members.empty() || nonmembers.empty())
    throw InvalidArgument("min_k_prob_mia: both members and non-members are required");
  auto scores = [&](std::span<const TokenSequence> xs) {
    std::vector<double> out;
    for (const auto& x : xs) out.push_back(min_k_score(model.token_log_probs(x.tokens), k_fraction));
    return out;
  };
  return membership_auc(scores(members), scores(nonmembers));
}

SplitMetrics evaluate_split(const TextModel& model, std::span<const TokenSequence> xs,
                            const MetricsOptions& options) {
  if (xs.empty()) throw InvalidArgument("evaluate_split: empty split");
  SplitMetrics m;
  m.count = xs.size();
  std::size_t reproduced = 0;
  for (const auto& x : xs) {
    m.ma += memorization_accuracy(model, x);
    m.el += extraction_likelihood(model, x, options.el_n);
    const auto pair = qa_pair(x);
    const auto hyp = model.greedy_continuation(pair.prompt, pair.answer.size());
    m.rouge_l += rouge_l_recall(pair.answer, hyp);
    reproduced += hyp == pair.answer;
  }
  const auto n = static_cast<double>(xs.size());
  m.ma /= n;
  m.el /= n;
  m.rouge_l /= n;
  m.ua = 1.0 - static_cast<double>(reproduced) / n;
  return m;
}

MetricsReport utility_report(const TextModel& model, std::span<const TokenSequence> retain,
                             std::span<const TokenSequence> heldout, const MetricsOptions& options) {
  MetricsReport r;
  r.options = options;
  r.retain = evaluate_split(model, retain, options);
  r.heldout = evaluate_split(model, heldout, options);
  return r;
}

MetricsReport metrics_report(const TextModel& model, const Corpus& corpus,
                             const MetricsOptions& options) {
  auto r = utility_report(model, corpus.retain, corpus.heldout, options);
  r.forget = evaluate_split(model, corpus.forget, options);
  r.mia_auc = min_k_prob_mia(model, corpus.forget, corpus.heldout, options.k_fraction);
  return r;
}

json to_json(const SplitMetrics& m) {
  return {{"count", m.count}, {"ma", m.ma}, {"el", m.el}, {"rouge_l", m.rouge_l}, {"ua", m.ua}};
}

SplitMetrics split_metrics_from_json(const json& j) {
  SplitMetrics m;
  m.count = j.at("count").get<std::size_t>();
  m.ma = j.at("ma").get<double>();
  m.el = j.at("el").get<double>();
  m.rouge_l = j.at("rouge_l").get<double>();
  m.ua = j.at("ua").get<double>();
  return m;
}

json to_json(const MetricsReport& r) {
  return {{"options", {{"el_n", r.options.el_n}, {"k_fraction", r.options.k_fraction}}},
          {"forget", to_json(r.forget)},
          {"retain", to_json(r.retain)},
          {"heldout", to_json(r.heldout)},
          {"mia_auc", r.mia_auc},
          {"rr", r.rr()},
          {"completeness_avg", r.completeness_avg()}};
}

MetricsReport metrics_report_from_json(const json& j) {
  MetricsReport r;
  r.options.el_n = j.at("options").at("el_n").get<int>();
  r.options.k_fraction = j.at("options").at("k_fraction").get<double>();
  r.forget = split_metrics_from_json(j.at("forget"));
  r.retain = split_metrics_from_json(j.at("retain"));
  r.heldout = split_metrics_from_json(j.at("heldout"));
  r.mia_auc = j.at("mia_auc").get<double>();
  return r;
}

std::vector<std::string> metrics_csv_header() {
  return {"forget_ua",  "mia_auc",     "rr",         "completeness_avg", "forget_ma",
          "forget_el",  "retain_ma",   "retain_el",  "retain_rouge_l",   "heldout_ma",
          "heldout_el", "heldout_rouge_l"};
}

std::vector<double> metrics_csv_row(const MetricsReport& r) {
  return {r.forget.ua,  r.mia_auc,        r.rr(),       r.completeness_avg(), r.forget.ma,
          r.forget.el,  r.retain.ma,      r.retain.el,  r.retain.rouge_l,     r.heldout.ma,
          r.heldout.el, r.heldout.rouge_l};
}

}  // namespace fb
