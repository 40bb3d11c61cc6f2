#include "support.hpp"

#include <algorithm>
#include <cmath>

#include "forgetbench/params.hpp"
#include "forgetbench/rng.hpp"
#include "forgetbench/tensor.hpp"

namespace fb::testing {

QuadraticScorer::QuadraticScorer(std::vector<double> theta, std::vector<Term> terms)
    : theta_(std::move(theta)), terms_(std::move(terms)) {}

std::vector<double> QuadraticScorer::log_probs(std::span<const double> theta, const TokenSequence&) const {
  std::vector<double> out;
  for (const auto& term : terms_) {
    double v = term.c;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!term.b.empty()) v += term.b[i] * theta[i];
      if (!term.A.empty()) {
        double row = 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) row += term.A[i][j] * theta[j];
        v += 0.5 * theta[i] * row;
      }
    }
    out.push_back(v);
  }
  return out;
}

std::vector<std::vector<double>> QuadraticScorer::log_prob_gradients(std::span<const double> theta,
                                                                     const TokenSequence&) const {
  std::vector<std::vector<double>> out;
  for (const auto& term : terms_) {
    std::vector<double> g(theta.size(), 0.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!term.b.empty()) g[i] = term.b[i];
      if (!term.A.empty())
        for (std::size_t j = 0; j < theta.size(); ++j) g[i] += term.A[i][j] * theta[j];
    }
    out.push_back(std::move(g));
  }
  return out;
}

double QuadraticScorer::trace(std::size_t t) const {
  double s = 0.0;
  for (std::size_t i = 0; i < terms_[t].A.size(); ++i) s += terms_[t].A[i][i];
  return s;
}

std::vector<std::vector<double>> random_spd(std::size_t d, double lo, double hi, std::uint64_t seed) {
  CounterRng rng(seed);
  // Q from Gram-Schmidt on a Gaussian matrix, then Q diag(lambda) Q^T.
  std::vector<std::vector<double>> q(d, std::vector<double>(d));
  for (auto& row : q)
    for (auto& v : row) v = rng.normal_pair().first;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += q[i][k] * q[j][k];
      for (std::size_t k = 0; k < d; ++k) q[i][k] -= dot * q[j][k];
    }
    double norm = 0.0;
    for (double v : q[i]) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : q[i]) v /= norm;
  }
  std::vector<double> lambda(d);
  for (auto& l : lambda) l = lo + (hi - lo) * rng.uniform();
  std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += q[k][i] * lambda[k] * q[k][j];
      a[i][j] = a[j][i] = s;
    }
  return a;
}

ScriptedModel::ScriptedModel(std::vector<std::vector<int>> memorized, std::size_t vocab)
    : memorized_(std::move(memorized)), vocab_(vocab) {}

int ScriptedModel::next(std::span<const int> prefix) const {
  for (const auto& m : memorized_)
    if (m.size() > prefix.size() && std::equal(prefix.begin(), prefix.end(), m.begin()))
      return m[prefix.size()];
  return Vocab::kEos;
}

std::vector<double> ScriptedModel::logits_after(std::span<const int> prefix) const {
  std::vector<double> logits(vocab_, 0.0);
  logits[static_cast<std::size_t>(next(prefix))] = 10.0;
  return logits;
}

std::vector<std::vector<double>> ScriptedModel::teacher_forced_logits(std::span<const int> tokens) const {
  std::vector<std::vector<double>> rows;
  for (std::size_t t = 0; t < tokens.size(); ++t) rows.push_back(logits_after(tokens.first(t)));
  return rows;
}

std::vector<int> ScriptedModel::greedy_continuation(std::span<const int> prefix, std::size_t max_new) const {
  std::vector<int> seq(prefix.begin(), prefix.end()), out;
  while (out.size() < max_new) {
    const int tok = next(seq);
    if (tok == Vocab::kEos) break;
    out.push_back(tok);
    seq.push_back(tok);
  }
  return out;
}

std::vector<double> ScriptedModel::token_log_probs(std::span<const int> tokens) const {
  std::vector<double> out;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto logits = logits_after(tokens.first(t));
    double z = 0.0;
    for (double l : logits) z += std::exp(l);
    out.push_back(logits[static_cast<std::size_t>(tokens[t])] - std::log(z));
  }
  return out;
}

ConstantScoreModel::ConstantScoreModel(std::vector<std::pair<std::vector<int>, double>> scores)
    : scores_(std::move(scores)) {}

std::vector<std::vector<double>> ConstantScoreModel::teacher_forced_logits(std::span<const int> tokens) const {
  return std::vector<std::vector<double>>(tokens.size(), std::vector<double>(4, 0.0));
}

std::vector<int> ConstantScoreModel::greedy_continuation(std::span<const int>, std::size_t) const { return {}; }

std::vector<double> ConstantScoreModel::token_log_probs(std::span<const int> tokens) const {
  for (const auto& [seq, score] : scores_)
    if (std::equal(seq.begin(), seq.end(), tokens.begin(), tokens.end()))
      return std::vector<double>(tokens.size(), score);
  return std::vector<double>(tokens.size(), -100.0);
}

TokenSequence sequence(const std::string& text, std::size_t id) {
  TokenSequence x;
  x.sample_id = id;
  x.text = text;
  x.tokens = Vocab::standard().tokenize(text);
  return x;
}

LmConfig tiny_lm_config(std::uint64_t seed) {
  LmConfig c;
  c.vocab_size = 7;
  c.context_length = 8;
  c.embed_dim = 4;
  c.num_layers = 2;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.seed = seed;
  return c;
}

namespace {

using Network = std::function<Tensor(const ParamBinding&)>;

struct Built {
  std::shared_ptr<const ParamLayout> layout;
  std::vector<double> theta;
  Network net;
};

Built random_transformer(std::uint64_t seed) {
  CounterRng rng(seed);
  LmConfig c;
  c.vocab_size = 5 + static_cast<int>(rng.below(4));
  c.context_length = 8;
  c.num_heads = 1 + static_cast<int>(rng.below(2));
  c.embed_dim = 4 * (1 + static_cast<int>(rng.below(2)));
  c.num_layers = 1 + static_cast<int>(rng.below(2));
  c.mlp_ratio = 2;
  c.seed = seed;
  auto model = init_model(c);
  // Spread the weights.
  for (double& v : model.params.values) v += 0.3 * rng.normal_pair().first;
  std::vector<std::vector<int>> seqs(2);
  for (auto& s : seqs) {
    s.resize(2 + rng.below(4));
    for (int& t : s) t = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.vocab_size - 2)));
  }
  const auto batch = pack_sequences(c, seqs);
  return {model.params.layout, model.params.values,
          [c, batch](const ParamBinding& p) { return sum(forward_log_probs(p, c, batch)); }};
}

Built random_composite(std::uint64_t seed) {
  CounterRng rng(seed);
  const std::size_t n = 2 + rng.below(3), k = 2 + rng.below(3), m = 2 + rng.below(4);
  auto layout = std::make_shared<ParamLayout>();
  layout->add("w1", {k, m});
  layout->add("b1", {m});
  layout->add("w2", {m, m});
  layout->add("gamma", {m});
  layout->add("beta", {m});
  std::vector<double> theta(layout->dimension());
  for (double& v : theta) v = 0.5 * rng.normal_pair().first;
  std::vector<double> x(n * k);
  for (double& v : x) v = rng.normal_pair().first;
  std::vector<int> cols(n);
  for (int& c : cols) c = static_cast<int>(rng.below(m));
  const int variant = static_cast<int>(rng.below(4));
  Network net = [=](const ParamBinding& p) {
    const Tensor input = Tensor::constant({n, k}, x);
    Tensor h = add_row(matmul(input, p["w1"]), p["b1"]);
    h = variant % 2 ? tanh(h) : gelu(h);
    h = layer_norm(h, p["gamma"], p["beta"]);
    Tensor z = matmul_nt(h, p["w2"]);
    switch (variant) {
      case 0: return sum(pick(log_softmax_rows(z), cols));
      case 1: return sum(mul(softmax_rows(z), exp(scale(h, 0.5))));
      case 2: return sum(log(add(exp(z), Tensor::constant(z.shape(), std::vector<double>(z.size(), 1.0)))));
      default: {
        std::vector<std::size_t> starts(n, 0);
        const Tensor att = causal_attention(z, h, sub(h, z), 1, starts);
        return sum(mul(att, att));
      }
    }
  };
  return {layout, theta, net};
}

}  // namespace

GradientCheck check_random_network(std::uint64_t seed, double h) {
  const Built b = seed % 2 ? random_composite(seed) : random_transformer(seed);
  const ParamBinding binding(b.theta, b.layout);
  const auto analytic = forward_backward(b.net(binding), binding).gradient.values;
  auto value = [&](const std::vector<double>& theta) {
    NoGradGuard guard;
    return b.net(ParamBinding(theta, b.layout, false)).item();
  };
  GradientCheck out;
  out.parameters = b.theta.size();
  std::vector<double> theta = b.theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + h;
    const double up = value(theta);
    theta[i] = orig - h;
    const double down = value(theta);
    theta[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(analytic[i] - numeric) / denom);
  }
  return out;
}

LanguageModel memorizing_model(const std::vector<std::string>& texts, std::uint64_t seed) {
  std::vector<TokenSequence> stream;
  for (std::size_t i = 0; i < texts.size(); ++i) stream.push_back(sequence(texts[i], i));
  LmConfig c;
  c.embed_dim = 16;
  c.num_layers = 1;
  c.num_heads = 2;
  c.context_length = 32;
  c.seed = seed;
  OptimizerConfig o;
  o.learning_rate = 1e-2;
  o.epochs = 300;
  o.batch_size = static_cast<int>(texts.size());
  o.seed = seed;
  return train(stream, c, o).model;
}

}  // namespace fb::testing
