#include "forgetbench/lm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include <zlib.h>

#include "forgetbench/error.hpp"
#include "forgetbench/rng.hpp"

namespace fb {

using nlohmann::json;

void LmConfig::validate() const {
  if (vocab_size < 2) throw InvalidArgument("LmConfig: vocab_size must be >= 2");
  if (context_length < 2) throw InvalidArgument("LmConfig: context_length must be >= 2");
  if (embed_dim < 1 || num_layers < 1 || num_heads < 1 || mlp_ratio < 1)
    throw InvalidArgument("LmConfig: dimensions must be positive");
  if (embed_dim % num_heads != 0)
    throw InvalidArgument("LmConfig: embed_dim must be divisible by num_heads");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("OptimizerConfig: learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw InvalidArgument("OptimizerConfig: betas must lie in [0, 1)");
  if (epochs < 0 || batch_size < 1) throw InvalidArgument("OptimizerConfig: bad epochs/batch_size");
  if (weight_decay < 0.0 || grad_clip < 0.0) throw InvalidArgument("OptimizerConfig: negative decay/clip");
}

namespace {

std::string layer_key(int layer, const char* name) {
  return "h" + std::to_string(layer) + "." + name;
}

}  // namespace

std::shared_ptr<const ParamLayout> make_layout(const LmConfig& c) {
  c.validate();
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const auto D = static_cast<std::size_t>(c.embed_dim);
  const auto C = static_cast<std::size_t>(c.context_length);
  const auto H = D * static_cast<std::size_t>(c.mlp_ratio);
  auto layout = std::make_shared<ParamLayout>();
  layout->add("tok_emb", {V, D});
  layout->add("pos_emb", {C, D});
  for (int l = 0; l < c.num_layers; ++l) {
    layout->add(layer_key(l, "ln1.g"), {D});
    layout->add(layer_key(l, "ln1.b"), {D});
    layout->add(layer_key(l, "attn.wq"), {D, D});
    layout->add(layer_key(l, "attn.wk"), {D, D});
    layout->add(layer_key(l, "attn.wv"), {D, D});
    layout->add(layer_key(l, "attn.wo"), {D, D});
    layout->add(layer_key(l, "attn.bo"), {D});
    layout->add(layer_key(l, "ln2.g"), {D});
    layout->add(layer_key(l, "ln2.b"), {D});
    layout->add(layer_key(l, "mlp.w1"), {D, H});
    layout->add(layer_key(l, "mlp.b1"), {H});
    layout->add(layer_key(l, "mlp.w2"), {H, D});
    layout->add(layer_key(l, "mlp.b2"), {D});
  }
  layout->add("ln_f.g", {D});
  layout->add("ln_f.b", {D});
  return layout;
}

LanguageModel init_model(const LmConfig& config) {
  LanguageModel model;
  model.config = config;
  model.params = ParamVector(make_layout(config));
  CounterRng rng(derive_seed(config.seed, 0x1a17));
  const double proj_std = 0.02 / std::sqrt(2.0 * config.num_layers);
  for (const auto& seg : model.params.layout->segments()) {
    auto values = model.params.segment(seg.name);
    const bool gain = seg.name.ends_with(".g");
    const bool bias = seg.name.ends_with(".b") || seg.name.ends_with("bo") ||
                      seg.name.ends_with("b1") || seg.name.ends_with("b2");
    if (gain) {
      std::fill(values.begin(), values.end(), 1.0);
    } else if (!bias) {
      const double stddev =
          (seg.name.ends_with("wo") || seg.name.ends_with("w2")) ? proj_std : 0.02;
      for (std::size_t i = 0; i < values.size(); i += 2) {
        const auto [z0, z1] = rng.normal_pair();
        values[i] = stddev * z0;
        if (i + 1 < values.size()) values[i + 1] = stddev * z1;
      }
    }
  }
  model.training_state.m.assign(model.params.dimension(), 0.0);
  model.training_state.v.assign(model.params.dimension(), 0.0);
  return model;
}

double adamw_step(ParamVector& params, AdamState& state, std::span<const double> grad,
                  const OptimizerConfig& opt, double lr) {
  const std::size_t d = params.dimension();
  if (grad.size() != d) throw ContractViolation("adamw_step: gradient dimension mismatch");
  if (state.m.size() != d) state.m.assign(d, 0.0);
  if (state.v.size() != d) state.v.assign(d, 0.0);
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  double sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * grad[i];
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    const double delta =
        -lr * (mhat / (std::sqrt(vhat) + opt.epsilon) + opt.weight_decay * params.values[i]);
    params.values[i] += delta;
    sq += delta * delta;
  }
  return std::sqrt(sq);
}

PackedBatch pack_sequences(const LmConfig& config, std::span<const std::vector<int>> sequences) {
  PackedBatch b;
  b.offsets.push_back(0);
  for (const auto& seq : sequences) {
    if (seq.empty()) throw InvalidArgument("pack_sequences: empty sequence");
    if (seq.size() > static_cast<std::size_t>(config.context_length))
      throw InvalidArgument("pack_sequences: sequence of " + std::to_string(seq.size()) +
                            " tokens exceeds context length " +
                            std::to_string(config.context_length));
    const std::size_t start = b.inputs.size();
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (seq[t] < 0 || seq[t] >= config.vocab_size)
        throw InvalidArgument("token id " + std::to_string(seq[t]) + " outside vocab of " +
                              std::to_string(config.vocab_size));
      b.inputs.push_back(t == 0 ? Vocab::kBos : seq[t - 1]);
      b.targets.push_back(seq[t]);
      b.positions.push_back(t);
      b.segment_start.push_back(start);
    }
    b.offsets.push_back(b.inputs.size());
  }
  return b;
}

Tensor forward_logits(const ParamBinding& p, const LmConfig& c, std::span<const int> inputs,
                      std::span<const std::size_t> positions,
                      std::span<const std::size_t> segment_start) {
  std::vector<int> pos(positions.begin(), positions.end());
  for (int q : pos)
    if (q >= c.context_length) throw InvalidArgument("forward: position beyond context window");
  Tensor x = add(embedding(p["tok_emb"], inputs), embedding(p["pos_emb"], pos));
  const auto heads = static_cast<std::size_t>(c.num_heads);
  for (int l = 0; l < c.num_layers; ++l) {
    auto key = [l](const char* n) { return layer_key(l, n); };
    Tensor h = layer_norm(x, p[key("ln1.g")], p[key("ln1.b")]);
    Tensor att = causal_attention(matmul(h, p[key("attn.wq")]), matmul(h, p[key("attn.wk")]),
                                  matmul(h, p[key("attn.wv")]), heads, segment_start);
    x = add(x, add_row(matmul(att, p[key("attn.wo")]), p[key("attn.bo")]));
    h = layer_norm(x, p[key("ln2.g")], p[key("ln2.b")]);
    h = gelu(add_row(matmul(h, p[key("mlp.w1")]), p[key("mlp.b1")]));
    x = add(x, add_row(matmul(h, p[key("mlp.w2")]), p[key("mlp.b2")]));
  }
  x = layer_norm(x, p["ln_f.g"], p["ln_f.b"]);
  return matmul_nt(x, p["tok_emb"]);
}

Tensor forward_log_probs(const ParamBinding& p, const LmConfig& c, const PackedBatch& b) {
  Tensor logits = forward_logits(p, c, b.inputs, b.positions, b.segment_start);
  return pick(log_softmax_rows(logits), b.targets);
}

namespace {

std::vector<std::vector<int>> token_lists(std::span<const TokenSequence> xs) {
  std::vector<std::vector<int>> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(x.tokens);
  return out;
}

TokenLogProbs make_log_probs(std::span<const double> values) {
  TokenLogProbs r;
  r.per_token.assign(values.begin(), values.end());
  for (double v : r.per_token) r.sequence_total += v;
  return r;
}

}  // namespace

std::vector<double> token_log_probs_at(const LmConfig& config,
                                       const std::shared_ptr<const ParamLayout>& layout,
                                       std::span<const double> theta, std::span<const int> tokens) {
  NoGradGuard no_grad;
  const std::vector<std::vector<int>> seqs{std::vector<int>(tokens.begin(), tokens.end())};
  const auto batch = pack_sequences(config, seqs);
  ParamBinding binding(theta, layout, false);
  Tensor lp = forward_log_probs(binding, config, batch);
  return {lp.values().begin(), lp.values().end()};
}

std::vector<std::vector<double>> token_log_prob_gradients_at(
    const LmConfig& config, const std::shared_ptr<const ParamLayout>& layout,
    std::span<const double> theta, std::span<const int> tokens) {
  const std::vector<std::vector<int>> seqs{std::vector<int>(tokens.begin(), tokens.end())};
  const auto batch = pack_sequences(config, seqs);
  ParamBinding binding(theta, layout, true);
  Tensor lp = forward_log_probs(binding, config, batch);
  Backprop bp(lp);
  std::vector<std::vector<double>> grads;
  grads.reserve(lp.size());
  for (std::size_t t = 0; t < lp.size(); ++t) {
    try {
      bp.run_one_hot(t);
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("gradient of position " + std::to_string(t + 1) + ": " + e.what());
    }
    grads.push_back(std::move(binding.gradient().values));
  }
  return grads;
}

TokenLogProbs token_log_probs(const LanguageModel& model, const TokenSequence& x) {
  return make_log_probs(token_log_probs_at(model.config, model.params.layout, model.params.values, x.tokens));
}

std::vector<TokenLogProbs> token_log_probs_batched(const LanguageModel& model,
                                                   std::span<const TokenSequence> xs) {
  NoGradGuard no_grad;
  const auto lists = token_lists(xs);
  const auto batch = pack_sequences(model.config, lists);
  ParamBinding binding(model.params, false);
  Tensor lp = forward_log_probs(binding, model.config, batch);
  std::vector<TokenLogProbs> out;
  for (std::size_t i = 0; i < xs.size(); ++i)
    out.push_back(make_log_probs(lp.values().subspan(batch.offsets[i], batch.offsets[i + 1] - batch.offsets[i])));
  return out;
}

std::vector<std::vector<double>> teacher_forced_logits(const LanguageModel& model,
                                                       std::span<const int> tokens) {
  NoGradGuard no_grad;
  const std::vector<std::vector<int>> seqs{std::vector<int>(tokens.begin(), tokens.end())};
  const auto batch = pack_sequences(model.config, seqs);
  ParamBinding binding(model.params, false);
  Tensor logits = forward_logits(binding, model.config, batch.inputs, batch.positions, batch.segment_start);
  const std::size_t V = logits.cols();
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < logits.rows(); ++r)
    rows.emplace_back(logits.values().begin() + static_cast<std::ptrdiff_t>(r * V),
                      logits.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * V));
  return rows;
}

std::vector<double> next_token_logits(const LanguageModel& model, std::span<const int> prefix) {
  NoGradGuard no_grad;
  const std::size_t n = prefix.size() + 1;
  if (n > static_cast<std::size_t>(model.config.context_length))
    throw InvalidArgument("next_token_logits: prefix fills the context window");
  std::vector<int> inputs{Vocab::kBos};
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  for (int id : inputs)
    if (id < 0 || id >= model.config.vocab_size)
      throw InvalidArgument("next_token_logits: token id " + std::to_string(id) + " outside vocab");
  std::vector<std::size_t> positions(n), starts(n, 0);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  ParamBinding binding(model.params, false);
  Tensor logits = forward_logits(binding, model.config, inputs, positions, starts);
  const std::size_t V = logits.cols();
  return {logits.values().begin() + static_cast<std::ptrdiff_t>((n - 1) * V), logits.values().end()};
}

int argmax_token(std::span<const double> logits) {
  if (logits.empty()) throw InvalidArgument("argmax_token: empty logits");
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<int> greedy_continuation(const LanguageModel& model, std::span<const int> prefix,
                                     std::size_t max_new) {
  std::vector<int> seq(prefix.begin(), prefix.end());
  std::vector<int> generated;
  const auto window = static_cast<std::size_t>(model.config.context_length);
  while (generated.size() < max_new && seq.size() + 1 <= window) {
    const int next = argmax_token(next_token_logits(model, seq));
    if (next == Vocab::kEos) break;
    generated.push_back(next);
    seq.push_back(next);
  }
  return generated;
}

TokenSequence greedy_decode(const LanguageModel& model, const TokenSequence& prefix,
                            std::size_t max_new) {
  if (prefix.tokens.empty()) throw InvalidArgument("greedy_decode: prefix must be non-empty");
  TokenSequence out = prefix;
  const auto cont = greedy_continuation(model, prefix.tokens, max_new);
  out.tokens.insert(out.tokens.end(), cont.begin(), cont.end());
  out.text.clear();
  return out;
}

double mean_nll(const LanguageModel& model, std::span<const TokenSequence> xs) {
  if (xs.empty()) throw InvalidArgument("mean_nll: no sequences");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& lp : token_log_probs_batched(model, xs)) {
    total -= lp.sequence_total;
    count += lp.per_token.size();
  }
  return total / static_cast<double>(count);
}

TrainResult continue_training(LanguageModel model, const std::vector<TokenSequence>& stream,
                              const OptimizerConfig& opt) {
  opt.validate();
  if (stream.empty()) throw InvalidArgument("train: empty corpus");
  for (const auto& s : stream)
    for (int id : s.tokens)
      if (id < 0 || id >= model.config.vocab_size)
        throw InvalidArgument("train: sample " + std::to_string(s.sample_id) + " has token id " +
                              std::to_string(id) + " outside vocab");
  TrainResult result;
  const std::size_t n = stream.size();
  const auto bs = static_cast<std::size_t>(opt.batch_size);
  const std::size_t batches_per_epoch = (n + bs - 1) / bs;
  const double total_steps = static_cast<double>(batches_per_epoch) * opt.epochs;
  std::size_t global_step = 0;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    CounterRng rng(derive_seed(opt.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      std::vector<std::vector<int>> seqs;
      for (std::size_t i = b0; i < std::min(n, b0 + bs); ++i) seqs.push_back(stream[order[i]].tokens);
      const auto batch = pack_sequences(model.config, seqs);
      ParamBinding binding(model.params);
      ValueAndGradient vg;
      try {
        Tensor lp = forward_log_probs(binding, model.config, batch);
        Tensor loss = scale(sum(lp), -1.0 / static_cast<double>(lp.size()));
        vg = forward_backward(loss, binding);
      } catch (const NumericalFailure& e) {
        throw NumericalFailure("training diverged at step " + std::to_string(global_step) +
                               " (epoch " + std::to_string(epoch) + "): " + e.what());
      }
      if (!std::isfinite(vg.value))
        throw NumericalFailure("training diverged at step " + std::to_string(global_step));
      auto& g = vg.gradient.values;
      if (opt.grad_clip > 0.0) {
        const double norm = l2_norm(g);
        if (norm > opt.grad_clip)
          for (double& x : g) x *= opt.grad_clip / norm;
      }
      double lr = opt.learning_rate;
      if (opt.cosine_decay && total_steps > 1) {
        const double progress = static_cast<double>(global_step) / (total_steps - 1);
        lr *= 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      }
      adamw_step(model.params, model.training_state, g, opt, lr);
      epoch_nll += vg.value * static_cast<double>(batch.targets.size());
      epoch_tokens += batch.targets.size();
      ++global_step;
    }
    result.epoch_loss.push_back(epoch_nll / static_cast<double>(epoch_tokens));
  }
  result.model = std::move(model);
  return result;
}

TrainResult train(const std::vector<TokenSequence>& stream, const LmConfig& config,
                  const OptimizerConfig& optimizer) {
  if (stream.empty()) throw InvalidArgument("train: empty corpus");
  return continue_training(init_model(config), stream, optimizer);
}

TrainResult train(const Corpus& corpus, const LmConfig& config, const OptimizerConfig& optimizer) {
  return train(corpus.training_stream(), config, optimizer);
}

// ---- checkpoints -----------------------------------------------------------

json to_json(const LmConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"context_length", c.context_length},
          {"embed_dim", c.embed_dim},   {"num_layers", c.num_layers},
          {"num_heads", c.num_heads},   {"mlp_ratio", c.mlp_ratio},
          {"seed", c.seed}};
}

LmConfig lm_config_from_json(const json& j) {
  LmConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.context_length = j.value("context_length", c.context_length);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.seed = j.value("seed", c.seed);
  return c;
}

json to_json(const OptimizerConfig& o) {
  return {{"learning_rate", o.learning_rate}, {"beta1", o.beta1},
          {"beta2", o.beta2},                 {"epsilon", o.epsilon},
          {"weight_decay", o.weight_decay},   {"epochs", o.epochs},
          {"batch_size", o.batch_size},       {"grad_clip", o.grad_clip},
          {"cosine_decay", o.cosine_decay},   {"seed", o.seed}};
}

OptimizerConfig optimizer_config_from_json(const json& j) {
  OptimizerConfig o;
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  o.beta1 = j.value("beta1", o.beta1);
  o.beta2 = j.value("beta2", o.beta2);
  o.epsilon = j.value("epsilon", o.epsilon);
  o.weight_decay = j.value("weight_decay", o.weight_decay);
  o.epochs = j.value("epochs", o.epochs);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.grad_clip = j.value("grad_clip", o.grad_clip);
  o.cosine_decay = j.value("cosine_decay", o.cosine_decay);
  o.seed = j.value("seed", o.seed);
  return o;
}

namespace {

constexpr char kMagic[8] = {'F', 'B', 'C', 'K', 'P', 'T', '\n', '\0'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_doubles(std::string& out, std::span<const double> xs) {
  for (double x : xs) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

std::string crc_hex(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  std::ostringstream os;
  os << std::hex;
  os.width(8);
  os.fill('0');
  os << crc;
  return os.str();
}

}  // namespace

void save_checkpoint(const LanguageModel& model, const std::filesystem::path& path) {
  const std::size_t d = model.params.dimension();
  const bool moments = model.training_state.m.size() == d && model.training_state.v.size() == d;
  std::string payload;
  payload.reserve(d * 8 * (moments ? 3 : 1));
  put_doubles(payload, model.params.values);
  if (moments) {
    put_doubles(payload, model.training_state.m);
    put_doubles(payload, model.training_state.v);
  }
  json layout = json::array();
  for (const auto& s : model.params.layout->segments())
    layout.push_back({{"name", s.name}, {"offset", s.offset}, {"shape", s.shape}});
  const json header = {{"format_version", kCheckpointFormatVersion},
                       {"config", to_json(model.config)},
                       {"layout", layout},
                       {"param_count", d},
                       {"optimizer", {{"step", model.training_state.step}, {"moments", moments}}},
                       {"payload_bytes", payload.size()},
                       {"checksum", crc_hex(payload)}};
  const std::string header_text = header.dump();
  std::string blob(kMagic, sizeof kMagic);
  put_u64(blob, header_text.size());
  blob += header_text;
  blob += payload;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("save_checkpoint: cannot open " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw InvalidArgument("save_checkpoint: write failed for " + path.string());
}

LanguageModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("load_checkpoint: cannot open " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) {
    return LoadError("load_checkpoint: " + path.string() + ": " + why);
  };
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0)
    throw fail("not a checkpoint file");
  const std::uint64_t header_len = get_u64(blob.data() + 8);
  if (header_len > blob.size() - 16) throw fail("truncated header");
  json header;
  try {
    header = json::parse(blob.substr(16, header_len));
  } catch (const std::exception& e) {
    throw fail(std::string("corrupt header: ") + e.what());
  }
  LanguageModel model;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw fail("format version " + std::to_string(version) + ", expected " +
                 std::to_string(kCheckpointFormatVersion));
    model.config = lm_config_from_json(header.at("config"));
    model.params = ParamVector(make_layout(model.config));
    const auto& layout = header.at("layout");
    const auto& segs = model.params.layout->segments();
    if (layout.size() != segs.size()) throw fail("layout does not match config");
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (layout[i].at("name").get<std::string>() != segs[i].name ||
          layout[i].at("offset").get<std::size_t>() != segs[i].offset ||
          layout[i].at("shape").get<Shape>() != segs[i].shape)
        throw fail("layout does not match config at segment " + segs[i].name);
    }
    const std::string payload = blob.substr(16 + header_len);
    if (payload.size() != header.at("payload_bytes").get<std::size_t>())
      throw fail("payload length mismatch");
    if (crc_hex(payload) != header.at("checksum").get<std::string>()) throw fail("checksum mismatch");
    const std::size_t d = model.params.dimension();
    const bool moments = header.at("optimizer").at("moments").get<bool>();
    if (payload.size() != d * 8 * (moments ? 3 : 1)) throw fail("payload size does not match layout");
    auto read = [&](std::size_t block, std::vector<double>& dst) {
      dst.resize(d);
      for (std::size_t i = 0; i < d; ++i)
        dst[i] = std::bit_cast<double>(get_u64(payload.data() + (block * d + i) * 8));
    };
    read(0, model.params.values);
    if (moments) {
      read(1, model.training_state.m);
      read(2, model.training_state.v);
    }
    model.training_state.step = header.at("optimizer").at("step").get<std::int64_t>();
  } catch (const LoadError&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  return model;
}

}  // namespace fb
