#include "forgetbench/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

#include "forgetbench/error.hpp"
#include "forgetbench/rng.hpp"

namespace fb {

using nlohmann::json;

std::string_view to_string(Tier t) { return t == Tier::high ? "high" : "low"; }

Tier tier_from_string(std::string_view s) {
  if (s == "high") return Tier::high;
  if (s == "low") return Tier::low;
  throw InvalidArgument("unknown tier '" + std::string(s) + "'");
}

Vocab::Vocab(std::string chars, std::string rare) : chars_(std::move(chars)), rare_(std::move(rare)) {
  std::set<char> seen;
  for (char c : chars_)
    if (!seen.insert(c).second) throw InvalidArgument(std::string("vocab: duplicate character '") + c + "'");
  for (char c : rare_)
    if (!seen.count(c)) throw InvalidArgument(std::string("vocab: rare character '") + c + "' not in vocab");
}

Vocab Vocab::standard() {
  return Vocab(" .,abcdefghijklmnopqrstuvwxyz#$%&*+@^~", "#$%&*+@^~");
}

bool Vocab::contains(char c) const { return chars_.find(c) != std::string::npos; }

bool Vocab::is_rare(int id) const {
  if (id < 2 || static_cast<std::size_t>(id) >= size()) return false;
  return rare_.find(chars_[id - 2]) != std::string::npos;
}

std::vector<int> Vocab::tokenize(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  std::string missing;
  for (char c : text) {
    const auto pos = chars_.find(c);
    if (pos == std::string::npos) {
      if (missing.find(c) == std::string::npos) missing += c;
      continue;
    }
    out.push_back(static_cast<int>(pos) + 2);
  }
  if (!missing.empty()) throw InvalidArgument("tokenize: characters outside vocab: '" + missing + "'");
  return out;
}

std::string Vocab::detokenize(std::span<const int> tokens) const {
  std::string out;
  out.reserve(tokens.size());
  for (int id : tokens) {
    if (id == kEos || id == kBos) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= size())
      throw InvalidArgument("detokenize: id " + std::to_string(id) + " outside vocab");
    out += chars_[id - 2];
  }
  return out;
}

CorpusSpec CorpusSpec::standard() {
  CorpusSpec s;
  s.cells = {
      {Tier::low, Tier::low, false, 40},  {Tier::low, Tier::high, false, 40},
      {Tier::high, Tier::low, false, 30}, {Tier::high, Tier::high, false, 30},
      {Tier::low, Tier::low, true, 30},   {Tier::low, Tier::high, true, 30},
  };
  return s;
}

namespace {

constexpr std::array kDeterminers{"the", "a", "my", "one", "his", "her"};
constexpr std::array kNouns{"cat", "dog", "owl", "fox", "hen", "cow", "pig", "rat",
                            "bee", "elk", "yak", "emu", "ram", "ant", "bat"};
constexpr std::array kVerbs{"saw", "met", "fed", "hid", "led", "got", "hit", "bit", "dug", "won"};
constexpr std::array kAdjectives{"red", "big", "old", "tiny", "shy", "odd",
                                 "wet", "sly", "calm", "dark", "bold", "pale"};
constexpr std::array kPrepositions{"near", "by", "under", "over", "past", "behind"};

template <std::size_t N>
std::string pick(CounterRng& rng, const std::array<const char*, N>& words) {
  return words[rng.below(N)];
}

std::string simple_sentence(CounterRng& rng) {
  return pick(rng, kDeterminers) + " " + pick(rng, kNouns) + " " + pick(rng, kVerbs) + " " +
         pick(rng, kDeterminers) + " " + pick(rng, kNouns) + ".";
}

// Relative clause plus a prepositional modifier: roughly 2.5x the simple form.
std::string nested_sentence(CounterRng& rng) {
  return pick(rng, kDeterminers) + " " + pick(rng, kAdjectives) + " " + pick(rng, kNouns) +
         " that " + pick(rng, kDeterminers) + " " + pick(rng, kNouns) + " " + pick(rng, kVerbs) +
         ", " + pick(rng, kVerbs) + " " + pick(rng, kDeterminers) + " " + pick(rng, kAdjectives) +
         " " + pick(rng, kNouns) + " " + pick(rng, kPrepositions) + " " + pick(rng, kDeterminers) +
         " " + pick(rng, kNouns) + ".";
}

std::string inject_rare(CounterRng& rng, std::string text, const std::string& rare, int count) {
  for (int i = 0; i < count; ++i) {
    const std::size_t pos = 1 + rng.below(text.size() - 1);
    text.insert(text.begin() + static_cast<std::ptrdiff_t>(pos), rare[rng.below(rare.size())]);
  }
  return text;
}

constexpr std::size_t kMaxLength = 63;

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec, std::uint64_t seed, const Vocab& vocab) {
  if (spec.cells.empty()) throw InvalidArgument("generate_corpus: spec has no tier cells");
  for (const auto& c : spec.cells)
    if (c.count < 1) throw InvalidArgument("generate_corpus: every tier cell needs count >= 1");
  if (spec.high_replication < 2)
    throw InvalidArgument("generate_corpus: high_replication must be >= 2");
  if (spec.heldout_count < 0) throw InvalidArgument("generate_corpus: negative heldout_count");
  const bool needs_rare = std::any_of(spec.cells.begin(), spec.cells.end(),
                                      [](const TierCell& c) { return c.rare_token; });
  if (needs_rare && static_cast<int>(vocab.rare_characters().size()) == 0)
    throw InvalidArgument("generate_corpus: rare-token tier requested but vocab has no rare characters");
  for (char c : std::string_view(" .,abcdefghijklmnopqrstuvwxyz"))
    if (!vocab.contains(c))
      throw InvalidArgument(std::string("generate_corpus: vocab lacks grammar character '") + c + "'");

  std::set<std::string> used;
  std::vector<TokenSequence> samples;
  std::size_t next_id = 0;
  auto make = [&](CounterRng& rng, Tier freq, Tier cx, bool rare) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      std::string text = cx == Tier::high ? nested_sentence(rng) : simple_sentence(rng);
      if (rare)
        text = inject_rare(rng, std::move(text), vocab.rare_characters(),
                           spec.rare_min + static_cast<int>(rng.below(2)));
      if (text.size() > kMaxLength || !used.insert(text).second) continue;
      TokenSequence s;
      s.sample_id = next_id++;
      s.tokens = vocab.tokenize(text);
      s.text = std::move(text);
      s.labels.frequency = freq;
      s.labels.complexity = cx;
      s.labels.rare_token = rare;
      s.labels.replication_count = freq == Tier::high ? spec.high_replication : 1;
      return s;
    }
    throw InvalidArgument("generate_corpus: grammar exhausted while drawing unique samples");
  };

  for (std::size_t ci = 0; ci < spec.cells.size(); ++ci) {
    const auto& cell = spec.cells[ci];
    CounterRng rng(derive_seed(seed, 1, ci));
    for (int i = 0; i < cell.count; ++i)
      samples.push_back(make(rng, cell.frequency, cell.complexity, cell.rare_token));
  }

  Corpus corpus;
  corpus.vocab = vocab;
  corpus.spec = spec;
  corpus.seed = seed;
  auto split = split_forget_retain(samples, spec.forget_fraction, derive_seed(seed, 2));
  corpus.forget = std::move(split.forget);
  corpus.retain = std::move(split.retain);

  CounterRng held_rng(derive_seed(seed, 3));
  for (int i = 0; i < spec.heldout_count; ++i) {
    const Tier cx = i % 2 ? Tier::high : Tier::low;
    corpus.heldout.push_back(make(held_rng, Tier::low, cx, false));
  }
  return corpus;
}

std::vector<TokenSequence> Corpus::training_samples() const {
  std::vector<TokenSequence> all = forget;
  all.insert(all.end(), retain.begin(), retain.end());
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  return all;
}

std::vector<TokenSequence> Corpus::training_stream() const {
  std::vector<TokenSequence> stream;
  for (const auto& s : training_samples())
    for (int r = 0; r < s.labels.replication_count; ++r) stream.push_back(s);
  return stream;
}

const TokenSequence& Corpus::find(std::size_t sample_id) const {
  for (const auto* split : {&forget, &retain, &heldout})
    for (const auto& s : *split)
      if (s.sample_id == sample_id) return s;
  throw InvalidArgument("corpus: no sample with id " + std::to_string(sample_id));
}

ForgetRetainSplit split_forget_retain(const std::vector<TokenSequence>& samples,
                                      double forget_fraction, std::uint64_t seed) {
  if (!(forget_fraction > 0.0 && forget_fraction < 1.0))
    throw InvalidArgument("split_forget_retain: fraction must lie in (0, 1)");
  const std::size_t n = samples.size();
  const auto n_forget = static_cast<std::size_t>(std::ceil(forget_fraction * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<bool> in_forget(n, false);
  for (std::size_t i = 0; i < n_forget && i < n; ++i) in_forget[order[i]] = true;
  ForgetRetainSplit out;
  for (std::size_t i = 0; i < n; ++i) (in_forget[i] ? out.forget : out.retain).push_back(samples[i]);
  return out;
}

json to_json(const CorpusSpec& spec) {
  json cells = json::array();
  for (const auto& c : spec.cells)
    cells.push_back({{"frequency", to_string(c.frequency)},
                     {"complexity", to_string(c.complexity)},
                     {"rare_token", c.rare_token},
                     {"count", c.count}});
  return {{"cells", cells},
          {"high_replication", spec.high_replication},
          {"rare_min", spec.rare_min},
          {"forget_fraction", spec.forget_fraction},
          {"heldout_count", spec.heldout_count}};
}

CorpusSpec corpus_spec_from_json(const json& j) {
  CorpusSpec spec;
  for (const auto& c : j.at("cells"))
    spec.cells.push_back({tier_from_string(c.at("frequency").get<std::string>()),
                          tier_from_string(c.at("complexity").get<std::string>()),
                          c.at("rare_token").get<bool>(), c.at("count").get<int>()});
  spec.high_replication = j.value("high_replication", spec.high_replication);
  spec.rare_min = j.value("rare_min", spec.rare_min);
  spec.forget_fraction = j.value("forget_fraction", spec.forget_fraction);
  spec.heldout_count = j.value("heldout_count", spec.heldout_count);
  return spec;
}

json to_json(const TokenSequence& s) {
  json labels = {{"frequency", to_string(s.labels.frequency)},
                 {"complexity", to_string(s.labels.complexity)},
                 {"rare_token", s.labels.rare_token},
                 {"replication_count", s.labels.replication_count}};
  if (s.labels.generation_probability)
    labels["generation_probability"] = to_string(*s.labels.generation_probability);
  return {{"sample_id", s.sample_id}, {"text", s.text}, {"tokens", s.tokens}, {"labels", labels}};
}

TokenSequence token_sequence_from_json(const json& j) {
  TokenSequence s;
  s.sample_id = j.at("sample_id").get<std::size_t>();
  s.text = j.at("text").get<std::string>();
  s.tokens = j.at("tokens").get<std::vector<int>>();
  const auto& l = j.at("labels");
  s.labels.frequency = tier_from_string(l.at("frequency").get<std::string>());
  s.labels.complexity = tier_from_string(l.at("complexity").get<std::string>());
  s.labels.rare_token = l.at("rare_token").get<bool>();
  s.labels.replication_count = l.at("replication_count").get<int>();
  if (l.contains("generation_probability"))
    s.labels.generation_probability = tier_from_string(l.at("generation_probability").get<std::string>());
  return s;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("save_corpus: cannot open " + path.string());
  json header = {{"record", "header"},
                 {"schema_version", kCorpusSchemaVersion},
                 {"vocab", corpus.vocab.characters()},
                 {"rare", corpus.vocab.rare_characters()},
                 {"spec", to_json(corpus.spec)},
                 {"seed", corpus.seed}};
  out << header.dump() << '\n';
  for (const auto& [name, split] :
       {std::pair{"forget", &corpus.forget}, {"retain", &corpus.retain}, {"heldout", &corpus.heldout}}) {
    for (const auto& s : *split) {
      json rec = to_json(s);
      rec["record"] = "sample";
      rec["split"] = name;
      out << rec.dump() << '\n';
    }
  }
  if (!out) throw InvalidArgument("save_corpus: write failed for " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("load_corpus: cannot open " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::set<std::size_t> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    try {
      const json rec = json::parse(line);
      const auto kind = rec.at("record").get<std::string>();
      if (kind == "header") {
        const int version = rec.at("schema_version").get<int>();
        if (version != kCorpusSchemaVersion)
          throw LoadError("schema version " + std::to_string(version) + ", expected " +
                          std::to_string(kCorpusSchemaVersion));
        corpus.vocab = Vocab(rec.at("vocab").get<std::string>(), rec.at("rare").get<std::string>());
        corpus.spec = corpus_spec_from_json(rec.at("spec"));
        corpus.seed = rec.at("seed").get<std::uint64_t>();
        have_header = true;
        continue;
      }
      if (kind != "sample") throw LoadError("unknown record kind '" + kind + "'");
      if (!have_header) throw LoadError("sample before header");
      TokenSequence s = token_sequence_from_json(rec);
      if (!ids.insert(s.sample_id).second)
        throw LoadError("duplicate sample id " + std::to_string(s.sample_id));
      if (corpus.vocab.tokenize(s.text) != s.tokens) throw LoadError("tokens do not match text");
      const auto split = rec.at("split").get<std::string>();
      if (split == "forget") corpus.forget.push_back(std::move(s));
      else if (split == "retain") corpus.retain.push_back(std::move(s));
      else if (split == "heldout") corpus.heldout.push_back(std::move(s));
      else throw LoadError("unknown split '" + split + "'");
    } catch (const LoadError& e) {
      throw LoadError(where + ": " + e.what());
    } catch (const std::exception& e) {
      throw LoadError(where + ": corrupt record: " + e.what());
    }
  }
  if (!have_header) throw LoadError("load_corpus: " + path.string() + " has no header record");
  return corpus;
}

}  // namespace fb
