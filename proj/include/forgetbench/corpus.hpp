#ifndef FORGETBENCH_CORPUS_HPP
#define FORGETBENCH_CORPUS_HPP

// Synthetic character-level corpora with constructed sample characteristics.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fb {

enum class Tier { low, high };
std::string_view to_string(Tier t);
Tier tier_from_string(std::string_view s);

struct SampleLabels {
  Tier frequency = Tier::low;
  Tier complexity = Tier::low;
  bool rare_token = false;
  int replication_count = 1;
  /// Attached after training: mean token probability above the corpus average.
  std::optional<Tier> generation_probability;

  bool operator==(const SampleLabels&) const = default;
};

struct TokenSequence {
  std::size_t sample_id = 0;
  std::vector<int> tokens;
  std::string text;
  SampleLabels labels;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// Character <-> id table. Id 0 is EOS, id 1 is BOS, the rest are characters.
class Vocab {
 public:
  static constexpr int kEos = 0;
  static constexpr int kBos = 1;

  Vocab() = default;
  /// Characters must be unique; `rare` lists the reserved rare-token characters.
  Vocab(std::string chars, std::string rare);
  static Vocab standard();

  std::size_t size() const { return chars_.size() + 2; }
  const std::string& characters() const { return chars_; }
  const std::string& rare_characters() const { return rare_; }
  bool contains(char c) const;
  bool is_rare(int id) const;

  /// Plain characters only; no BOS/EOS framing is added.
  std::vector<int> tokenize(std::string_view text) const;
  /// Drops BOS/EOS markers.
  std::string detokenize(std::span<const int> tokens) const;

  bool operator==(const Vocab&) const = default;

 private:
  std::string chars_;
  std::string rare_;
};

struct TierCell {
  Tier frequency = Tier::low;
  Tier complexity = Tier::low;
  bool rare_token = false;
  int count = 0;
};

struct CorpusSpec {
  std::vector<TierCell> cells;
  /// Copies of each high-frequency sample in the training stream.
  int high_replication = 5;
  /// Minimum reserved rare characters injected into rare-tier samples.
  int rare_min = 3;
  double forget_fraction = 0.1;
  /// Extra never-trained samples used as non-members and utility hold-out.
  int heldout_count = 20;

  /// 200 training samples: every tier has >= 30 members.
  static CorpusSpec standard();
};

struct Corpus {
  Vocab vocab;
  std::vector<TokenSequence> forget;
  std::vector<TokenSequence> retain;
  std::vector<TokenSequence> heldout;
  CorpusSpec spec;
  std::uint64_t seed = 0;

  /// forget followed by retain, sorted by sample id.
  std::vector<TokenSequence> training_samples() const;
  /// Every training sample repeated replication_count times, in sample order.
  std::vector<TokenSequence> training_stream() const;
  const TokenSequence& find(std::size_t sample_id) const;
};

Corpus generate_corpus(const CorpusSpec& spec, std::uint64_t seed, const Vocab& vocab = Vocab::standard());

struct ForgetRetainSplit {
  std::vector<TokenSequence> forget;
  std::vector<TokenSequence> retain;
};

/// ceil(fraction * N) samples go to forget; both halves keep input order.
ForgetRetainSplit split_forget_retain(const std::vector<TokenSequence>& samples,
                                      double forget_fraction, std::uint64_t seed);

inline constexpr int kCorpusSchemaVersion = 1;

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

nlohmann::json to_json(const CorpusSpec& spec);
CorpusSpec corpus_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TokenSequence& s);
TokenSequence token_sequence_from_json(const nlohmann::json& j);

}  // namespace fb

#endif  // FORGETBENCH_CORPUS_HPP
