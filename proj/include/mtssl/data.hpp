#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mtssl/augment.hpp"
#include "mtssl/config.hpp"
#include "mtssl/rng.hpp"

namespace mtssl {

std::vector<std::string> default_emotion_labels();
std::vector<std::string> default_intent_labels();

struct Sample {
  std::string id;
  Modality modality = Modality::signal;
  std::variant<SignalSequence, TokenSequence> payload;
  std::optional<std::size_t> emotion;
  std::optional<std::size_t> intent;

  bool labelled() const { return emotion.has_value() && intent.has_value(); }
  const SignalSequence& signal() const { return std::get<SignalSequence>(payload); }
  const TokenSequence& tokens() const { return std::get<TokenSequence>(payload); }

  friend bool operator==(const Sample&, const Sample&) = default;
};

// Labelled samples carry both labels, unlabelled ones neither. Ids are unique
// per modality; a paired corpus stores one signal and one token record under
// the same id.
struct Corpus {
  std::vector<Sample> labelled;
  std::vector<Sample> unlabelled;
  std::vector<std::string> emotion_labels = default_emotion_labels();
  std::vector<std::string> intent_labels = default_intent_labels();
  std::uint32_t vocab_size = 0;
  std::size_t max_token_length = 1;
  SynonymLexicon lexicon;
  EmbeddingTable embedding;

  std::size_t emo_classes() const { return emotion_labels.size(); }
  std::size_t intent_classes() const { return intent_labels.size(); }

  void validate() const;
  // Copy holding only the samples of one modality.
  Corpus only(Modality modality) const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Line-delimited JSON: one header object, then one object per sample.
void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

struct SplitSpec {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
  std::vector<std::string> warnings;
};

// Stratifies on the joint (emotion, intent) class. Per joint class the valid
// and test counts are the rounded proportional targets and train takes the rest.
SplitIndices stratified_split(std::span<const std::pair<std::size_t, std::size_t>> joint_labels,
                              const SplitSpec& spec);

struct SampleSplit {
  std::vector<Sample> train;
  std::vector<Sample> valid;
  std::vector<Sample> test;
  std::vector<std::string> warnings;
};

SampleSplit stratified_split(std::span<const Sample> samples, const SplitSpec& spec);

enum class CorpusModality { signal, tokens, paired };

struct GeneratorConfig {
  std::vector<std::size_t> emotion_counts = {402, 406, 399, 498, 1096, 403, 406};
  // Empty: intent derived from emotion through the correlation coupling.
  std::vector<std::size_t> intent_counts = {343, 377, 348, 314, 912, 536, 421, 359};
  std::size_t unlabelled_count = 5000;
  std::size_t min_length = 96;
  std::size_t max_length = 160;
  double separation = 1.0;
  double correlation = 0.5;
  double signal_noise = 1.0;
  std::uint32_t sample_rate = 16000;
  std::uint32_t vocab_size = 240;
  std::size_t embedding_dim = 16;
  std::size_t topic_size = 8;
  CorpusModality modality = CorpusModality::signal;
  std::uint64_t seed = 0;

  void validate() const;
  // Returns false for keys it does not own.
  bool apply(const ConfigEntry& entry);
};

GeneratorConfig generator_config_from(std::span<const ConfigEntry> entries);

Corpus synthesize_corpus(const GeneratorConfig& config);

struct BatchIndices {
  std::vector<std::size_t> labelled;
  std::vector<std::size_t> unlabelled;
};

// Epoch iterator: the labelled pool is reshuffled each epoch and consumed once;
// each step draws round(ratio * labelled_batch) distinct unlabelled indices.
// Labelled and unlabelled draws come from independent streams.
class BatchStream {
 public:
  BatchStream(std::size_t labelled_count, std::size_t unlabelled_count, std::size_t labelled_batch,
              double unlabelled_ratio, std::uint64_t seed);

  std::size_t steps_per_epoch() const;
  std::size_t unlabelled_batch() const { return unlabelled_batch_; }
  std::vector<BatchIndices> next_epoch();

 private:
  std::size_t labelled_batch_;
  std::size_t unlabelled_batch_;
  std::vector<std::size_t> labelled_order_;
  std::vector<std::size_t> unlabelled_pool_;
  Rng labelled_rng_;
  Rng unlabelled_rng_;
};

}  // namespace mtssl
