#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mtssl/core_math.hpp"
#include "mtssl/rng.hpp"

namespace mtssl {

enum class Modality { signal, tokens };

Modality parse_modality(std::string_view name);
std::string_view to_string(Modality modality);

struct SignalSequence {
  std::vector<double> frames;
  std::uint32_t sample_rate = 16000;

  void validate() const;
  friend bool operator==(const SignalSequence&, const SignalSequence&) = default;
};

struct TokenSequence {
  std::vector<std::uint32_t> tokens;
  std::uint32_t vocab_size = 0;

  void validate() const;
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// token -> interchangeable tokens. Tokens without an entry have no synonyms.
struct SynonymLexicon {
  std::vector<std::vector<std::uint32_t>> synonyms;

  std::span<const std::uint32_t> of(std::uint32_t token) const;
  void validate(std::uint32_t vocab_size) const;
  friend bool operator==(const SynonymLexicon&, const SynonymLexicon&) = default;
};

// Fixed vocab_size x dim embedding matrix, reproducible from its seed.
struct EmbeddingTable {
  std::uint64_t seed = 0;
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  static EmbeddingTable generate(std::uint64_t seed, std::size_t rows, std::size_t dim);
  static EmbeddingTable from_rows(const std::vector<std::vector<double>>& rows);

  std::span<const double> row(std::uint32_t token) const { return {values.data() + token * dim, dim}; }
  double cosine(std::uint32_t a, std::uint32_t b) const;
  // The n tokens most cosine-similar to `token`, excluding itself; ties go to the lower index.
  std::vector<std::uint32_t> nearest(std::uint32_t token, std::size_t n) const;

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

enum class AugmentKind {
  identity,
  // signal
  flip,
  time_mask,
  pitch_shift,
  gaussian_noise,
  // tokens
  swap,
  remove,  // "delete"
  synonym,
  contextual,
};

AugmentKind parse_augment_kind(std::string_view name);
std::string_view to_string(AugmentKind kind);
// identity applies to both modalities.
bool applies_to(AugmentKind kind, Modality modality);
// gaussian_noise and contextual are the strong operators; everything else is weak.
bool is_strong(AugmentKind kind);

struct SignalAugmentParams {
  std::size_t flip_max_frames = 100000;  // 6.25 s at 16 kHz
  std::size_t time_mask_max_frames = 30000;
  int pitch_max_steps = 4;  // semitones
  double noise_scale = 0.05;
};

struct TokenAugmentParams {
  std::size_t swap_count = 1;
  double delete_prob = 0.1;
  double synonym_prob = 0.15;
  double contextual_prob = 0.15;
  std::size_t contextual_neighbors = 5;
};

// Deterministic building blocks of the random operators.
SignalSequence flip_segment(const SignalSequence& seq, std::size_t start, std::size_t length);
SignalSequence mask_segment(const SignalSequence& seq, std::size_t start, std::size_t length);
// Linear-interpolation resampling by 2^(steps/12), truncated or zero-padded to the input length.
SignalSequence pitch_shift(const SignalSequence& seq, int steps);
SignalSequence add_gaussian_noise(const SignalSequence& seq, double scale, Rng& rng);

SignalSequence augment_signal(const SignalSequence& seq, AugmentKind kind, const SignalAugmentParams& params,
                              Rng& rng);

TokenSequence augment_tokens(const TokenSequence& seq, AugmentKind kind, const TokenAugmentParams& params,
                             const SynonymLexicon& lexicon, const EmbeddingTable& table, Rng& rng);

// Per-span mean, standard deviation, min and max over `bins` equal spans (4 * bins values).
FeatureVector featurize_signal(const SignalSequence& seq, std::size_t bins);

// Mean embedding row followed by length / max_length (table.dim + 1 values).
FeatureVector featurize_tokens(const TokenSequence& seq, const EmbeddingTable& table, std::size_t max_length);

}  // namespace mtssl
