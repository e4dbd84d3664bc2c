#include "mtssl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mtssl/error.hpp"

namespace mtssl {

Modality parse_modality(std::string_view name) {
  if (name == "signal") return Modality::signal;
  if (name == "tokens") return Modality::tokens;
  throw ConfigError("unknown modality '" + std::string(name) + "' (expected signal|tokens)");
}

std::string_view to_string(Modality modality) { return modality == Modality::signal ? "signal" : "tokens"; }

void SignalSequence::validate() const {
  if (frames.empty()) throw ContractError("signal sequence is empty");
  if (sample_rate == 0) throw ContractError("signal sample rate must be positive");
  for (double f : frames) {
    if (!std::isfinite(f)) throw ContractError("signal sequence holds a non-finite frame");
  }
}

void TokenSequence::validate() const {
  if (tokens.empty()) throw ContractError("token sequence is empty");
  for (auto t : tokens) {
    if (t >= vocab_size) throw ContractError("token " + std::to_string(t) + " outside vocabulary");
  }
}

std::span<const std::uint32_t> SynonymLexicon::of(std::uint32_t token) const {
  if (token >= synonyms.size()) return {};
  return synonyms[token];
}

void SynonymLexicon::validate(std::uint32_t vocab_size) const {
  if (synonyms.size() > vocab_size) throw ContractError("lexicon has entries past the vocabulary");
  for (const auto& list : synonyms) {
    for (auto t : list) {
      if (t >= vocab_size) throw ContractError("lexicon maps to token " + std::to_string(t) + " outside vocabulary");
    }
  }
}

EmbeddingTable EmbeddingTable::generate(std::uint64_t seed, std::size_t rows, std::size_t dim) {
  EmbeddingTable table{seed, rows, dim, std::vector<double>(rows * dim)};
  Rng rng(seed);
  for (double& v : table.values) v = rng.normal();
  return table;
}

EmbeddingTable EmbeddingTable::from_rows(const std::vector<std::vector<double>>& rows) {
  EmbeddingTable table;
  table.rows = rows.size();
  table.dim = rows.empty() ? 0 : rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != table.dim) throw ContractError("embedding rows differ in width");
    table.values.insert(table.values.end(), r.begin(), r.end());
  }
  return table;
}

double EmbeddingTable::cosine(std::uint32_t a, std::uint32_t b) const {
  const auto ra = row(a);
  const auto rb = row(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    dot += ra[i] * rb[i];
    na += ra[i] * ra[i];
    nb += rb[i] * rb[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::vector<std::uint32_t> EmbeddingTable::nearest(std::uint32_t token, std::size_t n) const {
  if (token >= rows) throw ContractError("nearest: token outside the embedding table");
  std::vector<std::pair<double, std::uint32_t>> scored;
  scored.reserve(rows);
  for (std::uint32_t t = 0; t < rows; ++t) {
    if (t != token) scored.emplace_back(cosine(token, t), t);
  }
  n = std::min(n, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = scored[i].second;
  return out;
}

AugmentKind parse_augment_kind(std::string_view name) {
  if (name == "identity" || name == "none") return AugmentKind::identity;
  if (name == "flip") return AugmentKind::flip;
  if (name == "time_mask") return AugmentKind::time_mask;
  if (name == "pitch_shift") return AugmentKind::pitch_shift;
  if (name == "gaussian_noise") return AugmentKind::gaussian_noise;
  if (name == "swap") return AugmentKind::swap;
  if (name == "delete") return AugmentKind::remove;
  if (name == "synonym") return AugmentKind::synonym;
  if (name == "contextual") return AugmentKind::contextual;
  throw ConfigError("unknown augmentation '" + std::string(name) + "'");
}

std::string_view to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::identity: return "identity";
    case AugmentKind::flip: return "flip";
    case AugmentKind::time_mask: return "time_mask";
    case AugmentKind::pitch_shift: return "pitch_shift";
    case AugmentKind::gaussian_noise: return "gaussian_noise";
    case AugmentKind::swap: return "swap";
    case AugmentKind::remove: return "delete";
    case AugmentKind::synonym: return "synonym";
    case AugmentKind::contextual: return "contextual";
  }
  return "?";
}

bool applies_to(AugmentKind kind, Modality modality) {
  switch (kind) {
    case AugmentKind::identity: return true;
    case AugmentKind::flip:
    case AugmentKind::time_mask:
    case AugmentKind::pitch_shift:
    case AugmentKind::gaussian_noise: return modality == Modality::signal;
    case AugmentKind::swap:
    case AugmentKind::remove:
    case AugmentKind::synonym:
    case AugmentKind::contextual: return modality == Modality::tokens;
  }
  return false;
}

bool is_strong(AugmentKind kind) { return kind == AugmentKind::gaussian_noise || kind == AugmentKind::contextual; }

SignalSequence flip_segment(const SignalSequence& seq, std::size_t start, std::size_t length) {
  if (start + length > seq.frames.size()) throw ContractError("flip segment exceeds the sequence");
  SignalSequence out = seq;
  std::reverse(out.frames.begin() + static_cast<std::ptrdiff_t>(start),
               out.frames.begin() + static_cast<std::ptrdiff_t>(start + length));
  return out;
}

SignalSequence mask_segment(const SignalSequence& seq, std::size_t start, std::size_t length) {
  if (start + length > seq.frames.size()) throw ContractError("mask segment exceeds the sequence");
  SignalSequence out = seq;
  std::fill_n(out.frames.begin() + static_cast<std::ptrdiff_t>(start), length, 0.0);
  return out;
}

SignalSequence pitch_shift(const SignalSequence& seq, int steps) {
  const double factor = std::exp2(static_cast<double>(steps) / 12.0);
  const std::size_t n = seq.frames.size();
  SignalSequence out{std::vector<double>(n, 0.0), seq.sample_rate};
  const double last = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) * factor;
    if (pos > last) break;
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const double hi_value = lo + 1 < n ? seq.frames[lo + 1] : seq.frames[lo];
    out.frames[i] = seq.frames[lo] + frac * (hi_value - seq.frames[lo]);
  }
  return out;
}

SignalSequence add_gaussian_noise(const SignalSequence& seq, double scale, Rng& rng) {
  SignalSequence out = seq;
  if (scale == 0.0) return out;
  for (double& f : out.frames) f += scale * rng.normal();
  return out;
}

namespace {

// Uniform length in [1, min(max_len, n)] and uniform start.
std::pair<std::size_t, std::size_t> random_span(std::size_t n, std::size_t max_len, Rng& rng) {
  const std::size_t cap = std::max<std::size_t>(1, std::min(max_len, n));
  const auto length = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(cap)));
  const auto start = static_cast<std::size_t>(rng.index(n - length + 1));
  return {start, length};
}

}  // namespace

SignalSequence augment_signal(const SignalSequence& seq, AugmentKind kind, const SignalAugmentParams& params,
                              Rng& rng) {
  if (!applies_to(kind, Modality::signal)) {
    throw ConfigError("augmentation '" + std::string(to_string(kind)) + "' does not apply to signals");
  }
  switch (kind) {
    case AugmentKind::identity: return seq;
    case AugmentKind::flip: {
      const auto [start, length] = random_span(seq.frames.size(), params.flip_max_frames, rng);
      return flip_segment(seq, start, length);
    }
    case AugmentKind::time_mask: {
      const auto [start, length] = random_span(seq.frames.size(), params.time_mask_max_frames, rng);
      return mask_segment(seq, start, length);
    }
    case AugmentKind::pitch_shift: {
      if (params.pitch_max_steps < 1) return seq;
      // s drawn uniformly from [-max, max] without zero
      auto s = static_cast<int>(rng.integer(1, 2 * params.pitch_max_steps));
      s = s <= params.pitch_max_steps ? -s : s - params.pitch_max_steps;
      return pitch_shift(seq, s);
    }
    case AugmentKind::gaussian_noise: return add_gaussian_noise(seq, params.noise_scale, rng);
    default: break;
  }
  throw ConfigError("unsupported signal augmentation");
}

TokenSequence augment_tokens(const TokenSequence& seq, AugmentKind kind, const TokenAugmentParams& params,
                             const SynonymLexicon& lexicon, const EmbeddingTable& table, Rng& rng) {
  if (!applies_to(kind, Modality::tokens)) {
    throw ConfigError("augmentation '" + std::string(to_string(kind)) + "' does not apply to tokens");
  }
  TokenSequence out = seq;
  auto& tokens = out.tokens;
  switch (kind) {
    case AugmentKind::identity: return out;
    case AugmentKind::swap:
      if (tokens.size() < 2) return out;
      for (std::size_t i = 0; i < params.swap_count; ++i) {
        const auto at = static_cast<std::size_t>(rng.index(tokens.size() - 1));
        std::swap(tokens[at], tokens[at + 1]);
      }
      return out;
    case AugmentKind::remove: {
      std::vector<std::uint32_t> kept;
      for (auto t : seq.tokens) {
        if (!rng.bernoulli(params.delete_prob)) kept.push_back(t);
      }
      if (kept.empty()) kept.push_back(seq.tokens[static_cast<std::size_t>(rng.index(seq.tokens.size()))]);
      tokens = std::move(kept);
      return out;
    }
    case AugmentKind::synonym:
      for (auto& t : tokens) {
        if (!rng.bernoulli(params.synonym_prob)) continue;
        const auto options = lexicon.of(t);
        if (!options.empty()) t = options[static_cast<std::size_t>(rng.index(options.size()))];
      }
      return out;
    case AugmentKind::contextual:
      for (auto& t : tokens) {
        if (!rng.bernoulli(params.contextual_prob)) continue;
        const auto options = table.nearest(t, params.contextual_neighbors);
        if (!options.empty()) t = options[static_cast<std::size_t>(rng.index(options.size()))];
      }
      return out;
    default: break;
  }
  throw ConfigError("unsupported token augmentation");
}

FeatureVector featurize_signal(const SignalSequence& seq, std::size_t bins) {
  if (bins == 0) throw ContractError("featurize_signal: bins must be positive");
  const std::size_t n = seq.frames.size();
  FeatureVector out;
  out.reserve(4 * bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * n / bins;
    const std::size_t hi = (b + 1) * n / bins;
    if (hi <= lo) {
      out.insert(out.end(), {0.0, 0.0, 0.0, 0.0});
      continue;
    }
    const auto first = seq.frames.begin() + static_cast<std::ptrdiff_t>(lo);
    const auto last = seq.frames.begin() + static_cast<std::ptrdiff_t>(hi);
    const auto [mn, mx] = std::minmax_element(first, last);
    if (*mn == *mx) {
      // constant span: exact mean and zero spread
      out.insert(out.end(), {*mn, 0.0, *mn, *mx});
      continue;
    }
    const double count = static_cast<double>(hi - lo);
    const double mean = std::accumulate(first, last, 0.0) / count;
    double var = 0.0;
    for (auto it = first; it != last; ++it) var += (*it - mean) * (*it - mean);
    out.insert(out.end(), {mean, std::sqrt(var / count), *mn, *mx});
  }
  return out;
}

FeatureVector featurize_tokens(const TokenSequence& seq, const EmbeddingTable& table, std::size_t max_length) {
  if (seq.tokens.empty()) throw ContractError("featurize_tokens: empty sequence");
  if (max_length == 0) throw ContractError("featurize_tokens: max_length must be positive");
  FeatureVector out(table.dim + 1, 0.0);
  for (auto t : seq.tokens) {
    if (t >= table.rows) throw ContractError("featurize_tokens: token outside the embedding table");
    const auto r = table.row(t);
    for (std::size_t i = 0; i < table.dim; ++i) out[i] += r[i];
  }
  const double n = static_cast<double>(seq.tokens.size());
  for (std::size_t i = 0; i < table.dim; ++i) out[i] /= n;
  out[table.dim] = n / static_cast<double>(max_length);
  return out;
}

}  // namespace mtssl
