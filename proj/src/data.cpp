#include "mtssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mtssl/error.hpp"
#include "mtssl/io.hpp"

namespace mtssl {

using nlohmann::json;

namespace {

constexpr const char* kCorpusFormat = "mtssl-corpus";
constexpr int kCorpusVersion = 1;

// Stream tags for Rng::derive.
constexpr std::uint64_t kTemplateStream = 1;
constexpr std::uint64_t kLabelStream = 2;
constexpr std::uint64_t kSampleStreamBase = 1'000'000;

}  // namespace

std::vector<std::string> default_emotion_labels() {
  return {"anger", "disgust", "fear", "happy", "neutral", "sad", "surprise"};
}

std::vector<std::string> default_intent_labels() {
  return {"acknowledging", "agreeing", "consoling", "encouraging",
          "neutral",       "questioning", "suggesting", "wishing"};
}

void Corpus::validate() const {
  if (emotion_labels.size() < 2 || intent_labels.size() < 2) {
    throw SchemaError("corpus needs at least two labels per task");
  }
  std::set<std::pair<Modality, std::string>> ids;
  auto check = [&](const Sample& s, bool want_labels) {
    if (!ids.insert({s.modality, s.id}).second) throw SchemaError("duplicate sample id '" + s.id + "'");
    if (s.emotion.has_value() != s.intent.has_value()) {
      throw SchemaError("sample '" + s.id + "' must carry both labels or neither");
    }
    if (s.labelled() != want_labels) {
      throw SchemaError("sample '" + s.id + (want_labels ? "' lacks labels" : "' should be unlabelled"));
    }
    if (s.emotion && *s.emotion >= emo_classes()) throw SchemaError("sample '" + s.id + "': emotion label out of range");
    if (s.intent && *s.intent >= intent_classes()) throw SchemaError("sample '" + s.id + "': intent label out of range");
    if (s.modality == Modality::signal) {
      if (!std::holds_alternative<SignalSequence>(s.payload)) throw SchemaError("sample '" + s.id + "': payload is not a signal");
      s.signal().validate();
    } else {
      if (!std::holds_alternative<TokenSequence>(s.payload)) throw SchemaError("sample '" + s.id + "': payload is not tokens");
      s.tokens().validate();
      if (s.tokens().vocab_size != vocab_size) throw SchemaError("sample '" + s.id + "': vocabulary size mismatch");
    }
  };
  for (const auto& s : labelled) check(s, true);
  for (const auto& s : unlabelled) check(s, false);
  lexicon.validate(vocab_size);
  if (vocab_size > 0 && embedding.rows != vocab_size) throw SchemaError("embedding rows differ from vocabulary size");
}

Corpus Corpus::only(Modality modality) const {
  Corpus out = *this;
  auto drop = [modality](std::vector<Sample>& v) {
    std::erase_if(v, [modality](const Sample& s) { return s.modality != modality; });
  };
  drop(out.labelled);
  drop(out.unlabelled);
  return out;
}

// ---- serialization --------------------------------------------------------

namespace {

json sample_to_json(const Sample& s) {
  json j;
  j["id"] = s.id;
  j["modality"] = std::string(to_string(s.modality));
  if (s.modality == Modality::signal) {
    j["payload"] = s.signal().frames;
    j["sample_rate"] = s.signal().sample_rate;
  } else {
    j["payload"] = s.tokens().tokens;
    j["vocab_size"] = s.tokens().vocab_size;
  }
  if (s.emotion) j["emotion"] = *s.emotion;
  if (s.intent) j["intent"] = *s.intent;
  return j;
}

template <typename T>
T field(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'", line);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParseError(std::string("field '") + key + "' has the wrong type", line);
  }
}

std::optional<std::size_t> label_field(const json& j, const char* key, std::size_t classes, std::size_t line) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const auto& v = j.at(key);
  if (!v.is_number_integer()) throw ParseError(std::string("field '") + key + "' must be an integer", line);
  const auto raw = v.get<long long>();
  if (raw < 0 || static_cast<std::size_t>(raw) >= classes) {
    throw SchemaError(std::string(key) + " label " + std::to_string(raw) + " out of range", line);
  }
  return static_cast<std::size_t>(raw);
}

Sample sample_from_json(const json& j, const Corpus& corpus, std::size_t line) {
  Sample s;
  s.id = field<std::string>(j, "id", line);
  try {
    s.modality = parse_modality(field<std::string>(j, "modality", line));
  } catch (const ConfigError& e) {
    throw ParseError(e.what(), line);
  }
  if (s.modality == Modality::signal) {
    SignalSequence seq{field<std::vector<double>>(j, "payload", line), field<std::uint32_t>(j, "sample_rate", line)};
    s.payload = std::move(seq);
  } else {
    TokenSequence seq{field<std::vector<std::uint32_t>>(j, "payload", line), field<std::uint32_t>(j, "vocab_size", line)};
    s.payload = std::move(seq);
  }
  s.emotion = label_field(j, "emotion", corpus.emo_classes(), line);
  s.intent = label_field(j, "intent", corpus.intent_classes(), line);
  if (s.emotion.has_value() != s.intent.has_value()) {
    throw SchemaError("labelled records need both emotion and intent", line);
  }
  try {
    if (s.modality == Modality::signal) {
      s.signal().validate();
    } else {
      s.tokens().validate();
    }
  } catch (const ContractError& e) {
    throw SchemaError(e.what(), line);
  }
  return s;
}

}  // namespace

void write_corpus(std::ostream& out, const Corpus& corpus) {
  json header;
  header["format"] = kCorpusFormat;
  header["version"] = kCorpusVersion;
  header["emotion_labels"] = corpus.emotion_labels;
  header["intent_labels"] = corpus.intent_labels;
  header["vocab_size"] = corpus.vocab_size;
  header["max_token_length"] = corpus.max_token_length;
  header["lexicon"] = corpus.lexicon.synonyms;
  json emb{{"seed", corpus.embedding.seed}, {"rows", corpus.embedding.rows}, {"dim", corpus.embedding.dim}};
  // Tables that are not the seeded default (e.g. hand-set) are stored verbatim.
  if (corpus.embedding.rows > 0 &&
      !(EmbeddingTable::generate(corpus.embedding.seed, corpus.embedding.rows, corpus.embedding.dim) == corpus.embedding)) {
    emb["values"] = corpus.embedding.values;
  }
  header["embedding"] = emb;
  out << header.dump() << '\n';
  for (const auto& s : corpus.labelled) out << sample_to_json(s).dump() << '\n';
  for (const auto& s : corpus.unlabelled) out << sample_to_json(s).dump() << '\n';
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("record is not an object", line_no);
    if (!have_header) {
      if (field<std::string>(j, "format", line_no) != kCorpusFormat) throw ParseError("not a corpus file", line_no);
      if (field<int>(j, "version", line_no) != kCorpusVersion) throw ParseError("unsupported corpus version", line_no);
      corpus.emotion_labels = field<std::vector<std::string>>(j, "emotion_labels", line_no);
      corpus.intent_labels = field<std::vector<std::string>>(j, "intent_labels", line_no);
      corpus.vocab_size = field<std::uint32_t>(j, "vocab_size", line_no);
      corpus.max_token_length = field<std::size_t>(j, "max_token_length", line_no);
      corpus.lexicon.synonyms = field<std::vector<std::vector<std::uint32_t>>>(j, "lexicon", line_no);
      const json emb = field<json>(j, "embedding", line_no);
      const auto seed = field<std::uint64_t>(emb, "seed", line_no);
      const auto rows = field<std::size_t>(emb, "rows", line_no);
      const auto dim = field<std::size_t>(emb, "dim", line_no);
      if (emb.contains("values")) {
        corpus.embedding = EmbeddingTable{seed, rows, dim, field<std::vector<double>>(emb, "values", line_no)};
        if (corpus.embedding.values.size() != rows * dim) throw SchemaError("embedding values do not match dimensions", line_no);
      } else {
        corpus.embedding = EmbeddingTable::generate(seed, rows, dim);
      }
      if (corpus.emotion_labels.size() < 2 || corpus.intent_labels.size() < 2) {
        throw SchemaError("each task needs at least two labels", line_no);
      }
      have_header = true;
      continue;
    }
    Sample s = sample_from_json(j, corpus, line_no);
    if (s.modality == Modality::tokens && s.tokens().vocab_size != corpus.vocab_size) {
      throw SchemaError("token record vocabulary differs from the header", line_no);
    }
    (s.labelled() ? corpus.labelled : corpus.unlabelled).push_back(std::move(s));
  }
  if (!have_header) throw ParseError("corpus file has no header line");
  corpus.validate();
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& out) { write_corpus(out, corpus); });
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file '" + path.string() + "'");
  return read_corpus(in);
}

// ---- splitting -------------------------------------------------------------

void SplitSpec::validate() const {
  for (double f : {train, valid, test}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
  }
  if (std::abs(train + valid + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

SplitIndices stratified_split(std::span<const std::pair<std::size_t, std::size_t>> joint_labels,
                              const SplitSpec& spec) {
  spec.validate();
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < joint_labels.size(); ++i) groups[joint_labels[i]].push_back(i);

  const auto active = static_cast<std::size_t>((spec.train > 0) + (spec.valid > 0) + (spec.test > 0));
  SplitIndices out;
  Rng rng(spec.seed);
  for (auto& [key, members] : groups) {
    rng.shuffle(std::span<std::size_t>(members));
    const std::size_t n = members.size();
    if (n < active) {
      out.warnings.push_back("joint class (" + std::to_string(key.first) + ", " + std::to_string(key.second) +
                             ") has " + std::to_string(n) + " sample(s); all placed in train");
      out.train.insert(out.train.end(), members.begin(), members.end());
      continue;
    }
    auto n_valid = static_cast<std::size_t>(std::llround(spec.valid * static_cast<double>(n)));
    auto n_test = static_cast<std::size_t>(std::llround(spec.test * static_cast<double>(n)));
    n_valid = std::min(n_valid, n);
    n_test = std::min(n_test, n - n_valid);
    const std::size_t n_train = n - n_valid - n_test;
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.valid.insert(out.valid.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train),
                     members.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
    out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.valid.begin(), out.valid.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

SampleSplit stratified_split(std::span<const Sample> samples, const SplitSpec& spec) {
  std::vector<std::pair<std::size_t, std::size_t>> joint;
  joint.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.labelled()) throw ContractError("stratified_split: sample '" + s.id + "' is unlabelled");
    joint.emplace_back(*s.emotion, *s.intent);
  }
  const SplitIndices idx = stratified_split(joint, spec);
  SampleSplit out;
  for (auto i : idx.train) out.train.push_back(samples[i]);
  for (auto i : idx.valid) out.valid.push_back(samples[i]);
  for (auto i : idx.test) out.test.push_back(samples[i]);
  out.warnings = idx.warnings;
  return out;
}

// ---- synthetic corpora -----------------------------------------------------

void GeneratorConfig::validate() const {
  if (emotion_counts.size() < 2) throw ConfigError("emotion_counts needs at least two classes");
  auto positive = [](const std::vector<std::size_t>& v) {
    return std::all_of(v.begin(), v.end(), [](std::size_t c) { return c > 0; });
  };
  if (!positive(emotion_counts)) throw ConfigError("emotion_counts must be positive");
  if (!intent_counts.empty()) {
    if (intent_counts.size() < 2) throw ConfigError("intent_counts needs at least two classes");
    if (!positive(intent_counts)) throw ConfigError("intent_counts must be positive");
    const auto ne = std::accumulate(emotion_counts.begin(), emotion_counts.end(), std::size_t{0});
    const auto ni = std::accumulate(intent_counts.begin(), intent_counts.end(), std::size_t{0});
    if (ne != ni) throw ConfigError("emotion_counts and intent_counts must have equal totals");
  }
  if (!(correlation >= 0.0 && correlation <= 1.0)) throw ConfigError("correlation must lie in [0, 1]");
  if (!(separation >= 0.0) || !(signal_noise >= 0.0)) throw ConfigError("separation and signal_noise must be non-negative");
  if (min_length == 0 || max_length < min_length) throw ConfigError("need 1 <= min_length <= max_length");
  if (sample_rate == 0) throw ConfigError("sample_rate must be positive");
  if (modality != CorpusModality::signal) {
    const std::size_t topics = emotion_counts.size() + std::max<std::size_t>(intent_counts.size(), 2);
    if (embedding_dim == 0 || topic_size == 0) throw ConfigError("embedding_dim and topic_size must be positive");
    if (vocab_size < topics * topic_size) throw ConfigError("vocab_size too small for the topic blocks");
  }
}

bool GeneratorConfig::apply(const ConfigEntry& e) {
  if (e.key == "emotion_counts") emotion_counts = parse_unsigned_list(e);
  else if (e.key == "intent_counts") intent_counts = parse_unsigned_list(e);
  else if (e.key == "unlabelled_count") unlabelled_count = parse_unsigned(e);
  else if (e.key == "min_length") min_length = parse_unsigned(e);
  else if (e.key == "max_length") max_length = parse_unsigned(e);
  else if (e.key == "separation") separation = parse_real(e);
  else if (e.key == "correlation") correlation = parse_real(e);
  else if (e.key == "signal_noise") signal_noise = parse_real(e);
  else if (e.key == "sample_rate") sample_rate = static_cast<std::uint32_t>(parse_unsigned(e));
  else if (e.key == "vocab_size") vocab_size = static_cast<std::uint32_t>(parse_unsigned(e));
  else if (e.key == "embedding_dim") embedding_dim = parse_unsigned(e);
  else if (e.key == "topic_size") topic_size = parse_unsigned(e);
  else if (e.key == "seed") seed = parse_unsigned(e);
  else if (e.key == "modality") {
    if (e.value == "signal") modality = CorpusModality::signal;
    else if (e.value == "tokens") modality = CorpusModality::tokens;
    else if (e.value == "paired") modality = CorpusModality::paired;
    else throw ConfigError("line " + std::to_string(e.line) + ": modality must be signal|tokens|paired");
  } else {
    return false;
  }
  return true;
}

GeneratorConfig generator_config_from(std::span<const ConfigEntry> entries) {
  GeneratorConfig cfg;
  for (const auto& e : entries) {
    if (!cfg.apply(e)) throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
  }
  cfg.validate();
  return cfg;
}

namespace {

constexpr int kHarmonics = 3;

// Per-class smooth profiles over normalized time u in [0, 1].
struct Profile {
  double amplitude[kHarmonics];
  double phase[kHarmonics];

  double at(double u) const {
    double v = 0.0;
    for (int m = 0; m < kHarmonics; ++m) v += amplitude[m] * std::sin(std::numbers::pi * (m + 1) * u + phase[m]);
    return v;
  }
};

struct Templates {
  std::vector<Profile> emotion_offset;
  std::vector<Profile> intent_envelope;
};

Templates make_templates(std::size_t ce, std::size_t ci, Rng& rng) {
  Templates t;
  auto draw = [&rng](std::size_t n) {
    std::vector<Profile> v(n);
    for (auto& p : v) {
      for (int m = 0; m < kHarmonics; ++m) {
        p.amplitude[m] = rng.normal();
        p.phase[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
      }
    }
    return v;
  };
  t.emotion_offset = draw(ce);
  t.intent_envelope = draw(ci);
  return t;
}

constexpr double kCarrier = 1.3;  // radians per frame

SignalSequence make_signal(const GeneratorConfig& cfg, const Templates& t, std::size_t e, std::size_t i, Rng& rng) {
  const auto length = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(cfg.min_length), static_cast<std::int64_t>(cfg.max_length)));
  const double gain = 1.0 + 0.1 * rng.normal();
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  SignalSequence seq{std::vector<double>(length), cfg.sample_rate};
  const double span = length > 1 ? static_cast<double>(length - 1) : 1.0;
  for (std::size_t n = 0; n < length; ++n) {
    const double u = static_cast<double>(n) / span;
    const double clean = t.emotion_offset[e].at(u) +
                         std::abs(t.intent_envelope[i].at(u)) * std::sin(kCarrier * static_cast<double>(n) + phase);
    seq.frames[n] = cfg.separation * gain * clean + cfg.signal_noise * rng.normal();
  }
  return seq;
}

// Emotion e owns topic block e, intent i owns block (Ce + i); the whole vocabulary is background.
TokenSequence make_tokens(const GeneratorConfig& cfg, std::size_t ce, std::size_t e, std::size_t i, Rng& rng) {
  const auto length = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(cfg.min_length), static_cast<std::int64_t>(cfg.max_length)));
  const double topic_prob = std::min(0.45, 0.25 * cfg.separation);
  TokenSequence seq{std::vector<std::uint32_t>(length), cfg.vocab_size};
  for (auto& tok : seq.tokens) {
    const double u = rng.uniform();
    std::size_t block = SIZE_MAX;
    if (u < topic_prob) block = e;
    else if (u < 2.0 * topic_prob) block = ce + i;
    if (block == SIZE_MAX) {
      tok = static_cast<std::uint32_t>(rng.index(cfg.vocab_size));
    } else {
      tok = static_cast<std::uint32_t>(block * cfg.topic_size + rng.index(cfg.topic_size));
    }
  }
  return seq;
}

// Adjacent token pairs (2j, 2j+1) are synonyms, which keeps both inside one topic block
// whenever topic_size is even.
SynonymLexicon make_lexicon(std::uint32_t vocab) {
  SynonymLexicon lex;
  lex.synonyms.resize(vocab);
  for (std::uint32_t t = 0; t + 1 < vocab; t += 2) {
    lex.synonyms[t] = {t + 1};
    lex.synonyms[t + 1] = {t};
  }
  return lex;
}

std::vector<std::pair<std::size_t, std::size_t>> couple_labels(const GeneratorConfig& cfg, std::size_t ci, Rng& rng) {
  std::vector<std::size_t> emotions;
  for (std::size_t e = 0; e < cfg.emotion_counts.size(); ++e) emotions.insert(emotions.end(), cfg.emotion_counts[e], e);
  std::vector<std::pair<std::size_t, std::size_t>> pairs(emotions.size());
  if (cfg.intent_counts.empty()) {
    // derived intents: fixed map e -> e mod Ci with probability `correlation`, else uniform
    for (std::size_t n = 0; n < emotions.size(); ++n) {
      const std::size_t e = emotions[n];
      const bool tied = cfg.correlation >= 1.0 || rng.uniform() < cfg.correlation;
      pairs[n] = {e, tied ? e % ci : static_cast<std::size_t>(rng.index(ci))};
    }
  } else {
    // exact marginals: comonotone pairing, then a (1 - correlation) share of positions reshuffled
    std::vector<std::size_t> intents;
    for (std::size_t i = 0; i < cfg.intent_counts.size(); ++i) intents.insert(intents.end(), cfg.intent_counts[i], i);
    std::vector<std::size_t> loose;
    for (std::size_t n = 0; n < intents.size(); ++n) {
      if (cfg.correlation < 1.0 && rng.uniform() >= cfg.correlation) loose.push_back(n);
    }
    std::vector<std::size_t> loose_values;
    for (auto n : loose) loose_values.push_back(intents[n]);
    rng.shuffle(std::span<std::size_t>(loose_values));
    for (std::size_t m = 0; m < loose.size(); ++m) intents[loose[m]] = loose_values[m];
    for (std::size_t n = 0; n < emotions.size(); ++n) pairs[n] = {emotions[n], intents[n]};
  }
  rng.shuffle(std::span<std::pair<std::size_t, std::size_t>>(pairs));
  return pairs;
}

std::string make_id(char prefix, std::size_t n) {
  std::string digits = std::to_string(n);
  return std::string(1, prefix) + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

}  // namespace

Corpus synthesize_corpus(const GeneratorConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  const std::size_t ce = cfg.emotion_counts.size();
  const std::size_t ci = cfg.intent_counts.empty() ? default_intent_labels().size() : cfg.intent_counts.size();
  auto labels_for = [](std::vector<std::string> defaults, std::size_t n, const char* stem) {
    if (defaults.size() == n) return defaults;
    std::vector<std::string> out;
    for (std::size_t k = 0; k < n; ++k) out.push_back(std::string(stem) + std::to_string(k));
    return out;
  };
  corpus.emotion_labels = labels_for(default_emotion_labels(), ce, "emotion_");
  corpus.intent_labels = labels_for(default_intent_labels(), ci, "intent_");

  const bool want_signal = cfg.modality != CorpusModality::tokens;
  const bool want_tokens = cfg.modality != CorpusModality::signal;
  if (want_tokens) {
    corpus.vocab_size = cfg.vocab_size;
    corpus.max_token_length = cfg.max_length;
    corpus.lexicon = make_lexicon(cfg.vocab_size);
    corpus.embedding = EmbeddingTable::generate(Rng::derive(cfg.seed, 3), cfg.vocab_size, cfg.embedding_dim);
  }

  Rng template_rng(Rng::derive(cfg.seed, kTemplateStream));
  const Templates templates = make_templates(ce, ci, template_rng);
  Rng label_rng(Rng::derive(cfg.seed, kLabelStream));
  const auto pairs = couple_labels(cfg, ci, label_rng);

  std::size_t stream = 0;
  auto emit = [&](std::vector<Sample>& into, const std::string& id, std::size_t e, std::size_t i, bool keep_labels) {
    Rng rng(Rng::derive(cfg.seed, kSampleStreamBase + stream++));
    std::optional<std::size_t> emo, intent;
    if (keep_labels) {
      emo = e;
      intent = i;
    }
    if (want_signal) into.push_back(Sample{id, Modality::signal, make_signal(cfg, templates, e, i, rng), emo, intent});
    if (want_tokens) into.push_back(Sample{id, Modality::tokens, make_tokens(cfg, ce, e, i, rng), emo, intent});
  };
  for (std::size_t n = 0; n < pairs.size(); ++n) emit(corpus.labelled, make_id('L', n), pairs[n].first, pairs[n].second, true);
  for (std::size_t n = 0; n < cfg.unlabelled_count; ++n) {
    const auto& [e, i] = pairs[static_cast<std::size_t>(label_rng.index(pairs.size()))];
    emit(corpus.unlabelled, make_id('U', n), e, i, false);
  }
  return corpus;
}

// ---- batching --------------------------------------------------------------

BatchStream::BatchStream(std::size_t labelled_count, std::size_t unlabelled_count, std::size_t labelled_batch,
                         double unlabelled_ratio, std::uint64_t seed)
    : labelled_batch_(labelled_batch),
      unlabelled_batch_(0),
      labelled_order_(labelled_count),
      unlabelled_pool_(unlabelled_count),
      labelled_rng_(Rng::derive(seed, 11)),
      unlabelled_rng_(Rng::derive(seed, 12)) {
  if (labelled_count == 0) throw ConfigError("batching needs a non-empty labelled pool");
  if (labelled_batch == 0) throw ConfigError("labelled batch size must be at least 1");
  if (!(unlabelled_ratio >= 0.0)) throw ConfigError("unlabelled ratio must be non-negative");
  unlabelled_batch_ = static_cast<std::size_t>(std::llround(unlabelled_ratio * static_cast<double>(labelled_batch)));
  if (unlabelled_count == 0) unlabelled_batch_ = 0;
  std::iota(labelled_order_.begin(), labelled_order_.end(), std::size_t{0});
  std::iota(unlabelled_pool_.begin(), unlabelled_pool_.end(), std::size_t{0});
}

std::size_t BatchStream::steps_per_epoch() const {
  return (labelled_order_.size() + labelled_batch_ - 1) / labelled_batch_;
}

std::vector<BatchIndices> BatchStream::next_epoch() {
  labelled_rng_.shuffle(std::span<std::size_t>(labelled_order_));
  std::vector<BatchIndices> steps(steps_per_epoch());
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const std::size_t lo = s * labelled_batch_;
    const std::size_t hi = std::min(lo + labelled_batch_, labelled_order_.size());
    steps[s].labelled.assign(labelled_order_.begin() + static_cast<std::ptrdiff_t>(lo),
                             labelled_order_.begin() + static_cast<std::ptrdiff_t>(hi));
    const std::size_t pool = unlabelled_pool_.size();
    auto& u = steps[s].unlabelled;
    u.reserve(unlabelled_batch_);
    if (unlabelled_batch_ <= pool) {
      // partial Fisher-Yates: distinct indices within the step
      for (std::size_t m = 0; m < unlabelled_batch_; ++m) {
        const auto pick = m + static_cast<std::size_t>(unlabelled_rng_.index(pool - m));
        std::swap(unlabelled_pool_[m], unlabelled_pool_[pick]);
        u.push_back(unlabelled_pool_[m]);
      }
    } else {
      for (std::size_t m = 0; m < unlabelled_batch_; ++m) u.push_back(static_cast<std::size_t>(unlabelled_rng_.index(pool)));
    }
  }
  return steps;
}

}  // namespace mtssl
