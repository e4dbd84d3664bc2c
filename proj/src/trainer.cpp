#include "mtssl/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "mtssl/error.hpp"

namespace mtssl {

namespace {

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Distinct Rng stream per (epoch, step, slot).
std::uint64_t stream_key(std::size_t epoch, std::size_t step, std::size_t slot) {
  return (static_cast<std::uint64_t>(epoch) << 42) ^ (static_cast<std::uint64_t>(step) << 21) ^ slot;
}

void accumulate(LossBreakdown& into, const LossBreakdown& b) {
  into.l_sup += b.l_sup;
  into.l_fix_unsup += b.l_fix_unsup;
  into.l_neg += b.l_neg;
  into.l_ent += b.l_ent;
  into.total += b.total;
  into.accepted_count += b.accepted_count;
  into.unlabelled_count += b.unlabelled_count;
}

void average(LossBreakdown& b, std::size_t steps) {
  const double n = static_cast<double>(steps);
  b.l_sup /= n;
  b.l_fix_unsup /= n;
  b.l_neg /= n;
  b.l_ent /= n;
  b.total /= n;
}

}  // namespace

// ---- config ----------------------------------------------------------------

void TrainConfig::validate() const {
  coefficients().validate();
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (labelled_batch == 0) throw ConfigError("labelled_batch must be at least 1");
  if (!(unlabelled_ratio >= 0.0)) throw ConfigError("unlabelled_ratio must be non-negative");
  if (hidden == 0) throw ConfigError("hidden must be at least 1");
  if (signal_bins == 0) throw ConfigError("signal_bins must be at least 1");
  if (!applies_to(weak_aug_kind, modality)) {
    throw ConfigError("weak_aug_kind '" + std::string(to_string(weak_aug_kind)) + "' does not apply to " +
                      std::string(to_string(modality)));
  }
  if (!applies_to(strong_aug_kind, modality)) {
    throw ConfigError("strong_aug_kind '" + std::string(to_string(strong_aug_kind)) + "' does not apply to " +
                      std::string(to_string(modality)));
  }
  for (double p : {token_aug.delete_prob, token_aug.synonym_prob, token_aug.contextual_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probabilities must lie in [0, 1]");
  }
  if (!(signal_aug.noise_scale >= 0.0)) throw ConfigError("noise_scale must be non-negative");
  split().validate();
}

SslCoefficients TrainConfig::coefficients() const {
  return SslCoefficients{tau, sigma, lambda1, lambda2, lambda3, lambda};
}

SplitSpec TrainConfig::split() const { return SplitSpec{train_fraction, valid_fraction, test_fraction, split_seed}; }

bool TrainConfig::apply(const ConfigEntry& e) {
  const std::string& k = e.key;
  if (k == "method") method = parse_method(e.value);
  else if (k == "modality") modality = parse_modality(e.value);
  else if (k == "weak_aug_kind") weak_aug_kind = parse_augment_kind(e.value);
  else if (k == "strong_aug_kind") strong_aug_kind = parse_augment_kind(e.value);
  else if (k == "weak_aug_on_unlabelled") weak_aug_on_unlabelled = parse_bool(e);
  else if (k == "epochs") epochs = parse_unsigned(e);
  else if (k == "labelled_batch") labelled_batch = parse_unsigned(e);
  else if (k == "unlabelled_ratio") unlabelled_ratio = parse_real(e);
  else if (k == "lr0") lr0 = parse_real(e);
  else if (k == "lr_decay") lr_decay = parse_real(e);
  else if (k == "tau") tau = parse_real(e);
  else if (k == "sigma") sigma = parse_real(e);
  else if (k == "lambda1") lambda1 = parse_real(e);
  else if (k == "lambda2") lambda2 = parse_real(e);
  else if (k == "lambda3") lambda3 = parse_real(e);
  else if (k == "lambda") lambda = parse_real(e);
  else if (k == "hidden") hidden = parse_unsigned(e);
  else if (k == "seed") seed = parse_unsigned(e);
  else if (k == "signal_bins") signal_bins = parse_unsigned(e);
  else if (k == "flip_max_frames") signal_aug.flip_max_frames = parse_unsigned(e);
  else if (k == "time_mask_max_frames") signal_aug.time_mask_max_frames = parse_unsigned(e);
  else if (k == "pitch_max_steps") signal_aug.pitch_max_steps = static_cast<int>(parse_unsigned(e));
  else if (k == "noise_scale") signal_aug.noise_scale = parse_real(e);
  else if (k == "swap_count") token_aug.swap_count = parse_unsigned(e);
  else if (k == "delete_prob") token_aug.delete_prob = parse_real(e);
  else if (k == "synonym_prob") token_aug.synonym_prob = parse_real(e);
  else if (k == "contextual_prob") token_aug.contextual_prob = parse_real(e);
  else if (k == "contextual_neighbors") token_aug.contextual_neighbors = parse_unsigned(e);
  else if (k == "train_fraction") train_fraction = parse_real(e);
  else if (k == "valid_fraction") valid_fraction = parse_real(e);
  else if (k == "test_fraction") test_fraction = parse_real(e);
  else if (k == "split_seed") split_seed = parse_unsigned(e);
  else return false;
  return true;
}

std::vector<std::pair<std::string, std::string>> TrainConfig::entries() const {
  return {
      {"method", std::string(to_string(method))},
      {"modality", std::string(to_string(modality))},
      {"weak_aug_kind", std::string(to_string(weak_aug_kind))},
      {"strong_aug_kind", std::string(to_string(strong_aug_kind))},
      {"weak_aug_on_unlabelled", weak_aug_on_unlabelled ? "true" : "false"},
      {"epochs", std::to_string(epochs)},
      {"labelled_batch", std::to_string(labelled_batch)},
      {"unlabelled_ratio", real_text(unlabelled_ratio)},
      {"lr0", real_text(lr0)},
      {"lr_decay", real_text(lr_decay)},
      {"tau", real_text(tau)},
      {"sigma", real_text(sigma)},
      {"lambda1", real_text(lambda1)},
      {"lambda2", real_text(lambda2)},
      {"lambda3", real_text(lambda3)},
      {"lambda", real_text(lambda)},
      {"hidden", std::to_string(hidden)},
      {"seed", std::to_string(seed)},
      {"signal_bins", std::to_string(signal_bins)},
      {"flip_max_frames", std::to_string(signal_aug.flip_max_frames)},
      {"time_mask_max_frames", std::to_string(signal_aug.time_mask_max_frames)},
      {"pitch_max_steps", std::to_string(signal_aug.pitch_max_steps)},
      {"noise_scale", real_text(signal_aug.noise_scale)},
      {"swap_count", std::to_string(token_aug.swap_count)},
      {"delete_prob", real_text(token_aug.delete_prob)},
      {"synonym_prob", real_text(token_aug.synonym_prob)},
      {"contextual_prob", real_text(token_aug.contextual_prob)},
      {"contextual_neighbors", std::to_string(token_aug.contextual_neighbors)},
      {"train_fraction", real_text(train_fraction)},
      {"valid_fraction", real_text(valid_fraction)},
      {"test_fraction", real_text(test_fraction)},
      {"split_seed", std::to_string(split_seed)},
  };
}

std::vector<std::pair<std::string, std::string>> train_config_help() {
  return {
      {"method", "baseline | fixmatch | fullmatch"},
      {"modality", "signal | tokens"},
      {"weak_aug_kind", "flip | time_mask | pitch_shift (signal); swap | delete | synonym (tokens); identity"},
      {"strong_aug_kind", "gaussian_noise (signal) | contextual (tokens)"},
      {"weak_aug_on_unlabelled", "false replaces the unlabelled weak branch with the identity"},
      {"epochs", "training epochs"},
      {"labelled_batch", "labelled samples per step"},
      {"unlabelled_ratio", "unlabelled samples per labelled sample in a step"},
      {"lr0", "initial Adam learning rate"},
      {"lr_decay", "per-epoch learning-rate factor"},
      {"tau", "pseudo-label confidence threshold (strict >)"},
      {"sigma", "top-k accuracy threshold for selecting k (strict >)"},
      {"lambda1", "weight of the gated unsupervised cross-entropy"},
      {"lambda2", "weight of the adaptive negative loss"},
      {"lambda3", "weight of the entropy meaning loss"},
      {"lambda", "weight of the intent task"},
      {"hidden", "trunk width"},
      {"seed", "training seed"},
      {"signal_bins", "spans per signal for the featurizer (4 features each)"},
      {"flip_max_frames", "longest reversed segment"},
      {"time_mask_max_frames", "longest zeroed segment"},
      {"pitch_max_steps", "largest pitch shift in semitones"},
      {"noise_scale", "standard deviation of the additive Gaussian noise"},
      {"swap_count", "adjacent swaps per sequence"},
      {"delete_prob", "per-token deletion probability"},
      {"synonym_prob", "per-token synonym replacement probability"},
      {"contextual_prob", "per-token embedding-neighbour replacement probability"},
      {"contextual_neighbors", "candidate neighbours for contextual replacement"},
      {"train_fraction", "share of labelled samples used for training"},
      {"valid_fraction", "share of labelled samples used for validation"},
      {"test_fraction", "share of labelled samples held out for testing"},
      {"split_seed", "seed of the stratified split"},
  };
}

TrainConfig train_config_from(std::span<const ConfigEntry> entries) {
  TrainConfig cfg;
  for (const auto& e : entries) {
    if (!cfg.apply(e)) throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
  }
  cfg.validate();
  return cfg;
}

double lr_at_epoch(double lr0, double decay, std::size_t epoch) {
  return lr0 * std::pow(decay, static_cast<double>(epoch));
}

// ---- featurizer / augmenter ------------------------------------------------

std::size_t Featurizer::dim() const {
  return modality == Modality::signal ? 4 * signal_bins : embedding.dim + 1;
}

FeatureVector Featurizer::operator()(const Sample& sample) const {
  if (sample.modality != modality) throw ContractError("featurizer: sample '" + sample.id + "' has the wrong modality");
  if (modality == Modality::signal) return featurize_signal(sample.signal(), signal_bins);
  return featurize_tokens(sample.tokens(), embedding, max_token_length);
}

Featurizer make_featurizer(const TrainConfig& config, const Corpus& corpus) {
  Featurizer f;
  f.modality = config.modality;
  f.signal_bins = config.signal_bins;
  f.max_token_length = corpus.max_token_length;
  if (config.modality == Modality::tokens) {
    if (corpus.embedding.rows == 0) throw ConfigError("token modality needs a corpus with an embedding table");
    f.embedding = corpus.embedding;
  }
  return f;
}

Sample Augmenter::operator()(const Sample& sample, AugmentKind kind, Rng& rng) const {
  Sample out;
  out.id = sample.id;
  out.modality = sample.modality;
  out.emotion = sample.emotion;
  out.intent = sample.intent;
  if (sample.modality == Modality::signal) {
    out.payload = augment_signal(sample.signal(), kind, signal, rng);
  } else {
    out.payload = augment_tokens(sample.tokens(), kind, tokens, lexicon, embedding, rng);
  }
  return out;
}

// ---- objective -------------------------------------------------------------

BatchObjective BatchObjective::build(Method method, const SslCoefficients& coeffs, std::vector<std::size_t> emo_labels,
                                     std::vector<std::size_t> intent_labels, std::span<const TaskProbs> weak,
                                     std::span<const TaskProbs> strong) {
  if (emo_labels.size() != intent_labels.size()) throw ContractError("objective: label lists differ in length");
  if (weak.size() != strong.size()) throw ContractError("objective: weak and strong branches differ in size");
  BatchObjective obj;
  obj.coeffs = coeffs;
  obj.emo_labels = std::move(emo_labels);
  obj.intent_labels = std::move(intent_labels);
  obj.unlabelled_count = method == Method::baseline ? 0 : weak.size();
  UnlabelledBatch emo, intent;
  if (method != Method::baseline) {
    for (std::size_t b = 0; b < weak.size(); ++b) {
      emo.weak.push_back(weak[b].emo);
      emo.strong.push_back(strong[b].emo);
      intent.weak.push_back(weak[b].intent);
      intent.strong.push_back(strong[b].intent);
    }
  }
  obj.plan = plan_multitask(method, emo, intent, coeffs);
  return obj;
}

MultitaskLoss BatchObjective::evaluate(std::span<const TaskProbs> probs, std::span<HeadGradient> grads) const {
  const std::size_t nl = emo_labels.size();
  if (probs.size() != nl + unlabelled_count) throw ContractError("objective: evaluation count mismatch");
  TaskBatch emo, intent;
  emo.labelled.labels = emo_labels;
  intent.labelled.labels = intent_labels;
  for (std::size_t j = 0; j < nl; ++j) {
    emo.labelled.probs.push_back(probs[j].emo);
    intent.labelled.probs.push_back(probs[j].intent);
  }
  for (std::size_t b = 0; b < unlabelled_count; ++b) {
    emo.unlabelled.strong.push_back(probs[nl + b].emo);
    intent.unlabelled.strong.push_back(probs[nl + b].intent);
  }
  if (grads.empty()) return evaluate_multitask(plan, emo, intent, coeffs);
  if (grads.size() != probs.size()) throw ContractError("objective: gradient count mismatch");

  MultitaskGradient g;
  const MultitaskLoss loss = evaluate_multitask(plan, emo, intent, coeffs, &g);
  auto copy_into = [](std::vector<double>& dst, const DistributionBatch& src, std::size_t at) {
    if (at < src.size()) dst = src[at];
  };
  for (std::size_t j = 0; j < nl; ++j) {
    copy_into(grads[j].emo, g.emo.labelled, j);
    copy_into(grads[j].intent, g.intent.labelled, j);
  }
  for (std::size_t b = 0; b < unlabelled_count; ++b) {
    copy_into(grads[nl + b].emo, g.emo.strong, b);
    copy_into(grads[nl + b].intent, g.intent.strong, b);
  }
  return loss;
}

ProbabilityLoss BatchObjective::as_loss() const {
  return [this](std::span<const TaskProbs> probs, std::span<HeadGradient> grads) {
    return evaluate(probs, grads).total;
  };
}

// ---- training --------------------------------------------------------------

PreparedData prepare_data(const TrainConfig& config, const Corpus& corpus) {
  config.validate();
  const Corpus view = corpus.only(config.modality);
  if (view.labelled.empty()) {
    throw ConfigError("corpus has no labelled " + std::string(to_string(config.modality)) + " samples");
  }
  PreparedData data;
  SampleSplit split = stratified_split(view.labelled, config.split());
  data.train = std::move(split.train);
  data.valid = std::move(split.valid);
  data.test = std::move(split.test);
  data.warnings = std::move(split.warnings);
  data.unlabelled = view.unlabelled;
  data.featurizer = make_featurizer(config, corpus);
  data.augmenter = Augmenter{config.signal_aug, config.token_aug, corpus.lexicon, corpus.embedding};
  data.emo_classes = corpus.emo_classes();
  data.intent_classes = corpus.intent_classes();
  return data;
}

TrainResult train(const TrainConfig& config, const PreparedData& data, const StepObserver& observer) {
  config.validate();
  const bool semi = config.method != Method::baseline;
  if (data.train.empty()) throw ConfigError("training split is empty");
  if (semi && data.unlabelled.empty()) {
    throw ConfigError(std::string(to_string(config.method)) + " needs unlabelled samples");
  }
  if (semi && std::llround(config.unlabelled_ratio * static_cast<double>(config.labelled_batch)) == 0) {
    throw ConfigError(std::string(to_string(config.method)) + " needs unlabelled_ratio > 0");
  }

  const ModelShape shape{data.featurizer.dim(), config.hidden, data.emo_classes, data.intent_classes};
  TrainResult result;
  result.final_model = TwoHeadModel::initialize(shape, Rng::derive(config.seed, 21));
  TwoHeadModel& model = result.final_model;
  AdamState adam = AdamState::zeros(shape);
  BatchStream stream(data.train.size(), semi ? data.unlabelled.size() : 0, config.labelled_batch,
                     semi ? config.unlabelled_ratio : 0.0, Rng::derive(config.seed, 22));
  const std::uint64_t labelled_aug_seed = Rng::derive(config.seed, 23);
  const std::uint64_t unlabelled_aug_seed = Rng::derive(config.seed, 24);
  const SslCoefficients coeffs = config.coefficients();
  const Featurizer& featurize = data.featurizer;
  const Augmenter& augment = data.augmenter;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochReport rep;
    rep.epoch = epoch;
    rep.lr = lr_at_epoch(config.lr0, config.lr_decay, epoch);
    rep.k_histogram_emo.assign(data.emo_classes + 1, 0);
    rep.k_histogram_intent.assign(data.intent_classes + 1, 0);
    const auto steps = stream.next_epoch();

    for (std::size_t s = 0; s < steps.size(); ++s) {
      const BatchIndices& batch = steps[s];
      std::vector<FeatureVector> inputs;
      std::vector<std::size_t> emo_labels, intent_labels;
      for (std::size_t j = 0; j < batch.labelled.size(); ++j) {
        const Sample& sample = data.train[batch.labelled[j]];
        Rng rng(Rng::derive(labelled_aug_seed, stream_key(epoch, s, j)));
        inputs.push_back(featurize(augment(sample, config.weak_aug_kind, rng)));
        emo_labels.push_back(*sample.emotion);
        intent_labels.push_back(*sample.intent);
      }
      std::vector<TaskProbs> probs;
      for (const auto& x : inputs) probs.push_back(forward(model, x));

      std::vector<TaskProbs> weak_probs, strong_probs;
      for (std::size_t j = 0; j < batch.unlabelled.size(); ++j) {
        const Sample& sample = data.unlabelled[batch.unlabelled[j]];
        Rng weak_rng(Rng::derive(unlabelled_aug_seed, stream_key(epoch, s, 2 * j)));
        Rng strong_rng(Rng::derive(unlabelled_aug_seed, stream_key(epoch, s, 2 * j + 1)));
        const FeatureVector weak_x = config.weak_aug_on_unlabelled
                                         ? featurize(augment(sample, config.weak_aug_kind, weak_rng))
                                         : featurize(sample);
        FeatureVector strong_x = featurize(augment(sample, config.strong_aug_kind, strong_rng));
        weak_probs.push_back(forward(model, weak_x));
        strong_probs.push_back(forward(model, strong_x));
        inputs.push_back(std::move(strong_x));
      }
      probs.insert(probs.end(), strong_probs.begin(), strong_probs.end());

      const BatchObjective objective = BatchObjective::build(config.method, coeffs, std::move(emo_labels),
                                                             std::move(intent_labels), weak_probs, strong_probs);
      std::vector<HeadGradient> upstream(inputs.size());
      for (auto& g : upstream) {
        g.emo.assign(shape.emo_classes, 0.0);
        g.intent.assign(shape.intent_classes, 0.0);
      }
      const MultitaskLoss loss = objective.evaluate(probs, upstream);
      const Gradients grads = backprop(model, inputs, upstream);
      adam_step(model, grads, adam, rep.lr);

      rep.mean_total += loss.total;
      accumulate(rep.emo, loss.emo);
      accumulate(rep.intent, loss.intent);
      if (loss.emo.k > 0) ++rep.k_histogram_emo[loss.emo.k];
      if (loss.intent.k > 0) ++rep.k_histogram_intent[loss.intent.k];
      if (observer) observer(epoch, s, model);
    }

    rep.mean_total /= static_cast<double>(steps.size());
    average(rep.emo, steps.size());
    average(rep.intent, steps.size());
    auto rate = [](const LossBreakdown& b) {
      return b.unlabelled_count ? static_cast<double>(b.accepted_count) / static_cast<double>(b.unlabelled_count) : 0.0;
    };
    rep.acceptance_rate_emo = rate(rep.emo);
    rep.acceptance_rate_intent = rate(rep.intent);
    if (!data.valid.empty()) {
      rep.valid = evaluate(model, data.valid, featurize);
      if (rep.valid.jrbm > result.best_valid_jrbm) {
        result.best_valid_jrbm = rep.valid.jrbm;
        result.best_epoch = epoch;
        result.best_model = model;
      }
    }
    result.reports.push_back(std::move(rep));
  }
  if (data.valid.empty()) {
    result.best_model = model;
    result.best_epoch = config.epochs - 1;
  }
  return result;
}

TrainResult train(const TrainConfig& config, const Corpus& corpus, const StepObserver& observer) {
  return train(config, prepare_data(config, corpus), observer);
}

std::vector<TaskProbs> predict(const TwoHeadModel& model, std::span<const Sample> samples,
                               const Featurizer& featurizer) {
  std::vector<TaskProbs> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(forward(model, featurizer(s)));
  return out;
}

MetricsReport evaluate(const TwoHeadModel& model, std::span<const Sample> samples, const Featurizer& featurizer) {
  if (samples.empty()) throw ContractError("evaluate: no samples");
  std::vector<std::size_t> pe, le, pi, li;
  for (const auto& s : samples) {
    if (!s.labelled()) throw ContractError("evaluate: sample '" + s.id + "' is unlabelled");
    const TaskProbs p = forward(model, featurizer(s));
    pe.push_back(argmax(p.emo));
    pi.push_back(argmax(p.intent));
    le.push_back(*s.emotion);
    li.push_back(*s.intent);
  }
  return make_report(pe, le, model.shape.emo_classes, pi, li, model.shape.intent_classes);
}

void write_epoch_csv(std::ostream& out, std::span<const EpochReport> reports) {
  auto hist = [](const std::vector<std::size_t>& h) {
    std::string s;
    for (std::size_t k = 1; k < h.size(); ++k) {
      if (k > 1) s += ';';
      s += std::to_string(h[k]);
    }
    return s;
  };
  out << "epoch,lr,loss_total";
  for (const char* task : {"emo", "intent"}) {
    for (const char* col : {"l_sup", "l_fix_unsup", "l_neg", "l_ent", "total", "accept_rate", "k_hist"}) {
      out << ',' << task << '_' << col;
    }
  }
  out << ",valid_f1_emo,valid_f1_intent,valid_jrbm\n";
  for (const auto& r : reports) {
    out << r.epoch << ',' << real_text(r.lr) << ',' << real_text(r.mean_total);
    auto task = [&](const LossBreakdown& b, double rate, const std::vector<std::size_t>& h) {
      out << ',' << real_text(b.l_sup) << ',' << real_text(b.l_fix_unsup) << ',' << real_text(b.l_neg) << ','
          << real_text(b.l_ent) << ',' << real_text(b.total) << ',' << real_text(rate) << ',' << hist(h);
    };
    task(r.emo, r.acceptance_rate_emo, r.k_histogram_emo);
    task(r.intent, r.acceptance_rate_intent, r.k_histogram_intent);
    out << ',' << real_text(r.valid.f1_emo) << ',' << real_text(r.valid.f1_intent) << ',' << real_text(r.valid.jrbm)
        << '\n';
  }
}

}  // namespace mtssl
