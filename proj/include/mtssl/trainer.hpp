#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtssl/augment.hpp"
#include "mtssl/config.hpp"
#include "mtssl/core_math.hpp"
#include "mtssl/data.hpp"
#include "mtssl/metrics.hpp"
#include "mtssl/ssl.hpp"

namespace mtssl {

struct TrainConfig {
  Method method = Method::fullmatch;
  Modality modality = Modality::signal;
  AugmentKind weak_aug_kind = AugmentKind::flip;
  AugmentKind strong_aug_kind = AugmentKind::gaussian_noise;
  bool weak_aug_on_unlabelled = true;
  std::size_t epochs = 30;
  std::size_t labelled_batch = 16;
  double unlabelled_ratio = 1.0;
  double lr0 = 3e-5;
  double lr_decay = 0.9;
  double tau = 0.95;
  double sigma = 0.99;
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  double lambda3 = 0.5;
  double lambda = 1.0;
  std::size_t hidden = 64;
  std::uint64_t seed = 0;

  // featurizer
  std::size_t signal_bins = 8;

  // augmentation operators
  SignalAugmentParams signal_aug;
  TokenAugmentParams token_aug;

  // split of the labelled pool
  double train_fraction = 0.8;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t split_seed = 0;

  void validate() const;
  SslCoefficients coefficients() const;
  SplitSpec split() const;

  // Returns false for keys it does not own.
  bool apply(const ConfigEntry& entry);
  // Every key with its current value, in documentation order.
  std::vector<std::pair<std::string, std::string>> entries() const;
};

TrainConfig train_config_from(std::span<const ConfigEntry> entries);

// (key, description) for every TrainConfig key.
std::vector<std::pair<std::string, std::string>> train_config_help();

double lr_at_epoch(double lr0, double decay, std::size_t epoch);

// Maps samples of one modality to feature vectors.
struct Featurizer {
  Modality modality = Modality::signal;
  std::size_t signal_bins = 8;
  std::size_t max_token_length = 1;
  EmbeddingTable embedding;

  std::size_t dim() const;
  FeatureVector operator()(const Sample& sample) const;
};

Featurizer make_featurizer(const TrainConfig& config, const Corpus& corpus);

struct Augmenter {
  SignalAugmentParams signal;
  TokenAugmentParams tokens;
  SynonymLexicon lexicon;
  EmbeddingTable embedding;

  Sample operator()(const Sample& sample, AugmentKind kind, Rng& rng) const;
};

// Loss over evaluations laid out as [labelled..., strong branch...] with the
// discrete decisions planned once from the weak and strong probabilities.
struct BatchObjective {
  SslCoefficients coeffs;
  std::vector<std::size_t> emo_labels;
  std::vector<std::size_t> intent_labels;
  std::size_t unlabelled_count = 0;
  MultitaskPlan plan;

  static BatchObjective build(Method method, const SslCoefficients& coeffs, std::vector<std::size_t> emo_labels,
                              std::vector<std::size_t> intent_labels, std::span<const TaskProbs> weak,
                              std::span<const TaskProbs> strong);

  // grads may be empty when only the value is needed.
  MultitaskLoss evaluate(std::span<const TaskProbs> probs, std::span<HeadGradient> grads) const;
  ProbabilityLoss as_loss() const;
};

struct EpochReport {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_total = 0.0;
  LossBreakdown emo;  // per-step means; counts summed over the epoch
  LossBreakdown intent;
  double acceptance_rate_emo = 0.0;
  double acceptance_rate_intent = 0.0;
  std::vector<std::size_t> k_histogram_emo;  // index k, entry 0 unused
  std::vector<std::size_t> k_histogram_intent;
  MetricsReport valid;
};

struct PreparedData {
  std::vector<Sample> train;
  std::vector<Sample> valid;
  std::vector<Sample> test;
  std::vector<Sample> unlabelled;
  Featurizer featurizer;
  Augmenter augmenter;
  std::size_t emo_classes = 0;
  std::size_t intent_classes = 0;
  std::vector<std::string> warnings;
};

// Restricts the corpus to the configured modality and splits the labelled pool.
PreparedData prepare_data(const TrainConfig& config, const Corpus& corpus);

struct TrainResult {
  TwoHeadModel final_model;
  TwoHeadModel best_model;  // best validation JRBM
  std::size_t best_epoch = 0;
  double best_valid_jrbm = -1.0;
  std::vector<EpochReport> reports;
};

using StepObserver = std::function<void(std::size_t epoch, std::size_t step, const TwoHeadModel& model)>;

TrainResult train(const TrainConfig& config, const PreparedData& data, const StepObserver& observer = {});
TrainResult train(const TrainConfig& config, const Corpus& corpus, const StepObserver& observer = {});

std::vector<TaskProbs> predict(const TwoHeadModel& model, std::span<const Sample> samples,
                               const Featurizer& featurizer);

MetricsReport evaluate(const TwoHeadModel& model, std::span<const Sample> samples, const Featurizer& featurizer);

// Epoch reports as CSV; reals printed with 17 significant digits.
void write_epoch_csv(std::ostream& out, std::span<const EpochReport> reports);

}  // namespace mtssl
