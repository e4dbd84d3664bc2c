#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mtssl/core_math.hpp"

namespace mtssl {

// counts[true][predicted]
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;

  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * classes + predicted]; }
  std::size_t total() const;
  std::vector<std::size_t> row_sums() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct MetricsReport {
  double f1_emo = 0.0;
  double f1_intent = 0.0;
  double jrbm = 0.0;
  ConfusionMatrix confusion_emo;
  ConfusionMatrix confusion_intent;
};

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// Support-weighted mean of per-class F1 (F1 = 0 where precision + recall = 0).
double weighted_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t classes);

// Joint recognition balance: harmonic mean of the two task F1 scores.
double jrbm(double f1_emo, double f1_intent);

ConfusionMatrix confusion(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t classes);

MetricsReport make_report(std::span<const std::size_t> pred_emo, std::span<const std::size_t> label_emo,
                          std::size_t emo_classes, std::span<const std::size_t> pred_intent,
                          std::span<const std::size_t> label_intent, std::size_t intent_classes);

// Top-1 minus top-2 probability.
double margin(std::span<const double> probs);

struct FusedPrediction {
  std::size_t emo = 0;
  std::size_t intent = 0;
  std::size_t emo_source = 0;  // model that supplied the emotion label
  std::size_t intent_source = 0;
};

// Per sample and per task, the model with the largest margin supplies its
// argmax; margin ties go to the lowest model index.
// per_model[m][s] holds model m's probabilities for sample s.
std::vector<FusedPrediction> margin_fusion(std::span<const std::vector<TaskProbs>> per_model);

// CSV with a header row and a leading column of class names.
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& matrix, std::span<const std::string> names);

}  // namespace mtssl
