#include "mtssl/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>

#include "mtssl/error.hpp"

namespace mtssl {

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::vector<std::size_t> ConfusionMatrix::row_sums() const {
  std::vector<std::size_t> sums(classes, 0);
  for (std::size_t t = 0; t < classes; ++t) {
    for (std::size_t p = 0; p < classes; ++p) sums[t] += at(t, p);
  }
  return sums;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ContractError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

ConfusionMatrix confusion(std::span<const std::size_t> preds, std::span<const std::size_t> labels,
                          std::size_t classes) {
  if (preds.size() != labels.size()) throw ContractError("confusion: predictions and labels differ in length");
  ConfusionMatrix m{classes, std::vector<std::size_t>(classes * classes, 0)};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= classes || labels[i] >= classes) throw ContractError("confusion: class index out of range");
    ++m.counts[labels[i] * classes + preds[i]];
  }
  return m;
}

double weighted_f1(std::span<const std::size_t> preds, std::span<const std::size_t> labels, std::size_t classes) {
  if (preds.size() != labels.size()) throw ContractError("weighted_f1: predictions and labels differ in length");
  if (preds.empty()) throw ContractError("weighted_f1: no samples");
  const ConfusionMatrix m = confusion(preds, labels, classes);
  const double n = static_cast<double>(preds.size());
  double score = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t support = 0, predicted = 0;
    for (std::size_t o = 0; o < classes; ++o) {
      support += m.at(c, o);
      predicted += m.at(o, c);
    }
    if (support == 0) continue;
    const double tp = static_cast<double>(m.at(c, c));
    const double precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double recall = tp / static_cast<double>(support);
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    score += static_cast<double>(support) / n * f1;
  }
  return score;
}

double jrbm(double f1_emo, double f1_intent) {
  const double sum = f1_emo + f1_intent;
  return sum > 0.0 ? 2.0 * f1_emo * f1_intent / sum : 0.0;
}

MetricsReport make_report(std::span<const std::size_t> pred_emo, std::span<const std::size_t> label_emo,
                          std::size_t emo_classes, std::span<const std::size_t> pred_intent,
                          std::span<const std::size_t> label_intent, std::size_t intent_classes) {
  MetricsReport r;
  r.f1_emo = weighted_f1(pred_emo, label_emo, emo_classes);
  r.f1_intent = weighted_f1(pred_intent, label_intent, intent_classes);
  r.jrbm = jrbm(r.f1_emo, r.f1_intent);
  r.confusion_emo = confusion(pred_emo, label_emo, emo_classes);
  r.confusion_intent = confusion(pred_intent, label_intent, intent_classes);
  return r;
}

double margin(std::span<const double> probs) {
  if (probs.size() < 2) throw ContractError("margin needs at least two classes");
  double first = -1.0, second = -1.0;
  for (double p : probs) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return first - second;
}

std::vector<FusedPrediction> margin_fusion(std::span<const std::vector<TaskProbs>> per_model) {
  if (per_model.empty()) throw ContractError("margin_fusion: no models");
  const std::size_t n = per_model.front().size();
  for (const auto& m : per_model) {
    if (m.size() != n) throw ContractError("margin_fusion: models cover different sample counts");
  }
  std::vector<FusedPrediction> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t ce = per_model.front()[s].emo.size();
    const std::size_t ci = per_model.front()[s].intent.size();
    double best_emo = -1.0, best_intent = -1.0;
    for (std::size_t m = 0; m < per_model.size(); ++m) {
      const TaskProbs& p = per_model[m][s];
      if (p.emo.size() != ce || p.intent.size() != ci) throw ContractError("margin_fusion: class counts differ");
      const double me = margin(p.emo);
      const double mi = margin(p.intent);
      if (me > best_emo) {
        best_emo = me;
        out[s].emo = argmax(p.emo);
        out[s].emo_source = m;
      }
      if (mi > best_intent) {
        best_intent = mi;
        out[s].intent = argmax(p.intent);
        out[s].intent_source = m;
      }
    }
  }
  return out;
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& matrix, std::span<const std::string> names) {
  if (names.size() != matrix.classes) throw ContractError("confusion csv: label names do not match class count");
  out << "true\\predicted";
  for (const auto& name : names) out << ',' << name;
  out << '\n';
  for (std::size_t t = 0; t < matrix.classes; ++t) {
    out << names[t];
    for (std::size_t p = 0; p < matrix.classes; ++p) out << ',' << matrix.at(t, p);
    out << '\n';
  }
}

}  // namespace mtssl
