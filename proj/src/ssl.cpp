#include "mtssl/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mtssl/error.hpp"

namespace mtssl {

namespace {

double clamp_log_arg(double x) { return std::clamp(x, kLogClamp, 1.0); }

// d/dx log(clamp(x)); zero where the clamp is active.
double dlog(double x) { return (x >= kLogClamp && x <= 1.0) ? 1.0 / x : 0.0; }

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + term);
}

std::size_t class_count(const UnlabelledBatch& batch) {
  if (batch.weak.size() != batch.strong.size()) {
    throw ContractError("unlabelled batch: weak and strong branches differ in size");
  }
  if (batch.weak.empty()) return 0;
  const std::size_t c = batch.weak.front().size();
  for (std::size_t b = 0; b < batch.weak.size(); ++b) {
    if (batch.weak[b].size() != c || batch.strong[b].size() != c) {
      throw ContractError("unlabelled batch: inconsistent class count");
    }
    check_distribution(batch.weak[b], "weak-branch probabilities");
    check_distribution(batch.strong[b], "strong-branch probabilities");
  }
  return c;
}

// Strong-branch rank of the weak-branch argmax, per sample.
std::vector<std::size_t> pseudo_label_strong_ranks(const UnlabelledBatch& batch) {
  std::vector<std::size_t> ranks(batch.weak.size());
  for (std::size_t b = 0; b < batch.weak.size(); ++b) {
    const std::size_t label = gate_pseudo_label(batch.weak[b], 1.0).predicted_class;
    ranks[b] = rank_classes(batch.strong[b])[label];
  }
  return ranks;
}

void ensure_shape(DistributionBatch& grad, const DistributionBatch& like) {
  if (grad.size() == like.size()) return;
  grad.resize(like.size());
  for (std::size_t j = 0; j < like.size(); ++j) grad[j].assign(like[j].size(), 0.0);
}

// -sum over classes ranked after k of log(1 - p_s(c)), with its gradient.
double adaptive_negative_term(const RankAssignment& weak_rank, std::span<const double> strong, std::size_t k,
                              std::span<double> grad, double grad_scale) {
  double value = 0.0;
  for (std::size_t c = 0; c < strong.size(); ++c) {
    if (weak_rank[c] <= k) continue;
    const double q = 1.0 - strong[c];
    value -= std::log(clamp_log_arg(q));
    if (!grad.empty()) grad[c] += grad_scale * dlog(q);
  }
  return value;
}

// Binary cross-entropy of each soft-targeted class, with its gradient.
double entropy_meaning_term(const std::vector<SoftTarget>& soft, std::span<const double> strong,
                            std::span<double> grad, double grad_scale) {
  double value = 0.0;
  for (const SoftTarget& t : soft) {
    const double p = strong[t.cls];
    const double y = t.target;
    value -= y * std::log(clamp_log_arg(p)) + (1.0 - y) * std::log(clamp_log_arg(1.0 - p));
    if (!grad.empty()) grad[t.cls] -= grad_scale * (y * dlog(p) - (1.0 - y) * dlog(1.0 - p));
  }
  return value;
}

void check_k(std::size_t k, std::size_t classes) {
  if (k < 1 || k > classes) {
    throw ContractError("k = " + std::to_string(k) + " outside [1, " + std::to_string(classes) + "]");
  }
}

}  // namespace

Method parse_method(std::string_view name) {
  if (name == "baseline") return Method::baseline;
  if (name == "fixmatch") return Method::fixmatch;
  if (name == "fullmatch") return Method::fullmatch;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected baseline|fixmatch|fullmatch)");
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::baseline: return "baseline";
    case Method::fixmatch: return "fixmatch";
    case Method::fullmatch: return "fullmatch";
  }
  return "?";
}

void SslCoefficients::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
  if (!(sigma > 0.0 && sigma <= 1.0)) throw ConfigError("sigma must lie in (0, 1]");
  for (double l : {lambda1, lambda2, lambda3, lambda}) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("loss coefficients must be finite and non-negative");
  }
}

void check_distribution(std::span<const double> p, const char* what) {
  if (p.empty()) throw ContractError(std::string(what) + ": empty probability vector");
  double total = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < -1e-12 || v > 1.0 + 1e-12) {
      throw ContractError(std::string(what) + ": entry outside [0, 1]");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ContractError(std::string(what) + ": probabilities do not sum to 1");
}

RankAssignment rank_classes(std::span<const double> probs) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probs[a] > probs[b] || (probs[a] == probs[b] && a < b);
  });
  RankAssignment rank(probs.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  return rank;
}

PseudoLabelDecision gate_pseudo_label(std::span<const double> weak_probs, double tau) {
  check_distribution(weak_probs, "gate_pseudo_label");
  const auto top = std::max_element(weak_probs.begin(), weak_probs.end());
  PseudoLabelDecision d;
  d.predicted_class = static_cast<std::size_t>(top - weak_probs.begin());
  d.confidence = *top;
  d.accepted = d.confidence > tau;
  return d;
}

double top_k_accuracy(const UnlabelledBatch& batch, std::size_t k) {
  const std::size_t classes = class_count(batch);
  if (classes == 0) throw ConfigError("top_k_accuracy: empty batch");
  check_k(k, classes);
  const auto ranks = pseudo_label_strong_ranks(batch);
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

TopKSelection select_k(const UnlabelledBatch& batch, double sigma) {
  const std::size_t classes = class_count(batch);
  if (classes == 0) throw ConfigError("select_k: empty batch");
  const auto ranks = pseudo_label_strong_ranks(batch);
  // hits_at[r] = samples whose pseudo label sits at strong rank r
  std::vector<std::size_t> hits_at(classes + 1, 0);
  for (std::size_t r : ranks) ++hits_at[r];
  const double n = static_cast<double>(ranks.size());
  std::size_t cumulative = 0;
  for (std::size_t k = 1; k <= classes; ++k) {
    cumulative += hits_at[k];
    const double accuracy = static_cast<double>(cumulative) / n;
    if (accuracy > sigma) return {k, accuracy};
  }
  return {classes, 1.0};
}

double adaptive_negative_loss(const UnlabelledBatch& batch, std::size_t k) {
  const std::size_t classes = class_count(batch);
  if (classes == 0) return 0.0;
  check_k(k, classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.weak.size(); ++b) {
    total += adaptive_negative_term(rank_classes(batch.weak[b]), batch.strong[b], k, {}, 0.0);
  }
  const double value = total / static_cast<double>(batch.weak.size());
  require_finite(value, "adaptive negative loss");
  return value;
}

std::vector<SoftTarget> entropy_meaning_soft_label(std::span<const double> weak_probs,
                                                   std::span<const double> strong_probs, std::size_t k) {
  if (weak_probs.size() != strong_probs.size()) throw ContractError("soft label: branch sizes differ");
  check_k(k, weak_probs.size());
  std::vector<SoftTarget> targets;
  if (k < 2) return targets;
  const RankAssignment rank = rank_classes(weak_probs);
  const std::size_t top = static_cast<std::size_t>(std::find(rank.begin(), rank.end(), 1) - rank.begin());
  const double share = (1.0 - strong_probs[top]) / static_cast<double>(k - 1);
  for (std::size_t c = 0; c < rank.size(); ++c) {
    if (rank[c] >= 2 && rank[c] <= k) targets.push_back({c, share});
  }
  return targets;
}

double entropy_meaning_loss(const UnlabelledBatch& batch, std::size_t k) {
  const std::size_t classes = class_count(batch);
  if (classes == 0) return 0.0;
  check_k(k, classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.weak.size(); ++b) {
    total += entropy_meaning_term(entropy_meaning_soft_label(batch.weak[b], batch.strong[b], k), batch.strong[b],
                                  {}, 0.0);
  }
  const double value = total / static_cast<double>(batch.weak.size() * classes);
  require_finite(value, "entropy meaning loss");
  return value;
}

TaskPlan plan_task(Method method, const UnlabelledBatch& batch, const SslCoefficients& coeffs) {
  TaskPlan plan;
  plan.method = method;
  if (method == Method::baseline) return plan;
  const std::size_t classes = class_count(batch);
  plan.samples.resize(batch.weak.size());
  for (std::size_t b = 0; b < batch.weak.size(); ++b) {
    SampleTargets& s = plan.samples[b];
    s.pseudo = gate_pseudo_label(batch.weak[b], coeffs.tau);
    s.use_pseudo_label = s.pseudo.accepted;
    s.weak_rank = rank_classes(batch.weak[b]);
  }
  if (method == Method::fullmatch && classes > 0) {
    plan.selection = select_k(batch, coeffs.sigma);
    for (std::size_t b = 0; b < batch.weak.size(); ++b) {
      plan.samples[b].soft = entropy_meaning_soft_label(batch.weak[b], batch.strong[b], plan.selection.k);
    }
  }
  return plan;
}

LossBreakdown evaluate_task_loss(const TaskPlan& plan, const LabelledBatch& labelled,
                                 const DistributionBatch& strong, const SslCoefficients& coeffs,
                                 TaskLossGradient* grad, double scale) {
  if (labelled.probs.size() != labelled.labels.size()) {
    throw ContractError("labelled batch: probabilities and labels differ in count");
  }
  LossBreakdown out;
  const std::size_t n_lab = labelled.probs.size();
  out.labelled_empty = n_lab == 0;
  if (grad) ensure_shape(grad->labelled, labelled.probs);

  for (std::size_t j = 0; j < n_lab; ++j) {
    const Distribution& p = labelled.probs[j];
    check_distribution(p, "labelled probabilities");
    const std::size_t y = labelled.labels[j];
    if (y >= p.size()) throw ContractError("label " + std::to_string(y) + " out of range");
    out.l_sup -= std::log(clamp_log_arg(p[y])) / static_cast<double>(n_lab);
    if (grad) grad->labelled[j][y] -= scale * dlog(p[y]) / static_cast<double>(n_lab);
  }
  require_finite(out.l_sup, "supervised cross-entropy");
  out.total = out.l_sup;
  if (plan.method == Method::baseline) return out;

  const std::size_t n_unl = strong.size();
  if (plan.samples.size() != n_unl) throw ContractError("plan does not match the unlabelled batch");
  out.unlabelled_count = n_unl;
  if (grad) ensure_shape(grad->strong, strong);
  const double inv_b = n_unl ? 1.0 / static_cast<double>(n_unl) : 0.0;

  for (std::size_t b = 0; b < n_unl; ++b) {
    const SampleTargets& s = plan.samples[b];
    if (!s.use_pseudo_label) continue;
    ++out.accepted_count;
    const double p = strong[b][s.pseudo.predicted_class];
    out.l_fix_unsup -= std::log(clamp_log_arg(p)) * inv_b;
    if (grad) grad->strong[b][s.pseudo.predicted_class] -= scale * coeffs.lambda1 * dlog(p) * inv_b;
  }
  require_finite(out.l_fix_unsup, "fix-match unsupervised cross-entropy");
  out.total = out.l_sup + coeffs.lambda1 * out.l_fix_unsup;
  if (plan.method == Method::fixmatch || n_unl == 0) return out;

  const std::size_t k = plan.selection.k;
  const std::size_t classes = strong.front().size();
  out.k = k;
  const double inv_bc = inv_b / static_cast<double>(classes);
  for (std::size_t b = 0; b < n_unl; ++b) {
    const SampleTargets& s = plan.samples[b];
    std::span<double> g_row = grad ? std::span<double>(grad->strong[b]) : std::span<double>();
    out.l_neg += adaptive_negative_term(s.weak_rank, strong[b], k, g_row, scale * coeffs.lambda2 * inv_b);
    out.l_ent += entropy_meaning_term(s.soft, strong[b], g_row, scale * coeffs.lambda3 * inv_bc);
  }
  out.l_neg /= static_cast<double>(n_unl);
  out.l_ent /= static_cast<double>(n_unl * classes);
  require_finite(out.l_neg, "adaptive negative loss");
  require_finite(out.l_ent, "entropy meaning loss");
  out.total = out.l_sup + coeffs.lambda1 * out.l_fix_unsup + coeffs.lambda2 * out.l_neg + coeffs.lambda3 * out.l_ent;
  return out;
}

LossBreakdown fixmatch_loss(const LabelledBatch& labelled, const UnlabelledBatch& unlabelled, double tau,
                            double lambda1) {
  SslCoefficients coeffs;
  coeffs.tau = tau;
  coeffs.lambda1 = lambda1;
  return evaluate_task_loss(plan_task(Method::fixmatch, unlabelled, coeffs), labelled, unlabelled.strong, coeffs);
}

LossBreakdown fullmatch_loss(const LabelledBatch& labelled, const UnlabelledBatch& unlabelled,
                             const SslCoefficients& coeffs) {
  return evaluate_task_loss(plan_task(Method::fullmatch, unlabelled, coeffs), labelled, unlabelled.strong, coeffs);
}

MultitaskPlan plan_multitask(Method method, const UnlabelledBatch& emo, const UnlabelledBatch& intent,
                             const SslCoefficients& coeffs) {
  if (emo.weak.size() != intent.weak.size() || emo.strong.size() != intent.strong.size()) {
    throw ContractError("multitask: emotion and intent batches cover different sample counts");
  }
  MultitaskPlan plan{plan_task(method, emo, coeffs), plan_task(method, intent, coeffs)};
  if (method == Method::fixmatch) {
    for (std::size_t b = 0; b < plan.emo.samples.size(); ++b) {
      const bool both = plan.emo.samples[b].pseudo.accepted && plan.intent.samples[b].pseudo.accepted;
      plan.emo.samples[b].use_pseudo_label = both;
      plan.intent.samples[b].use_pseudo_label = both;
    }
  }
  return plan;
}

MultitaskLoss evaluate_multitask(const MultitaskPlan& plan, const TaskBatch& emo, const TaskBatch& intent,
                                 const SslCoefficients& coeffs, MultitaskGradient* grad) {
  if (emo.labelled.probs.size() != intent.labelled.probs.size()) {
    throw ContractError("multitask: emotion and intent labelled batches differ in size");
  }
  MultitaskLoss out;
  out.emo = evaluate_task_loss(plan.emo, emo.labelled, emo.unlabelled.strong, coeffs, grad ? &grad->emo : nullptr,
                               1.0);
  out.intent = evaluate_task_loss(plan.intent, intent.labelled, intent.unlabelled.strong, coeffs,
                                  grad ? &grad->intent : nullptr, coeffs.lambda);
  out.total = out.emo.total + coeffs.lambda * out.intent.total;
  return out;
}

MultitaskLoss multitask_loss(Method method, const TaskBatch& emo, const TaskBatch& intent,
                             const SslCoefficients& coeffs) {
  return evaluate_multitask(plan_multitask(method, emo.unlabelled, intent.unlabelled, coeffs), emo, intent, coeffs);
}

}  // namespace mtssl
