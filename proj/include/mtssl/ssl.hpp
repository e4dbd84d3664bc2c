#pragma once

// Semi-supervised loss stack: confidence-gated pseudo labels (fix-match),
// adaptive top-k selection, adaptive negative loss, entropy meaning loss,
// full-match, and their two-task combinations.
//
// Every loss is a function of probability vectors only. Discrete decisions
// (pseudo labels, gates, ranks, k, soft targets) are computed once into a
// plan and then held fixed while the value and dL/dp are evaluated, so the
// analytic gradient and a finite-difference check see the same constants.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace mtssl {

using Distribution = std::vector<double>;
using DistributionBatch = std::vector<Distribution>;

enum class Method { baseline, fixmatch, fullmatch };

Method parse_method(std::string_view name);
std::string_view to_string(Method method);

// Lower bound applied to every log argument.
inline constexpr double kLogClamp = 1e-12;

struct PseudoLabelDecision {
  std::size_t predicted_class = 0;
  double confidence = 0.0;
  bool accepted = false;
};

struct TopKSelection {
  std::size_t k = 0;
  double topk_accuracy = 0.0;
};

// rank[c] in 1..C; rank 1 holds the largest probability, ties to the lower index.
using RankAssignment = std::vector<std::size_t>;

struct LossBreakdown {
  double l_sup = 0.0;
  double l_fix_unsup = 0.0;
  double l_neg = 0.0;
  double l_ent = 0.0;
  std::size_t accepted_count = 0;
  std::size_t unlabelled_count = 0;
  std::size_t k = 0;  // 0 when no top-k selection was made
  double total = 0.0;
  bool labelled_empty = false;
};

struct SslCoefficients {
  double tau = 0.95;
  double sigma = 0.99;
  double lambda1 = 0.5;
  double lambda2 = 0.5;
  double lambda3 = 0.5;
  double lambda = 1.0;  // weight of the intent task

  void validate() const;
};

struct LabelledBatch {
  DistributionBatch probs;
  std::vector<std::size_t> labels;
};

struct UnlabelledBatch {
  DistributionBatch weak;
  DistributionBatch strong;
};

struct TaskBatch {
  LabelledBatch labelled;
  UnlabelledBatch unlabelled;
};

struct SoftTarget {
  std::size_t cls = 0;
  double target = 0.0;
};

// Throws ContractError unless p is a finite probability vector summing to 1.
void check_distribution(std::span<const double> p, const char* what);

RankAssignment rank_classes(std::span<const double> probs);

PseudoLabelDecision gate_pseudo_label(std::span<const double> weak_probs, double tau);

// Fraction of samples whose weak argmax is among the k largest strong probabilities.
double top_k_accuracy(const UnlabelledBatch& batch, std::size_t k);

// Smallest k whose top-k accuracy exceeds sigma; C when none does.
TopKSelection select_k(const UnlabelledBatch& batch, double sigma);

double adaptive_negative_loss(const UnlabelledBatch& batch, std::size_t k);

// Targets for the classes with weak rank in [2, k]; empty for k = 1.
std::vector<SoftTarget> entropy_meaning_soft_label(std::span<const double> weak_probs,
                                                   std::span<const double> strong_probs, std::size_t k);

double entropy_meaning_loss(const UnlabelledBatch& batch, std::size_t k);

LossBreakdown fixmatch_loss(const LabelledBatch& labelled, const UnlabelledBatch& unlabelled, double tau,
                            double lambda1);

LossBreakdown fullmatch_loss(const LabelledBatch& labelled, const UnlabelledBatch& unlabelled,
                             const SslCoefficients& coeffs);

// Frozen per-sample decisions for one task.
struct SampleTargets {
  PseudoLabelDecision pseudo;
  bool use_pseudo_label = false;  // gate after any joint multi-task gating
  RankAssignment weak_rank;
  std::vector<SoftTarget> soft;
};

struct TaskPlan {
  Method method = Method::baseline;
  TopKSelection selection;
  std::vector<SampleTargets> samples;
};

TaskPlan plan_task(Method method, const UnlabelledBatch& batch, const SslCoefficients& coeffs);

// dL/dp for the labelled and strong-branch probabilities of one task.
struct TaskLossGradient {
  DistributionBatch labelled;
  DistributionBatch strong;
};

// Evaluates the planned loss. When `grad` is non-null, adds scale * dL/dp into it
// (resized on first use).
LossBreakdown evaluate_task_loss(const TaskPlan& plan, const LabelledBatch& labelled,
                                 const DistributionBatch& strong, const SslCoefficients& coeffs,
                                 TaskLossGradient* grad = nullptr, double scale = 1.0);

struct MultitaskPlan {
  TaskPlan emo;
  TaskPlan intent;
};

struct MultitaskLoss {
  double total = 0.0;
  LossBreakdown emo;
  LossBreakdown intent;
};

struct MultitaskGradient {
  TaskLossGradient emo;
  TaskLossGradient intent;
};

// fixmatch applies the joint gate (both tasks confident); fullmatch plans each task independently.
MultitaskPlan plan_multitask(Method method, const UnlabelledBatch& emo, const UnlabelledBatch& intent,
                             const SslCoefficients& coeffs);

MultitaskLoss evaluate_multitask(const MultitaskPlan& plan, const TaskBatch& emo, const TaskBatch& intent,
                                 const SslCoefficients& coeffs, MultitaskGradient* grad = nullptr);

MultitaskLoss multitask_loss(Method method, const TaskBatch& emo, const TaskBatch& intent,
                             const SslCoefficients& coeffs);

}  // namespace mtssl
