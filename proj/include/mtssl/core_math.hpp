#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace mtssl {

using FeatureVector = std::vector<double>;

// Per-task probability vectors produced by the two-head classifier.
struct TaskProbs {
  std::vector<double> emo;
  std::vector<double> intent;
};

// Upstream gradient dL/dp for one forward evaluation, one vector per head.
struct HeadGradient {
  std::vector<double> emo;
  std::vector<double> intent;

  bool is_zero() const;
};

// Dimensions of the shared trunk and the two heads.
//
// Parameters live in one flat array in the order
//   trunk weights (d x H, row-major), trunk bias (H),
//   emotion head weights (H x Ce), emotion bias (Ce),
//   intent head weights (H x Ci), intent bias (Ci).
struct ModelShape {
  std::size_t input_dim = 0;
  std::size_t hidden = 64;
  std::size_t emo_classes = 7;
  std::size_t intent_classes = 8;

  void validate() const;
  std::size_t parameter_count() const;

  std::size_t trunk_weights_offset() const { return 0; }
  std::size_t trunk_bias_offset() const { return input_dim * hidden; }
  std::size_t emo_weights_offset() const { return trunk_bias_offset() + hidden; }
  std::size_t emo_bias_offset() const { return emo_weights_offset() + hidden * emo_classes; }
  std::size_t intent_weights_offset() const { return emo_bias_offset() + emo_classes; }
  std::size_t intent_bias_offset() const { return intent_weights_offset() + hidden * intent_classes; }

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Flat parameter storage shared by the model and its gradients.
struct ParameterSet {
  ModelShape shape;
  std::vector<double> values;

  ParameterSet() = default;
  explicit ParameterSet(const ModelShape& s) : shape(s), values(s.parameter_count(), 0.0) {}

  std::span<double> trunk_weights() { return slice(shape.trunk_weights_offset(), shape.input_dim * shape.hidden); }
  std::span<double> trunk_bias() { return slice(shape.trunk_bias_offset(), shape.hidden); }
  std::span<double> emo_weights() { return slice(shape.emo_weights_offset(), shape.hidden * shape.emo_classes); }
  std::span<double> emo_bias() { return slice(shape.emo_bias_offset(), shape.emo_classes); }
  std::span<double> intent_weights() { return slice(shape.intent_weights_offset(), shape.hidden * shape.intent_classes); }
  std::span<double> intent_bias() { return slice(shape.intent_bias_offset(), shape.intent_classes); }

  std::span<const double> trunk_weights() const { return slice(shape.trunk_weights_offset(), shape.input_dim * shape.hidden); }
  std::span<const double> trunk_bias() const { return slice(shape.trunk_bias_offset(), shape.hidden); }
  std::span<const double> emo_weights() const { return slice(shape.emo_weights_offset(), shape.hidden * shape.emo_classes); }
  std::span<const double> emo_bias() const { return slice(shape.emo_bias_offset(), shape.emo_classes); }
  std::span<const double> intent_weights() const { return slice(shape.intent_weights_offset(), shape.hidden * shape.intent_classes); }
  std::span<const double> intent_bias() const { return slice(shape.intent_bias_offset(), shape.intent_classes); }

  bool all_finite() const;

 private:
  std::span<double> slice(std::size_t offset, std::size_t n) { return {values.data() + offset, n}; }
  std::span<const double> slice(std::size_t offset, std::size_t n) const { return {values.data() + offset, n}; }
};

// Shared ReLU trunk followed by one linear softmax head per task.
struct TwoHeadModel : ParameterSet {
  using ParameterSet::ParameterSet;

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases alike.
  static TwoHeadModel initialize(const ModelShape& shape, std::uint64_t seed);
};

struct Gradients : ParameterSet {
  using ParameterSet::ParameterSet;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;

  static AdamState zeros(const ModelShape& shape);
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Loss over the probabilities of a batch of forward evaluations. Writes dL/dp
// for every evaluation into `grads` (pre-sized to match) and returns L.
using ProbabilityLoss =
    std::function<double(std::span<const TaskProbs> probs, std::span<HeadGradient> grads)>;

struct LossAndGradients {
  double loss = 0.0;
  Gradients gradients;
};

// Numerically stable softmax (max-shifted).
std::vector<double> softmax(std::span<const double> logits);

TaskProbs forward(const TwoHeadModel& model, std::span<const double> x);

// Gradient of sum_j <upstream_j, probs(inputs_j)> w.r.t. every parameter.
// Evaluations whose upstream gradient is identically zero are skipped.
Gradients backprop(const TwoHeadModel& model, std::span<const FeatureVector> inputs,
                   std::span<const HeadGradient> upstream);

// Forward every input, evaluate the loss on the probabilities, and backprop.
LossAndGradients backprop(const TwoHeadModel& model, std::span<const FeatureVector> inputs,
                          const ProbabilityLoss& loss);

// In-place bias-corrected Adam update; increments state.step by one.
void adam_step(TwoHeadModel& model, const Gradients& grads, AdamState& state, double lr,
               const AdamParams& params = {});

// Central differences (L(theta + eps) - L(theta - eps)) / (2 eps) per parameter.
Gradients finite_difference_gradient(const std::function<double(const TwoHeadModel&)>& loss_fn,
                                     const TwoHeadModel& model, double eps = 1e-5);

// Scalar variant used for one-parameter checks.
double finite_difference(const std::function<double(double)>& f, double x, double eps = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = 1e-6);

}  // namespace mtssl
