#include "mtssl/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtssl/error.hpp"
#include "mtssl/rng.hpp"

namespace mtssl {

namespace {

bool all_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

void check_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

// Hidden pre-activations and ReLU activations for one input.
struct TrunkOutput {
  std::vector<double> pre;
  std::vector<double> act;
};

TrunkOutput trunk_forward(const TwoHeadModel& model, std::span<const double> x) {
  const ModelShape& s = model.shape;
  if (x.size() != s.input_dim) {
    throw ContractError("forward: input dimension " + std::to_string(x.size()) + " != model input " +
                        std::to_string(s.input_dim));
  }
  auto w = model.trunk_weights();
  auto b = model.trunk_bias();
  TrunkOutput out{std::vector<double>(b.begin(), b.end()), std::vector<double>(s.hidden)};
  for (std::size_t i = 0; i < s.input_dim; ++i) {
    const double xi = x[i];
    if (!std::isfinite(xi)) throw NumericError("forward: input feature " + std::to_string(i) + " is not finite");
    if (xi == 0.0) continue;
    const double* row = w.data() + i * s.hidden;
    for (std::size_t h = 0; h < s.hidden; ++h) out.pre[h] += xi * row[h];
  }
  for (std::size_t h = 0; h < s.hidden; ++h) out.act[h] = out.pre[h] > 0.0 ? out.pre[h] : 0.0;
  return out;
}

std::vector<double> head_logits(std::span<const double> act, std::span<const double> w,
                                std::span<const double> b) {
  const std::size_t classes = b.size();
  std::vector<double> z(b.begin(), b.end());
  for (std::size_t h = 0; h < act.size(); ++h) {
    const double a = act[h];
    if (a == 0.0) continue;
    const double* row = w.data() + h * classes;
    for (std::size_t c = 0; c < classes; ++c) z[c] += a * row[c];
  }
  return z;
}

// dL/dz = p * (g - <p, g>) for softmax probabilities p and upstream g.
std::vector<double> softmax_backward(std::span<const double> p, std::span<const double> g) {
  double dot = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * g[c];
  std::vector<double> dz(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) dz[c] = p[c] * (g[c] - dot);
  return dz;
}

void head_backward(std::span<const double> act, std::span<const double> dz, std::span<const double> w,
                   std::span<double> dw, std::span<double> db, std::span<double> dact) {
  const std::size_t classes = dz.size();
  for (std::size_t c = 0; c < classes; ++c) db[c] += dz[c];
  for (std::size_t h = 0; h < act.size(); ++h) {
    const double* wrow = w.data() + h * classes;
    double* dwrow = dw.data() + h * classes;
    double acc = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      dwrow[c] += act[h] * dz[c];
      acc += wrow[c] * dz[c];
    }
    dact[h] += acc;
  }
}

}  // namespace

bool HeadGradient::is_zero() const { return all_zero(emo) && all_zero(intent); }

void ModelShape::validate() const {
  if (input_dim == 0 || hidden == 0) throw ContractError("model shape: input_dim and hidden must be positive");
  if (emo_classes < 2 || intent_classes < 2) throw ContractError("model shape: each head needs at least 2 classes");
}

std::size_t ModelShape::parameter_count() const {
  return input_dim * hidden + hidden + hidden * emo_classes + emo_classes + hidden * intent_classes +
         intent_classes;
}

bool ParameterSet::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

TwoHeadModel TwoHeadModel::initialize(const ModelShape& shape, std::uint64_t seed) {
  shape.validate();
  TwoHeadModel model(shape);
  Rng rng(seed);
  auto fill = [&](std::span<double> block, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : block) v = rng.uniform(-bound, bound);
  };
  fill(model.trunk_weights(), shape.input_dim);
  fill(model.trunk_bias(), shape.input_dim);
  fill(model.emo_weights(), shape.hidden);
  fill(model.emo_bias(), shape.hidden);
  fill(model.intent_weights(), shape.hidden);
  fill(model.intent_bias(), shape.hidden);
  return model;
}

AdamState AdamState::zeros(const ModelShape& shape) {
  const std::size_t n = shape.parameter_count();
  return AdamState{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
}

std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - top);
    total += p[c];
  }
  for (double& v : p) v /= total;
  return p;
}

TaskProbs forward(const TwoHeadModel& model, std::span<const double> x) {
  const TrunkOutput trunk = trunk_forward(model, x);
  const auto ze = head_logits(trunk.act, model.emo_weights(), model.emo_bias());
  const auto zi = head_logits(trunk.act, model.intent_weights(), model.intent_bias());
  check_finite(ze, "emotion logits");
  check_finite(zi, "intent logits");
  return TaskProbs{softmax(ze), softmax(zi)};
}

Gradients backprop(const TwoHeadModel& model, std::span<const FeatureVector> inputs,
                   std::span<const HeadGradient> upstream) {
  if (inputs.size() != upstream.size()) throw ContractError("backprop: inputs and upstream gradients differ in count");
  const ModelShape& s = model.shape;
  Gradients grads(s);
  auto dtw = grads.trunk_weights();
  auto dtb = grads.trunk_bias();
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    const HeadGradient& g = upstream[j];
    if (g.emo.size() != s.emo_classes || g.intent.size() != s.intent_classes) {
      throw ContractError("backprop: upstream gradient has wrong head size");
    }
    if (g.is_zero()) continue;
    const TrunkOutput trunk = trunk_forward(model, inputs[j]);
    const auto pe = softmax(head_logits(trunk.act, model.emo_weights(), model.emo_bias()));
    const auto pi = softmax(head_logits(trunk.act, model.intent_weights(), model.intent_bias()));

    std::vector<double> dact(s.hidden, 0.0);
    if (!all_zero(g.emo)) {
      head_backward(trunk.act, softmax_backward(pe, g.emo), model.emo_weights(), grads.emo_weights(),
                    grads.emo_bias(), dact);
    }
    if (!all_zero(g.intent)) {
      head_backward(trunk.act, softmax_backward(pi, g.intent), model.intent_weights(), grads.intent_weights(),
                    grads.intent_bias(), dact);
    }
    const auto& x = inputs[j];
    for (std::size_t h = 0; h < s.hidden; ++h) {
      if (trunk.pre[h] <= 0.0) dact[h] = 0.0;
      dtb[h] += dact[h];
    }
    for (std::size_t i = 0; i < s.input_dim; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      double* row = dtw.data() + i * s.hidden;
      for (std::size_t h = 0; h < s.hidden; ++h) row[h] += xi * dact[h];
    }
  }
  if (!grads.all_finite()) throw NumericError("non-finite parameter gradient");
  return grads;
}

LossAndGradients backprop(const TwoHeadModel& model, std::span<const FeatureVector> inputs,
                          const ProbabilityLoss& loss) {
  std::vector<TaskProbs> probs;
  probs.reserve(inputs.size());
  for (const auto& x : inputs) probs.push_back(forward(model, x));
  std::vector<HeadGradient> upstream(inputs.size());
  for (auto& g : upstream) {
    g.emo.assign(model.shape.emo_classes, 0.0);
    g.intent.assign(model.shape.intent_classes, 0.0);
  }
  const double value = loss(probs, upstream);
  if (!std::isfinite(value)) throw NumericError("non-finite loss value");
  return LossAndGradients{value, backprop(model, inputs, upstream)};
}

void adam_step(TwoHeadModel& model, const Gradients& grads, AdamState& state, double lr,
               const AdamParams& params) {
  if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
  const std::size_t n = model.values.size();
  if (grads.values.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw ContractError("adam_step: gradient or state not model-shaped");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(params.beta1, t);
  const double c2 = 1.0 - std::pow(params.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads.values[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = params.beta1 * m + (1.0 - params.beta1) * g;
    v = params.beta2 * v + (1.0 - params.beta2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    model.values[i] -= lr * m_hat / (std::sqrt(v_hat) + params.epsilon);
  }
}

Gradients finite_difference_gradient(const std::function<double(const TwoHeadModel&)>& loss_fn,
                                     const TwoHeadModel& model, double eps) {
  Gradients grads(model.shape);
  TwoHeadModel probe = model;
  for (std::size_t i = 0; i < model.values.size(); ++i) {
    const double original = probe.values[i];
    probe.values[i] = original + eps;
    const double up = loss_fn(probe);
    probe.values[i] = original - eps;
    const double down = loss_fn(probe);
    probe.values[i] = original;
    grads.values[i] = (up - down) / (2.0 * eps);
  }
  return grads;
}

double finite_difference(const std::function<double(double)>& f, double x, double eps) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  if (analytic.size() != numeric.size()) throw ContractError("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace mtssl
