#include "mtssl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mtssl/error.hpp"
#include "mtssl/rng.hpp"

namespace mtssl {

namespace {

struct CaseSpec {
  const char* name;
  Method method;
  double lambda1, lambda2, lambda3, lambda;
  bool labelled;
};

constexpr CaseSpec kCases[] = {
    {"baseline_ce", Method::baseline, 0.5, 0.5, 0.5, 1.0, true},
    {"fixmatch", Method::fixmatch, 0.5, 0.0, 0.0, 0.0, true},
    {"adaptive_negative", Method::fullmatch, 0.0, 1.0, 0.0, 0.0, false},
    {"entropy_meaning", Method::fullmatch, 0.0, 0.0, 1.0, 0.0, false},
    {"fullmatch", Method::fullmatch, 0.5, 0.5, 0.5, 0.0, true},
    {"multitask_fixmatch", Method::fixmatch, 0.5, 0.5, 0.5, 1.0, true},
    {"multitask_fullmatch", Method::fullmatch, 0.5, 0.5, 0.5, 1.0, true},
};

const CaseSpec& find_case(const std::string& name) {
  for (const auto& c : kCases) {
    if (name == c.name) return c;
  }
  throw ConfigError("unknown gradcheck case '" + name + "'");
}

std::vector<TaskProbs> forward_all(const TwoHeadModel& model, const std::vector<FeatureVector>& xs) {
  std::vector<TaskProbs> out;
  for (const auto& x : xs) out.push_back(forward(model, x));
  return out;
}

bool term_active(const CaseSpec& c, const MultitaskLoss& loss) {
  if (c.method == Method::baseline) return loss.emo.l_sup > 0.0;
  if (c.lambda1 > 0.0 && loss.emo.accepted_count == 0) return false;
  if (c.method == Method::fixmatch) return true;
  if (c.lambda2 > 0.0 && loss.emo.l_neg <= 0.0) return false;
  if (c.lambda3 > 0.0 && loss.emo.l_ent <= 0.0) return false;
  return true;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> names;
  for (const auto& c : kCases) names.emplace_back(c.name);
  return names;
}

GradcheckProblem make_gradcheck_problem(const std::string& case_name, std::uint64_t seed,
                                        const GradcheckOptions& options) {
  const CaseSpec& spec = find_case(case_name);
  Rng rng(seed);
  GradcheckProblem problem;
  problem.model = TwoHeadModel::initialize(options.shape, rng.next_u64());
  // sharpen the heads so confidences spread across the gate threshold
  for (double& v : problem.model.values) v *= 3.0;

  auto random_input = [&] {
    FeatureVector x(options.shape.input_dim);
    for (double& v : x) v = rng.normal();
    return x;
  };
  const std::size_t n_lab = spec.labelled ? options.batch : 0;
  std::vector<std::size_t> emo_labels, intent_labels;
  for (std::size_t j = 0; j < n_lab; ++j) {
    problem.inputs.push_back(random_input());
    emo_labels.push_back(static_cast<std::size_t>(rng.index(options.shape.emo_classes)));
    intent_labels.push_back(static_cast<std::size_t>(rng.index(options.shape.intent_classes)));
  }
  std::vector<FeatureVector> weak_x;
  for (std::size_t b = 0; b < options.batch; ++b) weak_x.push_back(random_input());
  for (std::size_t b = 0; b < options.batch; ++b) problem.inputs.push_back(random_input());
  const auto weak = forward_all(problem.model, weak_x);
  const auto strong = forward_all(problem.model,
                                  std::vector<FeatureVector>(problem.inputs.begin() + static_cast<std::ptrdiff_t>(n_lab),
                                                             problem.inputs.end()));
  if (spec.method == Method::baseline) problem.inputs.resize(n_lab);

  // tau between the 2nd and 3rd largest joint confidences: about half the batch passes the gate
  std::vector<double> joint;
  for (const auto& p : weak) {
    joint.push_back(std::min(*std::max_element(p.emo.begin(), p.emo.end()),
                             *std::max_element(p.intent.begin(), p.intent.end())));
  }
  std::sort(joint.begin(), joint.end(), std::greater<>());
  SslCoefficients coeffs;
  coeffs.tau = joint.size() >= 3 ? 0.5 * (joint[1] + joint[2]) : 0.5;
  coeffs.sigma = 0.5;
  coeffs.lambda1 = spec.lambda1;
  coeffs.lambda2 = spec.lambda2;
  coeffs.lambda3 = spec.lambda3;
  coeffs.lambda = spec.lambda;
  problem.objective = BatchObjective::build(spec.method, coeffs, emo_labels, intent_labels, weak, strong);
  return problem;
}

double gradcheck_error(const GradcheckProblem& problem, const GradcheckOptions& options) {
  const BatchObjective& objective = problem.objective;
  const LossAndGradients analytic = backprop(problem.model, problem.inputs, objective.as_loss());
  const Gradients numeric = finite_difference_gradient(
      [&](const TwoHeadModel& m) { return objective.evaluate(forward_all(m, problem.inputs), {}).total; },
      problem.model, options.eps);
  return max_relative_error(analytic.gradients.values, numeric.values, options.relative_floor);
}

GradcheckReport run_gradcheck(std::uint64_t seed, const GradcheckOptions& options) {
  GradcheckReport report;
  for (const auto& spec : kCases) {
    GradcheckCase result{spec.name, 0.0, options.seeds, 0};
    for (std::size_t s = 0; s < options.seeds; ++s) {
      const auto problem = make_gradcheck_problem(spec.name, Rng::derive(seed, s), options);
      const auto loss = problem.objective.evaluate(forward_all(problem.model, problem.inputs), {});
      if (term_active(spec, loss)) ++result.active_seeds;
      result.max_relative_error = std::max(result.max_relative_error, gradcheck_error(problem, options));
    }
    report.max_relative_error = std::max(report.max_relative_error, result.max_relative_error);
    report.cases.push_back(result);
  }
  return report;
}

}  // namespace mtssl
