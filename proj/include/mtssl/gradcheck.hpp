#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mtssl/core_math.hpp"
#include "mtssl/ssl.hpp"
#include "mtssl/trainer.hpp"

namespace mtssl {

// One loss configuration checked against central differences over many seeds.
struct GradcheckCase {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t seeds = 0;
  // Seeds where the term under test was non-zero (gate accepted something,
  // L_a or L_e non-empty, ...).
  std::size_t active_seeds = 0;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double max_relative_error = 0.0;
};

struct GradcheckOptions {
  std::size_t seeds = 20;
  std::size_t batch = 4;
  ModelShape shape{16, 8, 7, 8};
  double eps = 1e-5;
  // below this magnitude the central difference is dominated by rounding in the loss
  double relative_floor = 1e-5;
};

// A randomized batch together with the model it is evaluated on.
struct GradcheckProblem {
  TwoHeadModel model;
  std::vector<FeatureVector> inputs;  // [labelled..., strong...]
  BatchObjective objective;
};

GradcheckProblem make_gradcheck_problem(const std::string& case_name, std::uint64_t seed,
                                        const GradcheckOptions& options);

// Names of the configurations exercised by run_gradcheck.
std::vector<std::string> gradcheck_case_names();

double gradcheck_error(const GradcheckProblem& problem, const GradcheckOptions& options);

GradcheckReport run_gradcheck(std::uint64_t seed, const GradcheckOptions& options = {});

}  // namespace mtssl
