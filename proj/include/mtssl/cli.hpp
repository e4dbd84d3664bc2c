#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mtssl/core_math.hpp"
#include "mtssl/data.hpp"
#include "mtssl/metrics.hpp"
#include "mtssl/trainer.hpp"

namespace mtssl {

// Exit codes: 0 success, 1 runtime/invariant failure, 2 usage error.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

// ---- file formats shared by the subcommands --------------------------------

struct Checkpoint {
  TwoHeadModel model;
  TrainConfig config;
  std::size_t best_epoch = 0;
  double valid_jrbm = 0.0;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Per-sample probability dump: a header line, then one line per sample.
struct PredictionFile {
  std::string split;
  Modality modality = Modality::signal;
  std::vector<std::string> emotion_labels;
  std::vector<std::string> intent_labels;
  double valid_jrbm = 0.0;
  std::vector<std::string> ids;
  std::vector<std::size_t> emotion;
  std::vector<std::size_t> intent;
  std::vector<TaskProbs> probs;
};

PredictionFile make_prediction_file(const std::string& split, const Corpus& corpus, Modality modality,
                                    double valid_jrbm, std::span<const Sample> samples,
                                    std::span<const TaskProbs> probs);
void save_predictions(const PredictionFile& file, const std::filesystem::path& path);
PredictionFile load_predictions(const std::filesystem::path& path);

// Fuses prediction files by sample id (order of the first file).
struct FusionResult {
  std::vector<std::string> ids;
  std::vector<FusedPrediction> predictions;
  MetricsReport metrics;
};

FusionResult fuse_predictions(std::span<const PredictionFile> files);

// Indices of the `best` files with the highest validation JRBM (all when best == 0).
std::vector<std::size_t> rank_by_valid_jrbm(std::span<const PredictionFile> files, std::size_t best);

}  // namespace mtssl
