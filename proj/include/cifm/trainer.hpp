// Training protocol: epoch loop with early stopping on the validation
// metric, best-epoch weight selection, deterministic per-seed runs, and
// multi-seed aggregation.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cifm/data.hpp"
#include "cifm/encoder.hpp"
#include "cifm/estimators.hpp"
#include "cifm/objective.hpp"
#include "cifm/optim.hpp"

namespace cifm {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 128;
  int max_length = 128;  // tokenizer truncation and encoder position table
  double lr = 5e-5;
  double weight_decay = 0.0;  // 0, 0.001 or 0.01 in practice
  double clip_norm = 0.0;     // 0 disables gradient clipping
  int patience = 5;           // epochs without validation improvement
  std::vector<uint64_t> seeds = {11, 12, 13, 14, 15};
  std::string metric;   // headline metric; empty -> default_metric(corpus)
  int mine_hidden = 64;  // critic width when the objective uses "mine"
  std::string log_path;  // optional line-JSON run log, appended to
};

void validate_train(const TrainConfig& cfg);

// Headline metric used for model selection: macro_f1 for classification,
// pearson for regression.
std::string default_metric(const Corpus& corpus);

struct EpochRecord {
  int epoch = 0;  // 0-based
  double mean_label_term = 0.0;
  double mean_input_term = 0.0;
  double mean_total = 0.0;  // objective grand total averaged over steps
  double valid_metric = 0.0;
  int steps = 0;
  int perturbed_steps = 0;  // steps where the adversarial branch fired
};

struct RunRecord {
  uint64_t seed = 0;
  std::string metric;  // resolved headline metric name
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;  // grand total of every optimizer step
  int best_epoch = -1;              // index into `epochs`
  double best_valid_metric = 0.0;   // max over epochs of valid_metric
  double test_metric = 0.0;         // evaluated once, with best-epoch weights
  double wall_seconds = 0.0;
};

struct EvalOutput {
  double metric = 0.0;
  std::vector<int32_t> pred;   // argmax predictions (classification)
  std::vector<double> scores;  // head outputs (regression)
  Matrix pooled;               // one representation row per example
};

// Dropout-off forward pass over a whole split.  Classification predicts the
// argmax class (ties resolve to the lower index); regression reports the
// head output.  `metric` follows compute_named_metric's naming.
EvalOutput evaluate_split(Encoder& enc, const Tokenizer& tok,
                          const std::vector<Example>& split, const Corpus& corpus,
                          const std::string& metric, int batch_size);

struct TrainResult {
  RunRecord record;
  std::unique_ptr<Encoder> encoder;    // carries the best-epoch weights
  std::unique_ptr<MineCritic> critic;  // null unless the critic bound is used
};

// Trains one seed.  All randomness (weight init, epoch shuffles, dropout
// views, perturbation draws) derives from `seed`, so identical calls produce
// identical records.  The corpus fixes num_classes/regression on the encoder
// config; max_length fixes the tokenizer and position-table lengths.  A
// non-finite loss aborts with a NumericError naming the loss breakdown.
TrainResult train_one(const Corpus& corpus, const EncoderConfig& enc_cfg,
                      const ObjectiveConfig& obj_cfg, const TrainConfig& cfg,
                      uint64_t seed);

struct SeedAggregate {
  std::vector<RunRecord> runs;  // one per seed, in seed order
  double mean_test_metric = 0.0;
  double std_test_metric = 0.0;  // sample standard deviation (n-1); 0 for n=1
};

// Runs every seed in cfg.seeds independently and aggregates test metrics.
SeedAggregate multi_seed(const Corpus& corpus, const EncoderConfig& enc_cfg,
                         const ObjectiveConfig& obj_cfg, const TrainConfig& cfg);

}  // namespace cifm
