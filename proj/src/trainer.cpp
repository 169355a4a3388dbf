#include "cifm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cifm/common.hpp"
#include "cifm/metrics.hpp"
#include "cifm/rng.hpp"

namespace cifm {

void validate_train(const TrainConfig& cfg) {
  if (cfg.epochs <= 0) throw ConfigError("trainer: epochs must be positive");
  if (cfg.batch_size <= 0) throw ConfigError("trainer: batch_size must be positive");
  if (cfg.max_length <= 0) throw ConfigError("trainer: max_length must be positive");
  if (cfg.lr <= 0.0) throw ConfigError("trainer: lr must be positive");
  if (cfg.weight_decay < 0.0) throw ConfigError("trainer: weight_decay must be non-negative");
  if (cfg.clip_norm < 0.0) throw ConfigError("trainer: clip_norm must be non-negative");
  if (cfg.patience <= 0) throw ConfigError("trainer: patience must be positive");
  if (cfg.patience > cfg.epochs) throw ConfigError("trainer: patience must not exceed epochs");
  if (cfg.seeds.empty()) throw ConfigError("trainer: at least one seed is required");
  if (cfg.mine_hidden <= 0) throw ConfigError("trainer: mine_hidden must be positive");
}

std::string default_metric(const Corpus& corpus) {
  return corpus.regression ? "pearson" : "macro_f1";
}

EvalOutput evaluate_split(Encoder& enc, const Tokenizer& tok,
                          const std::vector<Example>& split, const Corpus& corpus,
                          const std::string& metric, int batch_size) {
  if (split.empty()) throw UsageError("trainer: cannot evaluate an empty split");
  const int n = static_cast<int>(split.size());

  EvalOutput out;
  out.pooled = Matrix(n, enc.config().d_model);
  std::vector<int32_t> gold;
  std::vector<double> gold_scores;

  int row = 0;
  for (const std::vector<int>& idx : index_batches(n, batch_size)) {
    const EncodedBatch batch = tok.encode(split, idx, corpus.regression);
    Tape t;
    const EncodeResult res = enc.encode(t, batch, /*dropout_active=*/false, /*seed=*/0);
    const Matrix& logits = t.val(res.logits);
    const Matrix& pooled = t.val(res.pooled);
    for (int i = 0; i < batch.batch; ++i, ++row) {
      for (int d = 0; d < pooled.cols; ++d) out.pooled.at(row, d) = pooled.at(i, d);
      if (corpus.regression) {
        out.scores.push_back(logits.at(i, 0));
        gold_scores.push_back(split[idx[i]].target);
      } else {
        int arg = 0;
        for (int c = 1; c < logits.cols; ++c)
          if (logits.at(i, c) > logits.at(i, arg)) arg = c;
        out.pred.push_back(arg);
        gold.push_back(split[idx[i]].label);
      }
    }
  }

  out.metric = metrics::compute_named_metric(metric, gold, out.pred, corpus.num_classes(),
                                             gold_scores, out.scores);
  return out;
}

namespace {

void append_run_log(const std::string& path, const RunRecord& rec) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("trainer: cannot open log file " + path);
  for (const EpochRecord& ep : rec.epochs) {
    nlohmann::json line{{"event", "epoch"},
                        {"seed", rec.seed},
                        {"epoch", ep.epoch},
                        {"label_term", ep.mean_label_term},
                        {"input_term", ep.mean_input_term},
                        {"total", ep.mean_total},
                        {"valid_metric", ep.valid_metric},
                        {"steps", ep.steps},
                        {"perturbed_steps", ep.perturbed_steps}};
    out << line.dump() << "\n";
  }
  nlohmann::json line{{"event", "run"},
                      {"seed", rec.seed},
                      {"metric", rec.metric},
                      {"best_epoch", rec.best_epoch},
                      {"best_valid_metric", rec.best_valid_metric},
                      {"test_metric", rec.test_metric},
                      {"wall_seconds", rec.wall_seconds}};
  out << line.dump() << "\n";
}

}  // namespace

TrainResult train_one(const Corpus& corpus, const EncoderConfig& enc_cfg_in,
                      const ObjectiveConfig& obj_cfg_in, const TrainConfig& cfg,
                      uint64_t seed) {
  validate_train(cfg);
  validate_objective(obj_cfg_in);
  if (corpus.train.empty() || corpus.valid.empty() || corpus.test.empty())
    throw UsageError("trainer: corpus needs non-empty train/valid/test splits");

  const auto start = std::chrono::steady_clock::now();
  const Rng root(seed);

  // The corpus is the single source of truth for the task head; the protocol
  // fixes the shared sequence length.
  EncoderConfig enc_cfg = enc_cfg_in;
  enc_cfg.max_len = cfg.max_length;
  enc_cfg.regression = corpus.regression;
  enc_cfg.num_classes = corpus.regression ? 1 : corpus.num_classes();
  enc_cfg.init_seed = root.fork(1).next_u64();

  ObjectiveConfig obj_cfg = obj_cfg_in;
  obj_cfg.regression = corpus.regression;

  TrainResult out;
  out.encoder = make_encoder(enc_cfg);
  Encoder& enc = *out.encoder;

  const bool uses_critic = obj_cfg.beta > 0.0 && obj_cfg.mi_estimator == "mine";
  if (uses_critic)
    out.critic = std::make_unique<MineCritic>(enc_cfg.d_model, enc_cfg.d_model,
                                              cfg.mine_hidden, root.fork(2).next_u64());

  const Tokenizer tok(enc_cfg.vocab, cfg.max_length, enc_cfg.hash_seed);

  OptimConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.clip_norm = cfg.clip_norm;
  Adamax opt(ocfg);

  Rng shuffle_rng = root.fork(3);
  Rng draw_rng = root.fork(4);
  Rng step_seed_rng = root.fork(5);

  RunRecord& rec = out.record;
  rec.seed = seed;
  rec.metric = cfg.metric.empty() ? default_metric(corpus) : cfg.metric;

  const int n_train = static_cast<int>(corpus.train.size());
  double best = -std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;
  std::unordered_map<std::string, Matrix> best_enc_weights;
  std::unordered_map<std::string, Matrix> best_critic_weights;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    EpochRecord ep;
    ep.epoch = epoch;
    for (int at = 0; at < n_train; at += cfg.batch_size) {
      const int take = std::min(cfg.batch_size, n_train - at);
      const std::vector<int> idx(order.begin() + at, order.begin() + at + take);
      const EncodedBatch batch = tok.encode(corpus.train, idx, corpus.regression);
      const uint64_t step_seed = step_seed_rng.next_u64();

      StepOutcome step;
      try {
        step = cifm_loss(enc, out.critic.get(), batch, obj_cfg, opt, draw_rng, step_seed);
      } catch (const NumericError& e) {
        std::ostringstream msg;
        msg << "trainer: aborted at epoch " << epoch << " step " << ep.steps << ": "
            << e.what();
        throw NumericError(msg.str());
      }

      rec.step_losses.push_back(step.breakdown.grand_total);
      ep.mean_label_term += step.breakdown.label_term;
      ep.mean_input_term += step.breakdown.input_term;
      ep.mean_total += step.breakdown.grand_total;
      if (step.breakdown.cim_applied) ep.perturbed_steps++;
      ep.steps++;
    }
    ep.mean_label_term /= ep.steps;
    ep.mean_input_term /= ep.steps;
    ep.mean_total /= ep.steps;

    const EvalOutput val =
        evaluate_split(enc, tok, corpus.valid, corpus, rec.metric, cfg.batch_size);
    ep.valid_metric = val.metric;
    rec.epochs.push_back(ep);

    if (ep.valid_metric > best) {
      best = ep.valid_metric;
      rec.best_epoch = epoch;
      epochs_since_best = 0;
      best_enc_weights = enc.params().weights;
      if (out.critic) best_critic_weights = out.critic->params().weights;
    } else if (++epochs_since_best >= cfg.patience) {
      break;
    }
  }

  rec.best_valid_metric = best;
  enc.params().weights = best_enc_weights;
  if (out.critic) out.critic->params().weights = best_critic_weights;

  const EvalOutput test =
      evaluate_split(enc, tok, corpus.test, corpus, rec.metric, cfg.batch_size);
  rec.test_metric = test.metric;

  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!cfg.log_path.empty()) append_run_log(cfg.log_path, rec);
  return out;
}

SeedAggregate multi_seed(const Corpus& corpus, const EncoderConfig& enc_cfg,
                         const ObjectiveConfig& obj_cfg, const TrainConfig& cfg) {
  validate_train(cfg);
  SeedAggregate agg;
  for (uint64_t seed : cfg.seeds)
    agg.runs.push_back(train_one(corpus, enc_cfg, obj_cfg, cfg, seed).record);

  const int n = static_cast<int>(agg.runs.size());
  double sum = 0.0;
  for (const RunRecord& r : agg.runs) sum += r.test_metric;
  agg.mean_test_metric = sum / n;
  if (n > 1) {
    double ss = 0.0;
    for (const RunRecord& r : agg.runs) {
      const double d = r.test_metric - agg.mean_test_metric;
      ss += d * d;
    }
    agg.std_test_metric = std::sqrt(ss / (n - 1));
  }
  return agg;
}

}  // namespace cifm
