// Differentiable lower bounds on mutual information: the contrastive
// softmax bound over dropout view pairs, a trained-critic bound with an
// EMA-corrected partition gradient, and the label-side CE/MSE surrogates.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cifm/data.hpp"
#include "cifm/graph.hpp"
#include "cifm/params.hpp"

namespace cifm {

struct InfoNceConfig {
  double tau = 0.1;
  bool normalize = true;  // unit-scale rows before similarity
  // Number of negatives per sample; -1 means the default N-1 (all other
  // samples' positives).  Smaller values subsample deterministically by
  // batch rotation; 0 is the degenerate single-candidate case used only by
  // oracle tests.
  int k_negatives = -1;
};

// Bound node: log(K+1) + mean_i log softmax-prob of the positive among
// {positive, negatives}, cosine similarity / tau.  Differentiable w.r.t.
// both views.
int infonce_bound(Tape& t, int anchor, int positive, const InfoNceConfig& cfg);

// Value-only convenience (fresh tape, no backward).
double infonce_value(const Matrix& anchor, const Matrix& positive, const InfoNceConfig& cfg);

// Two-hidden-layer critic T(x_features, z) with the Donsker–Varadhan-style
// bound mean(T_joint) - log mean exp(T_marginal).  The marginal pairs reuse
// the batch with z shuffled by the supplied permutation.  The gradient of
// the partition term is corrected by a running (EMA) denominator kept in
// log space; the first update seeds it with the batch statistic.
class MineCritic {
 public:
  MineCritic(int x_dim, int z_dim, int hidden, uint64_t init_seed, double ema_rate = 0.99);

  // Builds the bound node.  update_ema=false freezes the running mean (used
  // by gradient checks and evaluation passes).
  int bound(Tape& t, int x_features, int z, const std::vector<int>& perm,
            bool update_ema = true);

  double bound_value(const Matrix& x_features, const Matrix& z, const std::vector<int>& perm,
                     bool update_ema = false);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  double log_ema() const { return log_ema_; }
  bool ema_initialized() const { return ema_init_; }
  int x_dim() const { return x_dim_; }
  int z_dim() const { return z_dim_; }

 private:
  int critic_scores(Tape& t, int pair_input);

  int x_dim_, z_dim_;
  double ema_rate_;
  double log_ema_ = 0.0;
  bool ema_init_ = false;
  ParamStore params_;  // names under the "mine_critic" group
};

// Label-side surrogate: mean CE over gold classes (classification) or mean
// squared error against targets (regression).  Minimized directly.
int label_loss(Tape& t, int logits_or_pred, const EncodedBatch& batch, bool regression);

}  // namespace cifm
