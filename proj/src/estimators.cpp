#include "cifm/estimators.hpp"

#include <cmath>

#include "cifm/common.hpp"
#include "cifm/kernels.hpp"
#include "cifm/rng.hpp"

namespace cifm {

namespace G = graph;

int infonce_bound(Tape& t, int anchor, int positive, const InfoNceConfig& cfg) {
  if (cfg.tau <= 0.0) throw ConfigError("infonce: temperature must be positive");
  const Matrix& za = t.val(anchor);
  const Matrix& zb = t.val(positive);
  if (!za.same_shape(zb)) throw DataError("infonce: view shapes differ");
  const int n = za.rows;
  const int k = cfg.k_negatives < 0 ? n - 1 : cfg.k_negatives;
  if (k > n - 1) throw ConfigError("infonce: k_negatives exceeds batch size - 1");
  if (k < 0) throw ConfigError("infonce: k_negatives must be non-negative");
  if (cfg.k_negatives < 0 && n < 2) throw DataError("infonce: batch must hold a negative");

  if (k == 0) {
    // Softmax over the lone positive is identically 1: the bound is the
    // constant 0 with no gradient.
    Matrix zero(1, 1);
    zero.zero();
    return t.input(zero);
  }

  const int a = cfg.normalize ? G::l2_normalize(t, anchor) : anchor;
  const int b = cfg.normalize ? G::l2_normalize(t, positive) : positive;

  if (k == n - 1) {
    // Dense path: candidate j for anchor i is positive_j; the match sits on
    // the diagonal.
    const int sims = G::scale(t, G::matmul_nt(t, a, b), 1.0 / cfg.tau);
    const int diag = G::take_diag(t, sims);
    const int lse = G::logsumexp_rows(t, sims);
    return G::add_const(t, G::mean_all(t, G::sub(t, diag, lse)), std::log(double(k + 1)));
  }

  // Subsampled negatives: rotate the positives so candidate column c for
  // anchor i is positive_{(i+c) mod n}; column 0 is the true positive.
  int stacked = G::take_diag(t, G::matmul_nt(t, a, b));
  for (int c = 1; c <= k; ++c) {
    std::vector<int> rot(n);
    for (int i = 0; i < n; ++i) rot[i] = (i + c) % n;
    const int neg = G::take_diag(t, G::matmul_nt(t, a, G::permute_rows(t, b, rot)));
    stacked = G::concat_cols(t, stacked, neg);
  }
  const int sims = G::scale(t, stacked, 1.0 / cfg.tau);
  Matrix pick(t.val(sims).cols, 1);
  pick.zero();
  pick.at(0, 0) = 1.0;
  const int pos_col = G::matmul(t, sims, t.input(pick));
  const int lse = G::logsumexp_rows(t, sims);
  return G::add_const(t, G::mean_all(t, G::sub(t, pos_col, lse)), std::log(double(k + 1)));
}

double infonce_value(const Matrix& anchor, const Matrix& positive, const InfoNceConfig& cfg) {
  Tape t;
  return t.scalar(infonce_bound(t, t.input(anchor), t.input(positive), cfg));
}

MineCritic::MineCritic(int x_dim, int z_dim, int hidden, uint64_t init_seed, double ema_rate)
    : x_dim_(x_dim), z_dim_(z_dim), ema_rate_(ema_rate) {
  if (ema_rate <= 0.0 || ema_rate >= 1.0)
    throw ConfigError("mine: ema_rate must lie in (0,1)");
  Rng rng(init_seed);
  auto init = [&rng](Matrix& m, double scale) {
    for (double& v : m.a) v = rng.normal() * scale;
  };
  const int in = x_dim + z_dim;
  init(params_.add("mine_critic.w1", in, hidden), std::sqrt(2.0 / (in + hidden)));
  params_.add("mine_critic.b1", 1, hidden).zero();
  init(params_.add("mine_critic.w2", hidden, hidden), std::sqrt(2.0 / (hidden + hidden)));
  params_.add("mine_critic.b2", 1, hidden).zero();
  init(params_.add("mine_critic.w3", hidden, 1), std::sqrt(2.0 / (hidden + 1)));
  params_.add("mine_critic.b3", 1, 1).zero();
}

int MineCritic::critic_scores(Tape& t, int pair_input) {
  auto p = [&](const char* name) {
    return t.param(params_.weight(name), &params_.grad(name));
  };
  int h = G::relu(t, G::affine(t, pair_input, p("mine_critic.w1"), p("mine_critic.b1")));
  h = G::relu(t, G::affine(t, h, p("mine_critic.w2"), p("mine_critic.b2")));
  return G::affine(t, h, p("mine_critic.w3"), p("mine_critic.b3"));
}

int MineCritic::bound(Tape& t, int x_features, int z, const std::vector<int>& perm,
                      bool update_ema) {
  const Matrix& x = t.val(x_features);
  const Matrix& zv = t.val(z);
  if (x.rows != zv.rows) throw DataError("mine: x/z row mismatch");
  if (x.rows < 2) throw DataError("mine: batch must have at least two samples");
  if (x.cols != x_dim_ || zv.cols != z_dim_)
    throw DataError("mine: feature widths do not match the critic");
  if (static_cast<int>(perm.size()) != x.rows)
    throw DataError("mine: permutation length mismatch");

  const int joint = G::concat_cols(t, x_features, z);
  const int marg = G::concat_cols(t, x_features, G::permute_rows(t, z, perm));
  const int t_joint = critic_scores(t, joint);
  const int t_marg = critic_scores(t, marg);

  // Batch log-mean-exp of the marginal scores, computed off-tape to update
  // the running denominator before the op captures it.
  const Matrix& tm = t.val(t_marg);
  double mx = tm.a[0];
  for (double v : tm.a) mx = std::max(mx, v);
  double acc = 0.0;
  for (double v : tm.a) acc += std::exp(v - mx);
  const double batch_lme = mx + std::log(acc / tm.rows);

  if (update_ema) {
    if (!ema_init_) {
      log_ema_ = batch_lme;
      ema_init_ = true;
    } else {
      // log( r*exp(log_ema) + (1-r)*exp(batch_lme) ), max-shifted.
      const double hi = std::max(log_ema_, batch_lme);
      log_ema_ = hi + std::log(ema_rate_ * std::exp(log_ema_ - hi) +
                               (1.0 - ema_rate_) * std::exp(batch_lme - hi));
    }
  }
  const double denom = ema_init_ ? log_ema_ : batch_lme;
  return G::sub(t, G::mean_all(t, t_joint), G::log_mean_exp_ema(t, t_marg, denom));
}

double MineCritic::bound_value(const Matrix& x_features, const Matrix& z,
                               const std::vector<int>& perm, bool update_ema) {
  Tape t;
  return t.scalar(bound(t, t.input(x_features), t.input(z), perm, update_ema));
}

int label_loss(Tape& t, int logits_or_pred, const EncodedBatch& batch, bool regression) {
  if (regression) return G::mse_mean(t, logits_or_pred, batch.targets);
  return G::cross_entropy_mean(t, logits_or_pred, batch.labels);
}

}  // namespace cifm
