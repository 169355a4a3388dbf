#include "cifm/objective.hpp"

#include <cmath>
#include <sstream>

#include "cifm/common.hpp"
#include "cifm/rng.hpp"

namespace cifm {

namespace G = graph;

void validate_objective(const ObjectiveConfig& cfg) {
  if (cfg.beta < 0.0) throw ConfigError("objective: beta must be non-negative");
  if (cfg.mi_estimator != "infonce" && cfg.mi_estimator != "mine")
    throw ConfigError("objective: unknown mi_estimator '" + cfg.mi_estimator + "'");
  if (cfg.tau <= 0.0) throw ConfigError("objective: tau must be positive");
  if (cfg.cim.has_value()) {
    for (const std::string& group : cfg.cim->target_groups)
      if (group == "mine_critic")
        throw ConfigError("objective: perturbation cannot target the critic");
    if (cfg.cim->target_groups.empty())
      throw ConfigError("objective: cim.target_groups must not be empty");
  }
}

std::pair<uint64_t, uint64_t> view_seeds(uint64_t step_seed) {
  Rng r(step_seed);
  const uint64_t a = r.next_u64();
  const uint64_t b = r.next_u64();
  return {a, b};
}

int ifm_loss(Tape& t, const EncodeResult& anchor, const EncodeResult* positive,
             MineCritic* critic, const std::vector<int>& mine_perm, bool update_mine_ema,
             const EncodedBatch& batch, const ObjectiveConfig& cfg, LossBreakdown* bd) {
  validate_objective(cfg);
  const int label = label_loss(t, anchor.logits, batch, cfg.regression);

  LossBreakdown out;
  out.label_term = t.scalar(label);

  int node = label;
  if (cfg.beta > 0.0) {
    int bound = -1;
    if (cfg.mi_estimator == "infonce") {
      if (positive == nullptr)
        throw UsageError("objective: contrastive estimator needs the second view");
      InfoNceConfig icfg;
      icfg.tau = cfg.tau;
      icfg.k_negatives = cfg.infonce_k;
      bound = infonce_bound(t, anchor.pooled, positive->pooled, icfg);
    } else {
      if (critic == nullptr)
        throw UsageError("objective: critic estimator needs a MineCritic");
      bound = critic->bound(t, anchor.hidden_prepool, anchor.pooled, mine_perm,
                            update_mine_ema);
    }
    out.input_term = t.scalar(bound);
    node = G::sub(t, label, G::scale(t, bound, cfg.beta));
  }
  out.ifm_total = t.scalar(node);
  out.grand_total = out.ifm_total;
  if (!std::isfinite(out.ifm_total)) {
    std::ostringstream msg;
    msg << "objective: loss is not finite (label_term=" << out.label_term
        << ", input_term=" << out.input_term << ", total=" << out.ifm_total << ")";
    throw NumericError(msg.str());
  }
  if (bd != nullptr) *bd = out;
  return node;
}

int compose_loss(Tape& t, Encoder& enc, MineCritic* critic, const EncodedBatch& batch,
                 const ObjectiveConfig& cfg, uint64_t step_seed, bool dropout_active,
                 const std::vector<int>& mine_perm, bool update_mine_ema,
                 LossBreakdown* bd) {
  validate_objective(cfg);
  const auto [seed_a, seed_b] = view_seeds(step_seed);
  const EncodeResult anchor = enc.encode(t, batch, dropout_active, seed_a);
  const bool needs_positive = cfg.beta > 0.0 && cfg.mi_estimator == "infonce";
  EncodeResult positive;
  if (needs_positive) positive = enc.encode(t, batch, dropout_active, seed_b);
  return ifm_loss(t, anchor, needs_positive ? &positive : nullptr, critic, mine_perm,
                  update_mine_ema, batch, cfg, bd);
}

StepOutcome cifm_loss(Encoder& enc, MineCritic* critic, const EncodedBatch& batch,
                      const ObjectiveConfig& cfg, Adamax& opt, Rng& draw_rng,
                      uint64_t step_seed) {
  validate_objective(cfg);
  const bool uses_critic = cfg.beta > 0.0 && cfg.mi_estimator == "mine";
  if (uses_critic && critic == nullptr)
    throw UsageError("objective: critic estimator needs a MineCritic");

  std::vector<ParamStore*> stores = {&enc.params()};
  if (uses_critic) stores.push_back(&critic->params());

  // One marginal shuffle per step, shared by the clean and perturbed passes
  // so the two losses are comparable.
  std::vector<int> mine_perm;
  if (uses_critic) mine_perm = draw_rng.permutation(batch.batch);

  StepOutcome outcome;
  auto loss_with_grad = [&]() {
    Tape t;
    const int node = compose_loss(t, enc, uses_critic ? critic : nullptr, batch, cfg,
                                  step_seed, /*dropout_active=*/true, mine_perm,
                                  /*update_mine_ema=*/true, &outcome.breakdown);
    t.backward(node);
    return outcome.breakdown.grand_total;
  };

  if (!cfg.cim.has_value()) {
    for (ParamStore* ps : stores) ps->zero_grads();
    outcome.clean_loss = loss_with_grad();
    opt.step(stores);
    return outcome;
  }

  std::vector<std::pair<std::string, std::vector<std::string>>> groups;
  for (const std::string& g : cfg.cim->target_groups)
    groups.emplace_back(g, enc.group_params(g));

  const CimOutcome cim = cim_step(stores, enc.params(), groups, loss_with_grad, opt,
                                  *cfg.cim, draw_rng);
  outcome.breakdown.cim_applied = cim.applied;
  outcome.breakdown.grand_total = cim.trained_loss;
  outcome.clean_loss = cim.clean_loss;
  outcome.cim_degenerate = cim.degenerate;
  return outcome;
}

}  // namespace cifm
