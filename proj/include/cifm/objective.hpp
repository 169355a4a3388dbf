// Composition of the training objective: the minimization-canonical loss
//
//     loss = label_term − beta · (mutual-information lower bound)
//
// optionally wrapped in the conditional adversarial weight-perturbation step.
// Every maximization in the method is canonicalized to a minimization here,
// in this one file, to keep sign conventions from scattering.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cifm/encoder.hpp"
#include "cifm/estimators.hpp"
#include "cifm/optim.hpp"
#include "cifm/perturbation.hpp"

namespace cifm {

struct ObjectiveConfig {
  double beta = 0.1;                  // trade-off weight on the MI bound
  double tau = 0.1;                   // contrastive temperature
  std::string mi_estimator = "infonce";  // "infonce" | "mine"
  bool regression = false;
  int infonce_k = -1;                 // forwarded to InfoNceConfig.k_negatives
  std::optional<PerturbationSpec> cim;  // absent = no adversarial pass
};

struct LossBreakdown {
  double label_term = 0.0;   // CE / MSE surrogate value
  double input_term = 0.0;   // MI lower-bound value (0 when beta == 0)
  double ifm_total = 0.0;    // label_term - beta * input_term
  bool cim_applied = false;  // adversarial pass actually taken this step
  double grand_total = 0.0;  // loss the optimizer update was computed from
};

// Deterministic per-step dropout seeds for the two views.
std::pair<uint64_t, uint64_t> view_seeds(uint64_t step_seed);

// Loss node over already-encoded outputs.  `positive` may be null when
// beta == 0 or the estimator does not need a second view; the contrastive
// estimator requires it (UsageError otherwise).  The critic estimator reads
// x-features from anchor.hidden_prepool and z from anchor.pooled and needs
// `critic` + `mine_perm`.  Breakdown scalars are filled from the tape.
int ifm_loss(Tape& t, const EncodeResult& anchor, const EncodeResult* positive,
             MineCritic* critic, const std::vector<int>& mine_perm, bool update_mine_ema,
             const EncodedBatch& batch, const ObjectiveConfig& cfg, LossBreakdown* bd);

// Encodes the views a step needs (skipping the second view when beta == 0,
// which makes the beta=0 configuration bit-identical to the plain CE/MSE
// baseline) and composes ifm_loss.
int compose_loss(Tape& t, Encoder& enc, MineCritic* critic, const EncodedBatch& batch,
                 const ObjectiveConfig& cfg, uint64_t step_seed, bool dropout_active,
                 const std::vector<int>& mine_perm, bool update_mine_ema,
                 LossBreakdown* bd);

// One full training step: builds the loss, optionally runs the adversarial
// weight-perturbation pass (cfg.cim), and applies the optimizer update.
// Returns the breakdown of the pass the update was computed from; clean_loss
// carries the unperturbed total for logging.
struct StepOutcome {
  LossBreakdown breakdown;
  double clean_loss = 0.0;
  bool cim_degenerate = false;
};
StepOutcome cifm_loss(Encoder& enc, MineCritic* critic, const EncodedBatch& batch,
                      const ObjectiveConfig& cfg, Adamax& opt, Rng& draw_rng,
                      uint64_t step_seed);

// Validates field ranges and estimator/critic pairing; used by cifm_loss and
// the config loader.
void validate_objective(const ObjectiveConfig& cfg);

}  // namespace cifm
