// Worst-case norm-bounded perturbations: single-step gradient-direction
// deltas on targeted weight groups during training, and embedding-space
// noise at evaluation time.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cifm/optim.hpp"
#include "cifm/params.hpp"
#include "cifm/rng.hpp"

namespace cifm {

struct PerturbationSpec {
  double epsilon = 0.1;
  double rate = 1.0;     // probability a step applies the perturbation
  int norm_order = 2;    // only L2 supported
  std::vector<std::string> target_groups = {"embedding", "layer.0"};
  // Blend of clean vs perturbed gradients for the optimizer update when the
  // perturbation applies; 1 trains on the perturbed pass alone.
  double weight = 1.0;
};

struct FgmResult {
  // delta = -epsilon * g / max(||g||_2, floor), with the norm pooled over
  // each group's tensors; keyed by parameter name.
  std::unordered_map<std::string, Matrix> delta;
  std::vector<std::string> degenerate_groups;  // all-zero gradients
};

// `groups` maps group name -> member parameter names.  Gradients are read
// from the store.  Note the sign: the delta descends the supplied gradient;
// callers that want a loss-ascending delta (adversarial training does) pass
// the negated loss gradient, mirroring the log-likelihood formulation.
FgmResult fgm_delta(const ParamStore& store,
                    const std::vector<std::pair<std::string, std::vector<std::string>>>& groups,
                    double epsilon, double floor = 1e-12);

struct CimOutcome {
  bool applied = false;
  bool degenerate = false;    // perturbation skipped: all target grads zero
  double clean_loss = 0.0;
  double trained_loss = 0.0;  // loss whose gradients the optimizer consumed
};

// One optimization step with conditional adversarial weight perturbation:
// evaluate the loss and its gradients, draw Bernoulli(rate); on success,
// push the targeted weights one loss-ascending FGM step, re-evaluate, then
// restore the weights bit-exactly before the optimizer update, so the final
// parameters equal pre-step values plus an update computed from the
// perturbed-pass gradients.  `loss_with_grad` must evaluate the objective at
// the current weights and accumulate gradients into the stores.
CimOutcome cim_step(const std::vector<ParamStore*>& stores, ParamStore& target_store,
                    const std::vector<std::pair<std::string, std::vector<std::string>>>& groups,
                    const std::function<double()>& loss_with_grad, Adamax& opt,
                    const PerturbationSpec& spec, Rng& draw_rng);

// Evaluation-time row perturbations.  kind "random": per-row Gaussian noise
// rescaled to L2 norm = strength (needs rng); "adversarial": + strength *
// g_row / ||g_row||_2 (needs grad).  strength 0 returns the input exactly.
Matrix test_time_perturb(const Matrix& rows, const std::string& kind, double strength,
                         const Matrix* grad = nullptr, Rng* rng = nullptr);

}  // namespace cifm
