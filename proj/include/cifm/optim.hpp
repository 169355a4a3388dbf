// Adamax with optional L2 weight decay and global-norm gradient clipping.

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cifm/params.hpp"

namespace cifm {

struct OptimConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // added to gradients (L2)
  double clip_norm = 0.0;     // 0 disables clipping
};

class Adamax {
 public:
  explicit Adamax(OptimConfig cfg) : cfg_(cfg) {}

  // One update over every parameter of every store; a single bias-correction
  // step even when multiple stores participate.  Gradients are consumed as
  // found (callers zero them between steps).
  void step(const std::vector<ParamStore*>& stores);
  void step(ParamStore& store) { step(std::vector<ParamStore*>{&store}); }

  int64_t steps_taken() const { return t_; }
  const OptimConfig& config() const { return cfg_; }

 private:
  OptimConfig cfg_;
  int64_t t_ = 0;
  std::unordered_map<std::string, Matrix> m_;  // first moment
  std::unordered_map<std::string, Matrix> u_;  // infinity norm
};

}  // namespace cifm
