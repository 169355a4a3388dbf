// Evaluation protocols around a trained encoder: noise and single-step
// adversarial robustness sweeps applied at the embedding layer,
// cross-taxonomy evaluation through explicit label maps, stratified
// training-set subsampling, and frozen-extractor transfer probes.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cifm/data.hpp"
#include "cifm/encoder.hpp"
#include "cifm/tensor.hpp"

namespace cifm {

struct SweepSpec {
  std::string kind = "random";  // "random" | "adversarial"
  std::vector<double> strengths = {0.0, 1.0, 2.0, 3.0, 4.0, 5.0};  // ascending
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
};

void validate_sweep(const SweepSpec& spec);

struct SweepPoint {
  double strength = 0.0;
  double mean = 0.0;             // metric averaged over seeds
  std::vector<double> per_seed;  // aligned with SweepSpec.seeds
};

// Evaluates the split under per-token-row perturbations of the embedding
// output: "random" adds seed-dependent Gaussian rows rescaled to L2 norm =
// strength; "adversarial" ascends the gradient of the clean loss at the true
// labels by `strength` per row (one step).  Strength 0 skips the recompute
// and reports the clean metric bit-for-bit.
std::vector<SweepPoint> robustness_sweep(Encoder& enc, const Tokenizer& tok,
                                         const std::vector<Example>& split,
                                         const Corpus& corpus, const std::string& metric,
                                         const SweepSpec& spec, int batch_size);

// Plot-ready rows: strength,seed,metric,value.
void write_sweep_csv(const std::string& path, const std::string& metric,
                     const SweepSpec& spec, const std::vector<SweepPoint>& curve);

struct OodReport {
  double metric = 0.0;
  int evaluated = 0;         // target samples whose label maps into the source
  int excluded = 0;          // target samples outside the map
  std::vector<int> support;  // evaluated gold counts per source class
};

// Scores a source-trained model on another corpus's test split.  label_map
// sends target class names to source class names; target samples without an
// entry are excluded from the metric support.  Map values naming unknown
// source classes are configuration errors; a map covering zero samples is a
// usage error.
OodReport ood_eval(Encoder& enc, const Tokenizer& tok, const Corpus& target,
                   const std::vector<std::string>& source_classes,
                   const std::map<std::string, std::string>& label_map,
                   const std::string& metric, int batch_size);

struct Subsample {
  std::vector<int> indices;  // ascending positions into the split
  bool floored = false;      // a class quota was raised to one sample
};

// Stratified draw of round(ratio*N) examples: per-class quotas by largest
// remainder, uniform without replacement inside each class, deterministic in
// (ratio, seed).  Classes whose quota would be zero are floored to one
// sample (flagged), which may overshoot the rounded total.  num_classes 0
// treats the split as a single stratum (regression).
Subsample subsample_indices(const std::vector<Example>& split, double ratio, uint64_t seed,
                            int num_classes);

// One subset per (ratio, seed) pair, indexed [ratio][seed].
std::vector<std::vector<Subsample>> subsample_protocol(const std::vector<Example>& split,
                                                       const std::vector<double>& ratios,
                                                       const std::vector<uint64_t>& seeds,
                                                       int num_classes);

struct TransferSpec {
  std::string probe = "linear";  // "linear" | "cnn"
  int epochs = 30;
  int batch_size = 64;
  double lr = 0.01;
  uint64_t seed = 1;
  std::vector<int> cnn_widths = {3, 4, 5};  // token-window sizes
  int cnn_filters = 64;                     // filters per width
};

void validate_transfer(const TransferSpec& spec);

struct ProbeReport {
  double test_metric = 0.0;
  double valid_metric = 0.0;  // best epoch's validation metric
  int best_epoch = -1;
  uint64_t extractor_checksum = 0;  // verified unchanged by training
};

// Trains a fresh classifier head on frozen features of `target`: the linear
// probe reads the pooled representation, the cnn probe slides ReLU+max-pool
// convolutions over the per-token representations.  Only probe parameters
// move; the extractor checksum is verified before/after and drift raises
// ConsistencyError.
ProbeReport transfer_probe(Encoder& frozen, const Tokenizer& tok, const Corpus& target,
                           const TransferSpec& spec, const std::string& metric);

struct TransferReport {
  std::vector<ProbeReport> per_target;
  double average = 0.0;  // mean test metric across targets
};

TransferReport transfer_all(Encoder& frozen, const Tokenizer& tok,
                            const std::vector<const Corpus*>& targets,
                            const TransferSpec& spec, const std::string& metric);

}  // namespace cifm
