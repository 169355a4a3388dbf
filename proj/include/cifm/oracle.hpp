// Independent ground truth for the test suites: closed-form and brute-force
// mutual information, correlated Gaussian samplers, and synthetic corpora
// with planted structure.  Nothing here shares numerical code with the
// estimators it validates.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cifm/data.hpp"
#include "cifm/tensor.hpp"

namespace cifm::oracle {

// Mutual information of a bivariate standard Gaussian pair, in nats.
double gaussian_mi(double rho);

// Draws n pairs (x, y) with y = rho*x + sqrt(1-rho^2)*noise; columns of the
// returned matrices are 1-wide.
struct GaussianPairs {
  Matrix x;  // n x 1
  Matrix y;  // n x 1
};
GaussianPairs sample_gaussian_pairs(double rho, int n, uint64_t seed);

// Plug-in MI of an empirical joint count table, by full enumeration (nats).
double discrete_mi_bruteforce(const IntMatrix& joint_counts);

// Synthetic corpora with known structure.  Kinds:
//   separable     3 classes, disjoint planted keywords; linearly separable
//   noisy         3 classes, keywords flipped/omitted with fixed probability
//   taxonomy-pair 4 fine classes (the coarse companion comes from
//                 make_taxonomy_pair)
//   regression    real target planted as a difference of keyword counts
//   xor           class is an adjacency pattern of two marker tokens while
//                 per-example token counts are identical across classes, so
//                 any order-insensitive (bag) model is at chance
// Split sizes are train_n / train_n/3 / train_n/3.
Corpus make_synthetic_corpus(const std::string& kind, int train_n, uint64_t seed);

struct TaxonomyPair {
  Corpus fine;    // 4 classes
  Corpus coarse;  // 2 classes, deterministic merge of the fine ones
  std::map<std::string, std::string> fine_to_coarse;
};
TaxonomyPair make_taxonomy_pair(int train_n, uint64_t seed);

}  // namespace cifm::oracle
