// Task metrics, aggregate scores, the paired t-test, and
// representation-quality measures.  All functions are pure.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cifm/tensor.hpp"

namespace cifm::metrics {

// Unweighted mean of per-class F1.  Classes in `subset` (or all classes in
// [0, num_classes) when subset is empty) contribute F1 = 0 when absent from
// both gold and pred.  Zero-division conventions: empty denominator -> 0.
double macro_f1(const std::vector<int32_t>& gold, const std::vector<int32_t>& pred,
                int num_classes, const std::vector<int>& subset = {});

double f1_of_class(const std::vector<int32_t>& gold, const std::vector<int32_t>& pred, int cls);

double macro_recall(const std::vector<int32_t>& gold, const std::vector<int32_t>& pred,
                    int num_classes);

double accuracy(const std::vector<int32_t>& gold, const std::vector<int32_t>& pred);

// Standard product-moment correlation; throws NumericError on constant input.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Pearson over average-rank transforms.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Mean over tasks of the mean over each task's metric values.
double global_average(const std::vector<std::vector<double>>& per_task_values);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int df = 0;
  bool degenerate = false;  // zero-variance differences
};

// Two-sided paired t-test across aligned samples (e.g. seeds).
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// log of the mean over distinct pairs of exp(-t * ||zi - zj||^2); rows are
// unit-normalized first.  Lower is more uniform.
double uniformity(const Matrix& z, double t = 2.0);

// Adjusted Rand index via pair counting.  The degenerate single-cluster-on-
// both-sides case returns 1.0 and sets *flagged when provided.
double ari(const std::vector<int32_t>& gold, const std::vector<int32_t>& clusters,
           bool* flagged = nullptr);

// Regularized incomplete beta function I_x(a, b) (continued fraction).
double incomplete_beta(double a, double b, double x);

// Named dispatch used by configs: macro_f1 | accuracy | macro_recall |
// f1_class:<k> | macro_f1_subset:<i,j,...> for classification,
// pearson | spearman | neg_mse for regression.
double compute_named_metric(const std::string& name, const std::vector<int32_t>& gold,
                            const std::vector<int32_t>& pred, int num_classes,
                            const std::vector<double>& gold_scores = {},
                            const std::vector<double>& pred_scores = {});

}  // namespace cifm::metrics
