#include "cifm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "cifm/common.hpp"

namespace cifm::metrics {

namespace {

struct Confusion {
  double tp = 0, fp = 0, fn = 0;
};

Confusion confusion_of(const std::vector<int32_t>& gold, const std::vector<int32_t>& pred,
                       int cls) {
  Confusion c;
  for (size_t i = 0; i < gold.size(); ++i) {
    const bool g = gold[i] == cls, p = pred[i] == cls;
    if (g && p)
      ++c.tp;
    else if (!g && p)
      ++c.fp;
    else if (g && !p)
      ++c.fn;
  }
  return c;
}

void require_aligned(const std::vector<int32_t>& gold, const std::vector<int32_t>& pred) {
  if (gold.empty()) throw UsageError("metric called on empty input");
  if (gold.size() != pred.size()) throw UsageError("gold/pred length mismatch");
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double choose2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

double f1_of_class(const std::vector<int32_t>& gold, const std::vector<int32_t>& pred,
                   int cls) {
  require_aligned(gold, pred);
  const Confusion c = confusion_of(gold, pred, cls);
  const double prec = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
  const double rec = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
  return prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
}

double macro_f1(const std::vector<int32_t>& gold, const std::vector<int32_t>& pred,
                int num_classes, const std::vector<int>& subset) {
  require_aligned(gold, pred);
  if (num_classes < 1) throw UsageError("macro_f1: num_classes must be positive");
  std::vector<int> classes = subset;
  if (classes.empty())
    for (int k = 0; k < num_classes; ++k) classes.push_back(k);
  double sum = 0.0;
  for (int cls : classes) sum += f1_of_class(gold, pred, cls);
  return sum / classes.size();
}

double macro_recall(const std::vector<int32_t>& gold, const std::vector<int32_t>& pred,
                    int num_classes) {
  require_aligned(gold, pred);
  if (num_classes < 1) throw UsageError("macro_recall: num_classes must be positive");
  double sum = 0.0;
  for (int cls = 0; cls < num_classes; ++cls) {
    const Confusion c = confusion_of(gold, pred, cls);
    sum += c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
  }
  return sum / num_classes;
}

double accuracy(const std::vector<int32_t>& gold, const std::vector<int32_t>& pred) {
  require_aligned(gold, pred);
  double hits = 0;
  for (size_t i = 0; i < gold.size(); ++i) hits += gold[i] == pred[i];
  return hits / gold.size();
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw UsageError("pearson: length mismatch");
  const size_t n = x.size();
  if (n < 2) throw UsageError("pearson: need at least two points");
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw NumericError("pearson: correlation undefined for constant input");
  return sxy / std::sqrt(sxx * syy);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw UsageError("spearman: length mismatch");
  return pearson(average_ranks(x), average_ranks(y));
}

double global_average(const std::vector<std::vector<double>>& per_task_values) {
  if (per_task_values.empty()) throw UsageError("global_average: no tasks");
  double sum = 0.0;
  for (const std::vector<double>& task : per_task_values) {
    if (task.empty()) throw UsageError("global_average: task without metrics");
    double m = 0.0;
    for (double v : task) m += v;
    sum += m / task.size();
  }
  return sum / per_task_values.size();
}

double incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw NumericError("incomplete_beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  // I_x(a,b) = x^a (1-x)^b / (a B(a,b)) * 1/(1 + d1/(1 + d2/(1 + ...)))
  // evaluated with the modified Lentz method.
  auto cont_frac = [](double aa, double bb, double xx) {
    const double tiny = 1e-300;
    const int max_iter = 300;
    double c = 1.0, d = 1.0 - (aa + bb) * xx / (aa + 1.0);
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
      const double m2 = 2.0 * m;
      double num = m * (bb - m) * xx / ((aa + m2 - 1.0) * (aa + m2));
      d = 1.0 + num * d;
      if (std::fabs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::fabs(c) < tiny) c = tiny;
      d = 1.0 / d;
      h *= d * c;
      num = -(aa + m) * (aa + bb + m) * xx / ((aa + m2) * (aa + m2 + 1.0));
      d = 1.0 + num * d;
      if (std::fabs(d) < tiny) d = tiny;
      c = 1.0 + num / c;
      if (std::fabs(c) < tiny) c = tiny;
      d = 1.0 / d;
      const double delta = d * c;
      h *= delta;
      if (std::fabs(delta - 1.0) < 1e-14) return h;
    }
    throw NumericError("incomplete_beta: continued fraction did not converge");
  };
  const double ln_front = a * std::log(x) + b * std::log1p(-x) - std::log(a) -
                          (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(ln_front) * cont_frac(a, b, x);
  const double ln_front_sym = b * std::log1p(-x) + a * std::log(x) - std::log(b) -
                              (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
  return 1.0 - std::exp(ln_front_sym) * cont_frac(b, a, 1.0 - x);
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw UsageError("paired_t_test: length mismatch");
  const int n = static_cast<int>(a.size());
  if (n < 2) throw UsageError("paired_t_test: need at least two pairs");
  std::vector<double> d(n);
  for (int i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  var /= (n - 1);
  TTestResult r;
  r.df = n - 1;
  if (var == 0.0) {
    r.degenerate = true;
    r.t = mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity() * (mean > 0 ? 1 : -1);
    r.p = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / std::sqrt(var / n);
  const double df = r.df;
  r.p = incomplete_beta(df / 2.0, 0.5, df / (df + r.t * r.t));
  return r;
}

double uniformity(const Matrix& z, double t) {
  if (z.rows < 2) throw UsageError("uniformity: need at least two rows");
  Matrix u = z;
  for (int i = 0; i < u.rows; ++i) {
    double s = 0.0;
    const double* r = u.row(i);
    for (int j = 0; j < u.cols; ++j) s += r[j] * r[j];
    const double inv = 1.0 / std::max(std::sqrt(s), 1e-12);
    for (int j = 0; j < u.cols; ++j) u.row(i)[j] *= inv;
  }
  // log-mean-exp over distinct pairs, max-shifted for stability.
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(static_cast<size_t>(u.rows) * (u.rows - 1) / 2);
  for (int i = 0; i < u.rows; ++i)
    for (int j = i + 1; j < u.rows; ++j) {
      double d2 = 0.0;
      for (int c = 0; c < u.cols; ++c) {
        const double d = u.at(i, c) - u.at(j, c);
        d2 += d * d;
      }
      terms.push_back(-t * d2);
      max_term = std::max(max_term, terms.back());
    }
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - max_term);
  return max_term + std::log(acc / terms.size());
}

double ari(const std::vector<int32_t>& gold, const std::vector<int32_t>& clusters,
           bool* flagged) {
  require_aligned(gold, clusters);
  if (flagged) *flagged = false;
  std::map<int32_t, std::map<int32_t, double>> table;
  std::map<int32_t, double> row_sums, col_sums;
  for (size_t i = 0; i < gold.size(); ++i) {
    table[gold[i]][clusters[i]] += 1.0;
    row_sums[gold[i]] += 1.0;
    col_sums[clusters[i]] += 1.0;
  }
  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [g, row] : table)
    for (const auto& [c, nij] : row) sum_ij += choose2(nij);
  for (const auto& [g, n] : row_sums) sum_a += choose2(n);
  for (const auto& [c, n] : col_sums) sum_b += choose2(n);
  const double pairs = choose2(static_cast<double>(gold.size()));
  const double expected = sum_a * sum_b / pairs;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) {
    if (flagged) *flagged = true;
    return 1.0;
  }
  return (sum_ij - expected) / (max_index - expected);
}

double compute_named_metric(const std::string& name, const std::vector<int32_t>& gold,
                            const std::vector<int32_t>& pred, int num_classes,
                            const std::vector<double>& gold_scores,
                            const std::vector<double>& pred_scores) {
  if (name == "macro_f1") return macro_f1(gold, pred, num_classes);
  if (name == "accuracy") return accuracy(gold, pred);
  if (name == "macro_recall") return macro_recall(gold, pred, num_classes);
  if (name.rfind("f1_class:", 0) == 0) {
    const int cls = std::stoi(name.substr(9));
    if (cls < 0 || cls >= num_classes)
      throw ConfigError("metric '" + name + "': class index outside [0," +
                        std::to_string(num_classes) + ")");
    return f1_of_class(gold, pred, cls);
  }
  if (name.rfind("macro_f1_subset:", 0) == 0) {
    std::vector<int> subset;
    std::string rest = name.substr(16);
    size_t pos = 0;
    while (pos < rest.size()) {
      size_t comma = rest.find(',', pos);
      if (comma == std::string::npos) comma = rest.size();
      subset.push_back(std::stoi(rest.substr(pos, comma - pos)));
      pos = comma + 1;
    }
    for (int cls : subset)
      if (cls < 0 || cls >= num_classes)
        throw ConfigError("metric '" + name + "': class index outside [0," +
                          std::to_string(num_classes) + ")");
    return macro_f1(gold, pred, num_classes, subset);
  }
  if (name == "pearson") return pearson(gold_scores, pred_scores);
  if (name == "spearman") return spearman(gold_scores, pred_scores);
  if (name == "neg_mse") {
    if (gold_scores.size() != pred_scores.size() || gold_scores.empty())
      throw UsageError("neg_mse: score length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < gold_scores.size(); ++i) {
      const double d = gold_scores[i] - pred_scores[i];
      s += d * d;
    }
    return -s / gold_scores.size();
  }
  throw ConfigError("unknown metric '" + name + "'");
}

}  // namespace cifm::metrics
