#include "cifm/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "cifm/common.hpp"
#include "cifm/rng.hpp"

namespace cifm::oracle {

double gaussian_mi(double rho) {
  if (std::fabs(rho) >= 1.0) throw UsageError("gaussian_mi: |rho| must be below 1");
  return -0.5 * std::log1p(-rho * rho);
}

GaussianPairs sample_gaussian_pairs(double rho, int n, uint64_t seed) {
  if (std::fabs(rho) >= 1.0) throw UsageError("sample_gaussian_pairs: |rho| must be below 1");
  if (n < 1) throw UsageError("sample_gaussian_pairs: n must be positive");
  Rng rng(seed);
  GaussianPairs out{Matrix(n, 1), Matrix(n, 1)};
  const double tail = std::sqrt(1.0 - rho * rho);
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    out.x.at(i, 0) = x;
    out.y.at(i, 0) = rho * x + tail * rng.normal();
  }
  return out;
}

double discrete_mi_bruteforce(const IntMatrix& joint_counts) {
  double total = 0.0;
  for (int32_t c : joint_counts.a) {
    if (c < 0) throw UsageError("discrete_mi_bruteforce: negative count");
    total += c;
  }
  if (total <= 0.0) throw UsageError("discrete_mi_bruteforce: all-zero table");
  std::vector<double> row(joint_counts.rows, 0.0), col(joint_counts.cols, 0.0);
  for (int i = 0; i < joint_counts.rows; ++i)
    for (int j = 0; j < joint_counts.cols; ++j) {
      row[i] += joint_counts.at(i, j);
      col[j] += joint_counts.at(i, j);
    }
  double mi = 0.0;
  for (int i = 0; i < joint_counts.rows; ++i)
    for (int j = 0; j < joint_counts.cols; ++j) {
      const double nij = joint_counts.at(i, j);
      if (nij == 0.0) continue;
      const double pij = nij / total;
      mi += pij * std::log(pij * total * total / (row[i] * col[j]));
    }
  return std::max(mi, 0.0);
}

namespace {

std::string join(const std::vector<std::string>& toks) {
  std::string out;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

std::string filler(Rng& rng) { return "f" + std::to_string(rng.uniform_int(20)); }

Example keyword_example(int label, const std::vector<std::string>& keywords, double flip_p,
                        Rng& rng) {
  std::vector<std::string> toks;
  const int n_fill = 8 + static_cast<int>(rng.uniform_int(5));
  for (int i = 0; i < n_fill; ++i) toks.push_back(filler(rng));
  int kw_label = label;
  if (flip_p > 0.0 && rng.bernoulli(flip_p)) {
    const int shift = 1 + static_cast<int>(rng.uniform_int(keywords.size() - 1));
    kw_label = (label + shift) % static_cast<int>(keywords.size());
  }
  const int copies = 1 + static_cast<int>(rng.uniform_int(2));
  for (int c = 0; c < copies; ++c) {
    const size_t pos = rng.uniform_int(toks.size() + 1);
    toks.insert(toks.begin() + pos, keywords[kw_label]);
  }
  Example e;
  e.text = join(toks);
  e.label = label;
  return e;
}

Example xor_example(int label, Rng& rng) {
  // Both classes contain exactly two 'ma' and two 'mb' tokens, so bag
  // statistics are class-independent; only adjacency carries the label.
  std::vector<std::pair<std::string, std::string>> pairs;
  if (label == 0)
    pairs = {{"ma", "ma"}, {"mb", "mb"}};
  else
    pairs = {{"ma", "mb"}, {"mb", "ma"}};
  if (rng.bernoulli(0.5)) std::swap(pairs[0], pairs[1]);
  std::vector<std::string> toks;
  const int pre = static_cast<int>(rng.uniform_int(3));
  const int mid = 1 + static_cast<int>(rng.uniform_int(3));
  const int post = static_cast<int>(rng.uniform_int(3));
  for (int i = 0; i < pre; ++i) toks.push_back(filler(rng));
  toks.push_back(pairs[0].first);
  toks.push_back(pairs[0].second);
  for (int i = 0; i < mid; ++i) toks.push_back(filler(rng));
  toks.push_back(pairs[1].first);
  toks.push_back(pairs[1].second);
  for (int i = 0; i < post; ++i) toks.push_back(filler(rng));
  Example e;
  e.text = join(toks);
  e.label = label;
  return e;
}

Example regression_example(Rng& rng) {
  std::vector<std::string> toks;
  const int plus = static_cast<int>(rng.uniform_int(6));
  const int minus = static_cast<int>(rng.uniform_int(6));
  for (int i = 0; i < 8; ++i) toks.push_back(filler(rng));
  for (int i = 0; i < plus; ++i) toks.insert(toks.begin() + rng.uniform_int(toks.size() + 1), "plus");
  for (int i = 0; i < minus; ++i)
    toks.insert(toks.begin() + rng.uniform_int(toks.size() + 1), "minus");
  Example e;
  e.text = join(toks);
  e.target = 0.1 * (plus - minus) + 0.05 * rng.normal();
  return e;
}

std::vector<Example> make_split(const std::string& kind, int n, int num_classes, Rng& rng,
                                const std::vector<std::string>& keywords, double flip_p) {
  std::vector<Example> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int label = num_classes > 0 ? i % num_classes : -1;
    if (kind == "xor")
      out.push_back(xor_example(label, rng));
    else if (kind == "regression")
      out.push_back(regression_example(rng));
    else
      out.push_back(keyword_example(label, keywords, flip_p, rng));
  }
  rng.shuffle(out);
  return out;
}

Corpus build_corpus(const std::string& kind, int train_n, uint64_t seed, int num_classes,
                    const std::vector<std::string>& keywords, double flip_p) {
  if (train_n < num_classes * 2) throw UsageError("make_synthetic_corpus: train_n too small");
  Corpus c;
  c.name = "synthetic-" + kind;
  c.regression = kind == "regression";
  for (int k = 0; k < num_classes; ++k) c.class_names.push_back("c" + std::to_string(k));
  Rng rng(seed);
  Rng train_rng = rng.fork(1), valid_rng = rng.fork(2), test_rng = rng.fork(3);
  const int held = std::max(num_classes > 0 ? num_classes : 2, train_n / 3);
  c.train = make_split(kind, train_n, num_classes, train_rng, keywords, flip_p);
  c.valid = make_split(kind, held, num_classes, valid_rng, keywords, flip_p);
  c.test = make_split(kind, held, num_classes, test_rng, keywords, flip_p);
  return c;
}

}  // namespace

Corpus make_synthetic_corpus(const std::string& kind, int train_n, uint64_t seed) {
  if (kind == "separable")
    return build_corpus(kind, train_n, seed, 3, {"alpha", "bravo", "charlie"}, 0.0);
  if (kind == "noisy")
    return build_corpus(kind, train_n, seed, 3, {"alpha", "bravo", "charlie"}, 0.25);
  if (kind == "taxonomy-pair") return make_taxonomy_pair(train_n, seed).fine;
  if (kind == "regression") return build_corpus(kind, train_n, seed, 0, {}, 0.0);
  if (kind == "xor") return build_corpus(kind, train_n, seed, 2, {}, 0.0);
  throw ConfigError("make_synthetic_corpus: unknown kind '" + kind + "'");
}

TaxonomyPair make_taxonomy_pair(int train_n, uint64_t seed) {
  TaxonomyPair out;
  out.fine = build_corpus("taxonomy-pair", train_n, seed, 4,
                          {"kilo", "lima", "mike", "november"}, 0.15);
  out.fine.name = "synthetic-taxonomy-fine";
  out.fine.class_names = {"fine0", "fine1", "fine2", "fine3"};
  out.coarse = out.fine;
  out.coarse.name = "synthetic-taxonomy-coarse";
  out.coarse.class_names = {"coarseA", "coarseB"};
  for (auto* split : {&out.coarse.train, &out.coarse.valid, &out.coarse.test})
    for (Example& e : *split) e.label = e.label / 2;
  for (int k = 0; k < 4; ++k)
    out.fine_to_coarse[out.fine.class_names[k]] = out.coarse.class_names[k / 2];
  return out;
}

}  // namespace cifm::oracle
