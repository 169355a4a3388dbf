#include "cifm/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "cifm/common.hpp"
#include "cifm/estimators.hpp"
#include "cifm/graph.hpp"
#include "cifm/metrics.hpp"
#include "cifm/optim.hpp"
#include "cifm/perturbation.hpp"
#include "cifm/rng.hpp"
#include "cifm/trainer.hpp"

namespace cifm {

namespace G = graph;

void validate_sweep(const SweepSpec& spec) {
  if (spec.kind != "random" && spec.kind != "adversarial")
    throw ConfigError("sweep: unknown kind '" + spec.kind + "'");
  if (spec.strengths.empty()) throw ConfigError("sweep: at least one strength is required");
  for (size_t i = 0; i < spec.strengths.size(); ++i) {
    if (spec.strengths[i] < 0.0) throw ConfigError("sweep: strengths must be non-negative");
    if (i > 0 && spec.strengths[i] <= spec.strengths[i - 1])
      throw ConfigError("sweep: strengths must be sorted ascending");
  }
  if (spec.seeds.empty()) throw ConfigError("sweep: at least one seed is required");
}

std::vector<SweepPoint> robustness_sweep(Encoder& enc, const Tokenizer& tok,
                                         const std::vector<Example>& split,
                                         const Corpus& corpus, const std::string& metric,
                                         const SweepSpec& spec, int batch_size) {
  validate_sweep(spec);
  if (split.empty()) throw UsageError("sweep: cannot sweep an empty split");

  const EvalOutput clean = evaluate_split(enc, tok, split, corpus, metric, batch_size);
  const int n = static_cast<int>(split.size());
  const int d = enc.config().d_model;

  // Encode once; for the adversarial kind also harvest d(loss)/d(embedding
  // rows) of the clean model at the true labels, which every strength and
  // seed reuses.
  struct Prepared {
    EncodedBatch batch;
    std::vector<int> idx;
    Matrix grad;
  };
  std::vector<Prepared> prepared;
  for (const std::vector<int>& idx : index_batches(n, batch_size)) {
    Prepared p;
    p.idx = idx;
    p.batch = tok.encode(split, idx, corpus.regression);
    if (spec.kind == "adversarial") {
      Tape t;
      const EncodeResult res = enc.encode(t, p.batch, /*dropout_active=*/false, /*seed=*/0);
      const int loss = label_loss(t, res.logits, p.batch, corpus.regression);
      t.backward(loss);
      p.grad = t.grad(res.embeddings);
    }
    prepared.push_back(std::move(p));
  }

  std::vector<SweepPoint> curve;
  for (size_t si = 0; si < spec.strengths.size(); ++si) {
    const double strength = spec.strengths[si];
    SweepPoint pt;
    pt.strength = strength;

    if (strength == 0.0) {
      pt.per_seed.assign(spec.seeds.size(), clean.metric);
      pt.mean = clean.metric;
      curve.push_back(std::move(pt));
      continue;
    }

    for (uint64_t seed : spec.seeds) {
      Rng rng = Rng(seed).fork(1000 + si);
      std::vector<int32_t> gold, pred;
      std::vector<double> gold_scores, pred_scores;
      for (const Prepared& p : prepared) {
        const Matrix zero_rows(p.batch.batch * p.batch.len, d);
        const Matrix offset =
            spec.kind == "random"
                ? test_time_perturb(zero_rows, "random", strength, nullptr, &rng)
                : test_time_perturb(zero_rows, "adversarial", strength, &p.grad, nullptr);

        Tape t;
        const EncodeResult res =
            enc.encode(t, p.batch, /*dropout_active=*/false, /*seed=*/0, &offset);
        const Matrix& logits = t.val(res.logits);
        for (int i = 0; i < p.batch.batch; ++i) {
          if (corpus.regression) {
            pred_scores.push_back(logits.at(i, 0));
            gold_scores.push_back(split[p.idx[i]].target);
          } else {
            int arg = 0;
            for (int c = 1; c < logits.cols; ++c)
              if (logits.at(i, c) > logits.at(i, arg)) arg = c;
            pred.push_back(arg);
            gold.push_back(split[p.idx[i]].label);
          }
        }
      }
      pt.per_seed.push_back(metrics::compute_named_metric(metric, gold, pred,
                                                          corpus.num_classes(), gold_scores,
                                                          pred_scores));
    }

    double sum = 0.0;
    for (double v : pt.per_seed) sum += v;
    pt.mean = sum / static_cast<double>(pt.per_seed.size());
    curve.push_back(std::move(pt));
  }
  return curve;
}

void write_sweep_csv(const std::string& path, const std::string& metric,
                     const SweepSpec& spec, const std::vector<SweepPoint>& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("sweep: cannot open csv file " + path);
  out << "strength,seed,metric,value\n";
  out << std::setprecision(17);
  for (const SweepPoint& pt : curve) {
    if (pt.per_seed.size() != spec.seeds.size())
      throw UsageError("sweep: curve per-seed values do not match the spec seeds");
    for (size_t i = 0; i < spec.seeds.size(); ++i)
      out << pt.strength << ',' << spec.seeds[i] << ',' << metric << ',' << pt.per_seed[i]
          << '\n';
  }
}

OodReport ood_eval(Encoder& enc, const Tokenizer& tok, const Corpus& target,
                   const std::vector<std::string>& source_classes,
                   const std::map<std::string, std::string>& label_map,
                   const std::string& metric, int batch_size) {
  if (target.regression) throw UsageError("ood_eval: target must be a classification corpus");
  if (source_classes.empty()) throw UsageError("ood_eval: source taxonomy is empty");

  auto source_index = [&](const std::string& name) {
    const auto it = std::find(source_classes.begin(), source_classes.end(), name);
    return it == source_classes.end() ? -1 : static_cast<int>(it - source_classes.begin());
  };
  for (const auto& [target_name, source_name] : label_map)
    if (source_index(source_name) < 0)
      throw ConfigError("ood_eval: map sends '" + target_name + "' to unknown source class '" +
                        source_name + "'");

  OodReport rep;
  rep.support.assign(source_classes.size(), 0);
  std::vector<Example> remapped;
  for (const Example& e : target.test) {
    const std::string& target_name = target.class_names.at(e.label);
    const auto it = label_map.find(target_name);
    if (it == label_map.end()) {
      rep.excluded++;
      continue;
    }
    Example r = e;
    r.label = source_index(it->second);
    rep.support[r.label]++;
    remapped.push_back(std::move(r));
  }
  rep.evaluated = static_cast<int>(remapped.size());
  if (remapped.empty()) throw UsageError("ood_eval: label map covers no target samples");

  Corpus shim;
  shim.name = target.name + "-as-source";
  shim.class_names = source_classes;
  rep.metric = evaluate_split(enc, tok, remapped, shim, metric, batch_size).metric;
  return rep;
}

Subsample subsample_indices(const std::vector<Example>& split, double ratio, uint64_t seed,
                            int num_classes) {
  if (!(ratio > 0.0) || ratio > 1.0) throw ConfigError("subsample: ratio must be in (0, 1]");
  if (split.empty()) throw UsageError("subsample: cannot subsample an empty split");

  const int n = static_cast<int>(split.size());
  const int strata = std::max(num_classes, 1);
  std::vector<std::vector<int>> by_class(strata);
  for (int i = 0; i < n; ++i) {
    const int c = num_classes > 0 ? split[i].label : 0;
    if (c < 0 || c >= strata) throw DataError("subsample: label outside the class range");
    by_class[c].push_back(i);
  }

  const long long target_total = std::llround(ratio * n);
  std::vector<long long> quota(strata, 0);
  std::vector<double> remainder(strata, -1.0);
  std::vector<bool> floored_class(strata, false);
  Subsample out;
  long long assigned = 0;
  for (int c = 0; c < strata; ++c) {
    if (by_class[c].empty()) continue;
    const double q = ratio * static_cast<double>(by_class[c].size());
    quota[c] = static_cast<long long>(std::floor(q));
    remainder[c] = q - static_cast<double>(quota[c]);
    if (quota[c] == 0) {  // stratified floor: keep every class represented
      quota[c] = 1;
      floored_class[c] = true;
      out.floored = true;
    }
    assigned += quota[c];
  }

  // Largest-remainder distribution of what rounding left over; floored
  // classes already overshot their quota and do not grow further.
  long long extras = target_total - assigned;
  while (extras > 0) {
    int pick = -1;
    double best = -1.0;
    for (int c = 0; c < strata; ++c)
      if (!floored_class[c] && quota[c] < static_cast<long long>(by_class[c].size()) &&
          remainder[c] > best) {
        best = remainder[c];
        pick = c;
      }
    if (pick < 0) break;
    quota[pick]++;
    remainder[pick] = -1.0;
    extras--;
  }

  const Rng root(seed);
  for (int c = 0; c < strata; ++c) {
    if (by_class[c].empty()) continue;
    std::vector<int> pool = by_class[c];
    Rng r = root.fork(static_cast<uint64_t>(c) + 1);
    r.shuffle(pool);
    pool.resize(static_cast<size_t>(quota[c]));
    out.indices.insert(out.indices.end(), pool.begin(), pool.end());
  }
  std::sort(out.indices.begin(), out.indices.end());
  return out;
}

std::vector<std::vector<Subsample>> subsample_protocol(const std::vector<Example>& split,
                                                       const std::vector<double>& ratios,
                                                       const std::vector<uint64_t>& seeds,
                                                       int num_classes) {
  if (ratios.empty() || seeds.empty())
    throw ConfigError("subsample: ratios and seeds must be non-empty");
  std::vector<std::vector<Subsample>> out;
  for (double ratio : ratios) {
    std::vector<Subsample> row;
    for (uint64_t seed : seeds) row.push_back(subsample_indices(split, ratio, seed, num_classes));
    out.push_back(std::move(row));
  }
  return out;
}

void validate_transfer(const TransferSpec& spec) {
  if (spec.probe != "linear" && spec.probe != "cnn")
    throw ConfigError("transfer: unknown probe '" + spec.probe + "'");
  if (spec.epochs <= 0) throw ConfigError("transfer: epochs must be positive");
  if (spec.batch_size <= 0) throw ConfigError("transfer: batch_size must be positive");
  if (spec.lr <= 0.0) throw ConfigError("transfer: lr must be positive");
  if (spec.probe == "cnn") {
    if (spec.cnn_widths.empty()) throw ConfigError("transfer: cnn needs at least one width");
    for (int w : spec.cnn_widths)
      if (w <= 0) throw ConfigError("transfer: cnn widths must be positive");
    if (spec.cnn_filters <= 0) throw ConfigError("transfer: cnn_filters must be positive");
  }
}

namespace {

struct FeatCache {
  Matrix pooled;  // batch x d
  Matrix tokens;  // (batch*len) x d, cnn probes only
  int batch = 0;
  int len = 0;
  std::vector<int32_t> labels;
  Matrix targets;
};

std::vector<FeatCache> cache_features(Encoder& enc, const Tokenizer& tok,
                                      const std::vector<Example>& split, bool regression,
                                      int batch_size, int min_len) {
  std::vector<FeatCache> out;
  const int n = static_cast<int>(split.size());
  for (const std::vector<int>& idx : index_batches(n, batch_size)) {
    const EncodedBatch b = tok.encode(split, idx, regression);
    if (b.len < min_len) {
      std::ostringstream msg;
      msg << "transfer: batch length " << b.len << " is shorter than the widest filter ("
          << min_len << ")";
      throw UsageError(msg.str());
    }
    Tape t;
    const EncodeResult res = enc.encode(t, b, /*dropout_active=*/false, /*seed=*/0);
    FeatCache fc;
    fc.pooled = t.val(res.pooled);
    if (min_len > 0) fc.tokens = t.val(res.token_states);
    fc.batch = b.batch;
    fc.len = b.len;
    fc.labels = b.labels;
    fc.targets = b.targets;
    out.push_back(std::move(fc));
  }
  return out;
}

int probe_forward(Tape& t, ParamStore& ps, const FeatCache& fc, const TransferSpec& spec) {
  auto leaf = [&](const std::string& name) {
    return t.param(ps.weight(name), &ps.grad(name));
  };
  if (spec.probe == "linear") {
    const int x = t.input(fc.pooled);
    return G::affine(t, x, leaf("probe.w"), leaf("probe.b"));
  }
  const int x = t.input(fc.tokens);
  int cat = -1;
  for (int width : spec.cnn_widths) {
    const std::string base = "probe.conv" + std::to_string(width);
    const int pooled = G::conv_text_pool(t, x, leaf(base + ".w"), leaf(base + ".b"),
                                         fc.batch, fc.len, width);
    cat = cat < 0 ? pooled : G::concat_cols(t, cat, pooled);
  }
  return G::affine(t, cat, leaf("probe.head.w"), leaf("probe.head.b"));
}

double probe_metric(ParamStore& ps, const std::vector<FeatCache>& caches,
                    const TransferSpec& spec, const std::string& metric, int num_classes,
                    bool regression) {
  std::vector<int32_t> gold, pred;
  std::vector<double> gold_scores, pred_scores;
  for (const FeatCache& fc : caches) {
    Tape t;
    const Matrix& logits = t.val(probe_forward(t, ps, fc, spec));
    for (int i = 0; i < fc.batch; ++i) {
      if (regression) {
        pred_scores.push_back(logits.at(i, 0));
        gold_scores.push_back(fc.targets.at(i, 0));
      } else {
        int arg = 0;
        for (int c = 1; c < logits.cols; ++c)
          if (logits.at(i, c) > logits.at(i, arg)) arg = c;
        pred.push_back(arg);
        gold.push_back(fc.labels[i]);
      }
    }
  }
  return metrics::compute_named_metric(metric, gold, pred, num_classes, gold_scores,
                                       pred_scores);
}

}  // namespace

ProbeReport transfer_probe(Encoder& frozen, const Tokenizer& tok, const Corpus& target,
                           const TransferSpec& spec, const std::string& metric) {
  validate_transfer(spec);
  if (target.train.empty() || target.valid.empty() || target.test.empty())
    throw UsageError("transfer: target needs non-empty train/valid/test splits");

  const uint64_t checksum_before = checksum_all(frozen.params());
  const int d = frozen.config().d_model;
  const int classes = target.regression ? 1 : target.num_classes();
  const bool cnn = spec.probe == "cnn";
  const int min_len = cnn ? *std::max_element(spec.cnn_widths.begin(), spec.cnn_widths.end()) : 0;

  const std::vector<FeatCache> train_fc =
      cache_features(frozen, tok, target.train, target.regression, spec.batch_size, min_len);
  const std::vector<FeatCache> valid_fc =
      cache_features(frozen, tok, target.valid, target.regression, spec.batch_size, min_len);
  const std::vector<FeatCache> test_fc =
      cache_features(frozen, tok, target.test, target.regression, spec.batch_size, min_len);

  // The head starts at zero (its loss is convex in those weights); the
  // convolution filters need a live nonlinearity, so they start Gaussian.
  ParamStore ps;
  Rng init(spec.seed);
  if (!cnn) {
    ps.add("probe.w", d, classes);
    ps.add("probe.b", 1, classes);
  } else {
    for (int width : spec.cnn_widths) {
      const std::string base = "probe.conv" + std::to_string(width);
      Matrix& w = ps.add(base + ".w", spec.cnn_filters, width * d);
      const double scale = std::sqrt(2.0 / static_cast<double>(width * d));
      for (double& v : w.a) v = scale * init.normal();
      ps.add(base + ".b", 1, spec.cnn_filters);
    }
    ps.add("probe.head.w", spec.cnn_filters * static_cast<int>(spec.cnn_widths.size()),
           classes);
    ps.add("probe.head.b", 1, classes);
  }

  OptimConfig ocfg;
  ocfg.lr = spec.lr;
  Adamax opt(ocfg);
  Rng order_rng = Rng(spec.seed).fork(17);

  ProbeReport rep;
  double best = -std::numeric_limits<double>::infinity();
  std::unordered_map<std::string, Matrix> best_weights;
  std::vector<int> order(train_fc.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (int bi : order) {
      const FeatCache& fc = train_fc[static_cast<size_t>(bi)];
      ps.zero_grads();
      Tape t;
      const int logits = probe_forward(t, ps, fc, spec);
      const int loss = target.regression ? G::mse_mean(t, logits, fc.targets)
                                         : G::cross_entropy_mean(t, logits, fc.labels);
      t.backward(loss);
      opt.step(ps);
    }
    const double valid =
        probe_metric(ps, valid_fc, spec, metric, target.num_classes(), target.regression);
    if (valid > best) {
      best = valid;
      rep.best_epoch = epoch;
      best_weights = ps.weights;
    }
  }

  rep.valid_metric = best;
  ps.weights = best_weights;
  rep.test_metric =
      probe_metric(ps, test_fc, spec, metric, target.num_classes(), target.regression);

  const uint64_t checksum_after = checksum_all(frozen.params());
  if (checksum_after != checksum_before)
    throw ConsistencyError("transfer: extractor weights drifted during probe training");
  rep.extractor_checksum = checksum_after;
  return rep;
}

TransferReport transfer_all(Encoder& frozen, const Tokenizer& tok,
                            const std::vector<const Corpus*>& targets,
                            const TransferSpec& spec, const std::string& metric) {
  if (targets.empty()) throw UsageError("transfer: no target corpora supplied");
  TransferReport out;
  double sum = 0.0;
  for (const Corpus* target : targets) {
    out.per_target.push_back(transfer_probe(frozen, tok, *target, spec, metric));
    sum += out.per_target.back().test_metric;
  }
  out.average = sum / static_cast<double>(targets.size());
  return out;
}

}  // namespace cifm
