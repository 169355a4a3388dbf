#include "cifm/workbench.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "cifm/common.hpp"
#include "cifm/estimators.hpp"
#include "cifm/evalharness.hpp"
#include "cifm/metrics.hpp"
#include "cifm/oracle.hpp"

namespace cifm {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  return json{
      {"preset", ""},
      {"output_dir", "runs"},
      {"dataset",
       {{"name", "synthetic-separable"},
        {"kind", "synthetic"},
        {"synthetic_kind", "separable"},
        {"train_n", 900},
        {"corpus_seed", 1},
        {"format", "jsonl"},
        {"train_path", ""},
        {"valid_path", ""},
        {"test_path", ""},
        {"regression", false}}},
      {"encoder",
       {{"arch", "transformer"},
        {"vocab", 4096},
        {"d_model", 32},
        {"hidden", 64},
        {"heads", 2},
        {"blocks", 2},
        {"ffn", 64},
        {"dropout", 0.1},
        {"hash_seed", 0x9e3779b97f4a7c15ull}}},
      {"objective",
       {{"beta", 0.1},
        {"tau", 0.1},
        {"mi_estimator", "infonce"},
        {"infonce_k", -1},
        {"cim",
         {{"enabled", true},
          {"epsilon", 0.1},
          {"rate", 1.0},
          {"weight", 1.0},
          {"target_groups", json::array({"embedding", "layer.0"})}}}}},
      {"train",
       {{"epochs", 20},
        {"batch_size", 64},
        {"max_length", 32},
        {"lr", 0.005},
        {"weight_decay", 0.0},
        {"clip_norm", 0.0},
        {"patience", 5},
        {"seeds", json::array({11, 12, 13, 14, 15})},
        {"metric", ""},
        {"mine_hidden", 64}}},
      {"eval",
       {{"metric", ""},
        {"sweep",
         {{"kind", "random"},
          {"strengths", json::array({0.0, 1.0, 2.0, 3.0, 4.0, 5.0})},
          {"seeds", json::array({1, 2, 3, 4, 5})}}},
        {"transfer",
         {{"probe", "linear"},
          {"epochs", 30},
          {"batch_size", 64},
          {"lr", 0.01},
          {"seed", 1},
          {"cnn_widths", json::array({3, 4, 5})},
          {"cnn_filters", 64}}},
        {"subsample",
         {{"ratios", json::array({0.2, 0.5, 1.0})}, {"seeds", json::array({1, 2, 3, 4, 5})}}},
        {"ood", {{"label_map", json::object()}}}}}};
}

json config_schema() {
  return json{
      {"preset", "string"},
      {"output_dir", "string"},
      {"dataset",
       {{"name", "string"},
        {"kind", "string"},
        {"synthetic_kind", "string"},
        {"train_n", "integer"},
        {"corpus_seed", "integer"},
        {"format", "string"},
        {"train_path", "string"},
        {"valid_path", "string"},
        {"test_path", "string"},
        {"regression", "boolean"}}},
      {"encoder",
       {{"arch", "string"},
        {"vocab", "integer"},
        {"d_model", "integer"},
        {"hidden", "integer"},
        {"heads", "integer"},
        {"blocks", "integer"},
        {"ffn", "integer"},
        {"dropout", "number"},
        {"hash_seed", "integer"}}},
      {"objective",
       {{"beta", "number"},
        {"tau", "number"},
        {"mi_estimator", "string"},
        {"infonce_k", "integer"},
        {"cim",
         {{"enabled", "boolean"},
          {"epsilon", "number"},
          {"rate", "number"},
          {"weight", "number"},
          {"target_groups", "array<string>"}}}}},
      {"train",
       {{"epochs", "integer"},
        {"batch_size", "integer"},
        {"max_length", "integer"},
        {"lr", "number"},
        {"weight_decay", "number"},
        {"clip_norm", "number"},
        {"patience", "integer"},
        {"seeds", "array<integer>"},
        {"metric", "string"},
        {"mine_hidden", "integer"}}},
      {"eval",
       {{"metric", "string"},
        {"sweep",
         {{"kind", "string"}, {"strengths", "array<number>"}, {"seeds", "array<integer>"}}},
        {"transfer",
         {{"probe", "string"},
          {"epochs", "integer"},
          {"batch_size", "integer"},
          {"lr", "number"},
          {"seed", "integer"},
          {"cnn_widths", "array<integer>"},
          {"cnn_filters", "integer"}}},
        {"subsample", {{"ratios", "array<number>"}, {"seeds", "array<integer>"}}},
        {"ood", {{"label_map", "map<string,string>"}}}}}};
}

namespace {

bool matches_type(const json& v, const std::string& type) {
  if (type == "string") return v.is_string();
  if (type == "number") return v.is_number();
  if (type == "integer") return v.is_number_integer();
  if (type == "boolean") return v.is_boolean();
  if (type == "array<number>") {
    if (!v.is_array()) return false;
    return std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
  }
  if (type == "array<integer>") {
    if (!v.is_array()) return false;
    return std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); });
  }
  if (type == "array<string>") {
    if (!v.is_array()) return false;
    return std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
  }
  if (type == "map<string,string>") {
    if (!v.is_object()) return false;
    return std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
  }
  throw ConsistencyError("config schema names an unknown type '" + type + "'");
}

void walk_schema(const json& cfg, const json& schema, const std::string& path) {
  for (const auto& [key, value] : cfg.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) throw UsageError("config: unknown key '" + here + "'");
    const json& node = schema.at(key);
    if (node.is_string()) {
      if (!matches_type(value, node.get<std::string>()))
        throw UsageError("config: '" + here + "' must be a " + node.get<std::string>());
    } else {
      if (!value.is_object()) throw UsageError("config: '" + here + "' must be an object");
      walk_schema(value, node, here);
    }
  }
}

}  // namespace

void validate_config(const json& cfg) {
  if (!cfg.is_object()) throw UsageError("config: the document root must be an object");
  walk_schema(cfg, config_schema(), "");
}

namespace {

// Appendix-table settings per benchmark and backbone; metrics follow each
// benchmark's convention with textual labels interned lexicographically
// (stance: favor/against subset; irony: F1 of the ironic class; sentiment:
// macro recall; STS-B/CLAIRE: spearman; EmoBank: pearson).
struct TablePreset {
  const char* name;
  double beta, tau, rate, epsilon, weight_decay;
  const char* metric;
  bool regression;
};

constexpr TablePreset kTablePresets[] = {
    {"emojieval-bert", 1, 0.1, 1, 0.1, 0, "macro_f1", false},
    {"emotioneval-bert", 0.1, 0.1, 1, 1, 0.001, "macro_f1", false},
    {"hateval-bert", 10, 0.1, 1, 0.1, 0.01, "macro_f1", false},
    {"ironyeval-bert", 0.01, 1, 1, 5, 0.001, "f1_class:0", false},
    {"offenseval-bert", 0.01, 0.1, 0.1, 5, 0, "macro_f1", false},
    {"sentieval-bert", 0.1, 0.5, 1, 1, 0, "macro_recall", false},
    {"stanceeval-bert", 0.1, 0.1, 1, 1, 0.001, "macro_f1_subset:0,1", false},
    {"isear-bert", 0.1, 0.1, 1, 5, 0, "macro_f1", false},
    {"meld-bert", 0.1, 0.1, 1, 1, 0.001, "macro_f1", false},
    {"goemotions-bert", 0.1, 0.1, 1, 0.1, 0, "macro_f1", false},
    {"emojieval-roberta", 0.01, 0.1, 1, 0.1, 0, "macro_f1", false},
    {"emotioneval-roberta", 1, 0.5, 0.1, 5, 0, "macro_f1", false},
    {"hateval-roberta", 10, 0.1, 1, 0.1, 0.01, "macro_f1", false},
    {"ironyeval-roberta", 1, 1, 0.1, 0.1, 0.01, "f1_class:0", false},
    {"offenseval-roberta", 1, 1, 1, 1, 0.001, "macro_f1", false},
    {"sentieval-roberta", 0.01, 0.1, 1, 1, 0, "macro_recall", false},
    {"stanceeval-roberta", 0.1, 0.5, 1, 0.1, 0, "macro_f1_subset:0,1", false},
    {"isear-roberta", 0.1, 0.1, 1, 0.1, 0, "macro_f1", false},
    {"meld-roberta", 1, 1, 1, 1, 0, "macro_f1", false},
    {"goemotions-roberta", 0.1, 0.1, 1, 1, 0, "macro_f1", false},
    {"stsb-roberta", 0.001, 0.1, 1, 5, 0, "spearman", true},
    {"claire-roberta", 0.01, 1, 0.1, 0.1, 0, "spearman", true},
    {"emobank-roberta", 0.01, 1, 0.1, 1, 0, "pearson", true},
};

constexpr const char* kSyntheticKinds[] = {"separable",      "noisy",           "xor",
                                           "regression",     "taxonomy-fine",   "taxonomy-coarse"};

json synthetic_patch(const std::string& kind) {
  return json{
      {"dataset",
       {{"name", "synthetic-" + kind},
        {"kind", "synthetic"},
        {"synthetic_kind", kind},
        {"train_n", 900},
        {"corpus_seed", 1},
        {"regression", kind == "regression"}}},
      {"encoder",
       {{"arch", "transformer"},
        {"vocab", 4096},
        {"d_model", 32},
        {"hidden", 64},
        {"heads", 2},
        {"blocks", 2},
        {"ffn", 64},
        {"dropout", 0.1}}},
      {"objective", {{"beta", 0.1}, {"tau", 0.1}}},
      {"train",
       {{"epochs", 20}, {"batch_size", 64}, {"max_length", 32}, {"lr", 0.005},
        {"patience", 5}}}};
}

json table_patch(const TablePreset& p) {
  return json{
      {"dataset", {{"name", p.name}, {"kind", "files"}, {"regression", p.regression}}},
      {"objective",
       {{"beta", p.beta},
        {"tau", p.tau},
        {"cim", {{"epsilon", p.epsilon}, {"rate", p.rate}}}}},
      {"train",
       {{"epochs", 20},
        {"batch_size", 128},
        {"max_length", 128},
        {"lr", 5e-5},
        {"weight_decay", p.weight_decay},
        {"patience", 5},
        {"metric", p.metric}}}};
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const char* kind : kSyntheticKinds) names.push_back(std::string("synthetic-") + kind);
  for (const TablePreset& p : kTablePresets) names.push_back(p.name);
  return names;
}

json preset_patch(const std::string& name) {
  for (const char* kind : kSyntheticKinds)
    if (name == std::string("synthetic-") + kind) return synthetic_patch(kind);
  for (const TablePreset& p : kTablePresets)
    if (name == p.name) return table_patch(p);
  throw ConfigError("preset: unknown name '" + name + "'");
}

json resolve_config(const json& file_cfg, const std::vector<std::string>& set_overrides,
                    const std::string& preset_flag) {
  if (!file_cfg.is_object()) throw UsageError("config: the document root must be an object");
  json cfg = default_config();

  std::string preset = preset_flag;
  if (preset.empty() && file_cfg.contains("preset") && file_cfg.at("preset").is_string())
    preset = file_cfg.at("preset").get<std::string>();
  if (!preset.empty()) cfg.merge_patch(preset_patch(preset));

  cfg.merge_patch(file_cfg);
  cfg["preset"] = preset;  // record the preset actually applied

  for (const std::string& kv : set_overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw UsageError("--set expects key=value, got '" + kv + "'");
    std::string pointer = "/" + kv.substr(0, eq);
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    const std::string raw = kv.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;  // bare words are strings
    }
    cfg[json::json_pointer(pointer)] = value;
  }

  validate_config(cfg);
  return cfg;
}

std::string config_hash(const json& cfg) {
  json c = cfg;
  c.erase("output_dir");
  c.erase("preset");  // already expanded into the tree
  const std::string dump = c.dump();
  const uint64_t h = fnv1a(dump.data(), dump.size());
  std::ostringstream hex;
  hex << std::hex << std::setfill('0') << std::setw(16) << h;
  return hex.str();
}

namespace {

void check_splits_disjoint(const Corpus& c) {
  auto texts = [](const std::vector<Example>& split) {
    std::set<std::string> t;
    for (const Example& e : split) t.insert(e.text);
    return t;
  };
  const std::set<std::string> train = texts(c.train), valid = texts(c.valid),
                              test = texts(c.test);
  auto overlap = [](const std::set<std::string>& a, const std::set<std::string>& b,
                    const char* names) {
    for (const std::string& t : a)
      if (b.count(t))
        throw DataError(std::string("dataset: ") + names + " splits share the row \"" +
                        t.substr(0, 60) + "\"");
  };
  overlap(train, valid, "train/valid");
  overlap(train, test, "train/test");
  overlap(valid, test, "valid/test");
}

void check_metric_dispatches(const std::string& metric, const Corpus& corpus) {
  try {
    double probe;
    if (corpus.regression)
      probe = metrics::compute_named_metric(metric, {}, {}, 0, {0.0, 1.0, 2.0},
                                            {0.0, 1.5, 2.0});
    else
      probe = metrics::compute_named_metric(metric, {0}, {0}, corpus.num_classes());
    if (!std::isfinite(probe))
      throw ConfigError("dataset: metric '" + metric + "' is undefined for this task kind");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("dataset: metric '" + metric + "' cannot score this task: " + e.what());
  }
}

}  // namespace

LoadedDataset load_dataset(const json& d, const std::string& metric) {
  const std::string kind = d.at("kind").get<std::string>();
  LoadedDataset out;
  json source;

  if (kind == "synthetic") {
    const std::string sk = d.at("synthetic_kind").get<std::string>();
    const int train_n = d.at("train_n").get<int>();
    const uint64_t corpus_seed = d.at("corpus_seed").get<uint64_t>();
    if (sk == "taxonomy-fine")
      out.corpus = oracle::make_taxonomy_pair(train_n, corpus_seed).fine;
    else if (sk == "taxonomy-coarse")
      out.corpus = oracle::make_taxonomy_pair(train_n, corpus_seed).coarse;
    else
      out.corpus = oracle::make_synthetic_corpus(sk, train_n, corpus_seed);
    source = {{"synthetic_kind", sk}, {"train_n", train_n}, {"corpus_seed", corpus_seed}};
  } else if (kind == "files") {
    const std::string format = d.at("format").get<std::string>();
    const auto records = [&](const char* key) {
      const std::string path = d.at(key).get<std::string>();
      if (path.empty())
        throw ConfigError(std::string("dataset: '") + key + "' is required for file datasets");
      return ingest(path, format);
    };
    out.corpus = corpus_from_records(d.at("name").get<std::string>(), records("train_path"),
                                     records("valid_path"), records("test_path"),
                                     d.at("regression").get<bool>());
    // Synthetic generators may legitimately repeat tiny texts across splits;
    // user-supplied files must not.
    check_splits_disjoint(out.corpus);
    source = {{"train_path", d.at("train_path")},
              {"valid_path", d.at("valid_path")},
              {"test_path", d.at("test_path")},
              {"format", format}};
  } else {
    throw ConfigError("dataset: unknown kind '" + kind + "'");
  }

  out.corpus.name = d.at("name").get<std::string>();
  const std::string headline = metric.empty() ? default_metric(out.corpus) : metric;
  check_metric_dispatches(headline, out.corpus);

  out.manifest = {
      {"name", out.corpus.name},
      {"task_kind", out.corpus.regression ? "regression" : "classification"},
      {"splits",
       {{"train", out.corpus.train.size()},
        {"valid", out.corpus.valid.size()},
        {"test", out.corpus.test.size()}}},
      {"metrics", json::array({headline})},
      {"source", source}};
  if (out.corpus.regression)
    out.manifest["target_dims"] = 1;
  else
    out.manifest["classes"] = out.corpus.class_names;
  return out;
}

EncoderConfig encoder_from(const json& cfg) {
  const json& e = cfg.at("encoder");
  EncoderConfig ec;
  ec.arch = e.at("arch").get<std::string>();
  ec.vocab = e.at("vocab").get<int>();
  ec.d_model = e.at("d_model").get<int>();
  ec.hidden = e.at("hidden").get<int>();
  ec.heads = e.at("heads").get<int>();
  ec.blocks = e.at("blocks").get<int>();
  ec.ffn = e.at("ffn").get<int>();
  ec.dropout = e.at("dropout").get<double>();
  ec.hash_seed = e.at("hash_seed").get<uint64_t>();
  return ec;
}

ObjectiveConfig objective_from(const json& cfg) {
  const json& o = cfg.at("objective");
  ObjectiveConfig oc;
  oc.beta = o.at("beta").get<double>();
  oc.tau = o.at("tau").get<double>();
  oc.mi_estimator = o.at("mi_estimator").get<std::string>();
  oc.infonce_k = o.at("infonce_k").get<int>();
  const json& c = o.at("cim");
  if (c.at("enabled").get<bool>()) {
    PerturbationSpec spec;
    spec.epsilon = c.at("epsilon").get<double>();
    spec.rate = c.at("rate").get<double>();
    spec.weight = c.at("weight").get<double>();
    spec.target_groups = c.at("target_groups").get<std::vector<std::string>>();
    oc.cim = spec;
  }
  return oc;
}

TrainConfig train_from(const json& cfg) {
  const json& t = cfg.at("train");
  TrainConfig tc;
  tc.epochs = t.at("epochs").get<int>();
  tc.batch_size = t.at("batch_size").get<int>();
  tc.max_length = t.at("max_length").get<int>();
  tc.lr = t.at("lr").get<double>();
  tc.weight_decay = t.at("weight_decay").get<double>();
  tc.clip_norm = t.at("clip_norm").get<double>();
  tc.patience = t.at("patience").get<int>();
  tc.seeds = t.at("seeds").get<std::vector<uint64_t>>();
  tc.metric = t.at("metric").get<std::string>();
  tc.mine_hidden = t.at("mine_hidden").get<int>();
  return tc;
}

std::string resolve_metric(const json& cfg, const Corpus& corpus) {
  const std::string eval_metric = cfg.at("eval").at("metric").get<std::string>();
  if (!eval_metric.empty()) return eval_metric;
  const std::string train_metric = cfg.at("train").at("metric").get<std::string>();
  if (!train_metric.empty()) return train_metric;
  return default_metric(corpus);
}

std::string prepare_output_dir(const json& cfg) {
  const std::string hash = config_hash(cfg);
  const fs::path base =
      fs::path(cfg.at("output_dir").get<std::string>()) /
      (cfg.at("dataset").at("name").get<std::string>() + "-" + hash.substr(0, 8));
  int k = 0;
  while (fs::exists(base / ("run-" + std::to_string(k)))) ++k;
  const fs::path dir = base / ("run-" + std::to_string(k));
  fs::create_directories(dir);
  return dir.string();
}

namespace {

std::string pre_metric(const json& cfg) {
  // The headline metric before the corpus exists: eval.metric, then
  // train.metric, then empty (load_dataset fills the task default).
  const std::string eval_metric = cfg.at("eval").at("metric").get<std::string>();
  if (!eval_metric.empty()) return eval_metric;
  return cfg.at("train").at("metric").get<std::string>();
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw DataError("workbench: cannot write " + path);
  out << doc.dump(2) << "\n";
}

json self_describing(const json& cfg, const std::string& command) {
  return json{{"command", command}, {"config_hash", config_hash(cfg)}, {"version", kVersion}};
}

struct LoadedCheckpoint {
  std::unique_ptr<Encoder> encoder;
  json extra;
  Tokenizer tok;
};

LoadedCheckpoint open_checkpoint(const std::string& path) {
  std::string extra_str;
  std::unique_ptr<Encoder> enc = load_checkpoint(path, &extra_str);
  json extra = json::parse(extra_str);
  const EncoderConfig& c = enc->config();
  Tokenizer tok(c.vocab, c.max_len, c.hash_seed);
  return LoadedCheckpoint{std::move(enc), std::move(extra), tok};
}

void check_taxonomy_matches(const Corpus& corpus, const json& extra) {
  if (corpus.regression) {
    if (!extra.at("regression").get<bool>())
      throw UsageError("workbench: checkpoint is a classifier but the dataset is regression");
    return;
  }
  const auto classes = extra.at("classes").get<std::vector<std::string>>();
  if (classes != corpus.class_names)
    throw UsageError(
        "workbench: checkpoint classes do not match the dataset label set; "
        "use `ood` with a label map for cross-taxonomy scoring");
}

int cmd_train(const json& cfg) {
  const LoadedDataset ds = load_dataset(cfg.at("dataset"), pre_metric(cfg));
  const std::string metric = ds.manifest.at("metrics").at(0).get<std::string>();

  TrainConfig tc = train_from(cfg);
  tc.metric = metric;
  const ObjectiveConfig oc = objective_from(cfg);
  const EncoderConfig ec = encoder_from(cfg);
  validate_train(tc);  // reject bad settings before any artifact is written

  const std::string dir = prepare_output_dir(cfg);
  tc.log_path = dir + "/train_log.jsonl";

  json config_doc = self_describing(cfg, "train");
  config_doc["config"] = cfg;
  write_json(dir + "/config.json", config_doc);
  json manifest_doc = self_describing(cfg, "train");
  manifest_doc["manifest"] = ds.manifest;
  write_json(dir + "/manifest.json", manifest_doc);

  json per_seed = json::array();
  std::vector<double> tests;
  for (uint64_t seed : tc.seeds) {
    const TrainResult res = train_one(ds.corpus, ec, oc, tc, seed);
    const RunRecord& rec = res.record;

    json extra = {{"dataset", ds.corpus.name},   {"metric", metric},
                  {"test_metric", rec.test_metric}, {"seed", seed},
                  {"config_hash", config_hash(cfg)}, {"regression", ds.corpus.regression},
                  {"classes", ds.corpus.class_names}, {"max_length", tc.max_length},
                  {"version", kVersion}};
    save_checkpoint(*res.encoder, dir + "/seed-" + std::to_string(seed) + ".ckpt",
                    extra.dump());

    per_seed.push_back({{"seed", seed},
                        {"best_epoch", rec.best_epoch},
                        {"best_valid_metric", rec.best_valid_metric},
                        {"test_metric", rec.test_metric},
                        {"epochs_run", rec.epochs.size()},
                        {"wall_seconds", rec.wall_seconds}});
    tests.push_back(rec.test_metric);
    std::cout << "seed " << seed << ": test " << metric << " = " << rec.test_metric
              << " (best epoch " << rec.best_epoch << ")\n";
  }

  const int n = static_cast<int>(tests.size());
  double mean = 0.0;
  for (double v : tests) mean += v;
  mean /= n;
  double stdev = 0.0;
  if (n > 1) {
    for (double v : tests) stdev += (v - mean) * (v - mean);
    stdev = std::sqrt(stdev / (n - 1));
  }

  json summary = self_describing(cfg, "train");
  summary["dataset"] = ds.corpus.name;
  summary["metric"] = metric;
  summary["seeds"] = tc.seeds;
  summary["per_seed"] = per_seed;
  summary["mean_test_metric"] = mean;
  summary["std_test_metric"] = stdev;
  write_json(dir + "/summary.json", summary);

  std::cout << "mean test " << metric << " = " << mean << " +/- " << stdev << "\n"
            << "artifacts: " << dir << "\n";
  return 0;
}

int cmd_evaluate(const json& cfg, const std::string& checkpoint) {
  LoadedCheckpoint ck = open_checkpoint(checkpoint);
  const std::string eval_metric = cfg.at("eval").at("metric").get<std::string>();
  const std::string metric =
      eval_metric.empty() ? ck.extra.at("metric").get<std::string>() : eval_metric;

  const LoadedDataset ds = load_dataset(cfg.at("dataset"), metric);
  check_taxonomy_matches(ds.corpus, ck.extra);

  const int batch = cfg.at("train").at("batch_size").get<int>();
  const EvalOutput out =
      evaluate_split(*ck.encoder, ck.tok, ds.corpus.test, ds.corpus, metric, batch);
  const double stored = ck.extra.at("test_metric").get<double>();

  const std::string dir = prepare_output_dir(cfg);
  json doc = self_describing(cfg, "evaluate");
  doc["checkpoint"] = checkpoint;
  doc["seed"] = ck.extra.at("seed");
  doc["dataset"] = ds.corpus.name;
  doc["metric"] = metric;
  doc["value"] = out.metric;
  doc["stored_test_metric"] = stored;
  doc["matches_stored"] = out.metric == stored;
  write_json(dir + "/evaluation.json", doc);

  std::cout << "test " << metric << " = " << out.metric << " (stored " << stored << ", "
            << (out.metric == stored ? "match" : "MISMATCH") << ")\n"
            << "artifacts: " << dir << "\n";
  return 0;
}

int cmd_sweep(const json& cfg, const std::string& checkpoint) {
  LoadedCheckpoint ck = open_checkpoint(checkpoint);
  const std::string eval_metric = cfg.at("eval").at("metric").get<std::string>();
  const std::string metric =
      eval_metric.empty() ? ck.extra.at("metric").get<std::string>() : eval_metric;
  const LoadedDataset ds = load_dataset(cfg.at("dataset"), metric);
  check_taxonomy_matches(ds.corpus, ck.extra);

  const json& s = cfg.at("eval").at("sweep");
  SweepSpec spec;
  spec.kind = s.at("kind").get<std::string>();
  spec.strengths = s.at("strengths").get<std::vector<double>>();
  spec.seeds = s.at("seeds").get<std::vector<uint64_t>>();

  const int batch = cfg.at("train").at("batch_size").get<int>();
  const auto curve =
      robustness_sweep(*ck.encoder, ck.tok, ds.corpus.test, ds.corpus, metric, spec, batch);

  const std::string dir = prepare_output_dir(cfg);
  write_sweep_csv(dir + "/sweep.csv", metric, spec, curve);

  json points = json::array();
  for (const SweepPoint& pt : curve) {
    points.push_back({{"strength", pt.strength}, {"mean", pt.mean}, {"per_seed", pt.per_seed}});
    std::cout << "strength " << pt.strength << ": mean " << metric << " = " << pt.mean << "\n";
  }
  json doc = self_describing(cfg, "sweep");
  doc["checkpoint"] = checkpoint;
  doc["kind"] = spec.kind;
  doc["seeds"] = spec.seeds;
  doc["metric"] = metric;
  doc["points"] = points;
  write_json(dir + "/sweep.json", doc);
  std::cout << "artifacts: " << dir << "\n";
  return 0;
}

int cmd_transfer(const json& cfg, const std::string& checkpoint) {
  LoadedCheckpoint ck = open_checkpoint(checkpoint);
  const std::string metric = pre_metric(cfg);
  const LoadedDataset ds = load_dataset(cfg.at("dataset"), metric);
  const std::string headline = ds.manifest.at("metrics").at(0).get<std::string>();

  const json& t = cfg.at("eval").at("transfer");
  TransferSpec spec;
  spec.probe = t.at("probe").get<std::string>();
  spec.epochs = t.at("epochs").get<int>();
  spec.batch_size = t.at("batch_size").get<int>();
  spec.lr = t.at("lr").get<double>();
  spec.seed = t.at("seed").get<uint64_t>();
  spec.cnn_widths = t.at("cnn_widths").get<std::vector<int>>();
  spec.cnn_filters = t.at("cnn_filters").get<int>();

  const ProbeReport rep = transfer_probe(*ck.encoder, ck.tok, ds.corpus, spec, headline);

  const std::string dir = prepare_output_dir(cfg);
  std::ostringstream checksum_hex;
  checksum_hex << std::hex << rep.extractor_checksum;
  json doc = self_describing(cfg, "transfer");
  doc["checkpoint"] = checkpoint;
  doc["seed"] = spec.seed;
  doc["target"] = ds.corpus.name;
  doc["probe"] = spec.probe;
  doc["metric"] = headline;
  doc["test_metric"] = rep.test_metric;
  doc["valid_metric"] = rep.valid_metric;
  doc["best_epoch"] = rep.best_epoch;
  doc["extractor_checksum"] = checksum_hex.str();
  write_json(dir + "/transfer.json", doc);

  std::cout << spec.probe << " probe on " << ds.corpus.name << ": test " << headline << " = "
            << rep.test_metric << "\n"
            << "artifacts: " << dir << "\n";
  return 0;
}

int cmd_ood(const json& cfg, const std::string& checkpoint) {
  LoadedCheckpoint ck = open_checkpoint(checkpoint);
  if (ck.extra.at("regression").get<bool>())
    throw UsageError("workbench: ood scoring needs a classification checkpoint");
  const auto source_classes = ck.extra.at("classes").get<std::vector<std::string>>();

  const std::string eval_metric = cfg.at("eval").at("metric").get<std::string>();
  const std::string metric =
      eval_metric.empty() ? ck.extra.at("metric").get<std::string>() : eval_metric;
  const LoadedDataset ds = load_dataset(cfg.at("dataset"), "");

  std::map<std::string, std::string> label_map =
      cfg.at("eval").at("ood").at("label_map").get<std::map<std::string, std::string>>();
  if (label_map.empty() &&
      cfg.at("dataset").at("synthetic_kind").get<std::string>() == "taxonomy-fine" &&
      cfg.at("dataset").at("kind").get<std::string>() == "synthetic") {
    // The shipped map for the synthetic taxonomy pair.
    const auto pair =
        oracle::make_taxonomy_pair(cfg.at("dataset").at("train_n").get<int>(),
                                   cfg.at("dataset").at("corpus_seed").get<uint64_t>());
    label_map.insert(pair.fine_to_coarse.begin(), pair.fine_to_coarse.end());
  }

  const int batch = cfg.at("train").at("batch_size").get<int>();
  const OodReport rep =
      ood_eval(*ck.encoder, ck.tok, ds.corpus, source_classes, label_map, metric, batch);

  const std::string dir = prepare_output_dir(cfg);
  json doc = self_describing(cfg, "ood");
  doc["checkpoint"] = checkpoint;
  doc["seed"] = ck.extra.at("seed");
  doc["target"] = ds.corpus.name;
  doc["source_classes"] = source_classes;
  doc["label_map"] = label_map;
  doc["metric"] = metric;
  doc["value"] = rep.metric;
  doc["evaluated"] = rep.evaluated;
  doc["excluded"] = rep.excluded;
  doc["support"] = rep.support;
  write_json(dir + "/ood.json", doc);

  std::cout << "ood " << metric << " = " << rep.metric << " over " << rep.evaluated
            << " samples (" << rep.excluded << " excluded)\n"
            << "artifacts: " << dir << "\n";
  return 0;
}

int cmd_presets() {
  json doc;
  doc["version"] = kVersion;
  doc["defaults"] = default_config();
  doc["schema"] = config_schema();
  json presets = json::object();
  for (const std::string& name : preset_names()) presets[name] = preset_patch(name);
  doc["presets"] = presets;
  std::cout << doc.dump(2) << "\n";
  return 0;
}

}  // namespace

int run_workbench(const std::vector<std::string>& args) {
  CLI::App app{"conditional information-flow training workbench"};
  app.require_subcommand(1);

  std::string config_path, preset, checkpoint;
  std::vector<std::string> sets;
  const auto add_common = [&](CLI::App* sub, bool needs_checkpoint) {
    sub->add_option("--config", config_path, "experiment config document (JSON)");
    sub->add_option("--preset", preset, "named preset applied under the config");
    sub->add_option("--set", sets, "dotted key=value override, repeatable");
    if (needs_checkpoint)
      sub->add_option("--checkpoint", checkpoint, "model archive to load")->required();
  };

  CLI::App* train = app.add_subcommand("train", "train across seeds and checkpoint each run");
  add_common(train, false);
  CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a test split");
  add_common(evaluate, true);
  CLI::App* sweep = app.add_subcommand("sweep", "robustness curve under embedding noise");
  add_common(sweep, true);
  CLI::App* transfer = app.add_subcommand("transfer", "frozen-extractor probe on a target");
  add_common(transfer, true);
  CLI::App* ood = app.add_subcommand("ood", "cross-taxonomy scoring through a label map");
  add_common(ood, true);
  CLI::App* presets = app.add_subcommand("presets", "print defaults, schema, and presets");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (presets->parsed()) return cmd_presets();

    json file_cfg = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw DataError("workbench: cannot open config " + config_path);
      try {
        file_cfg = json::parse(in);
      } catch (const json::parse_error& e) {
        throw DataError("workbench: config " + config_path + " is not valid JSON: " + e.what());
      }
    }
    const json cfg = resolve_config(file_cfg, sets, preset);

    if (train->parsed()) return cmd_train(cfg);
    if (evaluate->parsed()) return cmd_evaluate(cfg, checkpoint);
    if (sweep->parsed()) return cmd_sweep(cfg, checkpoint);
    if (transfer->parsed()) return cmd_transfer(cfg, checkpoint);
    if (ood->parsed()) return cmd_ood(cfg, checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace cifm
