#include "cifm/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cifm/common.hpp"
#include "cifm/rng.hpp"

namespace cifm {

namespace G = graph;
using nlohmann::json;

namespace {

// Per-call dropout seeds: one deterministic stream per (pass seed, call #).
struct SeedSequence {
  uint64_t base;
  uint64_t counter = 0;
  uint64_t next() {
    ++counter;
    uint64_t payload[2] = {base, counter};
    return fnv1a(payload, sizeof(payload));
  }
};

void normal_init(Matrix& m, Rng& rng, double scale) {
  for (double& v : m.a) v = rng.normal() * scale;
}

void xavier_init(Matrix& m, Rng& rng) {
  normal_init(m, rng, std::sqrt(2.0 / (m.rows + m.cols)));
}

int head_width(const EncoderConfig& cfg) { return cfg.regression ? 1 : cfg.num_classes; }

class BagMlpEncoder final : public Encoder {
 public:
  explicit BagMlpEncoder(EncoderConfig cfg) : Encoder(std::move(cfg)) {
    Rng rng(cfg_.init_seed);
    normal_init(params_.add("embedding.token", cfg_.vocab, cfg_.d_model), rng, 0.05);
    xavier_init(params_.add("layer.0.w", cfg_.d_model, cfg_.hidden), rng);
    params_.add("layer.0.b", 1, cfg_.hidden).zero();
    xavier_init(params_.add("layer.1.w", cfg_.hidden, cfg_.d_model), rng);
    params_.add("layer.1.b", 1, cfg_.d_model).zero();
    xavier_init(params_.add("head.w", cfg_.d_model, head_width(cfg_)), rng);
    params_.add("head.b", 1, head_width(cfg_)).zero();
  }

  std::vector<std::string> group_names() const override {
    return {"embedding", "layer.0", "layer.1", "head"};
  }

  EncodeResult encode(Tape& t, const EncodedBatch& batch, bool dropout_active, uint64_t seed,
                      const Matrix* embedding_offset = nullptr) override {
    check_batch(batch);
    SeedSequence seeds{seed};
    auto p = [&](const char* name) {
      return t.param(params_.weight(name), &params_.grad(name));
    };
    auto drop = [&](int x) {
      return G::dropout(t, x, cfg_.dropout, seeds.next(), dropout_active);
    };
    int emb = G::embedding(t, p("embedding.token"), batch.ids);
    if (embedding_offset != nullptr) emb = G::add(t, emb, t.input(*embedding_offset));
    EncodeResult r;
    r.embeddings = emb;
    r.token_states = emb;
    const int pooled_emb = G::masked_mean_pool(t, emb, batch.mask, batch.batch, batch.len);
    r.hidden_prepool = pooled_emb;
    int h = drop(pooled_emb);
    h = drop(G::relu(t, G::affine(t, h, p("layer.0.w"), p("layer.0.b"))));
    h = drop(G::relu(t, G::affine(t, h, p("layer.1.w"), p("layer.1.b"))));
    r.pooled = h;
    r.logits = G::affine(t, h, p("head.w"), p("head.b"));
    return r;
  }

 private:
  void check_batch(const EncodedBatch& batch) const {
    if (batch.batch < 1 || static_cast<int>(batch.ids.size()) != batch.batch * batch.len)
      throw DataError("encode: malformed batch");
    for (int32_t id : batch.ids)
      if (id < 0 || id >= cfg_.vocab) throw DataError("encode: token id outside vocabulary");
  }
};

class TinyTransformerEncoder final : public Encoder {
 public:
  explicit TinyTransformerEncoder(EncoderConfig cfg) : Encoder(std::move(cfg)) {
    if (cfg_.d_model % cfg_.heads != 0)
      throw ConfigError("transformer: d_model must be divisible by heads");
    Rng rng(cfg_.init_seed);
    normal_init(params_.add("embedding.token", cfg_.vocab, cfg_.d_model), rng, 0.05);
    normal_init(params_.add("embedding.pos", cfg_.max_len, cfg_.d_model), rng, 0.01);
    for (int l = 0; l < cfg_.blocks; ++l) {
      const std::string pre = "layer." + std::to_string(l) + ".";
      params_.add(pre + "ln1.gain", 1, cfg_.d_model).fill(1.0);
      params_.add(pre + "ln1.bias", 1, cfg_.d_model).zero();
      for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
        xavier_init(params_.add(pre + w, cfg_.d_model, cfg_.d_model), rng);
      for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
        params_.add(pre + b, 1, cfg_.d_model).zero();
      params_.add(pre + "ln2.gain", 1, cfg_.d_model).fill(1.0);
      params_.add(pre + "ln2.bias", 1, cfg_.d_model).zero();
      xavier_init(params_.add(pre + "ffn.w1", cfg_.d_model, cfg_.ffn), rng);
      params_.add(pre + "ffn.b1", 1, cfg_.ffn).zero();
      xavier_init(params_.add(pre + "ffn.w2", cfg_.ffn, cfg_.d_model), rng);
      params_.add(pre + "ffn.b2", 1, cfg_.d_model).zero();
    }
    // The final normalisation belongs to the last layer group so that
    // perturbing "head" provably leaves Z untouched.
    const std::string last = "layer." + std::to_string(cfg_.blocks - 1) + ".";
    params_.add(last + "final_ln.gain", 1, cfg_.d_model).fill(1.0);
    params_.add(last + "final_ln.bias", 1, cfg_.d_model).zero();
    xavier_init(params_.add("head.w", cfg_.d_model, head_width(cfg_)), rng);
    params_.add("head.b", 1, head_width(cfg_)).zero();
  }

  std::vector<std::string> group_names() const override {
    std::vector<std::string> out = {"embedding"};
    for (int l = 0; l < cfg_.blocks; ++l) out.push_back("layer." + std::to_string(l));
    out.push_back("head");
    return out;
  }

  EncodeResult encode(Tape& t, const EncodedBatch& batch, bool dropout_active, uint64_t seed,
                      const Matrix* embedding_offset = nullptr) override {
    check_batch(batch);
    SeedSequence seeds{seed};
    auto p = [&](const std::string& name) {
      return t.param(params_.weight(name), &params_.grad(name));
    };
    auto drop = [&](int x) {
      return G::dropout(t, x, cfg_.dropout, seeds.next(), dropout_active);
    };
    int emb = G::embedding(t, p("embedding.token"), batch.ids);
    if (embedding_offset != nullptr) emb = G::add(t, emb, t.input(*embedding_offset));
    EncodeResult r;
    r.embeddings = emb;
    int h = G::add_position_rows(t, emb, p("embedding.pos"), batch.batch, batch.len);
    h = drop(h);
    for (int l = 0; l < cfg_.blocks; ++l) {
      const std::string pre = "layer." + std::to_string(l) + ".";
      const int n1 = G::layernorm(t, h, p(pre + "ln1.gain"), p(pre + "ln1.bias"));
      const int q = G::affine(t, n1, p(pre + "attn.wq"), p(pre + "attn.bq"));
      const int k = G::affine(t, n1, p(pre + "attn.wk"), p(pre + "attn.bk"));
      const int v = G::affine(t, n1, p(pre + "attn.wv"), p(pre + "attn.bv"));
      const int ctx = G::attention(t, q, k, v, batch.mask, batch.batch, batch.len, cfg_.heads);
      const int proj = G::affine(t, ctx, p(pre + "attn.wo"), p(pre + "attn.bo"));
      h = G::add(t, h, drop(proj));
      const int n2 = G::layernorm(t, h, p(pre + "ln2.gain"), p(pre + "ln2.bias"));
      const int f1 = G::gelu(t, G::affine(t, n2, p(pre + "ffn.w1"), p(pre + "ffn.b1")));
      const int f2 = G::affine(t, f1, p(pre + "ffn.w2"), p(pre + "ffn.b2"));
      h = G::add(t, h, drop(f2));
    }
    const std::string last = "layer." + std::to_string(cfg_.blocks - 1) + ".";
    const int fin =
        G::layernorm(t, h, p(last + "final_ln.gain"), p(last + "final_ln.bias"));
    r.token_states = fin;
    r.pooled = G::first_token_pool(t, fin, batch.batch, batch.len);
    r.hidden_prepool = G::masked_mean_pool(t, fin, batch.mask, batch.batch, batch.len);
    r.logits = G::affine(t, r.pooled, p("head.w"), p("head.b"));
    return r;
  }

 private:
  void check_batch(const EncodedBatch& batch) const {
    if (batch.batch < 1 || static_cast<int>(batch.ids.size()) != batch.batch * batch.len)
      throw DataError("encode: malformed batch");
    if (batch.len > cfg_.max_len)
      throw DataError("encode: sequence longer than max_len positions");
    for (int32_t id : batch.ids)
      if (id < 0 || id >= cfg_.vocab) throw DataError("encode: token id outside vocabulary");
  }
};

}  // namespace

std::vector<std::string> Encoder::group_params(const std::string& group) const {
  const std::vector<std::string> known = group_names();
  bool valid = std::find(known.begin(), known.end(), group) != known.end();
  if (!valid && group == "mine_critic") valid = true;  // resolved by the objective layer
  if (!valid) throw ConfigError("unknown parameter group '" + group + "'");
  return params_in_group(params_, group);
}

std::pair<EncodeResult, EncodeResult> Encoder::make_view_pair(Tape& t,
                                                              const EncodedBatch& batch,
                                                              uint64_t seed_a,
                                                              uint64_t seed_b) {
  EncodeResult a = encode(t, batch, true, seed_a);
  EncodeResult b = encode(t, batch, true, seed_b);
  return {a, b};
}

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg) {
  if (cfg.vocab < 3) throw ConfigError("encoder: vocabulary too small");
  if (cfg.d_model < 1 || cfg.num_classes < 1) throw ConfigError("encoder: bad dimensions");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
    throw ConfigError("encoder: dropout must lie in [0,1)");
  if (cfg.arch == "bag_mlp") return std::make_unique<BagMlpEncoder>(cfg);
  if (cfg.arch == "transformer") return std::make_unique<TinyTransformerEncoder>(cfg);
  throw ConfigError("unknown encoder arch '" + cfg.arch + "'");
}

namespace {

constexpr char kMagic[8] = {'C', 'I', 'F', 'M', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersionTag = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint: truncated file");
}

}  // namespace

void save_checkpoint(const Encoder& enc, const std::string& path,
                     const std::string& extra_manifest_json) {
  const EncoderConfig& c = enc.config();
  json manifest;
  manifest["arch"] = c.arch;
  manifest["vocab"] = c.vocab;
  manifest["max_len"] = c.max_len;
  manifest["d_model"] = c.d_model;
  manifest["hidden"] = c.hidden;
  manifest["heads"] = c.heads;
  manifest["blocks"] = c.blocks;
  manifest["ffn"] = c.ffn;
  manifest["dropout"] = c.dropout;
  manifest["num_classes"] = c.num_classes;
  manifest["regression"] = c.regression;
  manifest["hash_seed"] = c.hash_seed;
  manifest["init_seed"] = c.init_seed;
  manifest["extra"] = json::parse(extra_manifest_json);
  const std::string m = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot write '" + path + "'");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersionTag);
  write_pod(out, static_cast<uint64_t>(m.size()));
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  const ParamStore& ps = enc.params();
  write_pod(out, static_cast<uint32_t>(ps.names.size()));
  for (const std::string& name : ps.names) {
    const Matrix& w = ps.weight(name);
    write_pod(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, w.rows);
    write_pod(out, w.cols);
    out.write(reinterpret_cast<const char*>(w.a.data()),
              static_cast<std::streamsize>(w.a.size() * sizeof(double)));
  }
  if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

std::unique_ptr<Encoder> load_checkpoint(const std::string& path,
                                         std::string* extra_manifest_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic))
    throw DataError("checkpoint: bad magic in '" + path + "'");
  uint32_t version = 0;
  read_pod(in, version);
  if (version != kVersionTag) throw DataError("checkpoint: unsupported version");
  uint64_t mlen = 0;
  read_pod(in, mlen);
  std::string mstr(mlen, '\0');
  in.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw DataError("checkpoint: truncated manifest");
  const json manifest = json::parse(mstr);

  EncoderConfig cfg;
  cfg.arch = manifest.at("arch").get<std::string>();
  cfg.vocab = manifest.at("vocab").get<int>();
  cfg.max_len = manifest.at("max_len").get<int>();
  cfg.d_model = manifest.at("d_model").get<int>();
  cfg.hidden = manifest.at("hidden").get<int>();
  cfg.heads = manifest.at("heads").get<int>();
  cfg.blocks = manifest.at("blocks").get<int>();
  cfg.ffn = manifest.at("ffn").get<int>();
  cfg.dropout = manifest.at("dropout").get<double>();
  cfg.num_classes = manifest.at("num_classes").get<int>();
  cfg.regression = manifest.at("regression").get<bool>();
  cfg.hash_seed = manifest.at("hash_seed").get<uint64_t>();
  cfg.init_seed = manifest.at("init_seed").get<uint64_t>();
  if (extra_manifest_json != nullptr) *extra_manifest_json = manifest.at("extra").dump();

  std::unique_ptr<Encoder> enc = make_encoder(cfg);
  uint32_t count = 0;
  read_pod(in, count);
  if (count != enc->params().names.size())
    throw DataError("checkpoint: tensor count does not match architecture");
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t nlen = 0;
    read_pod(in, nlen);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    int rows = 0, cols = 0;
    read_pod(in, rows);
    read_pod(in, cols);
    if (!enc->params().has(name)) throw DataError("checkpoint: unknown tensor '" + name + "'");
    Matrix& w = enc->params().weight(name);
    if (w.rows != rows || w.cols != cols)
      throw DataError("checkpoint: shape mismatch for '" + name + "'");
    in.read(reinterpret_cast<char*>(w.a.data()),
            static_cast<std::streamsize>(w.a.size() * sizeof(double)));
    if (!in) throw DataError("checkpoint: truncated tensor data");
  }
  return enc;
}

}  // namespace cifm
