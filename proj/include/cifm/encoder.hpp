// Reference encoders mapping token batches to representations Z, with named
// parameter groups so the perturbation machinery can target specific layers,
// stateless dropout views, and a bit-exact checkpoint format.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cifm/data.hpp"
#include "cifm/graph.hpp"
#include "cifm/params.hpp"

namespace cifm {

struct EncoderConfig {
  std::string arch = "transformer";  // "transformer" | "bag_mlp"
  int vocab = 30000;
  int max_len = 128;
  int d_model = 64;   // embedding width and representation width
  int hidden = 128;   // MLP hidden width
  int heads = 2;      // transformer heads
  int blocks = 2;     // transformer blocks
  int ffn = 128;      // transformer feed-forward width
  double dropout = 0.2;
  int num_classes = 2;
  bool regression = false;
  uint64_t hash_seed = 0x9e3779b97f4a7c15ull;  // tokenizer hash seed (recorded)
  uint64_t init_seed = 1;
};

// Node ids on the caller's tape for one forward pass.
struct EncodeResult {
  int pooled = -1;        // N x d_model representation Z
  int logits = -1;        // N x C (classification) or N x 1 (regression)
  int hidden_prepool = -1;  // N x d_model pooled pre-head features (x-proxy)
  int token_states = -1;  // (N*len) x d_model per-token representations
  int embeddings = -1;    // (N*len) x d_model token-embedding output
};

class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~Encoder() = default;

  // Deterministic given (weights, batch, dropout_active, seed).  When
  // embedding_offset is supplied it is added to the token-embedding output
  // (the evaluation-time perturbation hook); shape (N*len) x d_model.
  virtual EncodeResult encode(Tape& t, const EncodedBatch& batch, bool dropout_active,
                              uint64_t seed, const Matrix* embedding_offset = nullptr) = 0;

  virtual std::vector<std::string> group_names() const = 0;

  // Parameters of a named group; unknown names raise ConfigError.
  std::vector<std::string> group_params(const std::string& group) const;

  std::pair<EncodeResult, EncodeResult> make_view_pair(Tape& t, const EncodedBatch& batch,
                                                       uint64_t seed_a, uint64_t seed_b);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const EncoderConfig& config() const { return cfg_; }

 protected:
  EncoderConfig cfg_;
  ParamStore params_;
};

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg);

// Flat named-tensor archive with a JSON manifest; round-trips bit-exactly.
void save_checkpoint(const Encoder& enc, const std::string& path,
                     const std::string& extra_manifest_json = "{}");
std::unique_ptr<Encoder> load_checkpoint(const std::string& path,
                                         std::string* extra_manifest_json = nullptr);

}  // namespace cifm
