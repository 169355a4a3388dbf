// Dataset representation: examples, corpora with splits, the hashing
// tokenizer, and encoded batches ready for the encoders.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cifm/tensor.hpp"

namespace cifm {

struct Example {
  std::string text;
  int32_t label = -1;   // class index (classification)
  double target = 0.0;  // real target (regression)
};

struct Corpus {
  std::string name;
  bool regression = false;
  std::vector<std::string> class_names;  // index == label id; empty for regression
  std::vector<Example> train, valid, test;
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

// One batch in model-ready form.  Token rows are packed sample-major:
// row (n*len + j) is token j of sample n.  Every mask row has at least one
// active position (empty texts encode to the reserved empty-text id).
struct EncodedBatch {
  int batch = 0;
  int len = 0;
  std::vector<int32_t> ids;     // batch*len entries, kPad where inactive
  IntMatrix mask;               // batch x len
  std::vector<int32_t> labels;  // batch entries (classification)
  Matrix targets;               // batch x 1 (regression; zeros otherwise)
};

// Whitespace tokenizer over a hashed vocabulary.  Ids 0 and 1 are reserved
// (padding and empty text); real tokens hash into [2, vocab).
class Tokenizer {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kEmptyText = 1;

  Tokenizer(int vocab, int max_len, uint64_t hash_seed);

  EncodedBatch encode(const std::vector<Example>& rows, const std::vector<int>& idx,
                      bool regression) const;
  std::vector<int32_t> token_ids(const std::string& text) const;

  int vocab() const { return vocab_; }
  int max_len() const { return max_len_; }
  uint64_t hash_seed() const { return hash_seed_; }

 private:
  int vocab_;
  int max_len_;
  uint64_t hash_seed_;
};

// Raw parsed record before label interning.
struct RawRecord {
  std::string text;
  std::string label;
  double score = 0.0;
  bool has_score = false;
};

// Reads `text` + `label` (or `score`) records from a tsv/csv/jsonl file.
// Malformed input raises DataError naming the offending row.
std::vector<RawRecord> ingest(const std::string& path, const std::string& format);

// Interns labels in lexicographic order across all three splits and builds
// the corpus.  Regression corpora require `score` on every record.
Corpus corpus_from_records(const std::string& name, const std::vector<RawRecord>& train,
                           const std::vector<RawRecord>& valid,
                           const std::vector<RawRecord>& test, bool regression);

// Writes a split back out as line-JSON (`text` + `label` or `score`).
void export_jsonl(const Corpus& corpus, const std::vector<Example>& split,
                  const std::string& path);

// Sequential index batches [0,n) of at most batch_size each.
std::vector<std::vector<int>> index_batches(int n, int batch_size);

}  // namespace cifm
