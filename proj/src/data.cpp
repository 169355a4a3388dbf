#include "cifm/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include <json.hpp>

#include "cifm/common.hpp"

namespace cifm {

using nlohmann::json;

Tokenizer::Tokenizer(int vocab, int max_len, uint64_t hash_seed)
    : vocab_(vocab), max_len_(max_len), hash_seed_(hash_seed) {
  if (vocab < 3) throw ConfigError("tokenizer: vocabulary must hold the two reserved ids");
  if (max_len < 1) throw ConfigError("tokenizer: max_len must be positive");
}

std::vector<int32_t> Tokenizer::token_ids(const std::string& text) const {
  std::vector<int32_t> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) {
      const uint64_t h = fnv1a(text.data() + i, j - i, hash_seed_);
      out.push_back(2 + static_cast<int32_t>(h % static_cast<uint64_t>(vocab_ - 2)));
      if (static_cast<int>(out.size()) == max_len_) break;
    }
    i = j;
  }
  if (out.empty()) out.push_back(kEmptyText);
  return out;
}

EncodedBatch Tokenizer::encode(const std::vector<Example>& rows, const std::vector<int>& idx,
                               bool regression) const {
  if (idx.empty()) throw DataError("encode: empty batch");
  std::vector<std::vector<int32_t>> toks(idx.size());
  int len = 1;
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= static_cast<int>(rows.size()))
      throw DataError("encode: example index out of range");
    toks[r] = token_ids(rows[idx[r]].text);
    len = std::max(len, static_cast<int>(toks[r].size()));
  }
  EncodedBatch b;
  b.batch = static_cast<int>(idx.size());
  b.len = len;
  b.ids.assign(static_cast<size_t>(b.batch) * len, kPad);
  b.mask = IntMatrix(b.batch, len);
  b.targets = Matrix(b.batch, 1);
  b.targets.zero();
  for (int r = 0; r < b.batch; ++r) {
    for (size_t j = 0; j < toks[r].size(); ++j) {
      b.ids[static_cast<size_t>(r) * len + j] = toks[r][j];
      b.mask.at(r, static_cast<int>(j)) = 1;
    }
    const Example& ex = rows[idx[r]];
    if (regression)
      b.targets.at(r, 0) = ex.target;
    else
      b.labels.push_back(ex.label);
  }
  return b;
}

namespace {

std::vector<std::string> split_tsv_line(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return out;
}

// Minimal RFC-4180 row parser: quoted fields, doubled-quote escapes.
std::vector<std::string> split_csv_line(const std::string& line, int row_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted)
    throw DataError("row " + std::to_string(row_no) + ": unterminated quoted field");
  out.push_back(std::move(field));
  return out;
}

double parse_score(const std::string& s, int row_no) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("row " + std::to_string(row_no) + ": malformed score '" + s + "'");
  }
}

std::vector<RawRecord> ingest_delimited(std::istream& in, bool csv) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty split: no header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header =
      csv ? split_csv_line(line, 1) : split_tsv_line(line);
  int text_col = -1, label_col = -1, score_col = -1;
  for (size_t c = 0; c < header.size(); ++c) {
    int* slot = nullptr;
    if (header[c] == "text")
      slot = &text_col;
    else if (header[c] == "label")
      slot = &label_col;
    else if (header[c] == "score")
      slot = &score_col;
    if (slot == nullptr) continue;
    if (*slot >= 0) throw DataError("duplicate column '" + header[c] + "'");
    *slot = static_cast<int>(c);
  }
  if (text_col < 0) throw DataError("missing column 'text'");
  if (label_col < 0 && score_col < 0) throw DataError("missing column 'label' (or 'score')");

  std::vector<RawRecord> out;
  int row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells =
        csv ? split_csv_line(line, row_no) : split_tsv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(row_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(cells.size()));
    RawRecord r;
    r.text = cells[text_col];
    if (label_col >= 0) r.label = cells[label_col];
    if (score_col >= 0) {
      r.score = parse_score(cells[score_col], row_no);
      r.has_score = true;
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw DataError("empty split: no data rows");
  return out;
}

std::vector<RawRecord> ingest_jsonl(std::istream& in) {
  std::vector<RawRecord> out;
  std::string line;
  int row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("row " + std::to_string(row_no) + ": invalid JSON (" + e.what() + ")");
    }
    if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string())
      throw DataError("row " + std::to_string(row_no) + ": missing string field 'text'");
    RawRecord r;
    r.text = obj["text"].get<std::string>();
    if (obj.contains("label")) {
      const json& l = obj["label"];
      r.label = l.is_string() ? l.get<std::string>() : l.dump();
    }
    if (obj.contains("score")) {
      if (!obj["score"].is_number())
        throw DataError("row " + std::to_string(row_no) + ": 'score' is not a number");
      r.score = obj["score"].get<double>();
      r.has_score = true;
    }
    if (r.label.empty() && !r.has_score)
      throw DataError("row " + std::to_string(row_no) + ": need 'label' or 'score'");
    out.push_back(std::move(r));
  }
  if (out.empty()) throw DataError("empty split: no data rows");
  return out;
}

}  // namespace

std::vector<RawRecord> ingest(const std::string& path, const std::string& format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  if (format == "tsv") return ingest_delimited(in, false);
  if (format == "csv") return ingest_delimited(in, true);
  if (format == "jsonl") return ingest_jsonl(in);
  throw ConfigError("unknown dataset format '" + format + "' (expected tsv|csv|jsonl)");
}

Corpus corpus_from_records(const std::string& name, const std::vector<RawRecord>& train,
                           const std::vector<RawRecord>& valid,
                           const std::vector<RawRecord>& test, bool regression) {
  Corpus c;
  c.name = name;
  c.regression = regression;
  std::map<std::string, int32_t> intern;
  if (!regression) {
    for (const auto* split : {&train, &valid, &test})
      for (const RawRecord& r : *split) {
        if (r.label.empty()) throw DataError("classification corpus: record without label");
        intern.emplace(r.label, 0);
      }
    for (auto& [label_name, id] : intern) {
      id = static_cast<int32_t>(c.class_names.size());
      c.class_names.push_back(label_name);
    }
  }
  auto convert = [&](const std::vector<RawRecord>& in, std::vector<Example>& out) {
    out.reserve(in.size());
    for (const RawRecord& r : in) {
      Example e;
      e.text = r.text;
      if (regression) {
        if (!r.has_score) throw DataError("regression corpus: record without score");
        e.target = r.score;
      } else {
        e.label = intern.at(r.label);
      }
      out.push_back(std::move(e));
    }
  };
  convert(train, c.train);
  convert(valid, c.valid);
  convert(test, c.test);
  return c;
}

void export_jsonl(const Corpus& corpus, const std::vector<Example>& split,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const Example& e : split) {
    json obj;
    obj["text"] = e.text;
    if (corpus.regression)
      obj["score"] = e.target;
    else
      obj["label"] = corpus.class_names.at(e.label);
    out << obj.dump() << "\n";
  }
}

std::vector<std::vector<int>> index_batches(int n, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  std::vector<std::vector<int>> out;
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> b;
    for (int i = start; i < std::min(n, start + batch_size); ++i) b.push_back(i);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace cifm
