#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cifm/common.hpp"
#include "cifm/data.hpp"
#include "cifm/oracle.hpp"

using namespace cifm;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
  std::string path = std::string("/tmp/cifm_data_") + name;
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("tokenizer reserves pad and empty ids") {
  Tokenizer tok(1000, 8, 17);
  CHECK(Tokenizer::kPad == 0);
  CHECK(Tokenizer::kEmptyText == 1);
  auto ids = tok.token_ids("alpha beta gamma");
  REQUIRE(ids.size() == 3);
  for (int32_t id : ids) {
    CHECK(id >= 2);
    CHECK(id < 1000);
  }
  // Deterministic across calls and instances with the same seed.
  Tokenizer tok2(1000, 8, 17);
  CHECK(tok2.token_ids("alpha beta gamma") == ids);
  // A different hash seed remaps tokens.
  Tokenizer tok3(1000, 8, 18);
  CHECK(tok3.token_ids("alpha beta gamma") != ids);
}

TEST_CASE("tokenizer maps empty text to the reserved id") {
  Tokenizer tok(1000, 8, 17);
  auto ids = tok.token_ids("");
  REQUIRE(ids.size() == 1);
  CHECK(ids[0] == Tokenizer::kEmptyText);
  auto ws = tok.token_ids("   ");
  REQUIRE(ws.size() == 1);
  CHECK(ws[0] == Tokenizer::kEmptyText);
}

TEST_CASE("encode packs dynamic-length batches with masks") {
  Tokenizer tok(1000, 6, 17);
  std::vector<Example> rows = {
      {"a b c", 0, 0.0}, {"d", 1, 0.0}, {"e f g h i j k l", 2, 0.0}, {"", 0, 0.0}};
  EncodedBatch b = tok.encode(rows, {0, 1, 2, 3}, false);
  CHECK(b.batch == 4);
  CHECK(b.len == 6);  // longest row capped at max_len
  REQUIRE(b.ids.size() == 24);
  REQUIRE(b.mask.rows == 4);
  REQUIRE(b.mask.cols == 6);
  // Row 0: 3 active positions then padding.
  CHECK(b.mask.at(0, 2) == 1);
  CHECK(b.mask.at(0, 3) == 0);
  CHECK(b.ids[3] == Tokenizer::kPad);
  // Row 1: single token.
  CHECK(b.mask.at(1, 0) == 1);
  CHECK(b.mask.at(1, 1) == 0);
  // Row 2: truncated to max_len, fully active.
  for (int j = 0; j < 6; ++j) CHECK(b.mask.at(2, j) == 1);
  // Row 3: empty text becomes one active reserved id.
  CHECK(b.ids[3 * 6 + 0] == Tokenizer::kEmptyText);
  CHECK(b.mask.at(3, 0) == 1);
  CHECK(b.mask.at(3, 1) == 0);
  CHECK(b.labels == std::vector<int32_t>{0, 1, 2, 0});

  // Shorter selection shrinks the packed length.
  EncodedBatch small = tok.encode(rows, {0, 1}, false);
  CHECK(small.len == 3);
}

TEST_CASE("encode carries regression targets") {
  Tokenizer tok(100, 4, 1);
  std::vector<Example> rows = {{"a", -1, 0.5}, {"b", -1, -1.25}};
  EncodedBatch b = tok.encode(rows, {1, 0}, true);
  REQUIRE(b.targets.rows == 2);
  CHECK(b.targets.at(0, 0) == doctest::Approx(-1.25));
  CHECK(b.targets.at(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("ingest parses tsv, csv and jsonl") {
  const std::string tsv = write_temp("a.tsv",
                                     "text\tlabel\n"
                                     "hello world\tpos\n"
                                     "bad day\tneg\n"
                                     "so so\tneu\n");
  auto rows = ingest(tsv, "tsv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].text == "hello world");
  CHECK(rows[0].label == "pos");
  CHECK(rows[2].label == "neu");

  const std::string csv = write_temp("a.csv",
                                     "label,text\n"
                                     "pos,\"hello, quoted\"\n"
                                     "neg,plain\n");
  auto crows = ingest(csv, "csv");
  REQUIRE(crows.size() == 2);
  CHECK(crows[0].text == "hello, quoted");
  CHECK(crows[0].label == "pos");

  const std::string jl = write_temp("a.jsonl",
                                    "{\"text\": \"x y\", \"label\": \"a\"}\n"
                                    "{\"text\": \"z\", \"score\": 1.5}\n");
  auto jrows = ingest(jl, "jsonl");
  REQUIRE(jrows.size() == 2);
  CHECK(jrows[0].label == "a");
  CHECK(jrows[1].has_score);
  CHECK(jrows[1].score == doctest::Approx(1.5));
}

TEST_CASE("ingest raises data errors naming the offending row") {
  const std::string dup = write_temp("dup.tsv", "text\ttext\nx\ty\n");
  CHECK_THROWS_AS(ingest(dup, "tsv"), DataError);
  const std::string missing = write_temp("missing.tsv", "text\tlabel\nonly-text\n");
  CHECK_THROWS_AS(ingest(missing, "tsv"), DataError);
  const std::string nohdr = write_temp("nohdr.tsv", "body\ttag\nx\ty\n");
  CHECK_THROWS_AS(ingest(nohdr, "tsv"), DataError);
  CHECK_THROWS_AS(ingest("/tmp/cifm_data_does_not_exist.tsv", "tsv"), DataError);
  CHECK_THROWS_AS(ingest(dup, "parquet"), ConfigError);
  const std::string badjson = write_temp("bad.jsonl", "{\"text\": \"x\"\n");
  CHECK_THROWS_AS(ingest(badjson, "jsonl"), DataError);
}

TEST_CASE("corpus_from_records interns labels lexicographically") {
  std::vector<RawRecord> train = {{"a", "wolf", 0, false},
                                  {"b", "ant", 0, false},
                                  {"c", "moth", 0, false}};
  std::vector<RawRecord> valid = {{"d", "ant", 0, false}};
  std::vector<RawRecord> test = {{"e", "zebra", 0, false}};
  Corpus c = corpus_from_records("toy", train, valid, test, false);
  REQUIRE(c.class_names == std::vector<std::string>{"ant", "moth", "wolf", "zebra"});
  CHECK(c.train[0].label == 2);
  CHECK(c.train[1].label == 0);
  CHECK(c.valid[0].label == 0);
  CHECK(c.test[0].label == 3);
  CHECK(c.num_classes() == 4);
  CHECK_FALSE(c.regression);
}

TEST_CASE("regression corpora require scores") {
  std::vector<RawRecord> ok = {{"a", "", 1.0, true}};
  Corpus c = corpus_from_records("r", ok, ok, ok, true);
  CHECK(c.regression);
  CHECK(c.train[0].target == doctest::Approx(1.0));
  std::vector<RawRecord> bad = {{"a", "pos", 0.0, false}};
  CHECK_THROWS_AS(corpus_from_records("r", bad, bad, bad, true), DataError);
}

TEST_CASE("ingest-export-ingest round trip is lossless") {
  Corpus c = oracle::make_synthetic_corpus("separable", 60, 11);
  const std::string path = "/tmp/cifm_data_roundtrip.jsonl";
  export_jsonl(c, c.train, path);
  auto rows = ingest(path, "jsonl");
  REQUIRE(rows.size() == c.train.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].text == c.train[i].text);
    CHECK(rows[i].label == c.class_names[c.train[i].label]);
  }
  // Second hop: re-export the re-ingested records and compare bytes.
  Corpus c2 = corpus_from_records(c.name, rows, rows, rows, false);
  const std::string path2 = "/tmp/cifm_data_roundtrip2.jsonl";
  export_jsonl(c2, c2.train, path2);
  std::ifstream f1(path), f2(path2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
}

TEST_CASE("index_batches covers the range in order") {
  auto b = index_batches(10, 4);
  REQUIRE(b.size() == 3);
  CHECK(b[0] == std::vector<int>{0, 1, 2, 3});
  CHECK(b[2] == std::vector<int>{8, 9});
  auto one = index_batches(3, 8);
  REQUIRE(one.size() == 1);
  CHECK(one[0].size() == 3);
}
