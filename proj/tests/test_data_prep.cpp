#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "clap/data_prep.hpp"
#include "clap/error.hpp"
#include "test_support.hpp"

namespace clap {
namespace {

using testing::random_tokens;

// One-layer model over 8 tokens whose MLP writes the direction of token
// t+1 (mod 8) at every position holding t.
Model successor_model() {
  ModelConfig c;
  c.n_layer = 1;
  c.n_head = 2;
  c.d_model = 16;
  c.d_mlp = 16;
  c.vocab_size = 8;
  c.n_ctx = 64;
  auto t = Model::zeros(c).to_tensor_file().tensors;
  for (std::size_t k = 0; k < 8; ++k) {
    const std::size_t next = (k + 1) % 8;
    t.at("wte").at(k, k) = 1.0f;
    t.at("wte").at(k, k + 8) = -1.0f;
    t.at("h.0.mlp.c_fc.weight").at(k, k) = 10.0f;
    t.at("h.0.mlp.c_fc.bias").data()[k] = -10.0f;
    t.at("h.0.mlp.c_proj.weight").at(k, next) = 1.0f;
    t.at("h.0.mlp.c_proj.weight").at(k, next + 8) = -1.0f;
  }
  for (float& g : t.at("ln_f.weight").data()) g = 10.0f;
  return Model(c, t);
}

double brute_force_loss(const Model& m, const std::vector<TokenSequence>& seqs) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& s : seqs) {
    for (std::size_t p = 1; p < s.size(); ++p) {
      const TokenSequence prefix(s.begin(), s.begin() + static_cast<long>(p));
      const Tensor logits = forward(m, prefix).logits;
      double z = 0.0;
      for (float x : logits.row(p - 1)) z += std::exp(static_cast<double>(x));
      total += -std::log(std::exp(static_cast<double>(logits.at(p - 1, static_cast<std::size_t>(s[p])))) / z);
      ++n;
    }
  }
  return total / static_cast<double>(n);
}

TEST(Chunk, ExactLength) {
  const TokenSequence r(512, 7);
  const auto c = chunk_tokens({r}, 512, 0);
  ASSERT_EQ(c.chunks.size(), 1u);
  EXPECT_EQ(c.chunks[0].ids, r);
  EXPECT_EQ(std::count(c.chunks[0].real.begin(), c.chunks[0].real.end(), true), 512);
}

TEST(Chunk, EmptyRecordContributesNothing) {
  EXPECT_TRUE(chunk_tokens({{}}, 512, 0).chunks.empty());
}

TEST(Chunk, LastWindowIsPadded) {
  TokenSequence r(1200);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<int>(i % 50);
  const auto c = chunk_tokens({r}, 512, 63);
  ASSERT_EQ(c.chunks.size(), 3u);
  const Chunk& last = c.chunks[2];
  EXPECT_EQ(std::count(last.real.begin(), last.real.end(), false), 336);
  EXPECT_EQ(std::count(last.ids.begin() + 176, last.ids.end(), 63), 336);
  EXPECT_EQ(last.ids[0], r[1024]);
}

TEST(Chunk, ReassemblyOnRandomRecords) {
  Rng rng(77);
  std::vector<TokenSequence> records;
  for (int i = 0; i < 200; ++i) records.push_back(random_tokens(rng, rng.below(1500), 64));
  const std::size_t len = 1 + rng.below(600);
  const auto c = chunk_tokens(records, len, -1);
  std::size_t at = 0;
  for (const auto& r : records) {
    TokenSequence back;
    const std::size_t n_chunks = (r.size() + len - 1) / len;
    for (std::size_t k = 0; k < n_chunks; ++k, ++at) {
      const Chunk& ch = c.chunks.at(at);
      ASSERT_EQ(ch.ids.size(), len);
      for (std::size_t i = 0; i < len; ++i)
        if (ch.real[i]) back.push_back(ch.ids[i]);
    }
    ASSERT_EQ(back, r);
  }
  EXPECT_EQ(at, c.chunks.size());
}

TEST(Chunk, TextRecordsAreTokenizedSeparately) {
  const Vocab v = make_toy_vocab(64);
  const auto c = chunk_and_pad(v, {{"ab", "cd"}}, 4, 63);
  ASSERT_EQ(c.chunks.size(), 2u);
  EXPECT_EQ(c.chunks[1].ids[0], encode(v, "cd")[0]);
  EXPECT_THROW(chunk_tokens({{1}}, 0, 0), ArgumentError);
}

TEST(Split, Cardinalities) {
  TextDataset d;
  for (int i = 0; i < 10; ++i) d.records.push_back("r" + std::to_string(i));
  const auto [train, val] = split(d, 0.2, 42);
  EXPECT_EQ(train.records.size(), 8u);
  EXPECT_EQ(val.records.size(), 2u);
  EXPECT_EQ(validation_size(9958, 0.2), 1992u);
}

TEST(Split, PartitionAndSeeds) {
  TextDataset d;
  for (int i = 0; i < 9958; ++i) d.records.push_back(std::to_string(i));
  const auto [train, val] = split(d, 0.2, 42);
  EXPECT_EQ(train.records.size(), 7966u);
  EXPECT_EQ(val.records.size(), 1992u);
  std::multiset<std::string> all(train.records.begin(), train.records.end());
  all.insert(val.records.begin(), val.records.end());
  EXPECT_EQ(all, std::multiset<std::string>(d.records.begin(), d.records.end()));
  EXPECT_EQ(split(d, 0.2, 42).second.records, val.records);
  EXPECT_NE(split(d, 0.2, 43).second.records, val.records);
  EXPECT_THROW(split(d, 1.0, 42), ArgumentError);
}

TEST(EvalLoss, UniformLogitsGiveLogVocab) {
  const Model m = Model::zeros(testing::toy_config());
  Rng rng(2);
  std::vector<TokenSequence> records;
  for (int i = 0; i < 10; ++i) records.push_back(random_tokens(rng, 1 + rng.below(100), 64));
  EXPECT_NEAR(eval_loss(m, chunk_tokens(records, 32, 0)), std::log(64.0), 1e-6);
}

TEST(EvalLoss, SuccessorModelIsNearZero) {
  const Model m = successor_model();
  std::vector<TokenSequence> records;
  for (int start = 0; start < 8; ++start) {
    TokenSequence r;
    for (int i = 0; i < 20; ++i) r.push_back((start + i) % 8);
    records.push_back(r);
  }
  EXPECT_LT(eval_loss(m, chunk_tokens(records, 16, 0)), 1e-6);
  TokenSequence backwards;
  for (int i = 0; i < 20; ++i) backwards.push_back(7 - i % 8);
  EXPECT_GT(eval_loss(m, chunk_tokens({backwards}, 16, 0)), 10.0);
}

TEST(EvalLoss, MatchesBruteForce) {
  const Model m = toy_model(5, testing::toy_config());
  Rng rng(5);
  std::vector<TokenSequence> records;
  for (int i = 0; i < 4; ++i) records.push_back(random_tokens(rng, 2 + rng.below(30), 64));
  const auto chunks = chunk_tokens(records, 64, 0);
  EXPECT_NEAR(eval_loss(m, chunks), brute_force_loss(m, records), 1e-6);
}

TEST(EvalLoss, PadPositionsAreIgnored) {
  const Model m = toy_model(5, testing::toy_config());
  const TokenSequence r{4, 9, 1, 33, 2};
  EXPECT_DOUBLE_EQ(eval_loss(m, chunk_tokens({r}, 8, 0)), eval_loss(m, chunk_tokens({r}, 8, 63)));
  EXPECT_THROW(eval_loss(m, chunk_tokens({{1}, {2}}, 8, 0)), ArgumentError);
}

TEST(Datasets, Jsonl) {
  const auto d = parse_jsonl("{\"text\": \"one\"}\n\n{\"text\": \"  \"}\n{\"id\": 3}\n{\"text\": \"two\"}\n");
  EXPECT_EQ(d.records, (std::vector<std::string>{"one", "two"}));
  EXPECT_THROW(parse_jsonl("{\"text\": \"one\"}\n{oops\n"), ParseError);
}

TEST(Datasets, AbstractCsv) {
  const std::string csv =
      "Title,Abstract,Year\n"
      "a,\"First, with comma\nand newline\",2020\n"
      "b,NaN,2021\n"
      "c,,2022\n"
      "d,\"Quoted \"\"word\"\"\",2023\n";
  const auto d = parse_abstract_csv(csv);
  EXPECT_EQ(d.records, (std::vector<std::string>{"First, with comma\nand newline", "Quoted \"word\""}));
  EXPECT_THROW(parse_abstract_csv("Title,Body\nx,y\n"), ParseError);
}

TEST(Datasets, LoadByExtension) {
  const auto dir = testing::scratch_dir("datasets");
  std::ofstream(dir / "d.csv") << "Abstract\nhello\n";
  std::ofstream(dir / "d.jsonl") << "{\"text\": \"hi\"}\n";
  EXPECT_EQ(load_dataset(dir / "d.csv").records, std::vector<std::string>{"hello"});
  EXPECT_EQ(load_dataset(dir / "d.jsonl").records, std::vector<std::string>{"hi"});
  EXPECT_THROW(load_dataset(dir / "missing.jsonl"), IoError);
}

}  // namespace
}  // namespace clap
