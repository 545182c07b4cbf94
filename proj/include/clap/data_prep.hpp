#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "clap/model.hpp"
#include "clap/tokenizer.hpp"

namespace clap {

struct TextDataset {
  std::vector<std::string> records;
};

struct Chunk {
  TokenSequence ids;       // exactly chunk_len entries
  std::vector<bool> real;  // false on the padded suffix
};

struct ChunkedDataset {
  std::size_t chunk_len = 0;
  int pad_id = 0;
  std::vector<Chunk> chunks;
};

/// Loads one JSON object per line ({"text": ...}) or, for .csv files, the
/// "Abstract" column. Blank or missing texts are dropped.
TextDataset load_dataset(const std::filesystem::path& path);
TextDataset parse_jsonl(const std::string& content);
TextDataset parse_abstract_csv(const std::string& content);

/// Tokenizes each record on its own, cuts it into windows of `chunk_len`
/// starting at 0, L, 2L, ... and right-pads the last window with `pad_id`.
ChunkedDataset chunk_and_pad(const Vocab& v, const TextDataset& d, std::size_t chunk_len, int pad_id);
ChunkedDataset chunk_tokens(const std::vector<TokenSequence>& records, std::size_t chunk_len, int pad_id);

/// Seeded shuffle, then the first round(tau * n) shuffled records become the
/// validation set. Returns {train, val}.
std::pair<TextDataset, TextDataset> split(const TextDataset& d, double tau, std::uint64_t seed);
std::size_t validation_size(std::size_t n, double tau);

/// Mean next-token cross-entropy over every position whose target is a real
/// (non-pad) token. Chunks with fewer than two real tokens are skipped.
double eval_loss(const Model& m, const ChunkedDataset& c);

}  // namespace clap
