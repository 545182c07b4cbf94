#include "clap/data_prep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "clap/error.hpp"
#include "clap/random.hpp"
#include "json.hpp"

namespace clap {

namespace {

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

// RFC 4180 rows: quoted fields may contain commas, newlines and "" escapes.
std::vector<std::vector<std::string>> parse_csv_rows(const std::string& s) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    any = true;
    if (quoted) {
      if (c == '"') {
        if (i + 1 < s.size() && s[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < s.size() && s[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw ParseError("csv: unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

TextDataset parse_jsonl(const std::string& content) {
  TextDataset d;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError("dataset line " + std::to_string(line_no) + ": expected an object");
    auto it = j.find("text");
    if (it == j.end() || !it->is_string()) continue;
    auto text = it->get<std::string>();
    if (!blank(text)) d.records.push_back(std::move(text));
  }
  return d;
}

TextDataset parse_abstract_csv(const std::string& content) {
  const auto rows = parse_csv_rows(content);
  if (rows.empty()) throw ParseError("csv: missing header row");
  const auto& header = rows.front();
  const auto col = std::find(header.begin(), header.end(), "Abstract");
  if (col == header.end()) throw ParseError("csv: no 'Abstract' column in header");
  const auto idx = static_cast<std::size_t>(col - header.begin());
  TextDataset d;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (idx >= rows[r].size()) continue;
    const auto& text = rows[r][idx];
    if (blank(text) || text == "NaN" || text == "nan") continue;
    d.records.push_back(text);
  }
  return d;
}

TextDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".csv") return parse_abstract_csv(ss.str());
  return parse_jsonl(ss.str());
}

ChunkedDataset chunk_tokens(const std::vector<TokenSequence>& records, std::size_t chunk_len, int pad_id) {
  if (chunk_len == 0) throw ArgumentError("chunk length must be positive");
  ChunkedDataset out{chunk_len, pad_id, {}};
  for (const auto& ids : records) {
    for (std::size_t start = 0; start < ids.size(); start += chunk_len) {
      const std::size_t n = std::min(chunk_len, ids.size() - start);
      Chunk c;
      c.ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(start),
                   ids.begin() + static_cast<std::ptrdiff_t>(start + n));
      c.ids.resize(chunk_len, pad_id);
      c.real.assign(chunk_len, false);
      std::fill_n(c.real.begin(), n, true);
      out.chunks.push_back(std::move(c));
    }
  }
  return out;
}

ChunkedDataset chunk_and_pad(const Vocab& v, const TextDataset& d, std::size_t chunk_len, int pad_id) {
  std::vector<TokenSequence> encoded;
  encoded.reserve(d.records.size());
  for (const auto& r : d.records) encoded.push_back(encode(v, r));
  return chunk_tokens(encoded, chunk_len, pad_id);
}

std::size_t validation_size(std::size_t n, double tau) {
  return static_cast<std::size_t>(std::llround(tau * static_cast<double>(n)));
}

std::pair<TextDataset, TextDataset> split(const TextDataset& d, double tau, std::uint64_t seed) {
  if (!(tau > 0.0 && tau < 1.0)) throw ArgumentError("split fraction must lie in (0, 1)");
  if (d.records.size() < 2) throw ArgumentError("split needs at least two records");
  std::vector<std::size_t> order(d.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t n_val = validation_size(d.records.size(), tau);
  TextDataset train, val;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? val : train).records.push_back(d.records[order[i]]);
  }
  return {std::move(train), std::move(val)};
}

double eval_loss(const Model& m, const ChunkedDataset& c) {
  if (c.chunks.empty()) throw ArgumentError("eval_loss needs at least one chunk");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& chunk : c.chunks) {
    const auto n_real = static_cast<std::size_t>(std::count(chunk.real.begin(), chunk.real.end(), true));
    if (n_real < 2) continue;
    // Pad positions form a suffix, so the real prefix is all the model needs.
    const TokenSequence input(chunk.ids.begin(), chunk.ids.begin() + static_cast<std::ptrdiff_t>(n_real));
    const Tensor logits = run_forward(m, input, {});
    for (std::size_t p = 0; p + 1 < n_real; ++p) {
      const auto row = logits.row(p);
      const double mx = *std::max_element(row.begin(), row.end());
      double sum = 0.0;
      for (float x : row) sum += std::exp(static_cast<double>(x) - mx);
      const double log_z = mx + std::log(sum);
      total += log_z - static_cast<double>(row[static_cast<std::size_t>(input[p + 1])]);
      ++count;
    }
  }
  if (count == 0) throw ArgumentError("eval_loss: every chunk has fewer than two real tokens");
  return total / static_cast<double>(count);
}

}  // namespace clap
