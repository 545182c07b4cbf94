#include "clap/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <sstream>

#include "clap/error.hpp"
#include "clap/unicode_tables.hpp"
#include "json.hpp"

namespace clap {

// ---------------------------------------------------------------------------
// UTF-8 and character classes
// ---------------------------------------------------------------------------

namespace utf8 {

std::pair<std::uint32_t, std::size_t> next(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  std::size_t len = 0;
  std::uint32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {0xFFFD, 1};
  }
  if (i + len > s.size()) return {0xFFFD, 1};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {0xFFFD, 1};
    cp = (cp << 6) | (b & 0x3F);
  }
  static constexpr std::array<std::uint32_t, 5> k_min = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < k_min[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return {0xFFFD, 1};
  return {cp, len};
}

void append(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

namespace {

template <std::size_t N>
bool in_table(const std::array<unicode_tables::Range, N>& table, std::uint32_t cp) {
  auto it = std::upper_bound(table.begin(), table.end(), cp,
                             [](std::uint32_t v, const unicode_tables::Range& r) { return v < r.lo; });
  if (it == table.begin()) return false;
  --it;
  return cp <= it->hi;
}

}  // namespace

bool is_letter(std::uint32_t cp) { return in_table(unicode_tables::k_letter, cp); }
bool is_number(std::uint32_t cp) { return in_table(unicode_tables::k_number, cp); }
bool is_space(std::uint32_t cp) { return in_table(unicode_tables::k_space, cp); }

}  // namespace utf8

// ---------------------------------------------------------------------------
// Byte alphabet
// ---------------------------------------------------------------------------

namespace {

struct ByteAlphabet {
  std::array<std::string, 256> symbol;
  std::array<int, 324> byte_of;  // code point -> byte, -1 if unused

  ByteAlphabet() {
    byte_of.fill(-1);
    auto printable = [](int b) {
      return (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
    };
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
      const std::uint32_t cp = printable(b) ? static_cast<std::uint32_t>(b)
                                            : static_cast<std::uint32_t>(256 + extra++);
      utf8::append(symbol[b], cp);
      byte_of[cp] = b;
    }
  }
};

const ByteAlphabet& alphabet() {
  static const ByteAlphabet a;
  return a;
}

std::string merge_key(std::string_view a, std::string_view b) {
  std::string k;
  k.reserve(a.size() + b.size() + 1);
  k.append(a).append(" ").append(b);
  return k;
}

}  // namespace

const std::string& byte_symbol(std::uint8_t b) { return alphabet().symbol[b]; }

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

Vocab::Vocab(std::vector<std::string> tokens, std::vector<Merge> merges)
    : id_to_token_(std::move(tokens)), merges_(std::move(merges)) {
  token_to_id_.reserve(id_to_token_.size());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    auto [it, inserted] = token_to_id_.emplace(id_to_token_[i], static_cast<int>(i));
    if (!inserted) {
      throw IntegrityError("token '" + id_to_token_[i] + "' appears with ids " +
                           std::to_string(it->second) + " and " + std::to_string(i));
    }
  }
  merge_ranks_.reserve(merges_.size());
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [a, b] = merges_[r];
    for (const std::string* s : {&a, &b}) {
      if (!token_to_id_.contains(*s)) {
        throw IntegrityError("merge " + std::to_string(r) + " ('" + a + "' '" + b +
                             "') uses unknown symbol '" + *s + "'");
      }
    }
    if (!token_to_id_.contains(a + b)) {
      throw IntegrityError("merge " + std::to_string(r) + " ('" + a + "' '" + b +
                           "') produces a token missing from the vocabulary");
    }
    merge_ranks_.emplace(merge_key(a, b), static_cast<int>(r));
  }
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw RangeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(id_to_token_.size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocab::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Vocab::merge_rank(std::string_view a, std::string_view b) const {
  auto it = merge_ranks_.find(merge_key(a, b));
  if (it == merge_ranks_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Vocab parse_vocab(std::string_view vocab_json, std::string_view merges_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(vocab_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("vocab.json: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("vocab.json: top level must be an object");

  std::vector<std::string> tokens(j.size());
  std::vector<bool> seen(j.size(), false);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number_integer()) {
      throw ParseError("vocab.json: entry '" + it.key() + "' has a non-integer id");
    }
    const auto id = it.value().get<long long>();
    if (id < 0 || static_cast<std::size_t>(id) >= tokens.size()) {
      throw IntegrityError("vocab.json: entry '" + it.key() + "' has id " + std::to_string(id) +
                           " outside [0, " + std::to_string(tokens.size()) + ")");
    }
    if (seen[static_cast<std::size_t>(id)]) {
      throw IntegrityError("vocab.json: duplicate id " + std::to_string(id) + " ('" +
                           tokens[static_cast<std::size_t>(id)] + "' and '" + it.key() + "')");
    }
    seen[static_cast<std::size_t>(id)] = true;
    tokens[static_cast<std::size_t>(id)] = it.key();
  }

  std::vector<Vocab::Merge> merges;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= merges_text.size()) {
    std::size_t end = merges_text.find('\n', pos);
    if (end == std::string_view::npos) end = merges_text.size();
    std::string_view line = merges_text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line_no == 1 && line.starts_with("#version")) continue;
    const auto sp = line.find(' ');
    if (sp == std::string_view::npos || sp == 0 || sp + 1 == line.size() ||
        line.find(' ', sp + 1) != std::string_view::npos) {
      throw ParseError("merges.txt line " + std::to_string(line_no) + ": expected 'a b', got '" +
                       std::string(line) + "'");
    }
    merges.emplace_back(std::string(line.substr(0, sp)), std::string(line.substr(sp + 1)));
  }
  return Vocab(std::move(tokens), std::move(merges));
}

Vocab load_vocab(const std::filesystem::path& vocab_file, const std::filesystem::path& merges_file) {
  return parse_vocab(read_file(vocab_file), read_file(merges_file));
}

void save_vocab(const Vocab& v, const std::filesystem::path& vocab_file,
                const std::filesystem::path& merges_file) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < v.size(); ++i) j[v.token(static_cast<int>(i))] = i;
  std::ofstream vj(vocab_file, std::ios::binary);
  if (!vj) throw IoError("cannot write " + vocab_file.string());
  vj << j.dump();
  std::ofstream mt(merges_file, std::ios::binary);
  if (!mt) throw IoError("cannot write " + merges_file.string());
  mt << "#version: 0.2\n";
  for (const auto& [a, b] : v.merges()) mt << a << ' ' << b << '\n';
}

Vocab make_toy_vocab(std::size_t size) {
  if (size < 2) throw ArgumentError("toy vocabulary needs at least 2 tokens");

  std::vector<int> byte_order;
  std::array<bool, 256> used{};
  auto push = [&](int b) {
    if (!used[b]) {
      used[b] = true;
      byte_order.push_back(b);
    }
  };
  push(' ');
  for (int c = 'a'; c <= 'z'; ++c) push(c);
  for (int c = 'A'; c <= 'Z'; ++c) push(c);
  for (int c = '0'; c <= '9'; ++c) push(c);
  for (char c : std::string_view(".,?!'-:;()\"\n")) push(static_cast<unsigned char>(c));
  for (int b = 0; b < 256; ++b) push(b);

  std::vector<std::string> tokens;
  const std::size_t n_bytes = std::min<std::size_t>(size - 1, 256);
  for (std::size_t i = 0; i < n_bytes; ++i) tokens.push_back(byte_symbol(static_cast<std::uint8_t>(byte_order[i])));

  std::vector<Vocab::Merge> merges;
  if (size > 257) {
    const std::string space = byte_symbol(' ');
    std::vector<Vocab::Merge> candidates;
    for (char c = 'a'; c <= 'z'; ++c) candidates.emplace_back(space, std::string(1, c));
    static constexpr std::string_view k_common[] = {
        "th", "he", "in", "er", "an", "re", "on", "at", "en", "nd", "ti", "es", "or",
        "te", "of", "ed", "is", "it", "al", "ar", "st", "to", "nt", "ng", "se", "ha",
        "as", "ou", "io", "le", "ve", "co", "me", "de", "hi", "ri", "ro", "ic", "ne",
        "ea", "ra", "ce", "li", "ch", "ll", "be", "ma", "si", "om", "ur"};
    for (auto bg : k_common) candidates.emplace_back(std::string(1, bg[0]), std::string(1, bg[1]));
    for (auto bg : k_common) candidates.emplace_back(space + bg[0], std::string(1, bg[1]));
    for (char a = 'a'; a <= 'z'; ++a)
      for (char b = 'a'; b <= 'z'; ++b) candidates.emplace_back(std::string(1, a), std::string(1, b));

    std::unordered_map<std::string, bool> have;
    for (const auto& t : tokens) have[t] = true;
    for (const auto& m : candidates) {
      if (tokens.size() + 1 >= size) break;
      const std::string merged = m.first + m.second;
      if (have.contains(merged)) continue;
      have[merged] = true;
      tokens.push_back(merged);
      merges.push_back(m);
    }
    if (tokens.size() + 1 < size) {
      throw ArgumentError("toy vocabulary cannot reach size " + std::to_string(size));
    }
  }
  tokens.emplace_back("<|endoftext|>");
  return Vocab(std::move(tokens), std::move(merges));
}

// ---------------------------------------------------------------------------
// Pre-tokenization
// ---------------------------------------------------------------------------

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::uint32_t> cps;
  std::vector<std::size_t> offs;
  for (std::size_t i = 0; i < text.size();) {
    auto [cp, len] = utf8::next(text, i);
    cps.push_back(cp);
    offs.push_back(i);
    i += len;
  }
  const std::size_t n = cps.size();
  offs.push_back(text.size());

  auto letter = [&](std::size_t k) { return k < n && utf8::is_letter(cps[k]); };
  auto number = [&](std::size_t k) { return k < n && utf8::is_number(cps[k]); };
  auto space = [&](std::size_t k) { return k < n && utf8::is_space(cps[k]); };
  auto other = [&](std::size_t k) { return k < n && !space(k) && !letter(k) && !number(k); };
  auto is = [&](std::size_t k, char c) { return k < n && cps[k] == static_cast<std::uint32_t>(c); };

  auto match_at = [&](std::size_t i) -> std::size_t {
    if (is(i, '\'')) {
      if (is(i + 1, 's') || is(i + 1, 't') || is(i + 1, 'm') || is(i + 1, 'd')) return i + 2;
      if ((is(i + 1, 'r') && is(i + 2, 'e')) || (is(i + 1, 'v') && is(i + 2, 'e')) ||
          (is(i + 1, 'l') && is(i + 2, 'l'))) {
        return i + 3;
      }
    }
    const std::size_t k = is(i, ' ') ? i + 1 : i;
    for (auto cls : {+0, 1, 2}) {
      auto pred = [&](std::size_t p) { return cls == 0 ? letter(p) : cls == 1 ? number(p) : other(p); };
      if (pred(k)) {
        std::size_t j = k;
        while (pred(j)) ++j;
        return j;
      }
    }
    // \s+(?!\S) then \s+
    std::size_t j = i;
    while (space(j)) ++j;
    if (j == n) return j;
    if (j - 1 > i) return j - 1;
    return j;
  };

  std::vector<std::string_view> out;
  for (std::size_t i = 0; i < n;) {
    const std::size_t j = match_at(i);
    out.push_back(text.substr(offs[i], offs[j] - offs[i]));
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encode / decode
// ---------------------------------------------------------------------------

namespace {

void bpe_word(const Vocab& v, std::string_view word, TokenSequence& out) {
  std::vector<std::string> parts;
  parts.reserve(word.size());
  for (char c : word) parts.push_back(byte_symbol(static_cast<std::uint8_t>(c)));

  while (parts.size() > 1) {
    int best = std::numeric_limits<int>::max();
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (auto r = v.merge_rank(parts[i], parts[i + 1]); r && *r < best) {
        best = *r;
        best_at = i;
      }
    }
    if (best == std::numeric_limits<int>::max()) break;
    const std::string first = parts[best_at];
    const std::string second = parts[best_at + 1];
    std::vector<std::string> merged;
    merged.reserve(parts.size());
    for (std::size_t i = 0; i < parts.size();) {
      if (i + 1 < parts.size() && parts[i] == first && parts[i + 1] == second) {
        merged.push_back(first + second);
        i += 2;
      } else {
        merged.push_back(std::move(parts[i]));
        ++i;
      }
    }
    parts = std::move(merged);
  }

  for (const auto& p : parts) {
    auto id = v.id(p);
    if (!id) throw IntegrityError("vocabulary has no token for symbol '" + p + "'");
    out.push_back(*id);
  }
}

}  // namespace

TokenSequence encode(const Vocab& v, std::string_view text) {
  TokenSequence out;
  for (auto piece : pretokenize(text)) bpe_word(v, piece, out);
  return out;
}

std::string decode(const Vocab& v, const TokenSequence& ids) {
  std::string symbols;
  for (int id : ids) symbols += v.token(id);
  std::string out;
  out.reserve(symbols.size());
  const auto& a = alphabet();
  for (std::size_t i = 0; i < symbols.size();) {
    auto [cp, len] = utf8::next(symbols, i);
    if (cp >= a.byte_of.size() || a.byte_of[cp] < 0) {
      throw IntegrityError("token text contains a symbol outside the byte alphabet");
    }
    out += static_cast<char>(a.byte_of[cp]);
    i += len;
  }
  return out;
}

}  // namespace clap
