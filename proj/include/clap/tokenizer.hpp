#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace clap {

using TokenSequence = std::vector<int>;

/// Byte-level BPE vocabulary: token strings are spelled in the reversible
/// byte-to-unicode alphabet used by GPT-2.
class Vocab {
 public:
  using Merge = std::pair<std::string, std::string>;

  Vocab() = default;

  /// Builds and validates a vocabulary. `tokens[i]` is the token with id i.
  /// Throws IntegrityError when a token repeats or a merge references a
  /// symbol (or produces a token) outside the vocabulary.
  Vocab(std::vector<std::string> tokens, std::vector<Merge> merges);

  std::size_t size() const { return id_to_token_.size(); }
  const std::string& token(int id) const;
  std::optional<int> id(std::string_view token) const;
  const std::vector<Merge>& merges() const { return merges_; }

  /// Rank of the merge (a, b), or nullopt if the pair never merges.
  std::optional<int> merge_rank(std::string_view a, std::string_view b) const;

  /// Id of "<|endoftext|>" when present.
  std::optional<int> end_of_text() const { return id("<|endoftext|>"); }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<Merge> merges_;
  std::unordered_map<std::string, int> merge_ranks_;
};

/// vocab.json (token -> id object) and merges.txt ("a b" per line, optional
/// leading "#version" line).
Vocab load_vocab(const std::filesystem::path& vocab_file, const std::filesystem::path& merges_file);
Vocab parse_vocab(std::string_view vocab_json, std::string_view merges_text);
void save_vocab(const Vocab& v, const std::filesystem::path& vocab_file,
                const std::filesystem::path& merges_file);

/// Deterministic vocabulary for desk-scale models. Sizes >= 257 cover every
/// byte (and so every input); smaller sizes cover letters, digits, space and
/// common punctuation only. The last id is always "<|endoftext|>".
Vocab make_toy_vocab(std::size_t size);

/// Splits UTF-8 text into pre-tokens following the GPT-2 pattern
///   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
/// Concatenating the pieces always reproduces `text`.
std::vector<std::string_view> pretokenize(std::string_view text);

/// Byte <-> unicode-symbol table shared by GPT-2 style vocabularies.
const std::string& byte_symbol(std::uint8_t b);

TokenSequence encode(const Vocab& v, std::string_view text);
std::string decode(const Vocab& v, const TokenSequence& ids);

namespace utf8 {
/// Decodes one code point starting at s[i]; returns {cp, length}. Invalid
/// sequences decode as a single byte with cp = 0xFFFD.
std::pair<std::uint32_t, std::size_t> next(std::string_view s, std::size_t i);
void append(std::string& out, std::uint32_t cp);
bool is_letter(std::uint32_t cp);
bool is_number(std::uint32_t cp);
bool is_space(std::uint32_t cp);
}  // namespace utf8

}  // namespace clap
