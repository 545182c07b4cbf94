#pragma once

#include <string>
#include <utility>
#include <vector>

#include "clap/model.hpp"

namespace clap {

/// How source (clean) positions map onto target (corrupt) positions when a
/// site is patched.
struct AlignMode {
  enum class Kind { min_prefix, question_only, last_token_only, positions };

  Kind kind = Kind::min_prefix;
  std::size_t prefix_len = 0;                                  // question_only
  std::vector<std::pair<std::size_t, std::size_t>> pairs;      // positions

  static AlignMode min_prefix() { return {}; }
  static AlignMode question_only(std::size_t prefix_len) { return {Kind::question_only, prefix_len, {}}; }
  static AlignMode last_token_only() { return {Kind::last_token_only, 0, {}}; }
  static AlignMode positions(std::vector<std::pair<std::size_t, std::size_t>> p) {
    return {Kind::positions, 0, std::move(p)};
  }

  /// "min_prefix", "question_only", "last_token_only" or "positions".
  std::string name() const;
};

/// Returns (clean_pos, corrupt_pos) pairs. Throws AlignmentError when a
/// position falls outside either run.
std::vector<std::pair<std::size_t, std::size_t>> align_positions(std::size_t len_clean,
                                                                 std::size_t len_corrupt,
                                                                 const AlignMode& mode);

struct Patch {
  ActivationSite site;
  Tensor source;  // activation from the source run, sequence-indexed
  AlignMode align;
};

using PatchSpec = std::vector<Patch>;

/// Forward pass on `tokens` in which each patched site is overwritten at its
/// aligned positions as soon as it is computed, before anything downstream
/// reads it. The returned cache holds the patched values.
///
/// For attn_weights, the row of each aligned query pair is copied over the
/// key columns both runs share (j < min(len_clean, len_corrupt)) that stay
/// causal for the target row (j <= corrupt_pos).
ForwardResult patched_forward(const Model& m, const TokenSequence& tokens, const PatchSpec& patches,
                              const std::vector<ActivationSite>& capture = {});

/// Sequence length of a cached activation (dim 1 for attn_weights).
std::size_t activation_length(const ActivationSite& site, const Tensor& t);

}  // namespace clap
