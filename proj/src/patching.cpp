#include "clap/patching.hpp"

#include <algorithm>
#include <set>

#include "clap/error.hpp"

namespace clap {

std::string AlignMode::name() const {
  switch (kind) {
    case Kind::min_prefix: return "min_prefix";
    case Kind::question_only: return "question_only";
    case Kind::last_token_only: return "last_token_only";
    case Kind::positions: return "positions";
  }
  return "?";
}

std::vector<std::pair<std::size_t, std::size_t>> align_positions(std::size_t len_clean,
                                                                 std::size_t len_corrupt,
                                                                 const AlignMode& mode) {
  if (len_clean == 0 || len_corrupt == 0) throw AlignmentError("cannot align an empty run");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  switch (mode.kind) {
    case AlignMode::Kind::min_prefix:
      for (std::size_t i = 0; i < std::min(len_clean, len_corrupt); ++i) out.emplace_back(i, i);
      break;
    case AlignMode::Kind::question_only:
      if (mode.prefix_len > len_clean || mode.prefix_len > len_corrupt) {
        throw AlignmentError("question prefix of " + std::to_string(mode.prefix_len) +
                             " tokens exceeds run lengths " + std::to_string(len_clean) + "/" +
                             std::to_string(len_corrupt));
      }
      for (std::size_t i = 0; i < mode.prefix_len; ++i) out.emplace_back(i, i);
      break;
    case AlignMode::Kind::last_token_only:
      out.emplace_back(len_clean - 1, len_corrupt - 1);
      break;
    case AlignMode::Kind::positions:
      for (const auto& [c, x] : mode.pairs) {
        if (c >= len_clean || x >= len_corrupt) {
          throw AlignmentError("position pair (" + std::to_string(c) + ", " + std::to_string(x) +
                               ") outside run lengths " + std::to_string(len_clean) + "/" +
                               std::to_string(len_corrupt));
        }
        out.emplace_back(c, x);
      }
      break;
  }
  return out;
}

std::size_t activation_length(const ActivationSite& site, const Tensor& t) {
  if (site.kind == SiteKind::attn_weights) return t.rank() == 3 ? t.dim(1) : 0;
  return t.rank() >= 1 ? t.dim(0) : 0;
}

namespace {

// Shapes agree apart from the sequence axes.
void check_compatible(const Patch& p, const Tensor& target) {
  const Tensor& src = p.source;
  bool ok = src.rank() == target.rank();
  if (ok && p.site.kind == SiteKind::attn_weights) {
    ok = src.rank() == 3 && src.dim(0) == target.dim(0) && src.dim(1) == src.dim(2);
  } else if (ok) {
    for (std::size_t i = 1; i < src.rank(); ++i) ok = ok && src.dim(i) == target.dim(i);
  }
  if (!ok || activation_length(p.site, src) == 0) {
    throw PatchError("patch for " + p.site.name() + ": source shape " + shape_to_string(src.shape()) +
                     " incompatible with activation shape " + shape_to_string(target.shape()));
  }
}

void apply_patch(const Patch& p, Tensor& target) {
  check_compatible(p, target);
  const std::size_t len_src = activation_length(p.site, p.source);
  const std::size_t len_dst = activation_length(p.site, target);
  const auto pairs = align_positions(len_src, len_dst, p.align);

  if (p.site.kind == SiteKind::attn_weights) {
    const std::size_t heads = target.dim(0);
    const std::size_t shared = std::min(len_src, len_dst);
    for (std::size_t h = 0; h < heads; ++h) {
      for (const auto& [ci, xi] : pairs) {
        const float* src = p.source.data().data() + (h * len_src + ci) * len_src;
        float* dst = target.data().data() + (h * len_dst + xi) * len_dst;
        const std::size_t cols = std::min(shared, xi + 1);
        std::copy(src, src + cols, dst);
      }
    }
    return;
  }
  const std::size_t width = target.numel() / len_dst;
  for (const auto& [ci, xi] : pairs) {
    const float* src = p.source.data().data() + ci * width;
    std::copy(src, src + width, target.data().data() + xi * width);
  }
}

}  // namespace

ForwardResult patched_forward(const Model& m, const TokenSequence& tokens, const PatchSpec& patches,
                              const std::vector<ActivationSite>& capture) {
  for (const auto& p : patches) {
    if (p.site.layer >= 0 && static_cast<std::size_t>(p.site.layer) >= m.config().n_layer) {
      throw PatchError("patch site " + p.site.name() + " is beyond the model's " +
                       std::to_string(m.config().n_layer) + " layers");
    }
  }
  const std::set<ActivationSite> wanted(capture.begin(), capture.end());
  ForwardResult r;
  r.logits = run_forward(m, tokens, [&](const ActivationSite& s, Tensor& t) {
    for (const auto& p : patches)
      if (p.site == s) apply_patch(p, t);
    if (wanted.contains(s)) r.cache.insert_or_assign(s, t);
  });
  return r;
}

}  // namespace clap
