#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clap/container.hpp"
#include "clap/tensor.hpp"
#include "clap/tokenizer.hpp"

namespace clap {

struct ModelConfig {
  std::size_t n_layer = 12;
  std::size_t n_head = 12;
  std::size_t d_model = 768;
  std::size_t d_mlp = 3072;
  std::size_t vocab_size = 50257;
  std::size_t n_ctx = 1024;
  float layernorm_eps = 1e-5f;

  std::size_t head_dim() const { return d_model / n_head; }
  /// Throws ArgumentError on zero counts or d_model % n_head != 0.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------------------
// Activation sites
// ---------------------------------------------------------------------------

enum class SiteKind {
  embed_out,
  resid_pre,
  ln_1_out,
  attn_weights,
  attn_out,
  resid_mid,
  ln_2_out,
  mlp_c_fc_out,
  mlp_act_out,
  mlp_out,
  resid_post,
  ln_f_out,
  logits,
};

/// The ten kinds that exist once per block, in evaluation order.
inline constexpr SiteKind k_layer_kinds[] = {
    SiteKind::resid_pre, SiteKind::ln_1_out,     SiteKind::attn_weights, SiteKind::attn_out,
    SiteKind::resid_mid, SiteKind::ln_2_out,     SiteKind::mlp_c_fc_out, SiteKind::mlp_act_out,
    SiteKind::mlp_out,   SiteKind::resid_post,
};

std::string_view kind_name(SiteKind k);
std::optional<SiteKind> parse_kind(std::string_view name);
bool is_layer_kind(SiteKind k);

/// A named intermediate tensor. Per-block kinds carry a layer index;
/// ln_f_out and logits belong to the final stage; embed_out has neither.
struct ActivationSite {
  static constexpr int k_final = -1;
  static constexpr int k_embed = -2;

  int layer = k_embed;
  SiteKind kind = SiteKind::embed_out;

  static ActivationSite block(int layer, SiteKind kind);
  static ActivationSite final_stage(SiteKind kind);
  static ActivationSite embed() { return {}; }

  /// "h.{layer}.{kind}", "final.{kind}" or "embed_out".
  std::string name() const;
  static ActivationSite parse(std::string_view name);

  /// Position of the site in the forward pass; used for ordering and for
  /// "earlier than" comparisons.
  int stage() const;

  friend bool operator==(const ActivationSite&, const ActivationSite&) = default;
  friend bool operator<(const ActivationSite& a, const ActivationSite& b) {
    return a.stage() != b.stage() ? a.stage() < b.stage()
                                  : static_cast<int>(a.kind) < static_cast<int>(b.kind);
  }
};

/// Every site of a model, in forward order: n_layer * 10 + 3 entries.
std::vector<ActivationSite> all_sites(const ModelConfig& cfg);

using ActivationCache = std::map<ActivationSite, Tensor>;

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct BlockWeights {
  Tensor ln_1_weight, ln_1_bias;
  Tensor attn_c_attn_weight, attn_c_attn_bias;
  Tensor attn_c_proj_weight, attn_c_proj_bias;
  Tensor ln_2_weight, ln_2_bias;
  Tensor mlp_c_fc_weight, mlp_c_fc_bias;
  Tensor mlp_c_proj_weight, mlp_c_proj_bias;
};

/// GPT-2 family pre-LN causal LM with tied unembedding. Immutable once built.
class Model {
 public:
  /// Validates every tensor name and shape against `cfg`.
  Model(ModelConfig cfg, std::map<std::string, Tensor> tensors);

  /// All-zero weights with unit layernorm gains.
  static Model zeros(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const Tensor& wte() const { return wte_; }
  const Tensor& wpe() const { return wpe_; }
  const BlockWeights& block(std::size_t i) const { return blocks_.at(i); }
  const Tensor& ln_f_weight() const { return ln_f_weight_; }
  const Tensor& ln_f_bias() const { return ln_f_bias_; }

  /// Tensor map and metadata in container naming.
  TensorFile to_tensor_file() const;
  /// Container data order: wte, wpe, h.0.*, ..., ln_f.*.
  std::vector<std::string> tensor_order() const;

 private:
  ModelConfig cfg_;
  Tensor wte_, wpe_;
  std::vector<BlockWeights> blocks_;
  Tensor ln_f_weight_, ln_f_bias_;
};

/// Expected container name -> shape for a config.
std::vector<std::pair<std::string, Shape>> tensor_schema(const ModelConfig& cfg);

ModelConfig config_from_metadata(const std::map<std::string, std::string>& metadata);

Model load_model(const std::filesystem::path& container_path);
void save_model(const Model& m, const std::filesystem::path& container_path);

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Called right after each site's value is produced. The hook may overwrite
/// the tensor; downstream computation consumes whatever it leaves there.
using SiteHook = std::function<void(const ActivationSite&, Tensor&)>;

struct ForwardResult {
  Tensor logits;  // [n, vocab]
  ActivationCache cache;
};

/// Runs the model on `tokens`, invoking `hook` at every site in forward order.
Tensor run_forward(const Model& m, const TokenSequence& tokens, const SiteHook& hook);

/// Plain forward capturing exactly the requested sites.
ForwardResult forward(const Model& m, const TokenSequence& tokens,
                      const std::vector<ActivationSite>& capture = {});

// ---------------------------------------------------------------------------
// Desk-scale constructions
// ---------------------------------------------------------------------------

/// Seeded weights: N(0, 0.02^2) for matrices, embeddings and biases, unit
/// layernorm gains, zero layernorm biases. Normals come from Box-Muller on
/// std::mt19937_64(seed), drawn in tensor_order().
Model toy_model(std::uint64_t seed, const ModelConfig& cfg);

/// Hand-built model whose block `store_layer` MLP maps a final `trigger`
/// token to a large logit on `answer`; attention and every other MLP are
/// exactly zero, so the residual stream passes through them unchanged.
/// Needs d_model >= 8 and vocab_size >= 4.
Model planted_fact_model(const ModelConfig& cfg, int trigger, int answer, std::size_t store_layer);

}  // namespace clap
