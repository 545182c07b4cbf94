#include "clap/model.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <set>

#include "clap/error.hpp"
#include "clap/random.hpp"

namespace clap {

void ModelConfig::validate() const {
  if (n_layer == 0 || n_head == 0 || d_model == 0 || d_mlp == 0 || vocab_size == 0 || n_ctx == 0) {
    throw ArgumentError("model config counts must all be positive");
  }
  if (d_model % n_head != 0) {
    throw ArgumentError("d_model " + std::to_string(d_model) + " is not divisible by n_head " +
                        std::to_string(n_head));
  }
  if (!(layernorm_eps > 0.0f)) throw ArgumentError("layernorm_eps must be positive");
}

// ---------------------------------------------------------------------------
// Sites
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<std::pair<SiteKind, std::string_view>, 13> k_kind_names = {{
    {SiteKind::embed_out, "embed_out"},
    {SiteKind::resid_pre, "resid_pre"},
    {SiteKind::ln_1_out, "ln_1_out"},
    {SiteKind::attn_weights, "attn_weights"},
    {SiteKind::attn_out, "attn_out"},
    {SiteKind::resid_mid, "resid_mid"},
    {SiteKind::ln_2_out, "ln_2_out"},
    {SiteKind::mlp_c_fc_out, "mlp_c_fc_out"},
    {SiteKind::mlp_act_out, "mlp_act_out"},
    {SiteKind::mlp_out, "mlp_out"},
    {SiteKind::resid_post, "resid_post"},
    {SiteKind::ln_f_out, "ln_f_out"},
    {SiteKind::logits, "logits"},
}};

constexpr int k_final_stage = 1 << 30;

int layer_kind_index(SiteKind k) {
  for (int i = 0; i < 10; ++i)
    if (k_layer_kinds[i] == k) return i;
  return -1;
}

}  // namespace

std::string_view kind_name(SiteKind k) {
  for (const auto& [kind, name] : k_kind_names)
    if (kind == k) return name;
  return "?";
}

std::optional<SiteKind> parse_kind(std::string_view name) {
  for (const auto& [kind, n] : k_kind_names)
    if (n == name) return kind;
  return std::nullopt;
}

bool is_layer_kind(SiteKind k) { return layer_kind_index(k) >= 0; }

ActivationSite ActivationSite::block(int layer, SiteKind kind) {
  if (layer < 0) throw ArgumentError("block site needs a non-negative layer");
  if (!is_layer_kind(kind)) {
    throw ArgumentError(std::string(kind_name(kind)) + " is not a per-block site kind");
  }
  return {layer, kind};
}

ActivationSite ActivationSite::final_stage(SiteKind kind) {
  if (kind != SiteKind::ln_f_out && kind != SiteKind::logits) {
    throw ArgumentError("final stage admits only ln_f_out and logits, got " + std::string(kind_name(kind)));
  }
  return {k_final, kind};
}

std::string ActivationSite::name() const {
  if (kind == SiteKind::embed_out) return "embed_out";
  if (layer == k_final) return "final." + std::string(kind_name(kind));
  return "h." + std::to_string(layer) + "." + std::string(kind_name(kind));
}

ActivationSite ActivationSite::parse(std::string_view s) {
  if (s == "embed_out") return embed();
  auto bad = [&] { return ArgumentError("malformed site name '" + std::string(s) + "'"); };
  if (s.starts_with("final.")) {
    auto k = parse_kind(s.substr(6));
    if (!k) throw bad();
    return final_stage(*k);
  }
  if (s.starts_with("h.")) {
    const auto dot = s.find('.', 2);
    if (dot == std::string_view::npos) throw bad();
    int layer = 0;
    auto digits = s.substr(2, dot - 2);
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), layer);
    if (ec != std::errc() || p != digits.data() + digits.size()) throw bad();
    auto k = parse_kind(s.substr(dot + 1));
    if (!k) throw bad();
    return block(layer, *k);
  }
  throw bad();
}

int ActivationSite::stage() const {
  if (kind == SiteKind::embed_out) return 0;
  if (layer == k_final) return k_final_stage + (kind == SiteKind::logits ? 1 : 0);
  return 1 + layer * 16 + layer_kind_index(kind);
}

std::vector<ActivationSite> all_sites(const ModelConfig& cfg) {
  std::vector<ActivationSite> out{ActivationSite::embed()};
  for (std::size_t l = 0; l < cfg.n_layer; ++l)
    for (SiteKind k : k_layer_kinds) out.push_back(ActivationSite::block(static_cast<int>(l), k));
  out.push_back(ActivationSite::final_stage(SiteKind::ln_f_out));
  out.push_back(ActivationSite::final_stage(SiteKind::logits));
  return out;
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Shape>> tensor_schema(const ModelConfig& c) {
  std::vector<std::pair<std::string, Shape>> s;
  s.emplace_back("wte", Shape{c.vocab_size, c.d_model});
  s.emplace_back("wpe", Shape{c.n_ctx, c.d_model});
  for (std::size_t i = 0; i < c.n_layer; ++i) {
    const std::string p = "h." + std::to_string(i) + ".";
    s.emplace_back(p + "ln_1.weight", Shape{c.d_model});
    s.emplace_back(p + "ln_1.bias", Shape{c.d_model});
    s.emplace_back(p + "attn.c_attn.weight", Shape{c.d_model, 3 * c.d_model});
    s.emplace_back(p + "attn.c_attn.bias", Shape{3 * c.d_model});
    s.emplace_back(p + "attn.c_proj.weight", Shape{c.d_model, c.d_model});
    s.emplace_back(p + "attn.c_proj.bias", Shape{c.d_model});
    s.emplace_back(p + "ln_2.weight", Shape{c.d_model});
    s.emplace_back(p + "ln_2.bias", Shape{c.d_model});
    s.emplace_back(p + "mlp.c_fc.weight", Shape{c.d_model, c.d_mlp});
    s.emplace_back(p + "mlp.c_fc.bias", Shape{c.d_mlp});
    s.emplace_back(p + "mlp.c_proj.weight", Shape{c.d_mlp, c.d_model});
    s.emplace_back(p + "mlp.c_proj.bias", Shape{c.d_model});
  }
  s.emplace_back("ln_f.weight", Shape{c.d_model});
  s.emplace_back("ln_f.bias", Shape{c.d_model});
  return s;
}

Model::Model(ModelConfig cfg, std::map<std::string, Tensor> tensors) : cfg_(cfg) {
  cfg_.validate();
  for (const auto& [name, shape] : tensor_schema(cfg_)) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw SchemaError("model container is missing tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("tensor '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                       ", expected " + shape_to_string(shape));
    }
  }
  auto take = [&](const std::string& n) { return std::move(tensors.at(n)); };
  wte_ = take("wte");
  wpe_ = take("wpe");
  blocks_.resize(cfg_.n_layer);
  for (std::size_t i = 0; i < cfg_.n_layer; ++i) {
    const std::string p = "h." + std::to_string(i) + ".";
    auto& b = blocks_[i];
    b.ln_1_weight = take(p + "ln_1.weight");
    b.ln_1_bias = take(p + "ln_1.bias");
    b.attn_c_attn_weight = take(p + "attn.c_attn.weight");
    b.attn_c_attn_bias = take(p + "attn.c_attn.bias");
    b.attn_c_proj_weight = take(p + "attn.c_proj.weight");
    b.attn_c_proj_bias = take(p + "attn.c_proj.bias");
    b.ln_2_weight = take(p + "ln_2.weight");
    b.ln_2_bias = take(p + "ln_2.bias");
    b.mlp_c_fc_weight = take(p + "mlp.c_fc.weight");
    b.mlp_c_fc_bias = take(p + "mlp.c_fc.bias");
    b.mlp_c_proj_weight = take(p + "mlp.c_proj.weight");
    b.mlp_c_proj_bias = take(p + "mlp.c_proj.bias");
  }
  ln_f_weight_ = take("ln_f.weight");
  ln_f_bias_ = take("ln_f.bias");
}

namespace {

bool is_layernorm_gain(const std::string& name) {
  return name.ends_with("ln_1.weight") || name.ends_with("ln_2.weight") || name == "ln_f.weight";
}

}  // namespace

Model Model::zeros(const ModelConfig& cfg) {
  cfg.validate();
  std::map<std::string, Tensor> t;
  for (const auto& [name, shape] : tensor_schema(cfg)) {
    t.emplace(name, Tensor(shape, is_layernorm_gain(name) ? 1.0f : 0.0f));
  }
  return Model(cfg, std::move(t));
}

std::vector<std::string> Model::tensor_order() const {
  std::vector<std::string> out;
  for (const auto& [name, shape] : tensor_schema(cfg_)) out.push_back(name);
  return out;
}

TensorFile Model::to_tensor_file() const {
  TensorFile f;
  f.tensors.emplace("wte", wte_);
  f.tensors.emplace("wpe", wpe_);
  for (std::size_t i = 0; i < cfg_.n_layer; ++i) {
    const std::string p = "h." + std::to_string(i) + ".";
    const auto& b = blocks_[i];
    f.tensors.emplace(p + "ln_1.weight", b.ln_1_weight);
    f.tensors.emplace(p + "ln_1.bias", b.ln_1_bias);
    f.tensors.emplace(p + "attn.c_attn.weight", b.attn_c_attn_weight);
    f.tensors.emplace(p + "attn.c_attn.bias", b.attn_c_attn_bias);
    f.tensors.emplace(p + "attn.c_proj.weight", b.attn_c_proj_weight);
    f.tensors.emplace(p + "attn.c_proj.bias", b.attn_c_proj_bias);
    f.tensors.emplace(p + "ln_2.weight", b.ln_2_weight);
    f.tensors.emplace(p + "ln_2.bias", b.ln_2_bias);
    f.tensors.emplace(p + "mlp.c_fc.weight", b.mlp_c_fc_weight);
    f.tensors.emplace(p + "mlp.c_fc.bias", b.mlp_c_fc_bias);
    f.tensors.emplace(p + "mlp.c_proj.weight", b.mlp_c_proj_weight);
    f.tensors.emplace(p + "mlp.c_proj.bias", b.mlp_c_proj_bias);
  }
  f.tensors.emplace("ln_f.weight", ln_f_weight_);
  f.tensors.emplace("ln_f.bias", ln_f_bias_);
  f.metadata = {
      {"n_layer", std::to_string(cfg_.n_layer)},
      {"n_head", std::to_string(cfg_.n_head)},
      {"d_model", std::to_string(cfg_.d_model)},
      {"d_mlp", std::to_string(cfg_.d_mlp)},
      {"vocab_size", std::to_string(cfg_.vocab_size)},
      {"n_ctx", std::to_string(cfg_.n_ctx)},
  };
  if (cfg_.layernorm_eps != 1e-5f) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, cfg_.layernorm_eps);
    f.metadata["layernorm_eps"] = std::string(buf, p);
  }
  return f;
}

ModelConfig config_from_metadata(const std::map<std::string, std::string>& md) {
  auto count = [&](const char* key) -> std::size_t {
    auto it = md.find(key);
    if (it == md.end()) throw SchemaError(std::string("container metadata is missing '") + key + "'");
    std::size_t v = 0;
    const auto& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw SchemaError(std::string("metadata '") + key + "' is not an integer: '" + s + "'");
    }
    return v;
  };
  ModelConfig c;
  c.n_layer = count("n_layer");
  c.n_head = count("n_head");
  c.d_model = count("d_model");
  c.d_mlp = count("d_mlp");
  c.vocab_size = count("vocab_size");
  c.n_ctx = count("n_ctx");
  if (auto it = md.find("layernorm_eps"); it != md.end()) {
    const auto& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), c.layernorm_eps);
    if (ec != std::errc()) throw SchemaError("metadata 'layernorm_eps' is not a number: '" + s + "'");
  }
  try {
    c.validate();
  } catch (const ArgumentError& e) {
    throw SchemaError(std::string("container metadata: ") + e.what());
  }
  return c;
}

Model load_model(const std::filesystem::path& path) {
  TensorFile f = read_tensor_file(path);
  ModelConfig cfg = config_from_metadata(f.metadata);
  return Model(cfg, std::move(f.tensors));
}

void save_model(const Model& m, const std::filesystem::path& path) {
  write_tensor_file(path, m.to_tensor_file(), m.tensor_order());
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

// Causal multi-head attention weights [n_head, n, n] from fused qkv [n, 3d].
Tensor attention_weights(const Tensor& qkv, const ModelConfig& c) {
  const std::size_t n = qkv.rows(), d = c.d_model, hd = c.head_dim();
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  Tensor w({c.n_head, n, n});
  std::vector<double> scores(n);
  for (std::size_t h = 0; h < c.n_head; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      const float* q = qkv.data().data() + i * 3 * d + h * hd;
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= i; ++j) {
        const float* k = qkv.data().data() + j * 3 * d + d + h * hd;
        float dot = 0.0f;
        for (std::size_t e = 0; e < hd; ++e) dot += q[e] * k[e];
        scores[j] = static_cast<double>(dot * scale);
        mx = std::max(mx, scores[j]);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j <= i; ++j) sum += std::exp(scores[j] - mx);
      float* row = w.data().data() + (h * n + i) * n;
      for (std::size_t j = 0; j <= i; ++j) row[j] = static_cast<float>(std::exp(scores[j] - mx) / sum);
    }
  }
  return w;
}

// Weighted sum of value vectors, heads merged back to [n, d].
Tensor attention_mix(const Tensor& weights, const Tensor& qkv, const ModelConfig& c) {
  const std::size_t n = qkv.rows(), d = c.d_model, hd = c.head_dim();
  Tensor z({n, d});
  for (std::size_t h = 0; h < c.n_head; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      const float* w = weights.data().data() + (h * n + i) * n;
      float* out = z.data().data() + i * d + h * hd;
      for (std::size_t j = 0; j <= i; ++j) {
        const float* v = qkv.data().data() + j * 3 * d + 2 * d + h * hd;
        for (std::size_t e = 0; e < hd; ++e) out[e] += w[j] * v[e];
      }
    }
  }
  return z;
}

}  // namespace

Tensor run_forward(const Model& m, const TokenSequence& tokens, const SiteHook& hook) {
  const ModelConfig& c = m.config();
  const std::size_t n = tokens.size();
  if (n == 0) throw EmptyInputError("forward needs at least one token");
  if (n > c.n_ctx) {
    throw ContextLengthError("sequence of " + std::to_string(n) + " tokens exceeds n_ctx " +
                             std::to_string(c.n_ctx));
  }
  auto emit = [&](const ActivationSite& s, Tensor& t) {
    if (hook) hook(s, t);
  };

  Tensor h = gather_rows(m.wte(), tokens);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = h.row(i);
    auto p = m.wpe().row(i);
    for (std::size_t j = 0; j < c.d_model; ++j) r[j] += p[j];
  }
  emit(ActivationSite::embed(), h);

  for (std::size_t l = 0; l < c.n_layer; ++l) {
    const auto& b = m.block(l);
    const int li = static_cast<int>(l);
    auto site = [li](SiteKind k) { return ActivationSite::block(li, k); };

    Tensor resid_pre = h;
    emit(site(SiteKind::resid_pre), resid_pre);
    Tensor ln1 = layernorm(resid_pre, b.ln_1_weight, b.ln_1_bias, c.layernorm_eps);
    emit(site(SiteKind::ln_1_out), ln1);
    const Tensor qkv = linear(ln1, b.attn_c_attn_weight, b.attn_c_attn_bias);
    Tensor weights = attention_weights(qkv, c);
    emit(site(SiteKind::attn_weights), weights);
    Tensor attn_out = linear(attention_mix(weights, qkv, c), b.attn_c_proj_weight, b.attn_c_proj_bias);
    emit(site(SiteKind::attn_out), attn_out);
    Tensor resid_mid = add(resid_pre, attn_out);
    emit(site(SiteKind::resid_mid), resid_mid);
    Tensor ln2 = layernorm(resid_mid, b.ln_2_weight, b.ln_2_bias, c.layernorm_eps);
    emit(site(SiteKind::ln_2_out), ln2);
    Tensor fc = linear(ln2, b.mlp_c_fc_weight, b.mlp_c_fc_bias);
    emit(site(SiteKind::mlp_c_fc_out), fc);
    Tensor act = gelu(fc);
    emit(site(SiteKind::mlp_act_out), act);
    Tensor mlp_out = linear(act, b.mlp_c_proj_weight, b.mlp_c_proj_bias);
    emit(site(SiteKind::mlp_out), mlp_out);
    h = add(resid_mid, mlp_out);
    emit(site(SiteKind::resid_post), h);
  }

  Tensor lnf = layernorm(h, m.ln_f_weight(), m.ln_f_bias(), c.layernorm_eps);
  emit(ActivationSite::final_stage(SiteKind::ln_f_out), lnf);
  Tensor logits = matmul_transposed(lnf, m.wte());
  emit(ActivationSite::final_stage(SiteKind::logits), logits);
  return logits;
}

namespace {

void validate_site(const ActivationSite& s, const ModelConfig& c) {
  if (s.layer >= 0 && static_cast<std::size_t>(s.layer) >= c.n_layer) {
    throw ArgumentError("site " + s.name() + " refers to layer " + std::to_string(s.layer) +
                        " but the model has " + std::to_string(c.n_layer));
  }
}

}  // namespace

ForwardResult forward(const Model& m, const TokenSequence& tokens, const std::vector<ActivationSite>& capture) {
  for (const auto& s : capture) validate_site(s, m.config());
  const std::set<ActivationSite> wanted(capture.begin(), capture.end());
  ForwardResult r;
  r.logits = run_forward(m, tokens, [&](const ActivationSite& s, Tensor& t) {
    if (wanted.contains(s)) r.cache.insert_or_assign(s, t);
  });
  return r;
}

// ---------------------------------------------------------------------------
// Constructions
// ---------------------------------------------------------------------------

Model toy_model(std::uint64_t seed, const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  std::map<std::string, Tensor> t;
  for (const auto& [name, shape] : tensor_schema(cfg)) {
    Tensor x(shape);
    if (is_layernorm_gain(name)) {
      std::fill(x.data().begin(), x.data().end(), 1.0f);
    } else if (!name.ends_with("ln_1.bias") && !name.ends_with("ln_2.bias") && name != "ln_f.bias") {
      for (float& v : x.data()) v = static_cast<float>(0.02 * rng.normal());
    }
    t.emplace(name, std::move(x));
  }
  return Model(cfg, std::move(t));
}

Model planted_fact_model(const ModelConfig& cfg, int trigger, int answer, std::size_t store_layer) {
  cfg.validate();
  const auto vocab = static_cast<int>(cfg.vocab_size);
  if (trigger < 0 || trigger >= vocab || answer < 0 || answer >= vocab) {
    throw RangeError("trigger/answer ids must lie in [0, " + std::to_string(vocab) + ")");
  }
  if (trigger == answer) throw RangeError("trigger and answer must be different tokens");
  if (store_layer >= cfg.n_layer) {
    throw RangeError("store_layer " + std::to_string(store_layer) + " outside [0, " +
                     std::to_string(cfg.n_layer) + ")");
  }
  if (cfg.d_model < 8 || cfg.vocab_size < 4) {
    throw ArgumentError("planted_fact_model needs d_model >= 8 and vocab_size >= 4");
  }

  // Residual dims: 0 trigger flag, 1 its counterweight, 2 answer direction,
  // 3 its counterweight, 4.. background tokens. Every embedding has zero mean,
  // so only the trigger has a non-zero normalized value on dim 0.
  constexpr std::size_t k_flag = 0, k_flag_neg = 1, k_ans = 2, k_ans_neg = 3, k_free = 4;
  constexpr float k_gate_gain = 10.0f, k_gate_bias = -5.0f, k_write_gain = 100.0f;

  Model base = Model::zeros(cfg);
  TensorFile f = base.to_tensor_file();
  Tensor& wte = f.tensors.at("wte");
  Rng rng(0x5eed);
  const std::size_t d = cfg.d_model;
  for (int tok = 0; tok < vocab; ++tok) {
    auto row = wte.row(static_cast<std::size_t>(tok));
    if (tok == trigger) {
      row[k_flag] = 1.0f;
      row[k_flag_neg] = -1.0f;
    } else if (tok == answer) {
      row[k_ans] = 1.0f;
      row[k_ans_neg] = -1.0f;
    } else {
      double mean = 0.0;
      std::vector<double> v(d - k_free);
      for (auto& x : v) mean += (x = rng.normal());
      mean /= static_cast<double>(v.size());
      for (std::size_t j = 0; j < v.size(); ++j) row[k_free + j] = static_cast<float>(v[j] - mean);
    }
  }

  const std::string p = "h." + std::to_string(store_layer) + ".";
  f.tensors.at(p + "mlp.c_fc.weight").at(k_flag, 0) = k_gate_gain;
  f.tensors.at(p + "mlp.c_fc.bias").data()[0] = k_gate_bias;
  f.tensors.at(p + "mlp.c_proj.weight").at(0, k_ans) = k_write_gain;
  f.tensors.at(p + "mlp.c_proj.weight").at(0, k_ans_neg) = -k_write_gain;
  return Model(cfg, std::move(f.tensors));
}

}  // namespace clap
