#include "clap/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "clap/error.hpp"
#include "clap/random.hpp"
#include "json.hpp"

namespace clap {

ExperimentInputs build_inputs(const Vocab& v, const std::string& question, const std::string& clean_answer,
                              const std::string& corrupt_answer) {
  ExperimentInputs in;
  in.x_clean = encode(v, question + " " + clean_answer);
  in.x_corrupt = encode(v, question + " " + corrupt_answer);
  in.t_clean = encode(v, " " + clean_answer);
  in.t_corrupt = encode(v, " " + corrupt_answer);
  in.question_len = encode(v, question).size();
  return in;
}

double logit_diff(const Tensor& logits, const TokenBag& t_clean, const TokenBag& t_corrupt) {
  if (t_clean.empty() || t_corrupt.empty()) throw MetricError("logit_diff needs non-empty token bags");
  if (logits.rank() != 2 || logits.rows() == 0) {
    throw MetricError("logit_diff needs [n, vocab] logits, got " + shape_to_string(logits.shape()));
  }
  const auto last = logits.row(logits.rows() - 1);
  auto mean = [&](const TokenBag& bag) {
    double s = 0.0;
    for (int id : bag) {
      if (id < 0 || static_cast<std::size_t>(id) >= last.size()) {
        throw MetricError("token id " + std::to_string(id) + " outside logit row of width " +
                          std::to_string(last.size()));
      }
      s += last[static_cast<std::size_t>(id)];
    }
    return s / static_cast<double>(bag.size());
  };
  return mean(t_clean) - mean(t_corrupt);
}

double recovery(double delta_patched, double delta_corrupt, double delta_clean) {
  if (delta_clean == delta_corrupt) {
    throw UndefinedRecoveryError("recovery undefined: clean and corrupt logit differences are both " +
                                 std::to_string(delta_clean));
  }
  return (delta_patched - delta_corrupt) / (delta_clean - delta_corrupt);
}

PatchReport run_experiment(const Model& m, const ExperimentInputs& in, const std::vector<ActivationSite>& sites,
                           const AlignMode& align) {
  if (sites.empty()) throw ArgumentError("experiment needs at least one site");
  const auto clean = forward(m, in.x_clean, sites);
  const auto corrupt = forward(m, in.x_corrupt);

  PatchReport r;
  r.delta_clean = logit_diff(clean.logits, in.t_clean, in.t_corrupt);
  r.delta_corrupt = logit_diff(corrupt.logits, in.t_clean, in.t_corrupt);
  r.t_clean_count = in.t_clean.size();
  r.t_corrupt_count = in.t_corrupt.size();
  r.align_mode = align.name();
  if (r.delta_clean == r.delta_corrupt) {
    throw UndefinedRecoveryError("degenerate experiment: clean and corrupt runs give the same logit difference");
  }

  for (const auto& site : sites) {
    SiteResult s{site, std::nullopt, std::nullopt, std::nullopt};
    try {
      PatchSpec spec{{site, clean.cache.at(site), align}};
      const auto patched = patched_forward(m, in.x_corrupt, spec);
      const double d = logit_diff(patched.logits, in.t_clean, in.t_corrupt);
      s.delta_patched = d;
      s.recovery = recovery(d, r.delta_corrupt, r.delta_clean);
    } catch (const Error& e) {
      s.error = e.what();
    }
    r.sites.push_back(std::move(s));
  }
  return r;
}

PatchReport run_experiment(const Model& m, const Vocab& v, const PatchExperiment& e) {
  if (e.clean_answer == e.corrupt_answer) {
    throw UndefinedRecoveryError("clean and corrupt answers are identical");
  }
  const ExperimentInputs in = build_inputs(v, e.question, e.clean_answer, e.corrupt_answer);
  AlignMode align = e.align;
  // question_only without an explicit length patches the question tokens.
  if (align.kind == AlignMode::Kind::question_only && align.prefix_len == 0) align.prefix_len = in.question_len;
  PatchReport r = run_experiment(m, in, e.sites, align);
  r.question = e.question;
  r.clean_answer = e.clean_answer;
  r.corrupt_answer = e.corrupt_answer;
  return r;
}

// ---------------------------------------------------------------------------
// Site selection
// ---------------------------------------------------------------------------

std::vector<ActivationSite> SiteSelector::expand(const ModelConfig& cfg) const {
  std::vector<ActivationSite> out;
  for (SiteKind k : kinds) {
    if (k == SiteKind::embed_out) {
      out.push_back(ActivationSite::embed());
    } else if (!is_layer_kind(k)) {
      out.push_back(ActivationSite::final_stage(k));
    } else if (layers.empty()) {
      for (std::size_t l = 0; l < cfg.n_layer; ++l) out.push_back(ActivationSite::block(static_cast<int>(l), k));
    } else {
      for (int l : layers) {
        if (l < 0 || static_cast<std::size_t>(l) >= cfg.n_layer) {
          throw ArgumentError("layer " + std::to_string(l) + " outside [0, " + std::to_string(cfg.n_layer) + ")");
        }
        out.push_back(ActivationSite::block(l, k));
      }
    }
  }
  return out;
}

std::vector<ActivationSite> parse_site_selector(const std::string& spec, const ModelConfig& cfg) {
  if (spec.empty()) throw ArgumentError("empty site selector");
  if (spec == "all") {
    return all_sites(cfg);
  }
  const auto colon = spec.find(':');
  std::string kind_str = spec.substr(0, colon);
  if (kind_str.starts_with("final.")) kind_str = kind_str.substr(6);
  const auto kind = parse_kind(kind_str);
  if (!kind) throw ArgumentError("unknown site kind '" + kind_str + "'");

  SiteSelector sel{{*kind}, {}};
  if (colon != std::string::npos) {
    const std::string layers = spec.substr(colon + 1);
    if (!is_layer_kind(*kind)) throw ArgumentError(std::string(kind_name(*kind)) + " takes no layer list");
    if (layers != "all") {
      std::size_t pos = 0;
      while (pos <= layers.size()) {
        auto end = layers.find(',', pos);
        if (end == std::string::npos) end = layers.size();
        const std::string item = layers.substr(pos, end - pos);
        int l = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), l);
        if (item.empty() || ec != std::errc() || p != item.data() + item.size()) {
          throw ArgumentError("bad layer '" + item + "' in selector '" + spec + "'");
        }
        sel.layers.push_back(l);
        pos = end + 1;
      }
    }
  }
  return sel.expand(cfg);
}

PatchReport patch_sweep(const Model& m, const Vocab& v, const std::string& question,
                        const std::string& clean_answer, const std::string& corrupt_answer,
                        const std::vector<SiteSelector>& selectors, const AlignMode& align) {
  std::vector<ActivationSite> sites;
  for (const auto& s : selectors) {
    for (const auto& site : s.expand(m.config())) {
      if (std::find(sites.begin(), sites.end(), site) == sites.end()) sites.push_back(site);
    }
  }
  if (sites.empty()) throw ArgumentError("site selector expands to no sites");
  return run_experiment(m, v, PatchExperiment{question, clean_answer, corrupt_answer, sites, align});
}

// ---------------------------------------------------------------------------
// Permutation test
// ---------------------------------------------------------------------------

double between_group_variance(const std::vector<std::vector<double>>& groups) {
  std::vector<double> means;
  means.reserve(groups.size());
  for (const auto& g : groups) {
    double s = 0.0;
    for (double x : g) s += x;
    means.push_back(s / static_cast<double>(g.size()));
  }
  double grand = 0.0;
  for (double m : means) grand += m;
  grand /= static_cast<double>(means.size());
  double var = 0.0;
  for (double m : means) var += (m - grand) * (m - grand);
  return var / static_cast<double>(means.size());
}

PermutationResult permutation_test(const std::vector<std::vector<double>>& groups, std::size_t n_resamples,
                                   std::uint64_t seed) {
  if (groups.size() < 2) throw ArgumentError("permutation test needs at least two groups");
  for (const auto& g : groups) {
    if (g.size() < 2) throw ArgumentError("permutation test needs at least two values per group");
  }
  if (n_resamples == 0) throw ArgumentError("permutation test needs at least one resample");

  PermutationResult res;
  res.statistic = between_group_variance(groups);
  // Relative slack so that label swaps which only reorder sums still count as ties.
  const double threshold = res.statistic - 1e-12 * std::max(1.0, std::fabs(res.statistic));

  std::vector<double> pooled;
  for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());

  Rng rng(seed);
  std::vector<std::vector<double>> shuffled(groups.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n_resamples; ++r) {
    rng.shuffle(pooled);
    std::size_t at = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      shuffled[g].assign(pooled.begin() + static_cast<std::ptrdiff_t>(at),
                         pooled.begin() + static_cast<std::ptrdiff_t>(at + groups[g].size()));
      at += groups[g].size();
    }
    if (between_group_variance(shuffled) >= threshold) ++hits;
  }
  res.p_value = static_cast<double>(1 + hits) / static_cast<double>(1 + n_resamples);
  return res;
}

PermutationResult permutation_test(const std::vector<PatchReport>& reports, std::size_t n_resamples,
                                   std::uint64_t seed) {
  std::map<ActivationSite, std::vector<double>> by_site;
  for (const auto& r : reports)
    for (const auto& s : r.sites)
      if (s.recovery) by_site[s.site].push_back(*s.recovery);
  std::vector<std::vector<double>> groups;
  for (auto& [site, values] : by_site) groups.push_back(std::move(values));
  return permutation_test(groups, n_resamples, seed);
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

std::string report_to_json(const PatchReport& r, int indent) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["question"] = r.question;
  j["clean_answer"] = r.clean_answer;
  j["corrupt_answer"] = r.corrupt_answer;
  j["delta_clean"] = r.delta_clean;
  j["delta_corrupt"] = r.delta_corrupt;
  j["token_counts"] = {{"t_c", r.t_clean_count}, {"t_w", r.t_corrupt_count}};
  j["align_mode"] = r.align_mode;
  j["sites"] = ordered_json::array();
  for (const auto& s : r.sites) {
    ordered_json e;
    e["site"] = s.site.name();
    e["delta_patched"] = s.delta_patched ? ordered_json(*s.delta_patched) : ordered_json(nullptr);
    e["recovery"] = s.recovery ? ordered_json(*s.recovery) : ordered_json(nullptr);
    if (s.error) e["error"] = *s.error;
    j["sites"].push_back(std::move(e));
  }
  return j.dump(indent);
}

PatchReport report_from_json(const std::string& json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("patch report: ") + e.what());
  }
  try {
    PatchReport r;
    r.question = j.at("question").get<std::string>();
    r.clean_answer = j.at("clean_answer").get<std::string>();
    r.corrupt_answer = j.at("corrupt_answer").get<std::string>();
    r.delta_clean = j.at("delta_clean").get<double>();
    r.delta_corrupt = j.at("delta_corrupt").get<double>();
    r.t_clean_count = j.at("token_counts").at("t_c").get<std::size_t>();
    r.t_corrupt_count = j.at("token_counts").at("t_w").get<std::size_t>();
    r.align_mode = j.at("align_mode").get<std::string>();
    for (const auto& e : j.at("sites")) {
      SiteResult s{ActivationSite::parse(e.at("site").get<std::string>()), std::nullopt, std::nullopt, std::nullopt};
      if (!e.at("delta_patched").is_null()) s.delta_patched = e["delta_patched"].get<double>();
      if (!e.at("recovery").is_null()) s.recovery = e["recovery"].get<double>();
      if (e.contains("error")) s.error = e["error"].get<std::string>();
      r.sites.push_back(std::move(s));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("patch report: ") + e.what());
  }
}

}  // namespace clap
