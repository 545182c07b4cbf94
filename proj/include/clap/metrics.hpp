#pragma once

#include <optional>
#include <string>
#include <vector>

#include "clap/patching.hpp"
#include "clap/tokenizer.hpp"

namespace clap {

/// Token multiset; duplicates count with multiplicity.
using TokenBag = std::vector<int>;

struct ExperimentInputs {
  TokenSequence x_clean;
  TokenSequence x_corrupt;
  TokenBag t_clean;
  TokenBag t_corrupt;
  std::size_t question_len = 0;  // tokens in encode(question)
};

/// x = encode(q + " " + a); answer bags are encode(" " + a).
ExperimentInputs build_inputs(const Vocab& v, const std::string& question, const std::string& clean_answer,
                              const std::string& corrupt_answer);

/// Mean last-row logit over t_clean minus mean over t_corrupt.
/// Throws MetricError on an empty bag or an id outside the row.
double logit_diff(const Tensor& logits, const TokenBag& t_clean, const TokenBag& t_corrupt);

/// (patched - corrupt) / (clean - corrupt); UndefinedRecoveryError when
/// clean == corrupt.
double recovery(double delta_patched, double delta_corrupt, double delta_clean);

struct PatchExperiment {
  std::string question;
  std::string clean_answer;
  std::string corrupt_answer;
  std::vector<ActivationSite> sites;
  AlignMode align;
};

struct SiteResult {
  ActivationSite site;
  std::optional<double> delta_patched;
  std::optional<double> recovery;
  std::optional<std::string> error;
};

struct PatchReport {
  std::string question;
  std::string clean_answer;
  std::string corrupt_answer;
  double delta_clean = 0.0;
  double delta_corrupt = 0.0;
  std::size_t t_clean_count = 0;
  std::size_t t_corrupt_count = 0;
  std::string align_mode;
  std::vector<SiteResult> sites;
};

/// Clean run, corrupt run, then one patched run per site. Per-site failures
/// are recorded in the report; a degenerate experiment (equal answers or
/// equal deltas) throws.
PatchReport run_experiment(const Model& m, const Vocab& v, const PatchExperiment& e);

/// Token-level core of run_experiment, for callers that build their own
/// sequences.
PatchReport run_experiment(const Model& m, const ExperimentInputs& in, const std::vector<ActivationSite>& sites,
                           const AlignMode& align);

/// Kinds crossed with layers. Empty `layers` means every layer; final-stage
/// kinds and embed_out ignore `layers`.
struct SiteSelector {
  std::vector<SiteKind> kinds;
  std::vector<int> layers;

  std::vector<ActivationSite> expand(const ModelConfig& cfg) const;
};

/// Parses "kind:all", "kind:0,3,11" or a bare final/embed kind. Throws
/// ArgumentError on malformed input.
std::vector<ActivationSite> parse_site_selector(const std::string& spec, const ModelConfig& cfg);

PatchReport patch_sweep(const Model& m, const Vocab& v, const std::string& question,
                        const std::string& clean_answer, const std::string& corrupt_answer,
                        const std::vector<SiteSelector>& selectors, const AlignMode& align = {});

struct PermutationResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Between-group variance of group means, with a label-shuffle null:
/// p = (1 + #{null >= observed}) / (1 + n_resamples).
PermutationResult permutation_test(const std::vector<std::vector<double>>& groups, std::size_t n_resamples,
                                   std::uint64_t seed);

/// Groups every successful site recovery by site name across reports.
PermutationResult permutation_test(const std::vector<PatchReport>& reports, std::size_t n_resamples,
                                   std::uint64_t seed);

/// Population variance of the group means.
double between_group_variance(const std::vector<std::vector<double>>& groups);

std::string report_to_json(const PatchReport& r, int indent = 2);
PatchReport report_from_json(const std::string& json);

}  // namespace clap
