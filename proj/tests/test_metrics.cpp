#include <gtest/gtest.h>

#include <cmath>

#include "clap/error.hpp"
#include "clap/metrics.hpp"
#include "json.hpp"
#include "test_support.hpp"

namespace clap {
namespace {

using testing::toy_config;

std::vector<ActivationSite> mlp_out_sites(const ModelConfig& c) {
  return SiteSelector{{SiteKind::mlp_out}, {}}.expand(c);
}

TEST(LogitDiff, HandComputed) {
  const Tensor logits = Tensor::from_rows({{9, 9, 9, 9}, {1, 2, 3, 4}});
  EXPECT_DOUBLE_EQ(logit_diff(logits, {3}, {0}), 3.0);
  EXPECT_DOUBLE_EQ(logit_diff(logits, {2, 3}, {0}), 2.5);
  EXPECT_DOUBLE_EQ(logit_diff(logits, {3, 3, 0}, {1}), 3.0 - 2.0);
}

TEST(LogitDiff, Properties) {
  Rng rng(4);
  Tensor logits({3, 20});
  for (float& v : logits.data()) v = static_cast<float>(rng.normal());
  const TokenBag a{1, 5, 5}, b{7, 2};
  EXPECT_DOUBLE_EQ(logit_diff(logits, a, b), -logit_diff(logits, b, a));
  EXPECT_DOUBLE_EQ(logit_diff(logits, a, a), 0.0);
  Tensor shifted = logits;
  for (float& v : shifted.row(2)) v += 4.0f;
  EXPECT_NEAR(logit_diff(shifted, a, b), logit_diff(logits, a, b), 1e-5);
}

TEST(LogitDiff, Errors) {
  const Tensor logits = Tensor::from_rows({{1, 2}});
  EXPECT_THROW(logit_diff(logits, {}, {0}), MetricError);
  EXPECT_THROW(logit_diff(logits, {0}, {}), MetricError);
  EXPECT_THROW(logit_diff(logits, {2}, {0}), MetricError);
}

TEST(Recovery, Values) {
  EXPECT_EQ(recovery(2.1928, 0.9691, 2.1928), 1.0);
  EXPECT_EQ(recovery(0.9691, 0.9691, 2.1928), 0.0);
  EXPECT_DOUBLE_EQ(recovery(1.5, 1.0, 2.0), 0.5);
  EXPECT_NEAR(recovery(-0.0899, -1.4626, 0.1261), 0.8640, 5e-4);
  EXPECT_THROW(recovery(1.0, 0.5, 0.5), UndefinedRecoveryError);
}

TEST(BuildInputs, QuestionIsSharedPrefix) {
  const Vocab v = make_toy_vocab(512);
  const auto in = build_inputs(v, "What is EEG?", "brain recording", "seizure");
  ASSERT_GE(in.x_clean.size(), in.question_len);
  EXPECT_TRUE(std::equal(in.x_clean.begin(), in.x_clean.begin() + static_cast<long>(in.question_len),
                         in.x_corrupt.begin()));
  EXPECT_EQ(in.t_clean, encode(v, " brain recording"));
  EXPECT_EQ(in.t_corrupt, encode(v, " seizure"));
}

TEST(Experiment, PlantedFactLocalizesStoreLayer) {
  const ModelConfig c = toy_config(4);
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const auto pc = testing::planted_case(rng, c, 1);
    const auto r = run_experiment(pc.model, pc.inputs, mlp_out_sites(c), AlignMode::min_prefix());
    ASSERT_EQ(r.sites.size(), 4u);
    for (const auto& s : r.sites) {
      ASSERT_TRUE(s.recovery) << *s.error;
      if (s.site.layer == 1) EXPECT_GE(*s.recovery, 0.9);
      else EXPECT_LE(std::fabs(*s.recovery), 0.1);
    }
  }
}

TEST(Experiment, LastTokenAlignmentAlsoLocalizes) {
  const ModelConfig c = toy_config(4);
  Rng rng(12);
  const auto pc = testing::planted_case(rng, c, 3);
  const auto r = run_experiment(pc.model, pc.inputs, mlp_out_sites(c), AlignMode::last_token_only());
  EXPECT_GE(*r.sites[3].recovery, 0.9);
  EXPECT_LE(std::fabs(*r.sites[0].recovery), 0.1);
}

TEST(Experiment, FullResidualPatchRecoversFully) {
  const ModelConfig c = toy_config();
  const Model m = toy_model(42, c);
  Rng rng(42);
  ExperimentInputs in;
  in.x_clean = testing::random_tokens(rng, 8, 64);
  in.x_corrupt = testing::random_tokens(rng, 8, 64);
  in.t_clean = {3};
  in.t_corrupt = {17};
  const auto r = run_experiment(m, in, {ActivationSite::block(1, SiteKind::resid_post)}, {});
  EXPECT_NEAR(*r.sites[0].recovery, 1.0, 1e-4);
}

TEST(Experiment, SiteErrorsAreRecorded) {
  const ModelConfig c = toy_config(4);
  Rng rng(1);
  const auto pc = testing::planted_case(rng, c, 1);
  const auto r = run_experiment(pc.model, pc.inputs, {ActivationSite::block(1, SiteKind::mlp_out)},
                                AlignMode::positions({{50, 0}}));
  ASSERT_EQ(r.sites.size(), 1u);
  EXPECT_FALSE(r.sites[0].recovery);
  EXPECT_TRUE(r.sites[0].error);
}

TEST(Experiment, DegenerateInputsThrow) {
  const Vocab v = make_toy_vocab(64);
  const Model zero = Model::zeros(toy_config());
  const PatchExperiment same{"q", "a", "a", {ActivationSite::embed()}, {}};
  EXPECT_THROW(run_experiment(zero, v, same), UndefinedRecoveryError);
  const PatchExperiment flat{"q", "a", "b", {ActivationSite::embed()}, {}};
  EXPECT_THROW(run_experiment(zero, v, flat), UndefinedRecoveryError);
}

TEST(Experiment, ReportJsonIsStable) {
  const ModelConfig c = toy_config();
  const Model m = toy_model(42, c);
  const Vocab v = make_toy_vocab(64);
  const PatchExperiment e{"What is it", "yes", "no", all_sites(c), AlignMode::question_only(0)};
  const std::string a = report_to_json(run_experiment(m, v, e));
  EXPECT_EQ(a, report_to_json(run_experiment(m, v, e)));
  const auto j = nlohmann::json::parse(a);
  EXPECT_EQ(j["align_mode"], "question_only");
  EXPECT_EQ(j["sites"].size(), 23u);
  EXPECT_EQ(j["token_counts"]["t_c"], encode(v, " yes").size());
}

TEST(Experiment, JsonRoundTripRecomputesRecovery) {
  const ModelConfig c = toy_config();
  const Model m = toy_model(3, c);
  const Vocab v = make_toy_vocab(64);
  const PatchReport r = run_experiment(m, v, {"Who", "Alice", "Bob", all_sites(c), {}});
  const PatchReport back = report_from_json(report_to_json(r));
  ASSERT_EQ(back.sites.size(), r.sites.size());
  for (std::size_t i = 0; i < r.sites.size(); ++i) {
    EXPECT_EQ(back.sites[i].site, r.sites[i].site);
    ASSERT_TRUE(back.sites[i].delta_patched);
    EXPECT_EQ(recovery(*back.sites[i].delta_patched, back.delta_corrupt, back.delta_clean), *r.sites[i].recovery);
  }
  EXPECT_THROW(report_from_json("{"), ParseError);
  EXPECT_THROW(report_from_json("{}"), ParseError);
}

TEST(Selector, Cardinalities) {
  ModelConfig gpt2;
  EXPECT_EQ(parse_site_selector("mlp_c_fc_out:all", gpt2).size(), 12u);
  EXPECT_EQ(parse_site_selector("mlp_c_fc_out", gpt2).size(), 12u);
  EXPECT_EQ(parse_site_selector("resid_post:0,3,11", gpt2).size(), 3u);
  EXPECT_EQ(parse_site_selector("ln_f_out", gpt2), std::vector{ActivationSite::final_stage(SiteKind::ln_f_out)});
  EXPECT_EQ(parse_site_selector("final.logits", gpt2).size(), 1u);
  EXPECT_EQ(parse_site_selector("embed_out", gpt2).size(), 1u);
  EXPECT_EQ(parse_site_selector("all", toy_config()).size(), 23u);
  EXPECT_EQ(parse_site_selector("all", gpt2).size(), 123u);
}

TEST(Selector, Errors) {
  ModelConfig gpt2;
  EXPECT_THROW(parse_site_selector("", gpt2), ArgumentError);
  EXPECT_THROW(parse_site_selector("mlp", gpt2), ArgumentError);
  EXPECT_THROW(parse_site_selector("mlp_out:12", gpt2), ArgumentError);
  EXPECT_THROW(parse_site_selector("mlp_out:1,,2", gpt2), ArgumentError);
  EXPECT_THROW(parse_site_selector("ln_f_out:0", gpt2), ArgumentError);
}

TEST(Sweep, DeduplicatesSites) {
  const ModelConfig c = toy_config();
  const auto r = patch_sweep(toy_model(1, c), make_toy_vocab(64), "Q", "a", "b",
                             {{{SiteKind::mlp_out}, {}}, {{SiteKind::mlp_out}, {1}}});
  EXPECT_EQ(r.sites.size(), 2u);
}

TEST(Permutation, BetweenGroupVariance) {
  EXPECT_DOUBLE_EQ(between_group_variance({{1, 1}, {3, 3}}), 1.0);
  EXPECT_DOUBLE_EQ(between_group_variance({{0, 2}, {1, 1}, {4, -2}}), 0.0);
}

TEST(Permutation, IdenticalValuesGiveOne) {
  const auto r = permutation_test({{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}, {0.5, 0.5}}, 500, 1);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(Permutation, SeparatedGroupsAreSignificant) {
  const auto r = permutation_test({{1.0, 0.98, 1.01, 0.99, 1.0}, {0, 0.01, -0.01, 0, 0.02}, {0, 0, 0.01, -0.02, 0}},
                                  10000, 42);
  EXPECT_LE(r.p_value, 0.01);
  EXPECT_GE(r.p_value, 1.0 / 10001.0);
}

TEST(Permutation, ExchangeableGroupsAreNot) {
  Rng rng(5);
  std::vector<std::vector<double>> g(4, std::vector<double>(15));
  for (auto& grp : g)
    for (double& x : grp) x = rng.normal();
  EXPECT_GT(permutation_test(g, 2000, 42).p_value, 0.01);
}

TEST(Permutation, InvariantUnderGroupOrderAndSeeded) {
  const std::vector<std::vector<double>> a{{1, 2, 3}, {2, 3, 4}, {0, 1, 5}};
  const std::vector<std::vector<double>> b{a[2], a[0], a[1]};
  EXPECT_DOUBLE_EQ(permutation_test(a, 1000, 7).statistic, permutation_test(b, 1000, 7).statistic);
  EXPECT_EQ(permutation_test(a, 1000, 7).p_value, permutation_test(a, 1000, 7).p_value);
}

TEST(Permutation, Errors) {
  EXPECT_THROW(permutation_test({{1, 2}}, 10, 1), ArgumentError);
  EXPECT_THROW(permutation_test({{1, 2}, {3}}, 10, 1), ArgumentError);
  EXPECT_THROW(permutation_test({{1, 2}, {3, 4}}, 0, 1), ArgumentError);
}

TEST(Permutation, PlantedReportsAcrossExperiments) {
  const ModelConfig c = toy_config(4);
  Rng rng(42);
  std::vector<PatchReport> reports;
  for (int i = 0; i < 10; ++i) {
    const auto pc = testing::planted_case(rng, c, 1);
    reports.push_back(run_experiment(pc.model, pc.inputs, mlp_out_sites(c), {}));
  }
  EXPECT_LE(permutation_test(reports, 10000, 42).p_value, 0.01);
}

}  // namespace
}  // namespace clap
