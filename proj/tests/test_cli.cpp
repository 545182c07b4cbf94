#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "clap/data_prep.hpp"
#include "clap/metrics.hpp"
#include "json.hpp"
#include "test_support.hpp"

namespace clap {
namespace {

namespace fs = std::filesystem;
using testing::slurp;

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path toy_dir(const std::string& name, const std::string& vocab = "512") {
  const auto dir = testing::scratch_dir(name);
  const auto r = run({"toy-gen", "--out", dir.string(), "--seed", "42", "--vocab", vocab, "--layers", "2"});
  EXPECT_EQ(r.code, 0) << r.err;
  return dir;
}

TEST(Cli, HelpAndUnknownCommand) {
  EXPECT_EQ(run({"--help"}).code, cli::k_exit_ok);
  EXPECT_EQ(run({"frobnicate"}).code, cli::k_exit_usage);
  EXPECT_EQ(run({}).code, cli::k_exit_usage);
}

TEST(Cli, ToyGenIsByteIdentical) {
  const auto a = toy_dir("cli_toy_a"), b = toy_dir("cli_toy_b");
  for (const char* f : {"model.tensors", "vocab.json", "merges.txt"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Cli, EncodeDecode) {
  const auto dir = toy_dir("cli_codec");
  EXPECT_EQ(run({"encode", "--model", dir.string(), "--text", ""}).out, "[]\n");
  const auto enc = run({"encode", "--model", dir.string(), "--text", "the cat"});
  ASSERT_EQ(enc.code, 0);
  const auto ids = nlohmann::json::parse(enc.out).get<std::vector<int>>();
  std::string joined;
  for (int id : ids) joined += std::to_string(id) + " ";
  EXPECT_EQ(run({"decode", "--model", dir.string(), "--ids", joined}).out, "the cat\n");
  EXPECT_EQ(run({"decode", "--model", dir.string(), "--ids", "[9999]"}).code, cli::k_exit_io);
}

TEST(Cli, SweepNeedsCorrupt) {
  const auto dir = toy_dir("cli_usage");
  const auto r = run({"sweep", "--model", dir.string(), "--question", "q", "--clean", "a"});
  EXPECT_EQ(r.code, cli::k_exit_usage);
  EXPECT_NE(r.err.find("--corrupt"), std::string::npos);
}

TEST(Cli, SweepWritesReport) {
  const auto dir = toy_dir("cli_sweep");
  const auto report = dir / "r.json";
  const auto r = run({"sweep", "--model", dir.string(), "--question", "What is IEDs?", "--clean",
                      "Interictal epileptiform discharges", "--corrupt", "Seizures", "--sites", "mlp_c_fc_out",
                      "--sites", "ln_f_out", "--out", report.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(report));
  ASSERT_EQ(j["sites"].size(), 3u);
  EXPECT_EQ(j["sites"][2]["site"], "final.ln_f_out");
  EXPECT_EQ(j["align_mode"], "min_prefix");
  EXPECT_NE(r.out.find("h.1.mlp_c_fc_out"), std::string::npos);
}

TEST(Cli, SweepCacheOut) {
  const auto dir = toy_dir("cli_cache");
  const auto cache = dir / "cache.tensors";
  const auto r = run({"sweep", "--model", dir.string(), "--question", "Q", "--clean", "yes", "--corrupt", "no",
                      "--sites", "resid_post:1", "--cache-out", cache.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_tensor_file(cache).tensors.count("h.1.resid_post"), 1u);
}

TEST(Cli, BadAlignAndSelectorAreUsageErrors) {
  const auto dir = toy_dir("cli_align");
  EXPECT_EQ(run({"sweep", "--model", dir.string(), "--question", "Q", "--clean", "a", "--corrupt", "b", "--align",
                 "sideways"})
                .code,
            cli::k_exit_usage);
  EXPECT_EQ(run({"sweep", "--model", dir.string(), "--question", "Q", "--clean", "a", "--corrupt", "b", "--sites",
                 "mlp_out:9"})
                .code,
            cli::k_exit_usage);
}

TEST(Cli, DegenerateExperimentsExitThree) {
  const auto dir = toy_dir("cli_degenerate");
  EXPECT_EQ(run({"sweep", "--model", dir.string(), "--question", "Q", "--clean", "a", "--corrupt", "a"}).code,
            cli::k_exit_degenerate);
  EXPECT_EQ(run({"logit-diff", "--model", dir.string(), "--question", "Q", "--clean", "a", "--corrupt", "a"}).code,
            cli::k_exit_degenerate);
}

TEST(Cli, LogitDiffMatchesLibrary) {
  const auto dir = toy_dir("cli_ldiff");
  const auto r = run({"logit-diff", "--model", dir.string(), "--question", "Q", "--clean", "yes", "--corrupt", "no"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Model m = load_model(dir / "model.tensors");
  const Vocab v = load_vocab(dir / "vocab.json", dir / "merges.txt");
  const auto in = build_inputs(v, "Q", "yes", "no");
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["delta_clean"].get<double>(), logit_diff(forward(m, in.x_clean).logits, in.t_clean, in.t_corrupt));
}

TEST(Cli, MissingModelIsIoError) {
  EXPECT_EQ(run({"logit-diff", "--model", "/nonexistent", "--question", "q", "--clean", "a", "--corrupt", "b"}).code,
            cli::k_exit_io);
}

TEST(Cli, EvalLossMatchesLibrary) {
  const auto dir = toy_dir("cli_eval");
  const auto data = dir / "d.jsonl";
  std::ofstream(data) << "{\"text\": \"the quick brown fox\"}\n{\"text\": \"jumps over the lazy dog\"}\n"
                      << "{\"text\": \"again and again\"}\n";
  const auto r = run({"eval-loss", "--model", dir.string(), "--data", data.string(), "--chunk-len", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Model m = load_model(dir / "model.tensors");
  const Vocab v = load_vocab(dir / "vocab.json", dir / "merges.txt");
  const double expect = eval_loss(m, chunk_and_pad(v, load_dataset(data), 4, *v.end_of_text()));
  EXPECT_EQ(nlohmann::json::parse(r.out)["loss"].get<double>(), expect);
}

TEST(Cli, PermTestOverReports) {
  const auto dir = toy_dir("cli_perm");
  std::vector<std::string> args{"perm-test", "--resamples", "200", "--seed", "1"};
  const char* answers[][2] = {{"yes", "no"}, {"cat", "dog"}, {"red", "blue"}};
  for (int i = 0; i < 3; ++i) {
    const auto p = dir / ("r" + std::to_string(i) + ".json");
    ASSERT_EQ(run({"sweep", "--model", dir.string(), "--question", "Pick", "--clean", answers[i][0], "--corrupt",
                   answers[i][1], "--out", p.string()})
                  .code,
              0);
    args.push_back(p.string());
  }
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const double p = nlohmann::json::parse(r.out)["p_value"].get<double>();
  EXPECT_GT(p, 0.0);
  EXPECT_LE(p, 1.0);
}

}  // namespace
}  // namespace clap
