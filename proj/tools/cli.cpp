#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "clap/data_prep.hpp"
#include "clap/error.hpp"
#include "clap/metrics.hpp"
#include "json.hpp"

namespace clap::cli {

namespace fs = std::filesystem;

namespace {

struct ModelDir {
  Model model;
  Vocab vocab;
};

Vocab load_dir_vocab(const fs::path& dir) { return load_vocab(dir / "vocab.json", dir / "merges.txt"); }

ModelDir load_dir(const fs::path& dir) {
  Model m = load_model(dir / "model.tensors");
  Vocab v = load_dir_vocab(dir);
  if (v.size() != m.config().vocab_size) {
    throw IntegrityError("vocab.json has " + std::to_string(v.size()) + " tokens but the model expects " +
                         std::to_string(m.config().vocab_size));
  }
  return {std::move(m), std::move(v)};
}

AlignMode parse_align(const std::string& s) {
  if (s == "min_prefix") return AlignMode::min_prefix();
  if (s == "question_only") return AlignMode::question_only(0);
  if (s == "last_token_only") return AlignMode::last_token_only();
  throw ArgumentError("unknown --align '" + s + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void print_table(std::ostream& out, const PatchReport& r) {
  std::vector<const SiteResult*> rows;
  for (const auto& s : r.sites) rows.push_back(&s);
  std::stable_sort(rows.begin(), rows.end(), [](const SiteResult* a, const SiteResult* b) {
    if (a->recovery.has_value() != b->recovery.has_value()) return a->recovery.has_value();
    return a->recovery && *a->recovery > *b->recovery;
  });
  out << "delta_clean=" << r.delta_clean << " delta_corrupt=" << r.delta_corrupt << '\n';
  out << std::left << std::setw(28) << "site" << std::right << std::setw(14) << "delta_patched"
      << std::setw(12) << "recovery" << '\n';
  for (const auto* s : rows) {
    out << std::left << std::setw(28) << s->site.name() << std::right;
    if (s->recovery) {
      out << std::setw(14) << std::fixed << std::setprecision(4) << *s->delta_patched << std::setw(12)
          << *s->recovery << '\n';
      out.unsetf(std::ios::fixed);
    } else {
      out << "  error: " << s->error.value_or("?") << '\n';
    }
  }
}

TokenSequence parse_ids(const std::string& s) {
  std::string t = s;
  std::replace(t.begin(), t.end(), ',', ' ');
  std::erase(t, '[');
  std::erase(t, ']');
  std::istringstream in(t);
  TokenSequence ids;
  std::string item;
  while (in >> item) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ArgumentError("bad token id '" + item + "'");
    ids.push_back(v);
  }
  return ids;
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const UndefinedRecoveryError*>(&e) || dynamic_cast<const MetricError*>(&e)) {
    return k_exit_degenerate;
  }
  if (dynamic_cast<const ArgumentError*>(&e) || dynamic_cast<const AlignmentError*>(&e)) return k_exit_usage;
  return k_exit_io;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Activation patching toolkit for GPT-2 family models", "clap"};
  app.require_subcommand(1);

  std::string model_dir, out_path, question, clean, corrupt, align = "min_prefix";
  std::vector<std::string> site_specs;
  std::uint64_t seed = 42;

  auto add_experiment = [&](CLI::App* sub) {
    sub->add_option("--model", model_dir, "Directory with model.tensors, vocab.json, merges.txt")->required();
    sub->add_option("--question", question, "Question text")->required();
    sub->add_option("--clean", clean, "Correct answer")->required();
    sub->add_option("--corrupt", corrupt, "Incorrect answer")->required();
    sub->add_option("--seed", seed, "Seed (all commands are deterministic)");
  };

  auto* sweep = app.add_subcommand("sweep", "Patch clean activations into the corrupt run, site by site");
  add_experiment(sweep);
  std::string cache_out;
  sweep->add_option("--sites", site_specs, "Selector: kind:all, kind:0,3,11, ln_f_out, embed_out or all");
  sweep->add_option("--align", align, "min_prefix | question_only | last_token_only");
  sweep->add_option("--out", out_path, "Write the PatchReport JSON here");
  sweep->add_option("--cache-out", cache_out, "Write the clean-run activation cache as a tensor container");

  auto* ldiff = app.add_subcommand("logit-diff", "Print clean and corrupt logit differences");
  add_experiment(ldiff);

  auto* eval = app.add_subcommand("eval-loss", "Validation cross-entropy over chunked records");
  std::string data_path;
  std::size_t chunk_len = 512;
  std::optional<int> pad_id;
  double val_fraction = 0.0;
  eval->add_option("--model", model_dir)->required();
  eval->add_option("--data", data_path, "JSONL with {\"text\"} per line, or CSV with an Abstract column")
      ->required();
  eval->add_option("--chunk-len", chunk_len, "Tokens per chunk");
  eval->add_option("--pad-id", pad_id, "Padding id (default: <|endoftext|>)");
  eval->add_option("--val-fraction", val_fraction, "Evaluate only the validation share of a seeded split");
  eval->add_option("--seed", seed, "Split seed");

  auto* enc = app.add_subcommand("encode", "Text to token ids");
  std::string text, ids_str;
  enc->add_option("--model", model_dir, "Directory with vocab.json and merges.txt")->required();
  enc->add_option("--text", text, "UTF-8 text")->required();

  auto* dec = app.add_subcommand("decode", "Token ids to text");
  dec->add_option("--model", model_dir, "Directory with vocab.json and merges.txt")->required();
  dec->add_option("--ids", ids_str, "Ids, e.g. \"[1,2,3]\" or \"1 2 3\"")->required();

  auto* toy = app.add_subcommand("toy-gen", "Write a seeded toy model directory");
  std::size_t layers = 2, d_model = 16, heads = 2, vocab_size = 64, n_ctx = 1024, d_mlp = 0;
  toy->add_option("--out", out_path, "Output directory")->required();
  toy->add_option("--seed", seed, "Weight seed");
  toy->add_option("--layers", layers);
  toy->add_option("--d-model", d_model);
  toy->add_option("--heads", heads);
  toy->add_option("--vocab", vocab_size);
  toy->add_option("--n-ctx", n_ctx);
  toy->add_option("--d-mlp", d_mlp, "Default 4 * d_model");

  auto* perm = app.add_subcommand("perm-test", "Permutation test for site-specific recovery across reports");
  std::vector<std::string> report_paths;
  std::size_t resamples = 10000;
  perm->add_option("reports", report_paths, "PatchReport JSON files")->required();
  perm->add_option("--resamples", resamples);
  perm->add_option("--seed", seed);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return k_exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return k_exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return k_exit_usage;
  }

  try {
    if (*sweep || *ldiff) {
      ModelDir md = load_dir(model_dir);
      if (clean == corrupt) {
        err << "error: clean and corrupt answers are identical\n";
        return k_exit_degenerate;
      }
      if (*ldiff) {
        const auto in = build_inputs(md.vocab, question, clean, corrupt);
        const double dc = logit_diff(forward(md.model, in.x_clean).logits, in.t_clean, in.t_corrupt);
        const double dx = logit_diff(forward(md.model, in.x_corrupt).logits, in.t_clean, in.t_corrupt);
        if (dc == dx) {
          err << "error: clean and corrupt logit differences coincide\n";
          return k_exit_degenerate;
        }
        nlohmann::ordered_json j{{"delta_clean", dc}, {"delta_corrupt", dx}};
        out << j.dump() << '\n';
        return k_exit_ok;
      }
      if (site_specs.empty()) site_specs.push_back("mlp_c_fc_out:all");
      std::vector<ActivationSite> sites;
      for (const auto& s : site_specs) {
        for (const auto& site : parse_site_selector(s, md.model.config())) {
          if (std::find(sites.begin(), sites.end(), site) == sites.end()) sites.push_back(site);
        }
      }
      const PatchExperiment e{question, clean, corrupt, sites, parse_align(align)};
      const PatchReport r = run_experiment(md.model, md.vocab, e);
      const std::string json = report_to_json(r);
      if (!out_path.empty()) write_text(out_path, json + "\n");
      if (!cache_out.empty()) {
        const auto in = build_inputs(md.vocab, question, clean, corrupt);
        TensorFile f;
        for (auto& [site, t] : forward(md.model, in.x_clean, sites).cache) f.tensors.emplace(site.name(), t);
        f.metadata["source"] = "clean";
        write_tensor_file(cache_out, f);
      }
      print_table(out, r);
      return k_exit_ok;
    }

    if (*eval) {
      ModelDir md = load_dir(model_dir);
      TextDataset d = load_dataset(data_path);
      if (val_fraction > 0.0) d = split(d, val_fraction, seed).second;
      const int pad = pad_id.value_or(md.vocab.end_of_text().value_or(static_cast<int>(md.vocab.size()) - 1));
      const ChunkedDataset c = chunk_and_pad(md.vocab, d, chunk_len, pad);
      const double loss = eval_loss(md.model, c);
      nlohmann::ordered_json j{{"loss", loss}, {"records", d.records.size()}, {"chunks", c.chunks.size()}};
      out << j.dump() << '\n';
      return k_exit_ok;
    }

    if (*enc) {
      const Vocab v = load_dir_vocab(model_dir);
      out << nlohmann::json(encode(v, text)).dump() << '\n';
      return k_exit_ok;
    }

    if (*dec) {
      const Vocab v = load_dir_vocab(model_dir);
      out << decode(v, parse_ids(ids_str)) << '\n';
      return k_exit_ok;
    }

    if (*toy) {
      ModelConfig cfg;
      cfg.n_layer = layers;
      cfg.n_head = heads;
      cfg.d_model = d_model;
      cfg.d_mlp = d_mlp ? d_mlp : 4 * d_model;
      cfg.vocab_size = vocab_size;
      cfg.n_ctx = n_ctx;
      const Model m = toy_model(seed, cfg);
      const Vocab v = make_toy_vocab(vocab_size);
      fs::create_directories(out_path);
      save_model(m, fs::path(out_path) / "model.tensors");
      save_vocab(v, fs::path(out_path) / "vocab.json", fs::path(out_path) / "merges.txt");
      out << "wrote " << out_path << '\n';
      return k_exit_ok;
    }

    if (*perm) {
      std::vector<PatchReport> reports;
      for (const auto& p : report_paths) reports.push_back(report_from_json(read_text(p)));
      const auto res = permutation_test(reports, resamples, seed);
      nlohmann::ordered_json j{{"statistic", res.statistic}, {"p_value", res.p_value}, {"resamples", resamples}};
      out << j.dump() << '\n';
      return k_exit_ok;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return k_exit_io;
  }
  return k_exit_usage;
}

}  // namespace clap::cli
