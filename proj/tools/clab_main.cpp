// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0
//
// clab — continual language adaptation lab.
//
// Subcommands: gen-data, train-base, adapt, eval, fisher, overlap, report,
// reproduce. Exit codes: 0 success, 2 input error, 3 configuration conflict,
// 4 numeric failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clab/common.hpp"
#include "clab/experiments.hpp"
#include "clab/serialize.hpp"
#include "clab/training.hpp"

namespace fs = std::filesystem;
using namespace clab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitConflict = 3;
constexpr int kExitNumeric = 4;

struct DataDir {
  std::vector<LanguageSpec> roster;
  fs::path root;

  const LanguageSpec& language(const std::string& id) const {
    for (const LanguageSpec& s : roster) {
      if (s.id == id) return s;
    }
    throw InputError("language '" + id + "' not found in " + (root / "languages.json").string());
  }

  Corpus corpus(const std::string& id, Split split) const {
    const fs::path path = root / "corpora" / (id + "_" + split_name(split) + ".jsonl");
    if (!fs::exists(path)) throw InputError("missing corpus file " + path.string());
    return corpus_from_jsonl(io::read_file(path));
  }
};

DataDir load_data_dir(const fs::path& root) {
  const fs::path roster_path = root / "languages.json";
  if (!fs::exists(roster_path)) {
    throw InputError("missing roster file " + roster_path.string());
  }
  return DataDir{roster_from_json(io::read_file(roster_path)), root};
}

std::uint64_t env_seed_or(std::uint64_t fallback) {
  if (const char* env = std::getenv("CLAB_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw InputError("CLAB_SEED is not a valid integer: " + std::string(env));
    }
  }
  return fallback;
}

std::string run_config_json(const std::map<std::string, std::string>& fields) {
  std::string out = "{\n";
  bool first = true;
  for (const auto& [k, v] : fields) {
    if (!first) out += ",\n";
    first = false;
    out += "  \"" + k + "\": " + v;
  }
  out += "\n}\n";
  return out;
}

std::string jquote(const std::string& s) { return "\"" + s + "\""; }

int cmd_gen_data(const std::string& roster_file, const std::string& out_dir,
                 std::int64_t train_size, std::int64_t dev_size, std::int64_t test_size,
                 std::uint64_t seed) {
  ExperimentManifest manifest;
  manifest.seed = env_seed_or(seed);
  manifest.train_size = train_size;
  manifest.dev_size = dev_size;
  manifest.test_size = test_size;

  std::vector<LanguageSpec> roster;
  if (roster_file.empty()) {
    roster = default_roster(manifest);
  } else {
    roster = roster_from_json(io::read_file(roster_file));
  }
  // generate everything before writing so a bad spec leaves no partial output
  std::vector<LanguageData> data = generate_all_corpora(roster, manifest);

  const fs::path out(out_dir);
  io::write_file(out / "languages.json", roster_to_json(roster));
  for (const LanguageData& d : data) {
    io::write_file(out / "corpora" / (d.spec.id + "_train.jsonl"), corpus_to_jsonl(d.train));
    io::write_file(out / "corpora" / (d.spec.id + "_dev.jsonl"), corpus_to_jsonl(d.dev));
    io::write_file(out / "corpora" / (d.spec.id + "_test.jsonl"), corpus_to_jsonl(d.test));
  }
  std::cout << "wrote " << roster.size() << " languages x 3 splits under " << out_dir << "\n";
  return kExitOk;
}

int cmd_train_base(const std::string& data_dir, const std::string& out_dir,
                   const std::vector<std::string>& langs, std::int32_t epochs,
                   std::int32_t batch_size, std::uint64_t seed, double lr) {
  DataDir data = load_data_dir(data_dir);
  ModelConfig cfg = ModelConfig::make_default();
  cfg.feature_dim = data.roster.front().feature_dim();
  cfg.validate();

  std::vector<Corpus> train_corpora, dev_corpora;
  std::vector<Dataset> train_sets, dev_sets;
  for (const std::string& id : langs) {
    train_corpora.push_back(data.corpus(id, Split::kTrain));
    dev_corpora.push_back(data.corpus(id, Split::kDev));
  }
  for (std::size_t i = 0; i < langs.size(); ++i) {
    train_sets.push_back({&data.language(langs[i]), &train_corpora[i]});
    dev_sets.push_back({&data.language(langs[i]), &dev_corpora[i]});
  }

  TrainConfig tc;
  tc.adapter.method = AdapterMethod::kFullFinetune;
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.seed = env_seed_or(seed);
  tc.lr_initial = lr;

  ParamStore initial = init_model(cfg, seed_mix(tc.seed, 0x1217));
  TrainResult result = train(initial, cfg, train_sets, dev_sets, tc);
  write_run_dir(out_dir, cfg, result,
                run_config_json({{"method", jquote("base")},
                                 {"epochs", std::to_string(epochs)},
                                 {"batch_size", std::to_string(batch_size)},
                                 {"seed", std::to_string(tc.seed)}}));
  std::cout << "base model: final dev CER " << result.log.final_dev_cer << " -> "
            << out_dir << "/artifact.bin\n";
  return kExitOk;
}

std::string pick_surrogate(const DataDir& data, const std::string& target_id) {
  std::vector<std::string> target_texts;
  for (const Utterance& u : data.corpus(target_id, Split::kTrain).utterances) {
    target_texts.push_back(u.text);
  }
  std::string best_code;
  double best = -1.0;
  for (const LanguageSpec& s : data.roster) {
    if (s.id == target_id) continue;
    std::vector<std::string> source_texts;
    for (const Utterance& u : data.corpus(s.id, Split::kTrain).utterances) {
      source_texts.push_back(u.text);
    }
    const double a = code_affinity(target_texts, source_texts, ScoreUnit::kChar);
    if (a > best) {
      best = a;
      best_code = s.code_token;
    }
  }
  if (best_code.empty()) throw InputError("no candidate surrogate languages in roster");
  return best_code;
}

int cmd_adapt(const std::string& base_path, const std::string& method_flag,
              const std::string& data_dir, const std::string& lang,
              const std::string& out_dir, std::int32_t epochs, std::int32_t batch_size,
              std::uint64_t seed, std::int32_t rank, std::int32_t prompts,
              const std::string& init_flag, const std::string& train_code,
              const std::string& ewc_fisher, double lambda, double lr) {
  const AdapterMethod method = method_from_name(method_flag);
  if (!ewc_fisher.empty() && method != AdapterMethod::kFullFinetune) {
    throw ConfigConflictError("--ewc-fisher applies to --method ft only");
  }

  auto [cfg, base] = io::read_checkpoint(base_path);
  DataDir data = load_data_dir(data_dir);
  const LanguageSpec& spec = data.language(lang);
  Corpus train_corpus = data.corpus(lang, Split::kTrain);
  Corpus dev_corpus = data.corpus(lang, Split::kDev);

  TrainConfig tc;
  tc.adapter.method = method;
  tc.adapter.lora_rank = rank;
  tc.adapter.prompt_count = prompts;
  tc.lr_initial = lr;
  tc.epochs = epochs;
  tc.batch_size = batch_size;
  tc.seed = env_seed_or(seed);
  if (!train_code.empty()) tc.train_code = train_code;

  std::string init_desc = init_flag;
  if (method == AdapterMethod::kSoftLangCode) {
    tc.adapter.slct_code = "<L7>";
    if (init_flag == "mean") {
      tc.adapter.slct_init = {SlctInit::Kind::kMean, ""};
    } else if (init_flag == "surrogate:auto") {
      const std::string code = pick_surrogate(data, lang);
      tc.adapter.slct_init = {SlctInit::Kind::kSurrogate, code};
      init_desc = "surrogate:" + code;
    } else if (init_flag.rfind("surrogate:", 0) == 0) {
      tc.adapter.slct_init = {SlctInit::Kind::kSurrogate, init_flag.substr(10)};
    } else {
      throw InputError("--init must be mean, surrogate:auto or surrogate:<code>");
    }
  }
  if (!ewc_fisher.empty()) {
    FisherDiagonal fisher = io::read_fisher(ewc_fisher);
    tc.ewc = EWCConfig{lambda, base, std::move(fisher)};
  }

  TrainResult result = train(base, cfg, {{&spec, &train_corpus}}, {{&spec, &dev_corpus}}, tc);
  std::map<std::string, std::string> fields = {
      {"method", jquote(method_flag)},
      {"language", jquote(lang)},
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"seed", std::to_string(tc.seed)}};
  if (method == AdapterMethod::kLora) fields["rank"] = std::to_string(rank);
  if (method == AdapterMethod::kSoftPrompt) fields["prompts"] = std::to_string(prompts);
  if (method == AdapterMethod::kSoftLangCode) fields["init"] = jquote(init_desc);
  if (!ewc_fisher.empty()) fields["lambda"] = std::to_string(lambda);
  write_run_dir(out_dir, cfg, result, run_config_json(fields));
  std::cout << method_flag << " on " << lang << ": final dev CER "
            << result.log.final_dev_cer << " -> " << out_dir << "/artifact.bin\n";
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& adapter_path,
             const std::string& data_dir, std::vector<std::string> langs,
             const std::string& split_flag, const std::string& code_override,
             const std::string& out_csv) {
  auto [cfg, params] = io::read_checkpoint(model_path);
  std::optional<AdapterState> adapter;
  if (!adapter_path.empty()) {
    adapter = io::read_adapter(adapter_path).second;
  }
  DataDir data = load_data_dir(data_dir);
  const Split split = split_from_name(split_flag);
  if (langs.empty()) {
    for (const LanguageSpec& s : data.roster) langs.push_back(s.id);
  }

  std::vector<std::string> missing;
  for (const std::string& id : langs) {
    const fs::path path = fs::path(data_dir) / "corpora" / (id + "_" + split_flag + ".jsonl");
    if (!fs::exists(path)) missing.push_back(path.string());
  }
  if (!missing.empty()) {
    std::string all;
    for (const std::string& m : missing) all += "\n  " + m;
    throw InputError("missing corpus files:" + all);
  }

  const std::string model_label = fs::path(model_path).stem().string();
  std::string csv = "corpus,method,unit,S,I,D,ref_len,rate\n";
  for (const std::string& id : langs) {
    const LanguageSpec& spec = data.language(id);
    Corpus corpus = data.corpus(id, split);
    const std::string code = code_override.empty() ? spec.code_token : code_override;
    EvalResult ev = evaluate(params, cfg, {&spec, &corpus}, code,
                             adapter ? &*adapter : nullptr);
    for (const auto& [unit, rep] :
         {std::pair<const char*, const ScoreReport*>{"char", &ev.cer}, {"word", &ev.wer}}) {
      csv += id + "_" + split_flag + "," + model_label + "," + unit + "," +
             std::to_string(rep->substitutions) + "," + std::to_string(rep->insertions) +
             "," + std::to_string(rep->deletions) + "," + std::to_string(rep->ref_length) +
             "," + std::to_string(rep->rate) + "\n";
    }
    std::string hyp_dump;
    for (const std::string& h : ev.hyps) hyp_dump += h + "\n";
    io::write_file(fs::path(out_csv).parent_path() / "hyps" /
                       (model_label + "_" + id + "_" + split_flag + ".txt"),
                   hyp_dump);
  }
  io::write_file(out_csv, csv);
  std::cout << "wrote " << out_csv << "\n";
  return kExitOk;
}

int cmd_fisher(const std::string& model_path, const std::string& data_dir,
               const std::string& lang, const std::string& split_flag, std::int64_t cap,
               const std::string& out_path) {
  auto [cfg, params] = io::read_checkpoint(model_path);
  DataDir data = load_data_dir(data_dir);
  const LanguageSpec& spec = data.language(lang);
  Corpus corpus = data.corpus(lang, split_from_name(split_flag));
  const Vocabulary vocab(cfg.vocab);
  FisherDiagonal fisher = estimate_fisher(params, cfg, make_batch(spec, corpus.utterances, vocab),
                                          cap, lang + ":" + split_flag);
  io::write_fisher(out_path, fisher);
  std::cout << "fisher over " << fisher.sample_count << " utterances -> " << out_path << "\n";
  return kExitOk;
}

int cmd_overlap(const std::vector<std::string>& files, const std::string& out_csv) {
  if (files.size() < 2) throw InputError("overlap needs at least two fisher files");
  std::vector<FisherDiagonal> fishers;
  for (const std::string& f : files) fishers.push_back(io::read_fisher(f));
  for (std::size_t i = 1; i < fishers.size(); ++i) {
    try {
      check_aligned(fishers[0].values, fishers[i].values, "overlap");
    } catch (const InputError& e) {
      throw InputError("fisher files " + files[0] + " and " + files[i] +
                       " are misaligned: " + e.what());
    }
  }
  std::string csv = "tag";
  for (const FisherDiagonal& f : fishers) csv += "," + f.source_tag;
  csv += "\n";
  for (std::size_t i = 0; i < fishers.size(); ++i) {
    csv += fishers[i].source_tag;
    for (std::size_t j = 0; j < fishers.size(); ++j) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.9g", fisher_overlap(fishers[i], fishers[j]));
      csv += std::string(",") + buf;
    }
    csv += "\n";
  }
  io::write_file(out_csv, csv);
  std::cout << "wrote " << out_csv << "\n";
  return kExitOk;
}

int cmd_report(const std::string& run_dir) {
  const fs::path result_path = fs::path(run_dir) / "result.json";
  if (!fs::exists(result_path)) {
    throw InputError("incomplete run: missing " + result_path.string());
  }
  PipelineResult result = result_from_json(io::read_file(result_path));
  write_report(run_dir, result);
  std::cout << "wrote " << (fs::path(run_dir) / "report.md").string() << "\n";
  return kExitOk;
}

int cmd_reproduce(const std::string& out_dir, const std::string& manifest_path) {
  ExperimentManifest manifest;
  if (!manifest_path.empty()) {
    manifest = manifest_from_json(io::read_file(manifest_path));
  }
  manifest.seed = env_seed_or(manifest.seed);
  PipelineResult result = run_reproduce(out_dir, manifest);
  std::cout << "reproduce finished in " << result.pipeline_seconds << "s\n"
            << "  surrogate code: " << result.surrogate_code << "\n"
            << "  lambda*: " << result.lambda_star << "\n"
            << "  report: " << (fs::path(out_dir) / "report.md").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clab: continual language adaptation lab"};
  app.require_subcommand(1);

  // gen-data
  std::string roster_file, out_dir, data_dir;
  std::int64_t train_size = 285, dev_size = 37, test_size = 84;
  std::uint64_t seed = 42;
  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic language corpora");
  gen->add_option("--roster", roster_file, "language roster JSON (default: built-in roster)");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--train-size", train_size);
  gen->add_option("--dev-size", dev_size);
  gen->add_option("--test-size", test_size);
  gen->add_option("--seed", seed);

  // train-base
  std::vector<std::string> base_langs = {"L0", "L1", "L2"};
  std::int32_t epochs = 16, batch_size = 16;
  double lr = 0.0;
  CLI::App* tb = app.add_subcommand("train-base", "train the base model from scratch");
  tb->add_option("--data", data_dir, "data directory from gen-data")->required();
  tb->add_option("--out", out_dir, "run output directory")->required();
  tb->add_option("--langs", base_langs, "language ids for base training");
  tb->add_option("--epochs", epochs);
  tb->add_option("--batch-size", batch_size);
  tb->add_option("--seed", seed);
  tb->add_option("--lr", lr, "initial learning rate (0 = method default)");

  // adapt
  std::string base_path, method_flag, lang = "L3", init_flag = "surrogate:auto";
  std::string train_code, ewc_fisher;
  std::int32_t rank = 8, prompts = 20, adapt_epochs = 10;
  double lambda = 0.1;
  CLI::App* ad = app.add_subcommand("adapt", "adapt the base model to a new language");
  ad->add_option("--base", base_path, "base checkpoint")->required();
  ad->add_option("--method", method_flag, "ft | lora | spt | slct")->required();
  ad->add_option("--data", data_dir)->required();
  ad->add_option("--lang", lang, "target language id");
  ad->add_option("--out", out_dir)->required();
  ad->add_option("--epochs", adapt_epochs);
  ad->add_option("--batch-size", batch_size);
  ad->add_option("--seed", seed);
  ad->add_option("--rank", rank, "LoRA rank");
  ad->add_option("--prompts", prompts, "soft prompt count");
  ad->add_option("--init", init_flag, "SLCT init: mean | surrogate:auto | surrogate:<code>");
  ad->add_option("--train-code", train_code, "condition training on this code token");
  ad->add_option("--ewc-fisher", ewc_fisher, "fisher file enabling EWC (ft only)");
  ad->add_option("--lambda", lambda, "EWC strength");
  ad->add_option("--lr", lr, "initial learning rate (0 = method default)");

  // eval
  std::string model_path, adapter_path, split_flag = "test", code_override, out_csv;
  std::vector<std::string> eval_langs;
  CLI::App* ev = app.add_subcommand("eval", "score a model on corpora");
  ev->add_option("--model", model_path, "checkpoint")->required();
  ev->add_option("--adapter", adapter_path, "adapter container");
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--langs", eval_langs, "language ids (default: all)");
  ev->add_option("--split", split_flag, "train | dev | test");
  ev->add_option("--code", code_override, "decode under this code token");
  ev->add_option("--out", out_csv, "output CSV")->required();

  // fisher
  std::int64_t cap = 128;
  std::string fisher_out;
  CLI::App* fi = app.add_subcommand("fisher", "estimate a diagonal fisher");
  fi->add_option("--model", model_path)->required();
  fi->add_option("--data", data_dir)->required();
  fi->add_option("--lang", lang)->required();
  fi->add_option("--split", split_flag, "train | dev | test");
  fi->add_option("--cap", cap, "max utterances");
  fi->add_option("--out", fisher_out)->required();

  // overlap
  std::vector<std::string> fisher_files;
  CLI::App* ov = app.add_subcommand("overlap", "fisher overlap matrix");
  ov->add_option("files", fisher_files, "fisher files")->required();
  ov->add_option("--out", out_csv)->required();

  // report
  std::string run_dir;
  CLI::App* rp = app.add_subcommand("report", "rebuild report.md from a run directory");
  rp->add_option("--run", run_dir)->required();

  // reproduce
  std::string manifest_path;
  CLI::App* re = app.add_subcommand("reproduce", "run the full experiment pipeline");
  re->add_option("--out", out_dir)->required();
  re->add_option("--manifest", manifest_path, "manifest JSON (default: built-in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitInput;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_data(roster_file, out_dir, train_size, dev_size, test_size, seed);
    }
    if (tb->parsed()) {
      return cmd_train_base(data_dir, out_dir, base_langs, epochs, batch_size, seed, lr);
    }
    if (ad->parsed()) {
      return cmd_adapt(base_path, method_flag, data_dir, lang, out_dir, adapt_epochs,
                       batch_size, seed, rank, prompts, init_flag, train_code, ewc_fisher,
                       lambda, lr);
    }
    if (ev->parsed()) {
      return cmd_eval(model_path, adapter_path, data_dir, eval_langs, split_flag,
                      code_override, out_csv);
    }
    if (fi->parsed()) {
      return cmd_fisher(model_path, data_dir, lang, split_flag, cap, fisher_out);
    }
    if (ov->parsed()) {
      return cmd_overlap(fisher_files, out_csv);
    }
    if (rp->parsed()) {
      return cmd_report(run_dir);
    }
    if (re->parsed()) {
      return cmd_reproduce(out_dir, manifest_path);
    }
  } catch (const ConfigConflictError& e) {
    std::cerr << "clab: configuration conflict: " << e.what() << "\n";
    return kExitConflict;
  } catch (const NumericError& e) {
    std::cerr << "clab: numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const InputError& e) {
    std::cerr << "clab: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "clab: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}
