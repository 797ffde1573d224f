// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/experiments.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <chrono>
#include <cstdio>

#include "clab/common.hpp"
#include "clab/serialize.hpp"

namespace clab {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

json manifest_json(const ExperimentManifest& m) {
  return json{{"name", m.name},
              {"seed", m.seed},
              {"noise_sigma", m.noise_sigma},
              {"frames_per_char", m.frames_per_char},
              {"feature_dim", m.feature_dim},
              {"l2_mutation", m.l2_mutation},
              {"l3_mutation", m.l3_mutation},
              {"train_size", m.train_size},
              {"dev_size", m.dev_size},
              {"test_size", m.test_size},
              {"base_epochs", m.base_epochs},
              {"ft_epochs", m.ft_epochs},
              {"lora_epochs", m.lora_epochs},
              {"spt_epochs", m.spt_epochs},
              {"slct_epochs", m.slct_epochs},
              {"ewc_epochs", m.ewc_epochs},
              {"batch_size", m.batch_size},
              {"dev_log_cap", m.dev_log_cap},
              {"fisher_cap", m.fisher_cap},
              {"fisher_test_cap", m.fisher_test_cap},
              {"lambda_grid", m.lambda_grid},
              {"lambda_new_only", m.lambda_new_only}};
}

std::vector<std::string> corpus_texts(const Corpus& corpus) {
  std::vector<std::string> texts;
  texts.reserve(corpus.utterances.size());
  for (const Utterance& u : corpus.utterances) texts.push_back(u.text);
  return texts;
}

void write_run_dir(const fs::path& dir, const ModelConfig& cfg, const TrainResult& r,
                   json config) {
  config["final_dev_cer"] = r.log.final_dev_cer;
  config["final_dev_wer"] = r.log.final_dev_wer;
  clab::write_run_dir(dir, cfg, r, config.dump(2) + "\n");
}

std::string sanitize(std::string name) {
  for (char& c : name) {
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  }
  return name;
}

}  // namespace

std::string manifest_to_json(const ExperimentManifest& m) {
  return manifest_json(m).dump(2) + "\n";
}

ExperimentManifest manifest_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("manifest: bad JSON: ") + e.what());
  }
  ExperimentManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.noise_sigma = j.at("noise_sigma").get<double>();
    m.frames_per_char = j.at("frames_per_char").get<std::int32_t>();
    m.feature_dim = j.at("feature_dim").get<std::int32_t>();
    m.l2_mutation = j.at("l2_mutation").get<double>();
    m.l3_mutation = j.at("l3_mutation").get<double>();
    m.train_size = j.at("train_size").get<std::int64_t>();
    m.dev_size = j.at("dev_size").get<std::int64_t>();
    m.test_size = j.at("test_size").get<std::int64_t>();
    m.base_epochs = j.at("base_epochs").get<std::int32_t>();
    m.ft_epochs = j.at("ft_epochs").get<std::int32_t>();
    m.lora_epochs = j.at("lora_epochs").get<std::int32_t>();
    m.spt_epochs = j.at("spt_epochs").get<std::int32_t>();
    m.slct_epochs = j.at("slct_epochs").get<std::int32_t>();
    m.ewc_epochs = j.at("ewc_epochs").get<std::int32_t>();
    m.batch_size = j.at("batch_size").get<std::int32_t>();
    m.dev_log_cap = j.at("dev_log_cap").get<std::int32_t>();
    m.fisher_cap = j.at("fisher_cap").get<std::int64_t>();
    m.fisher_test_cap = j.at("fisher_test_cap").get<std::int64_t>();
    m.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    m.lambda_new_only = j.at("lambda_new_only").get<bool>();
  } catch (const json::exception& e) {
    throw InputError(std::string("manifest: missing or mistyped field: ") + e.what());
  }
  if (m.lambda_grid.empty()) throw InputError("manifest: empty lambda grid");
  return m;
}

std::uint64_t manifest_hash(const ExperimentManifest& m) {
  return fnv1a64(manifest_json(m).dump());
}

std::vector<LanguageSpec> default_roster(const ExperimentManifest& m) {
  MakeLanguageParams p;
  p.noise_sigma = m.noise_sigma;
  p.frames_per_char = m.frames_per_char;
  p.feature_dim = m.feature_dim;

  std::vector<LanguageSpec> roster;
  // L0 lacks only 't': near-identical alphabets keep the language acoustically
  // anonymous (the code token must disambiguate) while giving L2 a strictly
  // higher character affinity with L3.
  p.code_token = "<L0>";
  p.alphabet = "abcdefghijklmnopqrs ";
  roster.push_back(make_language("L0", seed_mix(m.seed, 0xc0de00), p));

  p.code_token = "<L1>";
  p.alphabet = "qrstuvwxyz ";
  roster.push_back(make_language("L1", seed_mix(m.seed, 0xc0de01), p));

  p.code_token = "<L2>";
  p.alphabet = "abcdefghijklmnopqrst ";
  p.parent = &roster[0];
  p.mutation_rate = m.l2_mutation;
  roster.push_back(make_language("L2", seed_mix(m.seed, 0xc0de02), p));

  p.code_token = "<L3>";
  p.alphabet = "abcdefghijklmnopqrst ";
  p.parent = &roster[0];
  p.mutation_rate = m.l3_mutation;
  roster.push_back(make_language("L3", seed_mix(m.seed, 0xc0de03), p));
  return roster;
}

std::vector<LanguageData> generate_all_corpora(const std::vector<LanguageSpec>& roster,
                                               const ExperimentManifest& m) {
  std::vector<LanguageData> data;
  for (std::size_t i = 0; i < roster.size(); ++i) {
    LanguageData d;
    d.spec = roster[i];
    const std::uint64_t base_seed = seed_mix(m.seed, 0xda7a00 + i);
    d.train = generate_corpus(d.spec, Split::kTrain, m.train_size, base_seed);
    d.dev = generate_corpus(d.spec, Split::kDev, m.dev_size, base_seed);
    d.test = generate_corpus(d.spec, Split::kTest, m.test_size, base_seed);
    data.push_back(std::move(d));
  }
  return data;
}

PipelineResult run_reproduce(const fs::path& out, const ExperimentManifest& manifest) {
  const auto wall_start = std::chrono::steady_clock::now();
  PipelineResult result;
  result.manifest = manifest;
  result.hash = manifest_hash(manifest);

  fs::create_directories(out);
  io::write_file(out / "manifest.json", manifest_to_json(manifest));

  ModelConfig cfg = ModelConfig::make_default();
  cfg.feature_dim = manifest.feature_dim;
  cfg.validate();
  const Vocabulary vocab(cfg.vocab);

  std::vector<LanguageSpec> roster = default_roster(manifest);
  io::write_file(out / "languages.json", roster_to_json(roster));
  std::vector<LanguageData> data = generate_all_corpora(roster, manifest);
  for (const LanguageData& d : data) {
    io::write_file(out / "corpora" / (d.spec.id + "_train.jsonl"), corpus_to_jsonl(d.train));
    io::write_file(out / "corpora" / (d.spec.id + "_dev.jsonl"), corpus_to_jsonl(d.dev));
    io::write_file(out / "corpora" / (d.spec.id + "_test.jsonl"), corpus_to_jsonl(d.test));
  }
  const LanguageData& l0 = data[0];
  const LanguageData& l1 = data[1];
  const LanguageData& l2 = data[2];
  const LanguageData& l3 = data[3];

  // ---- base model on L0/L1/L2 ----
  ParamStore init = init_model(cfg, seed_mix(manifest.seed, 0x1217));
  TrainConfig base_tc;
  base_tc.adapter.method = AdapterMethod::kFullFinetune;
  base_tc.epochs = manifest.base_epochs;
  base_tc.batch_size = manifest.batch_size;
  base_tc.seed = seed_mix(manifest.seed, 0xba5e);
  base_tc.dev_log_cap = manifest.dev_log_cap;
  const std::vector<Dataset> base_train = {{&l0.spec, &l0.train},
                                           {&l1.spec, &l1.train},
                                           {&l2.spec, &l2.train}};
  const std::vector<Dataset> base_dev = {{&l0.spec, &l0.dev},
                                         {&l1.spec, &l1.dev},
                                         {&l2.spec, &l2.dev}};
  TrainResult base_run = train(init, cfg, base_train, base_dev, base_tc);
  const ParamStore& base = base_run.model;
  write_run_dir(out / "base", cfg, base_run,
                json{{"method", "base"},
                     {"epochs", manifest.base_epochs},
                     {"batch_size", manifest.batch_size},
                     {"lr", TrainConfig::default_lr(AdapterMethod::kFullFinetune)},
                     {"seed", base_tc.seed},
                     {"manifest_hash", hex_u64(result.hash)}});

  std::map<std::string, EvalResult> base_dev_eval;
  for (const LanguageData* d : {&l0, &l1, &l2, &l3}) {
    EvalResult ev = evaluate(base, cfg, {&d->spec, &d->dev}, d->spec.code_token, nullptr);
    result.base_dev_cer[d->spec.id] = ev.cer.rate;
    base_dev_eval.emplace(d->spec.id, std::move(ev));
  }

  // ---- zero-shot: surrogate-code ranking on the unseen language ----
  const std::vector<std::string> l3_texts = corpus_texts(l3.train);
  std::string surrogate;
  double best_affinity = -1.0;
  for (const LanguageData* d : {&l0, &l1, &l2}) {
    ZeroShotRow row;
    row.code = d->spec.code_token;
    row.affinity_char = code_affinity(l3_texts, corpus_texts(d->train), ScoreUnit::kChar);
    row.affinity_token = code_affinity(l3_texts, corpus_texts(d->train), ScoreUnit::kWord);
    EvalResult ev = evaluate(base, cfg, {&l3.spec, &l3.test}, d->spec.code_token, nullptr);
    row.cer = ev.cer.rate;
    row.wer = ev.wer.rate;
    result.zero_shot.push_back(row);
    if (row.affinity_char > best_affinity) {
      best_affinity = row.affinity_char;
      surrogate = d->spec.code_token;
    }
  }
  result.surrogate_code = surrogate;

  // ---- adaptation methods on L3 ----
  const std::vector<Dataset> l3_train = {{&l3.spec, &l3.train}};
  const std::vector<Dataset> l3_dev = {{&l3.spec, &l3.dev}};

  auto run_method = [&](AdapterMethod method, std::int32_t epochs, const std::string& code,
                        std::uint64_t tag) {
    TrainConfig tc;
    tc.adapter.method = method;
    if (method == AdapterMethod::kSoftLangCode) {
      tc.adapter.slct_code = "<L7>";
      tc.adapter.slct_init = {SlctInit::Kind::kSurrogate, surrogate};
    } else if (method != AdapterMethod::kFullFinetune) {
      tc.train_code = code;
    }
    tc.epochs = epochs;
    tc.batch_size = manifest.batch_size;
    tc.seed = seed_mix(manifest.seed, tag);
    tc.dev_log_cap = manifest.dev_log_cap;
    TrainResult r = train(base, cfg, l3_train, l3_dev, tc);
    write_run_dir(out / "runs" / method_name(method), cfg, r,
                  json{{"method", method_name(method)},
                       {"epochs", epochs},
                       {"batch_size", manifest.batch_size},
                       {"lr", TrainConfig::default_lr(method)},
                       {"train_code", method == AdapterMethod::kSoftLangCode ? "<L7>" : code},
                       {"seed", tc.seed},
                       {"manifest_hash", hex_u64(result.hash)}});
    return r;
  };

  TrainResult ft = run_method(AdapterMethod::kFullFinetune, manifest.ft_epochs,
                              l3.spec.code_token, 0xf7);
  TrainResult lora = run_method(AdapterMethod::kLora, manifest.lora_epochs, surrogate, 0x10ea);
  TrainResult spt = run_method(AdapterMethod::kSoftPrompt, manifest.spt_epochs, surrogate, 0x5b7);
  TrainResult slct = run_method(AdapterMethod::kSoftLangCode, manifest.slct_epochs, "<L7>", 0x51c7);

  const Dataset l3_test{&l3.spec, &l3.test};
  EvalResult ev_baseline = evaluate(base, cfg, l3_test, surrogate, nullptr);
  EvalResult ev_ft = evaluate(ft.model, cfg, l3_test, l3.spec.code_token, nullptr);
  EvalResult ev_lora = evaluate(base, cfg, l3_test, surrogate, &*lora.adapter);
  EvalResult ev_spt = evaluate(base, cfg, l3_test, surrogate, &*spt.adapter);
  EvalResult ev_slct = evaluate(base, cfg, l3_test, "<L7>", &*slct.adapter);

  {
    ZeroShotRow slct_row;
    slct_row.code = "SLCT(<L7>)";
    slct_row.cer = ev_slct.cer.rate;
    slct_row.wer = ev_slct.wer.rate;
    result.zero_shot.push_back(slct_row);
  }

  auto method_row = [&](const std::string& name, AdapterMethod method, const EvalResult& ev) {
    MethodRow row;
    row.method = name;
    row.cer = ev.cer.rate;
    row.wer = ev.wer.rate;
    AdapterSpec spec;
    spec.method = method;
    TrainableCount tc = trainable_fraction(spec, cfg);
    row.trainable = tc.count;
    row.fraction = tc.fraction;
    return row;
  };
  result.methods.push_back([&] {
    MethodRow row;
    row.method = "Baseline";
    row.cer = ev_baseline.cer.rate;
    row.wer = ev_baseline.wer.rate;
    return row;
  }());
  result.methods.push_back(method_row("FT", AdapterMethod::kFullFinetune, ev_ft));
  result.methods.push_back(method_row("SLCT", AdapterMethod::kSoftLangCode, ev_slct));
  result.methods.push_back(method_row("SPT", AdapterMethod::kSoftPrompt, ev_spt));
  result.methods.push_back(method_row("LoRA", AdapterMethod::kLora, ev_lora));

  // ---- fisher files ----
  auto batch_of = [&](const LanguageData& d, const Corpus& corpus) {
    return make_batch(d.spec, corpus.utterances, vocab);
  };
  FisherDiagonal fisher_l0 =
      estimate_fisher(base, cfg, batch_of(l0, l0.train), manifest.fisher_cap, "L0:train");
  FisherDiagonal fisher_l2 =
      estimate_fisher(base, cfg, batch_of(l2, l2.train), manifest.fisher_cap, "L2:train");
  io::write_fisher(out / "fisher" / "L0_train.fisher", fisher_l0);
  io::write_fisher(out / "fisher" / "L2_train.fisher", fisher_l2);

  std::vector<FisherDiagonal> test_fishers;
  for (const LanguageData* d : {&l0, &l1, &l2, &l3}) {
    FisherDiagonal f = estimate_fisher(base, cfg, batch_of(*d, d->test),
                                       manifest.fisher_test_cap, d->spec.id + ":test");
    io::write_fisher(out / "fisher" / (d->spec.id + "_test.fisher"), f);
    result.overlap_tags.push_back(f.source_tag);
    test_fishers.push_back(std::move(f));
  }
  result.overlap.assign(test_fishers.size(), std::vector<double>(test_fishers.size(), 0.0));
  for (std::size_t i = 0; i < test_fishers.size(); ++i) {
    for (std::size_t j = 0; j < test_fishers.size(); ++j) {
      result.overlap[i][j] = fisher_overlap(test_fishers[i], test_fishers[j]);
    }
  }

  // ---- EWC: grid selection on the L0 fisher, final runs for both sources ----
  TrainConfig ewc_tc;
  ewc_tc.adapter.method = AdapterMethod::kFullFinetune;
  ewc_tc.epochs = manifest.ewc_epochs;
  ewc_tc.batch_size = manifest.batch_size;
  ewc_tc.seed = seed_mix(manifest.seed, 0xe3c);
  ewc_tc.dev_log_cap = manifest.dev_log_cap;

  const std::vector<Dataset> old_devs = {{&l0.spec, &l0.dev},
                                         {&l1.spec, &l1.dev},
                                         {&l2.spec, &l2.dev}};
  std::map<std::string, double> old_dev_baseline;
  for (const LanguageData* d : {&l0, &l1, &l2}) {
    old_dev_baseline[d->spec.id] = result.base_dev_cer[d->spec.id];
  }
  LambdaSelection sel =
      select_lambda(base, cfg, l3_train[0], l3_dev[0], old_devs, old_dev_baseline,
                    fisher_l0, ewc_tc, manifest.lambda_grid, manifest.lambda_new_only);
  result.lambda_table = sel.table;
  result.lambda_star = sel.lambda_star;

  std::size_t star_index = 0;
  for (std::size_t i = 0; i < sel.table.size(); ++i) {
    write_run_dir(out / "runs" / ("lambda_" + std::to_string(i)), cfg, sel.runs[i],
                  json{{"method", "ft+ewc"},
                       {"fisher", "L0:train"},
                       {"lambda", sel.table[i].lambda},
                       {"epochs", manifest.ewc_epochs},
                       {"seed", ewc_tc.seed},
                       {"manifest_hash", hex_u64(result.hash)}});
    if (sel.table[i].lambda == sel.lambda_star) star_index = i;
  }
  TrainResult& ewc_l0 = sel.runs[star_index];

  TrainConfig ewc_l2_tc = ewc_tc;
  ewc_l2_tc.ewc = EWCConfig{sel.lambda_star, base, fisher_l2};
  TrainResult ewc_l2 = train(base, cfg, l3_train, l3_dev, ewc_l2_tc);
  write_run_dir(out / "runs" / "ewc_L2", cfg, ewc_l2,
                json{{"method", "ft+ewc"},
                     {"fisher", "L2:train"},
                     {"lambda", sel.lambda_star},
                     {"epochs", manifest.ewc_epochs},
                     {"seed", ewc_l2_tc.seed},
                     {"manifest_hash", hex_u64(result.hash)}});

  // ---- forgetting matrix over all languages ----
  struct ModelEntry {
    std::string label;
    const ParamStore* params;
    const AdapterState* adapter;      // applied on the new language only
    std::string new_lang_code;
  };
  const std::vector<ModelEntry> models = {
      {"Baseline", &base, nullptr, surrogate},
      {"FT", &ft.model, nullptr, l3.spec.code_token},
      {"+EWC(L0)", &ewc_l0.model, nullptr, l3.spec.code_token},
      {"+EWC(L2)", &ewc_l2.model, nullptr, l3.spec.code_token},
      {"LoRA", &base, &*lora.adapter, surrogate},
      {"SPT", &base, &*spt.adapter, surrogate},
      {"SLCT", &base, &*slct.adapter, "<L7>"},
  };
  const std::vector<const LanguageData*> langs = {&l0, &l1, &l2, &l3};

  std::string forgetting_csv = "model,language,split,unit,S,I,D,ref_len,rate\n";
  for (const ModelEntry& entry : models) {
    result.forget_models.push_back(entry.label);
    std::vector<ForgettingCell> row;
    for (const LanguageData* d : langs) {
      const bool is_new = d->spec.id == l3.spec.id;
      const std::string code = is_new ? entry.new_lang_code : d->spec.code_token;
      const AdapterState* adapter = is_new ? entry.adapter : nullptr;
      EvalResult ev = evaluate(*entry.params, cfg, {&d->spec, &d->test}, code, adapter);
      row.push_back(ForgettingCell{ev.cer.rate, ev.wer.rate});

      for (const ScoreReport* rep : {&ev.cer, &ev.wer}) {
        forgetting_csv += sanitize(entry.label) + "," + d->spec.id + ",test," +
                          (rep == &ev.cer ? "char" : "word") + "," +
                          std::to_string(rep->substitutions) + "," +
                          std::to_string(rep->insertions) + "," +
                          std::to_string(rep->deletions) + "," +
                          std::to_string(rep->ref_length) + "," + fmt(rep->rate) + "\n";
      }
      std::string hyp_dump;
      for (const std::string& h : ev.hyps) hyp_dump += h + "\n";
      io::write_file(out / "eval" / "hyps" / (sanitize(entry.label) + "_" + d->spec.id + ".txt"),
                     hyp_dump);
    }
    result.forgetting.push_back(std::move(row));
  }
  for (const LanguageData* d : langs) result.forget_langs.push_back(d->spec.id);
  io::write_file(out / "eval" / "forgetting.csv", forgetting_csv);

  // ---- CSV tables ----
  {
    std::string csv = "code,cer,wer,affinity_char,affinity_token\n";
    for (const ZeroShotRow& row : result.zero_shot) {
      csv += row.code + "," + fmt(row.cer) + "," + fmt(row.wer) + "," +
             fmt(row.affinity_char) + "," + fmt(row.affinity_token) + "\n";
    }
    io::write_file(out / "eval" / "zero_shot.csv", csv);
  }
  {
    std::string csv = "method,cer,wer,trainable_count,trainable_fraction\n";
    for (const MethodRow& row : result.methods) {
      csv += row.method + "," + fmt(row.cer) + "," + fmt(row.wer) + "," +
             std::to_string(row.trainable) + "," + fmt_g(row.fraction) + "\n";
    }
    io::write_file(out / "eval" / "methods.csv", csv);
  }
  {
    std::string csv = "tag";
    for (const std::string& tag : result.overlap_tags) csv += "," + tag;
    csv += "\n";
    for (std::size_t i = 0; i < result.overlap.size(); ++i) {
      csv += result.overlap_tags[i];
      for (double v : result.overlap[i]) csv += "," + fmt_g(v);
      csv += "\n";
    }
    io::write_file(out / "overlap.csv", csv);
  }
  {
    std::string csv = "lambda,dev_cer_new,dev_cer_L0,dev_cer_L1,dev_cer_L2,fisher_distance,objective\n";
    for (const LambdaRow& row : result.lambda_table) {
      csv += fmt_g(row.lambda) + "," + fmt(row.dev_cer_new) + "," +
             fmt(row.dev_cer_old.at("L0")) + "," + fmt(row.dev_cer_old.at("L1")) + "," +
             fmt(row.dev_cer_old.at("L2")) + "," + fmt_g(row.fisher_weighted_distance) + "," +
             fmt(row.objective) + "\n";
    }
    io::write_file(out / "lambda_table.csv", csv);
  }

  io::write_file(out / "result.json", result_to_json(result));
  write_report(out, result);

  result.pipeline_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return result;
}

std::string result_to_json(const PipelineResult& r) {
  json j;
  j["manifest"] = manifest_json(r.manifest);
  j["manifest_hash"] = hex_u64(r.hash);
  j["base_dev_cer"] = r.base_dev_cer;
  j["surrogate_code"] = r.surrogate_code;

  json zero = json::array();
  for (const ZeroShotRow& row : r.zero_shot) {
    zero.push_back(json{{"code", row.code},
                        {"cer", row.cer},
                        {"wer", row.wer},
                        {"affinity_char", row.affinity_char},
                        {"affinity_token", row.affinity_token}});
  }
  j["zero_shot"] = std::move(zero);

  json methods = json::array();
  for (const MethodRow& row : r.methods) {
    methods.push_back(json{{"method", row.method},
                           {"cer", row.cer},
                           {"wer", row.wer},
                           {"trainable", row.trainable},
                           {"fraction", row.fraction}});
  }
  j["methods"] = std::move(methods);

  j["forget_models"] = r.forget_models;
  j["forget_langs"] = r.forget_langs;
  json cells = json::array();
  for (const auto& row : r.forgetting) {
    json jrow = json::array();
    for (const ForgettingCell& c : row) jrow.push_back(json{{"cer", c.cer}, {"wer", c.wer}});
    cells.push_back(std::move(jrow));
  }
  j["forgetting"] = std::move(cells);

  j["overlap_tags"] = r.overlap_tags;
  j["overlap"] = r.overlap;

  json lambda_rows = json::array();
  for (const LambdaRow& row : r.lambda_table) {
    lambda_rows.push_back(json{{"lambda", row.lambda},
                               {"dev_cer_new", row.dev_cer_new},
                               {"dev_cer_old", row.dev_cer_old},
                               {"fisher_distance", row.fisher_weighted_distance},
                               {"objective", row.objective}});
  }
  j["lambda_table"] = std::move(lambda_rows);
  j["lambda_star"] = r.lambda_star;
  return j.dump(2) + "\n";
}

PipelineResult result_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("result.json: bad JSON: ") + e.what());
  }
  PipelineResult r;
  try {
    r.manifest = manifest_from_json(j.at("manifest").dump());
    r.hash = manifest_hash(r.manifest);
    r.base_dev_cer = j.at("base_dev_cer").get<std::map<std::string, double>>();
    r.surrogate_code = j.at("surrogate_code").get<std::string>();
    for (const json& row : j.at("zero_shot")) {
      r.zero_shot.push_back(ZeroShotRow{row.at("code").get<std::string>(),
                                        row.at("cer").get<double>(),
                                        row.at("wer").get<double>(),
                                        row.at("affinity_char").get<double>(),
                                        row.at("affinity_token").get<double>()});
    }
    for (const json& row : j.at("methods")) {
      r.methods.push_back(MethodRow{row.at("method").get<std::string>(),
                                    row.at("cer").get<double>(),
                                    row.at("wer").get<double>(),
                                    row.at("trainable").get<std::int64_t>(),
                                    row.at("fraction").get<double>()});
    }
    r.forget_models = j.at("forget_models").get<std::vector<std::string>>();
    r.forget_langs = j.at("forget_langs").get<std::vector<std::string>>();
    for (const json& jrow : j.at("forgetting")) {
      std::vector<ForgettingCell> row;
      for (const json& c : jrow) {
        row.push_back(ForgettingCell{c.at("cer").get<double>(), c.at("wer").get<double>()});
      }
      r.forgetting.push_back(std::move(row));
    }
    r.overlap_tags = j.at("overlap_tags").get<std::vector<std::string>>();
    r.overlap = j.at("overlap").get<std::vector<std::vector<double>>>();
    for (const json& row : j.at("lambda_table")) {
      LambdaRow lr;
      lr.lambda = row.at("lambda").get<double>();
      lr.dev_cer_new = row.at("dev_cer_new").get<double>();
      lr.dev_cer_old = row.at("dev_cer_old").get<std::map<std::string, double>>();
      lr.fisher_weighted_distance = row.at("fisher_distance").get<double>();
      lr.objective = row.at("objective").get<double>();
      r.lambda_table.push_back(std::move(lr));
    }
    r.lambda_star = j.at("lambda_star").get<double>();
  } catch (const json::exception& e) {
    throw InputError(std::string("result.json: missing or mistyped field: ") + e.what());
  }
  return r;
}

void write_run_dir(const fs::path& dir, const ModelConfig& cfg, const TrainResult& r,
                   const std::string& config_json) {
  fs::create_directories(dir);
  io::write_file(dir / "config.json", config_json);

  std::string log = "step,loss,lr,penalty\n";
  for (const StepLog& s : r.log.steps) {
    log += std::to_string(s.step) + "," + fmt_g(s.loss) + "," + fmt_g(s.lr) + "," +
           fmt_g(s.penalty) + "\n";
  }
  io::write_file(dir / "log.csv", log);

  json summary{{"steps", r.log.steps.size()},
               {"final_dev_cer", r.log.final_dev_cer},
               {"final_dev_wer", r.log.final_dev_wer},
               {"artifact", "artifact.bin"}};
  json epochs = json::array();
  for (const EpochLog& e : r.log.epochs) {
    epochs.push_back(json{{"epoch", e.epoch}, {"dev_cer", e.dev_cer}, {"dev_wer", e.dev_wer}});
  }
  summary["epochs"] = std::move(epochs);
  io::write_file(dir / "summary.json", summary.dump(2) + "\n");

  if (r.adapter.has_value()) {
    io::write_adapter(dir / "artifact.bin", cfg, *r.adapter);
  } else {
    io::write_checkpoint(dir / "artifact.bin", cfg, r.model);
  }
}

void write_report(const fs::path& out, const PipelineResult& r) {
  std::string md;
  md += "# Continual language adaptation report\n\n";
  md += "- manifest: `" + r.manifest.name + "`\n";
  md += "- seed: " + std::to_string(r.manifest.seed) + "\n";
  md += "- manifest hash: `" + hex_u64(r.hash) + "`\n\n";

  md += "## Base model\n\n";
  md += "Dev CER per language after base training:\n\n";
  md += "| language | dev CER |\n|---|---|\n";
  for (const auto& [lang, cer] : r.base_dev_cer) {
    md += "| " + lang + " | " + fmt(cer) + " |\n";
  }

  md += "\n## Zero-shot language-code selection (L3 test)\n\n";
  md += "| code | CER | WER | char affinity | token affinity |\n|---|---|---|---|---|\n";
  for (const ZeroShotRow& row : r.zero_shot) {
    md += "| " + row.code + " | " + fmt(row.cer) + " | " + fmt(row.wer) + " | " +
          fmt(row.affinity_char) + " | " + fmt(row.affinity_token) + " |\n";
  }
  md += "\nSurrogate code selected by character affinity: `" + r.surrogate_code + "`\n";

  md += "\n## Adaptation methods (L3 test)\n\n";
  md += "| method | CER | WER | trainable params | fraction |\n|---|---|---|---|---|\n";
  for (const MethodRow& row : r.methods) {
    md += "| " + row.method + " | " + fmt(row.cer) + " | " + fmt(row.wer) + " | " +
          (row.method == "Baseline" ? std::string("-") : std::to_string(row.trainable)) +
          " | " + (row.method == "Baseline" ? std::string("-") : fmt_g(row.fraction)) + " |\n";
  }

  md += "\n## Forgetting (test CER, delta vs baseline in parentheses)\n\n";
  md += "| model |";
  for (const std::string& lang : r.forget_langs) md += " " + lang + " |";
  md += "\n|---|";
  for (std::size_t i = 0; i < r.forget_langs.size(); ++i) md += "---|";
  md += "\n";
  for (std::size_t m = 0; m < r.forget_models.size(); ++m) {
    md += "| " + r.forget_models[m] + " |";
    for (std::size_t l = 0; l < r.forget_langs.size(); ++l) {
      const double cer = r.forgetting[m][l].cer;
      const double delta = cer - r.forgetting[0][l].cer;
      md += " " + fmt(cer);
      if (m > 0) {
        md += " (" + std::string(delta >= 0 ? "+" : "") + fmt(delta) + ")";
      }
      md += " |";
    }
    md += "\n";
  }

  md += "\n## Fisher overlap (test sets)\n\n";
  md += "| |";
  for (const std::string& tag : r.overlap_tags) md += " " + tag + " |";
  md += "\n|---|";
  for (std::size_t i = 0; i < r.overlap_tags.size(); ++i) md += "---|";
  md += "\n";
  for (std::size_t i = 0; i < r.overlap.size(); ++i) {
    md += "| " + r.overlap_tags[i] + " |";
    for (double v : r.overlap[i]) md += " " + fmt(v) + " |";
    md += "\n";
  }

  md += "\n## EWC lambda selection (fisher: L0 train split)\n\n";
  md += "| lambda | dev CER L3 | dev CER L0 | dev CER L1 | dev CER L2 | fisher distance | objective |\n";
  md += "|---|---|---|---|---|---|---|\n";
  for (const LambdaRow& row : r.lambda_table) {
    md += "| " + fmt_g(row.lambda) + " | " + fmt(row.dev_cer_new) + " | " +
          fmt(row.dev_cer_old.at("L0")) + " | " + fmt(row.dev_cer_old.at("L1")) + " | " +
          fmt(row.dev_cer_old.at("L2")) + " | " + fmt_g(row.fisher_weighted_distance) +
          " | " + fmt(row.objective) + " |\n";
  }
  md += "\nSelected lambda: " + fmt_g(r.lambda_star) + "\n";

  io::write_file(out / "report.md", md);
}

}  // namespace clab
