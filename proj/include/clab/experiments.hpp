// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "clab/synthdata.hpp"
#include "clab/training.hpp"

namespace clab {

// Everything a reproduction run depends on. Serialized as manifest.json; its
// hash is stamped into every emitted table.
struct ExperimentManifest {
  std::string name = "default";
  std::uint64_t seed = 42;

  // roster: L0/L1 unrelated roots, L2 a close child of L0, L3 a farther
  // child of L0 and the unseen target language
  double noise_sigma = 0.1;
  std::int32_t frames_per_char = 2;
  std::int32_t feature_dim = 16;
  double l2_mutation = 0.3;
  double l3_mutation = 0.6;

  // per-language split sizes
  std::int64_t train_size = 285;
  std::int64_t dev_size = 37;
  std::int64_t test_size = 84;

  std::int32_t base_epochs = 16;
  std::int32_t ft_epochs = 8;
  std::int32_t lora_epochs = 15;
  std::int32_t spt_epochs = 15;
  std::int32_t slct_epochs = 12;
  std::int32_t ewc_epochs = 5;
  std::int32_t batch_size = 16;
  std::int32_t dev_log_cap = 12;
  std::int64_t fisher_cap = 128;       // train-split fishers driving EWC
  std::int64_t fisher_test_cap = 64;   // test-split fishers for the overlap matrix
  std::vector<double> lambda_grid = TrainConfig::default_lambda_grid();
  bool lambda_new_only = false;  // select on new-language dev CER alone
};

std::string manifest_to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const std::string& text);
std::uint64_t manifest_hash(const ExperimentManifest& m);

// L0, L1, L2, L3 with nested-mutation codebooks and staggered alphabets.
std::vector<LanguageSpec> default_roster(const ExperimentManifest& m);

struct LanguageData {
  LanguageSpec spec;
  Corpus train, dev, test;
};

std::vector<LanguageData> generate_all_corpora(const std::vector<LanguageSpec>& roster,
                                               const ExperimentManifest& m);

struct ZeroShotRow {
  std::string code;
  double cer = 0.0, wer = 0.0;
  double affinity_char = 0.0, affinity_token = 0.0;
};

struct MethodRow {
  std::string method;  // Baseline, FT, SLCT, SPT, LoRA
  double cer = 0.0, wer = 0.0;
  std::int64_t trainable = 0;
  double fraction = 0.0;
};

struct ForgettingCell {
  double cer = 0.0, wer = 0.0;
};

struct PipelineResult {
  ExperimentManifest manifest;
  std::uint64_t hash = 0;

  std::map<std::string, double> base_dev_cer;  // per-language learnability gate
  std::string surrogate_code;                  // affinity-selected existing code

  std::vector<ZeroShotRow> zero_shot;  // existing codes ranked + SLCT row
  std::vector<MethodRow> methods;

  std::vector<std::string> forget_models;
  std::vector<std::string> forget_langs;
  std::vector<std::vector<ForgettingCell>> forgetting;

  std::vector<std::string> overlap_tags;
  std::vector<std::vector<double>> overlap;

  std::vector<LambdaRow> lambda_table;
  double lambda_star = 0.0;

  double pipeline_seconds = 0.0;  // wall time, not written to any artifact
};

// The full default pipeline: data generation, base training, Fisher files,
// zero-shot/method/forgetting experiments, CSVs, report.md. Deterministic:
// identical inputs produce byte-identical files.
PipelineResult run_reproduce(const std::filesystem::path& out_dir,
                             const ExperimentManifest& manifest);

// result.json round-trip used by the report command.
std::string result_to_json(const PipelineResult& r);
PipelineResult result_from_json(const std::string& text);

// report.md + summary CSVs from a completed run directory.
void write_report(const std::filesystem::path& out_dir, const PipelineResult& r);

// Standard run directory: config.json (pre-serialized), log.csv,
// summary.json, artifact.bin (checkpoint for full fine-tuning, adapter
// container otherwise).
void write_run_dir(const std::filesystem::path& dir, const ModelConfig& cfg,
                   const TrainResult& result, const std::string& config_json);

}  // namespace clab
