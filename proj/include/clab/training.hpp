// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clab/adapters.hpp"
#include "clab/continual.hpp"
#include "clab/metrics.hpp"
#include "clab/model.hpp"
#include "clab/synthdata.hpp"
#include "clab/tape.hpp"

namespace clab {

// A corpus paired with the language that regenerates its features.
struct Dataset {
  const LanguageSpec* spec = nullptr;
  const Corpus* corpus = nullptr;
};

struct TrainConfig {
  AdapterSpec adapter;      // method selects the trainable set
  double lr_initial = 0.0;  // 0 -> default_lr(method)
  std::int32_t epochs = 10;
  std::int32_t batch_size = 16;
  std::uint64_t seed = 0;
  std::optional<EWCConfig> ewc;  // FULL_FT only
  std::int32_t dev_log_cap = 12;  // utterances per dev set scored each epoch
  // Overrides the code token the model is conditioned on during training and
  // dev scoring; empty means the dataset language's own code (SLCT always
  // uses its adapter code).
  std::string train_code;

  // Paper learning rates times a toy-scale multiplier (100x for full
  // fine-tuning, 1x otherwise): ft 1e-3, lora 1e-4, spt 1e-4, slct 1e-1.
  static double default_lr(AdapterMethod method);
  static std::vector<double> default_lambda_grid();  // {1, 1e-1, ..., 1e-5}
};

struct StepLog {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double penalty = 0.0;
};

struct EpochLog {
  std::int32_t epoch = 0;
  double dev_cer = 0.0;
  double dev_wer = 0.0;
};

struct TrainLog {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  double final_dev_cer = 0.0;
  double final_dev_wer = 0.0;
};

struct TrainResult {
  ParamStore model;  // tuned copy for FULL_FT, untouched copy otherwise
  std::optional<AdapterState> adapter;
  TrainLog log;
};

// Adam with bias correction and a linearly decaying learning rate
// lr(t) = lr_initial * (1 - t/T); the trainable set is never widened.
struct AdamState {
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // first, second
  std::int32_t beta_power = 0;
};

void adam_step(std::vector<std::pair<std::string, Tensor*>>& trainables,
               const ad::GradientMap& grads, AdamState& opt, std::int64_t step_index,
               std::int64_t total_steps, double lr_initial);

double lr_schedule(double lr_initial, std::int64_t step_index, std::int64_t total_steps);

// Deterministic training over the train split(s); multilingual base training
// passes one dataset per language and items keep their own code tokens.
// FULL_FT tunes a copy of base; adapter methods tune only the adapter state.
TrainResult train(const ParamStore& base, const ModelConfig& cfg,
                  const std::vector<Dataset>& train_sets,
                  const std::vector<Dataset>& dev_sets, const TrainConfig& tc);

struct LambdaRow {
  double lambda = 0.0;
  double dev_cer_new = 0.0;
  std::map<std::string, double> dev_cer_old;  // language id -> CER
  double fisher_weighted_distance = 0.0;
  double objective = 0.0;
};

struct LambdaSelection {
  double lambda_star = 0.0;
  std::vector<LambdaRow> table;
  std::vector<TrainResult> runs;  // aligned with table
};

// One EWC run per grid entry; J(lambda) = devCER_new + mean over old
// languages of max(0, devCER_old - baseline). `new_only` selects on
// devCER_new alone.
LambdaSelection select_lambda(const ParamStore& base, const ModelConfig& cfg,
                              const Dataset& train_new, const Dataset& dev_new,
                              const std::vector<Dataset>& dev_old,
                              const std::map<std::string, double>& dev_old_baseline_cer,
                              const FisherDiagonal& fisher, const TrainConfig& tc,
                              const std::vector<double>& grid, bool new_only = false);

// Decode every utterance and score against references. Exposes hypotheses
// for audit dumps.
struct EvalResult {
  ScoreReport cer;
  ScoreReport wer;
  std::vector<std::string> hyps;
};

EvalResult evaluate(const ParamStore& params, const ModelConfig& cfg, const Dataset& ds,
                    const std::string& code_token, const AdapterState* adapter,
                    std::int64_t cap = 0);  // cap 0 = all

}  // namespace clab
