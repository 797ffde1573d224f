// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "clab/adapters.hpp"
#include "clab/config.hpp"
#include "clab/param_store.hpp"
#include "clab/tape.hpp"
#include "clab/tensor.hpp"

namespace clab {

// Deterministic initialization: Gaussians scaled by 1/sqrt(fan_in) for weight
// matrices, zeros for biases, unit gains, small Gaussians for embeddings.
ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed);

// Closed-form scalar count for the given config.
std::int64_t parameter_count(const ModelConfig& cfg);

struct DecodeOutput {
  std::vector<std::int32_t> tokens;  // text symbols only, specials stripped
  std::string text;
  std::uint64_t per_step_logits_hash = 0;
  std::vector<Tensor> step_logits;  // greedy logits per decode step
};

struct BatchItem {
  Tensor features;                   // [frames x feature_dim]
  std::vector<std::int32_t> target;  // text-symbol ids
  std::int32_t lang_code = -1;       // language-code token id
};

struct LossGraph {
  ad::ValueId loss = -1;
  std::map<std::string, ad::ValueId> param_leaves;  // current-parameter leaves
  std::int64_t token_count = 0;
};

// Teacher-forced mean per-token cross-entropy over the batch, weighted so the
// mean runs over all scored target positions. Soft-prompt rows never count.
LossGraph nll_loss_graph(ad::Tape& tape, const ParamStore& params,
                         const ModelConfig& cfg, const std::vector<BatchItem>& batch,
                         const AdapterState* adapter);

double nll_loss(const ParamStore& params, const ModelConfig& cfg,
                const std::vector<BatchItem>& batch, const AdapterState* adapter);

// Greedy argmax decoding from [prompts] + <sot> + lang_code. Pure function of
// its arguments. Decoding runs on an incremental per-row path; agreement with
// the taped full-prefix path below is pinned by tests.
DecodeOutput transcribe(const ParamStore& params, const ModelConfig& cfg,
                        const Tensor& features, const std::string& lang_code,
                        const AdapterState* adapter);

// Encoder output for the given features.
Tensor encode_features(const ParamStore& params, const ModelConfig& cfg,
                       const Tensor& features, const AdapterState* adapter);

// Logits for every decoder position (prompt rows included under SPT) via the
// taped full-prefix forward; the reference route for decode checks.
Tensor decoder_logits_full(const ParamStore& params, const ModelConfig& cfg,
                           const Tensor& enc_out, const std::vector<std::int32_t>& tokens,
                           const AdapterState* adapter);

}  // namespace clab
