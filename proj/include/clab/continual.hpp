// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "clab/model.hpp"
#include "clab/param_store.hpp"
#include "clab/tape.hpp"

namespace clab {

// Diagonal empirical Fisher, shape-aligned with a ParamStore.
struct FisherDiagonal {
  ParamStore values;  // nonnegative entries, checkpoint order
  std::int64_t sample_count = 0;
  std::string source_tag;

  double trace() const;
};

struct EWCConfig {
  double lambda = 0.0;
  ParamStore anchor;      // theta* snapshot
  FisherDiagonal fisher;  // importance weights, aligned with anchor
};

// Throws InputError unless names and shapes match exactly, in order.
void check_aligned(const ParamStore& a, const ParamStore& b, const std::string& what);

// F_i = (1/N) sum_n g_{n,i}^2 over per-utterance NLL gradients at the
// reference transcription, in corpus order, over min(N, cap) utterances.
FisherDiagonal estimate_fisher(const ParamStore& params, const ModelConfig& cfg,
                               const std::vector<BatchItem>& corpus, std::int64_t cap,
                               std::string source_tag);

// task_loss + lambda * sum_i F_i (theta_i - theta*_i)^2, built on the same
// tape so the penalty contributes gradients 2*lambda*F_i*(theta_i - theta*_i).
ad::ValueId ewc_loss(ad::Tape& tape, ad::ValueId task_loss, const ParamStore& params,
                     const std::map<std::string, ad::ValueId>& param_leaves,
                     const EWCConfig& cfg);

// Penalty value at the given parameters (no graph).
double ewc_penalty_value(const ParamStore& params, const EWCConfig& cfg);

// sum_i F_i (theta_i - anchor_i)^2
double fisher_weighted_distance(const FisherDiagonal& fisher, const ParamStore& params,
                                const ParamStore& anchor);

FisherDiagonal normalize_unit_trace(const FisherDiagonal& f);

// Bhattacharyya form of 1 - d^2 with d^2 = 0.5 * || sqrt(F1^) - sqrt(F2^) ||_F^2
// after unit-trace normalization: sum_i sqrt(f1_i * f2_i). In [0, 1].
double fisher_overlap(const FisherDiagonal& f1, const FisherDiagonal& f2);

}  // namespace clab
