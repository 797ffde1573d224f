// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace clab {

enum class ScoreUnit : std::uint8_t { kChar, kWord };

struct EditOps {
  std::int64_t distance = 0;
  std::int64_t substitutions = 0;
  std::int64_t insertions = 0;
  std::int64_t deletions = 0;
};

struct ScoreReport {
  std::int64_t substitutions = 0;
  std::int64_t insertions = 0;
  std::int64_t deletions = 0;
  std::int64_t ref_length = 0;
  double rate = 0.0;       // (S+I+D)/ref_length, unclamped
  std::int64_t excluded = 0;  // pairs dropped for empty reference after normalization
};

// Lowercase, strip punctuation, collapse whitespace runs, trim. Idempotent.
std::string normalize_text(const std::string& s);

// Unit-cost Levenshtein with one optimal S/I/D decomposition; insertions are
// tokens present in hyp but not ref.
EditOps edit_distance(const std::vector<std::string>& ref,
                      const std::vector<std::string>& hyp);

std::vector<std::string> tokenize(const std::string& text, ScoreUnit unit);

// Micro-averaged corpus rate over (hyp, ref) pairs; both sides normalized
// first. Pairs whose reference normalizes to empty are excluded and counted.
ScoreReport corpus_score(const std::vector<std::pair<std::string, std::string>>& hyp_ref,
                         ScoreUnit unit);

enum class AffinityMode : std::uint8_t { kCoverage, kJaccard };

// Fraction of unit occurrences in the target covered by the source inventory
// (default), or set Jaccard between the unit inventories.
double code_affinity(const std::vector<std::string>& target_texts,
                     const std::vector<std::string>& source_texts, ScoreUnit unit,
                     AffinityMode mode = AffinityMode::kCoverage);

}  // namespace clab
