// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clab/config.hpp"
#include "clab/model.hpp"
#include "clab/tensor.hpp"

namespace clab {

// The 28 text symbols: letters, space, apostrophe.
inline constexpr const char* kTextSymbols = "abcdefghijklmnopqrstuvwxyz '";
inline constexpr std::int32_t kTextSymbolCount = 28;

enum class Split : std::uint8_t { kTrain = 0, kDev = 1, kTest = 2 };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct ParentRef {
  std::string id;
  double mutation_rate = 0.0;
};

// A synthetic language: per-symbol Gaussian feature prototypes plus an
// alphabet that drives text generation. Children share the parent's
// prototypes for non-mutated symbols exactly; mutation sets are nested across
// siblings (a higher rate strictly extends a lower one).
struct LanguageSpec {
  std::string id;
  std::string code_token;
  std::string alphabet;  // subset of kTextSymbols
  std::int64_t codebook_seed = 0;
  double noise_sigma = 0.1;
  std::int32_t frames_per_char = 2;
  std::optional<ParentRef> parent;
  std::vector<Tensor> prototypes;  // one per kTextSymbols entry, materialized

  std::int32_t feature_dim() const {
    return prototypes.empty() ? 0 : static_cast<std::int32_t>(prototypes[0].numel());
  }
};

struct MakeLanguageParams {
  std::string code_token;
  std::string alphabet;
  double noise_sigma = 0.1;
  std::int32_t frames_per_char = 2;
  std::int32_t feature_dim = 16;
  const LanguageSpec* parent = nullptr;
  double mutation_rate = 0.0;
};

LanguageSpec make_language(const std::string& id, std::uint64_t seed,
                           const MakeLanguageParams& params);

// Fraction of symbols whose prototypes are bit-identical between the two.
double prototype_overlap(const LanguageSpec& a, const LanguageSpec& b);

// frames_per_char noisy copies of each character's prototype.
Tensor synthesize(const LanguageSpec& spec, const std::string& text,
                  std::uint64_t utt_seed);

struct Utterance {
  std::string text;
  std::uint64_t utt_seed = 0;
};

struct Corpus {
  std::string language_id;
  Split split = Split::kTrain;
  std::vector<Utterance> utterances;
};

// Deterministic texts of 3-12 words of 1-8 characters (capped so every
// utterance fits the default model lengths); utterance seeds are disjoint
// across splits.
Corpus generate_corpus(const LanguageSpec& spec, Split split, std::int64_t n,
                       std::uint64_t base_seed);

BatchItem make_batch_item(const LanguageSpec& spec, const Utterance& utt,
                          const Vocabulary& vocab);
std::vector<BatchItem> make_batch(const LanguageSpec& spec,
                                  const std::vector<Utterance>& utts,
                                  const Vocabulary& vocab);

// JSON-lines records {lang, split, text, utt_seed}.
std::string corpus_to_jsonl(const Corpus& corpus);
Corpus corpus_from_jsonl(const std::string& text);

// Language spec files carry the generative definition; prototypes are
// rebuilt on load (parents must be listed before children).
std::string roster_to_json(const std::vector<LanguageSpec>& specs);
std::vector<LanguageSpec> roster_from_json(const std::string& text);

}  // namespace clab
