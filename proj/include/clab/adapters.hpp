// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clab/config.hpp"
#include "clab/param_store.hpp"
#include "clab/tensor.hpp"

namespace clab {

enum class AdapterMethod : std::uint8_t {
  kFullFinetune = 0,
  kLora = 1,
  kSoftPrompt = 2,
  kSoftLangCode = 3,
};

std::string method_name(AdapterMethod m);            // "ft", "lora", "spt", "slct"
AdapterMethod method_from_name(const std::string&);  // throws InputError

struct SlctInit {
  enum class Kind : std::uint8_t { kSurrogate = 0, kMean = 1 };
  Kind kind = Kind::kMean;
  std::string surrogate_code;  // required for kSurrogate
};

struct AdapterSpec {
  AdapterMethod method = AdapterMethod::kFullFinetune;
  std::int32_t lora_rank = 8;
  std::vector<std::string> lora_roles = {"q", "k", "v", "o"};
  std::int32_t prompt_count = 20;
  std::string slct_code = "<L7>";
  SlctInit slct_init;
};

// b: [in x r], a: [r x out]; the update is b * a.
struct LoraPair {
  Tensor a;
  Tensor b;
};

struct AdapterState {
  AdapterMethod method = AdapterMethod::kFullFinetune;
  std::int32_t lora_rank = 0;
  std::vector<std::pair<std::string, LoraPair>> lora;  // target name -> factors
  Tensor prompts;       // SPT: [m x d_model]
  Tensor code_row;      // SLCT: [1 x d_model]
  std::string slct_code;

  const LoraPair* find_lora(const std::string& target) const;
  std::uint64_t content_hash() const;
};

// Attention-matrix parameter names covered by LoRA for the given roles, in
// checkpoint order.
std::vector<std::string> lora_target_names(const ModelConfig& cfg,
                                           const std::vector<std::string>& roles);

AdapterState create_adapter(const AdapterSpec& spec, const ModelConfig& cfg,
                            const ParamStore& base, std::uint64_t seed);

// base + b*a; base is untouched.
Tensor effective_weight(const Tensor& base, const LoraPair& pair);

// New store with LoRA targets replaced by effective weights. Rejects stores
// that were already merged.
ParamStore merge_lora(const ParamStore& base, const AdapterState& state);

struct TrainableCount {
  std::int64_t count = 0;
  double fraction = 0.0;
};

TrainableCount trainable_fraction(const AdapterSpec& spec, const ModelConfig& cfg);

}  // namespace clab
