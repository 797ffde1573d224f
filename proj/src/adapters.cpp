// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/adapters.hpp"

#include <Eigen/Core>

#include "clab/common.hpp"
#include "clab/rng.hpp"

namespace clab {

namespace {

constexpr double kLoraInitStd = 0.01;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

std::string method_name(AdapterMethod m) {
  switch (m) {
    case AdapterMethod::kFullFinetune: return "ft";
    case AdapterMethod::kLora: return "lora";
    case AdapterMethod::kSoftPrompt: return "spt";
    case AdapterMethod::kSoftLangCode: return "slct";
  }
  throw InputError("unknown adapter method");
}

AdapterMethod method_from_name(const std::string& name) {
  if (name == "ft") return AdapterMethod::kFullFinetune;
  if (name == "lora") return AdapterMethod::kLora;
  if (name == "spt") return AdapterMethod::kSoftPrompt;
  if (name == "slct") return AdapterMethod::kSoftLangCode;
  throw InputError("unknown adapter method '" + name + "'");
}

const LoraPair* AdapterState::find_lora(const std::string& target) const {
  for (const auto& [name, pair] : lora) {
    if (name == target) return &pair;
  }
  return nullptr;
}

std::uint64_t AdapterState::content_hash() const {
  std::uint64_t h = kFnvOffset;
  unsigned char m = static_cast<unsigned char>(method);
  h = fnv1a64(std::span<const unsigned char>(&m, 1), h);
  for (const auto& [name, pair] : lora) {
    h = fnv1a64(name, h);
    h = pair.a.content_hash(h);
    h = pair.b.content_hash(h);
  }
  if (prompts.numel()) h = prompts.content_hash(h);
  if (code_row.numel()) h = code_row.content_hash(h);
  h = fnv1a64(slct_code, h);
  return h;
}

std::vector<std::string> lora_target_names(const ModelConfig& cfg,
                                           const std::vector<std::string>& roles) {
  std::vector<std::string> out;
  for (std::int32_t i = 0; i < cfg.enc_layers; ++i) {
    for (const std::string& r : roles) out.push_back("enc.l" + std::to_string(i) + ".attn." + r);
  }
  for (std::int32_t i = 0; i < cfg.dec_layers; ++i) {
    for (const std::string& r : roles) out.push_back("dec.l" + std::to_string(i) + ".self." + r);
    for (const std::string& r : roles) out.push_back("dec.l" + std::to_string(i) + ".cross." + r);
  }
  return out;
}

AdapterState create_adapter(const AdapterSpec& spec, const ModelConfig& cfg,
                            const ParamStore& base, std::uint64_t seed) {
  cfg.validate();
  AdapterState state;
  state.method = spec.method;
  Rng rng(seed);

  switch (spec.method) {
    case AdapterMethod::kFullFinetune:
      break;  // trainables are the store itself
    case AdapterMethod::kLora: {
      if (spec.lora_rank < 1) throw InputError("lora: rank must be >= 1");
      state.lora_rank = spec.lora_rank;
      for (const std::string& target : lora_target_names(cfg, spec.lora_roles)) {
        const Tensor& w = base.at(target);
        const std::int64_t in = w.rows(), out = w.cols();
        if (spec.lora_rank >= std::min(in, out)) {
          throw InputError("lora: rank " + std::to_string(spec.lora_rank) +
                           " not below min dimension of " + target + " " + w.shape_str());
        }
        LoraPair pair;
        pair.a = Tensor({spec.lora_rank, out});
        for (double& v : pair.a.data()) v = rng.gaussian() * kLoraInitStd;
        pair.b = Tensor({in, spec.lora_rank});  // zeros: initial delta is exactly 0
        state.lora.emplace_back(target, std::move(pair));
      }
      break;
    }
    case AdapterMethod::kSoftPrompt: {
      if (spec.prompt_count < 1) throw InputError("spt: prompt count must be >= 1");
      const Tensor& embed = base.at("dec.embed");
      state.prompts = Tensor({spec.prompt_count, cfg.d_model});
      for (std::int32_t i = 0; i < spec.prompt_count; ++i) {
        std::int64_t row = rng.below(embed.rows());
        for (std::int32_t c = 0; c < cfg.d_model; ++c) state.prompts.at(i, c) = embed.at(row, c);
      }
      break;
    }
    case AdapterMethod::kSoftLangCode: {
      const Vocabulary vocab(cfg.vocab);
      const std::int32_t code_id = vocab.id(spec.slct_code);
      if (!vocab.is_lang_code(code_id)) {
        throw InputError("slct: '" + spec.slct_code + "' is not a language-code token");
      }
      state.slct_code = spec.slct_code;
      const Tensor& embed = base.at("dec.embed");
      state.code_row = Tensor({1, cfg.d_model});
      if (spec.slct_init.kind == SlctInit::Kind::kSurrogate) {
        const std::int32_t src = vocab.id(spec.slct_init.surrogate_code);
        if (!vocab.is_lang_code(src)) {
          throw InputError("slct: surrogate '" + spec.slct_init.surrogate_code +
                           "' is not a language-code token");
        }
        for (std::int32_t c = 0; c < cfg.d_model; ++c) state.code_row.at(0, c) = embed.at(src, c);
      } else {  // mean over existing language-code rows
        for (std::int32_t id : vocab.lang_code_ids()) {
          for (std::int32_t c = 0; c < cfg.d_model; ++c) state.code_row.at(0, c) += embed.at(id, c);
        }
        const double inv = 1.0 / static_cast<double>(vocab.lang_code_ids().size());
        for (double& v : state.code_row.data()) v *= inv;
      }
      break;
    }
  }
  return state;
}

Tensor effective_weight(const Tensor& base, const LoraPair& pair) {
  if (pair.b.rows() != base.rows() || pair.a.cols() != base.cols() ||
      pair.b.cols() != pair.a.rows()) {
    throw InputError("effective_weight: base " + base.shape_str() + ", b " +
                     pair.b.shape_str() + ", a " + pair.a.shape_str() +
                     " do not conform");
  }
  Tensor out = base;
  Eigen::Map<EMat>(out.data().data(), out.rows(), out.cols()).noalias() +=
      Eigen::Map<const EMat>(pair.b.data().data(), pair.b.rows(), pair.b.cols()) *
      Eigen::Map<const EMat>(pair.a.data().data(), pair.a.rows(), pair.a.cols());
  return out;
}

ParamStore merge_lora(const ParamStore& base, const AdapterState& state) {
  if (state.method != AdapterMethod::kLora) {
    throw ConfigConflictError("merge_lora: adapter method is " + method_name(state.method));
  }
  if (base.lora_merged()) {
    throw ConfigConflictError("merge_lora: store already carries merged LoRA weights");
  }
  ParamStore out;
  for (const std::string& name : base.names()) {
    if (const LoraPair* pair = state.find_lora(name)) {
      out.add(name, effective_weight(base.at(name), *pair));
    } else {
      out.add(name, base.at(name));
    }
  }
  out.set_lora_merged(true);
  return out;
}

TrainableCount trainable_fraction(const AdapterSpec& spec, const ModelConfig& cfg) {
  const std::int64_t total = [&] {
    std::int64_t n = 0;
    // mirrors init_model's layout via the closed form
    const std::int64_t d = cfg.d_model, ff = cfg.ff_dim(), v = cfg.vocab_size();
    n += cfg.feature_dim * d + d;
    n += cfg.enc_layers * (4 * d + 4 * d * d + d * ff + ff + ff * d + d) + 2 * d;
    n += v * d;
    n += cfg.dec_layers * (6 * d + 8 * d * d + d * ff + ff + ff * d + d) + 2 * d;
    return n;
  }();

  TrainableCount tc;
  switch (spec.method) {
    case AdapterMethod::kFullFinetune:
      tc.count = total;
      break;
    case AdapterMethod::kLora: {
      const std::int64_t per_target =
          static_cast<std::int64_t>(spec.lora_rank) * (cfg.d_model + cfg.d_model);
      tc.count = per_target *
                 static_cast<std::int64_t>(lora_target_names(cfg, spec.lora_roles).size());
      break;
    }
    case AdapterMethod::kSoftPrompt:
      tc.count = static_cast<std::int64_t>(spec.prompt_count) * cfg.d_model;
      break;
    case AdapterMethod::kSoftLangCode:
      tc.count = cfg.d_model;
      break;
  }
  tc.fraction = static_cast<double>(tc.count) / static_cast<double>(total);
  return tc;
}

}  // namespace clab
