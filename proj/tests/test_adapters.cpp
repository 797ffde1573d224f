// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "clab/adapters.hpp"
#include "clab/common.hpp"
#include "clab/model.hpp"
#include "clab/rng.hpp"
#include "clab/serialize.hpp"

using namespace clab;

namespace {

Tensor random_features(std::int64_t frames, std::int64_t dim, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({frames, dim});
  for (double& v : t.data()) v = rng.gaussian();
  return t;
}

bool tensors_bit_equal(const ParamStore& a, const ParamStore& b) {
  if (a.names() != b.names()) return false;
  for (const std::string& name : a.names()) {
    if (!a.at(name).bit_equal(b.at(name))) return false;
  }
  return true;
}

// Independent rank oracle: Gaussian elimination with partial pivoting,
// counting pivots above a relative tolerance.
std::int64_t matrix_rank_oracle(Tensor m, double rel_tol = 1e-9) {
  const std::int64_t rows = m.rows(), cols = m.cols();
  double max_abs = 0.0;
  for (double v : m.data()) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == 0.0) return 0;
  const double tol = rel_tol * max_abs;
  std::int64_t rank = 0;
  for (std::int64_t col = 0; col < cols && rank < rows; ++col) {
    std::int64_t pivot = -1;
    double best = tol;
    for (std::int64_t r = rank; r < rows; ++r) {
      if (std::abs(m.at(r, col)) > best) {
        best = std::abs(m.at(r, col));
        pivot = r;
      }
    }
    if (pivot < 0) continue;
    for (std::int64_t c = 0; c < cols; ++c) std::swap(m.at(rank, c), m.at(pivot, c));
    for (std::int64_t r = rank + 1; r < rows; ++r) {
      const double f = m.at(r, col) / m.at(rank, col);
      for (std::int64_t c = 0; c < cols; ++c) m.at(r, c) -= f * m.at(rank, c);
    }
    ++rank;
  }
  return rank;
}

}  // namespace

TEST_CASE("fresh LoRA adapter leaves decoding bit-identical") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base = init_model(cfg, 17);
  AdapterSpec spec;
  spec.method = AdapterMethod::kLora;
  AdapterState state = create_adapter(spec, cfg, base, 3);

  Tensor feat = random_features(10, cfg.feature_dim, 12);
  DecodeOutput plain = transcribe(base, cfg, feat, "<L0>", nullptr);
  DecodeOutput adapted = transcribe(base, cfg, feat, "<L0>", &state);
  CHECK(plain.per_step_logits_hash == adapted.per_step_logits_hash);
  CHECK(plain.text == adapted.text);
}

TEST_CASE("adapter creation is deterministic per seed") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base = init_model(cfg, 17);
  for (AdapterMethod m : {AdapterMethod::kLora, AdapterMethod::kSoftPrompt,
                          AdapterMethod::kSoftLangCode}) {
    AdapterSpec spec;
    spec.method = m;
    spec.slct_init = {SlctInit::Kind::kMean, ""};
    AdapterState a = create_adapter(spec, cfg, base, 99);
    AdapterState b = create_adapter(spec, cfg, base, 99);
    CHECK(a.content_hash() == b.content_hash());
  }
}

TEST_CASE("SLCT surrogate init copies the surrogate embedding row exactly") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base = init_model(cfg, 17);
  const Vocabulary vocab(cfg.vocab);
  AdapterSpec spec;
  spec.method = AdapterMethod::kSoftLangCode;
  spec.slct_code = "<L7>";
  spec.slct_init = {SlctInit::Kind::kSurrogate, "<L1>"};
  AdapterState state = create_adapter(spec, cfg, base, 0);
  const Tensor& embed = base.at("dec.embed");
  const std::int32_t src = vocab.id("<L1>");
  for (std::int32_t c = 0; c < cfg.d_model; ++c) {
    CHECK(state.code_row.at(0, c) == embed.at(src, c));
  }
}

TEST_CASE("effective_weight: zero B returns base exactly, unit pair bumps one entry") {
  Rng rng(2);
  Tensor base({4, 6});
  for (double& v : base.data()) v = rng.gaussian();

  LoraPair zero{Tensor({1, 6}), Tensor({4, 1})};
  for (double& v : zero.a.data()) v = rng.gaussian();
  CHECK(effective_weight(base, zero).bit_equal(base));

  LoraPair unit{Tensor({1, 6}), Tensor({4, 1})};
  unit.a.at(0, 0) = 1.0;  // first row basis
  unit.b.at(0, 0) = 1.0;  // first column basis
  Tensor eff = effective_weight(base, unit);
  for (std::int64_t r = 0; r < 4; ++r) {
    for (std::int64_t c = 0; c < 6; ++c) {
      const double expected = base.at(r, c) + ((r == 0 && c == 0) ? 1.0 : 0.0);
      CHECK(eff.at(r, c) == expected);
    }
  }

  LoraPair bad{Tensor({2, 5}), Tensor({4, 2})};
  CHECK_THROWS_AS(effective_weight(base, bad), InputError);
}

TEST_CASE("rank-2 update has matrix rank at most 2 by the elimination oracle") {
  Rng rng(8);
  Tensor base({32, 32});
  for (double& v : base.data()) v = rng.gaussian();
  LoraPair pair{Tensor({2, 32}), Tensor({32, 2})};
  for (double& v : pair.a.data()) v = rng.gaussian();
  for (double& v : pair.b.data()) v = rng.gaussian();
  Tensor eff = effective_weight(base, pair);
  Tensor delta({32, 32});
  for (std::int64_t i = 0; i < delta.numel(); ++i) delta.at(i) = eff.at(i) - base.at(i);
  CHECK(matrix_rank_oracle(delta) <= 2);
  CHECK(matrix_rank_oracle(delta) == 2);  // random factors are full rank
}

TEST_CASE("lora rank must stay below the smallest target dimension") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base = init_model(cfg, 17);
  AdapterSpec spec;
  spec.method = AdapterMethod::kLora;
  spec.lora_rank = cfg.d_model;  // == min(d, k)
  CHECK_THROWS_AS(create_adapter(spec, cfg, base, 0), InputError);
  spec.lora_rank = 0;
  CHECK_THROWS_AS(create_adapter(spec, cfg, base, 0), InputError);
}

TEST_CASE("merge_lora equals the runtime adapter within 1e-10 per logit") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base = init_model(cfg, 23);
  AdapterSpec spec;
  spec.method = AdapterMethod::kLora;
  AdapterState state = create_adapter(spec, cfg, base, 4);
  Rng rng(91);
  for (auto& [name, pair] : state.lora) {
    for (double& v : pair.b.data()) v = 0.05 * rng.gaussian();
  }

  ParamStore merged = merge_lora(base, state);
  CHECK(merged.lora_merged());

  for (std::uint64_t s = 0; s < 3; ++s) {
    Tensor feat = random_features(8, cfg.feature_dim, 500 + s);
    DecodeOutput runtime = transcribe(base, cfg, feat, "<L0>", &state);
    DecodeOutput folded = transcribe(merged, cfg, feat, "<L0>", nullptr);
    REQUIRE(runtime.step_logits.size() == folded.step_logits.size());
    for (std::size_t i = 0; i < runtime.step_logits.size(); ++i) {
      for (std::int64_t c = 0; c < runtime.step_logits[i].numel(); ++c) {
        CHECK(std::abs(runtime.step_logits[i].at(c) - folded.step_logits[i].at(c)) < 1e-10);
      }
    }
  }
}

TEST_CASE("merging a zero-B state reproduces the base tensors bit-for-bit") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base = init_model(cfg, 23);
  AdapterSpec spec;
  spec.method = AdapterMethod::kLora;
  AdapterState state = create_adapter(spec, cfg, base, 4);
  ParamStore merged = merge_lora(base, state);
  CHECK(tensors_bit_equal(base, merged));
}

TEST_CASE("double merge and method mismatch are rejected") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base = init_model(cfg, 23);
  AdapterSpec spec;
  spec.method = AdapterMethod::kLora;
  AdapterState state = create_adapter(spec, cfg, base, 4);
  ParamStore merged = merge_lora(base, state);
  CHECK_THROWS_AS(merge_lora(merged, state), ConfigConflictError);

  AdapterState spt;
  spt.method = AdapterMethod::kSoftPrompt;
  CHECK_THROWS_AS(merge_lora(base, spt), ConfigConflictError);
}

TEST_CASE("trainable counts match closed-form shape arithmetic") {
  ModelConfig cfg = ModelConfig::make_default();
  AdapterSpec slct;
  slct.method = AdapterMethod::kSoftLangCode;
  AdapterSpec spt;
  spt.method = AdapterMethod::kSoftPrompt;
  AdapterSpec lora;
  lora.method = AdapterMethod::kLora;
  AdapterSpec full;
  full.method = AdapterMethod::kFullFinetune;

  CHECK(trainable_fraction(slct, cfg).count == 32);
  CHECK(trainable_fraction(spt, cfg).count == 20 * 32);
  // 4 roles x (2 enc + 2x2 dec attention blocks) x rank 8 x (32 + 32)
  CHECK(trainable_fraction(lora, cfg).count == 24 * 8 * 64);
  CHECK(trainable_fraction(full, cfg).count == parameter_count(cfg));
  CHECK(trainable_fraction(full, cfg).fraction == 1.0);

  const double f_slct = trainable_fraction(slct, cfg).fraction;
  const double f_spt = trainable_fraction(spt, cfg).fraction;
  const double f_lora = trainable_fraction(lora, cfg).fraction;
  CHECK(f_slct < f_spt);
  CHECK(f_spt < f_lora);
  CHECK(f_lora < 1.0);
}

TEST_CASE("SLCT changes decoding only for sequences carrying its code") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base = init_model(cfg, 29);
  AdapterSpec spec;
  spec.method = AdapterMethod::kSoftLangCode;
  spec.slct_code = "<L7>";
  spec.slct_init = {SlctInit::Kind::kMean, ""};
  AdapterState state = create_adapter(spec, cfg, base, 1);
  for (double& v : state.code_row.data()) v += 0.5;  // clearly different row

  Tensor feat = random_features(10, cfg.feature_dim, 77);
  for (const char* code : {"<L0>", "<L1>", "<L2>"}) {
    DecodeOutput with = transcribe(base, cfg, feat, code, &state);
    DecodeOutput without = transcribe(base, cfg, feat, code, nullptr);
    CHECK(with.per_step_logits_hash == without.per_step_logits_hash);
  }
  DecodeOutput own_with = transcribe(base, cfg, feat, "<L7>", &state);
  DecodeOutput own_without = transcribe(base, cfg, feat, "<L7>", nullptr);
  CHECK(own_with.per_step_logits_hash != own_without.per_step_logits_hash);
}

TEST_CASE("SPT grows the decoder by exactly m rows and scores the same positions") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base = init_model(cfg, 29);
  const Vocabulary vocab(cfg.vocab);
  AdapterSpec spec;
  spec.method = AdapterMethod::kSoftPrompt;
  spec.prompt_count = 6;
  AdapterState state = create_adapter(spec, cfg, base, 2);

  BatchItem item;
  item.features = random_features(8, cfg.feature_dim, 3);
  item.target = vocab.encode_text("abc");
  item.lang_code = vocab.id("<L0>");

  Tensor enc = encode_features(base, cfg, item.features, &state);
  std::vector<std::int32_t> tokens = {vocab.sot(), item.lang_code, item.target[0],
                                      item.target[1], item.target[2]};
  Tensor with = decoder_logits_full(base, cfg, enc, tokens, &state);
  Tensor without = decoder_logits_full(base, cfg, enc, tokens, nullptr);
  CHECK(with.rows() == without.rows() + 6);

  ad::Tape t1, t2;
  LossGraph g_with = nll_loss_graph(t1, base, cfg, {item}, &state);
  LossGraph g_without = nll_loss_graph(t2, base, cfg, {item}, nullptr);
  CHECK(g_with.token_count == g_without.token_count);  // same scored positions
}

TEST_CASE("adapter files round-trip bit-exactly") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base = init_model(cfg, 31);
  for (AdapterMethod m : {AdapterMethod::kLora, AdapterMethod::kSoftPrompt,
                          AdapterMethod::kSoftLangCode}) {
    AdapterSpec spec;
    spec.method = m;
    spec.slct_init = {SlctInit::Kind::kMean, ""};
    AdapterState state = create_adapter(spec, cfg, base, 11);
    std::string bytes = io::encode_adapter(cfg, state);
    CHECK(bytes.substr(0, 5) == "CLABA");
    auto [cfg2, state2] = io::decode_adapter(bytes);
    CHECK(state2.content_hash() == state.content_hash());
    CHECK(io::encode_adapter(cfg2, state2) == bytes);
  }
}
