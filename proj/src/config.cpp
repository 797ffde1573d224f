// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/config.hpp"

#include "clab/common.hpp"

namespace clab {

namespace {

bool looks_like_lang_code(const std::string& s) {
  if (s.size() < 4 || s.rfind("<L", 0) != 0 || s.back() != '>') return false;
  for (std::size_t i = 2; i + 1 < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  return true;
}

}  // namespace

ModelConfig ModelConfig::make_default() {
  ModelConfig cfg;
  for (char c = 'a'; c <= 'z'; ++c) cfg.vocab.emplace_back(1, c);
  cfg.vocab.emplace_back(" ");
  cfg.vocab.emplace_back("'");
  cfg.vocab.emplace_back(kSot);
  cfg.vocab.emplace_back(kEot);
  cfg.vocab.emplace_back(kPad);
  for (int i = 0; i < 8; ++i) cfg.vocab.push_back("<L" + std::to_string(i) + ">");
  return cfg;
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || enc_layers <= 0 || dec_layers <= 0 ||
      ff_mult <= 0 || max_src_len <= 0 || max_tgt_len <= 0 || feature_dim <= 0) {
    throw InputError("model config: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw InputError("model config: d_model " + std::to_string(d_model) +
                     " not divisible by n_heads " + std::to_string(n_heads));
  }
  Vocabulary v(vocab);  // validates special-token classes
}

Vocabulary::Vocabulary(const std::vector<std::string>& symbols) : symbols_(symbols) {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const std::string& s = symbols_[i];
    if (s.empty()) throw InputError("vocab: empty symbol at index " + std::to_string(i));
    if (!index_.emplace(s, static_cast<std::int32_t>(i)).second) {
      throw InputError("vocab: duplicate symbol '" + s + "'");
    }
    if (s == kSot) sot_ = static_cast<std::int32_t>(i);
    else if (s == kEot) eot_ = static_cast<std::int32_t>(i);
    else if (s == kPad) pad_ = static_cast<std::int32_t>(i);
    else if (looks_like_lang_code(s)) lang_codes_.push_back(static_cast<std::int32_t>(i));
  }
  if (sot_ < 0 || eot_ < 0 || pad_ < 0 || lang_codes_.empty()) {
    throw InputError("vocab: must contain <sot>, <eot>, <pad> and at least one language code");
  }
}

std::int32_t Vocabulary::id(const std::string& symbol) const {
  auto it = index_.find(symbol);
  if (it == index_.end()) throw InputError("vocab: unknown symbol '" + symbol + "'");
  return it->second;
}

bool Vocabulary::is_lang_code(std::int32_t id) const {
  return id >= 0 && id < size() && looks_like_lang_code(symbols_[static_cast<std::size_t>(id)]);
}

bool Vocabulary::is_text(std::int32_t id) const {
  return id >= 0 && id < size() && symbols_[static_cast<std::size_t>(id)].size() == 1;
}

std::vector<std::int32_t> Vocabulary::encode_text(const std::string& text) const {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (char c : text) {
    auto it = index_.find(std::string(1, c));
    if (it == index_.end()) {
      throw InputError("vocab: character '" + std::string(1, c) + "' not in vocabulary");
    }
    ids.push_back(it->second);
  }
  return ids;
}

std::string Vocabulary::decode_text(const std::vector<std::int32_t>& ids) const {
  std::string out;
  for (std::int32_t id : ids) {
    if (is_text(id)) out += symbols_[static_cast<std::size_t>(id)];
  }
  return out;
}

}  // namespace clab
