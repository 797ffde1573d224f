// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace clab {

inline constexpr const char* kSot = "<sot>";
inline constexpr const char* kEot = "<eot>";
inline constexpr const char* kPad = "<pad>";

struct ModelConfig {
  std::int32_t d_model = 32;
  std::int32_t n_heads = 2;
  std::int32_t enc_layers = 2;
  std::int32_t dec_layers = 2;
  std::int32_t ff_mult = 4;
  std::vector<std::string> vocab;  // ordered symbol list
  std::int32_t max_src_len = 96;
  std::int32_t max_tgt_len = 64;
  std::int32_t feature_dim = 16;

  std::int32_t ff_dim() const { return d_model * ff_mult; }
  std::int32_t vocab_size() const { return static_cast<std::int32_t>(vocab.size()); }

  // 26 letters + space + apostrophe, <sot>/<eot>/<pad>, <L0>..<L7>.
  static ModelConfig make_default();
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Symbol table derived from ModelConfig::vocab. Text symbols are single
// characters; specials are bracketed tokens.
class Vocabulary {
 public:
  explicit Vocabulary(const std::vector<std::string>& symbols);

  std::int32_t size() const { return static_cast<std::int32_t>(symbols_.size()); }
  const std::string& symbol(std::int32_t id) const { return symbols_[static_cast<std::size_t>(id)]; }
  std::int32_t id(const std::string& symbol) const;  // throws InputError
  bool contains(const std::string& symbol) const { return index_.count(symbol) != 0; }

  std::int32_t sot() const { return sot_; }
  std::int32_t eot() const { return eot_; }
  std::int32_t pad() const { return pad_; }
  const std::vector<std::int32_t>& lang_code_ids() const { return lang_codes_; }
  bool is_lang_code(std::int32_t id) const;
  bool is_text(std::int32_t id) const;  // single-character symbol

  std::vector<std::int32_t> encode_text(const std::string& text) const;
  std::string decode_text(const std::vector<std::int32_t>& ids) const;  // specials skipped

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::int32_t sot_ = -1, eot_ = -1, pad_ = -1;
  std::vector<std::int32_t> lang_codes_;
};

}  // namespace clab
