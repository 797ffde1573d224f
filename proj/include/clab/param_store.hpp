// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "clab/tensor.hpp"

namespace clab {

// Ordered collection of named parameter tensors. Insertion order is the
// canonical order: checkpoints, Fisher vectors and optimizer state all align
// with it.
class ParamStore {
 public:
  void add(std::string name, Tensor t);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& mutable_at(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::int64_t total_scalars() const;

  bool lora_merged() const { return lora_merged_; }
  void set_lora_merged(bool v) { lora_merged_ = v; }

  std::uint64_t content_hash() const;
  bool bit_equal(const ParamStore& o) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
  bool lora_merged_ = false;
};

}  // namespace clab
