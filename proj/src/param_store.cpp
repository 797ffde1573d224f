// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/param_store.hpp"

#include "clab/common.hpp"

namespace clab {

void ParamStore::add(std::string name, Tensor t) {
  if (index_.count(name)) throw InputError("duplicate parameter name: " + name);
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(t));
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InputError("unknown parameter: " + name);
  return tensors_[it->second];
}

Tensor& ParamStore::mutable_at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InputError("unknown parameter: " + name);
  return tensors_[it->second];
}

std::int64_t ParamStore::total_scalars() const {
  std::int64_t n = 0;
  for (const Tensor& t : tensors_) n += t.numel();
  return n;
}

std::uint64_t ParamStore::content_hash() const {
  std::uint64_t h = kFnvOffset;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    h = fnv1a64(names_[i], h);
    h = tensors_[i].content_hash(h);
  }
  unsigned char m = lora_merged_ ? 1 : 0;
  return fnv1a64(std::span<const unsigned char>(&m, 1), h);
}

bool ParamStore::bit_equal(const ParamStore& o) const {
  if (names_ != o.names_ || lora_merged_ != o.lora_merged_) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (!tensors_[i].bit_equal(o.tensors_[i])) return false;
  }
  return true;
}

}  // namespace clab
