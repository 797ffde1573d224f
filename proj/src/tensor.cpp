// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "clab/common.hpp"

namespace clab {

namespace {

std::size_t checked_numel(const std::vector<std::int64_t>& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw InputError("tensor rank must be 1 or 2, got rank " +
                     std::to_string(shape.size()));
  }
  std::size_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw InputError("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_numel(shape_) != data_.size()) {
    throw InputError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
  }
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

Tensor Tensor::row_vector(std::vector<double> data) {
  auto n = static_cast<std::int64_t>(data.size());
  return Tensor({n}, std::move(data));
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::bit_equal(const Tensor& o) const {
  if (shape_ != o.shape_) return false;
  return std::memcmp(data_.data(), o.data_.data(),
                     data_.size() * sizeof(double)) == 0;
}

std::uint64_t Tensor::content_hash(std::uint64_t h) const {
  for (std::int64_t d : shape_) {
    auto u = static_cast<std::uint64_t>(d);
    h = fnv1a64(std::span<const unsigned char>(
                    reinterpret_cast<const unsigned char*>(&u), sizeof(u)),
                h);
  }
  h = fnv1a64(std::span<const unsigned char>(
                  reinterpret_cast<const unsigned char*>(data_.data()),
                  data_.size() * sizeof(double)),
              h);
  return h;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

std::string hex_u64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace clab
