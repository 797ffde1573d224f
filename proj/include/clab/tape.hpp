// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "clab/tensor.hpp"

namespace clab {
class ParamStore;
}

namespace clab::ad {

using ValueId = std::int32_t;

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatmul,
  kMatmulNT,
  kRowSoftmax,
  kLayerNorm,
  kTanh,
  kEmbedLookup,
  kConcatRows,
  kConcatCols,
  kSliceCols,
  kAttnScores,
  kCrossEntropy,
  kSumAll,
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kMaskFill = -1e30;

// Gradients of named leaves, ordered by name for deterministic iteration.
using GradientMap = std::map<std::string, Tensor>;

// Reverse-mode tape over rank<=2 tensors. Nodes are appended in topological
// order; backward walks them once in reverse. A tape is single-writer while
// being built; distinct tapes are independent.
class Tape {
 public:
  ValueId leaf(const Tensor& t, std::string name);  // tracked, appears in GradientMap
  ValueId constant(const Tensor& t);                // untracked input

  const Tensor& value(ValueId id) const { return nodes_[check(id)].value; }
  std::size_t size() const { return nodes_.size(); }

  ValueId add(ValueId a, ValueId b);   // same shape, or b a vector broadcast over rows
  ValueId sub(ValueId a, ValueId b);   // same shape
  ValueId mul(ValueId a, ValueId b);   // same shape, or b a vector broadcast over rows
  ValueId scale(ValueId a, double s);
  ValueId matmul(ValueId a, ValueId b);     // [n,k] x [k,m]
  ValueId matmul_nt(ValueId a, ValueId b);  // [n,k] x [m,k]^T
  ValueId row_softmax(ValueId a);
  ValueId layer_norm(ValueId a);  // per-row standardization, no affine
  ValueId tanh(ValueId a);
  ValueId embedding_lookup(ValueId table, const std::vector<std::int32_t>& ids);
  ValueId concat_rows(ValueId a, ValueId b);
  ValueId concat_cols(ValueId a, ValueId b);
  ValueId slice_cols(ValueId a, std::int64_t c0, std::int64_t c1);
  // q k^T / sqrt(cols); with `causal`, entries j > i get kMaskFill and carry
  // no gradient.
  ValueId attn_scores(ValueId q, ValueId k, bool causal);
  // Mean cross-entropy with fused log-softmax over rows where mask != 0.
  ValueId cross_entropy(ValueId logits, const std::vector<std::int32_t>& targets,
                        const std::vector<std::uint8_t>& mask);
  ValueId sum_all(ValueId a);

  // Scalar loss only. Every named leaf gets an entry; leaves with no path to
  // the loss get exact zeros.
  GradientMap backward(ValueId loss) const;

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::array<ValueId, 2> in{-1, -1};
    Tensor value;
    std::vector<std::int32_t> ids;    // embedding ids / CE targets
    std::vector<std::uint8_t> mask;   // CE position mask
    double scalar = 0.0;              // scale factor
    std::int64_t c0 = 0, c1 = 0;      // slice bounds
    bool flag = false;                // causal
    std::string name;                 // leaf name, empty for constants
  };

  ValueId push(Node n);
  std::size_t check(ValueId id) const;
  const Tensor& val(ValueId id) const { return nodes_[check(id)].value; }

  std::vector<Node> nodes_;
};

// Builds the loss for the given parameters on the supplied tape and returns
// the (scalar) loss node. Used by the gradient checker.
using TapedLoss = std::function<ValueId(const ParamStore&, Tape&)>;

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  std::string worst_coordinate;
  std::int64_t coords_checked = 0;
  std::vector<std::string> failures;  // non-finite losses etc.
};

// Central finite differences against the tape gradient on a deterministic
// sample of at most 200 coordinates per tensor. Relative error uses
// |a - fd| / max(|a|, |fd|, 1).
GradCheckReport check_gradients(const TapedLoss& f, const ParamStore& params,
                                double step, double tolerance);

}  // namespace clab::ad
