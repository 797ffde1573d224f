// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "clab/common.hpp"
#include "clab/param_store.hpp"

namespace clab::ad {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EMat>;
using MapM = Eigen::Map<EMat>;

MapC emap(const Tensor& t) { return MapC(t.data().data(), t.rows(), t.cols()); }
MapM emap(Tensor& t) { return MapM(t.data().data(), t.rows(), t.cols()); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw InputError(std::string(op) + ": incompatible shapes " + a.shape_str() +
                   " vs " + b.shape_str());
}

bool row_broadcastable(const Tensor& a, const Tensor& b) {
  return b.rank() == 1 && a.rank() == 2 && b.cols() == a.cols();
}

}  // namespace

std::size_t Tape::check(ValueId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw InputError("tape: invalid node id " + std::to_string(id));
  }
  return static_cast<std::size_t>(id);
}

ValueId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<ValueId>(nodes_.size() - 1);
}

ValueId Tape::leaf(const Tensor& t, std::string name) {
  Node n;
  n.op = Op::kLeaf;
  n.value = t;
  n.name = std::move(name);
  return push(std::move(n));
}

ValueId Tape::constant(const Tensor& t) { return leaf(t, {}); }

ValueId Tape::add(ValueId a, ValueId b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  Node n;
  n.op = Op::kAdd;
  n.in = {a, b};
  if (x.same_shape(y)) {
    n.value = x;
    auto* out = n.value.data().data();
    auto yv = y.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] += yv[i];
  } else if (row_broadcastable(x, y)) {
    n.value = x;
    for (std::int64_t r = 0; r < x.rows(); ++r)
      for (std::int64_t c = 0; c < x.cols(); ++c) n.value.at(r, c) += y.at(c);
  } else {
    shape_error("add", x, y);
  }
  return push(std::move(n));
}

ValueId Tape::sub(ValueId a, ValueId b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (!x.same_shape(y)) shape_error("sub", x, y);
  Node n;
  n.op = Op::kSub;
  n.in = {a, b};
  n.value = x;
  auto* out = n.value.data().data();
  auto yv = y.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] -= yv[i];
  return push(std::move(n));
}

ValueId Tape::mul(ValueId a, ValueId b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  Node n;
  n.op = Op::kMul;
  n.in = {a, b};
  if (x.same_shape(y)) {
    n.value = x;
    auto* out = n.value.data().data();
    auto yv = y.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] *= yv[i];
  } else if (row_broadcastable(x, y)) {
    n.value = x;
    for (std::int64_t r = 0; r < x.rows(); ++r)
      for (std::int64_t c = 0; c < x.cols(); ++c) n.value.at(r, c) *= y.at(c);
  } else {
    shape_error("mul", x, y);
  }
  return push(std::move(n));
}

ValueId Tape::scale(ValueId a, double s) {
  Node n;
  n.op = Op::kScale;
  n.in = {a, -1};
  n.scalar = s;
  n.value = val(a);
  for (double& v : n.value.data()) v *= s;
  return push(std::move(n));
}

ValueId Tape::matmul(ValueId a, ValueId b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.cols() != y.rows()) shape_error("matmul", x, y);
  Node n;
  n.op = Op::kMatmul;
  n.in = {a, b};
  n.value = Tensor({x.rows(), y.cols()});
  emap(n.value).noalias() = emap(x) * emap(y);
  return push(std::move(n));
}

ValueId Tape::matmul_nt(ValueId a, ValueId b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.cols() != y.cols()) shape_error("matmul_nt", x, y);
  Node n;
  n.op = Op::kMatmulNT;
  n.in = {a, b};
  n.value = Tensor({x.rows(), y.rows()});
  emap(n.value).noalias() = emap(x) * emap(y).transpose();
  return push(std::move(n));
}

ValueId Tape::row_softmax(ValueId a) {
  const Tensor& x = val(a);
  Node n;
  n.op = Op::kRowSoftmax;
  n.in = {a, -1};
  n.value = x;
  for (std::int64_t r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < x.cols(); ++c) mx = std::max(mx, x.at(r, c));
    double sum = 0.0;
    for (std::int64_t c = 0; c < x.cols(); ++c) {
      double e = std::exp(x.at(r, c) - mx);
      n.value.at(r, c) = e;
      sum += e;
    }
    double inv = 1.0 / sum;
    for (std::int64_t c = 0; c < x.cols(); ++c) n.value.at(r, c) *= inv;
  }
  return push(std::move(n));
}

ValueId Tape::layer_norm(ValueId a) {
  const Tensor& x = val(a);
  Node n;
  n.op = Op::kLayerNorm;
  n.in = {a, -1};
  n.value = x;
  const std::int64_t d = x.cols();
  for (std::int64_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (std::int64_t c = 0; c < d; ++c) mean += x.at(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t c = 0; c < d; ++c) {
      double dv = x.at(r, c) - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::int64_t c = 0; c < d; ++c) n.value.at(r, c) = (x.at(r, c) - mean) * inv;
  }
  return push(std::move(n));
}

ValueId Tape::tanh(ValueId a) {
  Node n;
  n.op = Op::kTanh;
  n.in = {a, -1};
  n.value = val(a);
  for (double& v : n.value.data()) v = std::tanh(v);
  return push(std::move(n));
}

ValueId Tape::embedding_lookup(ValueId table, const std::vector<std::int32_t>& ids) {
  const Tensor& t = val(table);
  if (t.rank() != 2) throw InputError("embedding_lookup: table must be rank 2, got " + t.shape_str());
  if (ids.empty()) throw InputError("embedding_lookup: empty id list");
  Node n;
  n.op = Op::kEmbedLookup;
  n.in = {table, -1};
  n.ids = ids;
  n.value = Tensor({static_cast<std::int64_t>(ids.size()), t.cols()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::int32_t id = ids[i];
    if (id < 0 || id >= t.rows()) {
      throw InputError("embedding_lookup: id " + std::to_string(id) +
                       " out of range for table " + t.shape_str());
    }
    for (std::int64_t c = 0; c < t.cols(); ++c)
      n.value.at(static_cast<std::int64_t>(i), c) = t.at(id, c);
  }
  return push(std::move(n));
}

ValueId Tape::concat_rows(ValueId a, ValueId b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols()) shape_error("concat_rows", x, y);
  Node n;
  n.op = Op::kConcatRows;
  n.in = {a, b};
  n.value = Tensor({x.rows() + y.rows(), x.cols()});
  std::copy(x.data().begin(), x.data().end(), n.value.data().begin());
  std::copy(y.data().begin(), y.data().end(),
            n.value.data().begin() + x.numel());
  return push(std::move(n));
}

ValueId Tape::concat_cols(ValueId a, ValueId b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows()) shape_error("concat_cols", x, y);
  Node n;
  n.op = Op::kConcatCols;
  n.in = {a, b};
  n.value = Tensor({x.rows(), x.cols() + y.cols()});
  for (std::int64_t r = 0; r < x.rows(); ++r) {
    for (std::int64_t c = 0; c < x.cols(); ++c) n.value.at(r, c) = x.at(r, c);
    for (std::int64_t c = 0; c < y.cols(); ++c) n.value.at(r, x.cols() + c) = y.at(r, c);
  }
  return push(std::move(n));
}

ValueId Tape::slice_cols(ValueId a, std::int64_t c0, std::int64_t c1) {
  const Tensor& x = val(a);
  if (x.rank() != 2 || c0 < 0 || c1 > x.cols() || c0 >= c1) {
    throw InputError("slice_cols: bounds [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") invalid for " + x.shape_str());
  }
  Node n;
  n.op = Op::kSliceCols;
  n.in = {a, -1};
  n.c0 = c0;
  n.c1 = c1;
  n.value = Tensor({x.rows(), c1 - c0});
  for (std::int64_t r = 0; r < x.rows(); ++r)
    for (std::int64_t c = c0; c < c1; ++c) n.value.at(r, c - c0) = x.at(r, c);
  return push(std::move(n));
}

ValueId Tape::attn_scores(ValueId q, ValueId k, bool causal) {
  const Tensor& x = val(q);
  const Tensor& y = val(k);
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols()) shape_error("attn_scores", x, y);
  if (causal && x.rows() != y.rows()) shape_error("attn_scores(causal)", x, y);
  Node n;
  n.op = Op::kAttnScores;
  n.in = {q, k};
  n.flag = causal;
  n.scalar = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  n.value = Tensor({x.rows(), y.rows()});
  emap(n.value).noalias() = emap(x) * emap(y).transpose() * n.scalar;
  if (causal) {
    for (std::int64_t r = 0; r < n.value.rows(); ++r)
      for (std::int64_t c = r + 1; c < n.value.cols(); ++c) n.value.at(r, c) = kMaskFill;
  }
  return push(std::move(n));
}

ValueId Tape::cross_entropy(ValueId logits, const std::vector<std::int32_t>& targets,
                            const std::vector<std::uint8_t>& mask) {
  const Tensor& x = val(logits);
  if (x.rank() != 2) throw InputError("cross_entropy: logits must be rank 2, got " + x.shape_str());
  if (targets.size() != static_cast<std::size_t>(x.rows()) || mask.size() != targets.size()) {
    throw InputError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets / " + std::to_string(mask.size()) +
                     " mask entries for logits " + x.shape_str());
  }
  std::int64_t count = 0;
  double total = 0.0;
  for (std::int64_t r = 0; r < x.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    std::int32_t t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= x.cols()) {
      throw InputError("cross_entropy: target " + std::to_string(t) +
                       " out of range for logits " + x.shape_str());
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < x.cols(); ++c) mx = std::max(mx, x.at(r, c));
    double sum = 0.0;
    for (std::int64_t c = 0; c < x.cols(); ++c) sum += std::exp(x.at(r, c) - mx);
    total += std::log(sum) + mx - x.at(r, t);
    ++count;
  }
  if (count == 0) throw InputError("cross_entropy: mask selects no positions");
  Node n;
  n.op = Op::kCrossEntropy;
  n.in = {logits, -1};
  n.ids = targets;
  n.mask = mask;
  n.value = Tensor::scalar(total / static_cast<double>(count));
  return push(std::move(n));
}

ValueId Tape::sum_all(ValueId a) {
  Node n;
  n.op = Op::kSumAll;
  n.in = {a, -1};
  double s = 0.0;
  for (double v : val(a).data()) s += v;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

GradientMap Tape::backward(ValueId loss) const {
  const std::size_t li = check(loss);
  if (nodes_[li].value.numel() != 1) {
    throw InputError("backward: loss node must be scalar, got " +
                     nodes_[li].value.shape_str());
  }
  // grads[i] empty until the node receives its first contribution.
  std::vector<Tensor> grads(nodes_.size());
  auto acc = [&](ValueId id, std::int64_t r, std::int64_t c, double v) {
    Tensor& g = grads[static_cast<std::size_t>(id)];
    if (g.numel() == 0) g = Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape());
    if (g.rank() == 2) g.at(r, c) += v;
    else g.at(c) += v;
  };
  auto ensure = [&](ValueId id) -> Tensor& {
    Tensor& g = grads[static_cast<std::size_t>(id)];
    if (g.numel() == 0) g = Tensor::zeros(nodes_[static_cast<std::size_t>(id)].value.shape());
    return g;
  };

  grads[li] = Tensor::scalar(1.0);

  for (std::size_t idx = li + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    const Tensor& g = grads[idx];
    if (g.numel() == 0) continue;  // not on a path to the loss
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        const Tensor& y = val(n.in[1]);
        emap(ensure(n.in[0])) += emap(g);
        if (n.value.same_shape(y)) {
          emap(ensure(n.in[1])) += emap(g);
        } else {  // column sums into the broadcast vector
          Tensor& gy = ensure(n.in[1]);
          for (std::int64_t r = 0; r < g.rows(); ++r)
            for (std::int64_t c = 0; c < g.cols(); ++c) gy.at(c) += g.at(r, c);
        }
        break;
      }
      case Op::kSub:
        emap(ensure(n.in[0])) += emap(g);
        emap(ensure(n.in[1])) -= emap(g);
        break;
      case Op::kMul: {
        const Tensor& x = val(n.in[0]);
        const Tensor& y = val(n.in[1]);
        if (x.same_shape(y)) {
          Tensor& gx = ensure(n.in[0]);
          Tensor& gy = ensure(n.in[1]);
          auto gd = g.data();
          auto xd = x.data();
          auto yd = y.data();
          for (std::int64_t i = 0; i < x.numel(); ++i) {
            gx.at(i) += gd[i] * yd[i];
            gy.at(i) += gd[i] * xd[i];
          }
        } else {
          Tensor& gx = ensure(n.in[0]);
          Tensor& gy = ensure(n.in[1]);
          for (std::int64_t r = 0; r < x.rows(); ++r)
            for (std::int64_t c = 0; c < x.cols(); ++c) {
              gx.at(r, c) += g.at(r, c) * y.at(c);
              gy.at(c) += g.at(r, c) * x.at(r, c);
            }
        }
        break;
      }
      case Op::kScale: {
        Tensor& gx = ensure(n.in[0]);
        auto gd = g.data();
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx.at(i) += n.scalar * gd[i];
        break;
      }
      case Op::kMatmul: {
        const Tensor& x = val(n.in[0]);
        const Tensor& y = val(n.in[1]);
        emap(ensure(n.in[0])).noalias() += emap(g) * emap(y).transpose();
        emap(ensure(n.in[1])).noalias() += emap(x).transpose() * emap(g);
        break;
      }
      case Op::kMatmulNT: {
        const Tensor& x = val(n.in[0]);
        const Tensor& y = val(n.in[1]);
        emap(ensure(n.in[0])).noalias() += emap(g) * emap(y);
        emap(ensure(n.in[1])).noalias() += emap(g).transpose() * emap(x);
        break;
      }
      case Op::kRowSoftmax: {
        Tensor& gx = ensure(n.in[0]);
        const Tensor& y = n.value;
        for (std::int64_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::int64_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
          for (std::int64_t c = 0; c < y.cols(); ++c)
            gx.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
        }
        break;
      }
      case Op::kLayerNorm: {
        // dx = inv * (g - mean(g) - y * mean(g*y)), per row.
        Tensor& gx = ensure(n.in[0]);
        const Tensor& x = val(n.in[0]);
        const Tensor& y = n.value;
        const std::int64_t d = x.cols();
        for (std::int64_t r = 0; r < x.rows(); ++r) {
          double mean = 0.0;
          for (std::int64_t c = 0; c < d; ++c) mean += x.at(r, c);
          mean /= static_cast<double>(d);
          double var = 0.0;
          for (std::int64_t c = 0; c < d; ++c) {
            double dv = x.at(r, c) - mean;
            var += dv * dv;
          }
          var /= static_cast<double>(d);
          double inv = 1.0 / std::sqrt(var + kLayerNormEps);
          double gmean = 0.0, gymean = 0.0;
          for (std::int64_t c = 0; c < d; ++c) {
            gmean += g.at(r, c);
            gymean += g.at(r, c) * y.at(r, c);
          }
          gmean /= static_cast<double>(d);
          gymean /= static_cast<double>(d);
          for (std::int64_t c = 0; c < d; ++c)
            gx.at(r, c) += inv * (g.at(r, c) - gmean - y.at(r, c) * gymean);
        }
        break;
      }
      case Op::kTanh: {
        Tensor& gx = ensure(n.in[0]);
        const Tensor& y = n.value;
        auto gd = g.data();
        auto yd = y.data();
        for (std::int64_t i = 0; i < y.numel(); ++i)
          gx.at(i) += gd[i] * (1.0 - yd[i] * yd[i]);
        break;
      }
      case Op::kEmbedLookup: {
        Tensor& gt = ensure(n.in[0]);
        for (std::size_t i = 0; i < n.ids.size(); ++i)
          for (std::int64_t c = 0; c < gt.cols(); ++c)
            gt.at(n.ids[i], c) += g.at(static_cast<std::int64_t>(i), c);
        break;
      }
      case Op::kConcatRows: {
        const Tensor& x = val(n.in[0]);
        Tensor& gx = ensure(n.in[0]);
        Tensor& gy = ensure(n.in[1]);
        auto gd = g.data();
        for (std::int64_t i = 0; i < x.numel(); ++i) gx.at(i) += gd[i];
        for (std::int64_t i = 0; i < gy.numel(); ++i) gy.at(i) += gd[x.numel() + i];
        break;
      }
      case Op::kConcatCols: {
        const Tensor& x = val(n.in[0]);
        Tensor& gx = ensure(n.in[0]);
        Tensor& gy = ensure(n.in[1]);
        for (std::int64_t r = 0; r < g.rows(); ++r) {
          for (std::int64_t c = 0; c < x.cols(); ++c) gx.at(r, c) += g.at(r, c);
          for (std::int64_t c = 0; c < gy.cols(); ++c) gy.at(r, c) += g.at(r, x.cols() + c);
        }
        break;
      }
      case Op::kSliceCols: {
        Tensor& gx = ensure(n.in[0]);
        for (std::int64_t r = 0; r < g.rows(); ++r)
          for (std::int64_t c = 0; c < g.cols(); ++c) gx.at(r, n.c0 + c) += g.at(r, c);
        break;
      }
      case Op::kAttnScores: {
        const Tensor& q = val(n.in[0]);
        const Tensor& k = val(n.in[1]);
        Tensor& gq = ensure(n.in[0]);
        Tensor& gk = ensure(n.in[1]);
        // masked entries are constants; zero their incoming gradient
        Tensor gm = g;
        if (n.flag) {
          for (std::int64_t r = 0; r < gm.rows(); ++r)
            for (std::int64_t c = r + 1; c < gm.cols(); ++c) gm.at(r, c) = 0.0;
        }
        emap(gq).noalias() += emap(gm) * emap(k) * n.scalar;
        emap(gk).noalias() += emap(gm).transpose() * emap(q) * n.scalar;
        break;
      }
      case Op::kCrossEntropy: {
        const Tensor& x = val(n.in[0]);
        Tensor& gx = ensure(n.in[0]);
        std::int64_t count = 0;
        for (std::uint8_t m : n.mask) count += m ? 1 : 0;
        const double gs = g.at(0) / static_cast<double>(count);
        for (std::int64_t r = 0; r < x.rows(); ++r) {
          if (!n.mask[static_cast<std::size_t>(r)]) continue;
          double mx = -std::numeric_limits<double>::infinity();
          for (std::int64_t c = 0; c < x.cols(); ++c) mx = std::max(mx, x.at(r, c));
          double sum = 0.0;
          for (std::int64_t c = 0; c < x.cols(); ++c) sum += std::exp(x.at(r, c) - mx);
          double inv = 1.0 / sum;
          for (std::int64_t c = 0; c < x.cols(); ++c) {
            double p = std::exp(x.at(r, c) - mx) * inv;
            gx.at(r, c) += gs * (p - (n.ids[static_cast<std::size_t>(r)] == c ? 1.0 : 0.0));
          }
        }
        break;
      }
      case Op::kSumAll: {
        Tensor& gx = ensure(n.in[0]);
        const double gs = g.at(0);
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx.at(i) += gs;
        break;
      }
    }
  }

  GradientMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op != Op::kLeaf || n.name.empty()) continue;
    if (grads[i].numel() != 0) out[n.name] = std::move(grads[i]);
    else out[n.name] = Tensor::zeros(n.value.shape());
  }
  return out;
}

GradCheckReport check_gradients(const TapedLoss& f, const ParamStore& params,
                                double step, double tolerance) {
  if (step <= 0.0) throw InputError("check_gradients: step must be positive");
  GradCheckReport rep;

  GradientMap analytic;
  {
    Tape tape;
    ValueId loss = f(params, tape);
    analytic = tape.backward(loss);
  }

  auto eval = [&](const ParamStore& p) {
    Tape tape;
    ValueId loss = f(p, tape);
    return tape.value(loss).at(0);
  };

  constexpr std::int64_t kMaxCoords = 200;
  double worst = 0.0;
  ParamStore probe = params;
  for (const std::string& name : params.names()) {
    const Tensor& t = params.at(name);
    auto it = analytic.find(name);
    if (it == analytic.end()) continue;  // parameter not used by f
    const std::int64_t n = t.numel();
    const std::int64_t m = std::min(n, kMaxCoords);
    for (std::int64_t s = 0; s < m; ++s) {
      const std::int64_t i = s * n / m;  // deterministic strided sample
      double orig = probe.at(name).at(i);
      probe.mutable_at(name).at(i) = orig + step;
      double up = eval(probe);
      probe.mutable_at(name).at(i) = orig - step;
      double down = eval(probe);
      probe.mutable_at(name).at(i) = orig;
      ++rep.coords_checked;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        rep.failures.push_back("non-finite loss perturbing " + name + "[" +
                               std::to_string(i) + "]");
        continue;
      }
      double fd = (up - down) / (2.0 * step);
      double a = it->second.at(i);
      double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1.0});
      if (rel > worst) {
        worst = rel;
        rep.worst_coordinate = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  rep.max_rel_error = worst;
  rep.pass = rep.failures.empty() && worst < tolerance;
  return rep;
}

}  // namespace clab::ad
