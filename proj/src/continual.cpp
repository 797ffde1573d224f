// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/continual.hpp"

#include <algorithm>
#include <cmath>

#include "clab/common.hpp"

namespace clab {

double FisherDiagonal::trace() const {
  double t = 0.0;
  for (const std::string& name : values.names()) {
    for (double v : values.at(name).data()) t += v;
  }
  return t;
}

void check_aligned(const ParamStore& a, const ParamStore& b, const std::string& what) {
  if (a.names() != b.names()) {
    throw InputError(what + ": parameter name sets differ");
  }
  for (const std::string& name : a.names()) {
    if (!a.at(name).same_shape(b.at(name))) {
      throw InputError(what + ": shape mismatch for " + name + ": " +
                       a.at(name).shape_str() + " vs " + b.at(name).shape_str());
    }
  }
}

FisherDiagonal estimate_fisher(const ParamStore& params, const ModelConfig& cfg,
                               const std::vector<BatchItem>& corpus, std::int64_t cap,
                               std::string source_tag) {
  if (corpus.empty()) throw InputError("estimate_fisher: empty corpus");
  if (cap < 1) throw InputError("estimate_fisher: cap must be >= 1");

  FisherDiagonal fisher;
  fisher.source_tag = std::move(source_tag);
  for (const std::string& name : params.names()) {
    fisher.values.add(name, Tensor::zeros(params.at(name).shape()));
  }

  const std::int64_t n = std::min<std::int64_t>(cap, static_cast<std::int64_t>(corpus.size()));
  for (std::int64_t u = 0; u < n; ++u) {
    ad::Tape tape;
    LossGraph graph = nll_loss_graph(tape, params, cfg,
                                     {corpus[static_cast<std::size_t>(u)]}, nullptr);
    ad::GradientMap grads = tape.backward(graph.loss);
    for (const std::string& name : params.names()) {
      const Tensor& g = grads.at(name);
      Tensor& acc = fisher.values.mutable_at(name);
      auto gd = g.data();
      for (std::int64_t i = 0; i < acc.numel(); ++i) acc.at(i) += gd[i] * gd[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (const std::string& name : fisher.values.names()) {
    for (double& v : fisher.values.mutable_at(name).data()) v *= inv;
  }
  fisher.sample_count = n;
  return fisher;
}

ad::ValueId ewc_loss(ad::Tape& tape, ad::ValueId task_loss, const ParamStore& params,
                     const std::map<std::string, ad::ValueId>& param_leaves,
                     const EWCConfig& cfg) {
  check_aligned(cfg.anchor, params, "ewc_loss anchor/params");
  check_aligned(cfg.fisher.values, params, "ewc_loss fisher/params");
  if (!std::isfinite(cfg.lambda) || cfg.lambda < 0.0) {
    throw InputError("ewc_loss: lambda must be finite and >= 0");
  }

  ad::ValueId penalty = -1;
  for (const std::string& name : params.names()) {
    auto it = param_leaves.find(name);
    ad::ValueId theta = it != param_leaves.end() ? it->second : tape.constant(params.at(name));
    ad::ValueId diff = tape.sub(theta, tape.constant(cfg.anchor.at(name)));
    ad::ValueId term = tape.sum_all(
        tape.mul(tape.mul(diff, diff), tape.constant(cfg.fisher.values.at(name))));
    penalty = penalty < 0 ? term : tape.add(penalty, term);
  }
  return tape.add(task_loss, tape.scale(penalty, cfg.lambda));
}

double ewc_penalty_value(const ParamStore& params, const EWCConfig& cfg) {
  return cfg.lambda * fisher_weighted_distance(cfg.fisher, params, cfg.anchor);
}

double fisher_weighted_distance(const FisherDiagonal& fisher, const ParamStore& params,
                                const ParamStore& anchor) {
  check_aligned(anchor, params, "fisher_weighted_distance");
  check_aligned(fisher.values, params, "fisher_weighted_distance");
  double total = 0.0;
  for (const std::string& name : params.names()) {
    auto p = params.at(name).data();
    auto a = anchor.at(name).data();
    auto f = fisher.values.at(name).data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - a[i];
      total += f[i] * d * d;
    }
  }
  return total;
}

FisherDiagonal normalize_unit_trace(const FisherDiagonal& f) {
  const double t = f.trace();
  if (!(t > 0.0)) {
    throw InputError("normalize_unit_trace: trace is " + std::to_string(t) +
                     " for source '" + f.source_tag + "' (all-zero Fisher?)");
  }
  FisherDiagonal out;
  out.sample_count = f.sample_count;
  out.source_tag = f.source_tag;
  const double inv = 1.0 / t;
  for (const std::string& name : f.values.names()) {
    Tensor scaled = f.values.at(name);
    for (double& v : scaled.data()) v *= inv;
    out.values.add(name, std::move(scaled));
  }
  return out;
}

double fisher_overlap(const FisherDiagonal& f1, const FisherDiagonal& f2) {
  check_aligned(f1.values, f2.values, "fisher_overlap");
  FisherDiagonal a = normalize_unit_trace(f1);
  FisherDiagonal b = normalize_unit_trace(f2);
  double overlap = 0.0;
  for (const std::string& name : a.values.names()) {
    auto av = a.values.at(name).data();
    auto bv = b.values.at(name).data();
    for (std::size_t i = 0; i < av.size(); ++i) {
      if (av[i] < 0.0 || bv[i] < 0.0) {
        throw InputError("fisher_overlap: negative entry in " + name);
      }
      overlap += std::sqrt(av[i] * bv[i]);
    }
  }
  return overlap;
}

}  // namespace clab
