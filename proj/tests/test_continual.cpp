// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "clab/common.hpp"
#include "clab/continual.hpp"
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

BatchItem make_item(const ModelConfig& cfg, const std::string& text, std::uint64_t seed) {
  const Vocabulary vocab(cfg.vocab);
  BatchItem item;
  item.features = random_features(static_cast<std::int64_t>(text.size()) * 2,
                                  cfg.feature_dim, seed);
  item.target = vocab.encode_text(text);
  item.lang_code = vocab.id("<L0>");
  return item;
}

FisherDiagonal tiny_fisher(std::vector<double> values) {
  const auto n = static_cast<std::int64_t>(values.size());
  FisherDiagonal f;
  f.values.add("theta", Tensor({n}, std::move(values)));
  f.sample_count = 1;
  f.source_tag = "tiny";
  return f;
}

ad::GradientMap utterance_gradient(const ParamStore& params, const ModelConfig& cfg,
                                   const BatchItem& item) {
  ad::Tape tape;
  LossGraph g = nll_loss_graph(tape, params, cfg, {item}, nullptr);
  return tape.backward(g.loss);
}

}  // namespace

TEST_CASE("fisher of one utterance is the elementwise squared gradient") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore params = init_model(cfg, 7);
  BatchItem item = make_item(cfg, "abc d", 3);
  FisherDiagonal fisher = estimate_fisher(params, cfg, {item}, 10, "one");
  CHECK(fisher.sample_count == 1);

  ad::GradientMap grads = utterance_gradient(params, cfg, item);
  for (const std::string& name : params.names()) {
    const Tensor& g = grads.at(name);
    const Tensor& f = fisher.values.at(name);
    for (std::int64_t i = 0; i < f.numel(); ++i) {
      CHECK(f.at(i) == doctest::Approx(g.at(i) * g.at(i)).epsilon(1e-12));
    }
  }
}

TEST_CASE("duplicating the corpus leaves the fisher unchanged") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore params = init_model(cfg, 7);
  std::vector<BatchItem> corpus = {make_item(cfg, "ab", 1), make_item(cfg, "cde", 2)};
  std::vector<BatchItem> doubled = corpus;
  doubled.insert(doubled.end(), corpus.begin(), corpus.end());
  FisherDiagonal f1 = estimate_fisher(params, cfg, corpus, 100, "a");
  FisherDiagonal f2 = estimate_fisher(params, cfg, doubled, 100, "a");
  for (const std::string& name : params.names()) {
    const Tensor& a = f1.values.at(name);
    const Tensor& b = f2.values.at(name);
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-12));
    }
  }
}

TEST_CASE("two-utterance fisher equals the brute-force two-pass average") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore params = init_model(cfg, 7);
  std::vector<BatchItem> corpus = {make_item(cfg, "abd", 5), make_item(cfg, "xy w", 6)};
  FisherDiagonal fisher = estimate_fisher(params, cfg, corpus, 10, "two");
  CHECK(fisher.sample_count == 2);

  ad::GradientMap g1 = utterance_gradient(params, cfg, corpus[0]);
  ad::GradientMap g2 = utterance_gradient(params, cfg, corpus[1]);
  for (const std::string& name : params.names()) {
    const Tensor& f = fisher.values.at(name);
    for (std::int64_t i = 0; i < f.numel(); ++i) {
      const double expected =
          0.5 * (g1.at(name).at(i) * g1.at(name).at(i) + g2.at(name).at(i) * g2.at(name).at(i));
      CHECK(f.at(i) == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  SUBCASE("cap limits the sample") {
    FisherDiagonal capped = estimate_fisher(params, cfg, corpus, 1, "capped");
    CHECK(capped.sample_count == 1);
  }
  SUBCASE("empty corpus and bad cap are rejected") {
    CHECK_THROWS_AS(estimate_fisher(params, cfg, {}, 10, "x"), InputError);
    CHECK_THROWS_AS(estimate_fisher(params, cfg, corpus, 0, "x"), InputError);
  }
}

TEST_CASE("ewc penalty is zero at the anchor and lambda 0 reduces to the task loss") {
  ParamStore params;
  params.add("theta", Tensor({4}, {1.0, -2.0, 0.5, 3.0}));
  EWCConfig cfg;
  cfg.anchor = params;
  cfg.fisher = tiny_fisher({1.0, 1.0, 1.0, 1.0});

  for (double lambda : {0.0, 0.7}) {
    cfg.lambda = lambda;
    ad::Tape tape;
    ad::ValueId theta = tape.leaf(params.at("theta"), "theta");
    ad::ValueId task = tape.sum_all(theta);
    ad::ValueId total = ewc_loss(tape, task, params, {{"theta", theta}}, cfg);
    CHECK(tape.value(total).at(0) == doctest::Approx(tape.value(task).at(0)).epsilon(1e-15));
  }
}

TEST_CASE("unit fisher with a single-coordinate displacement: penalty and gradient") {
  // F = 1, theta - theta* = delta e_j -> penalty lambda delta^2, grad_j 2 lambda delta
  const double lambda = 0.3, delta = 0.25;
  ParamStore anchor;
  anchor.add("theta", Tensor({3}, {1.0, 2.0, 3.0}));
  ParamStore params;
  params.add("theta", Tensor({3}, {1.0, 2.0 + delta, 3.0}));
  EWCConfig cfg{lambda, anchor, tiny_fisher({1.0, 1.0, 1.0})};

  ad::Tape tape;
  ad::ValueId theta = tape.leaf(params.at("theta"), "theta");
  ad::ValueId task = tape.constant(Tensor::scalar(0.0));
  ad::ValueId total = ewc_loss(tape, task, params, {{"theta", theta}}, cfg);
  CHECK(tape.value(total).at(0) == doctest::Approx(lambda * delta * delta).epsilon(1e-12));
  ad::GradientMap grads = tape.backward(total);
  CHECK(grads.at("theta").at(0) == doctest::Approx(0.0));
  CHECK(grads.at("theta").at(1) == doctest::Approx(2.0 * lambda * delta).epsilon(1e-12));
  CHECK(grads.at("theta").at(2) == doctest::Approx(0.0));
}

TEST_CASE("ewc penalty gradient matches finite differences below 1e-6") {
  Rng rng(13);
  ParamStore anchor;
  anchor.add("w", Tensor({3, 4}));
  anchor.add("b", Tensor({4}));
  for (const std::string& n : anchor.names())
    for (double& v : anchor.mutable_at(n).data()) v = rng.gaussian();
  ParamStore params = anchor;
  for (const std::string& n : params.names())
    for (double& v : params.mutable_at(n).data()) v += 0.2 * rng.gaussian();

  FisherDiagonal fisher;
  for (const std::string& n : anchor.names()) {
    Tensor f(anchor.at(n).shape());
    for (double& v : f.data()) v = std::abs(rng.gaussian());
    fisher.values.add(n, std::move(f));
  }
  fisher.sample_count = 1;
  EWCConfig cfg{0.45, anchor, fisher};

  ad::TapedLoss loss_fn = [&](const ParamStore& p, ad::Tape& tape) {
    std::map<std::string, ad::ValueId> leaves;
    for (const std::string& n : p.names()) leaves[n] = tape.leaf(p.at(n), n);
    // task loss reads every parameter so the penalty is the only curvature
    ad::ValueId task = tape.add(tape.sum_all(leaves.at("w")), tape.sum_all(leaves.at("b")));
    return ewc_loss(tape, task, p, leaves, cfg);
  };
  ad::GradCheckReport rep = ad::check_gradients(loss_fn, params, 1e-5, 1e-6);
  INFO("max rel error " << rep.max_rel_error);
  CHECK(rep.pass);
}

TEST_CASE("penalty is nondecreasing in each coordinate displacement") {
  ParamStore anchor;
  anchor.add("theta", Tensor({2}, {0.0, 0.0}));
  EWCConfig cfg{1.0, anchor, tiny_fisher({0.5, 2.0})};
  double last = -1.0;
  for (double step : {0.0, 0.1, 0.3, 0.9}) {
    ParamStore p;
    p.add("theta", Tensor({2}, {step, -step}));
    const double value = ewc_penalty_value(p, cfg);
    CHECK(value >= last);
    last = value;
  }
}

TEST_CASE("misaligned stores are rejected") {
  ParamStore anchor;
  anchor.add("theta", Tensor({3}));
  ParamStore other;
  other.add("phi", Tensor({3}));
  ParamStore shaped;
  shaped.add("theta", Tensor({4}));
  EWCConfig cfg{0.1, anchor, tiny_fisher({1, 1, 1})};
  ad::Tape tape;
  ad::ValueId t = tape.leaf(other.at("phi"), "phi");
  ad::ValueId task = tape.constant(Tensor::scalar(0.0));
  CHECK_THROWS_AS(ewc_loss(tape, task, other, {{"phi", t}}, cfg), InputError);
  CHECK_THROWS_AS(fisher_weighted_distance(cfg.fisher, shaped, anchor), InputError);
}

TEST_CASE("unit-trace normalization") {
  FisherDiagonal f = tiny_fisher({1.0, 3.0});
  FisherDiagonal n = normalize_unit_trace(f);
  CHECK(n.values.at("theta").at(0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(n.values.at("theta").at(1) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(n.trace() == doctest::Approx(1.0).epsilon(1e-12));

  FisherDiagonal again = normalize_unit_trace(n);
  CHECK(std::abs(again.values.at("theta").at(0) - n.values.at("theta").at(0)) < 1e-15);

  // scale invariance
  FisherDiagonal scaled = tiny_fisher({2.5, 7.5});
  FisherDiagonal ns = normalize_unit_trace(scaled);
  CHECK(ns.values.at("theta").at(0) == doctest::Approx(0.25).epsilon(1e-15));

  CHECK_THROWS_AS(normalize_unit_trace(tiny_fisher({0.0, 0.0})), InputError);
}

TEST_CASE("fisher overlap: identity, disjoint supports, worked value") {
  FisherDiagonal f = tiny_fisher({0.3, 0.7});
  CHECK(fisher_overlap(f, f) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK(fisher_overlap(tiny_fisher({1.0, 0.0}), tiny_fisher({0.0, 1.0})) ==
        doctest::Approx(0.0));

  // normalized (0.5, 0.5) vs (0.25, 0.75): sqrt(0.125) + sqrt(0.375)
  const double overlap = fisher_overlap(tiny_fisher({0.5, 0.5}), tiny_fisher({0.25, 0.75}));
  CHECK(overlap == doctest::Approx(0.965926).epsilon(1e-6 / 0.965926));
  CHECK(overlap == doctest::Approx(std::sqrt(0.125) + std::sqrt(0.375)).epsilon(1e-14));
}

TEST_CASE("overlap is symmetric, bounded, scale invariant, and matches the Frechet form") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(8), b(8);
    for (double& v : a) v = std::abs(rng.gaussian()) + 1e-12;
    for (double& v : b) v = std::abs(rng.gaussian()) + 1e-12;
    FisherDiagonal fa = tiny_fisher(a), fb = tiny_fisher(b);

    const double o = fisher_overlap(fa, fb);
    CHECK(o >= 0.0);
    CHECK(o <= 1.0 + 1e-12);
    CHECK(fisher_overlap(fb, fa) == doctest::Approx(o).epsilon(1e-14));

    std::vector<double> b_scaled = b;
    for (double& v : b_scaled) v *= 37.5;
    CHECK(fisher_overlap(fa, tiny_fisher(b_scaled)) == doctest::Approx(o).epsilon(1e-12));

    // 1 - 0.5 * sum (sqrt(a^) - sqrt(b^))^2 computed independently
    double ta = 0.0, tb = 0.0;
    for (double v : a) ta += v;
    for (double v : b) tb += v;
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double da = std::sqrt(a[i] / ta) - std::sqrt(b[i] / tb);
      d2 += 0.5 * da * da;
    }
    CHECK(o == doctest::Approx(1.0 - d2).epsilon(1e-12));
  }
}

TEST_CASE("overlap rejects misaligned or zero-trace inputs") {
  FisherDiagonal f = tiny_fisher({1.0, 1.0});
  FisherDiagonal other;
  other.values.add("phi", Tensor({2}, {1.0, 1.0}));
  CHECK_THROWS_AS(fisher_overlap(f, other), InputError);
  CHECK_THROWS_AS(fisher_overlap(f, tiny_fisher({0.0, 0.0})), InputError);
}

TEST_CASE("fisher files round-trip and reject negatives") {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore params = init_model(cfg, 7);
  FisherDiagonal fisher = estimate_fisher(params, cfg, {make_item(cfg, "ab", 1)}, 5, "L0:train");
  std::string bytes = io::encode_fisher(fisher);
  CHECK(bytes.substr(0, 5) == "CLABF");
  FisherDiagonal back = io::decode_fisher(bytes);
  CHECK(back.sample_count == 1);
  CHECK(back.source_tag == "L0:train");
  CHECK(io::encode_fisher(back) == bytes);

  FisherDiagonal bad = tiny_fisher({1.0, 2.0});
  bad.values.mutable_at("theta").at(0) = -1.0;
  CHECK_THROWS_AS(io::decode_fisher(io::encode_fisher(bad)), InputError);
}
