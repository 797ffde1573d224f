// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "clab/common.hpp"
#include "clab/training.hpp"

using namespace clab;

namespace {

struct TinyWorld {
  ModelConfig cfg = ModelConfig::make_default();
  ParamStore base;
  LanguageSpec lang;
  Corpus train;
  Corpus dev;

  TinyWorld() {
    base = init_model(cfg, 77);
    MakeLanguageParams p;
    p.code_token = "<L0>";
    p.alphabet = "abcdefgh ";
    lang = make_language("L0", 1000, p);
    train = generate_corpus(lang, Split::kTrain, 8, 50);
    dev = generate_corpus(lang, Split::kDev, 4, 50);
  }

  Dataset train_ds() const { return {&lang, &train}; }
  Dataset dev_ds() const { return {&lang, &dev}; }
};

TrainConfig quick(AdapterMethod method, std::uint64_t seed = 9) {
  TrainConfig tc;
  tc.adapter.method = method;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.seed = seed;
  tc.dev_log_cap = 2;
  return tc;
}

// Single scalar quadratic 0.5*(theta - target)^2 wired through the taped loss
// interface, driven by adam_step.
double run_quadratic(double start, double target, double lr, std::int64_t steps) {
  Tensor theta({1}, {start});
  std::vector<std::pair<std::string, Tensor*>> trainables = {{"theta", &theta}};
  AdamState opt;
  for (std::int64_t t = 0; t < steps; ++t) {
    ad::Tape tape;
    ad::ValueId th = tape.leaf(theta, "theta");
    ad::ValueId diff = tape.sub(th, tape.constant(Tensor::scalar(target)));
    ad::ValueId loss = tape.scale(tape.sum_all(tape.mul(diff, diff)), 0.5);
    ad::GradientMap grads = tape.backward(loss);
    adam_step(trainables, grads, opt, t, steps, lr);
  }
  return theta.at(0);
}

}  // namespace

TEST_CASE("zero gradients leave parameters unchanged") {
  Tensor theta({3}, {1.0, 2.0, 3.0});
  std::vector<std::pair<std::string, Tensor*>> trainables = {{"theta", &theta}};
  AdamState opt;
  ad::GradientMap grads;
  grads["theta"] = Tensor({3});
  adam_step(trainables, grads, opt, 0, 10, 1e-2);
  CHECK(theta.at(0) == 1.0);
  CHECK(theta.at(1) == 2.0);
  CHECK(theta.at(2) == 3.0);
}

TEST_CASE("the schedule reaches zero at T and the final step is a no-op") {
  CHECK(lr_schedule(1e-3, 10, 10) == 0.0);
  Tensor theta({1}, {5.0});
  std::vector<std::pair<std::string, Tensor*>> trainables = {{"theta", &theta}};
  AdamState opt;
  ad::GradientMap grads;
  grads["theta"] = Tensor({1}, {123.0});
  adam_step(trainables, grads, opt, 10, 10, 1e-2);
  CHECK(theta.at(0) == 5.0);
}

TEST_CASE("one adam step on a convex probe moves toward the optimum") {
  const double moved = run_quadratic(2.0, 3.0, 1e-2, 1);
  CHECK(std::abs(moved - 3.0) < std::abs(2.0 - 3.0));
  CHECK(moved > 2.0);
}

TEST_CASE("the scalar quadratic converges within 5000 steps") {
  const double final_theta = run_quadratic(2.0, 3.0, 1e-2, 5000);
  CHECK(std::abs(final_theta - 3.0) < 1e-6);
}

TEST_CASE("non-finite gradients abort with a diagnostic") {
  Tensor theta({1}, {1.0});
  std::vector<std::pair<std::string, Tensor*>> trainables = {{"theta", &theta}};
  AdamState opt;
  ad::GradientMap grads;
  grads["theta"] = Tensor({1}, {std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(adam_step(trainables, grads, opt, 0, 10, 1e-2), NumericError);
}

TEST_CASE("training is bit-deterministic given the seed") {
  TinyWorld w;
  TrainResult a = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()}, quick(AdapterMethod::kFullFinetune));
  TrainResult b = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()}, quick(AdapterMethod::kFullFinetune));
  CHECK(a.model.bit_equal(b.model));
  REQUIRE(a.log.steps.size() == b.log.steps.size());
  for (std::size_t i = 0; i < a.log.steps.size(); ++i) {
    CHECK(a.log.steps[i].loss == b.log.steps[i].loss);
  }
  TrainResult c = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()},
                        quick(AdapterMethod::kFullFinetune, 10));
  CHECK_FALSE(a.model.bit_equal(c.model));
}

TEST_CASE("step count is epochs times ceil(n over batch)") {
  TinyWorld w;
  TrainConfig tc = quick(AdapterMethod::kFullFinetune);
  tc.epochs = 3;
  tc.batch_size = 3;  // 8 utterances -> 3 steps per epoch
  TrainResult r = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()}, tc);
  CHECK(r.log.steps.size() == 9);
  CHECK(r.log.epochs.size() == 3);
  for (const StepLog& s : r.log.steps) CHECK(std::isfinite(s.loss));
}

TEST_CASE("adapter methods never touch the base store; ft tunes a copy") {
  TinyWorld w;
  const std::uint64_t base_hash = w.base.content_hash();
  for (AdapterMethod m : {AdapterMethod::kLora, AdapterMethod::kSoftPrompt,
                          AdapterMethod::kSoftLangCode}) {
    TrainConfig tc = quick(m);
    tc.adapter.slct_init = {SlctInit::Kind::kMean, ""};
    TrainResult r = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()}, tc);
    CHECK(w.base.content_hash() == base_hash);
    CHECK(r.model.bit_equal(w.base));  // returned copy is untouched too
    REQUIRE(r.adapter.has_value());
  }
  TrainResult ft = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()},
                         quick(AdapterMethod::kFullFinetune));
  CHECK(w.base.content_hash() == base_hash);
  CHECK_FALSE(ft.model.bit_equal(w.base));
}

TEST_CASE("old-language decodes stay bit-identical after adapter training") {
  TinyWorld w;
  Tensor feat = synthesize(w.lang, "abc dd", 999);
  DecodeOutput before = transcribe(w.base, w.cfg, feat, "<L1>", nullptr);

  TrainConfig tc = quick(AdapterMethod::kLora);
  TrainResult r = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()}, tc);
  DecodeOutput after = transcribe(w.base, w.cfg, feat, "<L1>", nullptr);
  CHECK(before.per_step_logits_hash == after.per_step_logits_hash);
  (void)r;
}

TEST_CASE("rejects EWC with adapter methods and wrong splits") {
  TinyWorld w;
  TrainConfig tc = quick(AdapterMethod::kLora);
  FisherDiagonal fisher;
  for (const std::string& n : w.base.names())
    fisher.values.add(n, Tensor::zeros(w.base.at(n).shape()));
  fisher.values.mutable_at("dec.embed").at(0) = 1.0;
  fisher.sample_count = 1;
  tc.ewc = EWCConfig{0.1, w.base, fisher};
  CHECK_THROWS_AS(train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()}, tc), ConfigConflictError);

  TrainConfig ok = quick(AdapterMethod::kFullFinetune);
  Dataset wrong{&w.lang, &w.dev};  // dev split where train is required
  CHECK_THROWS_AS(train(w.base, w.cfg, {wrong}, {w.dev_ds()}, ok), InputError);
}

TEST_CASE("lambda 0 EWC run is bit-identical to plain fine-tuning") {
  TinyWorld w;
  FisherDiagonal fisher = estimate_fisher(
      w.base, w.cfg, make_batch(w.lang, w.train.utterances, Vocabulary(w.cfg.vocab)), 4, "L0");

  TrainConfig plain = quick(AdapterMethod::kFullFinetune);
  TrainConfig ewc = plain;
  ewc.ewc = EWCConfig{0.0, w.base, fisher};
  TrainResult a = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()}, plain);
  TrainResult b = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()}, ewc);
  CHECK(a.model.bit_equal(b.model));
  for (const StepLog& s : b.log.steps) CHECK(s.penalty == 0.0);
}

TEST_CASE("a huge lambda pins parameters to the anchor in fisher-weighted norm") {
  TinyWorld w;
  FisherDiagonal fisher = estimate_fisher(
      w.base, w.cfg, make_batch(w.lang, w.train.utterances, Vocabulary(w.cfg.vocab)), 8, "L0");
  TrainConfig tc = quick(AdapterMethod::kFullFinetune);
  tc.epochs = 4;
  tc.ewc = EWCConfig{1e6, w.base, fisher};
  TrainResult r = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()}, tc);
  const double dist = std::sqrt(fisher_weighted_distance(fisher, r.model, w.base));
  INFO("fisher-weighted distance " << dist);
  CHECK(dist < 1e-3);
}

TEST_CASE("select_lambda returns a grid member minimizing the objective") {
  TinyWorld w;
  FisherDiagonal fisher = estimate_fisher(
      w.base, w.cfg, make_batch(w.lang, w.train.utterances, Vocabulary(w.cfg.vocab)), 4, "L0");

  // a second language acting as the "old" language
  MakeLanguageParams p;
  p.code_token = "<L1>";
  p.alphabet = "mnopqrst ";
  LanguageSpec old_lang = make_language("L1", 2000, p);
  Corpus old_dev = generate_corpus(old_lang, Split::kDev, 3, 70);
  Dataset old_ds{&old_lang, &old_dev};
  EvalResult old_base = evaluate(w.base, w.cfg, old_ds, "<L1>", nullptr);

  TrainConfig tc = quick(AdapterMethod::kFullFinetune);
  tc.epochs = 1;
  const std::vector<double> grid = {1e0, 1e-3};
  LambdaSelection sel =
      select_lambda(w.base, w.cfg, w.train_ds(), w.dev_ds(), {old_ds},
                    {{"L1", old_base.cer.rate}}, fisher, tc, grid);
  CHECK(sel.table.size() == grid.size());
  bool member = false;
  for (double g : grid) member = member || g == sel.lambda_star;
  CHECK(member);
  double best = 1e30;
  for (const LambdaRow& row : sel.table) {
    CHECK(std::isfinite(row.objective));
    CHECK(std::isfinite(row.dev_cer_new));
    best = std::min(best, row.objective);
  }
  for (const LambdaRow& row : sel.table) {
    if (row.lambda == sel.lambda_star) CHECK(row.objective == best);
  }
  CHECK_THROWS_AS(select_lambda(w.base, w.cfg, w.train_ds(), w.dev_ds(), {old_ds},
                                {{"L1", 0.0}}, fisher, tc, {}),
                  InputError);
}

TEST_CASE("teacher-forced loss falls over a short run") {
  TinyWorld w;
  TrainConfig tc = quick(AdapterMethod::kFullFinetune);
  tc.epochs = 6;
  TrainResult r = train(w.base, w.cfg, {w.train_ds()}, {w.dev_ds()}, tc);
  CHECK(r.log.steps.back().loss < r.log.steps.front().loss);
}
