// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/training.hpp"

#include <algorithm>
#include <cmath>

#include "clab/common.hpp"
#include "clab/rng.hpp"

namespace clab {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr std::uint64_t kShuffleTag = 0x73687566;  // epoch shuffle stream

std::vector<std::pair<std::string, Tensor*>> trainable_set(AdapterMethod method,
                                                           ParamStore& model,
                                                           AdapterState* state) {
  std::vector<std::pair<std::string, Tensor*>> out;
  switch (method) {
    case AdapterMethod::kFullFinetune:
      for (const std::string& name : model.names()) out.emplace_back(name, &model.mutable_at(name));
      break;
    case AdapterMethod::kLora:
      for (auto& [target, pair] : state->lora) {
        out.emplace_back("lora." + target + ".a", &pair.a);
        out.emplace_back("lora." + target + ".b", &pair.b);
      }
      break;
    case AdapterMethod::kSoftPrompt:
      out.emplace_back("spt.prompts", &state->prompts);
      break;
    case AdapterMethod::kSoftLangCode:
      out.emplace_back("slct.row", &state->code_row);
      break;
  }
  return out;
}

}  // namespace

double TrainConfig::default_lr(AdapterMethod method) {
  switch (method) {
    case AdapterMethod::kFullFinetune: return 1e-5 * 100.0;
    case AdapterMethod::kLora: return 1e-4;
    case AdapterMethod::kSoftPrompt: return 1e-4;
    case AdapterMethod::kSoftLangCode: return 1e-1;
  }
  throw InputError("unknown adapter method");
}

std::vector<double> TrainConfig::default_lambda_grid() {
  return {1e0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
}

double lr_schedule(double lr_initial, std::int64_t step_index, std::int64_t total_steps) {
  return lr_initial *
         (1.0 - static_cast<double>(step_index) / static_cast<double>(total_steps));
}

void adam_step(std::vector<std::pair<std::string, Tensor*>>& trainables,
               const ad::GradientMap& grads, AdamState& opt, std::int64_t step_index,
               std::int64_t total_steps, double lr_initial) {
  const double lr = lr_schedule(lr_initial, step_index, total_steps);
  ++opt.beta_power;
  const double bias1 = 1.0 - std::pow(kBeta1, opt.beta_power);
  const double bias2 = 1.0 - std::pow(kBeta2, opt.beta_power);
  for (auto& [name, param] : trainables) {
    auto git = grads.find(name);
    if (git == grads.end()) {
      throw InputError("adam_step: no gradient for trainable '" + name + "'");
    }
    const Tensor& g = git->second;
    if (!g.all_finite()) {
      throw NumericError("adam_step: non-finite gradient for '" + name + "'");
    }
    auto mit = opt.moments.find(name);
    if (mit == opt.moments.end()) {
      mit = opt.moments
                .emplace(name, std::make_pair(Tensor::zeros(param->shape()),
                                              Tensor::zeros(param->shape())))
                .first;
    }
    Tensor& m = mit->second.first;
    Tensor& v = mit->second.second;
    auto gd = g.data();
    for (std::int64_t i = 0; i < param->numel(); ++i) {
      m.at(i) = kBeta1 * m.at(i) + (1.0 - kBeta1) * gd[i];
      v.at(i) = kBeta2 * v.at(i) + (1.0 - kBeta2) * gd[i] * gd[i];
      const double mhat = m.at(i) / bias1;
      const double vhat = v.at(i) / bias2;
      param->at(i) -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

EvalResult evaluate(const ParamStore& params, const ModelConfig& cfg, const Dataset& ds,
                    const std::string& code_token, const AdapterState* adapter,
                    std::int64_t cap) {
  const std::int64_t n =
      cap > 0 ? std::min<std::int64_t>(cap, static_cast<std::int64_t>(ds.corpus->utterances.size()))
              : static_cast<std::int64_t>(ds.corpus->utterances.size());
  std::vector<std::pair<std::string, std::string>> pairs;
  EvalResult res;
  pairs.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const Utterance& utt = ds.corpus->utterances[static_cast<std::size_t>(i)];
    Tensor features = synthesize(*ds.spec, utt.text, utt.utt_seed);
    DecodeOutput out = transcribe(params, cfg, features, code_token, adapter);
    pairs.emplace_back(out.text, utt.text);
    res.hyps.push_back(std::move(out.text));
  }
  res.cer = corpus_score(pairs, ScoreUnit::kChar);
  res.wer = corpus_score(pairs, ScoreUnit::kWord);
  return res;
}

TrainResult train(const ParamStore& base, const ModelConfig& cfg,
                  const std::vector<Dataset>& train_sets,
                  const std::vector<Dataset>& dev_sets, const TrainConfig& tc) {
  if (train_sets.empty()) throw InputError("train: no training datasets");
  for (const Dataset& ds : train_sets) {
    if (ds.corpus == nullptr || ds.spec == nullptr) {
      throw InputError("train: missing training dataset");
    }
    if (ds.corpus->split != Split::kTrain) {
      throw InputError("train: corpus split is " + split_name(ds.corpus->split) +
                       ", expected train");
    }
  }
  if (tc.epochs < 1 || tc.batch_size < 1) {
    throw InputError("train: epochs and batch_size must be >= 1");
  }
  if (tc.ewc && tc.adapter.method != AdapterMethod::kFullFinetune) {
    throw ConfigConflictError("train: EWC applies to full fine-tuning only");
  }

  const Vocabulary vocab(cfg.vocab);
  const double lr = tc.lr_initial > 0.0 ? tc.lr_initial : TrainConfig::default_lr(tc.adapter.method);

  TrainResult result{base, std::nullopt, {}};
  AdapterState state;
  AdapterState* state_ptr = nullptr;
  if (tc.adapter.method != AdapterMethod::kFullFinetune) {
    state = create_adapter(tc.adapter, cfg, base, tc.seed);
    state_ptr = &state;
  }
  auto trainables = trainable_set(tc.adapter.method, result.model, state_ptr);
  AdamState opt;

  // Features are pure functions of (spec, text, utt_seed); realize them once.
  std::vector<BatchItem> items;
  for (const Dataset& ds : train_sets) {
    const std::string code =
        tc.adapter.method == AdapterMethod::kSoftLangCode
            ? tc.adapter.slct_code
            : (tc.train_code.empty() ? ds.spec->code_token : tc.train_code);
    const std::int32_t code_id = vocab.id(code);
    for (const Utterance& utt : ds.corpus->utterances) {
      BatchItem item = make_batch_item(*ds.spec, utt, vocab);
      item.lang_code = code_id;
      items.push_back(std::move(item));
    }
  }

  const std::int64_t n = static_cast<std::int64_t>(items.size());
  const std::int64_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::int64_t total_steps = steps_per_epoch * tc.epochs;

  auto dev_score = [&](std::int64_t cap) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const Dataset& ds : dev_sets) {
      const std::int64_t m =
          cap > 0
              ? std::min<std::int64_t>(cap, static_cast<std::int64_t>(ds.corpus->utterances.size()))
              : static_cast<std::int64_t>(ds.corpus->utterances.size());
      const std::string dev_code =
          tc.adapter.method == AdapterMethod::kSoftLangCode
              ? tc.adapter.slct_code
              : (tc.train_code.empty() ? ds.spec->code_token : tc.train_code);
      for (std::int64_t i = 0; i < m; ++i) {
        const Utterance& utt = ds.corpus->utterances[static_cast<std::size_t>(i)];
        Tensor features = synthesize(*ds.spec, utt.text, utt.utt_seed);
        DecodeOutput out = transcribe(result.model, cfg, features, dev_code, state_ptr);
        pairs.emplace_back(out.text, utt.text);
      }
    }
    if (pairs.empty()) return std::pair<double, double>{0.0, 0.0};
    return std::pair<double, double>{corpus_score(pairs, ScoreUnit::kChar).rate,
                                     corpus_score(pairs, ScoreUnit::kWord).rate};
  };

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  std::int64_t step = 0;
  for (std::int32_t epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng shuffle_rng(seed_mix(tc.seed, kShuffleTag + static_cast<std::uint64_t>(epoch)));
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::int64_t j = shuffle_rng.below(i + 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (std::int64_t b = 0; b < steps_per_epoch; ++b, ++step) {
      std::vector<BatchItem> batch;
      for (std::int64_t k = b * tc.batch_size;
           k < std::min<std::int64_t>(n, (b + 1) * tc.batch_size); ++k) {
        batch.push_back(items[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
      }
      ad::Tape tape;
      LossGraph graph = nll_loss_graph(tape, result.model, cfg, batch, state_ptr);
      ad::ValueId loss_node = graph.loss;
      double penalty = 0.0;
      if (tc.ewc) {
        loss_node = ewc_loss(tape, graph.loss, result.model, graph.param_leaves, *tc.ewc);
        penalty = tape.value(loss_node).at(0) - tape.value(graph.loss).at(0);
      }
      const double loss_value = tape.value(loss_node).at(0);
      if (!std::isfinite(loss_value)) {
        throw NumericError("train: non-finite loss at step " + std::to_string(step));
      }
      ad::GradientMap grads = tape.backward(loss_node);
      adam_step(trainables, grads, opt, step, total_steps, lr);
      result.log.steps.push_back(
          StepLog{step, loss_value, lr_schedule(lr, step, total_steps), penalty});
    }
    auto [cer, wer] = dev_score(epoch + 1 == tc.epochs ? 0 : tc.dev_log_cap);
    result.log.epochs.push_back(EpochLog{epoch, cer, wer});
  }

  if (!result.log.epochs.empty()) {
    result.log.final_dev_cer = result.log.epochs.back().dev_cer;
    result.log.final_dev_wer = result.log.epochs.back().dev_wer;
  }
  if (state_ptr != nullptr) result.adapter = std::move(state);
  return result;
}

LambdaSelection select_lambda(const ParamStore& base, const ModelConfig& cfg,
                              const Dataset& train_new, const Dataset& dev_new,
                              const std::vector<Dataset>& dev_old,
                              const std::map<std::string, double>& dev_old_baseline_cer,
                              const FisherDiagonal& fisher, const TrainConfig& tc,
                              const std::vector<double>& grid, bool new_only) {
  if (grid.empty()) throw InputError("select_lambda: empty grid");
  LambdaSelection sel;
  std::size_t best = 0;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    TrainConfig run_tc = tc;
    run_tc.adapter.method = AdapterMethod::kFullFinetune;
    run_tc.ewc = EWCConfig{grid[gi], base, fisher};
    TrainResult run = train(base, cfg, {train_new}, {dev_new}, run_tc);

    LambdaRow row;
    row.lambda = grid[gi];
    row.dev_cer_new = run.log.final_dev_cer;
    double degradation = 0.0;
    for (const Dataset& ds : dev_old) {
      EvalResult ev = evaluate(run.model, cfg, ds, ds.spec->code_token, nullptr);
      row.dev_cer_old[ds.spec->id] = ev.cer.rate;
      auto it = dev_old_baseline_cer.find(ds.spec->id);
      if (it == dev_old_baseline_cer.end()) {
        throw InputError("select_lambda: no baseline dev CER for " + ds.spec->id);
      }
      degradation += std::max(0.0, ev.cer.rate - it->second);
    }
    if (!dev_old.empty()) degradation /= static_cast<double>(dev_old.size());
    row.fisher_weighted_distance = fisher_weighted_distance(fisher, run.model, base);
    row.objective = new_only ? row.dev_cer_new : row.dev_cer_new + degradation;

    sel.table.push_back(std::move(row));
    sel.runs.push_back(std::move(run));
    if (sel.table[gi].objective < sel.table[best].objective) best = gi;
  }
  sel.lambda_star = sel.table[best].lambda;
  return sel;
}

}  // namespace clab
