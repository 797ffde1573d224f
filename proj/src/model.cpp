// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/model.hpp"

#include <Eigen/Core>

#include <cmath>

#include "clab/common.hpp"
#include "clab/rng.hpp"

namespace clab {

namespace {

constexpr double kEmbedInitStd = 0.05;

void init_gaussian(Tensor& t, Rng& rng, double std) {
  for (double& v : t.data()) v = rng.gaussian() * std;
}

// Builds encoder/decoder graphs on one tape. Parameter leaves are created
// lazily and cached so every use of a parameter shares a single node.
class GraphBuilder {
 public:
  GraphBuilder(ad::Tape& tape, const ParamStore& params, const ModelConfig& cfg,
               const AdapterState* adapter)
      : tape_(tape), params_(params), cfg_(cfg), adapter_(adapter) {}

  ad::ValueId encode(const Tensor& features) {
    if (features.rank() != 2 || features.cols() != cfg_.feature_dim) {
      throw InputError("encode: features " + features.shape_str() +
                       " do not match feature_dim " + std::to_string(cfg_.feature_dim));
    }
    if (features.rows() > cfg_.max_src_len) {
      throw InputError("encode: " + std::to_string(features.rows()) +
                       " frames exceed max_src_len " + std::to_string(cfg_.max_src_len));
    }
    ad::ValueId x = tape_.add(
        tape_.matmul(tape_.constant(features), p("enc.in_proj.w")), p("enc.in_proj.b"));
    x = tape_.add(x, tape_.constant(positional_encoding(features.rows())));
    for (std::int32_t i = 0; i < cfg_.enc_layers; ++i) {
      const std::string l = "enc.l" + std::to_string(i);
      ad::ValueId n1 = ln(x, l + ".ln1");
      x = tape_.add(x, attention(l + ".attn", n1, n1, false));
      x = tape_.add(x, ffn(l + ".ff", ln(x, l + ".ln2")));
    }
    return ln(x, "enc.ln_f");
  }

  // tokens start at <sot>; prompt rows are prepended when the adapter is SPT.
  ad::ValueId decoder_logits(ad::ValueId enc_out, const std::vector<std::int32_t>& tokens) {
    ad::ValueId x = input_embedding(tokens);
    const std::int64_t len = tape_.value(x).rows();
    x = tape_.add(x, tape_.constant(positional_encoding(len)));
    for (std::int32_t i = 0; i < cfg_.dec_layers; ++i) {
      const std::string l = "dec.l" + std::to_string(i);
      ad::ValueId n1 = ln(x, l + ".ln1");
      x = tape_.add(x, attention(l + ".self", n1, n1, true));
      x = tape_.add(x, attention(l + ".cross", ln(x, l + ".ln2"), enc_out, false));
      x = tape_.add(x, ffn(l + ".ff", ln(x, l + ".ln3")));
    }
    ad::ValueId h = ln(x, "dec.ln_f");
    return tape_.matmul_nt(h, p("dec.embed"));  // tied output projection
  }

  std::int32_t prompt_rows() const {
    return (adapter_ && adapter_->method == AdapterMethod::kSoftPrompt)
               ? static_cast<std::int32_t>(adapter_->prompts.rows())
               : 0;
  }

  const std::map<std::string, ad::ValueId>& leaves() const { return leaves_; }

 private:
  ad::ValueId p(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    ad::ValueId id = tape_.leaf(params_.at(name), name);
    leaves_.emplace(name, id);
    return id;
  }

  ad::ValueId adapter_leaf(const std::string& name, const Tensor& t) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    ad::ValueId id = tape_.leaf(t, name);
    leaves_.emplace(name, id);
    return id;
  }

  // LoRA-aware weight fetch: base + b*a for adapted targets.
  ad::ValueId weight(const std::string& name) {
    if (adapter_ && adapter_->method == AdapterMethod::kLora) {
      if (const LoraPair* pair = adapter_->find_lora(name)) {
        auto it = effective_.find(name);
        if (it != effective_.end()) return it->second;
        ad::ValueId eff = tape_.add(
            p(name), tape_.matmul(adapter_leaf("lora." + name + ".b", pair->b),
                                  adapter_leaf("lora." + name + ".a", pair->a)));
        effective_.emplace(name, eff);
        return eff;
      }
    }
    return p(name);
  }

  ad::ValueId ln(ad::ValueId x, const std::string& prefix) {
    return tape_.add(tape_.mul(tape_.layer_norm(x), p(prefix + ".g")), p(prefix + ".b"));
  }

  ad::ValueId attention(const std::string& prefix, ad::ValueId q_in, ad::ValueId kv_in,
                        bool causal) {
    const std::int64_t hd = cfg_.d_model / cfg_.n_heads;
    ad::ValueId q = tape_.matmul(q_in, weight(prefix + ".q"));
    ad::ValueId k = tape_.matmul(kv_in, weight(prefix + ".k"));
    ad::ValueId v = tape_.matmul(kv_in, weight(prefix + ".v"));
    ad::ValueId merged = -1;
    for (std::int32_t h = 0; h < cfg_.n_heads; ++h) {
      const std::int64_t c0 = h * hd, c1 = (h + 1) * hd;
      ad::ValueId probs = tape_.row_softmax(tape_.attn_scores(
          tape_.slice_cols(q, c0, c1), tape_.slice_cols(k, c0, c1), causal));
      ad::ValueId out = tape_.matmul(probs, tape_.slice_cols(v, c0, c1));
      merged = h == 0 ? out : tape_.concat_cols(merged, out);
    }
    return tape_.matmul(merged, weight(prefix + ".o"));
  }

  ad::ValueId ffn(const std::string& prefix, ad::ValueId x) {
    ad::ValueId h = tape_.tanh(tape_.add(tape_.matmul(x, p(prefix + ".w1")), p(prefix + ".b1")));
    return tape_.add(tape_.matmul(h, p(prefix + ".w2")), p(prefix + ".b2"));
  }

  // Token embeddings, with the SLCT row substituted at input positions only
  // (the tied output row stays frozen) and SPT prompts prepended.
  ad::ValueId input_embedding(const std::vector<std::int32_t>& tokens) {
    ad::ValueId emb;
    if (adapter_ && adapter_->method == AdapterMethod::kSoftLangCode) {
      const Vocabulary vocab(cfg_.vocab);
      const std::int32_t code_id = vocab.id(adapter_->slct_code);
      Tensor table = params_.at("dec.embed");
      for (std::int64_t c = 0; c < table.cols(); ++c) table.at(code_id, c) = 0.0;
      emb = tape_.embedding_lookup(tape_.constant(table), tokens);
      Tensor mask({static_cast<std::int64_t>(tokens.size()), 1});
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == code_id) mask.at(static_cast<std::int64_t>(i), 0) = 1.0;
      }
      emb = tape_.add(emb, tape_.matmul(tape_.constant(mask),
                                        adapter_leaf("slct.row", adapter_->code_row)));
    } else {
      emb = tape_.embedding_lookup(p("dec.embed"), tokens);
    }
    if (adapter_ && adapter_->method == AdapterMethod::kSoftPrompt) {
      emb = tape_.concat_rows(adapter_leaf("spt.prompts", adapter_->prompts), emb);
    }
    return emb;
  }

  Tensor positional_encoding(std::int64_t len) const {
    Tensor pe({len, cfg_.d_model});
    for (std::int64_t pos = 0; pos < len; ++pos) {
      for (std::int32_t i = 0; i < cfg_.d_model / 2; ++i) {
        double angle = static_cast<double>(pos) /
                       std::pow(10000.0, 2.0 * i / static_cast<double>(cfg_.d_model));
        pe.at(pos, 2 * i) = std::sin(angle);
        pe.at(pos, 2 * i + 1) = std::cos(angle);
      }
    }
    return pe;
  }

  ad::Tape& tape_;
  const ParamStore& params_;
  const ModelConfig& cfg_;
  const AdapterState* adapter_;
  std::map<std::string, ad::ValueId> leaves_;
  std::map<std::string, ad::ValueId> effective_;
};

std::vector<std::int32_t> decoder_input(const Vocabulary& vocab, std::int32_t lang_code,
                                        const std::vector<std::int32_t>& target) {
  std::vector<std::int32_t> in;
  in.reserve(target.size() + 2);
  in.push_back(vocab.sot());
  in.push_back(lang_code);
  in.insert(in.end(), target.begin(), target.end());
  return in;
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EVec = Eigen::RowVectorXd;
using MapC = Eigen::Map<const EMat>;

MapC emap(const Tensor& t) { return MapC(t.data().data(), t.rows(), t.cols()); }

EVec ln_row(const EVec& x, const Tensor& gain, const Tensor& bias) {
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  const double inv = 1.0 / std::sqrt(var + ad::kLayerNormEps);
  EVec out = (x.array() - mean) * inv;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = out[i] * gain.at(i) + bias.at(i);
  return out;
}

void softmax_inplace(EVec& v) {
  const double mx = v.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    v[i] = std::exp(v[i] - mx);
    sum += v[i];
  }
  v /= sum;
}

double pe_entry(std::int64_t pos, std::int32_t col, std::int32_t d_model) {
  const std::int32_t i = col / 2;
  const double angle = static_cast<double>(pos) /
                       std::pow(10000.0, 2.0 * i / static_cast<double>(d_model));
  return (col % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

// Forward-only decoder with per-layer key/value caches. Each row's value is
// independent of later rows, so feeding rows one at a time matches the
// full-prefix forward up to floating-point summation order.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const ParamStore& params, const ModelConfig& cfg,
                     const AdapterState* adapter, const Tensor& enc_out)
      : params_(params), cfg_(cfg), adapter_(adapter), vocab_(cfg.vocab) {
    if (adapter_ != nullptr && adapter_->method == AdapterMethod::kLora) {
      for (const auto& [target, pair] : adapter_->lora) {
        effective_.emplace(target, effective_weight(params_.at(target), pair));
      }
    }
    layers_.resize(static_cast<std::size_t>(cfg_.dec_layers));
    for (std::int32_t l = 0; l < cfg_.dec_layers; ++l) {
      const std::string prefix = "dec.l" + std::to_string(l) + ".cross";
      LayerCache& cache = layers_[static_cast<std::size_t>(l)];
      cache.cross_k = emap(enc_out) * emap(w(prefix + ".k"));
      cache.cross_v = emap(enc_out) * emap(w(prefix + ".v"));
    }
    if (adapter_ != nullptr && adapter_->method == AdapterMethod::kSoftLangCode) {
      slct_code_id_ = vocab_.id(adapter_->slct_code);
    }
    if (adapter_ != nullptr && adapter_->method == AdapterMethod::kSoftPrompt) {
      for (std::int64_t r = 0; r < adapter_->prompts.rows(); ++r) {
        EVec row(cfg_.d_model);
        for (std::int32_t c = 0; c < cfg_.d_model; ++c) row[c] = adapter_->prompts.at(r, c);
        feed(row);  // prompt logits are discarded
      }
    }
  }

  // Appends one token and returns its output logits.
  Tensor step_token(std::int32_t token) {
    const Tensor& embed = params_.at("dec.embed");
    EVec row(cfg_.d_model);
    if (slct_code_id_ >= 0 && token == slct_code_id_) {
      for (std::int32_t c = 0; c < cfg_.d_model; ++c) row[c] = adapter_->code_row.at(0, c);
    } else {
      for (std::int32_t c = 0; c < cfg_.d_model; ++c) row[c] = embed.at(token, c);
    }
    return feed(row);
  }

 private:
  struct LayerCache {
    EMat self_k, self_v;  // grow one row per step
    EMat cross_k, cross_v;
  };

  const Tensor& w(const std::string& name) const {
    auto it = effective_.find(name);
    return it != effective_.end() ? it->second : params_.at(name);
  }

  EVec attend(const EVec& q, const EMat& keys, const EMat& values) const {
    const std::int64_t hd = cfg_.d_model / cfg_.n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    EVec out(cfg_.d_model);
    for (std::int32_t h = 0; h < cfg_.n_heads; ++h) {
      const std::int64_t c0 = h * hd;
      EVec scores = q.segment(c0, hd) * keys.middleCols(c0, hd).transpose() * scale;
      softmax_inplace(scores);
      out.segment(c0, hd) = scores * values.middleCols(c0, hd);
    }
    return out;
  }

  Tensor feed(EVec x) {
    for (std::int32_t c = 0; c < cfg_.d_model; ++c) x[c] += pe_entry(pos_, c, cfg_.d_model);
    ++pos_;
    for (std::int32_t l = 0; l < cfg_.dec_layers; ++l) {
      const std::string base = "dec.l" + std::to_string(l);
      LayerCache& cache = layers_[static_cast<std::size_t>(l)];
      {
        EVec n1 = ln_row(x, params_.at(base + ".ln1.g"), params_.at(base + ".ln1.b"));
        cache.self_k.conservativeResize(cache.self_k.rows() + 1, cfg_.d_model);
        cache.self_v.conservativeResize(cache.self_v.rows() + 1, cfg_.d_model);
        cache.self_k.bottomRows(1) = n1 * emap(w(base + ".self.k"));
        cache.self_v.bottomRows(1) = n1 * emap(w(base + ".self.v"));
        EVec q = n1 * emap(w(base + ".self.q"));
        x += attend(q, cache.self_k, cache.self_v) * emap(w(base + ".self.o"));
      }
      {
        EVec n2 = ln_row(x, params_.at(base + ".ln2.g"), params_.at(base + ".ln2.b"));
        EVec q = n2 * emap(w(base + ".cross.q"));
        x += attend(q, cache.cross_k, cache.cross_v) * emap(w(base + ".cross.o"));
      }
      {
        EVec n3 = ln_row(x, params_.at(base + ".ln3.g"), params_.at(base + ".ln3.b"));
        EVec h = n3 * emap(params_.at(base + ".ff.w1"));
        for (Eigen::Index i = 0; i < h.size(); ++i)
          h[i] = std::tanh(h[i] + params_.at(base + ".ff.b1").at(i));
        EVec f = h * emap(params_.at(base + ".ff.w2"));
        for (Eigen::Index i = 0; i < f.size(); ++i)
          x[i] += f[i] + params_.at(base + ".ff.b2").at(i);
      }
    }
    EVec h = ln_row(x, params_.at("dec.ln_f.g"), params_.at("dec.ln_f.b"));
    EVec logits = h * emap(params_.at("dec.embed")).transpose();
    Tensor out({static_cast<std::int64_t>(logits.size())});
    for (Eigen::Index i = 0; i < logits.size(); ++i) out.at(i) = logits[i];
    return out;
  }

  const ParamStore& params_;
  const ModelConfig& cfg_;
  const AdapterState* adapter_;
  Vocabulary vocab_;
  std::map<std::string, Tensor> effective_;
  std::vector<LayerCache> layers_;
  std::int64_t pos_ = 0;
  std::int32_t slct_code_id_ = -1;
};

}  // namespace

ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::int64_t d = cfg.d_model;
  const std::int64_t ff = cfg.ff_dim();
  const std::int64_t v = cfg.vocab_size();
  Rng rng(seed);
  ParamStore store;

  auto matrix = [&](const std::string& name, std::int64_t in, std::int64_t out) {
    Tensor t({in, out});
    init_gaussian(t, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    store.add(name, std::move(t));
  };
  auto bias = [&](const std::string& name, std::int64_t n) {
    store.add(name, Tensor({n}));
  };
  auto norm = [&](const std::string& prefix) {
    store.add(prefix + ".g", Tensor::full({d}, 1.0));
    store.add(prefix + ".b", Tensor({d}));
  };
  auto attn = [&](const std::string& prefix) {
    for (const char* role : {"q", "k", "v", "o"}) matrix(prefix + "." + role, d, d);
  };
  auto ffn = [&](const std::string& prefix) {
    matrix(prefix + ".w1", d, ff);
    bias(prefix + ".b1", ff);
    matrix(prefix + ".w2", ff, d);
    bias(prefix + ".b2", d);
  };

  matrix("enc.in_proj.w", cfg.feature_dim, d);
  bias("enc.in_proj.b", d);
  for (std::int32_t i = 0; i < cfg.enc_layers; ++i) {
    const std::string l = "enc.l" + std::to_string(i);
    norm(l + ".ln1");
    attn(l + ".attn");
    norm(l + ".ln2");
    ffn(l + ".ff");
  }
  norm("enc.ln_f");

  Tensor embed({v, d});
  init_gaussian(embed, rng, kEmbedInitStd);
  store.add("dec.embed", std::move(embed));
  for (std::int32_t i = 0; i < cfg.dec_layers; ++i) {
    const std::string l = "dec.l" + std::to_string(i);
    norm(l + ".ln1");
    attn(l + ".self");
    norm(l + ".ln2");
    attn(l + ".cross");
    norm(l + ".ln3");
    ffn(l + ".ff");
  }
  norm("dec.ln_f");
  return store;
}

std::int64_t parameter_count(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model;
  const std::int64_t ff = cfg.ff_dim();
  const std::int64_t v = cfg.vocab_size();
  const std::int64_t norm = 2 * d;
  const std::int64_t attn = 4 * d * d;
  const std::int64_t ffn = d * ff + ff + ff * d + d;
  std::int64_t total = cfg.feature_dim * d + d;                        // in_proj
  total += cfg.enc_layers * (2 * norm + attn + ffn) + norm;            // encoder
  total += v * d;                                                      // embedding
  total += cfg.dec_layers * (3 * norm + 2 * attn + ffn) + norm;        // decoder
  return total;
}

LossGraph nll_loss_graph(ad::Tape& tape, const ParamStore& params,
                         const ModelConfig& cfg, const std::vector<BatchItem>& batch,
                         const AdapterState* adapter) {
  if (batch.empty()) throw InputError("nll_loss: empty batch");
  const Vocabulary vocab(cfg.vocab);

  std::int64_t total_tokens = 0;
  for (const BatchItem& item : batch) {
    if (!vocab.is_lang_code(item.lang_code)) {
      throw InputError("nll_loss: token id " + std::to_string(item.lang_code) +
                       " is not a language code");
    }
    if (static_cast<std::int64_t>(item.target.size()) + 2 > cfg.max_tgt_len) {
      throw InputError("nll_loss: reference of " + std::to_string(item.target.size()) +
                       " symbols does not fit max_tgt_len " + std::to_string(cfg.max_tgt_len));
    }
    total_tokens += static_cast<std::int64_t>(item.target.size()) + 2;
  }

  GraphBuilder builder(tape, params, cfg, adapter);
  ad::ValueId total = -1;
  for (const BatchItem& item : batch) {
    ad::ValueId enc = builder.encode(item.features);
    std::vector<std::int32_t> input = decoder_input(vocab, item.lang_code, item.target);
    ad::ValueId logits = builder.decoder_logits(enc, input);

    const std::int32_t m = builder.prompt_rows();
    const std::size_t rows = static_cast<std::size_t>(m) + input.size();
    std::vector<std::int32_t> targets(rows, 0);
    std::vector<std::uint8_t> mask(rows, 0);
    for (std::size_t i = 0; i < input.size(); ++i) {
      // position (m + i) predicts the symbol following input[i]
      std::int32_t next = i + 1 < input.size()
                              ? input[i + 1]
                              : vocab.eot();
      targets[static_cast<std::size_t>(m) + i] = next;
      mask[static_cast<std::size_t>(m) + i] = 1;
    }
    ad::ValueId ce = tape.cross_entropy(logits, targets, mask);
    const double w = static_cast<double>(input.size()) / static_cast<double>(total_tokens);
    ad::ValueId weighted = tape.scale(ce, w);
    total = total < 0 ? weighted : tape.add(total, weighted);
  }

  LossGraph graph;
  graph.loss = total;
  graph.param_leaves = builder.leaves();
  graph.token_count = total_tokens;
  return graph;
}

double nll_loss(const ParamStore& params, const ModelConfig& cfg,
                const std::vector<BatchItem>& batch, const AdapterState* adapter) {
  ad::Tape tape;
  LossGraph graph = nll_loss_graph(tape, params, cfg, batch, adapter);
  return tape.value(graph.loss).at(0);
}

Tensor encode_features(const ParamStore& params, const ModelConfig& cfg,
                       const Tensor& features, const AdapterState* adapter) {
  ad::Tape tape;
  GraphBuilder builder(tape, params, cfg, adapter);
  return tape.value(builder.encode(features));
}

Tensor decoder_logits_full(const ParamStore& params, const ModelConfig& cfg,
                           const Tensor& enc_out, const std::vector<std::int32_t>& tokens,
                           const AdapterState* adapter) {
  ad::Tape tape;
  GraphBuilder builder(tape, params, cfg, adapter);
  return tape.value(builder.decoder_logits(tape.constant(enc_out), tokens));
}

DecodeOutput transcribe(const ParamStore& params, const ModelConfig& cfg,
                        const Tensor& features, const std::string& lang_code,
                        const AdapterState* adapter) {
  const Vocabulary vocab(cfg.vocab);
  if (!vocab.contains(lang_code) || !vocab.is_lang_code(vocab.id(lang_code))) {
    throw InputError("transcribe: '" + lang_code + "' is not a language-code token");
  }
  const std::int32_t code_id = vocab.id(lang_code);

  const Tensor enc_out = encode_features(params, cfg, features, adapter);
  IncrementalDecoder decoder(params, cfg, adapter, enc_out);
  decoder.step_token(vocab.sot());
  Tensor logits = decoder.step_token(code_id);

  DecodeOutput out;
  out.per_step_logits_hash = kFnvOffset;
  std::int32_t context_len = 2;
  while (context_len < cfg.max_tgt_len) {
    std::int32_t best = 0;
    for (std::int64_t c = 1; c < logits.numel(); ++c) {
      if (logits.at(c) > logits.at(best)) best = static_cast<std::int32_t>(c);
    }
    out.per_step_logits_hash = logits.content_hash(out.per_step_logits_hash);
    out.step_logits.push_back(std::move(logits));

    if (best == vocab.eot()) break;
    if (vocab.is_text(best)) out.tokens.push_back(best);
    ++context_len;
    if (context_len >= cfg.max_tgt_len) break;
    logits = decoder.step_token(best);
  }
  out.text = vocab.decode_text(out.tokens);
  return out;
}

}  // namespace clab
