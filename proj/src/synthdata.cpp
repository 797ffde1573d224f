// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/synthdata.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "clab/common.hpp"
#include "clab/rng.hpp"

namespace clab {

namespace {

using nlohmann::json;

constexpr std::uint64_t kProtoTag = 0x70726f746f;   // prototype stream
constexpr std::uint64_t kMutTag = 0x6d757461;       // mutation thresholds
constexpr std::uint64_t kNoiseTag = 0x6e6f697365;   // synthesis noise
constexpr std::uint64_t kTextTag = 0x74657874;      // corpus text stream

// Keeps default utterances within max_src_len/max_tgt_len at
// frames_per_char = 2.
constexpr std::int64_t kMaxTextChars = 44;

std::int32_t symbol_index(char c) {
  const char* p = std::strchr(kTextSymbols, c);
  if (p == nullptr || c == '\0') return -1;
  return static_cast<std::int32_t>(p - kTextSymbols);
}

Tensor draw_prototype(std::uint64_t codebook_seed, std::int32_t symbol,
                      std::int32_t feature_dim) {
  Rng rng(seed_mix(seed_mix(codebook_seed, kProtoTag), static_cast<std::uint64_t>(symbol)));
  Tensor t({feature_dim});
  for (double& v : t.data()) v = rng.gaussian();
  return t;
}

// A parent defines a fixed perfect matching of its symbols plus a priority
// order over the pairs. A child at mutation rate r swaps the prototypes of
// the round(r * 14) highest-priority pairs. Children of one parent therefore
// mutate nested pair sets and agree exactly on commonly mutated pairs, and a
// swapped vector carries a different symbol than in the parent, which makes
// the language code load-bearing for transcription. Pairs inside the
// parent's text alphabet come first: only those collide with the parent's
// own training text.
struct MutationPlan {
  std::vector<std::array<std::int32_t, 2>> pairs;  // priority order
};

MutationPlan mutation_plan(std::uint64_t parent_codebook_seed,
                           const std::string& parent_alphabet) {
  Rng rng(seed_mix(parent_codebook_seed, kMutTag));
  auto shuffled = [&](std::vector<std::int32_t> v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::int64_t j = rng.below(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
    return v;
  };
  std::vector<std::int32_t> inside, outside;
  for (std::int32_t s = 0; s < kTextSymbolCount; ++s) {
    if (parent_alphabet.find(kTextSymbols[s]) != std::string::npos) inside.push_back(s);
    else outside.push_back(s);
  }
  inside = shuffled(std::move(inside));
  outside = shuffled(std::move(outside));

  MutationPlan plan;
  std::size_t i = 0, o = 0;
  for (; i + 1 < inside.size(); i += 2) plan.pairs.push_back({inside[i], inside[i + 1]});
  if (i < inside.size() && o < outside.size()) {
    plan.pairs.push_back({inside[i], outside[o++]});
  }
  for (; o + 1 < outside.size(); o += 2) plan.pairs.push_back({outside[o], outside[o + 1]});
  return plan;
}

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  throw InputError("unknown split");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw InputError("unknown split '" + name + "'");
}

LanguageSpec make_language(const std::string& id, std::uint64_t seed,
                           const MakeLanguageParams& params) {
  if (params.alphabet.empty()) throw InputError("make_language: empty alphabet");
  for (char c : params.alphabet) {
    if (symbol_index(c) < 0) {
      throw InputError(std::string("make_language: '") + c + "' is not a text symbol");
    }
  }
  if (params.noise_sigma < 0.0) throw InputError("make_language: negative noise_sigma");
  if (params.frames_per_char < 1) throw InputError("make_language: frames_per_char must be >= 1");
  if (params.parent != nullptr) {
    if (params.mutation_rate < 0.0 || params.mutation_rate > 1.0) {
      throw InputError("make_language: mutation_rate outside [0, 1]");
    }
    if (params.parent->feature_dim() != params.feature_dim) {
      throw InputError("make_language: parent feature_dim differs");
    }
  }

  LanguageSpec spec;
  spec.id = id;
  spec.code_token = params.code_token;
  spec.alphabet = params.alphabet;
  spec.codebook_seed = static_cast<std::int64_t>(seed);
  spec.noise_sigma = params.noise_sigma;
  spec.frames_per_char = params.frames_per_char;

  if (params.parent == nullptr) {
    spec.prototypes.reserve(kTextSymbolCount);
    for (std::int32_t s = 0; s < kTextSymbolCount; ++s) {
      spec.prototypes.push_back(draw_prototype(seed, s, params.feature_dim));
    }
  } else {
    const MutationPlan plan =
        mutation_plan(static_cast<std::uint64_t>(params.parent->codebook_seed),
                      params.parent->alphabet);
    const auto swaps = static_cast<std::size_t>(std::lround(
        params.mutation_rate * static_cast<double>(plan.pairs.size())));
    spec.prototypes = params.parent->prototypes;
    for (std::size_t i = 0; i < swaps; ++i) {
      std::swap(spec.prototypes[static_cast<std::size_t>(plan.pairs[i][0])],
                spec.prototypes[static_cast<std::size_t>(plan.pairs[i][1])]);
    }
    spec.parent = ParentRef{params.parent->id, params.mutation_rate};
  }

  for (std::int32_t a = 0; a < kTextSymbolCount; ++a) {
    for (std::int32_t b = a + 1; b < kTextSymbolCount; ++b) {
      if (spec.prototypes[static_cast<std::size_t>(a)].bit_equal(
              spec.prototypes[static_cast<std::size_t>(b)])) {
        throw InputError("make_language: prototypes collide for symbols " +
                         std::to_string(a) + " and " + std::to_string(b));
      }
    }
  }
  return spec;
}

double prototype_overlap(const LanguageSpec& a, const LanguageSpec& b) {
  std::int32_t same = 0;
  for (std::int32_t s = 0; s < kTextSymbolCount; ++s) {
    if (a.prototypes[static_cast<std::size_t>(s)].bit_equal(
            b.prototypes[static_cast<std::size_t>(s)])) {
      ++same;
    }
  }
  return static_cast<double>(same) / static_cast<double>(kTextSymbolCount);
}

Tensor synthesize(const LanguageSpec& spec, const std::string& text,
                  std::uint64_t utt_seed) {
  if (text.empty()) throw InputError("synthesize: empty text");
  if (static_cast<std::int64_t>(text.size()) > 1024) {
    throw InputError("synthesize: text longer than 1024 characters");
  }
  const std::int32_t dim = spec.feature_dim();
  Tensor frames({static_cast<std::int64_t>(text.size()) * spec.frames_per_char, dim});
  Rng rng(seed_mix(utt_seed, kNoiseTag));
  std::int64_t row = 0;
  for (char c : text) {
    if (spec.alphabet.find(c) == std::string::npos) {
      throw InputError(std::string("synthesize: character '") + c +
                       "' not in alphabet of language " + spec.id);
    }
    const Tensor& proto = spec.prototypes[static_cast<std::size_t>(symbol_index(c))];
    for (std::int32_t f = 0; f < spec.frames_per_char; ++f, ++row) {
      for (std::int32_t d = 0; d < dim; ++d) {
        frames.at(row, d) = proto.at(d) + spec.noise_sigma * rng.gaussian();
      }
    }
  }
  return frames;
}

Corpus generate_corpus(const LanguageSpec& spec, Split split, std::int64_t n,
                       std::uint64_t base_seed) {
  if (n < 1) throw InputError("generate_corpus: n must be >= 1");
  std::string letters;
  for (char c : spec.alphabet) {
    if (c != ' ') letters += c;
  }
  if (letters.empty()) throw InputError("generate_corpus: alphabet has no word symbols");

  Corpus corpus;
  corpus.language_id = spec.id;
  corpus.split = split;
  corpus.utterances.reserve(static_cast<std::size_t>(n));
  const std::uint64_t split_offset =
      10'000'000ull * (static_cast<std::uint64_t>(split) + 1ull);
  for (std::int64_t i = 0; i < n; ++i) {
    Utterance utt;
    utt.utt_seed = base_seed + split_offset + static_cast<std::uint64_t>(i);
    Rng rng(seed_mix(utt.utt_seed, kTextTag));
    const std::int64_t words = 3 + rng.below(10);
    std::string text;
    for (std::int64_t w = 0; w < words; ++w) {
      const std::int64_t len = 1 + rng.below(8);
      if (!text.empty() &&
          static_cast<std::int64_t>(text.size()) + 1 + len > kMaxTextChars) {
        break;
      }
      if (!text.empty()) text += ' ';
      for (std::int64_t k = 0; k < len; ++k) {
        text += letters[static_cast<std::size_t>(rng.below(
            static_cast<std::int64_t>(letters.size())))];
      }
    }
    utt.text = std::move(text);
    corpus.utterances.push_back(std::move(utt));
  }
  return corpus;
}

BatchItem make_batch_item(const LanguageSpec& spec, const Utterance& utt,
                          const Vocabulary& vocab) {
  BatchItem item;
  item.features = synthesize(spec, utt.text, utt.utt_seed);
  item.target = vocab.encode_text(utt.text);
  item.lang_code = vocab.id(spec.code_token);
  return item;
}

std::vector<BatchItem> make_batch(const LanguageSpec& spec,
                                  const std::vector<Utterance>& utts,
                                  const Vocabulary& vocab) {
  std::vector<BatchItem> batch;
  batch.reserve(utts.size());
  for (const Utterance& u : utts) batch.push_back(make_batch_item(spec, u, vocab));
  return batch;
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const Utterance& u : corpus.utterances) {
    json rec;
    rec["lang"] = corpus.language_id;
    rec["split"] = split_name(corpus.split);
    rec["text"] = u.text;
    rec["utt_seed"] = u.utt_seed;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

Corpus corpus_from_jsonl(const std::string& text) {
  Corpus corpus;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw InputError(std::string("corpus: bad JSON line: ") + e.what());
    }
    if (!rec.contains("lang") || !rec.contains("split") || !rec.contains("text") ||
        !rec.contains("utt_seed")) {
      throw InputError("corpus: record missing required fields");
    }
    if (first) {
      corpus.language_id = rec["lang"].get<std::string>();
      corpus.split = split_from_name(rec["split"].get<std::string>());
      first = false;
    } else if (corpus.language_id != rec["lang"].get<std::string>() ||
               corpus.split != split_from_name(rec["split"].get<std::string>())) {
      throw InputError("corpus: mixed languages or splits in one file");
    }
    corpus.utterances.push_back(
        Utterance{rec["text"].get<std::string>(), rec["utt_seed"].get<std::uint64_t>()});
  }
  if (first) throw InputError("corpus: no records");
  return corpus;
}

std::string roster_to_json(const std::vector<LanguageSpec>& specs) {
  json langs = json::array();
  for (const LanguageSpec& s : specs) {
    json rec;
    rec["id"] = s.id;
    rec["code_token"] = s.code_token;
    rec["alphabet"] = s.alphabet;
    rec["codebook_seed"] = s.codebook_seed;
    rec["noise_sigma"] = s.noise_sigma;
    rec["frames_per_char"] = s.frames_per_char;
    rec["feature_dim"] = s.feature_dim();
    if (s.parent) {
      rec["parent"] = json{{"id", s.parent->id}, {"mutation_rate", s.parent->mutation_rate}};
    } else {
      rec["parent"] = nullptr;
    }
    langs.push_back(std::move(rec));
  }
  return json{{"languages", std::move(langs)}}.dump(2) + "\n";
}

std::vector<LanguageSpec> roster_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("roster: bad JSON: ") + e.what());
  }
  if (!root.contains("languages") || !root["languages"].is_array()) {
    throw InputError("roster: missing 'languages' array");
  }
  std::vector<LanguageSpec> specs;
  for (const json& rec : root["languages"]) {
    for (const char* key :
         {"id", "code_token", "alphabet", "codebook_seed", "noise_sigma",
          "frames_per_char", "feature_dim"}) {
      if (!rec.contains(key)) throw InputError(std::string("roster: language missing '") + key + "'");
    }
    MakeLanguageParams params;
    params.code_token = rec["code_token"].get<std::string>();
    params.alphabet = rec["alphabet"].get<std::string>();
    params.noise_sigma = rec["noise_sigma"].get<double>();
    params.frames_per_char = rec["frames_per_char"].get<std::int32_t>();
    params.feature_dim = rec["feature_dim"].get<std::int32_t>();
    if (rec.contains("parent") && !rec["parent"].is_null()) {
      const std::string pid = rec["parent"]["id"].get<std::string>();
      const LanguageSpec* parent = nullptr;
      for (const LanguageSpec& s : specs) {
        if (s.id == pid) parent = &s;
      }
      if (parent == nullptr) {
        throw InputError("roster: parent '" + pid + "' must be defined before its child");
      }
      params.parent = parent;
      params.mutation_rate = rec["parent"]["mutation_rate"].get<double>();
    }
    specs.push_back(make_language(rec["id"].get<std::string>(),
                                  rec["codebook_seed"].get<std::uint64_t>(), params));
  }
  if (specs.empty()) throw InputError("roster: no languages");
  return specs;
}

}  // namespace clab
