// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/metrics.hpp"

#include <cctype>
#include <set>
#include <unordered_set>

#include "clab/common.hpp"

namespace clab {

std::string normalize_text(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = true;
      continue;
    }
    if (c < 0x80 && std::ispunct(c)) continue;
    if (pending_space && !out.empty()) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

EditOps edit_distance(const std::vector<std::string>& ref,
                      const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  struct Cell {
    std::int64_t dist, s, i, d;
  };
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {static_cast<std::int64_t>(j), 0,
                                                  static_cast<std::int64_t>(j), 0};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {static_cast<std::int64_t>(i), 0, 0, static_cast<std::int64_t>(i)};
    for (std::size_t j = 1; j <= m; ++j) {
      const bool match = ref[i - 1] == hyp[j - 1];
      Cell diag = prev[j - 1];
      diag.dist += match ? 0 : 1;
      diag.s += match ? 0 : 1;
      Cell del = prev[j];
      del.dist += 1;
      del.d += 1;
      Cell ins = cur[j - 1];
      ins.dist += 1;
      ins.i += 1;
      // deterministic tie-break: diagonal, then deletion, then insertion
      Cell best = diag;
      if (del.dist < best.dist) best = del;
      if (ins.dist < best.dist) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell& c = prev[m];
  return EditOps{c.dist, c.s, c.i, c.d};
}

std::vector<std::string> tokenize(const std::string& text, ScoreUnit unit) {
  std::vector<std::string> out;
  if (unit == ScoreUnit::kChar) {
    out.reserve(text.size());
    for (char c : text) out.emplace_back(1, c);
    return out;
  }
  std::string word;
  for (char c : text) {
    if (c == ' ') {
      if (!word.empty()) out.push_back(std::move(word));
      word.clear();
    } else {
      word += c;
    }
  }
  if (!word.empty()) out.push_back(std::move(word));
  return out;
}

ScoreReport corpus_score(const std::vector<std::pair<std::string, std::string>>& hyp_ref,
                         ScoreUnit unit) {
  if (hyp_ref.empty()) throw InputError("corpus_score: empty pair list");
  ScoreReport rep;
  for (const auto& [hyp, ref] : hyp_ref) {
    const std::string nref = normalize_text(ref);
    if (nref.empty()) {
      ++rep.excluded;
      continue;
    }
    const std::vector<std::string> r = tokenize(nref, unit);
    const std::vector<std::string> h = tokenize(normalize_text(hyp), unit);
    EditOps ops = edit_distance(r, h);
    rep.substitutions += ops.substitutions;
    rep.insertions += ops.insertions;
    rep.deletions += ops.deletions;
    rep.ref_length += static_cast<std::int64_t>(r.size());
  }
  if (rep.ref_length == 0) {
    throw InputError("corpus_score: no non-empty references after normalization");
  }
  rep.rate = static_cast<double>(rep.substitutions + rep.insertions + rep.deletions) /
             static_cast<double>(rep.ref_length);
  return rep;
}

double code_affinity(const std::vector<std::string>& target_texts,
                     const std::vector<std::string>& source_texts, ScoreUnit unit,
                     AffinityMode mode) {
  if (target_texts.empty() || source_texts.empty()) {
    throw InputError("code_affinity: empty text list");
  }
  auto units_of = [&](const std::vector<std::string>& texts) {
    std::vector<std::string> all;
    for (const std::string& t : texts) {
      for (std::string& u : tokenize(normalize_text(t), unit)) {
        if (u != " ") all.push_back(std::move(u));
      }
    }
    return all;
  };
  const std::vector<std::string> target = units_of(target_texts);
  const std::vector<std::string> source = units_of(source_texts);
  if (target.empty() || source.empty()) {
    throw InputError("code_affinity: no units after normalization");
  }
  const std::unordered_set<std::string> inventory(source.begin(), source.end());

  if (mode == AffinityMode::kCoverage) {
    std::int64_t covered = 0;
    for (const std::string& u : target) {
      if (inventory.count(u)) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(target.size());
  }
  const std::set<std::string> tset(target.begin(), target.end());
  std::int64_t inter = 0;
  for (const std::string& u : tset) {
    if (inventory.count(u)) ++inter;
  }
  std::set<std::string> uni(target.begin(), target.end());
  uni.insert(source.begin(), source.end());
  return static_cast<double>(inter) / static_cast<double>(uni.size());
}

}  // namespace clab
