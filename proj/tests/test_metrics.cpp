// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <string>

#include "clab/common.hpp"
#include "clab/metrics.hpp"
#include "clab/rng.hpp"

using namespace clab;

namespace {

// Exhaustive-recursion Levenshtein, the independent oracle for the DP.
std::int64_t lev_oracle(const char* a, std::size_t la, const char* b, std::size_t lb) {
  if (la == 0) return static_cast<std::int64_t>(lb);
  if (lb == 0) return static_cast<std::int64_t>(la);
  if (*a == *b) return lev_oracle(a + 1, la - 1, b + 1, lb - 1);
  const std::int64_t del = lev_oracle(a + 1, la - 1, b, lb);
  const std::int64_t ins = lev_oracle(a, la, b + 1, lb - 1);
  const std::int64_t sub = lev_oracle(a + 1, la - 1, b + 1, lb - 1);
  return 1 + std::min({del, ins, sub});
}

std::int64_t lev_oracle(const std::string& a, const std::string& b) {
  return lev_oracle(a.data(), a.size(), b.data(), b.size());
}

std::int64_t dp_distance(const std::string& a, const std::string& b) {
  return edit_distance(tokenize(a, ScoreUnit::kChar), tokenize(b, ScoreUnit::kChar)).distance;
}

std::string random_string(Rng& rng, std::int64_t max_len, const char* alphabet) {
  const std::int64_t len = rng.below(max_len + 1);
  std::string s;
  for (std::int64_t i = 0; i < len; ++i) {
    s += alphabet[rng.below(static_cast<std::int64_t>(std::char_traits<char>::length(alphabet)))];
  }
  return s;
}

}  // namespace

TEST_CASE("normalization lowers case, strips punctuation, collapses whitespace") {
  CHECK(normalize_text("Hello,   World!") == "hello world");
  CHECK(normalize_text("  a\tb\nc  ") == "a b c");
  CHECK(normalize_text("don't--stop") == "dontstop");
  CHECK(normalize_text("...") == "");
}

TEST_CASE("normalization is idempotent") {
  Rng rng(17);
  const char* alphabet = "aB c,.'!-Xz ";
  for (int i = 0; i < 200; ++i) {
    std::string s = random_string(rng, 20, alphabet);
    CHECK(normalize_text(normalize_text(s)) == normalize_text(s));
  }
}

TEST_CASE("edit distance basics") {
  CHECK(dp_distance("abc", "abc") == 0);
  EditOps grow = edit_distance({}, tokenize("abc", ScoreUnit::kChar));
  CHECK(grow.distance == 3);
  CHECK(grow.insertions == 3);
  CHECK(grow.substitutions == 0);
  CHECK(grow.deletions == 0);
  EditOps shrink = edit_distance(tokenize("abc", ScoreUnit::kChar), {});
  CHECK(shrink.distance == 3);
  CHECK(shrink.deletions == 3);
  CHECK(dp_distance("kitten", "sitting") == 3);
  CHECK(lev_oracle("kitten", "sitting") == 3);
}

TEST_CASE("DP distance equals the exhaustive oracle on random short pairs") {
  Rng rng(5);
  for (int i = 0; i < 400; ++i) {
    std::string a = random_string(rng, 6, "abc");
    std::string b = random_string(rng, 6, "abc");
    EditOps ops = edit_distance(tokenize(a, ScoreUnit::kChar), tokenize(b, ScoreUnit::kChar));
    CHECK(ops.distance == lev_oracle(a, b));
    CHECK(ops.distance == ops.substitutions + ops.insertions + ops.deletions);
    const auto la = static_cast<std::int64_t>(a.size());
    const auto lb = static_cast<std::int64_t>(b.size());
    CHECK(ops.distance >= std::abs(la - lb));
    CHECK(ops.distance <= std::max(la, lb));
  }
}

TEST_CASE("triangle inequality holds on oracle-checked triples") {
  Rng rng(6);
  for (int i = 0; i < 150; ++i) {
    std::string a = random_string(rng, 6, "abc");
    std::string b = random_string(rng, 6, "abc");
    std::string c = random_string(rng, 6, "abc");
    CHECK(lev_oracle(a, c) <= lev_oracle(a, b) + lev_oracle(b, c));
    CHECK(dp_distance(a, c) <= dp_distance(a, b) + dp_distance(b, c));
  }
}

TEST_CASE("corpus score: exact hypotheses give rate zero") {
  std::vector<std::pair<std::string, std::string>> pairs = {
      {"hello there", "hello there"}, {"abc", "abc"}};
  ScoreReport rep = corpus_score(pairs, ScoreUnit::kChar);
  CHECK(rep.rate == 0.0);
  CHECK(rep.substitutions + rep.insertions + rep.deletions == 0);
}

TEST_CASE("dropping the last of five words costs WER 0.2") {
  const std::string ref = "tá cuma chiallmhar air seo";
  const std::string hyp = "tá cuma chiallmhar air";
  ScoreReport rep = corpus_score({{hyp, ref}}, ScoreUnit::kWord);
  CHECK(rep.ref_length == 5);
  CHECK(rep.deletions == 1);
  CHECK(rep.rate == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("micro averaging sums distances over summed lengths") {
  // distances {0, 2} against reference lengths {2, 2} -> 0.5
  ScoreReport rep = corpus_score({{"ab", "ab"}, {"xy", "cd"}}, ScoreUnit::kChar);
  CHECK(rep.ref_length == 4);
  CHECK(rep.rate == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("rates above one are reported unclamped") {
  ScoreReport rep = corpus_score({{"abcdef", "x"}}, ScoreUnit::kChar);
  CHECK(rep.rate > 1.0);
}

TEST_CASE("empty references are excluded and counted") {
  ScoreReport rep = corpus_score({{"abc", "..."}, {"ab", "ab"}}, ScoreUnit::kChar);
  CHECK(rep.excluded == 1);
  CHECK(rep.ref_length == 2);
  CHECK_THROWS_AS(corpus_score({{"abc", "..."}}, ScoreUnit::kChar), InputError);
  CHECK_THROWS_AS(corpus_score({}, ScoreUnit::kChar), InputError);
}

TEST_CASE("code affinity coverage") {
  CHECK(code_affinity({"abc ab"}, {"cab"}, ScoreUnit::kChar) == 1.0);
  CHECK(code_affinity({"abc"}, {"xyz"}, ScoreUnit::kChar) == 0.0);
  CHECK(code_affinity({"aab"}, {"a"}, ScoreUnit::kChar) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(code_affinity({"cat dog"}, {"dog bird"}, ScoreUnit::kWord) ==
        doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("enlarging the source inventory never decreases coverage affinity") {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    std::string target = random_string(rng, 12, "abcdef ");
    std::string source = random_string(rng, 12, "abc ");
    std::string extra = random_string(rng, 12, "def ");
    if (normalize_text(target).empty() || normalize_text(source).empty()) continue;
    const double small = code_affinity({target}, {source}, ScoreUnit::kChar);
    const double large = code_affinity({target}, {source, extra}, ScoreUnit::kChar);
    CHECK(large >= small);
  }
}

TEST_CASE("jaccard affinity mode") {
  // target units {a, b}; source units {b, c}: intersection 1, union 3
  CHECK(code_affinity({"ab ba"}, {"bc cb"}, ScoreUnit::kChar, AffinityMode::kJaccard) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}
