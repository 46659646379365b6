// Copyright 2026 The Graphcap Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "graphcap/metrics.hpp"
#include "graphcap/random.hpp"
#include "oracles.hpp"

namespace graphcap {
namespace {

TokenSeq toks(const std::string& sentence) {
  TokenSeq out;
  std::string word;
  for (char c : sentence) {
    if (c == ' ') {
      if (!word.empty()) out.push_back(word);
      word.clear();
    } else {
      word.push_back(c);
    }
  }
  if (!word.empty()) out.push_back(word);
  return out;
}

struct Corpus {
  std::vector<TokenSeq> cands;
  std::vector<std::vector<TokenSeq>> refs;
};

Corpus random_corpus(Rng& rng, std::size_t min_clips = 2,
                     std::size_t max_len = 10) {
  const std::size_t n_clips = rng.range(min_clips, 5);
  Corpus c;
  const auto sentence = [&]() {
    TokenSeq s;
    const std::size_t len = rng.range(1, max_len);
    for (std::size_t i = 0; i < len; ++i)
      s.push_back("w" + std::to_string(rng.range(0, 7)));
    return s;
  };
  for (std::size_t i = 0; i < n_clips; ++i) {
    c.cands.push_back(sentence());
    std::vector<TokenSeq> refs;
    const std::size_t n_refs = rng.range(1, 3);
    for (std::size_t r = 0; r < n_refs; ++r) refs.push_back(sentence());
    c.refs.push_back(std::move(refs));
  }
  return c;
}

TEST(Bleu, CandidateEqualToSoleReferenceScoresOne) {
  const std::vector<TokenSeq> cands{toks("dog barks at the door")};
  const std::vector<std::vector<TokenSeq>> refs{
      {toks("dog barks at the door")}};
  for (std::size_t n = 1; n <= 4; ++n)
    EXPECT_DOUBLE_EQ(bleu_n(cands, refs, n), 1.0) << "n=" << n;
}

TEST(Bleu, NoOverlapScoresZeroWithoutSmoothing) {
  const std::vector<TokenSeq> cands{toks("a b c")};
  const std::vector<std::vector<TokenSeq>> refs{{toks("x y z")}};
  for (std::size_t n = 1; n <= 4; ++n)
    EXPECT_DOUBLE_EQ(bleu_n(cands, refs, n), 0.0);
}

TEST(Bleu, BrevityPenaltyFollowsClosedForm) {
  // Perfect precision, candidate half the reference length.
  const std::vector<TokenSeq> cands{toks("a b")};
  const std::vector<std::vector<TokenSeq>> refs{{toks("a b c d")}};
  EXPECT_NEAR(bleu_n(cands, refs, 2), std::exp(1.0 - 4.0 / 2.0), 1e-12);
}

TEST(Bleu, ClosestReferenceLengthTieBreaksShorter) {
  // Candidate length 3; references at distance 1 on both sides. Taking the
  // shorter (length 2) means no brevity penalty at all.
  const std::vector<TokenSeq> cands{toks("a b c")};
  const std::vector<std::vector<TokenSeq>> refs{
      {toks("a b"), toks("a b c d")}};
  EXPECT_DOUBLE_EQ(bleu_n(cands, refs, 2), 1.0);
}

TEST(Bleu, ClippingLimitsRepeatedTokens) {
  // "the the the" against a reference with a single "the": clipped unigram
  // count is 1 of 3.
  const std::vector<TokenSeq> cands{toks("the the the")};
  const std::vector<std::vector<TokenSeq>> refs{{toks("the cat sat")}};
  EXPECT_NEAR(bleu_n(cands, refs, 1), 1.0 / 3.0, 1e-12);
}

TEST(Bleu, MatchesBruteForceOracleOnSmallCorpora) {
  Rng rng(41);
  for (int draw = 0; draw < 10; ++draw) {
    Corpus c = random_corpus(rng, 5, 8);
    c.cands.resize(5);
    c.refs.resize(5);
    for (std::size_t n = 1; n <= 4; ++n)
      for (bool smoothing : {false, true}) {
        BleuOptions opts{smoothing};
        EXPECT_NEAR(bleu_n(c.cands, c.refs, n, opts),
                    oracle::bleu(c.cands, c.refs, n, smoothing), 1e-12)
            << "draw " << draw << " n " << n << " smoothing " << smoothing;
      }
  }
}

TEST(Bleu, UnigramMatchGrowthNeverLowersScore) {
  // Fixed-length comparison: candidates all length 6 (brevity penalty
  // constant), with an increasing number of matching unigrams.
  const std::vector<std::vector<TokenSeq>> refs{
      {toks("a a a a a a")}};
  double prev = -1.0;
  for (std::size_t matches = 0; matches <= 6; ++matches) {
    TokenSeq cand;
    for (std::size_t i = 0; i < matches; ++i) cand.push_back("a");
    for (std::size_t i = matches; i < 6; ++i)
      cand.push_back("x" + std::to_string(i));
    const double score = bleu_n({cand}, refs, 1);
    EXPECT_GE(score, prev);
    prev = score;
  }
  EXPECT_DOUBLE_EQ(prev, 1.0);
}

TEST(Bleu, RejectsBadInput) {
  EXPECT_THROW(bleu_n({}, {}, 1), std::invalid_argument);
  EXPECT_THROW(bleu_n({toks("a")}, {{}}, 1), std::invalid_argument);
  EXPECT_THROW(bleu_n({toks("a")}, {{toks("a")}}, 5), std::invalid_argument);
}

TEST(RougeL, IdentityScoresOne) {
  EXPECT_DOUBLE_EQ(rouge_l_clip(toks("water drips slowly"),
                                {toks("water drips slowly")}),
                   1.0);
}

TEST(RougeL, PinnedExampleFollowsFormula) {
  // LCS("a b c d", "a c d") = 3, P = 3/4, R = 1.
  const double beta = 1.2;
  const double p = 0.75, r = 1.0;
  const double expected = (1.0 + beta * beta) * p * r / (r + beta * beta * p);
  EXPECT_NEAR(rouge_l_clip(toks("a b c d"), {toks("a c d")}, beta), expected,
              1e-12);
}

TEST(RougeL, TakesBestReference) {
  const double score = rouge_l_clip(
      toks("a b c"), {toks("z z z"), toks("a b c")});
  EXPECT_DOUBLE_EQ(score, 1.0);
}

TEST(RougeL, LcsMatchesExhaustiveSubsequenceSearch) {
  Rng rng(42);
  for (int draw = 0; draw < 20; ++draw) {
    TokenSeq a, b;
    const std::size_t la = rng.range(1, 10), lb = rng.range(1, 10);
    for (std::size_t i = 0; i < la; ++i)
      a.push_back("w" + std::to_string(rng.range(0, 5)));
    for (std::size_t i = 0; i < lb; ++i)
      b.push_back("w" + std::to_string(rng.range(0, 5)));
    EXPECT_EQ(lcs_length(a, b), oracle::lcs_exhaustive(a, b));
  }
}

TEST(RougeL, EmptyCandidateScoresZero) {
  EXPECT_DOUBLE_EQ(rouge_l_clip({}, {toks("a b")}), 0.0);
}

TEST(CiderD, IdentityCandidateScoresTen) {
  // Both clips have candidates identical to their sole reference and at
  // least four tokens, so every order has cosine 1 and no length gap.
  const std::vector<TokenSeq> cands{toks("dog barks at the door"),
                                    toks("rain falls on the roof")};
  const std::vector<std::vector<TokenSeq>> refs{
      {toks("dog barks at the door")}, {toks("rain falls on the roof")}};
  const auto scores = cider_d_per_clip(cands, refs);
  EXPECT_NEAR(scores[0], 10.0, 1e-12);
  EXPECT_NEAR(scores[1], 10.0, 1e-12);
  EXPECT_NEAR(cider_d(cands, refs), 10.0, 1e-12);
}

TEST(CiderD, DisjointCandidateScoresZero) {
  const std::vector<TokenSeq> cands{toks("x y z q"),
                                    toks("rain falls on the roof")};
  const std::vector<std::vector<TokenSeq>> refs{
      {toks("dog barks at the door")}, {toks("rain falls on the roof")}};
  EXPECT_DOUBLE_EQ(cider_d_per_clip(cands, refs)[0], 0.0);
}

TEST(CiderD, MatchesDirectFormulaOracleOnToyCorpus) {
  const std::vector<TokenSeq> cands{
      toks("dog barks loudly"), toks("rain falls on roof"),
      toks("a car engine hums"), toks("dog barks")};
  const std::vector<std::vector<TokenSeq>> refs{
      {toks("a dog barks loudly"), toks("dog barks")},
      {toks("rain falls on the roof")},
      {toks("car engine hums softly"), toks("an engine idles")},
      {toks("a dog barks"), toks("dog barking")}};
  EXPECT_NEAR(cider_d(cands, refs), oracle::cider(cands, refs, 6.0), 1e-9);
}

TEST(CiderD, SingleClipCorpusNamesIdfDegeneracy) {
  try {
    cider_d({toks("a b")}, {{toks("a b")}});
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("IDF"), std::string::npos);
  }
}

TEST(AllMetrics, AgreeWithOraclesOnRandomCorpora) {
  Rng rng(43);
  for (int draw = 0; draw < 20; ++draw) {
    const Corpus c = random_corpus(rng);
    for (std::size_t n = 1; n <= 4; ++n)
      EXPECT_NEAR(bleu_n(c.cands, c.refs, n),
                  oracle::bleu(c.cands, c.refs, n, false), 1e-9)
          << "draw " << draw;
    EXPECT_NEAR(rouge_l(c.cands, c.refs), oracle::rouge(c.cands, c.refs, 1.2),
                1e-9);
    EXPECT_NEAR(cider_d(c.cands, c.refs), oracle::cider(c.cands, c.refs, 6.0),
                1e-9);
  }
}

TEST(AllMetrics, InvariantUnderClipReordering) {
  Rng rng(44);
  Corpus c = random_corpus(rng, 4);
  Corpus shuffled = c;
  std::vector<std::size_t> perm(c.cands.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.cands[i] = c.cands[perm[i]];
    shuffled.refs[i] = c.refs[perm[i]];
  }
  for (std::size_t n = 1; n <= 4; ++n)
    EXPECT_NEAR(bleu_n(c.cands, c.refs, n),
                bleu_n(shuffled.cands, shuffled.refs, n), 1e-12);
  EXPECT_NEAR(rouge_l(c.cands, c.refs),
              rouge_l(shuffled.cands, shuffled.refs), 1e-12);
  EXPECT_NEAR(cider_d(c.cands, c.refs),
              cider_d(shuffled.cands, shuffled.refs), 1e-12);
}

TEST(Report, ReferencesAsCandidatesScorePerfectly) {
  const std::vector<TokenSeq> cands{toks("dog barks at the door"),
                                    toks("rain falls on the roof")};
  const std::vector<std::vector<TokenSeq>> refs{
      {toks("dog barks at the door")}, {toks("rain falls on the roof")}};
  const MetricReport report = score_corpus(cands, refs);
  for (double b : report.bleu) EXPECT_DOUBLE_EQ(b, 1.0);
  EXPECT_DOUBLE_EQ(report.rouge_l, 1.0);
  EXPECT_NEAR(report.cider_d, 10.0, 1e-12);
}

TEST(Report, FieldsAndSerializationAreConsistent) {
  Rng rng(45);
  const Corpus c = random_corpus(rng, 3);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < c.cands.size(); ++i)
    ids.push_back("clip" + std::to_string(i));
  const MetricReport report = score_corpus(c.cands, c.refs, ids);
  EXPECT_TRUE(report.spider_is_partial);
  EXPECT_DOUBLE_EQ(report.spider_partial, report.cider_d / 2.0);
  ASSERT_EQ(report.per_clip.size(), c.cands.size());
  for (std::size_t i = 0; i < report.per_clip.size(); ++i) {
    EXPECT_EQ(report.per_clip[i].clip_id, ids[i]);
    EXPECT_GE(report.per_clip[i].rouge_l, 0.0);
    EXPECT_LE(report.per_clip[i].rouge_l, 1.0);
    EXPECT_GE(report.per_clip[i].cider_d, 0.0);
    EXPECT_LE(report.per_clip[i].cider_d, 10.0);
  }
  for (std::size_t n = 0; n < 4; ++n) {
    EXPECT_GE(report.bleu[n], 0.0);
    EXPECT_LE(report.bleu[n], 1.0);
  }

  const std::string records = metric_records(report);
  EXPECT_NE(records.find("corpus\t"), std::string::npos);
  EXPECT_NE(records.find("spider_flag=partial"), std::string::npos);
  EXPECT_NE(records.find("clip\tclip0\t"), std::string::npos);
  std::size_t lines = 0;
  for (char ch : records) lines += ch == '\n' ? 1 : 0;
  EXPECT_EQ(lines, 1 + report.per_clip.size());

  const std::string table = metric_table(report);
  EXPECT_NE(table.find("BLEU-4"), std::string::npos);
  EXPECT_NE(table.find("partial"), std::string::npos);
}

}  // namespace
}  // namespace graphcap
