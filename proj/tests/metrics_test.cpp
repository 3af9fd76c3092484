/*
 * Copyright 2026 The attnscope Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "attnscope/metrics.hpp"
#include "attnscope/rng.hpp"
#include "support/oracles.hpp"

namespace attnscope {
namespace {

using Labels = std::vector<std::uint8_t>;
using Scores = std::vector<double>;
using Tokens = std::vector<std::int32_t>;

TEST(AveragePrecision, Examples) {
  EXPECT_DOUBLE_EQ(average_precision(Labels{1, 0}, Scores{0.9, 0.1}), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(Labels{0, 1}, Scores{0.9, 0.1}), 0.5);
  EXPECT_DOUBLE_EQ(average_precision(Labels{0, 0}, Scores{0.3, 0.7}), 0.0);
}

TEST(AveragePrecision, TiesBrokenByPosition) {
  // Equal scores: position 0 ranks first.
  EXPECT_DOUBLE_EQ(average_precision(Labels{1, 0}, Scores{0.5, 0.5}), 1.0);
  EXPECT_DOUBLE_EQ(average_precision(Labels{0, 1}, Scores{0.5, 0.5}), 0.5);
}

TEST(AveragePrecision, Errors) {
  EXPECT_THROW(average_precision(Labels{1}, Scores{0.1, 0.2}), std::invalid_argument);
  EXPECT_THROW(average_precision(Labels{}, Scores{}), std::invalid_argument);
}

TEST(AveragePrecision, MatchesThresholdEnumeration) {
  Rng rng(10);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    Labels y(n);
    Scores s(n);
    for (auto& v : y) v = static_cast<std::uint8_t>(rng.below(2));
    // coarse scores so ties occur
    for (auto& v : s) v = static_cast<double>(rng.below(4));
    EXPECT_NEAR(average_precision(y, s), oracle::average_precision_by_enumeration(y, s), 1e-15);
  }
}

TEST(Perplexity, UniformLogitsGiveVocabSize) {
  const std::vector<std::vector<double>> logits(3, std::vector<double>(16, 0.25));
  EXPECT_NEAR(perplexity(logits, Tokens{1, 5, 9}), 16.0, 1e-9);
}

TEST(Perplexity, CertaintyGivesOne) {
  std::vector<std::vector<double>> logits(2, std::vector<double>(16, -1e4));
  logits[0][3] = 0.0;
  logits[1][7] = 0.0;
  EXPECT_NEAR(perplexity(logits, Tokens{3, 7}), 1.0, 1e-12);
}

TEST(Perplexity, HalfUniformHalfCertain) {
  std::vector<std::vector<double>> logits(4, std::vector<double>(16, 0.0));
  for (int k : {1, 3}) {
    std::fill(logits[k].begin(), logits[k].end(), -1e4);
    logits[k][2] = 0.0;
  }
  // exp(0.5 * ln 16) = 4
  EXPECT_NEAR(perplexity(logits, Tokens{0, 2, 0, 2}), 4.0, 1e-9);
}

TEST(Perplexity, Errors) {
  const std::vector<std::vector<double>> logits(1, std::vector<double>(4, 0.0));
  EXPECT_THROW(perplexity(logits, Tokens{}), std::invalid_argument);
  EXPECT_THROW(perplexity(logits, Tokens{9}), std::invalid_argument);
}

TEST(MeanLogit, AveragesSelectedEntries) {
  const std::vector<std::vector<double>> logits{{1.0, 2.0}, {3.0, -5.0}};
  EXPECT_DOUBLE_EQ(mean_logit(logits, Tokens{1, 0}), 2.5);
}

TEST(RougeL, Examples) {
  EXPECT_DOUBLE_EQ(rouge_l_f1(Tokens{1, 2, 3}, Tokens{1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(rouge_l_f1(Tokens{1, 2, 3}, Tokens{4, 5}), 0.0);
  // LCS 3, P = 1, R = 0.75 -> 6/7
  EXPECT_NEAR(rouge_l_f1(Tokens{1, 2, 3, 4}, Tokens{1, 3, 4}), 6.0 / 7.0, 1e-12);
  EXPECT_NEAR(6.0 / 7.0, 0.8571, 1e-4);
  EXPECT_THROW(rouge_l_f1(Tokens{}, Tokens{1}), std::invalid_argument);
  EXPECT_DOUBLE_EQ(rouge_l_f1(Tokens{1}, Tokens{}), 0.0);
}

TEST(RougeL, LcsAgainstSubsequenceEnumeration) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Tokens a(1 + rng.below(7)), b(1 + rng.below(7));
    for (auto& v : a) v = static_cast<std::int32_t>(rng.below(3));
    for (auto& v : b) v = static_cast<std::int32_t>(rng.below(3));
    // longest subsequence of `a` (all 2^|a| masks) that is a subsequence of `b`
    std::size_t best = 0;
    for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
      Tokens sub;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (mask & (1u << i)) sub.push_back(a[i]);
      std::size_t j = 0;
      for (std::size_t i = 0; i < b.size() && j < sub.size(); ++i)
        if (b[i] == sub[j]) ++j;
      if (j == sub.size()) best = std::max(best, sub.size());
    }
    EXPECT_EQ(lcs_length(a, b), best);
  }
}

TEST(Bleu, IdenticalIsOne) {
  EXPECT_NEAR(bleu(Tokens{1, 2, 3, 4, 5}, Tokens{1, 2, 3, 4, 5}), 1.0, 1e-12);
}

TEST(Bleu, BrevityPenaltyOnMatchingPrefix) {
  const Tokens ref{1, 2, 3, 4, 5, 6, 7, 8}, hyp{1, 2, 3, 4, 5, 6};
  EXPECT_NEAR(bleu(ref, hyp), std::exp(1.0 - 8.0 / 6.0), 1e-12);
}

TEST(Bleu, RepeatedPairAgainstCountingOracle) {
  const Tokens ref{0, 1, 0, 1}, hyp{0, 1};
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto [m, t] = oracle::clipped_ngram_counts(ref, hyp, n);
    const double p = m > 0 ? double(m) / double(t) : 1.0 / double(t + 1);
    log_sum += std::log(p) / 4.0;
  }
  const double expected = std::exp(1.0 - 4.0 / 2.0) * std::exp(log_sum);
  EXPECT_NEAR(bleu(ref, hyp), expected, 1e-12);
  EXPECT_NEAR(bleu(ref, hyp), std::exp(-1.0), 1e-12);
}

TEST(Bleu, RandomPairsAgainstCountingOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Tokens ref(1 + rng.below(9)), hyp(1 + rng.below(9));
    for (auto& v : ref) v = static_cast<std::int32_t>(rng.below(3));
    for (auto& v : hyp) v = static_cast<std::int32_t>(rng.below(3));
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto [m, t] = oracle::clipped_ngram_counts(ref, hyp, n);
      log_sum += std::log(m > 0 ? double(m) / double(t) : 1.0 / double(t + 1)) / 4.0;
    }
    const double r = double(ref.size()), h = double(hyp.size());
    const double bp = h < r ? std::exp(1.0 - r / h) : 1.0;
    EXPECT_NEAR(bleu(ref, hyp), bp * std::exp(log_sum), 1e-12);
  }
}

}  // namespace
}  // namespace attnscope
