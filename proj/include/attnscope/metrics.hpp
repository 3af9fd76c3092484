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

#ifndef ATTNSCOPE_METRICS_HPP
#define ATTNSCOPE_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace attnscope {

// Indices sorted by descending score; equal scores keep ascending index.
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return order;
}

// Average precision of the ranking induced by `scores`. Returns 0 when there
// is no positive label.
inline double average_precision(std::span<const std::uint8_t> labels,
                                std::span<const double> scores) {
  if (labels.size() != scores.size())
    throw std::invalid_argument("average_precision: length mismatch");
  if (labels.empty()) throw std::invalid_argument("average_precision: empty input");
  const auto order = descending_order(scores);
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      hits += 1.0;
      sum += hits / static_cast<double>(rank + 1);
    }
  }
  return hits > 0.0 ? sum / hits : 0.0;
}

namespace detail {

inline double log_softmax_at(std::span<const double> logits, std::size_t index) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - peak);
  return logits[index] - peak - std::log(total);
}

inline void check_scored(const std::vector<std::vector<double>>& logits,
                         std::span<const std::int32_t> tokens, const char* who) {
  if (logits.empty() || logits.size() != tokens.size())
    throw std::invalid_argument(std::string(who) + ": need one logit row per token");
  for (std::size_t k = 0; k < tokens.size(); ++k)
    if (tokens[k] < 0 || static_cast<std::size_t>(tokens[k]) >= logits[k].size())
      throw std::invalid_argument(std::string(who) + ": token outside vocabulary");
}

}  // namespace detail

// exp of the mean negative log-probability of `tokens` under `logits`.
inline double perplexity(const std::vector<std::vector<double>>& logits,
                         std::span<const std::int32_t> tokens) {
  detail::check_scored(logits, tokens, "perplexity");
  double nll = 0.0;
  for (std::size_t k = 0; k < tokens.size(); ++k)
    nll -= detail::log_softmax_at(logits[k], static_cast<std::size_t>(tokens[k]));
  return std::exp(nll / static_cast<double>(tokens.size()));
}

// Mean raw logit assigned to `tokens`.
inline double mean_logit(const std::vector<std::vector<double>>& logits,
                         std::span<const std::int32_t> tokens) {
  detail::check_scored(logits, tokens, "mean_logit");
  double sum = 0.0;
  for (std::size_t k = 0; k < tokens.size(); ++k)
    sum += logits[k][static_cast<std::size_t>(tokens[k])];
  return sum / static_cast<double>(tokens.size());
}

inline std::size_t lcs_length(std::span<const std::int32_t> a,
                              std::span<const std::int32_t> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// LCS-based F1 over token ids.
inline double rouge_l_f1(std::span<const std::int32_t> reference,
                         std::span<const std::int32_t> hypothesis) {
  if (reference.empty()) throw std::invalid_argument("rouge_l: empty reference");
  if (hypothesis.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(reference, hypothesis));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(hypothesis.size());
  const double recall = lcs / static_cast<double>(reference.size());
  return 2.0 * precision * recall / (precision + recall);
}

// BLEU-4 for one reference/hypothesis pair: geometric mean of clipped n-gram
// precisions (n = 1..4, uniform weights) times the brevity penalty. An order
// with no clipped match contributes (0 + 1) / (count + 1) instead of zero.
inline double bleu(std::span<const std::int32_t> reference,
                   std::span<const std::int32_t> hypothesis) {
  if (reference.empty() || hypothesis.empty()) return 0.0;
  constexpr std::size_t kMaxOrder = 4;
  using Gram = std::vector<std::int32_t>;
  const auto count = [](std::span<const std::int32_t> seq, std::size_t n) {
    std::map<Gram, std::size_t> out;
    for (std::size_t i = 0; i + n <= seq.size(); ++i)
      ++out[Gram(seq.begin() + static_cast<std::ptrdiff_t>(i),
                 seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return out;
  };
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const auto hyp = count(hypothesis, n);
    const auto ref = count(reference, n);
    std::size_t matched = 0, total = 0;
    for (const auto& [gram, c] : hyp) {
      total += c;
      const auto it = ref.find(gram);
      if (it != ref.end()) matched += std::min(c, it->second);
    }
    const double p = matched > 0
                         ? static_cast<double>(matched) / static_cast<double>(total)
                         : 1.0 / static_cast<double>(total + 1);
    log_sum += std::log(p) / static_cast<double>(kMaxOrder);
  }
  const double r = static_cast<double>(reference.size());
  const double h = static_cast<double>(hypothesis.size());
  const double brevity = h < r ? std::exp(1.0 - r / h) : 1.0;
  return brevity * std::exp(log_sum);
}

}  // namespace attnscope

#endif  // ATTNSCOPE_METRICS_HPP
