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

#ifndef ATTNSCOPE_TESTS_SYNTHETIC_HPP
#define ATTNSCOPE_TESTS_SYNTHETIC_HPP

// Hand-built attention traces for tests.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "attnscope/rng.hpp"
#include "attnscope/trace.hpp"

namespace attnscope::synthetic {

// Token metadata: `instruction` leading instruction tokens, the rest of the
// N inputs are context, followed by one generated token per step.
inline std::vector<TokenMeta> make_tokens(std::size_t input_len, std::size_t steps,
                                          std::size_t instruction = 0) {
  std::vector<TokenMeta> out;
  for (std::size_t p = 0; p < input_len + steps; ++p) {
    const Segment seg = p >= input_len     ? Segment::Generated
                        : p < instruction ? Segment::InstructionPrompt
                                          : Segment::Context;
    out.push_back({static_cast<std::int32_t>(p % 50), static_cast<std::int32_t>(p), seg,
                   "w" + std::to_string(p)});
  }
  return out;
}

using RowFill = std::function<void(std::uint32_t step, std::size_t layer, std::size_t head,
                                   std::span<float> row)>;

inline AttentionTrace make_trace(std::size_t layers, std::size_t heads, std::size_t input_len,
                                 std::size_t steps, const RowFill& fill,
                                 std::size_t instruction = 0) {
  AttentionTrace t;
  t.last_layer = static_cast<std::uint32_t>(layers - 1);
  t.heads = static_cast<std::uint32_t>(heads);
  t.input_len = static_cast<std::uint32_t>(input_len);
  t.tokens = make_tokens(input_len, steps, instruction);
  for (std::uint32_t k = 1; k <= steps; ++k) {
    StepAttention s(k, layers, heads, input_len + k - 1);
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t h = 0; h < heads; ++h) fill(k, l, h, s.row(l, h));
    t.steps.push_back(std::move(s));
  }
  return t;
}

inline AttentionTrace uniform_trace(std::size_t layers, std::size_t heads, std::size_t input_len,
                                    std::size_t steps) {
  return make_trace(layers, heads, input_len, steps,
                    [](std::uint32_t, std::size_t, std::size_t, std::span<float> row) {
                      for (auto& w : row) w = 1.0f / static_cast<float>(row.size());
                    });
}

// Positive weights normalised to one; `spread` controls peakiness.
inline void random_row(Rng& rng, std::span<float> row, double spread = 1.5) {
  std::vector<double> w(row.size());
  double total = 0.0;
  for (auto& v : w) total += (v = std::exp(spread * rng.normal()));
  for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<float>(w[i] / total);
}

inline AttentionTrace random_trace(Rng& rng, std::size_t layers, std::size_t heads,
                                   std::size_t input_len, std::size_t steps,
                                   bool full_matrices = false) {
  auto t = make_trace(layers, heads, input_len, steps,
                      [&](std::uint32_t, std::size_t, std::size_t, std::span<float> row) {
                        random_row(rng, row);
                      });
  if (full_matrices) {
    t.full_matrices = true;
    t.prefill = PrefillAttention(layers, heads, input_len);
    for (std::size_t l = 0; l < layers; ++l)
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t q = 0; q + 1 < input_len; ++q)
          random_row(rng, t.prefill.row(l, h, q).first(q + 1));
        // The last prompt row is the step-1 query row.
        if (steps > 0) {
          const auto src = t.steps[0].row(l, h);
          std::copy(src.begin(), src.end(), t.prefill.row(l, h, input_len - 1).begin());
        } else {
          random_row(rng, t.prefill.row(l, h, input_len - 1));
        }
      }
  }
  return t;
}

// Every row gives `planted` a weight in [0.9, 0.95]; the remaining keys split
// the residue at random.
inline AttentionTrace planted_trace(Rng& rng, std::size_t layers, std::size_t heads,
                                    std::size_t input_len, std::size_t steps,
                                    std::size_t planted, std::size_t instruction = 0) {
  return make_trace(
      layers, heads, input_len, steps,
      [&](std::uint32_t, std::size_t, std::size_t, std::span<float> row) {
        const double peak = rng.uniform(0.9, 0.95);
        std::vector<double> rest(row.size());
        double total = 0.0;
        for (std::size_t i = 0; i < row.size(); ++i)
          if (i != planted) total += (rest[i] = rng.uniform(0.1, 1.0));
        for (std::size_t i = 0; i < row.size(); ++i)
          row[i] = static_cast<float>(i == planted ? peak : (1.0 - peak) * rest[i] / total);
      },
      instruction);
}

// One-step trace with full matrices. Layer 0 sends every row of positions
// 1..N-2 entirely to position 0; the query row (N-1) is near-uniform in all
// layers except the last, where `planted` receives 0.85-0.95.
inline AttentionTrace late_emergence_trace(Rng& rng, std::size_t layers, std::size_t input_len,
                                           std::size_t planted) {
  const std::size_t n = input_len;
  const auto near_uniform = [&](std::span<float> row) {
    std::vector<double> w(row.size());
    double total = 0.0;
    for (auto& v : w) total += (v = 1.0 + rng.uniform(-0.2, 0.2));
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<float>(w[i] / total);
  };
  AttentionTrace t;
  t.last_layer = static_cast<std::uint32_t>(layers - 1);
  t.heads = 1;
  t.input_len = static_cast<std::uint32_t>(n);
  t.tokens = make_tokens(n, 1);
  t.full_matrices = true;
  t.prefill = PrefillAttention(layers, 1, n);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t q = 0; q < n; ++q) {
      auto row = t.prefill.row(l, 0, q).first(q + 1);
      if (q + 1 == n && l + 1 == layers) {
        const double peak = rng.uniform(0.85, 0.95);
        std::vector<double> rest(n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          if (i != planted) total += (rest[i] = rng.uniform(0.5, 1.0));
        for (std::size_t i = 0; i < n; ++i)
          row[i] = static_cast<float>(i == planted ? peak : (1.0 - peak) * rest[i] / total);
      } else if (l == 0 && q + 1 < n) {
        std::fill(row.begin(), row.end(), 0.0f);
        row[0] = 1.0f;
      } else {
        near_uniform(row);
      }
    }
  }
  StepAttention s(1, layers, 1, n);
  for (std::size_t l = 0; l < layers; ++l) {
    const auto src = t.prefill.row(l, 0, n - 1);
    std::copy(src.begin(), src.end(), s.row(l, 0).begin());
  }
  t.steps.push_back(std::move(s));
  return t;
}

}  // namespace attnscope::synthetic

#endif  // ATTNSCOPE_TESTS_SYNTHETIC_HPP
