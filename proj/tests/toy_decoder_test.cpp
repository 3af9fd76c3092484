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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <gtest/gtest.h>

#include "attnscope/macs.hpp"
#include "attnscope/toy_decoder.hpp"
#include "support/oracles.hpp"

namespace attnscope {
namespace {

using Tokens = std::vector<std::int32_t>;

ModelConfig small_random(std::uint64_t seed = 1) {
  return {.vocab_size = 32, .d_model = 16, .num_layers = 3, .num_heads = 4, .max_seq = 64,
          .seed = seed, .mode = ModelMode::RandomInit};
}

ModelConfig small_copy(std::uint64_t seed = 1) {
  return {.vocab_size = 16, .d_model = 18, .num_layers = 1, .num_heads = 2, .max_seq = 32,
          .seed = seed, .mode = ModelMode::CopyTask};
}

Tokens random_prompt(Rng& rng, std::size_t n, std::uint32_t vocab) {
  Tokens p(n);
  for (auto& t : p) t = static_cast<std::int32_t>(rng.below(vocab));
  return p;
}

TEST(ModelConfig, Invariants) {
  auto c = small_random();
  c.vocab_size = 1;
  EXPECT_THROW(init_model(c), std::invalid_argument);
  c = small_random();
  c.d_model = 18;  // not divisible by 4 heads
  EXPECT_THROW(init_model(c), std::invalid_argument);
  c = small_copy();
  c.num_layers = 2;
  EXPECT_THROW(init_model(c), std::invalid_argument);
  c = small_copy();
  c.d_model = 16;
  EXPECT_THROW(init_model(c), std::invalid_argument);
  EXPECT_EQ(model_config_from_json(to_json(small_copy(9))), small_copy(9));
}

TEST(ToyDecoder, SameSeedSameLogitsBitForBit) {
  const auto a = init_model(small_random(5));
  const auto b = init_model(small_random(5));
  const Tokens prompt{3, 1, 4, 1, 5};
  const auto ra = generate(a, prompt, 4);
  const auto rb = generate(b, prompt, 4);
  EXPECT_EQ(ra.generated_tokens, rb.generated_tokens);
  ASSERT_EQ(ra.per_step_logits.size(), rb.per_step_logits.size());
  for (std::size_t k = 0; k < ra.per_step_logits.size(); ++k)
    EXPECT_EQ(std::memcmp(ra.per_step_logits[k].data(), rb.per_step_logits[k].data(),
                          ra.per_step_logits[k].size() * sizeof(double)),
              0);
  EXPECT_EQ(ra.trace, rb.trace);
  const auto c = init_model(small_random(6));
  EXPECT_NE(generate(c, prompt, 4).per_step_logits, ra.per_step_logits);
}

TEST(ToyDecoder, GreedyTokensAreArgmax) {
  const auto m = init_model(small_random(2));
  const auto r = generate(m, Tokens{7, 7, 2, 9}, 6);
  ASSERT_EQ(r.generated_tokens.size(), 6u);
  ASSERT_EQ(r.trace.steps.size(), 6u);
  for (std::size_t k = 0; k < 6; ++k) {
    const auto& l = r.per_step_logits[k];
    EXPECT_EQ(r.generated_tokens[k], std::max_element(l.begin(), l.end()) - l.begin());
  }
}

TEST(ToyDecoder, TraceRowsAreValidCausalSoftmax) {
  const auto m = init_model(small_random(3));
  Rng rng(3);
  const auto r = generate(m, random_prompt(rng, 9, 32), 5, {}, {.full_matrices = true});
  EXPECT_TRUE(validate_trace(r.trace).empty());
  EXPECT_EQ(r.trace.last_layer, 2u);
  EXPECT_EQ(r.trace.input_len, 9u);
  // the last prefill row is the step-1 bootstrap row
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t h = 0; h < 4; ++h) {
      const auto a = r.trace.prefill.row(l, h, 8);
      const auto b = r.trace.steps[0].row(l, h);
      EXPECT_TRUE(std::equal(b.begin(), b.end(), a.begin()));
    }
}

TEST(ToyDecoder, CopyFixtureRepeatsMostAttendedToken) {
  // Three-token prompt; the most salient token draws the step-1 attention peak.
  const auto m = init_model(small_copy(4));
  const auto& sal = m.weights().salience;
  Tokens prompt{0, 1, 2};
  std::sort(prompt.begin(), prompt.end(), [&](auto a, auto b) { return sal[a] < sal[b]; });
  std::swap(prompt[1], prompt[2]);  // most salient token in the middle
  const auto r = generate(m, prompt, 4);
  const auto row = r.trace.steps[0].row(0, 0);
  EXPECT_GT(row[1], row[0]);
  EXPECT_GT(row[1], row[2]);
  for (auto t : r.generated_tokens) EXPECT_EQ(t, prompt[1]);
  // direct forward computation agrees on the first prediction
  const auto logits = oracle::full_forward(m, prompt, {});
  const auto& last = logits.back();
  EXPECT_EQ(std::max_element(last.begin(), last.end()) - last.begin(), prompt[1]);
}

TEST(ToyDecoder, EmptyMaskIsIdentity) {
  const auto m = init_model(small_random(4));
  const Tokens prompt{1, 2, 3, 4, 5, 6};
  const auto a = generate(m, prompt, 5);
  const auto b = generate(m, prompt, 5, Tokens{});
  EXPECT_EQ(a.generated_tokens, b.generated_tokens);
  EXPECT_EQ(a.per_step_logits, b.per_step_logits);
}

TEST(ToyDecoder, MaskedKeysGetExactlyZeroAndRowsRenormalize) {
  const auto m = init_model(small_random(7));
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto prompt = random_prompt(rng, 10, 32);
    Tokens masked;
    for (std::int32_t p = 1; p < 10; ++p)
      if (rng.below(3) == 0) masked.push_back(p);
    const auto r = generate(m, prompt, 4, masked);
    for (const auto& step : r.trace.steps)
      for (std::size_t l = 0; l < step.layers(); ++l)
        for (std::size_t h = 0; h < step.heads(); ++h) {
          const auto row = step.row(l, h);
          double sum = 0.0;
          for (float w : row) sum += w;
          for (auto p : masked) EXPECT_EQ(row[static_cast<std::size_t>(p)], 0.0f);
          EXPECT_NEAR(sum, 1.0, 1e-5);
        }
  }
}

TEST(ToyDecoder, MaskingSupersetKeepsMaskedMassZero) {
  const auto m = init_model(small_random(8));
  const Tokens prompt{5, 4, 3, 2, 1, 0, 9, 8};
  const Tokens small{2}, large{2, 4, 6};
  for (const auto& masked : {small, large}) {
    const auto r = generate(m, prompt, 3, masked);
    for (const auto& step : r.trace.steps)
      for (auto p : small)
        for (std::size_t l = 0; l < step.layers(); ++l)
          for (std::size_t h = 0; h < step.heads(); ++h)
            EXPECT_EQ(step.row(l, h)[static_cast<std::size_t>(p)], 0.0f);
  }
}

TEST(ToyDecoder, KvCacheMatchesFullRecompute) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = init_model(small_random(100 + trial));
    const auto prompt = random_prompt(rng, 3 + rng.below(8), 32);
    Tokens masked;
    if (trial % 2) masked.push_back(static_cast<std::int32_t>(rng.below(prompt.size())));
    const auto cached = generate(m, prompt, 5, masked);
    const auto naive = oracle::naive_generate(m, prompt, 5, masked);
    EXPECT_EQ(cached.generated_tokens, naive.tokens);
    for (std::size_t k = 0; k < 5; ++k)
      for (std::size_t v = 0; v < 32; ++v)
        EXPECT_NEAR(cached.per_step_logits[k][v], naive.logits[k][v], 1e-5);
  }
}

TEST(ToyDecoder, TeacherForcingScoresGivenContinuation) {
  const auto m = init_model(small_random(12));
  const Tokens prompt{1, 2, 3};
  const auto free = generate(m, prompt, 4);
  const auto forced = teacher_force(m, prompt, free.generated_tokens);
  EXPECT_EQ(forced.per_step_logits, free.per_step_logits);
  const Tokens other{9, 9, 9, 9};
  const auto tf = teacher_force(m, prompt, other);
  EXPECT_EQ(tf.generated_tokens, other);
  // logits for step k condition on the forced tokens before k
  Tokens seq = prompt;
  seq.insert(seq.end(), other.begin(), other.begin() + 2);
  const auto full = oracle::full_forward(m, seq, {});
  for (std::size_t v = 0; v < 32; ++v) EXPECT_NEAR(tf.per_step_logits[2][v], full.back()[v], 1e-9);
}

TEST(ToyDecoder, Errors) {
  const auto m = init_model(small_random());
  EXPECT_THROW(generate(m, Tokens(60, 1), 10), std::length_error);
  EXPECT_THROW(generate(m, Tokens{1, 2}, 2, Tokens{2}), std::out_of_range);
  EXPECT_THROW(generate(m, Tokens{1, 2}, 2, Tokens{-1}), std::out_of_range);
  EXPECT_THROW(generate(m, Tokens{}, 2), std::invalid_argument);
  EXPECT_THROW(generate(m, Tokens{40}, 2), std::invalid_argument);
}

TEST(AttentionHook, FiresOncePerTokenWithTraceRows) {
  const auto m = init_model(small_random(13));
  std::vector<StepAttention> seen;
  const auto r = generate(m, Tokens{4, 8, 15, 16, 23}, 7, {},
                          {.on_step = [&](const StepAttention& s) { seen.push_back(s); }});
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_EQ(seen, r.trace.steps);
}

TEST(AttentionHook, StreamingMacsMatchesBatch) {
  const auto m = init_model(small_random(14));
  const Tokens prompt{3, 3, 7, 1, 0, 12, 30};
  MacsStream stream(prompt.size(), MacsConfig{});
  const auto r = generate(m, prompt, 6, {},
                          {.on_step = [&](const StepAttention& s) { stream.on_step(s); }});
  const auto streamed = stream.finish();
  const auto batch = macs_run(r.trace, MacsConfig{});
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t i = 0; i < prompt.size(); ++i)
      EXPECT_NEAR(streamed.per_step_z[k][i], batch.per_step_z[k][i], 1e-9);
}

TEST(AttentionHook, NoTraceStoredWhenDisabled) {
  const auto m = init_model(small_random(15));
  int calls = 0;
  const auto r = generate(m, Tokens{1, 2, 3}, 4, {},
                          {.record_trace = false, .on_step = [&](const StepAttention&) { ++calls; }});
  EXPECT_EQ(calls, 4);
  EXPECT_TRUE(r.trace.steps.empty());
  EXPECT_EQ(r.generated_tokens.size(), 4u);
}

}  // namespace
}  // namespace attnscope
