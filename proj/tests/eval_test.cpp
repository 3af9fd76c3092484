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
#include <numeric>

#include <gtest/gtest.h>

#include "attnscope/eval.hpp"
#include "attnscope/macs.hpp"
#include "attnscope/toy_decoder.hpp"

namespace attnscope {
namespace {

using Positions = std::vector<std::int32_t>;

AttributionMap map_from_steps(std::vector<std::vector<double>> steps) {
  AttributionMap m;
  m.per_step_z = steps;
  m.per_step_raw = steps;
  m.aggregate = aggregate_steps(steps);
  return m;
}

AttributionMap map_from_aggregate(std::vector<double> agg) {
  AttributionMap m = map_from_steps({agg});
  m.aggregate = std::move(agg);
  return m;
}

TEST(FractionSchedule, Validation) {
  EXPECT_NO_THROW(validate_schedule(FractionSchedule{}));
  EXPECT_THROW(validate_schedule({{0.1, 0.2}}), std::invalid_argument);
  EXPECT_THROW(validate_schedule({{0.0, 0.2, 0.2}}), std::invalid_argument);
  EXPECT_THROW(validate_schedule({{0.0, 0.5, 1.5}}), std::invalid_argument);
  EXPECT_THROW(validate_schedule({{0.0}}), std::invalid_argument);
}

TEST(SampleAucPr, SingleStepSingleAnswerIsAveragePrecision) {
  const auto map = map_from_steps({{0.9, 0.1, 0.5, 0.3}});
  const Positions ctx{0, 1, 2, 3};
  const std::vector<std::uint8_t> y{0, 0, 1, 0};
  const std::vector<double> s{0.9, 0.1, 0.5, 0.3};
  EXPECT_DOUBLE_EQ(sample_auc_pr(map, {{2}}, ctx), average_precision(y, s));
}

TEST(SampleAucPr, MaximumOverSteps) {
  // step 0: answer ranked third of three -> AP 1/3; step 1: ranked first -> 1.0
  const auto map = map_from_steps({{0.9, 0.5, 0.1}, {0.1, 0.5, 0.9}});
  EXPECT_DOUBLE_EQ(sample_auc_pr(map, {{2}}, Positions{0, 1, 2}), 1.0);
}

TEST(SampleAucPr, MeanOverAnswers) {
  // ranking 1,2,3,4,0; answer {0}: rank 5 -> AP 0.2; answer {1,0}: ranks 1,5 -> 0.7
  const auto map = map_from_steps({{0.1, 0.9, 0.8, 0.7, 0.6}});
  const Positions ctx{0, 1, 2, 3, 4};
  EXPECT_NEAR(sample_auc_pr(map, {{0}}, ctx), 0.2, 1e-12);
  EXPECT_NEAR(sample_auc_pr(map, {{1, 0}}, ctx), 0.7, 1e-12);
  EXPECT_NEAR(sample_auc_pr(map, {{0}, {1, 0}}, ctx), 0.45, 1e-12);
  // ranks 2,3,5 -> (1/2 + 2/3 + 3/5) / 3; mean with 0.2
  const double three = (0.5 + 2.0 / 3.0 + 0.6) / 3.0;
  EXPECT_NEAR(sample_auc_pr(map, {{0}, {2, 3, 0}}, ctx), (0.2 + three) / 2.0, 1e-12);
}

TEST(SampleAucPr, RestrictsToContextPositions) {
  // instruction positions 0..1 carry the highest scores and are excluded
  const auto map = map_from_steps({{5.0, 4.0, 0.1, 0.9, 0.2}});
  EXPECT_DOUBLE_EQ(sample_auc_pr(map, {{3}}, Positions{2, 3, 4}), 1.0);
  // answer outside the context contributes no positives
  EXPECT_DOUBLE_EQ(sample_auc_pr(map, {{0}}, Positions{2, 3, 4}), 0.0);
}

TEST(SampleAucPr, Errors) {
  const auto map = map_from_steps({{0.1, 0.2}});
  EXPECT_THROW(sample_auc_pr(map, {}, Positions{0, 1}), std::invalid_argument);
  EXPECT_THROW(sample_auc_pr(map, {{0}}, Positions{}), std::invalid_argument);
  EXPECT_THROW(sample_auc_pr(map_from_steps({}), {{0}}, Positions{0}), std::invalid_argument);
}

TEST(RankTokens, Examples) {
  const auto map = map_from_aggregate({0.9, 0.1, 0.5});
  const Positions ctx{0, 1, 2};
  EXPECT_EQ(rank_tokens(map, ctx, Ordering::MIF), (Positions{0, 2, 1}));
  EXPECT_EQ(rank_tokens(map, ctx, Ordering::LIF), (Positions{1, 2, 0}));
  const auto tied = map_from_aggregate({0.5, 0.5});
  EXPECT_EQ(rank_tokens(tied, Positions{0, 1}, Ordering::MIF), (Positions{0, 1}));
  EXPECT_EQ(rank_tokens(tied, Positions{0, 1}, Ordering::LIF), (Positions{0, 1}));
}

TEST(RankTokens, DistinctScoresGiveReversedDuality) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> agg(n);
    for (auto& v : agg) v = rng.normal();
    const auto map = map_from_aggregate(agg);
    Positions ctx(n);
    std::iota(ctx.begin(), ctx.end(), 0);
    auto mif = rank_tokens(map, ctx, Ordering::MIF);
    const auto lif = rank_tokens(map, ctx, Ordering::LIF);
    std::reverse(mif.begin(), mif.end());
    EXPECT_EQ(mif, lif);
  }
}

TEST(RankTokens, RandomIsSeededPermutation) {
  const auto map = map_from_aggregate(std::vector<double>(20, 0.0));
  Positions ctx(20);
  std::iota(ctx.begin(), ctx.end(), 0);
  const auto a = rank_tokens(map, ctx, Ordering::Random, 5);
  EXPECT_EQ(a, rank_tokens(map, ctx, Ordering::Random, 5));
  EXPECT_NE(a, rank_tokens(map, ctx, Ordering::Random, 6));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, ctx);
}

TEST(MaskedCount, FloorAndNesting) {
  EXPECT_EQ(masked_count(0.0, 20), 0u);
  EXPECT_EQ(masked_count(0.15, 20), 3u);
  EXPECT_EQ(masked_count(0.05, 30), 1u);
  EXPECT_EQ(masked_count(0.01, 30), 0u);
  EXPECT_EQ(masked_count(1.0, 7), 7u);
  const FractionSchedule f;
  for (std::size_t n = 0; n < 300; ++n)
    for (std::size_t j = 1; j < f.fractions.size(); ++j)
      EXPECT_LE(masked_count(f.fractions[j - 1], n), masked_count(f.fractions[j], n));
}

TEST(TrapezoidAuc, Examples) {
  const FractionSchedule f;
  const std::vector<double> flat(f.fractions.size(), 1.0);
  EXPECT_DOUBLE_EQ(trapezoid_auc(flat, f), 1.0);
  std::vector<double> linear;
  for (double s : f.fractions) linear.push_back(1.0 - s);
  EXPECT_NEAR(trapezoid_auc(linear, f), 0.9, 1e-12);
  const FractionSchedule odd{{0.0, 0.3, 0.35, 0.9}};
  EXPECT_DOUBLE_EQ(trapezoid_auc(std::vector<double>(4, 1.0), odd), 1.0);
  EXPECT_THROW(trapezoid_auc(std::vector<double>(3, 1.0), f), std::invalid_argument);
}

TEST(Srg, Examples) {
  EXPECT_NEAR(srg(1.0, 0.9), 0.1, 1e-12);
  EXPECT_EQ(srg(0.7, 0.7), 0.0);
}

TEST(MakeCurve, NormalizesAndSkips) {
  const FractionSchedule f;
  const auto c = make_curve(Ordering::MIF, BaseMetric::Perplexity, {2, 2, 3, 3, 4, 4}, f);
  EXPECT_FALSE(c.skipped);
  EXPECT_EQ(c.normalized.front(), 1.0);
  EXPECT_DOUBLE_EQ(c.normalized[4], 2.0);
  const auto z = make_curve(Ordering::MIF, BaseMetric::RougeL, {0, 1, 1, 1, 1, 1}, f);
  EXPECT_TRUE(z.skipped);
  EXPECT_TRUE(std::isnan(z.auc));
  const auto neg = make_curve(Ordering::MIF, BaseMetric::MeanLogits, {-1, 0, 0, 0, 0, 0}, f);
  EXPECT_TRUE(neg.skipped);
}

// -- toy-model perturbation ------------------------------------------------------

ModelConfig copy_config() {
  return {.vocab_size = 40, .d_model = 42, .num_layers = 1, .num_heads = 2, .max_seq = 64,
          .seed = 3, .mode = ModelMode::CopyTask};
}

std::vector<std::int32_t> distinct_prompt(Rng& rng, std::size_t n, std::uint32_t vocab) {
  std::vector<std::int32_t> all(vocab);
  std::iota(all.begin(), all.end(), 0);
  rng.shuffle(std::span<std::int32_t>(all));
  all.resize(n);
  return all;
}

TEST(Perturbation, FractionZeroIsIdentity) {
  const auto m = init_model({.vocab_size = 32, .d_model = 16, .num_layers = 2,
                             .num_heads = 2, .max_seq = 64, .seed = 9});
  const std::vector<std::int32_t> prompt{1, 5, 9, 13, 17, 21, 25, 29, 2, 6};
  const auto original = generate(m, prompt, 5);
  Positions perm(prompt.size());
  std::iota(perm.begin(), perm.end(), 0);
  const auto tf = teacher_force(m, prompt, original.generated_tokens);
  for (auto metric : kAllMetrics) {
    const auto c = perturb_and_measure(m, prompt, original, perm, FractionSchedule{}, metric);
    double expected = 0.0;
    switch (metric) {
      case BaseMetric::MeanLogits: expected = metric_mean_logits(original, tf); break;
      case BaseMetric::Perplexity: expected = metric_perplexity(original, tf); break;
      case BaseMetric::RougeL:
      case BaseMetric::Bleu: expected = 1.0; break;
    }
    EXPECT_DOUBLE_EQ(c.raw.front(), expected) << metric_name(metric);
    if (!c.skipped) {
      EXPECT_EQ(c.normalized.front(), 1.0);
    }
  }
}

TEST(Perturbation, MeanLogitsIdentityIsSelfLogit) {
  const auto m = init_model(copy_config());
  Rng rng(1);
  const auto prompt = distinct_prompt(rng, 12, 40);
  const auto original = generate(m, prompt, 4);
  double self = 0.0;
  for (std::size_t k = 0; k < 4; ++k)
    self += original.per_step_logits[k][static_cast<std::size_t>(original.generated_tokens[k])];
  const auto tf = teacher_force(m, prompt, original.generated_tokens);
  EXPECT_NEAR(metric_mean_logits(original, tf), self / 4.0, 1e-12);
  GenerationRecord empty;
  EXPECT_THROW(metric_mean_logits(empty, tf), std::invalid_argument);
}

TEST(Perturbation, CopySourceMaskedLowersMeanLogit) {
  const auto m = init_model(copy_config());
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto prompt = distinct_prompt(rng, 16, 40);
    const auto original = generate(m, prompt, 3);
    const auto src = std::find(prompt.begin(), prompt.end(), original.generated_tokens[0]);
    ASSERT_NE(src, prompt.end());
    const std::int32_t pos = static_cast<std::int32_t>(src - prompt.begin());
    const auto clean = teacher_force(m, prompt, original.generated_tokens);
    const auto masked = teacher_force(m, prompt, original.generated_tokens, Positions{pos});
    EXPECT_LT(metric_mean_logits(original, masked), metric_mean_logits(original, clean));
  }
}

TEST(Perturbation, CopyTaskMacsDirection) {
  const auto m = init_model(copy_config());
  Rng rng(4);
  for (int trial = 0; trial < 8; ++trial) {
    EvalSample s;
    s.id = "s" + std::to_string(trial);
    s.prompt = distinct_prompt(rng, 24, 40);
    s.context_positions.resize(24);
    std::iota(s.context_positions.begin(), s.context_positions.end(), 0);
    s.original = generate(m, s.prompt, 4);
    const auto map = macs_run(s.original.trace, MacsConfig{});
    EvalOptions opt;
    opt.metrics = {BaseMetric::RougeL, BaseMetric::Perplexity};
    const auto r = evaluate_sample(m, s, map, opt);
    EXPECT_GT(r.metrics.at(BaseMetric::RougeL).srg, 0.0) << s.id;
    EXPECT_LT(r.metrics.at(BaseMetric::Perplexity).srg, 0.0) << s.id;
  }
}

// -- aggregation -----------------------------------------------------------------

SampleResult result_with(double mif, double lif) {
  SampleResult r;
  r.metrics[BaseMetric::RougeL] = {mif, lif, srg(lif, mif), false};
  return r;
}

TEST(AggregateReport, CiHalfWidth) {
  auto r = aggregate_report("macs", {}, {result_with(0.0, 0.0), result_with(0.0, 1.0)});
  const auto& g = r.metrics.at(BaseMetric::RougeL).srg;
  EXPECT_DOUBLE_EQ(g.mean, 0.5);
  ASSERT_TRUE(g.ci_half_width);
  EXPECT_NEAR(*g.ci_half_width, 1.96 * std::sqrt(0.5) / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(*g.ci_half_width, 0.98, 1e-9);

  r = aggregate_report("macs", {}, {result_with(0.3, 0.5), result_with(0.3, 0.5),
                                    result_with(0.3, 0.5)});
  EXPECT_EQ(*r.metrics.at(BaseMetric::RougeL).srg.ci_half_width, 0.0);

  r = aggregate_report("macs", {}, {result_with(0.3, 0.5)});
  EXPECT_FALSE(r.metrics.at(BaseMetric::RougeL).srg.ci_half_width);
  const auto j = to_json(r);
  EXPECT_TRUE(j["metrics"]["rouge_l"]["mSRG"]["ci_half_width"].is_null());
}

TEST(AggregateReport, SrgEqualsLifMinusMifPerSample) {
  Rng rng(8);
  std::vector<SampleResult> samples;
  for (int i = 0; i < 40; ++i) samples.push_back(result_with(rng.uniform(), rng.uniform()));
  const auto r = aggregate_report("macs", {}, samples);
  for (const auto& s : r.samples) {
    const auto& o = s.metrics.at(BaseMetric::RougeL);
    EXPECT_EQ(o.srg, o.auc_lif - o.auc_mif);
  }
  const auto& ms = r.metrics.at(BaseMetric::RougeL);
  EXPECT_NEAR(ms.srg.mean, ms.lif.mean - ms.mif.mean, 1e-12);
}

TEST(AggregateReport, SkipsAreCountedAndExcluded) {
  auto skipped = result_with(0, 0);
  skipped.metrics[BaseMetric::RougeL] = MetricOutcome{};
  skipped.metrics[BaseMetric::RougeL].skipped = true;
  const auto r = aggregate_report("macs", {}, {result_with(0.2, 0.4), skipped});
  EXPECT_EQ(r.metrics.at(BaseMetric::RougeL).skipped, 1u);
  EXPECT_EQ(r.metrics.at(BaseMetric::RougeL).srg.n, 1u);
  EXPECT_NEAR(r.metrics.at(BaseMetric::RougeL).srg.mean, 0.2, 1e-12);
}

}  // namespace
}  // namespace attnscope
