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

#ifndef ATTNSCOPE_EVAL_HPP
#define ATTNSCOPE_EVAL_HPP

// Attribution quality harness: best-step AUC-PR against answer spans, and
// attention-masking perturbation curves (most/least influential first) with
// their trapezoid AUCs and symmetric relevance gain.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnscope/macs.hpp"
#include "attnscope/metrics.hpp"
#include "attnscope/rng.hpp"
#include "attnscope/toy_decoder.hpp"
#include "json.hpp"

namespace attnscope {

struct FractionSchedule {
  std::vector<double> fractions = {0.00, 0.01, 0.05, 0.10, 0.15, 0.20};

  double last() const { return fractions.back(); }
};

inline void validate_schedule(const FractionSchedule& s) {
  if (s.fractions.size() < 2)
    throw std::invalid_argument("schedule: need at least two fractions");
  if (s.fractions.front() != 0.0)
    throw std::invalid_argument("schedule: first fraction must be exactly 0");
  for (std::size_t i = 1; i < s.fractions.size(); ++i)
    if (!(s.fractions[i] > s.fractions[i - 1]))
      throw std::invalid_argument("schedule: fractions must be strictly increasing");
  if (s.fractions.back() > 1.0)
    throw std::invalid_argument("schedule: last fraction must be <= 1");
}

enum class Ordering { MIF, LIF, Random };
enum class BaseMetric { MeanLogits, Perplexity, RougeL, Bleu };

inline constexpr BaseMetric kAllMetrics[] = {BaseMetric::MeanLogits, BaseMetric::Perplexity,
                                             BaseMetric::RougeL, BaseMetric::Bleu};

inline const char* metric_name(BaseMetric m) {
  switch (m) {
    case BaseMetric::MeanLogits: return "mean_logits";
    case BaseMetric::Perplexity: return "perplexity";
    case BaseMetric::RougeL: return "rouge_l";
    case BaseMetric::Bleu: return "bleu";
  }
  return "?";
}

inline std::optional<BaseMetric> parse_metric(std::string_view s) {
  for (auto m : kAllMetrics)
    if (s == metric_name(m)) return m;
  if (s == "pp") return BaseMetric::Perplexity;
  if (s == "rl") return BaseMetric::RougeL;
  return std::nullopt;
}

inline const char* ordering_name(Ordering o) {
  switch (o) {
    case Ordering::MIF: return "mif";
    case Ordering::LIF: return "lif";
    case Ordering::Random: return "random";
  }
  return "?";
}

// Best-step AUC-PR: per step, AP of the context-restricted scores against
// each answer, averaged over answers; the maximum over steps.
inline double sample_auc_pr(const AttributionMap& map,
                            const std::vector<std::vector<std::int32_t>>& answers,
                            std::span<const std::int32_t> context_positions) {
  if (answers.empty()) throw std::invalid_argument("sample_auc_pr: no answers");
  if (context_positions.empty())
    throw std::invalid_argument("sample_auc_pr: empty context");
  if (map.per_step_z.empty()) throw std::invalid_argument("sample_auc_pr: no steps");

  std::vector<std::vector<std::uint8_t>> labels;
  for (const auto& answer : answers) {
    std::vector<std::uint8_t> y(context_positions.size(), 0);
    for (std::size_t j = 0; j < context_positions.size(); ++j)
      y[j] = std::find(answer.begin(), answer.end(), context_positions[j]) != answer.end();
    labels.push_back(std::move(y));
  }
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> scores(context_positions.size());
  for (const auto& step : map.per_step_z) {
    for (std::size_t j = 0; j < context_positions.size(); ++j) {
      const auto p = static_cast<std::size_t>(context_positions[j]);
      if (p >= step.size()) throw std::invalid_argument("sample_auc_pr: position outside map");
      scores[j] = step[p];
    }
    double mean = 0.0;
    for (const auto& y : labels) mean += average_precision(y, scores);
    best = std::max(best, mean / static_cast<double>(labels.size()));
  }
  return best;
}

// Orders context positions for removal. MIF: descending aggregate score;
// LIF: ascending; ties by ascending position in both. Random: seeded shuffle.
inline std::vector<std::int32_t> rank_tokens(const AttributionMap& map,
                                             std::span<const std::int32_t> context_positions,
                                             Ordering ordering, std::uint64_t seed = 0) {
  std::vector<std::int32_t> out(context_positions.begin(), context_positions.end());
  std::sort(out.begin(), out.end());
  if (ordering == Ordering::Random) {
    Rng rng(seed);
    rng.shuffle(std::span<std::int32_t>(out));
    return out;
  }
  for (auto p : out)
    if (p < 0 || static_cast<std::size_t>(p) >= map.aggregate.size())
      throw std::invalid_argument("rank_tokens: position outside aggregate");
  const auto score = [&](std::int32_t p) { return map.aggregate[static_cast<std::size_t>(p)]; };
  std::stable_sort(out.begin(), out.end(), [&](std::int32_t a, std::int32_t b) {
    return ordering == Ordering::MIF ? score(a) > score(b) : score(a) < score(b);
  });
  return out;
}

// Number of context tokens removed at fraction f: floor(f * n).
inline std::size_t masked_count(double fraction, std::size_t context_len) {
  // The slack absorbs representation error such as 0.15 * 20 = 2.9999...
  const double exact = fraction * static_cast<double>(context_len);
  return std::min(context_len, static_cast<std::size_t>(std::floor(exact + 1e-9)));
}

// (1 / f_M) * trapezoid integral of the normalised curve over the schedule.
inline double trapezoid_auc(std::span<const double> curve, const FractionSchedule& schedule) {
  if (curve.size() != schedule.fractions.size())
    throw std::invalid_argument("trapezoid_auc: curve/schedule length mismatch");
  double area = 0.0;
  for (std::size_t j = 1; j < curve.size(); ++j)
    area += 0.5 * (curve[j] + curve[j - 1]) *
            (schedule.fractions[j] - schedule.fractions[j - 1]);
  return area / schedule.last();
}

inline double srg(double auc_lif, double auc_mif) { return auc_lif - auc_mif; }

inline constexpr double kMinBaseline = 1e-12;

struct PerturbationCurve {
  Ordering ordering = Ordering::MIF;
  BaseMetric metric = BaseMetric::RougeL;
  std::vector<double> raw;
  std::vector<double> normalized;
  double auc = std::numeric_limits<double>::quiet_NaN();
  // v(0) below 1e-12: normalisation impossible, sample skipped for the metric.
  bool skipped = false;
};

inline double metric_mean_logits(const GenerationRecord& original,
                                 const GenerationRecord& teacher_forced) {
  if (original.generated_tokens.empty())
    throw std::invalid_argument("mean_logits: empty generation");
  return mean_logit(teacher_forced.per_step_logits, original.generated_tokens);
}

inline double metric_perplexity(const GenerationRecord& original,
                                const GenerationRecord& teacher_forced) {
  return perplexity(teacher_forced.per_step_logits, original.generated_tokens);
}

// Raw metric values at each fraction for one removal order. Free-running and
// teacher-forced passes are only made when a requested metric needs them.
inline std::map<BaseMetric, std::vector<double>> measure_fractions(
    const Model& model, std::span<const std::int32_t> prompt,
    const GenerationRecord& original, std::span<const std::int32_t> permutation,
    const FractionSchedule& schedule, std::span<const BaseMetric> metrics) {
  validate_schedule(schedule);
  const auto& reference = original.generated_tokens;
  if (reference.empty()) throw std::invalid_argument("perturb: empty original generation");
  const auto wants = [&](BaseMetric m) {
    return std::find(metrics.begin(), metrics.end(), m) != metrics.end();
  };
  const bool free_run = wants(BaseMetric::RougeL) || wants(BaseMetric::Bleu);
  const bool forced = wants(BaseMetric::MeanLogits) || wants(BaseMetric::Perplexity);
  const auto max_new = static_cast<std::uint32_t>(reference.size());

  std::map<BaseMetric, std::vector<double>> values;
  std::size_t previous = std::numeric_limits<std::size_t>::max();
  for (double f : schedule.fractions) {
    const std::size_t count = masked_count(f, permutation.size());
    if (count == previous) {
      // Same masked set as the previous fraction: identical measurement.
      for (auto m : metrics) values[m].push_back(values[m].back());
      continue;
    }
    previous = count;
    const auto masked = permutation.first(count);
    if (free_run) {
      const auto run = generate(model, prompt, max_new, masked, {.record_trace = false});
      if (wants(BaseMetric::RougeL))
        values[BaseMetric::RougeL].push_back(rouge_l_f1(reference, run.generated_tokens));
      if (wants(BaseMetric::Bleu))
        values[BaseMetric::Bleu].push_back(bleu(reference, run.generated_tokens));
    }
    if (forced) {
      const auto tf = teacher_force(model, prompt, reference, masked);
      if (wants(BaseMetric::MeanLogits))
        values[BaseMetric::MeanLogits].push_back(metric_mean_logits(original, tf));
      if (wants(BaseMetric::Perplexity))
        values[BaseMetric::Perplexity].push_back(metric_perplexity(original, tf));
    }
  }
  return values;
}

inline PerturbationCurve make_curve(Ordering ordering, BaseMetric metric,
                                    std::vector<double> raw,
                                    const FractionSchedule& schedule) {
  PerturbationCurve c;
  c.ordering = ordering;
  c.metric = metric;
  c.raw = std::move(raw);
  if (!(c.raw.front() >= kMinBaseline)) {
    c.skipped = true;
    return c;
  }
  c.normalized.resize(c.raw.size());
  for (std::size_t i = 0; i < c.raw.size(); ++i) c.normalized[i] = c.raw[i] / c.raw.front();
  c.normalized.front() = 1.0;
  c.auc = trapezoid_auc(c.normalized, schedule);
  return c;
}

inline PerturbationCurve perturb_and_measure(const Model& model,
                                             std::span<const std::int32_t> prompt,
                                             const GenerationRecord& original,
                                             std::span<const std::int32_t> permutation,
                                             const FractionSchedule& schedule,
                                             BaseMetric metric,
                                             Ordering ordering = Ordering::MIF) {
  const BaseMetric wanted[] = {metric};
  auto values = measure_fractions(model, prompt, original, permutation, schedule, wanted);
  return make_curve(ordering, metric, std::move(values.at(metric)), schedule);
}

// ---------------------------------------------------------------------------
// Per-sample evaluation and corpus aggregation.

struct MetricOutcome {
  double auc_mif = std::numeric_limits<double>::quiet_NaN();
  double auc_lif = std::numeric_limits<double>::quiet_NaN();
  double srg = std::numeric_limits<double>::quiet_NaN();
  bool skipped = false;
};

struct SampleResult {
  std::string id;
  std::optional<double> auc_pr;
  std::map<BaseMetric, MetricOutcome> metrics;
};

struct EvalSample {
  std::string id;
  std::vector<std::int32_t> prompt;
  std::vector<std::int32_t> context_positions;
  std::vector<std::vector<std::int32_t>> answers;
  GenerationRecord original;
};

// How the two curves of a sample are ordered. The random baseline compares
// two independent random orders instead of a score order and its reverse.
enum class OrderingPolicy { FromScores, IndependentRandom };

struct EvalOptions {
  FractionSchedule schedule;
  std::vector<BaseMetric> metrics{std::begin(kAllMetrics), std::end(kAllMetrics)};
  OrderingPolicy policy = OrderingPolicy::FromScores;
  std::uint64_t seed = 0;
};

inline SampleResult evaluate_sample(const Model& model, const EvalSample& sample,
                                    const AttributionMap& map, const EvalOptions& options) {
  SampleResult out;
  out.id = sample.id;
  if (!sample.answers.empty())
    out.auc_pr = sample_auc_pr(map, sample.answers, sample.context_positions);

  std::vector<std::int32_t> first, second;
  if (options.policy == OrderingPolicy::IndependentRandom) {
    first = rank_tokens(map, sample.context_positions, Ordering::Random,
                        derive_seed(options.seed, 1));
    second = rank_tokens(map, sample.context_positions, Ordering::Random,
                         derive_seed(options.seed, 2));
  } else {
    first = rank_tokens(map, sample.context_positions, Ordering::MIF);
    second = rank_tokens(map, sample.context_positions, Ordering::LIF);
  }
  auto mif = measure_fractions(model, sample.prompt, sample.original, first,
                               options.schedule, options.metrics);
  auto lif = measure_fractions(model, sample.prompt, sample.original, second,
                               options.schedule, options.metrics);
  for (auto m : options.metrics) {
    const auto cm = make_curve(Ordering::MIF, m, std::move(mif.at(m)), options.schedule);
    const auto cl = make_curve(Ordering::LIF, m, std::move(lif.at(m)), options.schedule);
    MetricOutcome o;
    o.skipped = cm.skipped || cl.skipped;
    if (!o.skipped) {
      o.auc_mif = cm.auc;
      o.auc_lif = cl.auc;
      o.srg = srg(cl.auc, cm.auc);
    }
    out.metrics[m] = o;
  }
  return out;
}

struct Summary {
  std::size_t n = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  // 95% normal-approximation half-width 1.96 * s / sqrt(n); absent for n < 2.
  std::optional<double> ci_half_width;
};

inline Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  // Constant inputs: keep the mean exact so the spread is exactly zero.
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; }))
    mean = values[0];
  s.mean = mean;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    s.ci_half_width = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
  }
  return s;
}

struct MetricSummary {
  Summary mif, lif, srg;
  std::size_t skipped = 0;
};

struct EvalReport {
  std::string method;
  nlohmann::json config = nlohmann::json::object();
  std::vector<SampleResult> samples;
  std::optional<Summary> auc_pr;
  std::map<BaseMetric, MetricSummary> metrics;
};

inline EvalReport aggregate_report(std::string method, nlohmann::json config,
                                   std::vector<SampleResult> samples) {
  EvalReport r;
  r.method = std::move(method);
  r.config = std::move(config);
  std::vector<double> aps;
  std::map<BaseMetric, std::vector<double>> mif, lif, gain;
  std::map<BaseMetric, std::size_t> skipped;
  for (const auto& s : samples) {
    if (s.auc_pr) aps.push_back(*s.auc_pr);
    for (const auto& [m, o] : s.metrics) {
      if (o.skipped) {
        ++skipped[m];
        continue;
      }
      mif[m].push_back(o.auc_mif);
      lif[m].push_back(o.auc_lif);
      gain[m].push_back(o.srg);
    }
  }
  if (!aps.empty()) r.auc_pr = summarize(aps);
  for (const auto& s : samples)
    for (const auto& [m, o] : s.metrics) {
      auto& ms = r.metrics[m];
      ms.mif = summarize(mif[m]);
      ms.lif = summarize(lif[m]);
      ms.srg = summarize(gain[m]);
      ms.skipped = skipped[m];
    }
  r.samples = std::move(samples);
  return r;
}

inline nlohmann::json to_json(const Summary& s) {
  nlohmann::json j = {{"n", s.n}};
  j["mean"] = std::isfinite(s.mean) ? nlohmann::json(s.mean) : nlohmann::json(nullptr);
  j["ci_half_width"] = s.ci_half_width ? nlohmann::json(*s.ci_half_width)
                                       : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const EvalReport& r) {
  using nlohmann::json;
  json metrics = json::object();
  for (const auto& [m, ms] : r.metrics)
    metrics[metric_name(m)] = {{"mMIF", to_json(ms.mif)},
                               {"mLIF", to_json(ms.lif)},
                               {"mSRG", to_json(ms.srg)},
                               {"skipped", ms.skipped}};
  json samples = json::array();
  for (const auto& s : r.samples) {
    json sm = json::object();
    for (const auto& [m, o] : s.metrics)
      sm[metric_name(m)] = {{"auc_mif", finite_or_null(o.auc_mif)},
                            {"auc_lif", finite_or_null(o.auc_lif)},
                            {"srg", finite_or_null(o.srg)},
                            {"skipped", o.skipped}};
    samples.push_back({{"id", s.id},
                       {"auc_pr", s.auc_pr ? json(*s.auc_pr) : json(nullptr)},
                       {"metrics", std::move(sm)}});
  }
  return {{"method", r.method},
          {"config", r.config},
          {"mAUC_PR", r.auc_pr ? to_json(*r.auc_pr) : json(nullptr)},
          {"metrics", std::move(metrics)},
          {"samples", std::move(samples)}};
}

}  // namespace attnscope

#endif  // ATTNSCOPE_EVAL_HPP
