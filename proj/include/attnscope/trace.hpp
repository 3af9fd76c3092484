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

#ifndef ATTNSCOPE_TRACE_HPP
#define ATTNSCOPE_TRACE_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace attnscope {

enum class Segment { InstructionPrompt, Context, Generated };

inline const char* segment_name(Segment s) {
  switch (s) {
    case Segment::InstructionPrompt: return "instruction";
    case Segment::Context: return "context";
    case Segment::Generated: return "generated";
  }
  return "?";
}

inline std::optional<Segment> parse_segment(std::string_view name) {
  if (name == "instruction") return Segment::InstructionPrompt;
  if (name == "context") return Segment::Context;
  if (name == "generated") return Segment::Generated;
  return std::nullopt;
}

struct TokenMeta {
  std::int32_t token_id = 0;
  std::int32_t position = 0;
  Segment segment = Segment::Context;
  std::string text;

  bool operator==(const TokenMeta&) const = default;
};

// Attention rows recorded while predicting generated token k. The query is
// sequence position N+k-2 (0-based), so each row covers N+k-1 keys.
class StepAttention {
 public:
  StepAttention() = default;
  StepAttention(std::uint32_t step, std::size_t layers, std::size_t heads,
                std::size_t keys)
      : step_(step), layers_(layers), heads_(heads), keys_(keys),
        weights_(layers * heads * keys, 0.0f) {}

  std::uint32_t step() const { return step_; }
  std::size_t layers() const { return layers_; }
  std::size_t heads() const { return heads_; }
  std::size_t keys() const { return keys_; }

  std::span<const float> row(std::size_t layer, std::size_t head) const {
    return {weights_.data() + offset(layer, head), keys_};
  }
  std::span<float> row(std::size_t layer, std::size_t head) {
    return {weights_.data() + offset(layer, head), keys_};
  }

  // Row-major [layer][head][key].
  std::span<const float> data() const { return weights_; }
  std::span<float> data() { return weights_; }

  bool operator==(const StepAttention&) const = default;

 private:
  std::size_t offset(std::size_t layer, std::size_t head) const {
    return (layer * heads_ + head) * keys_;
  }

  std::uint32_t step_ = 0;
  std::size_t layers_ = 0;
  std::size_t heads_ = 0;
  std::size_t keys_ = 0;
  std::vector<float> weights_;
};

// Square causal attention of the prompt pass, [layer][head][query][key] with
// zeros above the diagonal. Only present in traces captured for rollout.
class PrefillAttention {
 public:
  PrefillAttention() = default;
  PrefillAttention(std::size_t layers, std::size_t heads, std::size_t size)
      : layers_(layers), heads_(heads), size_(size),
        weights_(layers * heads * size * size, 0.0f) {}

  std::size_t layers() const { return layers_; }
  std::size_t heads() const { return heads_; }
  std::size_t size() const { return size_; }

  std::span<const float> row(std::size_t layer, std::size_t head,
                             std::size_t query) const {
    return {weights_.data() + offset(layer, head, query), size_};
  }
  std::span<float> row(std::size_t layer, std::size_t head, std::size_t query) {
    return {weights_.data() + offset(layer, head, query), size_};
  }

  std::span<const float> data() const { return weights_; }
  std::span<float> data() { return weights_; }

  bool operator==(const PrefillAttention&) const = default;

 private:
  std::size_t offset(std::size_t layer, std::size_t head,
                     std::size_t query) const {
    return ((layer * heads_ + head) * size_ + query) * size_;
  }

  std::size_t layers_ = 0;
  std::size_t heads_ = 0;
  std::size_t size_ = 0;
  std::vector<float> weights_;
};

// Recorded attention of one generation. Layers are indexed 0..last_layer, so
// a trace holds last_layer + 1 layers.
struct AttentionTrace {
  std::uint32_t last_layer = 0;
  std::uint32_t heads = 0;
  std::uint32_t input_len = 0;
  std::vector<TokenMeta> tokens;
  std::vector<StepAttention> steps;
  // Alternative ground-truth answers, each a list of sequence positions.
  std::vector<std::vector<std::int32_t>> answers;
  bool full_matrices = false;
  PrefillAttention prefill;
  // Opaque record of what produced the trace (model config, seeds, sample id).
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t layer_count() const { return std::size_t{last_layer} + 1; }
  std::size_t row_length(std::uint32_t step) const {
    return std::size_t{input_len} + step - 1;
  }

  std::vector<std::int32_t> context_positions() const {
    std::vector<std::int32_t> out;
    for (const auto& t : tokens)
      if (t.segment == Segment::Context) out.push_back(t.position);
    return out;
  }

  bool operator==(const AttentionTrace&) const = default;
};

struct Violation {
  enum class Kind { RowSum, Range, Shape, Tokens };
  Kind kind;
  // -1 when the violation is not tied to a step/layer/head (token metadata).
  std::int64_t step = -1;
  std::int64_t layer = -1;
  std::int64_t head = -1;
  std::string message;
};

inline constexpr double kRowSumTolerance = 1e-5;

namespace detail {

inline void check_row(std::span<const float> row, std::int64_t step,
                      std::int64_t layer, std::int64_t head,
                      std::vector<Violation>& out) {
  double sum = 0.0;
  bool in_range = true;
  for (float w : row) {
    if (!(w >= 0.0f && w <= 1.0f)) in_range = false;
    sum += w;
  }
  if (!in_range)
    out.push_back({Violation::Kind::Range, step, layer, head,
                   "attention weight outside [0,1]"});
  if (!(std::abs(sum - 1.0) <= kRowSumTolerance))
    out.push_back({Violation::Kind::RowSum, step, layer, head,
                   "row sums to " + std::to_string(sum)});
}

}  // namespace detail

// Empty result iff every trace invariant holds. Prefill rows are reported with
// step 0.
inline std::vector<Violation> validate_trace(const AttentionTrace& trace) {
  std::vector<Violation> out;
  const auto tokens_violation = [&](std::string msg) {
    out.push_back({Violation::Kind::Tokens, -1, -1, -1, std::move(msg)});
  };

  if (trace.heads == 0) tokens_violation("trace has zero heads");
  if (trace.input_len == 0) tokens_violation("trace has zero input tokens");

  // Token metadata.
  if (trace.tokens.size() != std::size_t{trace.input_len} + trace.steps.size())
    tokens_violation("expected " +
                     std::to_string(trace.input_len + trace.steps.size()) +
                     " tokens, found " + std::to_string(trace.tokens.size()));
  int context_runs = 0;
  bool prev_context = false;
  for (std::size_t i = 0; i < trace.tokens.size(); ++i) {
    const auto& t = trace.tokens[i];
    if (t.position != static_cast<std::int32_t>(i))
      tokens_violation("token " + std::to_string(i) + " has position " +
                       std::to_string(t.position));
    const bool is_input = i < trace.input_len;
    if (is_input == (t.segment == Segment::Generated))
      tokens_violation("token " + std::to_string(i) + " has segment " +
                       segment_name(t.segment));
    const bool is_context = t.segment == Segment::Context;
    if (is_context && !prev_context) ++context_runs;
    prev_context = is_context;
  }
  if (context_runs != 1)
    tokens_violation("expected one contiguous context span, found " +
                     std::to_string(context_runs));
  for (const auto& answer : trace.answers)
    for (auto p : answer)
      if (p < 0 || p >= static_cast<std::int32_t>(trace.input_len))
        tokens_violation("answer position " + std::to_string(p) +
                         " outside the input");

  // Step rows.
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const auto& step = trace.steps[s];
    const auto k = static_cast<std::int64_t>(s + 1);
    if (step.step() != s + 1 || step.layers() != trace.layer_count() ||
        step.heads() != trace.heads ||
        step.keys() != trace.row_length(static_cast<std::uint32_t>(s + 1))) {
      out.push_back({Violation::Kind::Shape, k, -1, -1,
                     "step dimensions do not match the trace"});
      continue;
    }
    for (std::size_t l = 0; l < step.layers(); ++l)
      for (std::size_t h = 0; h < step.heads(); ++h)
        detail::check_row(step.row(l, h), k, static_cast<std::int64_t>(l),
                          static_cast<std::int64_t>(h), out);
  }

  if (trace.full_matrices) {
    const auto& pre = trace.prefill;
    if (pre.layers() != trace.layer_count() || pre.heads() != trace.heads ||
        pre.size() != trace.input_len) {
      out.push_back({Violation::Kind::Shape, 0, -1, -1,
                     "prefill dimensions do not match the trace"});
    } else {
      for (std::size_t l = 0; l < pre.layers(); ++l)
        for (std::size_t h = 0; h < pre.heads(); ++h)
          for (std::size_t q = 0; q < pre.size(); ++q) {
            const auto row = pre.row(l, h, q);
            detail::check_row(row.first(q + 1), 0,
                              static_cast<std::int64_t>(l),
                              static_cast<std::int64_t>(h), out);
            for (std::size_t j = q + 1; j < row.size(); ++j)
              if (row[j] != 0.0f) {
                out.push_back({Violation::Kind::Range, 0,
                               static_cast<std::int64_t>(l),
                               static_cast<std::int64_t>(h),
                               "non-causal prefill weight"});
                break;
              }
          }
    }
  }
  return out;
}

}  // namespace attnscope

#endif  // ATTNSCOPE_TRACE_HPP
