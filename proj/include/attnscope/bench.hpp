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

#ifndef ATTNSCOPE_BENCH_HPP
#define ATTNSCOPE_BENCH_HPP

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "json.hpp"
#include "macs.hpp"
#include "toy_decoder.hpp"

namespace attnscope {

enum class BenchMode { Inference, Macs, Rollout };

inline const char* bench_mode_name(BenchMode m) {
  switch (m) {
    case BenchMode::Inference: return "inference";
    case BenchMode::Macs: return "inference+macs";
    case BenchMode::Rollout: return "inference+rollout";
  }
  return "?";
}

struct BenchOptions {
  std::vector<std::uint32_t> context_lengths = {64, 128, 256, 512};
  std::uint32_t new_tokens = 16;
  unsigned repetitions = 3;
  // Measure each mode in a forked child so its peak RSS is its own.
  bool isolate = true;
};

struct BenchRow {
  std::uint32_t context_len = 0;
  BenchMode mode = BenchMode::Inference;
  double seconds = 0.0;                      // best of the repetitions
  std::optional<double> tokens_per_sec;      // absent when nothing is generated
  std::optional<double> overhead_pct;        // vs inference at this length
  std::uint64_t working_set_bytes = 0;       // attribution-relevant buffers
  std::optional<std::uint64_t> peak_rss_kb;  // only with isolation
};

namespace detail {

struct ModeSample {
  double seconds = 0.0;
  std::uint64_t working_set = 0;
};

inline std::uint64_t kv_bytes(const ModelConfig& c, std::size_t capacity) {
  return 2ull * c.num_layers * capacity * c.d_model * sizeof(double);
}

// One timed run; the working set counts the KV cache plus whatever the mode
// keeps alive for attribution at its peak.
inline ModeSample run_mode(const Model& model, const std::vector<std::int32_t>& prompt,
                           std::uint32_t new_tokens, BenchMode mode) {
  const auto& c = model.config();
  const std::size_t n = prompt.size();
  const std::size_t width = c.num_layers * c.num_heads;
  ModeSample out;
  out.working_set = kv_bytes(c, n + new_tokens);
  const auto t0 = std::chrono::steady_clock::now();
  switch (mode) {
    case BenchMode::Inference:
      generate(model, prompt, new_tokens, {}, {.record_trace = false});
      break;
    case BenchMode::Macs: {
      MacsStream stream(n, MacsConfig{});
      generate(model, prompt, new_tokens, {},
               {.record_trace = false, .on_step = [&](const StepAttention& s) { stream.on_step(s); }});
      const auto map = stream.finish();
      // one step's rows (decoder buffer and its copy), consistency state, scores
      const std::size_t last_row = n + (new_tokens ? new_tokens - 1 : 0);
      out.working_set += 2 * width * last_row * sizeof(float) + 2 * n * sizeof(double) +
                         (map.per_step_z.size() * 2 + 1) * n * sizeof(double);
      break;
    }
    case BenchMode::Rollout: {
      const auto rec = generate(model, prompt, new_tokens, {}, {.full_matrices = true});
      std::uint64_t trace_bytes = rec.trace.prefill.data().size() * sizeof(float);
      for (const auto& s : rec.trace.steps) trace_bytes += s.data().size() * sizeof(float);
      out.working_set += trace_bytes;
      if (!rec.trace.steps.empty()) {
        const auto map = rollout_attribution(rec.trace, RolloutConfig{});
        const std::size_t size = n + rec.trace.steps.size() - 1;
        out.working_set += (c.num_layers + 1) * size * size * sizeof(double) +
                           (map.per_step_z.size() * 2 + 1) * n * sizeof(double);
      }
      break;
    }
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline ModeSample best_of(const Model& model, const std::vector<std::int32_t>& prompt,
                          const BenchOptions& o, BenchMode mode) {
  ModeSample best;
  best.seconds = -1.0;
  for (unsigned r = 0; r < std::max(1u, o.repetitions); ++r) {
    const auto s = run_mode(model, prompt, o.new_tokens, mode);
    if (best.seconds < 0.0 || s.seconds < best.seconds) best.seconds = s.seconds;
    best.working_set = std::max(best.working_set, s.working_set);
  }
  return best;
}

struct ChildReport {
  ModeSample sample;
  long max_rss_kb = 0;
  int ok = 0;
};

inline std::optional<ChildReport> run_isolated(const Model& model,
                                               const std::vector<std::int32_t>& prompt,
                                               const BenchOptions& o, BenchMode mode) {
  int fds[2];
  if (pipe(fds) != 0) return std::nullopt;
  const pid_t pid = fork();
  if (pid < 0) {
    close(fds[0]);
    close(fds[1]);
    return std::nullopt;
  }
  if (pid == 0) {
    close(fds[0]);
    ChildReport rep;
    try {
      rep.sample = best_of(model, prompt, o, mode);
      rusage ru{};
      getrusage(RUSAGE_SELF, &ru);
      rep.max_rss_kb = ru.ru_maxrss;
      rep.ok = 1;
    } catch (...) {
      rep.ok = 0;
    }
    [[maybe_unused]] auto w = write(fds[1], &rep, sizeof rep);
    close(fds[1]);
    _exit(0);
  }
  close(fds[1]);
  ChildReport rep;
  std::size_t got = 0;
  auto* bytes = reinterpret_cast<char*>(&rep);
  while (got < sizeof rep) {
    const auto r = read(fds[0], bytes + got, sizeof rep - got);
    if (r <= 0) break;
    got += static_cast<std::size_t>(r);
  }
  close(fds[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  if (got != sizeof rep || !rep.ok) return std::nullopt;
  return rep;
}

}  // namespace detail

// Throughput and memory of plain decoding versus decoding with streaming
// MACS or with full-matrix capture plus rollout, over context lengths.
inline std::vector<BenchRow> run_bench(ModelConfig model_config, const BenchOptions& o,
                                       std::uint64_t seed) {
  if (o.context_lengths.empty()) throw std::invalid_argument("bench: no context lengths");
  const auto longest = *std::max_element(o.context_lengths.begin(), o.context_lengths.end());
  if (longest == 0) throw std::invalid_argument("bench: context length must be positive");
  model_config.max_seq = std::max(model_config.max_seq, longest + o.new_tokens);
  const Model model = init_model(model_config);
  Rng rng(derive_seed(seed, 0xbe9c));

  std::vector<BenchRow> rows;
  for (auto len : o.context_lengths) {
    if (len == 0) throw std::invalid_argument("bench: context length must be positive");
    std::vector<std::int32_t> prompt(len);
    for (auto& t : prompt) t = static_cast<std::int32_t>(rng.below(model_config.vocab_size));
    double base_seconds = 0.0;
    for (auto mode : {BenchMode::Inference, BenchMode::Macs, BenchMode::Rollout}) {
      BenchRow row;
      row.context_len = len;
      row.mode = mode;
      detail::ModeSample s;
      std::optional<detail::ChildReport> child;
      if (o.isolate) child = detail::run_isolated(model, prompt, o, mode);
      if (child) {
        s = child->sample;
        row.peak_rss_kb = static_cast<std::uint64_t>(child->max_rss_kb);
      } else {
        s = detail::best_of(model, prompt, o, mode);
      }
      row.seconds = s.seconds;
      row.working_set_bytes = s.working_set;
      if (o.new_tokens > 0 && s.seconds > 0.0) row.tokens_per_sec = o.new_tokens / s.seconds;
      if (mode == BenchMode::Inference) base_seconds = s.seconds;
      else if (o.new_tokens > 0 && base_seconds > 0.0)
        row.overhead_pct = 100.0 * (s.seconds - base_seconds) / base_seconds;
      rows.push_back(row);
    }
  }
  return rows;
}

inline nlohmann::json to_json(const BenchRow& r) {
  using nlohmann::json;
  const auto opt = [](const auto& v) { return v ? json(*v) : json(nullptr); };
  return {{"context_len", r.context_len},
          {"mode", bench_mode_name(r.mode)},
          {"seconds", r.seconds},
          {"tokens_per_sec", opt(r.tokens_per_sec)},
          {"overhead_pct", opt(r.overhead_pct)},
          {"working_set_bytes", r.working_set_bytes},
          {"peak_rss_kb", opt(r.peak_rss_kb)}};
}

}  // namespace attnscope

#endif  // ATTNSCOPE_BENCH_HPP
