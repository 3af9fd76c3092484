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

#ifndef ATTNSCOPE_RUN_CONFIG_HPP
#define ATTNSCOPE_RUN_CONFIG_HPP

#include <cstdint>
#include <cstdlib>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "baselines.hpp"
#include "eval.hpp"
#include "json.hpp"
#include "macs.hpp"
#include "toy_decoder.hpp"

namespace attnscope {

// Bad command-line or configuration values (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable, malformed or inconsistent input data (exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  ModelConfig model;
  MacsConfig macs;
  RolloutConfig rollout;
  FractionSchedule schedule;
  std::vector<BaseMetric> metrics{std::begin(kAllMetrics), std::end(kAllMetrics)};
  std::uint32_t max_new_tokens = 8;
  std::uint64_t seed = 0;
  std::string corpus;
  std::string output_dir = "attnscope-out";
  unsigned jobs = 1;
  bool full_matrices = false;
  std::vector<std::string> ablations;  // applied `key=value` strings, in order
};

inline std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const auto item = text.substr(start, end - start);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw UsageError("bad fraction '" + item + "' in --fractions");
    }
    start = end + 1;
  }
  FractionSchedule s{out};
  try {
    validate_schedule(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return out;
}

inline std::vector<BaseMetric> parse_metrics(const std::vector<std::string>& names) {
  std::vector<BaseMetric> out;
  for (const auto& n : names) {
    const auto m = parse_metric(n);
    if (!m) throw UsageError("unknown metric '" + n + "'");
    if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
  }
  if (out.empty()) throw UsageError("no metrics selected");
  return out;
}

// `key=value`; keys may carry a `macs.` or `rollout.` prefix.
inline void apply_ablation(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw UsageError("--ablate expects key=value, got '" + assignment + "'");
  std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  bool macs = true, rollout = true;
  if (key.starts_with("macs.")) key.erase(0, 5), rollout = false;
  else if (key.starts_with("rollout.")) key.erase(0, 8), macs = false;
  try {
    bool known = false;
    if (macs) known = apply_macs_override(c.macs, key, value);
    if (!known && rollout) known = apply_rollout_override(c.rollout, key, value);
    if (!known) throw UsageError("unknown --ablate key '" + key + "'");
    validate_macs_config(c.macs);
    validate_rollout_config(c.rollout);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  c.ablations.push_back(assignment);
}

// Config file schema (all keys optional):
//   {model: {...}, macs: {...}, rollout: {...}, fractions: [...],
//    metrics: [...], max_new_tokens, seed, corpus, output_dir, jobs,
//    full_matrices}
// The model seed defaults to `seed` unless `model.seed` is given.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  if (!j.is_object()) throw DataError("config: expected a JSON object");
  static const std::vector<std::string> known = {
      "model", "macs", "rollout", "fractions", "metrics", "max_new_tokens", "seed",
      "corpus", "output_dir", "jobs", "full_matrices"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw DataError("config: unknown key '" + key + "'");
  try {
    c.seed = j.value("seed", std::uint64_t{0});
    c.model.seed = c.seed;
    if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
    validate_model_config(c.model);
    if (j.contains("macs")) c.macs = macs_config_from_json(j["macs"]);
    if (j.contains("rollout")) c.rollout = rollout_config_from_json(j["rollout"]);
    if (j.contains("fractions")) {
      c.schedule.fractions = j["fractions"].get<std::vector<double>>();
      validate_schedule(c.schedule);
    }
    if (j.contains("metrics"))
      c.metrics = parse_metrics(j["metrics"].get<std::vector<std::string>>());
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    c.corpus = j.value("corpus", c.corpus);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.jobs = j.value("jobs", c.jobs);
    c.full_matrices = j.value("full_matrices", c.full_matrices);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("config: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  if (c.max_new_tokens == 0) throw DataError("config: max_new_tokens must be positive");
  return c;
}

// An explicit --out wins, then ATTNSCOPE_OUT, then the config value.
inline std::string resolve_output_dir(const std::optional<std::string>& flag,
                                      const RunConfig& c) {
  if (flag && !flag->empty()) return *flag;
  if (const char* env = std::getenv("ATTNSCOPE_OUT"); env && *env) return env;
  return c.output_dir;
}

}  // namespace attnscope

#endif  // ATTNSCOPE_RUN_CONFIG_HPP
