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

#ifndef ATTNSCOPE_MACS_HPP
#define ATTNSCOPE_MACS_HPP

// Multi-layer attention consistency scoring.
//
// For the query row that predicts generated token k, every layer l and head h
// splits its attention into the N input keys and the k-1 generated keys.
// Attention paid to generated keys is spread uniformly back over the inputs,
// heads are pooled elementwise, the pooled vector is lifted onto the floor
// [1-alpha, 1], and the floored vectors are multiplied across layers 0..L.
// The product is standardised over the N inputs to give the step's scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnscope/trace.hpp"
#include "json.hpp"

namespace attnscope {

enum class Pooling { Max, Mean, Min };
enum class StdMode { Population, Sample };
// What the cross-step aggregate averages: per-step z-scores or raw scores.
enum class Aggregate { ZScore, Raw };

struct MacsConfig {
  double alpha = 0.8;
  Pooling pooling = Pooling::Max;
  bool redistribute = true;
  StdMode zscore_std = StdMode::Population;
  Aggregate aggregate = Aggregate::ZScore;

  bool operator==(const MacsConfig&) const = default;
};

inline const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::Max: return "max";
    case Pooling::Mean: return "mean";
    case Pooling::Min: return "min";
  }
  return "?";
}

inline void validate_macs_config(const MacsConfig& c) {
  if (!(c.alpha > 0.0 && c.alpha <= 1.0))
    throw std::invalid_argument("macs: alpha must lie in (0, 1]");
}

inline nlohmann::json to_json(const MacsConfig& c) {
  return {{"alpha", c.alpha},
          {"pooling", pooling_name(c.pooling)},
          {"redistribute", c.redistribute},
          {"zscore_std", c.zscore_std == StdMode::Population ? "population" : "sample"},
          {"aggregate", c.aggregate == Aggregate::ZScore ? "z" : "raw"}};
}

// Applies one `key=value` override; returns false if the key is not a MACS
// setting. Throws std::invalid_argument on a bad value.
inline bool apply_macs_override(MacsConfig& c, const std::string& key,
                                const std::string& value) {
  const auto bad = [&] {
    return std::invalid_argument("macs: bad value '" + value + "' for " + key);
  };
  if (key == "alpha") {
    try {
      std::size_t used = 0;
      c.alpha = std::stod(value, &used);
      if (used != value.size()) throw bad();
    } catch (const std::logic_error&) {
      throw bad();
    }
  } else if (key == "pooling") {
    if (value == "max") c.pooling = Pooling::Max;
    else if (value == "mean") c.pooling = Pooling::Mean;
    else if (value == "min") c.pooling = Pooling::Min;
    else throw bad();
  } else if (key == "redistribute") {
    if (value == "true" || value == "1") c.redistribute = true;
    else if (value == "false" || value == "0") c.redistribute = false;
    else throw bad();
  } else if (key == "zscore_std") {
    if (value == "population") c.zscore_std = StdMode::Population;
    else if (value == "sample") c.zscore_std = StdMode::Sample;
    else throw bad();
  } else if (key == "aggregate") {
    if (value == "z") c.aggregate = Aggregate::ZScore;
    else if (value == "raw") c.aggregate = Aggregate::Raw;
    else throw bad();
  } else {
    return false;
  }
  return true;
}

inline MacsConfig macs_config_from_json(const nlohmann::json& j,
                                        MacsConfig c = {}) {
  for (const auto& [key, value] : j.items())
    if (!apply_macs_override(c, key,
                             value.is_string() ? value.get<std::string>() : value.dump()))
      throw std::invalid_argument("macs: unknown key '" + key + "'");
  validate_macs_config(c);
  return c;
}

// a_R = a_I + (sum of a_O) / N
inline std::vector<double> redistribute(std::span<const double> inputs,
                                        std::span<const double> outputs) {
  if (inputs.empty())
    throw std::invalid_argument("redistribute: no input tokens");
  double spill = 0.0;
  for (double v : outputs) spill += v;
  spill /= static_cast<double>(inputs.size());
  std::vector<double> out(inputs.begin(), inputs.end());
  for (auto& v : out) v += spill;
  return out;
}

// `rows` is a [head][N] stack.
inline std::vector<double> pool_heads(std::span<const double> rows,
                                      std::size_t heads, Pooling mode) {
  if (heads == 0) throw std::invalid_argument("pool_heads: no heads");
  if (rows.size() % heads != 0)
    throw std::invalid_argument("pool_heads: ragged head stack");
  const std::size_t n = rows.size() / heads;
  std::vector<double> out(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n));
  for (std::size_t h = 1; h < heads; ++h) {
    const double* r = rows.data() + h * n;
    for (std::size_t i = 0; i < n; ++i) {
      switch (mode) {
        case Pooling::Max: out[i] = std::max(out[i], r[i]); break;
        case Pooling::Min: out[i] = std::min(out[i], r[i]); break;
        case Pooling::Mean: out[i] += r[i]; break;
      }
    }
  }
  if (mode == Pooling::Mean)
    for (auto& v : out) v /= static_cast<double>(heads);
  return out;
}

inline constexpr double kPooledOvershoot = 1e-6;

// m = alpha * m' + (1 - alpha)
inline std::vector<double> apply_floor(std::span<const double> pooled,
                                       double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("apply_floor: alpha must lie in (0, 1]");
  std::vector<double> out(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    if (!(pooled[i] >= 0.0 && pooled[i] <= 1.0 + kPooledOvershoot))
      throw std::invalid_argument("apply_floor: pooled attention outside [0, 1]");
    out[i] = alpha * pooled[i] + (1.0 - alpha);
  }
  return out;
}

inline std::vector<double> consistency_update(std::span<const double> previous,
                                              std::span<const double> floored) {
  if (previous.size() != floored.size())
    throw std::invalid_argument("consistency_update: length mismatch");
  std::vector<double> out(previous.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = previous[i] * floored[i];
  return out;
}

inline constexpr double kDegenerateSigma = 1e-12;

struct Standardized {
  std::vector<double> z;
  double mean = 0.0;
  double stddev = 0.0;
};

// A spread below 1e-12 yields all-zero scores.
inline Standardized standardize(std::span<const double> values, StdMode mode) {
  Standardized out;
  const std::size_t n = values.size();
  out.z.assign(n, 0.0);
  if (n == 0) return out;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double dof = mode == StdMode::Population ? static_cast<double>(n)
                                                 : static_cast<double>(n) - 1.0;
  const double sd = dof > 0.0 ? std::sqrt(ss / dof) : 0.0;
  out.mean = mean;
  out.stddev = sd;
  if (sd < kDegenerateSigma) return out;
  for (std::size_t i = 0; i < n; ++i) out.z[i] = (values[i] - mean) / sd;
  return out;
}

inline std::vector<double> z_score(std::span<const double> values,
                                   StdMode mode = StdMode::Population) {
  return standardize(values, mode).z;
}

// Attribution scores over the N input tokens, one row per generation step.
struct AttributionMap {
  std::vector<std::vector<double>> per_step_z;
  std::vector<std::vector<double>> per_step_raw;
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<double> aggregate;
};

inline std::vector<double> aggregate_steps(
    const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  std::vector<double> out(rows.front().size(), 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += r[i];
  for (auto& v : out) v /= static_cast<double>(rows.size());
  return out;
}

inline void finalize_aggregate(AttributionMap& map, Aggregate mode) {
  map.aggregate = aggregate_steps(mode == Aggregate::ZScore ? map.per_step_z
                                                            : map.per_step_raw);
}

// Running per-step state, folded one layer at a time as rows arrive.
class ConsistencyState {
 public:
  ConsistencyState(std::size_t input_len, const MacsConfig& config)
      : n_(input_len), config_(config) {
    validate_macs_config(config);
    if (n_ == 0) throw std::invalid_argument("macs: no input tokens");
  }

  // `rows` holds one layer's [head][key] weights with `keys` >= N.
  void absorb_layer(std::span<const float> rows, std::size_t heads,
                    std::size_t keys) {
    if (keys < n_ || rows.size() != heads * keys)
      throw std::invalid_argument("macs: layer rows do not match dimensions");
    std::vector<double> stack(heads * n_);
    std::vector<double> inputs(n_);
    std::vector<double> outputs(keys - n_);
    for (std::size_t h = 0; h < heads; ++h) {
      const float* row = rows.data() + h * keys;
      std::copy(row, row + n_, inputs.begin());
      std::copy(row + n_, row + keys, outputs.begin());
      const auto spread = config_.redistribute ? redistribute(inputs, outputs) : inputs;
      std::copy(spread.begin(), spread.end(), stack.begin() + static_cast<std::ptrdiff_t>(h * n_));
    }
    pooled_ = pool_heads(stack, heads, config_.pooling);
    floored_ = apply_floor(pooled_, config_.alpha);
    consistency_ = layers_seen_ == 0 ? floored_
                                     : consistency_update(consistency_, floored_);
    ++layers_seen_;
  }

  std::size_t layers_seen() const { return layers_seen_; }
  const std::vector<double>& pooled() const { return pooled_; }
  const std::vector<double>& floored() const { return floored_; }
  const std::vector<double>& consistency() const { return consistency_; }

 private:
  std::size_t n_;
  MacsConfig config_;
  std::size_t layers_seen_ = 0;
  std::vector<double> pooled_;
  std::vector<double> floored_;
  std::vector<double> consistency_;
};

struct MacsStepResult {
  std::vector<double> z;
  std::vector<double> raw;  // c_L
  double mean = 0.0;
  double stddev = 0.0;
};

// Whole-step form: pools every layer first, then floors and multiplies.
inline MacsStepResult macs_step(const StepAttention& step, std::size_t input_len,
                                const MacsConfig& config) {
  validate_macs_config(config);
  if (input_len == 0 || step.layers() == 0 || step.heads() == 0 ||
      step.keys() != input_len + step.step() - 1)
    throw std::invalid_argument("macs_step: step dimensions do not match N=" +
                                std::to_string(input_len));
  const std::size_t n = input_len;
  const std::size_t heads = step.heads();
  std::vector<std::vector<double>> pooled(step.layers());
  std::vector<double> stack(heads * n);
  for (std::size_t l = 0; l < step.layers(); ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      const auto row = step.row(l, h);
      const std::vector<double> inputs(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(n));
      const std::vector<double> outputs(row.begin() + static_cast<std::ptrdiff_t>(n), row.end());
      const auto spread = config.redistribute ? redistribute(inputs, outputs) : inputs;
      std::copy(spread.begin(), spread.end(), stack.begin() + static_cast<std::ptrdiff_t>(h * n));
    }
    pooled[l] = pool_heads(stack, heads, config.pooling);
  }
  MacsStepResult out;
  out.raw = apply_floor(pooled[0], config.alpha);
  for (std::size_t l = 1; l < pooled.size(); ++l)
    out.raw = consistency_update(out.raw, apply_floor(pooled[l], config.alpha));
  auto s = standardize(out.raw, config.zscore_std);
  out.z = std::move(s.z);
  out.mean = s.mean;
  out.stddev = s.stddev;
  return out;
}

inline AttributionMap macs_run(const AttentionTrace& trace,
                               const MacsConfig& config) {
  if (trace.steps.empty()) throw std::invalid_argument("macs_run: trace has no steps");
  AttributionMap map;
  for (const auto& step : trace.steps) {
    if (step.layers() != trace.layer_count() || step.heads() != trace.heads)
      throw std::invalid_argument("macs_run: step " + std::to_string(step.step()) +
                                  " does not match trace dimensions");
    auto r = macs_step(step, trace.input_len, config);
    map.per_step_z.push_back(std::move(r.z));
    map.per_step_raw.push_back(std::move(r.raw));
    map.mu.push_back(r.mean);
    map.sigma.push_back(r.stddev);
  }
  finalize_aggregate(map, config.aggregate);
  return map;
}

// Streaming form: consume steps as the decoder emits them (e.g. from
// GenerateOptions::on_step) without keeping any attention rows.
class MacsStream {
 public:
  MacsStream(std::size_t input_len, const MacsConfig& config)
      : n_(input_len), config_(config) {
    validate_macs_config(config);
  }

  // Returns the step's z-scores.
  const std::vector<double>& on_step(const StepAttention& step) {
    if (step.keys() != n_ + step.step() - 1)
      throw std::invalid_argument("macs stream: unexpected row length");
    ConsistencyState state(n_, config_);
    const std::size_t block = step.heads() * step.keys();
    for (std::size_t l = 0; l < step.layers(); ++l)
      state.absorb_layer(step.data().subspan(l * block, block), step.heads(),
                         step.keys());
    auto s = standardize(state.consistency(), config_.zscore_std);
    map_.per_step_raw.push_back(state.consistency());
    map_.per_step_z.push_back(std::move(s.z));
    map_.mu.push_back(s.mean);
    map_.sigma.push_back(s.stddev);
    return map_.per_step_z.back();
  }

  AttributionMap finish() {
    finalize_aggregate(map_, config_.aggregate);
    return std::move(map_);
  }

 private:
  std::size_t n_;
  MacsConfig config_;
  AttributionMap map_;
};

}  // namespace attnscope

#endif  // ATTNSCOPE_MACS_HPP
