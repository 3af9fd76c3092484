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

#ifndef ATTNSCOPE_BASELINES_HPP
#define ATTNSCOPE_BASELINES_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnscope/macs.hpp"
#include "attnscope/rng.hpp"
#include "attnscope/trace.hpp"
#include "json.hpp"

namespace attnscope {

struct RolloutConfig {
  // Weight of raw attention against the identity (residual path).
  double residual_mix = 0.5;
  bool renormalize_rows = true;

  bool operator==(const RolloutConfig&) const = default;
};

inline void validate_rollout_config(const RolloutConfig& c) {
  if (!(c.residual_mix >= 0.0 && c.residual_mix <= 1.0))
    throw std::invalid_argument("rollout: residual_mix must lie in [0, 1]");
}

inline nlohmann::json to_json(const RolloutConfig& c) {
  return {{"residual_mix", c.residual_mix},
          {"head_agg", "mean"},
          {"renormalize_rows", c.renormalize_rows}};
}

inline bool apply_rollout_override(RolloutConfig& c, const std::string& key,
                                   const std::string& value) {
  if (key == "residual_mix") {
    try {
      std::size_t used = 0;
      c.residual_mix = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("rollout: bad residual_mix '" + value + "'");
    }
  } else if (key == "renormalize_rows") {
    if (value == "true" || value == "1") c.renormalize_rows = true;
    else if (value == "false" || value == "0") c.renormalize_rows = false;
    else throw std::invalid_argument("rollout: bad renormalize_rows '" + value + "'");
  } else {
    return false;
  }
  return true;
}

inline RolloutConfig rollout_config_from_json(const nlohmann::json& j,
                                              RolloutConfig c = {}) {
  for (const auto& [key, value] : j.items()) {
    if (key == "head_agg") continue;
    if (!apply_rollout_override(c, key,
                                value.is_string() ? value.get<std::string>() : value.dump()))
      throw std::invalid_argument("rollout: unknown key '" + key + "'");
  }
  validate_rollout_config(c);
  return c;
}

// Dense square matrix, row-major.
struct SquareMatrix {
  std::size_t n = 0;
  std::vector<double> a;

  explicit SquareMatrix(std::size_t size = 0) : n(size), a(size * size, 0.0) {}
  static SquareMatrix identity(std::size_t size) {
    SquareMatrix m(size);
    for (std::size_t i = 0; i < size; ++i) m(i, i) = 1.0;
    return m;
  }
  double& operator()(std::size_t r, std::size_t c) { return a[r * n + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a[r * n + c]; }
};

inline SquareMatrix operator*(const SquareMatrix& x, const SquareMatrix& y) {
  if (x.n != y.n) throw std::invalid_argument("matrix size mismatch");
  SquareMatrix out(x.n);
  for (std::size_t i = 0; i < x.n; ++i)
    for (std::size_t k = 0; k < x.n; ++k) {
      const double xik = x(i, k);
      if (xik == 0.0) continue;
      for (std::size_t j = 0; j < x.n; ++j) out(i, j) += xik * y(k, j);
    }
  return out;
}

// A' = mix * A + (1 - mix) * I, optionally row-renormalised.
inline SquareMatrix residual_adjust(const SquareMatrix& attention,
                                    const RolloutConfig& config) {
  SquareMatrix out(attention.n);
  for (std::size_t i = 0; i < attention.n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < attention.n; ++j) {
      out(i, j) = config.residual_mix * attention(i, j) +
                  (i == j ? 1.0 - config.residual_mix : 0.0);
      sum += out(i, j);
    }
    if (config.renormalize_rows && sum > 0.0)
      for (std::size_t j = 0; j < attention.n; ++j) out(i, j) /= sum;
  }
  return out;
}

// Head-averaged causal attention per layer over every position that issued a
// query in the trace (N + steps - 1 positions).
inline std::vector<SquareMatrix> head_averaged_matrices(const AttentionTrace& trace) {
  if (!trace.full_matrices)
    throw std::invalid_argument(
        "rollout: trace lacks full attention matrices (capture with --full-matrices)");
  if (trace.steps.empty()) throw std::invalid_argument("rollout: trace has no steps");
  const std::size_t n_in = trace.input_len;
  const std::size_t size = n_in + trace.steps.size() - 1;
  const std::size_t heads = trace.heads;
  std::vector<SquareMatrix> out(trace.layer_count(), SquareMatrix(size));
  for (std::size_t l = 0; l < trace.layer_count(); ++l) {
    auto& m = out[l];
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t q = 0; q < n_in; ++q) {
        const auto row = trace.prefill.row(l, h, q);
        for (std::size_t j = 0; j <= q; ++j) m(q, j) += row[j];
      }
      for (std::size_t q = n_in; q < size; ++q) {
        // Position q is the query of step q - N + 2.
        const auto row = trace.steps[q - n_in + 1].row(l, h);
        for (std::size_t j = 0; j < row.size(); ++j) m(q, j) += row[j];
      }
    }
    for (auto& v : m.a) v /= static_cast<double>(heads);
  }
  return out;
}

// Full product A^(L) ... A^(0) of already-adjusted layer matrices.
inline SquareMatrix rollout_product(const std::vector<SquareMatrix>& layers) {
  if (layers.empty()) throw std::invalid_argument("rollout: no layers");
  SquareMatrix acc = layers.front();
  for (std::size_t l = 1; l < layers.size(); ++l) acc = layers[l] * acc;
  return acc;
}

// Per step k, row N+k-2 of the rollout product restricted to the input
// columns, standardised like MACS scores. Only the one row is propagated.
inline AttributionMap rollout_attribution(const AttentionTrace& trace,
                                          const RolloutConfig& config) {
  validate_rollout_config(config);
  auto layers = head_averaged_matrices(trace);
  for (auto& m : layers) m = residual_adjust(m, config);
  const std::size_t n_in = trace.input_len;
  const std::size_t size = layers.front().n;

  AttributionMap map;
  std::vector<double> v(size), next(size);
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const std::size_t query = n_in + s - 1;
    std::fill(v.begin(), v.end(), 0.0);
    v[query] = 1.0;
    for (std::size_t l = layers.size(); l-- > 0;) {
      std::fill(next.begin(), next.end(), 0.0);
      const auto& m = layers[l];
      for (std::size_t i = 0; i <= query; ++i) {
        if (v[i] == 0.0) continue;
        for (std::size_t j = 0; j <= i; ++j) next[j] += v[i] * m(i, j);
      }
      std::swap(v, next);
    }
    std::vector<double> raw(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_in));
    auto st = standardize(raw, StdMode::Population);
    map.per_step_raw.push_back(std::move(raw));
    map.per_step_z.push_back(std::move(st.z));
    map.mu.push_back(st.mean);
    map.sigma.push_back(st.stddev);
  }
  finalize_aggregate(map, Aggregate::ZScore);
  return map;
}

// I.i.d. uniform scores per step, standardised.
inline AttributionMap random_attribution(std::size_t input_len,
                                         std::size_t num_steps,
                                         std::uint64_t seed) {
  if (input_len == 0) throw std::invalid_argument("random: no input tokens");
  Rng rng(seed);
  AttributionMap map;
  std::vector<double> raw(input_len);
  for (std::size_t s = 0; s < num_steps; ++s) {
    for (auto& r : raw) r = rng.uniform();
    auto st = standardize(raw, StdMode::Population);
    map.per_step_raw.push_back(raw);
    map.per_step_z.push_back(std::move(st.z));
    map.mu.push_back(st.mean);
    map.sigma.push_back(st.stddev);
  }
  finalize_aggregate(map, Aggregate::ZScore);
  return map;
}

}  // namespace attnscope

#endif  // ATTNSCOPE_BASELINES_HPP
