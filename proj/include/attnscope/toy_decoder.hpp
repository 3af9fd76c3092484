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

#ifndef ATTNSCOPE_TOY_DECODER_HPP
#define ATTNSCOPE_TOY_DECODER_HPP

// A miniature pre-norm decoder-only Transformer with a KV cache.
//
//   x      = tok_emb[t] + pos_emb[p]
//   x     += Attn(rms(x; g_attn)) Wo          (causal, multi-head)
//   x     += gelu(rms(x; g_mlp) W1) W2
//   logits = logit_scale * tok_emb . rms(x; g_final)   (tied unembedding)
//
// Matrices are row-major [in][out]. Computation is in double precision;
// attention rows are recorded as float.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnscope/rng.hpp"
#include "attnscope/trace.hpp"
#include "json.hpp"

namespace attnscope {

enum class ModelMode { RandomInit, CopyTask };

struct ModelConfig {
  std::uint32_t vocab_size = 64;
  std::uint32_t d_model = 32;
  std::uint32_t num_layers = 2;
  std::uint32_t num_heads = 4;
  std::uint32_t max_seq = 256;
  std::uint64_t seed = 0;
  ModelMode mode = ModelMode::RandomInit;

  bool operator==(const ModelConfig&) const = default;
};

inline const char* mode_name(ModelMode m) {
  return m == ModelMode::CopyTask ? "copy" : "random";
}

inline void validate_model_config(const ModelConfig& c) {
  if (c.vocab_size < 2)
    throw std::invalid_argument("model: vocab_size must be at least 2");
  if (c.num_heads == 0 || c.d_model == 0 || c.d_model % c.num_heads != 0)
    throw std::invalid_argument("model: d_model must be divisible by num_heads");
  if (c.num_layers == 0) throw std::invalid_argument("model: num_layers >= 1");
  if (c.max_seq == 0) throw std::invalid_argument("model: max_seq >= 1");
  if (c.mode == ModelMode::CopyTask) {
    if (c.num_layers != 1)
      throw std::invalid_argument("model: copy mode builds exactly one layer");
    if (c.d_model < c.vocab_size + 2)
      throw std::invalid_argument("model: copy mode needs d_model >= vocab_size + 2");
  }
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
          {"num_layers", c.num_layers}, {"num_heads", c.num_heads},
          {"max_seq", c.max_seq},       {"seed", c.seed},
          {"mode", mode_name(c.mode)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j,
                                          ModelConfig c = {}) {
  for (const auto& [key, _] : j.items())
    if (key != "vocab_size" && key != "d_model" && key != "num_layers" && key != "num_heads" &&
        key != "max_seq" && key != "seed" && key != "mode")
      throw std::invalid_argument("model: unknown key '" + key + "'");
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "random") c.mode = ModelMode::RandomInit;
    else if (m == "copy") c.mode = ModelMode::CopyTask;
    else throw std::invalid_argument("model: unknown mode '" + m + "'");
  }
  return c;
}

struct LayerWeights {
  std::vector<double> attn_norm;  // [d]
  std::vector<double> wq, wk, wv, wo;  // [d][d]
  std::vector<double> mlp_norm;   // [d]
  std::vector<double> w1;         // [d][ff]
  std::vector<double> w2;         // [ff][d]
};

struct ModelWeights {
  std::vector<double> tok_emb;  // [vocab][d]
  std::vector<double> pos_emb;  // [max_seq][d]
  std::vector<LayerWeights> layers;
  std::vector<double> final_norm;  // [d]
  double logit_scale = 1.0;
  std::size_t ff_dim = 0;
  // Per-token key salience of the copy fixture; empty for random models.
  std::vector<double> salience;
};

class Model {
 public:
  const ModelConfig& config() const { return config_; }
  const ModelWeights& weights() const { return weights_; }
  std::size_t head_dim() const { return config_.d_model / config_.num_heads; }

  friend Model init_model(const ModelConfig& config);

 private:
  ModelConfig config_;
  ModelWeights weights_;
};

inline constexpr double kRmsEpsilon = 1e-6;

inline void rms_norm(std::span<const double> x, std::span<const double> gain,
                     std::span<double> out) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kRmsEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

inline double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

// out[j] += sum_i x[i] * w[i][j]
inline void matvec_acc(std::span<const double> x, std::span<const double> w,
                       std::size_t cols, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* row = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += xi * row[j];
  }
}

namespace detail {

inline std::vector<double> normal_matrix(Rng& rng, std::size_t n, double stddev) {
  std::vector<double> m(n);
  for (auto& v : m) v = rng.normal(0.0, stddev);
  return m;
}

inline void init_random(const ModelConfig& c, ModelWeights& w) {
  const std::size_t d = c.d_model;
  Rng rng(c.seed);
  w.ff_dim = 4 * d;
  w.tok_emb = normal_matrix(rng, std::size_t{c.vocab_size} * d, 1.0);
  w.pos_emb = normal_matrix(rng, std::size_t{c.max_seq} * d, 0.5);
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::uint32_t l = 0; l < c.num_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm.assign(d, 1.0);
    lw.mlp_norm.assign(d, 1.0);
    lw.wq = normal_matrix(rng, d * d, proj);
    lw.wk = normal_matrix(rng, d * d, proj);
    lw.wv = normal_matrix(rng, d * d, proj);
    lw.wo = normal_matrix(rng, d * d, proj);
    lw.w1 = normal_matrix(rng, d * w.ff_dim, proj);
    lw.w2 = normal_matrix(rng, w.ff_dim * d,
                          1.0 / std::sqrt(static_cast<double>(w.ff_dim)));
    w.layers.push_back(std::move(lw));
  }
  w.final_norm.assign(d, 1.0);
  w.logit_scale = proj;
}

// Copy fixture. Each token embeds as [one-hot(v) | salience(v) | 1]. Every
// head scores key j by (constant query) x (key salience), so attention peaks
// on the most salient prior token; values and output projection are the
// identity on the one-hot block, and the unembedding is the embedding
// transposed, so the logits favour whatever token was attended.
inline void init_copy(const ModelConfig& c, ModelWeights& w) {
  const std::size_t d = c.d_model;
  const std::size_t vocab = c.vocab_size;
  const std::size_t dh = d / c.num_heads;
  const std::size_t sal = vocab;
  const std::size_t bias = vocab + 1;
  Rng rng(c.seed);

  std::vector<std::size_t> rank(vocab);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(rank));
  w.salience.resize(vocab);
  for (std::size_t v = 0; v < vocab; ++v)
    w.salience[v] = static_cast<double>(rank[v]) / static_cast<double>(vocab - 1);

  w.ff_dim = 1;
  w.tok_emb.assign(vocab * d, 0.0);
  for (std::size_t v = 0; v < vocab; ++v) {
    w.tok_emb[v * d + v] = 1.0;
    w.tok_emb[v * d + sal] = w.salience[v];
    w.tok_emb[v * d + bias] = 1.0;
  }
  w.pos_emb.assign(std::size_t{c.max_seq} * d, 0.0);

  // Adjacent salience levels differ by 1/(vocab-1); a score gap of about 3
  // per level after normalisation keeps the peak sharp.
  const double sharpness = 0.5 * static_cast<double>(vocab) * std::sqrt(static_cast<double>(dh));
  LayerWeights lw;
  lw.attn_norm.assign(d, 1.0);
  lw.mlp_norm.assign(d, 1.0);
  lw.wq.assign(d * d, 0.0);
  lw.wk.assign(d * d, 0.0);
  lw.wv.assign(d * d, 0.0);
  lw.wo.assign(d * d, 0.0);
  for (std::size_t h = 0; h < c.num_heads; ++h) {
    lw.wq[bias * d + h * dh] = sharpness;
    lw.wk[sal * d + h * dh] = 1.0;
  }
  for (std::size_t v = 0; v < vocab; ++v) {
    lw.wv[v * d + v] = 1.0;
    lw.wo[v * d + v] = 1.0;
  }
  lw.w1.assign(d * w.ff_dim, 0.0);
  lw.w2.assign(w.ff_dim * d, 0.0);
  w.layers.push_back(std::move(lw));
  w.final_norm.assign(d, 1.0);
  w.logit_scale = 4.0;
}

}  // namespace detail

inline Model init_model(const ModelConfig& config) {
  validate_model_config(config);
  Model m;
  m.config_ = config;
  if (config.mode == ModelMode::CopyTask)
    detail::init_copy(config, m.weights_);
  else
    detail::init_random(config, m.weights_);
  return m;
}

struct GenerationRecord {
  std::vector<std::int32_t> prompt_tokens;
  std::vector<std::int32_t> generated_tokens;
  std::vector<std::vector<double>> per_step_logits;  // [step][vocab]
  AttentionTrace trace;
};

using StepCallback = std::function<void(const StepAttention&)>;

struct GenerateOptions {
  bool record_trace = true;
  // Also record the square prompt-pass attention (needed by rollout).
  bool full_matrices = false;
  // Fires once per generated token with that step's attention rows.
  StepCallback on_step = {};
};

namespace detail {

// Per-generation KV cache and scratch buffers.
class DecoderRun {
 public:
  DecoderRun(const Model& model, std::size_t capacity,
             std::vector<bool> masked)
      : model_(model),
        d_(model.config().d_model),
        heads_(model.config().num_heads),
        dh_(model.head_dim()),
        masked_(std::move(masked)),
        keys_(model.config().num_layers, std::vector<double>(capacity * d_)),
        values_(model.config().num_layers, std::vector<double>(capacity * d_)) {}

  // Feeds `token` at `position`; fills `rows` with [layer][head][key] weights
  // over keys 0..position and returns the next-token logits.
  std::vector<double> step(std::int32_t token, std::size_t position,
                           std::span<float> rows) {
    const auto& w = model_.weights();
    std::vector<double> x(d_), u(d_), q(d_), attn(d_), delta(d_);
    for (std::size_t i = 0; i < d_; ++i)
      x[i] = w.tok_emb[token * d_ + i] + w.pos_emb[position * d_ + i];

    const std::size_t n_keys = position + 1;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh_));
    std::vector<double> scores(n_keys);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
      const auto& lw = w.layers[l];
      rms_norm(x, lw.attn_norm, u);
      std::fill(q.begin(), q.end(), 0.0);
      std::span<double> k(keys_[l].data() + position * d_, d_);
      std::span<double> v(values_[l].data() + position * d_, d_);
      std::fill(k.begin(), k.end(), 0.0);
      std::fill(v.begin(), v.end(), 0.0);
      matvec_acc(u, lw.wq, d_, q);
      matvec_acc(u, lw.wk, d_, k);
      matvec_acc(u, lw.wv, d_, v);

      std::fill(attn.begin(), attn.end(), 0.0);
      for (std::size_t h = 0; h < heads_; ++h) {
        const std::size_t off = h * dh_;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n_keys; ++j) {
          if (masked_[j]) {
            scores[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          const double* kj = keys_[l].data() + j * d_ + off;
          double s = 0.0;
          for (std::size_t i = 0; i < dh_; ++i) s += q[off + i] * kj[i];
          scores[j] = s * inv_sqrt;
          peak = std::max(peak, scores[j]);
        }
        float* row = rows.empty() ? nullptr
                                  : rows.data() + (l * heads_ + h) * n_keys;
        if (peak == -std::numeric_limits<double>::infinity()) {
          // Every visible key is masked: the head contributes nothing.
          if (row) std::fill(row, row + n_keys, 0.0f);
          continue;
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n_keys; ++j) {
          scores[j] = masked_[j] ? 0.0 : std::exp(scores[j] - peak);
          total += scores[j];
        }
        for (std::size_t j = 0; j < n_keys; ++j) {
          const double a = scores[j] / total;
          if (row) row[j] = static_cast<float>(a);
          if (a == 0.0) continue;
          const double* vj = values_[l].data() + j * d_ + off;
          for (std::size_t i = 0; i < dh_; ++i) attn[off + i] += a * vj[i];
        }
      }
      std::fill(delta.begin(), delta.end(), 0.0);
      matvec_acc(attn, lw.wo, d_, delta);
      for (std::size_t i = 0; i < d_; ++i) x[i] += delta[i];

      rms_norm(x, lw.mlp_norm, u);
      std::vector<double> hidden(w.ff_dim, 0.0);
      matvec_acc(u, lw.w1, w.ff_dim, hidden);
      for (auto& hv : hidden) hv = gelu(hv);
      std::fill(delta.begin(), delta.end(), 0.0);
      matvec_acc(hidden, lw.w2, d_, delta);
      for (std::size_t i = 0; i < d_; ++i) x[i] += delta[i];
    }

    rms_norm(x, w.final_norm, u);
    const std::size_t vocab = model_.config().vocab_size;
    std::vector<double> logits(vocab, 0.0);
    for (std::size_t t = 0; t < vocab; ++t) {
      double s = 0.0;
      for (std::size_t i = 0; i < d_; ++i) s += w.tok_emb[t * d_ + i] * u[i];
      logits[t] = w.logit_scale * s;
    }
    return logits;
  }

 private:
  const Model& model_;
  std::size_t d_, heads_, dh_;
  std::vector<bool> masked_;
  std::vector<std::vector<double>> keys_;
  std::vector<std::vector<double>> values_;
};

inline std::int32_t argmax(std::span<const double> v) {
  return static_cast<std::int32_t>(
      std::max_element(v.begin(), v.end()) - v.begin());
}

inline GenerationRecord run_decoder(const Model& model,
                                    std::span<const std::int32_t> prompt,
                                    std::uint32_t max_new,
                                    const std::vector<std::int32_t>* forced,
                                    std::span<const std::int32_t> masked_keys,
                                    const GenerateOptions& options) {
  const auto& cfg = model.config();
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  if (prompt.size() + max_new > cfg.max_seq)
    throw std::length_error("generate: sequence overflow (" +
                            std::to_string(prompt.size() + max_new) + " > " +
                            std::to_string(cfg.max_seq) + ")");
  for (auto t : prompt)
    if (t < 0 || static_cast<std::uint32_t>(t) >= cfg.vocab_size)
      throw std::invalid_argument("generate: token id out of vocabulary");
  if (forced)
    for (auto t : *forced)
      if (t < 0 || static_cast<std::uint32_t>(t) >= cfg.vocab_size)
        throw std::invalid_argument("teacher_force: token id out of vocabulary");

  const std::size_t n = prompt.size();
  const std::size_t capacity = n + max_new;
  std::vector<bool> masked(capacity, false);
  for (auto p : masked_keys) {
    if (p < 0 || static_cast<std::size_t>(p) >= n)
      throw std::out_of_range("generate: masked position " + std::to_string(p) +
                              " is not a prompt position");
    masked[p] = true;
  }

  const std::size_t layers = cfg.num_layers;
  const std::size_t heads = cfg.num_heads;
  GenerationRecord rec;
  rec.prompt_tokens.assign(prompt.begin(), prompt.end());
  auto& trace = rec.trace;
  trace.last_layer = cfg.num_layers - 1;
  trace.heads = cfg.num_heads;
  trace.input_len = static_cast<std::uint32_t>(n);
  trace.full_matrices = options.full_matrices;
  if (options.full_matrices) trace.prefill = PrefillAttention(layers, heads, n);

  DecoderRun run(model, capacity, std::move(masked));
  const bool want_rows = options.record_trace || options.on_step ||
                         options.full_matrices;
  std::vector<float> rows;
  std::vector<double> logits;
  for (std::size_t p = 0; p < n; ++p) {
    rows.assign(want_rows ? layers * heads * (p + 1) : 0, 0.0f);
    logits = run.step(prompt[p], p, rows);
    if (options.full_matrices)
      for (std::size_t l = 0; l < layers; ++l)
        for (std::size_t h = 0; h < heads; ++h) {
          const float* src = rows.data() + (l * heads + h) * (p + 1);
          std::copy(src, src + p + 1, trace.prefill.row(l, h, p).begin());
        }
  }

  for (std::uint32_t k = 1; k <= max_new; ++k) {
    if (k > 1) {
      const std::size_t pos = n + k - 2;
      rows.assign(want_rows ? layers * heads * (pos + 1) : 0, 0.0f);
      logits = run.step(rec.generated_tokens.back(), pos, rows);
    }
    const std::int32_t next = forced ? (*forced)[k - 1] : argmax(logits);
    rec.generated_tokens.push_back(next);
    rec.per_step_logits.push_back(logits);
    if (want_rows) {
      StepAttention step(k, layers, heads, n + k - 1);
      std::copy(rows.begin(), rows.end(), step.data().begin());
      if (options.on_step) options.on_step(step);
      if (options.record_trace) trace.steps.push_back(std::move(step));
    }
  }

  if (options.record_trace) {
    for (std::size_t p = 0; p < n; ++p)
      trace.tokens.push_back({prompt[p], static_cast<std::int32_t>(p),
                              Segment::Context, "t" + std::to_string(prompt[p])});
    for (std::size_t i = 0; i < rec.generated_tokens.size(); ++i) {
      const auto t = rec.generated_tokens[i];
      trace.tokens.push_back({t, static_cast<std::int32_t>(n + i),
                              Segment::Generated, "t" + std::to_string(t)});
    }
  }
  return rec;
}

}  // namespace detail

// Greedy decoding of `max_new` tokens. Keys listed in `masked_keys` (prompt
// positions) get a -inf pre-softmax score in every layer, head and step.
// Prompt tokens are labelled as context; callers relabel segments as needed.
inline GenerationRecord generate(const Model& model,
                                 std::span<const std::int32_t> prompt,
                                 std::uint32_t max_new,
                                 std::span<const std::int32_t> masked_keys = {},
                                 const GenerateOptions& options = {}) {
  return detail::run_decoder(model, prompt, max_new, nullptr, masked_keys,
                             options);
}

// Runs the (possibly masked) model over prompt + continuation and records the
// logits it assigns at each continuation step instead of sampling.
inline GenerationRecord teacher_force(
    const Model& model, std::span<const std::int32_t> prompt,
    const std::vector<std::int32_t>& continuation,
    std::span<const std::int32_t> masked_keys = {},
    const GenerateOptions& options = {.record_trace = false}) {
  return detail::run_decoder(model, prompt,
                             static_cast<std::uint32_t>(continuation.size()),
                             &continuation, masked_keys, options);
}

}  // namespace attnscope

#endif  // ATTNSCOPE_TOY_DECODER_HPP
