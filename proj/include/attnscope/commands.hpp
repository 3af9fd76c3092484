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

#ifndef ATTNSCOPE_COMMANDS_HPP
#define ATTNSCOPE_COMMANDS_HPP

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "attribution_io.hpp"
#include "baselines.hpp"
#include "bench.hpp"
#include "corpus.hpp"
#include "eval.hpp"
#include "files.hpp"
#include "macs.hpp"
#include "report_html.hpp"
#include "run_config.hpp"
#include "toy_decoder.hpp"
#include "trace_io.hpp"

namespace attnscope {

// ---------------------------------------------------------------------------
// trace

inline AttentionTrace build_trace(const Model& model, const CorpusSample& sample,
                                  std::uint32_t max_new, bool full_matrices,
                                  std::uint64_t seed) {
  auto rec = generate(model, sample.prompt, max_new, {}, {.full_matrices = full_matrices});
  auto trace = std::move(rec.trace);
  for (std::size_t p = 0; p < sample.prompt.size(); ++p) {
    trace.tokens[p].segment = sample.segment_at(p);
    trace.tokens[p].text = sample.token_text[p];
  }
  trace.answers = sample.answers;
  trace.provenance = {{"tool", "attnscope"},
                      {"sample_id", sample.id},
                      {"model", to_json(model.config())},
                      {"seed", seed},
                      {"max_new_tokens", max_new}};
  return trace;
}

inline std::string serialize_trace(const AttentionTrace& trace) {
  std::ostringstream out(std::ios::binary);
  write_trace(trace, out);
  return std::move(out).str();
}

struct TraceResult {
  std::vector<fs::path> files;
};

// One .attrc per corpus sample under <out>/traces.
inline TraceResult cmd_trace(const RunConfig& c, const fs::path& out_dir, std::ostream& log) {
  if (c.corpus.empty()) throw UsageError("trace: no corpus given (--corpus or config 'corpus')");
  std::ifstream in(c.corpus);
  if (!in) throw DataError("trace: cannot open corpus " + c.corpus);
  std::vector<CorpusSample> samples;
  try {
    samples = read_corpus(in, c.model.vocab_size);
  } catch (const CorpusError& e) {
    throw DataError(c.corpus + ": " + e.what());
  }
  const Model model = init_model(c.model);
  TraceResult result;
  result.files.resize(samples.size());
  parallel_for(samples.size(), c.jobs, [&](std::size_t i) {
    const auto& s = samples[i];
    const auto max_new = s.max_new_tokens.value_or(c.max_new_tokens);
    if (max_new == 0) throw DataError("sample " + s.id + ": max_new_tokens must be positive");
    AttentionTrace trace;
    try {
      trace = build_trace(model, s, max_new, c.full_matrices, c.seed);
    } catch (const std::logic_error& e) {
      throw DataError("sample " + s.id + ": " + e.what());
    }
    const auto path = out_dir / "traces" / (s.id + ".attrc");
    write_file_atomic(path, serialize_trace(trace));
    result.files[i] = path;
  });
  log << "trace: wrote " << result.files.size() << " trace(s) to " << (out_dir / "traces").string()
      << '\n';
  return result;
}

// ---------------------------------------------------------------------------
// attribute

struct LoadedTrace {
  fs::path file;
  std::string digest;
  std::string sample_id;
  AttentionTrace trace;
};

inline LoadedTrace load_trace(const fs::path& file) {
  LoadedTrace t;
  t.file = file;
  std::string bytes;
  try {
    bytes = read_file(file);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  t.digest = digest_hex(bytes);
  std::istringstream in(bytes, std::ios::binary);
  try {
    t.trace = read_trace(in);
  } catch (const TraceError& e) {
    throw DataError(file.string() + ": " + e.what());
  }
  const auto& p = t.trace.provenance;
  t.sample_id = p.contains("sample_id") && p["sample_id"].is_string()
                    ? p["sample_id"].get<std::string>()
                    : file.stem().string();
  return t;
}

inline AttributionRecord load_attribution(const fs::path& file) {
  try {
    return attribution_from_json(nlohmann::json::parse(read_file(file)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(file.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(file.string() + ": " + e.what());
  }
}

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m = {"macs", "rollout", "random"};
  return m;
}

inline nlohmann::json method_config(const RunConfig& c, const std::string& method) {
  if (method == "macs") return to_json(c.macs);
  if (method == "rollout") return to_json(c.rollout);
  return {{"seed", c.seed}};
}

inline AttributionRecord attribute_trace(const RunConfig& c, const std::string& method,
                                         const LoadedTrace& t) {
  AttributionRecord r;
  r.method = method;
  r.config = method_config(c, method);
  r.sample_id = t.sample_id;
  r.trace_file = t.file.filename().string();
  r.trace_digest = t.digest;
  r.provenance = {{"trace", t.trace.provenance}, {"ablations", c.ablations}};
  r.input_len = t.trace.input_len;
  try {
    if (method == "macs") r.map = macs_run(t.trace, c.macs);
    else if (method == "rollout") r.map = rollout_attribution(t.trace, c.rollout);
    else r.map = random_attribution(t.trace.input_len, t.trace.steps.size(),
                                    derive_seed(c.seed, fnv1a(t.sample_id)));
  } catch (const std::invalid_argument& e) {
    throw DataError(t.file.string() + ": " + e.what());
  }
  return r;
}

struct AttributeResult {
  std::vector<fs::path> files;
};

// One JSON per trace under <out>/attributions/<method>.
inline AttributeResult cmd_attribute(const RunConfig& c, const std::string& method,
                                     const std::vector<fs::path>& inputs, const fs::path& out_dir,
                                     std::ostream& log) {
  const auto& methods = known_methods();
  if (std::find(methods.begin(), methods.end(), method) == methods.end())
    throw UsageError("attribute: unknown method '" + method + "' (macs, rollout, random)");
  std::vector<fs::path> files;
  try {
    files = collect_files(inputs, ".attrc");
  } catch (const std::runtime_error& e) {
    throw DataError(std::string("attribute: ") + e.what());
  }
  AttributeResult result;
  result.files.resize(files.size());
  parallel_for(files.size(), c.jobs, [&](std::size_t i) {
    const auto t = load_trace(files[i]);
    const auto rec = attribute_trace(c, method, t);
    const auto path = out_dir / "attributions" / method / (t.sample_id + ".json");
    write_file_atomic(path, to_json(rec).dump() + "\n");
    result.files[i] = path;
  });
  log << "attribute: " << method << " wrote " << result.files.size() << " file(s) to "
      << (out_dir / "attributions" / method).string() << '\n';
  return result;
}

// ---------------------------------------------------------------------------
// eval

struct EvalInputs {
  std::vector<fs::path> traces;
  std::vector<fs::path> attributions;
  bool force = false;
};

struct EvalResult {
  std::vector<EvalReport> reports;  // one per method
  nlohmann::json json;
  std::string csv;
  fs::path json_path, csv_path;
};

inline std::string csv_number(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

inline std::string eval_csv(const std::vector<EvalReport>& reports,
                            const std::vector<BaseMetric>& metrics) {
  std::ostringstream o;
  o << "method,sample_id,auc_pr";
  for (auto m : metrics) {
    const std::string n = metric_name(m);
    o << ',' << n << "_auc_mif," << n << "_auc_lif," << n << "_srg," << n << "_skipped";
  }
  o << '\n';
  for (const auto& r : reports)
    for (const auto& s : r.samples) {
      o << csv_field(r.method) << ',' << csv_field(s.id) << ','
        << (s.auc_pr ? csv_number(*s.auc_pr) : "");
      for (auto m : metrics) {
        const auto it = s.metrics.find(m);
        const MetricOutcome out = it == s.metrics.end() ? MetricOutcome{} : it->second;
        o << ',' << csv_number(out.auc_mif) << ',' << csv_number(out.auc_lif) << ','
          << csv_number(out.srg) << ',' << (out.skipped ? 1 : 0);
      }
      o << '\n';
    }
  return std::move(o).str();
}

namespace detail {

inline std::string format_summary(const std::optional<Summary>& s) {
  if (!s || s->n == 0 || !std::isfinite(s->mean)) return "n/a";
  char buf[64];
  if (s->ci_half_width)
    std::snprintf(buf, sizeof buf, "%+.3f ± %.3f", s->mean, *s->ci_half_width);
  else
    std::snprintf(buf, sizeof buf, "%+.3f", s->mean);
  return buf;
}

}  // namespace detail

// Scores every method's attributions against their traces with the
// perturbation harness; writes <out>/report.json and <out>/report.csv.
inline EvalResult cmd_eval(const RunConfig& c, const EvalInputs& in, const fs::path& out_dir,
                           std::ostream& log) {
  std::vector<fs::path> trace_files, attr_files;
  try {
    trace_files = collect_files(in.traces, ".attrc");
    attr_files = collect_files(in.attributions, ".json");
  } catch (const std::runtime_error& e) {
    throw DataError(std::string("eval: ") + e.what());
  }
  std::vector<LoadedTrace> traces(trace_files.size());
  parallel_for(trace_files.size(), c.jobs, [&](std::size_t i) { traces[i] = load_trace(trace_files[i]); });
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < traces.size(); ++i)
    if (!by_id.emplace(traces[i].sample_id, i).second)
      throw DataError("eval: duplicate trace for sample '" + traces[i].sample_id + "'");

  std::map<std::string, std::vector<AttributionRecord>> by_method;
  for (const auto& f : attr_files) {
    auto rec = load_attribution(f);
    by_method[rec.method].push_back(std::move(rec));
  }

  // Pairing: every attribution names an existing trace by digest, and every
  // method covers every trace.
  for (auto& [method, recs] : by_method) {
    std::set<std::string> covered;
    for (const auto& r : recs) {
      const auto it = by_id.find(r.sample_id);
      if (it == by_id.end())
        throw DataError("eval: " + method + " attribution for '" + r.sample_id +
                        "' has no matching trace");
      if (traces[it->second].digest != r.trace_digest)
        throw DataError("eval: " + method + " attribution for '" + r.sample_id +
                        "' was computed from a different trace");
      if (!covered.insert(r.sample_id).second)
        throw DataError("eval: duplicate " + method + " attribution for '" + r.sample_id + "'");
    }
    for (const auto& t : traces)
      if (!covered.count(t.sample_id))
        throw DataError("eval: trace '" + t.sample_id + "' has no " + method + " attribution");
    if (!in.force)
      for (const auto& r : recs)
        if (r.config != recs.front().config)
          throw DataError("eval: " + method +
                          " attributions were produced with different configs (use --force)");
  }

  // Models come from trace provenance.
  std::map<std::string, std::shared_ptr<const Model>> models;
  std::vector<const Model*> model_of(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& p = traces[i].trace.provenance;
    if (!p.contains("model"))
      throw DataError("eval: " + traces[i].file.string() + " has no model provenance");
    const auto key = p["model"].dump();
    if (!models.count(key)) {
      if (!models.empty() && !in.force)
        throw DataError("eval: traces were produced by different model configs (use --force)");
      try {
        models[key] = std::make_shared<const Model>(init_model(model_config_from_json(p["model"])));
      } catch (const std::exception& e) {
        throw DataError("eval: " + traces[i].file.string() + ": bad model provenance: " + e.what());
      }
    }
    model_of[i] = models[key].get();
  }

  // Regenerate each original output and check it against the trace.
  std::vector<EvalSample> samples(traces.size());
  parallel_for(traces.size(), c.jobs, [&](std::size_t i) {
    const auto& t = traces[i].trace;
    EvalSample& s = samples[i];
    s.id = traces[i].sample_id;
    for (std::size_t p = 0; p < t.input_len; ++p) s.prompt.push_back(t.tokens[p].token_id);
    s.context_positions = t.context_positions();
    s.answers = t.answers;
    try {
      s.original = generate(*model_of[i], s.prompt, static_cast<std::uint32_t>(t.steps.size()),
                            {}, {.record_trace = false});
    } catch (const std::logic_error& e) {
      throw DataError("eval: " + traces[i].file.string() + ": " + e.what());
    }
    for (std::size_t k = 0; k < t.steps.size(); ++k)
      if (s.original.generated_tokens[k] != t.tokens[t.input_len + k].token_id)
        throw DataError("eval: " + traces[i].file.string() +
                        ": trace output does not match its recorded model");
  });

  EvalResult result;
  std::vector<std::string> order;
  for (const auto& m : known_methods())
    if (by_method.count(m)) order.push_back(m);
  for (const auto& [m, _] : by_method)
    if (std::find(order.begin(), order.end(), m) == order.end()) order.push_back(m);

  for (const auto& method : order) {
    const auto& recs = by_method[method];
    std::map<std::string, const AttributionRecord*> rec_of;
    for (const auto& r : recs) rec_of[r.sample_id] = &r;
    std::vector<SampleResult> rows(traces.size());
    parallel_for(traces.size(), c.jobs, [&](std::size_t i) {
      const auto& rec = *rec_of.at(samples[i].id);
      EvalOptions opt;
      opt.schedule = c.schedule;
      opt.metrics = c.metrics;
      if (method == "random") {
        opt.policy = OrderingPolicy::IndependentRandom;
        opt.seed = derive_seed(c.seed, fnv1a(samples[i].id) ^ 0x5eedULL);
      }
      try {
        rows[i] = evaluate_sample(*model_of[i], samples[i], rec.map, opt);
      } catch (const std::invalid_argument& e) {
        throw DataError("eval: sample " + samples[i].id + ": " + e.what());
      }
    });
    result.reports.push_back(aggregate_report(
        method, recs.empty() ? nlohmann::json::object() : recs.front().config, std::move(rows)));
  }

  using nlohmann::json;
  json methods = json::array(), table = json::array(), metric_names = json::array();
  for (auto m : c.metrics) metric_names.push_back(metric_name(m));
  for (const auto& r : result.reports) {
    methods.push_back(to_json(r));
    json row = {{"method", r.method},
                {"mAUC_PR", r.auc_pr ? to_json(*r.auc_pr) : json(nullptr)}};
    for (const auto& [m, ms] : r.metrics) row[std::string("mSRG_") + metric_name(m)] = to_json(ms.srg);
    table.push_back(std::move(row));
  }
  result.json = {{"format", "attnscope.report"},
                 {"version", 1},
                 {"fractions", c.schedule.fractions},
                 {"metrics", metric_names},
                 {"seed", c.seed},
                 {"forced", in.force},
                 {"samples", traces.size()},
                 {"methods", std::move(methods)},
                 {"table", std::move(table)}};
  result.csv = eval_csv(result.reports, c.metrics);
  result.json_path = out_dir / "report.json";
  result.csv_path = out_dir / "report.csv";
  write_file_atomic(result.json_path, result.json.dump(2) + "\n");
  write_file_atomic(result.csv_path, result.csv);

  log << "eval: " << traces.size() << " sample(s)\n";
  for (const auto& r : result.reports) {
    log << "  " << r.method << ": mAUC-PR " << detail::format_summary(r.auc_pr);
    for (const auto& [m, ms] : r.metrics)
      log << ", mSRG-" << metric_name(m) << ' ' << detail::format_summary(ms.srg)
          << (ms.skipped ? " (" + std::to_string(ms.skipped) + " skipped)" : std::string());
    log << '\n';
  }
  log << "eval: wrote " << result.json_path.string() << " and " << result.csv_path.string()
      << '\n';
  return result;
}

// ---------------------------------------------------------------------------
// report

inline fs::path cmd_report(const fs::path& trace_file, const fs::path& attribution_file,
                           const std::string& selector, const fs::path& out_dir,
                           std::ostream& log) {
  const auto t = load_trace(trace_file);
  const auto rec = load_attribution(attribution_file);
  if (rec.trace_digest != t.digest)
    throw DataError("report: " + attribution_file.string() + " was not computed from " +
                    trace_file.string());
  std::vector<std::uint32_t> steps;
  try {
    steps = parse_step_selector(selector, static_cast<std::uint32_t>(t.trace.steps.size()));
  } catch (const std::logic_error& e) {
    throw UsageError(std::string("report: ") + e.what());
  }
  std::string html;
  try {
    html = render_html_report(t.trace, rec, steps);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("report: ") + e.what());
  }
  const auto path = out_dir / "reports" / (t.sample_id + "." + sanitize_id(rec.method) + ".html");
  write_file_atomic(path, html);
  log << "report: wrote " << path.string() << '\n';
  return path;
}

// ---------------------------------------------------------------------------
// bench

inline std::vector<BenchRow> cmd_bench(const RunConfig& c, const BenchOptions& o,
                                       const fs::path& out_dir, std::ostream& log) {
  std::vector<BenchRow> rows;
  try {
    rows = run_bench(c.model, o, c.seed);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("bench: ") + e.what());
  }
  nlohmann::json j = {{"model", to_json(c.model)},
                      {"new_tokens", o.new_tokens},
                      {"repetitions", o.repetitions},
                      {"rows", nlohmann::json::array()}};
  char line[256];
  std::snprintf(line, sizeof line, "%8s  %-18s %12s %10s %14s %12s\n", "context", "mode",
                "tokens/sec", "overhead", "working set", "peak RSS");
  log << line;
  for (const auto& r : rows) {
    j["rows"].push_back(to_json(r));
    const std::string tps = r.tokens_per_sec
                                ? (std::snprintf(line, sizeof line, "%.1f", *r.tokens_per_sec), line)
                                : "N/A";
    const std::string ovh = r.overhead_pct
                                ? (std::snprintf(line, sizeof line, "%+.1f%%", *r.overhead_pct), line)
                                : (r.mode == BenchMode::Inference ? "-" : "N/A");
    const std::string rss = r.peak_rss_kb ? std::to_string(*r.peak_rss_kb) + " kB" : "N/A";
    std::snprintf(line, sizeof line, "%8u  %-18s %12s %10s %11.1f kB %12s\n", r.context_len,
                  bench_mode_name(r.mode), tps.c_str(), ovh.c_str(),
                  static_cast<double>(r.working_set_bytes) / 1024.0, rss.c_str());
    log << line;
  }
  write_file_atomic(out_dir / "bench.json", j.dump(2) + "\n");
  return rows;
}

// ---------------------------------------------------------------------------
// convert

inline ConvertStats cmd_convert(const fs::path& input, const fs::path& output,
                                std::ostream& log) {
  std::ifstream in(input, std::ios::binary);
  if (!in) throw DataError("convert: cannot open " + input.string());
  std::ostringstream out;
  ConvertStats stats;
  try {
    stats = convert_squad(in, out);
  } catch (const CorpusError& e) {
    throw DataError(input.string() + ": " + e.what());
  }
  write_file_atomic(output, out.str());
  log << "convert: wrote " << stats.written << " sample(s), skipped " << stats.skipped << '\n';
  return stats;
}

}  // namespace attnscope

#endif  // ATTNSCOPE_COMMANDS_HPP
