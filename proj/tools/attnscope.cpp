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

// attnscope command-line entry point.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "attnscope/commands.hpp"

namespace {

using namespace attnscope;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  std::optional<std::string> out;
  std::vector<std::string> ablate;
  std::string fractions;
  std::vector<std::string> metrics;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON run configuration");
  app->add_option("--seed", f.seed, "seed for the model and random baselines");
  app->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
  app->add_option("--out", f.out, "output directory (beats ATTNSCOPE_OUT)");
}

RunConfig load_config(const CommonFlags& f) {
  RunConfig c;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw DataError("cannot open config " + f.config);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("config " + f.config + ": " + e.what());
    }
    c = run_config_from_json(j);
  }
  if (f.seed) c.seed = c.model.seed = *f.seed;
  if (f.jobs) c.jobs = *f.jobs;
  for (const auto& a : f.ablate) apply_ablation(c, a);
  if (!f.fractions.empty()) c.schedule.fractions = parse_fractions(f.fractions);
  if (!f.metrics.empty()) c.metrics = parse_metrics(f.metrics);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attnscope: attention-consistency attribution for a toy decoder"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "attnscope 0.1.0");

  CommonFlags flags;
  std::string corpus, method = "macs", trace_file, attribution_file, steps = "all";
  std::vector<std::string> inputs, trace_inputs, attribution_inputs;
  bool full_matrices = false, force = false;
  BenchOptions bench;
  std::string convert_in, convert_out;

  auto* trace = app.add_subcommand("trace", "run the toy model over a corpus and record attention");
  add_common(trace, flags);
  trace->add_option("--corpus", corpus, "JSON-lines corpus");
  trace->add_flag("--full-matrices", full_matrices, "also record prompt-pass attention (rollout)");

  auto* attribute = app.add_subcommand("attribute", "compute attribution maps from traces");
  add_common(attribute, flags);
  attribute->add_option("--method", method, "macs, rollout or random")
      ->check(CLI::IsMember({"macs", "rollout", "random"}));
  attribute->add_option("--ablate", flags.ablate, "override a method setting, key=value");
  attribute->add_option("traces", inputs, "trace files or directories (default <out>/traces)");

  auto* eval = app.add_subcommand("eval", "perturbation evaluation of attribution maps");
  add_common(eval, flags);
  eval->add_option("--traces", trace_inputs, "trace files or directories (default <out>/traces)");
  eval->add_option("--attributions", attribution_inputs,
                   "attribution files or directories (default <out>/attributions)");
  eval->add_option("--fractions", flags.fractions,
                   "masking fractions (default 0,0.01,0.05,0.1,0.15,0.2)");
  eval->add_option("--metrics", flags.metrics, "mean_logits, perplexity, rouge_l, bleu")
      ->delimiter(',');
  eval->add_flag("--force", force, "accept inputs produced with different configs");

  auto* report = app.add_subcommand("report", "render an HTML heatmap for one trace");
  add_common(report, flags);
  report->add_option("--trace", trace_file, "trace file")->required();
  report->add_option("--attribution", attribution_file, "attribution file")->required();
  report->add_option("--steps", steps, "all, 3, 1,4 or 2-5");

  auto* benchcmd = app.add_subcommand("bench", "throughput and memory of attribution modes");
  add_common(benchcmd, flags);
  benchcmd->add_option("--lengths", bench.context_lengths, "context lengths")->delimiter(',');
  benchcmd->add_option("--new-tokens", bench.new_tokens, "tokens generated per run");
  benchcmd->add_option("--reps", bench.repetitions, "repetitions per measurement");

  auto* convert = app.add_subcommand("convert", "build a corpus from SQuAD-shaped questions");
  convert->add_option("input", convert_in, "SQuAD JSON or JSON lines")->required();
  convert->add_option("output", convert_out, "corpus JSON-lines file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (convert->parsed()) {
      cmd_convert(convert_in, convert_out, std::cout);
      return 0;
    }
    RunConfig c = load_config(flags);
    if (full_matrices) c.full_matrices = true;
    if (!corpus.empty()) c.corpus = corpus;
    const fs::path out = resolve_output_dir(flags.out, c);

    if (trace->parsed()) {
      cmd_trace(c, out, std::cout);
    } else if (attribute->parsed()) {
      std::vector<fs::path> in(inputs.begin(), inputs.end());
      if (in.empty()) in.push_back(out / "traces");
      cmd_attribute(c, method, in, out, std::cout);
    } else if (eval->parsed()) {
      EvalInputs in;
      in.traces.assign(trace_inputs.begin(), trace_inputs.end());
      in.attributions.assign(attribution_inputs.begin(), attribution_inputs.end());
      if (in.traces.empty()) in.traces.push_back(out / "traces");
      if (in.attributions.empty()) in.attributions.push_back(out / "attributions");
      in.force = force;
      cmd_eval(c, in, out, std::cout);
    } else if (report->parsed()) {
      cmd_report(trace_file, attribution_file, steps, out, std::cout);
    } else if (benchcmd->parsed()) {
      cmd_bench(c, bench, out, std::cout);
    }
  } catch (const UsageError& e) {
    std::cerr << "attnscope: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "attnscope: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "attnscope: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
