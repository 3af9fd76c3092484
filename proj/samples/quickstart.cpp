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

// Streams MACS scores while a toy decoder generates, then prints the most
// salient context words for the final step.

#include <cstdio>
#include <string>
#include <vector>

#include "attnscope/corpus.hpp"
#include "attnscope/eval.hpp"
#include "attnscope/macs.hpp"
#include "attnscope/toy_decoder.hpp"

int main() {
  using namespace attnscope;
  const ModelConfig config{.vocab_size = 512, .d_model = 64, .num_layers = 3, .num_heads = 4,
                           .max_seq = 128, .seed = 7};
  const auto model = init_model(config);

  const std::string text =
      "Answer the question using the context. Question: who founded the abbey? "
      "Context: the abbey was founded by duke richard in the tenth century near the river.";
  const auto words = split_words(text);
  std::vector<std::int32_t> prompt;
  for (const auto& w : words) prompt.push_back(word_id(w, config.vocab_size));

  MacsStream stream(prompt.size(), MacsConfig{});
  const auto run = generate(model, prompt, 4, {},
                            {.on_step = [&](const StepAttention& s) { stream.on_step(s); }});
  const auto map = stream.finish();

  std::size_t context_begin = 0;
  for (std::size_t i = 0; i < words.size(); ++i)
    if (words[i] == "context" && i + 1 < words.size() && words[i + 1] == ":") context_begin = i + 2;

  std::vector<std::size_t> order;
  for (auto p : descending_order(map.per_step_z.back()))
    if (p >= context_begin) order.push_back(p);
  std::printf("generated %zu tokens; top context words at the last step:\n",
              run.generated_tokens.size());
  for (std::size_t i = 0; i < 5 && i < order.size(); ++i)
    std::printf("  %-10s z=%+.3f\n", words[order[i]].c_str(), map.per_step_z.back()[order[i]]);
}
