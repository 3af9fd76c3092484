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

#ifndef ATTNSCOPE_ATTRIBUTION_IO_HPP
#define ATTNSCOPE_ATTRIBUTION_IO_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "macs.hpp"

namespace attnscope {

// An attribution map plus what produced it and which trace it belongs to.
struct AttributionRecord {
  std::string method;                  // macs | rollout | random
  nlohmann::json config = nlohmann::json::object();
  std::string sample_id;
  std::string trace_file;              // file name only
  std::string trace_digest;            // digest_hex of the trace bytes
  nlohmann::json provenance = nlohmann::json::object();
  std::uint32_t input_len = 0;
  AttributionMap map;
};

inline constexpr const char* kAttributionFormat = "attnscope.attribution";

inline nlohmann::json to_json(const AttributionRecord& r) {
  using nlohmann::json;
  json steps = json::array();
  for (std::size_t s = 0; s < r.map.per_step_z.size(); ++s)
    steps.push_back({{"k", s + 1},
                     {"z", r.map.per_step_z[s]},
                     {"raw", r.map.per_step_raw[s]},
                     {"mu", r.map.mu[s]},
                     {"sigma", r.map.sigma[s]}});
  return {{"format", kAttributionFormat},
          {"version", 1},
          {"method", r.method},
          {"config", r.config},
          {"sample_id", r.sample_id},
          {"trace", {{"file", r.trace_file}, {"digest", r.trace_digest}}},
          {"provenance", r.provenance},
          {"input_len", r.input_len},
          {"steps", std::move(steps)},
          {"aggregate", r.map.aggregate}};
}

// Throws std::runtime_error on schema violations.
inline AttributionRecord attribution_from_json(const nlohmann::json& j) {
  AttributionRecord r;
  try {
    if (j.at("format") != kAttributionFormat || j.at("version") != 1)
      throw std::runtime_error("attribution: unknown format or version");
    r.method = j.at("method").get<std::string>();
    r.config = j.at("config");
    r.sample_id = j.at("sample_id").get<std::string>();
    r.trace_file = j.at("trace").at("file").get<std::string>();
    r.trace_digest = j.at("trace").at("digest").get<std::string>();
    r.provenance = j.at("provenance");
    r.input_len = j.at("input_len").get<std::uint32_t>();
    std::uint32_t k = 0;
    for (const auto& s : j.at("steps")) {
      if (s.at("k").get<std::uint32_t>() != ++k)
        throw std::runtime_error("attribution: steps out of order");
      r.map.per_step_z.push_back(s.at("z").get<std::vector<double>>());
      r.map.per_step_raw.push_back(s.at("raw").get<std::vector<double>>());
      r.map.mu.push_back(s.at("mu").get<double>());
      r.map.sigma.push_back(s.at("sigma").get<double>());
      if (r.map.per_step_z.back().size() != r.input_len ||
          r.map.per_step_raw.back().size() != r.input_len)
        throw std::runtime_error("attribution: step " + std::to_string(k) +
                                 " length differs from input_len");
    }
    r.map.aggregate = j.at("aggregate").get<std::vector<double>>();
    if (r.map.aggregate.size() != r.input_len)
      throw std::runtime_error("attribution: aggregate length differs from input_len");
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("attribution: ") + e.what());
  }
  return r;
}

}  // namespace attnscope

#endif  // ATTNSCOPE_ATTRIBUTION_IO_HPP
