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

#ifndef ATTNSCOPE_REPORT_HTML_HPP
#define ATTNSCOPE_REPORT_HTML_HPP

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "attribution_io.hpp"
#include "trace.hpp"

namespace attnscope {

inline constexpr double kHeatCap = 3.0;

// Highlight strength in [0, 1]: positive z only, saturating at kHeatCap.
inline double heat_intensity(double z) {
  if (!(z > 0.0)) return 0.0;
  return std::min(z, kHeatCap) / kHeatCap;
}

inline std::string html_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default:
        // Control bytes are not allowed in XML text.
        if (static_cast<unsigned char>(c) < 0x20 && c != '\n' && c != '\t') out += "&#xFFFD;";
        else out += c;
    }
  }
  return out;
}

// Parses "all", "3", "1,4" or "2-5" into sorted 1-based steps within
// [1, num_steps]; throws std::out_of_range for steps outside it and
// std::invalid_argument for malformed selectors.
inline std::vector<std::uint32_t> parse_step_selector(std::string_view sel,
                                                      std::uint32_t num_steps) {
  std::vector<std::uint32_t> out;
  if (sel.empty() || sel == "all") {
    for (std::uint32_t k = 1; k <= num_steps; ++k) out.push_back(k);
    return out;
  }
  const auto number = [&](std::string_view t) -> std::uint32_t {
    if (t.empty() || t.find_first_not_of("0123456789") != std::string_view::npos ||
        t.size() > 9)
      throw std::invalid_argument("bad step selector '" + std::string(sel) + "'");
    const auto v = static_cast<std::uint32_t>(std::stoul(std::string(t)));
    if (v < 1 || v > num_steps)
      throw std::out_of_range("step " + std::to_string(v) + " outside 1.." +
                              std::to_string(num_steps));
    return v;
  };
  std::size_t start = 0;
  while (start <= sel.size()) {
    auto end = sel.find(',', start);
    if (end == std::string_view::npos) end = sel.size();
    const auto item = sel.substr(start, end - start);
    const auto dash = item.find('-');
    if (dash == std::string_view::npos) {
      out.push_back(number(item));
    } else {
      const auto a = number(item.substr(0, dash)), b = number(item.substr(dash + 1));
      if (a > b) throw std::invalid_argument("bad step range '" + std::string(item) + "'");
      for (auto k = a; k <= b; ++k) out.push_back(k);
    }
    start = end + 1;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string join_text(const AttentionTrace& t, std::size_t from, std::size_t to) {
  std::string s;
  for (std::size_t i = from; i < to; ++i) {
    if (!s.empty()) s += ' ';
    s += t.tokens[i].text;
  }
  return s;
}

}  // namespace detail

// Standalone XHTML page: one section per selected step, context tokens shaded
// by that step's z-score. Output depends only on the inputs.
inline std::string render_html_report(const AttentionTrace& trace,
                                      const AttributionRecord& attribution,
                                      const std::vector<std::uint32_t>& steps) {
  const std::size_t n = trace.input_len;
  if (attribution.map.per_step_z.size() != trace.steps.size() || attribution.input_len != n)
    throw std::invalid_argument("report: attribution does not match trace dimensions");
  std::ostringstream o;
  const auto title = "attnscope: " + attribution.sample_id + " (" + attribution.method + ")";
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<!DOCTYPE html>\n"
    << "<html xmlns=\"http://www.w3.org/1999/xhtml\" lang=\"en\">\n<head>\n"
    << "<meta charset=\"UTF-8\"/>\n<title>" << html_escape(title) << "</title>\n"
    << "<style>\n"
       "body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.9}\n"
       ".tok{padding:0.1em 0.15em;border-radius:0.2em}\n"
       ".meta{color:#555;font-size:0.9em}\n"
       ".q,.g{margin:0.3em 0}\n"
       "section{border-top:1px solid #ccc;padding-top:0.5em}\n"
       "</style>\n</head>\n<body>\n";
  o << "<h1>" << html_escape(title) << "</h1>\n";
  o << "<p class=\"meta\">method config: <code>" << html_escape(attribution.config.dump())
    << "</code></p>\n";

  std::vector<std::size_t> instruction;
  for (std::size_t i = 0; i < n; ++i)
    if (trace.tokens[i].segment == Segment::InstructionPrompt) instruction.push_back(i);
  std::string question;
  for (auto i : instruction) {
    if (!question.empty()) question += ' ';
    question += trace.tokens[i].text;
  }

  for (auto k : steps) {
    if (k < 1 || k > trace.steps.size())
      throw std::out_of_range("report: step " + std::to_string(k) + " out of range");
    const auto& z = attribution.map.per_step_z[k - 1];
    o << "<section id=\"step-" << k << "\">\n<h2>Step " << k << "</h2>\n";
    o << "<p class=\"q\"><strong>Q:</strong> " << html_escape(question) << "</p>\n";
    o << "<p class=\"g\"><strong>G:</strong> " << html_escape(detail::join_text(trace, n, n + k))
      << "</p>\n<p class=\"ctx\">";
    bool first = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (trace.tokens[i].segment != Segment::Context) continue;
      if (!first) o << ' ';
      first = false;
      const double a = heat_intensity(z[i]);
      o << "<span class=\"tok\" data-pos=\"" << i << "\" title=\"z=" << detail::fixed(z[i], 3)
        << "\"";
      if (a > 0.0) o << " style=\"background-color:rgba(220,38,38," << detail::fixed(a, 3) << ")\"";
      o << ">" << html_escape(trace.tokens[i].text) << "</span>";
    }
    o << "</p>\n</section>\n";
  }
  o << "</body>\n</html>\n";
  return std::move(o).str();
}

}  // namespace attnscope

#endif  // ATTNSCOPE_REPORT_HTML_HPP
