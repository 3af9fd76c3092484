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

#ifndef ATTNSCOPE_TRACE_IO_HPP
#define ATTNSCOPE_TRACE_IO_HPP

// On-disk `.attrc` container:
//
//   bytes 0..7   magic "ATTRC\0\0\1"
//   bytes 8..15  manifest length M, little-endian uint64
//   next M bytes UTF-8 JSON manifest
//   blobs        little-endian float32; one blob per step in [layer][head][key]
//                order, followed by the prefill blob when full_matrices is set
//
// Blob offsets in the manifest are relative to the first blob byte.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnscope/trace.hpp"
#include "json.hpp"

namespace attnscope {

inline constexpr std::array<char, 8> kTraceMagic = {'A', 'T', 'T', 'R',
                                                    'C', '\0', '\0', '\1'};
inline constexpr int kTraceVersion = 1;

class TraceError : public std::runtime_error {
 public:
  enum class Kind { Format, Truncated, DimensionMismatch, Sink, Overflow };

  TraceError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

inline std::uint64_t checked_floats(std::uint64_t layers, std::uint64_t heads,
                                    std::uint64_t keys) {
  constexpr std::uint64_t limit = std::numeric_limits<std::uint32_t>::max();
  if (layers == 0 || heads == 0) return 0;
  if (keys > limit / layers || layers * keys > limit / heads)
    throw TraceError(TraceError::Kind::Overflow,
                     "attention blob exceeds the 32-bit index space");
  return layers * heads * keys;
}

inline std::uint64_t step_blob_bytes(std::uint64_t layers, std::uint64_t heads,
                                     std::uint64_t input_len,
                                     std::uint64_t step) {
  return 4 * checked_floats(layers, heads, input_len + step - 1);
}

inline std::uint64_t prefill_blob_bytes(std::uint64_t layers,
                                        std::uint64_t heads,
                                        std::uint64_t input_len) {
  if (input_len > std::numeric_limits<std::uint32_t>::max())
    throw TraceError(TraceError::Kind::Overflow, "prefill too large");
  return 4 * checked_floats(layers, heads, input_len * input_len);
}

inline void put_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw TraceError(TraceError::Kind::Sink, "write to sink failed");
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b.data(), b.size());
}

inline void put_floats(std::ostream& out, std::span<const float> values) {
  std::vector<unsigned char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b)
      buf[4 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  put_bytes(out, buf.data(), buf.size());
}

// Returns false on short read.
inline bool get_bytes(std::istream& in, void* data, std::size_t n) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount()) == n;
}

inline bool get_floats(std::istream& in, std::span<float> values) {
  std::vector<unsigned char> buf(values.size() * 4);
  if (!get_bytes(in, buf.data(), buf.size())) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= std::uint32_t{buf[4 * i + b]} << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return true;
}

inline nlohmann::json build_manifest(const AttentionTrace& trace) {
  using nlohmann::json;
  json tokens = json::array();
  for (const auto& t : trace.tokens)
    tokens.push_back({{"id", t.token_id},
                      {"pos", t.position},
                      {"segment", segment_name(t.segment)},
                      {"text", t.text}});
  json steps = json::array();
  std::uint64_t offset = 0;
  for (const auto& s : trace.steps) {
    const auto length = step_blob_bytes(trace.layer_count(), trace.heads,
                                        trace.input_len, s.step());
    steps.push_back({{"k", s.step()}, {"offset", offset}, {"length", length}});
    offset += length;
  }
  json m = {{"version", kTraceVersion},
            {"L", trace.last_layer},
            {"H", trace.heads},
            {"N", trace.input_len},
            {"tokens", std::move(tokens)},
            {"answers", trace.answers},
            {"steps", std::move(steps)},
            {"full_matrices", trace.full_matrices},
            {"provenance", trace.provenance}};
  if (trace.full_matrices)
    m["prefill"] = {{"offset", offset},
                    {"length", prefill_blob_bytes(trace.layer_count(),
                                                  trace.heads,
                                                  trace.input_len)}};
  return m;
}

}  // namespace detail

// Serializes a trace; returns the number of bytes written. The caller is
// expected to have checked validate_trace; only structural consistency
// (blob sizes versus declared dimensions) is enforced here.
inline std::uint64_t write_trace(const AttentionTrace& trace,
                                 std::ostream& out) {
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& s = trace.steps[i];
    if (s.step() != i + 1 || s.layers() != trace.layer_count() ||
        s.heads() != trace.heads || s.keys() != trace.row_length(s.step()))
      throw TraceError(TraceError::Kind::DimensionMismatch,
                       "step " + std::to_string(i + 1) +
                           " does not match trace dimensions");
  }
  if (trace.full_matrices &&
      (trace.prefill.layers() != trace.layer_count() ||
       trace.prefill.heads() != trace.heads ||
       trace.prefill.size() != trace.input_len))
    throw TraceError(TraceError::Kind::DimensionMismatch,
                     "prefill does not match trace dimensions");

  const std::string manifest = detail::build_manifest(trace).dump();
  detail::put_bytes(out, kTraceMagic.data(), kTraceMagic.size());
  detail::put_u64(out, manifest.size());
  detail::put_bytes(out, manifest.data(), manifest.size());
  std::uint64_t written = kTraceMagic.size() + 8 + manifest.size();
  for (const auto& s : trace.steps) {
    detail::put_floats(out, s.data());
    written += 4 * s.data().size();
  }
  if (trace.full_matrices) {
    detail::put_floats(out, trace.prefill.data());
    written += 4 * trace.prefill.data().size();
  }
  out.flush();
  if (!out) throw TraceError(TraceError::Kind::Sink, "flush failed");
  return written;
}

inline AttentionTrace read_trace(std::istream& in) {
  using Kind = TraceError::Kind;
  std::array<char, 8> magic{};
  if (!detail::get_bytes(in, magic.data(), magic.size()) ||
      magic != kTraceMagic)
    throw TraceError(Kind::Format, "format: not an .attrc container (bad magic)");

  std::array<unsigned char, 8> len_bytes{};
  if (!detail::get_bytes(in, len_bytes.data(), len_bytes.size()))
    throw TraceError(Kind::Truncated, "truncated: manifest length");
  std::uint64_t manifest_len = 0;
  for (int i = 0; i < 8; ++i)
    manifest_len |= std::uint64_t{len_bytes[i]} << (8 * i);
  if (manifest_len > (std::uint64_t{1} << 32))
    throw TraceError(Kind::Format, "format: implausible manifest length");
  std::string text(manifest_len, '\0');
  if (!detail::get_bytes(in, text.data(), text.size()))
    throw TraceError(Kind::Truncated, "truncated: manifest");

  nlohmann::json m;
  AttentionTrace trace;
  try {
    m = nlohmann::json::parse(text);
    if (m.at("version").get<int>() != kTraceVersion)
      throw TraceError(Kind::Format, "format: unsupported version");
    trace.last_layer = m.at("L").get<std::uint32_t>();
    trace.heads = m.at("H").get<std::uint32_t>();
    trace.input_len = m.at("N").get<std::uint32_t>();
    trace.full_matrices = m.at("full_matrices").get<bool>();
    trace.provenance = m.at("provenance");
    trace.answers = m.at("answers").get<std::vector<std::vector<std::int32_t>>>();
    for (const auto& t : m.at("tokens")) {
      const auto seg = parse_segment(t.at("segment").get<std::string>());
      if (!seg) throw TraceError(Kind::Format, "format: unknown segment");
      trace.tokens.push_back({t.at("id").get<std::int32_t>(),
                              t.at("pos").get<std::int32_t>(), *seg,
                              t.at("text").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(Kind::Format, std::string("format: bad manifest: ") + e.what());
  }

  const std::uint64_t layers = trace.layer_count();
  std::uint64_t expected_offset = 0;
  const auto& steps = m.at("steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto k = steps[i].at("k").get<std::uint64_t>();
    const auto offset = steps[i].at("offset").get<std::uint64_t>();
    const auto length = steps[i].at("length").get<std::uint64_t>();
    if (k != i + 1 || offset != expected_offset ||
        length != detail::step_blob_bytes(layers, trace.heads,
                                          trace.input_len, k))
      throw TraceError(Kind::DimensionMismatch,
                       "dimension mismatch: manifest entry for step " +
                           std::to_string(i + 1));
    expected_offset += length;
  }
  if (trace.full_matrices) {
    const auto& pre = m.at("prefill");
    if (pre.at("offset").get<std::uint64_t>() != expected_offset ||
        pre.at("length").get<std::uint64_t>() !=
            detail::prefill_blob_bytes(layers, trace.heads, trace.input_len))
      throw TraceError(Kind::DimensionMismatch,
                       "dimension mismatch: prefill manifest entry");
  }

  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto k = static_cast<std::uint32_t>(i + 1);
    StepAttention step(k, layers, trace.heads, trace.row_length(k));
    if (!detail::get_floats(in, step.data()))
      throw TraceError(Kind::Truncated,
                       "truncated: blob for step " + std::to_string(k));
    trace.steps.push_back(std::move(step));
  }
  if (trace.full_matrices) {
    PrefillAttention pre(layers, trace.heads, trace.input_len);
    if (!detail::get_floats(in, pre.data()))
      throw TraceError(Kind::Truncated, "truncated: prefill blob");
    trace.prefill = std::move(pre);
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw TraceError(Kind::DimensionMismatch,
                     "dimension mismatch: trailing bytes after last blob");
  return trace;
}

}  // namespace attnscope

#endif  // ATTNSCOPE_TRACE_IO_HPP
