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

#ifndef ATTNSCOPE_CORPUS_HPP
#define ATTNSCOPE_CORPUS_HPP

#include <cctype>
#include <cstdint>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "trace.hpp"

namespace attnscope {

// Malformed input data; `line` is 1-based when known, 0 otherwise.
class CorpusError : public std::runtime_error {
 public:
  CorpusError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Toy tokenizer: lower-cased alphanumeric runs are words, every other
// non-space byte is a token on its own. Ids are FNV-1a hashes mod vocab.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
      continue;
    }
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    if (!std::isspace(ch)) out.emplace_back(1, static_cast<char>(ch));
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::int32_t word_id(std::string_view word, std::uint32_t vocab) {
  return static_cast<std::int32_t>(fnv1a(word) % vocab);
}

struct CorpusSample {
  std::string id;
  std::vector<std::int32_t> prompt;
  std::vector<std::string> token_text;
  std::size_t context_begin = 0;  // [begin, end) in prompt positions
  std::size_t context_end = 0;
  std::vector<std::vector<std::int32_t>> answers;  // prompt positions
  std::optional<std::uint32_t> max_new_tokens;

  std::vector<std::int32_t> context_positions() const {
    std::vector<std::int32_t> out;
    for (auto p = context_begin; p < context_end; ++p) out.push_back(static_cast<std::int32_t>(p));
    return out;
  }
  Segment segment_at(std::size_t p) const {
    return p >= context_begin && p < context_end ? Segment::Context
                                                 : Segment::InstructionPrompt;
  }
};

// Ids become file names, so anything outside [A-Za-z0-9._-] is replaced.
inline std::string sanitize_id(std::string_view id) {
  std::string out;
  for (char c : id)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-'
                      ? c
                      : '_');
  if (out.empty() || out[0] == '.') out.insert(out.begin(), '_');
  return out;
}

namespace detail {

inline std::vector<std::int32_t> find_phrase(const std::vector<std::string>& words,
                                             std::size_t begin, std::size_t end,
                                             const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > end - begin) return {};
  for (std::size_t s = begin; s + phrase.size() <= end; ++s) {
    bool hit = true;
    for (std::size_t j = 0; j < phrase.size() && hit; ++j) hit = words[s + j] == phrase[j];
    if (hit) {
      std::vector<std::int32_t> out;
      for (std::size_t j = 0; j < phrase.size(); ++j)
        out.push_back(static_cast<std::int32_t>(s + j));
      return out;
    }
  }
  return {};
}

}  // namespace detail

// One JSON line: {id?, prompt_tokens | text, context_span: [b, e), answers,
// max_new_tokens?}. Answers are [b, e) spans, or strings when `text` is used.
inline CorpusSample parse_corpus_line(std::string_view line, std::size_t line_no,
                                      std::uint32_t vocab) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw CorpusError(line_no, std::string("invalid JSON: ") + e.what());
  }
  const auto fail = [&](const std::string& m) { return CorpusError(line_no, m); };
  if (!j.is_object()) throw fail("expected an object");
  CorpusSample s;
  try {
    s.id = sanitize_id(j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>()
                                                                : j["id"].dump())
                                        : "line" + std::to_string(line_no));
    const bool has_tokens = j.contains("prompt_tokens");
    const bool has_text = j.contains("text");
    if (has_tokens == has_text) throw fail("need exactly one of prompt_tokens or text");
    std::vector<std::string> words;
    if (has_tokens) {
      for (const auto& t : j["prompt_tokens"]) {
        const auto id = t.get<std::int64_t>();
        if (id < 0 || id >= vocab)
          throw fail("token id " + std::to_string(id) + " outside vocabulary");
        s.prompt.push_back(static_cast<std::int32_t>(id));
      }
      if (j.contains("token_text")) {
        s.token_text = j["token_text"].get<std::vector<std::string>>();
        if (s.token_text.size() != s.prompt.size())
          throw fail("token_text length differs from prompt_tokens");
      } else {
        for (auto t : s.prompt) s.token_text.push_back("t" + std::to_string(t));
      }
    } else {
      words = split_words(j["text"].get<std::string>());
      for (const auto& w : words) s.prompt.push_back(word_id(w, vocab));
      s.token_text = words;
    }
    if (s.prompt.empty()) throw fail("empty prompt");

    const auto& span = j.at("context_span");
    if (!span.is_array() || span.size() != 2) throw fail("context_span must be [begin, end]");
    const auto b = span[0].get<std::int64_t>(), e = span[1].get<std::int64_t>();
    if (b < 0 || e <= b || e > static_cast<std::int64_t>(s.prompt.size()))
      throw fail("context_span outside the prompt");
    s.context_begin = static_cast<std::size_t>(b);
    s.context_end = static_cast<std::size_t>(e);

    for (const auto& a : j.value("answers", json::array())) {
      std::vector<std::int32_t> positions;
      if (a.is_string()) {
        if (!has_text) throw fail("string answers need a text prompt");
        positions = detail::find_phrase(words, s.context_begin, s.context_end,
                                        split_words(a.get<std::string>()));
        if (positions.empty())
          throw fail("answer '" + a.get<std::string>() + "' not found in context");
      } else {
        if (!a.is_array() || a.size() != 2) throw fail("answer spans must be [begin, end]");
        const auto ab = a[0].get<std::int64_t>(), ae = a[1].get<std::int64_t>();
        if (ab < 0 || ae <= ab || ae > static_cast<std::int64_t>(s.prompt.size()))
          throw fail("answer span outside the prompt");
        for (auto p = ab; p < ae; ++p) positions.push_back(static_cast<std::int32_t>(p));
      }
      s.answers.push_back(std::move(positions));
    }
    if (j.contains("max_new_tokens")) s.max_new_tokens = j["max_new_tokens"].get<std::uint32_t>();
  } catch (const json::exception& e) {
    throw fail(std::string("bad field: ") + e.what());
  }
  return s;
}

// Reads a JSON-lines corpus; blank lines are ignored, duplicate ids rejected.
inline std::vector<CorpusSample> read_corpus(std::istream& in, std::uint32_t vocab) {
  std::vector<CorpusSample> out;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto s = parse_corpus_line(line, n, vocab);
    if (!seen.insert(s.id).second) throw CorpusError(n, "duplicate id '" + s.id + "'");
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SQuAD-shaped input to corpus lines.

inline constexpr std::string_view kInstruction =
    "Answer the question based on the following text. Keep your response short and "
    "simple. Do not quote the original text.";

struct ConvertStats {
  std::size_t written = 0;
  std::size_t skipped = 0;  // unanswerable, or no answer found in the context
};

// Builds one corpus line from a question, its context and answer strings;
// returns nullopt if no answer occurs in the tokenized context.
inline std::optional<nlohmann::json> make_corpus_line(const std::string& id,
                                                      const std::string& question,
                                                      const std::string& context,
                                                      const std::vector<std::string>& answers) {
  const std::string head =
      std::string(kInstruction) + " Question: " + question + " Context:";
  const auto head_words = split_words(head);
  const auto ctx_words = split_words(context);
  if (ctx_words.empty()) return std::nullopt;
  std::vector<std::string> all = head_words;
  all.insert(all.end(), ctx_words.begin(), ctx_words.end());
  const auto begin = head_words.size(), end = all.size();
  nlohmann::json spans = nlohmann::json::array();
  std::set<std::vector<std::int32_t>> unique;
  for (const auto& a : answers) {
    const auto pos = detail::find_phrase(all, begin, end, split_words(a));
    if (pos.empty() || !unique.insert(pos).second) continue;
    spans.push_back({pos.front(), pos.back() + 1});
  }
  if (spans.empty()) return std::nullopt;
  return nlohmann::json{{"id", id},
                        {"text", head + " " + context},
                        {"context_span", {begin, end}},
                        {"answers", spans}};
}

// Accepts either SQuAD's nested JSON document or JSON lines of
// {id?, question, context, answers} where answers is a list of strings or
// {"text": [...]}.
inline ConvertStats convert_squad(std::istream& in, std::ostream& out) {
  using nlohmann::json;
  ConvertStats stats;
  std::size_t counter = 0;
  const auto emit = [&](const json& id, const std::string& q, const std::string& c,
                        const std::vector<std::string>& answers) {
    ++counter;
    const std::string sid = id.is_null() ? "q" + std::to_string(counter)
                                         : (id.is_string() ? id.get<std::string>() : id.dump());
    if (auto line = make_corpus_line(sid, q, c, answers)) {
      out << line->dump() << '\n';
      ++stats.written;
    } else {
      ++stats.skipped;
    }
  };
  const auto answer_texts = [](const json& a) {
    std::vector<std::string> texts;
    if (a.is_object() && a.contains("text")) {
      for (const auto& t : a["text"]) texts.push_back(t.get<std::string>());
    } else if (a.is_array()) {
      for (const auto& t : a)
        texts.push_back(t.is_string() ? t.get<std::string>() : t.at("text").get<std::string>());
    }
    return texts;
  };

  const std::string content((std::istreambuf_iterator<char>(in)), {});
  const auto first = content.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return stats;
  try {
    json doc = json::parse(content, nullptr, false);
    if (!doc.is_discarded() && doc.is_object() && doc.contains("data")) {
      for (const auto& article : doc["data"])
        for (const auto& para : article.at("paragraphs")) {
          const auto context = para.at("context").get<std::string>();
          for (const auto& qa : para.at("qas"))
            emit(qa.value("id", json()), qa.at("question").get<std::string>(), context,
                 answer_texts(qa.value("answers", json::array())));
        }
      return stats;
    }
    std::size_t n = 0;
    std::istringstream lines(content);
    std::string line;
    while (std::getline(lines, line)) {
      ++n;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw CorpusError(n, "invalid JSON object");
      try {
        emit(j.value("id", json()), j.at("question").get<std::string>(),
             j.at("context").get<std::string>(), answer_texts(j.value("answers", json::array())));
      } catch (const json::exception& e) {
        throw CorpusError(n, std::string("bad field: ") + e.what());
      }
    }
  } catch (const json::exception& e) {
    throw CorpusError(0, std::string("bad SQuAD document: ") + e.what());
  }
  return stats;
}

}  // namespace attnscope

#endif  // ATTNSCOPE_CORPUS_HPP
