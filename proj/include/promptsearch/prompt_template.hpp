// Copyright 2026 The promptsearch Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "promptsearch/error.hpp"
#include "promptsearch/vocabulary.hpp"

namespace promptsearch {

// Template DSL: `{name}` is an input field, `[T]` a trigger slot, `[P]` the
// predict slot, anything else is literal text tokenized on whitespace.
namespace segment {
struct Literal {
  std::string text;  // words joined by single spaces
  bool operator==(const Literal&) const = default;
};
struct InputField {
  std::string name;
  bool operator==(const InputField&) const = default;
};
struct Trigger {
  std::size_t slot;
  bool operator==(const Trigger&) const = default;
};
struct PredictSlot {
  bool operator==(const PredictSlot&) const = default;
};
}  // namespace segment

using Segment = std::variant<segment::Literal, segment::InputField,
                             segment::Trigger, segment::PredictSlot>;

struct Template {
  std::vector<Segment> segments;

  std::size_t trigger_count() const {
    return static_cast<std::size_t>(
        std::count_if(segments.begin(), segments.end(), [](const Segment& s) {
          return std::holds_alternative<segment::Trigger>(s);
        }));
  }

  std::vector<std::string> field_names() const {
    std::vector<std::string> names;
    for (const auto& s : segments) {
      if (auto* f = std::get_if<segment::InputField>(&s)) names.push_back(f->name);
    }
    return names;
  }

  bool operator==(const Template&) const = default;
};

// A rendered prompt. `input_span` lists (sorted) the positions whose tokens
// came from task inputs.
struct PromptInstance {
  TokenIds token_ids;
  std::vector<std::size_t> trigger_positions;
  std::size_t mask_position = 0;
  std::vector<std::size_t> input_span;

  TokenIds triggers() const {
    TokenIds out;
    out.reserve(trigger_positions.size());
    for (auto p : trigger_positions) out.push_back(token_ids[p]);
    return out;
  }

  // Copy with trigger slot `j` replaced by `token`.
  PromptInstance with_trigger(std::size_t j, TokenId token) const {
    if (j >= trigger_positions.size()) {
      throw ConfigError("trigger index " + std::to_string(j) + " out of range");
    }
    PromptInstance copy = *this;
    copy.token_ids[trigger_positions[j]] = token;
    return copy;
  }
};

namespace detail {

inline bool is_field_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

inline void flush_literal(std::string& pending, std::vector<Segment>& out) {
  std::istringstream in(pending);
  std::string word, joined;
  while (in >> word) {
    if (!joined.empty()) joined += ' ';
    joined += word;
  }
  pending.clear();
  if (joined.empty()) return;
  if (!out.empty()) {
    if (auto* lit = std::get_if<segment::Literal>(&out.back())) {
      lit->text += ' ' + joined;
      return;
    }
  }
  out.push_back(segment::Literal{std::move(joined)});
}

}  // namespace detail

inline Template parse_template(std::string_view source) {
  if (source.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw ConfigError("template: empty source");
  }
  Template t;
  std::string pending;
  std::size_t predict_count = 0;
  std::size_t next_slot = 0;
  std::size_t i = 0;
  while (i < source.size()) {
    char c = source[i];
    if (source.substr(i, 3) == "[T]") {
      detail::flush_literal(pending, t.segments);
      t.segments.push_back(segment::Trigger{next_slot++});
      i += 3;
    } else if (source.substr(i, 3) == "[P]") {
      detail::flush_literal(pending, t.segments);
      t.segments.push_back(segment::PredictSlot{});
      ++predict_count;
      i += 3;
    } else if (c == '{') {
      auto close = source.find('}', i + 1);
      if (close == std::string_view::npos) {
        throw ConfigError("template: unterminated '{' at offset " +
                          std::to_string(i));
      }
      std::string_view name = source.substr(i + 1, close - i - 1);
      if (name.empty() ||
          !std::all_of(name.begin(), name.end(), detail::is_field_char)) {
        throw ConfigError("template: malformed field name '{" +
                          std::string(name) + "}'");
      }
      detail::flush_literal(pending, t.segments);
      t.segments.push_back(segment::InputField{std::string(name)});
      i = close + 1;
    } else if (c == '}') {
      throw ConfigError("template: unmatched '}' at offset " +
                        std::to_string(i));
    } else {
      pending += c;
      ++i;
    }
  }
  detail::flush_literal(pending, t.segments);
  if (predict_count == 0) throw ConfigError("template: no [P] predict slot");
  if (predict_count > 1) throw ConfigError("template: multiple predict slots");
  return t;
}

// Canonical source: segments separated by single spaces.
inline std::string to_source(const Template& t) {
  std::string out;
  for (const auto& s : t.segments) {
    if (!out.empty()) out += ' ';
    std::visit(
        [&out](const auto& seg) {
          using S = std::decay_t<decltype(seg)>;
          if constexpr (std::is_same_v<S, segment::Literal>) out += seg.text;
          else if constexpr (std::is_same_v<S, segment::InputField>) out += '{' + seg.name + '}';
          else if constexpr (std::is_same_v<S, segment::Trigger>) out += "[T]";
          else out += "[P]";
        },
        s);
  }
  return out;
}

struct TemplateEntry {
  std::string key;  // empty unless the line was "key<TAB>template"
  Template tmpl;
};

// One template per line; blank lines and lines starting with '#' skipped.
inline std::vector<TemplateEntry> load_templates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open template file: " + path);
  std::vector<TemplateEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    TemplateEntry e;
    if (auto tab = line.find('\t'); tab != std::string::npos) {
      e.key = line.substr(0, tab);
      line = line.substr(tab + 1);
    }
    e.tmpl = parse_template(line);
    out.push_back(std::move(e));
  }
  if (out.empty()) throw ConfigError("template file has no templates: " + path);
  return out;
}

using FieldTokens = std::map<std::string, TokenIds>;

// Substitutes inputs and triggers into the template. With `max_length`,
// over-long prompts are shortened by dropping tokens from the right end of
// the longest input field; triggers and the mask are never truncated.
inline PromptInstance render_prompt(const Template& t, const FieldTokens& inputs,
                                    const TokenIds& triggers,
                                    const Vocabulary& vocab,
                                    std::optional<std::size_t> max_length = std::nullopt) {
  if (triggers.size() != t.trigger_count()) {
    throw ConfigError("render: template has " + std::to_string(t.trigger_count()) +
                      " trigger slots but " + std::to_string(triggers.size()) +
                      " triggers were given");
  }
  std::map<std::string, TokenIds> fields;
  for (const auto& name : t.field_names()) {
    auto it = inputs.find(name);
    if (it == inputs.end()) throw DataError("render: missing input field '" + name + "'");
    fields[name] = it->second;
  }
  std::vector<TokenIds> literal_ids;
  std::size_t fixed = 0;
  for (const auto& s : t.segments) {
    if (auto* lit = std::get_if<segment::Literal>(&s)) {
      literal_ids.push_back(vocab.tokenize(lit->text));
      fixed += literal_ids.back().size();
    } else if (!std::holds_alternative<segment::InputField>(s)) {
      ++fixed;
    }
  }
  if (max_length) {
    auto total = [&] {
      std::size_t n = fixed;
      for (const auto& name : t.field_names()) n += fields[name].size();
      return n;
    };
    while (total() > *max_length) {
      TokenIds* longest = nullptr;
      for (const auto& name : t.field_names()) {
        auto& f = fields[name];
        if (!longest || f.size() >= longest->size()) longest = &f;
      }
      if (!longest || longest->empty()) {
        throw ConfigError("render: template alone exceeds max length " +
                          std::to_string(*max_length));
      }
      longest->pop_back();
    }
  }

  PromptInstance p;
  p.trigger_positions.resize(triggers.size());
  std::size_t lit_index = 0;
  for (const auto& s : t.segments) {
    std::visit(
        [&](const auto& seg) {
          using S = std::decay_t<decltype(seg)>;
          if constexpr (std::is_same_v<S, segment::Literal>) {
            const auto& ids = literal_ids[lit_index++];
            p.token_ids.insert(p.token_ids.end(), ids.begin(), ids.end());
          } else if constexpr (std::is_same_v<S, segment::InputField>) {
            for (TokenId id : fields[seg.name]) {
              if (!vocab.contains(id)) {
                throw DataError("render: input token id " + std::to_string(id) +
                                " out of range");
              }
              p.input_span.push_back(p.token_ids.size());
              p.token_ids.push_back(id);
            }
          } else if constexpr (std::is_same_v<S, segment::Trigger>) {
            p.trigger_positions[seg.slot] = p.token_ids.size();
            p.token_ids.push_back(triggers[seg.slot]);
          } else {
            p.mask_position = p.token_ids.size();
            p.token_ids.push_back(vocab.mask_id());
          }
        },
        s);
  }
  return p;
}

}  // namespace promptsearch
