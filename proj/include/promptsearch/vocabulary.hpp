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
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "promptsearch/error.hpp"

namespace promptsearch {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

// Token inventory shared with the model backend. Ids are dense in [0, size).
class Vocabulary {
 public:
  Vocabulary() = default;

  // `mask` must name one of `tokens`; every name in `specials` must too. The
  // mask token is always special. `pad` is optional.
  Vocabulary(std::vector<std::string> tokens, const std::string& mask,
             const std::vector<std::string>& specials = {},
             std::optional<std::string> pad = std::nullopt)
      : strings_(std::move(tokens)) {
    for (std::size_t i = 0; i < strings_.size(); ++i) {
      auto [it, inserted] =
          ids_.emplace(strings_[i], static_cast<TokenId>(i));
      if (!inserted) {
        throw ConfigError("vocabulary: duplicate token '" + strings_[i] + "'");
      }
    }
    mask_id_ = require(mask);
    special_ids_.insert(mask_id_);
    for (const auto& s : specials) special_ids_.insert(require(s));
    if (pad) {
      pad_id_ = require(*pad);
      special_ids_.insert(*pad_id_);
    }
    if (auto unk = id_of("[UNK]")) unk_id_ = unk;
    else if (auto unk2 = id_of("<unk>")) unk_id_ = unk2;
  }

  std::size_t size() const { return strings_.size(); }
  TokenId mask_id() const { return mask_id_; }
  std::optional<TokenId> pad_id() const { return pad_id_; }
  const std::set<TokenId>& special_ids() const { return special_ids_; }
  bool is_special(TokenId id) const { return special_ids_.count(id) > 0; }
  bool contains(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < strings_.size();
  }

  std::optional<TokenId> id_of(std::string_view s) const {
    auto it = ids_.find(std::string(s));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& string_of(TokenId id) const {
    if (!contains(id)) {
      throw ConfigError("vocabulary: token id " + std::to_string(id) +
                        " out of range");
    }
    return strings_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return strings_; }

  // Whitespace tokenization against the inventory. Unknown words map to the
  // unknown token when the vocabulary has one, otherwise they are an error.
  TokenIds tokenize(std::string_view text) const {
    TokenIds out;
    std::istringstream in{std::string(text)};
    std::string word;
    while (in >> word) {
      if (auto id = id_of(word)) {
        out.push_back(*id);
      } else if (unk_id_) {
        out.push_back(*unk_id_);
      } else {
        throw DataError("vocabulary: unknown token '" + word + "'");
      }
    }
    return out;
  }

  std::string detokenize(const TokenIds& ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (!out.empty()) out += ' ';
      out += string_of(id);
    }
    return out;
  }

  // FNV-1a 64 over "<id>\t<surface>\n" for every id in order, rendered as 16
  // lowercase hex digits. Backends must compute the same digest.
  std::string fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::string_view s) {
      for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    };
    for (std::size_t i = 0; i < strings_.size(); ++i) {
      mix(std::to_string(i));
      mix("\t");
      mix(strings_[i]);
      mix("\n");
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["tokens"] = strings_;
    j["mask"] = string_of(mask_id_);
    if (pad_id_) j["pad"] = string_of(*pad_id_);
    std::vector<std::string> specials;
    for (TokenId id : special_ids_) specials.push_back(string_of(id));
    j["specials"] = specials;
    return j;
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    std::optional<std::string> pad;
    if (j.contains("pad") && !j["pad"].is_null()) pad = j["pad"].get<std::string>();
    return Vocabulary(j.at("tokens").get<std::vector<std::string>>(),
                      j.at("mask").get<std::string>(),
                      j.value("specials", std::vector<std::string>{}), pad);
  }

  // Either a JSON document as written by to_json, or a plain list with one
  // token per line. In the plain form bracketed names like [MASK] or <pad>
  // are special; the mask is [MASK] or <mask>, the pad [PAD] or <pad>.
  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open vocabulary file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      return from_json(nlohmann::json::parse(text));
    }
    std::vector<std::string> tokens;
    std::vector<std::string> specials;
    std::optional<std::string> mask, pad;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      bool bracketed = line.size() > 2 &&
                       ((line.front() == '[' && line.back() == ']') ||
                        (line.front() == '<' && line.back() == '>'));
      if (bracketed) specials.push_back(line);
      if (line == "[MASK]" || line == "<mask>") mask = line;
      if (line == "[PAD]" || line == "<pad>") pad = line;
      tokens.push_back(line);
    }
    if (!mask) throw ConfigError("vocabulary file has no mask token: " + path);
    return Vocabulary(std::move(tokens), *mask, specials, pad);
  }

 private:
  TokenId require(const std::string& s) const {
    auto id = id_of(s);
    if (!id) throw ConfigError("vocabulary: missing token '" + s + "'");
    return *id;
  }

  std::vector<std::string> strings_;
  std::unordered_map<std::string, TokenId> ids_;
  TokenId mask_id_ = 0;
  std::optional<TokenId> pad_id_;
  std::optional<TokenId> unk_id_;
  std::set<TokenId> special_ids_;
};

}  // namespace promptsearch
